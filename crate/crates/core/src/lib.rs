//! Mapping compiler and cycle-approximate simulator for a multi-SLR
//! spiking CNN accelerator.

pub mod analytic;
pub mod mapper;
pub mod netspec;
pub mod oracle;
pub mod pipesim;
pub mod quantizer;
pub mod synth;
pub mod timing;
