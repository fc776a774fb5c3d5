//! DF2P binary parameter file.
//!
//! Little-endian. Header: magic, version u16, layer count u16. Per layer:
//! index u16, out_channels u32, beats_per_neuron u32, ω u16, scale f64, then
//! for each weight unit its neurons' beats (8 × i8 each) followed by that
//! unit's thresholds (i32) in neuron order. Unit `u` owns the contiguous
//! neurons `u*npu .. (u+1)*npu`.

use thiserror::Error;

use super::{Beat, QuantizedLayer, QuantizedModel};
use crate::mapper::MappingPlan;
use crate::netspec::BEAT_LANES;

pub const MAGIC: [u8; 4] = *b"DF2P";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("truncated parameter stream: needed {needed} bytes at offset {offset}, {available} left")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("bad magic {0:02x?}, not a DF2P parameter file")]
    BadMagic([u8; 4]),
    #[error("unsupported DF2P version {found} (this build reads {FORMAT_VERSION})")]
    VersionMismatch { found: u16 },
    #[error("corrupt parameter stream: {0}")]
    Corrupt(String),
    #[error("model and plan disagree: {0}")]
    PlanMismatch(String),
}

/// A decoded file: the model plus the weight-unit count each layer was
/// written for.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    pub model: QuantizedModel,
    pub omegas: Vec<usize>,
}

pub fn serialize_params(model: &QuantizedModel, plan: &MappingPlan) -> Result<Vec<u8>, FormatError> {
    if model.layers.len() != plan.layers.len() {
        return Err(FormatError::PlanMismatch(format!(
            "{} model layers, {} planned",
            model.layers.len(),
            plan.layers.len()
        )));
    }
    let count = u16::try_from(model.layers.len())
        .map_err(|_| FormatError::PlanMismatch("more than 65535 layers".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (idx, (layer, mapping)) in model.layers.iter().zip(&plan.layers).enumerate() {
        let omega = mapping.omega;
        if omega == 0 || layer.out_channels % omega != 0 || omega > u16::MAX as usize {
            return Err(FormatError::PlanMismatch(format!(
                "layer {idx}: omega {omega} does not divide {} channels",
                layer.out_channels
            )));
        }
        out.extend_from_slice(&(idx as u16).to_le_bytes());
        out.extend_from_slice(&(layer.out_channels as u32).to_le_bytes());
        out.extend_from_slice(&(layer.beats_per_neuron as u32).to_le_bytes());
        out.extend_from_slice(&(omega as u16).to_le_bytes());
        out.extend_from_slice(&layer.scale.to_le_bytes());
        let npu = layer.out_channels / omega;
        for unit in 0..omega {
            let neurons = unit * npu..(unit + 1) * npu;
            for n in neurons.clone() {
                for beat in layer.neuron(n) {
                    out.extend(beat.iter().map(|&w| w as u8));
                }
            }
            for n in neurons {
                out.extend_from_slice(&layer.thresholds[n].to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}

pub fn deserialize_params(bytes: &[u8]) -> Result<ParamFile, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.array()?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::VersionMismatch { found: version });
    }
    let count = r.u16()? as usize;
    let mut layers = Vec::with_capacity(count);
    let mut omegas = Vec::with_capacity(count);
    for expected in 0..count {
        let index = r.u16()? as usize;
        if index != expected {
            return Err(FormatError::Corrupt(format!(
                "layer index {index} where {expected} was expected"
            )));
        }
        let out_channels = r.u32()? as usize;
        let beats = r.u32()? as usize;
        let omega = r.u16()? as usize;
        let scale = f64::from_le_bytes(r.array()?);
        if out_channels == 0 || beats == 0 || omega == 0 || out_channels % omega != 0 {
            return Err(FormatError::Corrupt(format!(
                "layer {index}: {out_channels} channels, {beats} beats, omega {omega}"
            )));
        }
        let npu = out_channels / omega;
        let mut weights: Vec<Beat> = Vec::with_capacity(out_channels * beats);
        let mut thresholds = Vec::with_capacity(out_channels);
        for _ in 0..omega {
            let raw = r.take(npu * beats * BEAT_LANES)?;
            for chunk in raw.chunks_exact(BEAT_LANES) {
                let mut beat = [0i8; BEAT_LANES];
                for (dst, &src) in beat.iter_mut().zip(chunk) {
                    *dst = src as i8;
                }
                if beat.contains(&i8::MIN) {
                    return Err(FormatError::Corrupt(format!(
                        "layer {index}: weight -128 outside the symmetric range"
                    )));
                }
                weights.push(beat);
            }
            for _ in 0..npu {
                thresholds.push(i32::from_le_bytes(r.array()?));
            }
        }
        layers.push(QuantizedLayer {
            scale,
            out_channels,
            beats_per_neuron: beats,
            weights,
            thresholds,
        });
        omegas.push(omega);
    }
    if r.pos != bytes.len() {
        return Err(FormatError::Corrupt(format!(
            "{} trailing bytes after the last layer",
            bytes.len() - r.pos
        )));
    }
    Ok(ParamFile {
        model: QuantizedModel { layers },
        omegas,
    })
}
