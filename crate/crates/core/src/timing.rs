//! Cycle constants shared by the mapper, the analytic model and the simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bridges between SLRs must stay below this many cycles of latency.
pub const MAX_BRIDGE_LATENCY: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingModel {
    /// Controller handshake cycles paid once per output column.
    pub handshake_cycles: u64,
    /// One-way latency of an inter-SLR bridge for split layers.
    pub bridge_latency: u64,
    /// Merge slots per source SLR when a split layer's outputs are re-joined.
    pub merge_cycles_per_source: u64,
    /// AND register in front of the adder tree.
    pub and_stages: u64,
    pub adder_tree_stages: u64,
    pub accumulate_stages: u64,
}

impl Default for TimingModel {
    fn default() -> Self {
        TimingModel {
            handshake_cycles: 2,
            bridge_latency: 4,
            merge_cycles_per_source: 1,
            and_stages: 1,
            adder_tree_stages: 3,
            accumulate_stages: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimingError {
    #[error("bridge latency {0} exceeds the {MAX_BRIDGE_LATENCY}-cycle cap")]
    BridgeTooSlow(u64),
}

impl TimingModel {
    pub fn validate(&self) -> Result<(), TimingError> {
        if self.bridge_latency > MAX_BRIDGE_LATENCY {
            return Err(TimingError::BridgeTooSlow(self.bridge_latency));
        }
        Ok(())
    }

    /// Cycles the core array is occupied for one output column.
    pub fn column_cycles(&self, neurons_per_unit: usize, beats_per_neuron: usize) -> u64 {
        self.handshake_cycles + (neurons_per_unit * beats_per_neuron) as u64
    }

    /// Steady-state cycles for one image through a layer.
    pub fn layer_service(&self, out_cols: usize, neurons_per_unit: usize, beats: usize) -> u64 {
        out_cols as u64 * self.column_cycles(neurons_per_unit, beats)
    }

    /// Pipeline fill of the core array: AND, adder tree, accumulate and the
    /// re-timing hops along the chain of core groups.
    pub fn core_latency(&self, cores: usize, group_size: usize) -> u64 {
        self.and_stages
            + self.adder_tree_stages
            + self.accumulate_stages
            + cores.div_ceil(group_size.max(1)) as u64
    }

    /// Extra latency a split layer pays to bring shares back to the primary SLR.
    pub fn split_latency(&self, sources: usize) -> u64 {
        if sources <= 1 {
            0
        } else {
            self.bridge_latency + self.merge_cycles_per_source * sources as u64
        }
    }
}
