//! Event-driven pipeline simulation with bit-exact spike values.

mod datapath;
mod engine;
mod merge;
mod spikes;
mod trace;

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::mapper::{MapError, MappingPlan};
use crate::netspec::{infer_geometry, GeometryError, LayerGeometry, NetworkSpec};
use crate::quantizer::{ModelShapeError, QuantizedModel};
use crate::timing::TimingError;

pub use datapath::{
    classify, column_outputs, core_beat, evaluate_layer, fire, mac_beat, store_column, transduce,
    ColumnOutput, DimensionMismatch, LayerInput, NeuronCoreState,
};
pub use merge::{merge_round_robin, ColumnStream, MergeError, MergedStream};
pub use spikes::{Image, SpikeTensor};
pub use trace::{LayerState, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// The image stream is padded with timing-only images up to this length
    /// so a steady state can be measured.
    pub min_stream_images: usize,
    /// Keep every layer's spikes and potentials for each image.
    pub record_activations: bool,
    pub trace: bool,
    /// Abort with a deadlock diagnostic past this cycle.
    pub max_cycles: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            min_stream_images: 6,
            record_activations: false,
            trace: false,
            max_cycles: 1 << 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerStats {
    pub layer: usize,
    pub notation: String,
    pub busy_cycles: u64,
    pub stalled_cycles: u64,
    pub idle_cycles: u64,
    pub columns: u64,
    pub column_cycles: u64,
    pub latency_cycles: u64,
    pub service_cycles: u64,
    pub split_sources: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageResult {
    pub index: usize,
    pub class: usize,
    pub final_potentials: Vec<i32>,
    /// Final-layer spikes, packed bytes in hex.
    pub final_spikes: String,
    pub completed_at: u64,
}

/// Per-layer values for one image, kept when activations are recorded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerActivation {
    pub spikes: SpikeTensor,
    /// Row/column/channel order.
    pub potentials: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub network: String,
    pub clock_mhz: f64,
    pub images: usize,
    pub stream_images: usize,
    pub steady_state_cycles_per_image: u64,
    pub fill_latency_cycles: u64,
    pub total_cycles: u64,
    pub fps_at_clock: f64,
    pub ops_per_image: u64,
    pub gops: f64,
    pub bottleneck_layer: usize,
    pub layers: Vec<LayerStats>,
    pub results: Vec<ImageResult>,
    #[serde(skip)]
    pub activations: Vec<Vec<LayerActivation>>,
    #[serde(skip)]
    pub trace: Option<Trace>,
}

impl SimReport {
    pub fn stalled_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| l.stalled_cycles > 0)
            .map(|l| l.layer)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ControllerDump {
    pub layer: usize,
    pub next_image: usize,
    pub next_column: usize,
    pub busy: bool,
    pub stage1: Vec<(usize, usize)>,
    pub stage2: Vec<(usize, usize)>,
    pub in_flight: usize,
}

impl fmt::Display for ControllerDump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "layer {}: next image {} column {}, busy {}, stage-1 {:?}, stage-2 {:?}, in flight {}",
            self.layer,
            self.next_image,
            self.next_column,
            self.busy,
            self.stage1,
            self.stage2,
            self.in_flight
        )
    }
}

fn dump_lines(d: &[ControllerDump]) -> String {
    d.iter().map(|l| format!("\n  {l}")).collect()
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("plan: {0}")]
    Plan(#[from] MapError),
    #[error("model: {0}")]
    Model(#[from] ModelShapeError),
    #[error("timing: {0}")]
    Timing(#[from] TimingError),
    #[error("image {index}: {source}")]
    Image {
        index: usize,
        source: DimensionMismatch,
    },
    #[error("merge: {0}")]
    Merge(#[from] MergeError),
    #[error("no images to simulate")]
    NoImages,
    #[error("pipeline deadlock at cycle {cycle}:{}", dump_lines(.layers))]
    Deadlock {
        cycle: u64,
        layers: Vec<ControllerDump>,
    },
}

/// Runs `images` through the mapped network. Spike values are exact; timing
/// follows the plan's timing model.
pub fn simulate(
    spec: &NetworkSpec,
    plan: &MappingPlan,
    model: &QuantizedModel,
    images: &[Image],
    options: &SimOptions,
) -> Result<SimReport, SimError> {
    let geoms = infer_geometry(spec)?;
    simulate_with(spec, &geoms, plan, model, images, options)
}

/// As [`simulate`], with geometry already inferred.
pub fn simulate_with(
    spec: &NetworkSpec,
    geoms: &[LayerGeometry],
    plan: &MappingPlan,
    model: &QuantizedModel,
    images: &[Image],
    options: &SimOptions,
) -> Result<SimReport, SimError> {
    plan.timing.validate()?;
    plan.validate(spec, geoms)?;
    model.check(geoms)?;
    for (index, img) in images.iter().enumerate() {
        if img.dims != geoms[0].in_dims {
            return Err(SimError::Image {
                index,
                source: DimensionMismatch {
                    expected: geoms[0].in_dims,
                    found: img.dims,
                },
            });
        }
    }
    if images.is_empty() && options.min_stream_images == 0 {
        return Err(SimError::NoImages);
    }
    engine::Engine::new(spec, geoms, plan, model, images, options).run()
}
