//! Weight-unit selection, memory/DSP estimation and SLR assignment.

mod device;
mod pack;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netspec::{LayerGeometry, LayerKind, MemoryKind, NetworkSpec};
use crate::timing::TimingModel;

pub use device::{
    CascadeLimits, DeviceError, DeviceProfile, DeviceRef, DspModel, LutModel, SlrBudget,
    DEFAULT_DEVICE,
};
pub use pack::assign_slrs;

/// Bytes of threshold storage per neuron.
pub const THRESHOLD_BYTES: usize = 4;
/// Default number of neuron cores per re-timing group.
pub const DEFAULT_GROUP_SIZE: usize = 8;

pub fn is_valid_omega(omega: usize) -> bool {
    matches!(omega, 1 | 2 | 4) || (omega >= 8 && omega % 8 == 0)
}

/// Legal weight-unit counts up to `limit`: 1, 2, 4, then multiples of 8.
pub fn valid_omega_set(limit: usize) -> Vec<usize> {
    [1, 2, 4]
        .into_iter()
        .chain((8..).step_by(8))
        .take_while(|&w| w <= limit)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub resource: String,
    pub needed: u64,
    pub available: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("omega {omega} is not legal for {out_channels} channels{}", layer_suffix(.layer))]
    InvalidOmega {
        layer: Option<usize>,
        omega: usize,
        out_channels: usize,
    },
    #[error(
        "layer unmappable{}: {bytes_per_unit} B per {kind} unit needs a cascade of {cascade}, limit {limit}",
        layer_suffix(.layer)
    )]
    Unmappable {
        layer: Option<usize>,
        kind: MemoryKind,
        bytes_per_unit: usize,
        cascade: usize,
        limit: usize,
    },
    #[error("device exhausted: {}", format_shortfall(.0))]
    DeviceExhausted(Vec<Shortfall>),
    #[error("plan does not match network: {0}")]
    Mismatch(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

fn layer_suffix(layer: &Option<usize>) -> String {
    layer.map(|l| format!(" (layer {l})")).unwrap_or_default()
}

fn format_shortfall(s: &[Shortfall]) -> String {
    s.iter()
        .map(|s| format!("{} needs {} of {}", s.resource, s.needed, s.available))
        .collect::<Vec<_>>()
        .join(", ")
}

impl MapError {
    fn at(self, idx: usize) -> Self {
        match self {
            MapError::InvalidOmega {
                omega,
                out_channels,
                ..
            } => MapError::InvalidOmega {
                layer: Some(idx),
                omega,
                out_channels,
            },
            MapError::Unmappable {
                kind,
                bytes_per_unit,
                cascade,
                limit,
                ..
            } => MapError::Unmappable {
                layer: Some(idx),
                kind,
                bytes_per_unit,
                cascade,
                limit,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryAllocation {
    pub neurons_per_unit: usize,
    pub footprint_bytes: usize,
    pub bytes_per_unit: usize,
    pub cascade: usize,
    pub blocks: usize,
    pub utilization: f64,
}

/// Memory needed by `omega` weight units of a layer. Each neuron stores its
/// beat-padded weights plus a 4-byte threshold; a unit's neurons share one
/// cascade of blocks.
pub fn memory_blocks_for_layer(
    geom: &LayerGeometry,
    omega: usize,
    kind: MemoryKind,
    max_cascade: usize,
) -> Result<MemoryAllocation, MapError> {
    let out_channels = geom.out_dims.channels;
    if !is_valid_omega(omega) || out_channels % omega != 0 {
        return Err(MapError::InvalidOmega {
            layer: None,
            omega,
            out_channels,
        });
    }
    let neurons_per_unit = out_channels / omega;
    let footprint_bytes = geom.beats_per_neuron * 8 + THRESHOLD_BYTES;
    let bytes_per_unit = neurons_per_unit * footprint_bytes;
    let capacity = kind.block_bytes();
    let cascade = bytes_per_unit.div_ceil(capacity);
    if cascade > max_cascade {
        return Err(MapError::Unmappable {
            layer: None,
            kind,
            bytes_per_unit,
            cascade,
            limit: max_cascade,
        });
    }
    Ok(MemoryAllocation {
        neurons_per_unit,
        footprint_bytes,
        bytes_per_unit,
        cascade,
        blocks: omega * cascade,
        utilization: bytes_per_unit as f64 / (cascade * capacity) as f64,
    })
}

/// DSP slices for the κ×ω core array of a layer.
pub fn dsp_estimate(geom: &LayerGeometry, omega: usize, model: &DspModel) -> u64 {
    let cores = (geom.kappa * omega) as u64;
    match geom.kind {
        LayerKind::TransductionConv => cores * model.mul_per_core,
        LayerKind::Conv | LayerKind::FullyConnected => cores * model.add_per_core,
    }
}

/// Bytes held by a layer's input feature buffer (column store + window FIFOs).
pub fn feature_buffer_bytes(geom: &LayerGeometry) -> usize {
    let per_column = if geom.kind == LayerKind::TransductionConv {
        geom.in_dims.rows * geom.in_dims.channels
    } else {
        geom.in_dims.rows * geom.in_groups()
    };
    per_column * (geom.window_buffer_columns() + 1)
}

/// Per-core and per-layer-fixed LUT estimate.
pub fn lut_estimate(geom: &LayerGeometry, omega: usize, model: &LutModel) -> (u64, u64) {
    let per_unit = geom.kappa as u64 * model.per_core;
    let fixed = feature_buffer_bytes(geom) as u64 * model.per_buffer_byte + model.per_controller;
    (per_unit * omega as u64, fixed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitShare {
    pub slr: usize,
    pub units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMapping {
    pub layer: usize,
    pub notation: String,
    pub kind: LayerKind,
    pub omega: usize,
    pub neurons_per_unit: usize,
    pub kappa: usize,
    pub cores: usize,
    pub mem_kind: MemoryKind,
    /// Cascade written in the notation; the mapper derives its own.
    pub cascade_requested: usize,
    pub cascade_used: usize,
    pub mem_blocks: usize,
    pub bytes_per_unit: usize,
    pub utilization_per_block: f64,
    pub dsp_est: u64,
    pub lut_est: u64,
    pub splits: Vec<SplitShare>,
    pub primary_slr: usize,
    pub group_size: usize,
    pub service_cycles: u64,
}

impl LayerMapping {
    pub fn is_split(&self) -> bool {
        self.splits.len() > 1
    }

    /// Neuron index range owned by each split share, in share order.
    pub fn share_neurons(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.splits
            .iter()
            .map(|s| {
                let r = start..start + s.units * self.neurons_per_unit;
                start = r.end;
                r
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlrUsage {
    pub slr: usize,
    pub bram_blocks: u64,
    pub uram_blocks: u64,
    pub dsp: u64,
    pub luts: u64,
    pub bram_pct: f64,
    pub uram_pct: f64,
    pub dsp_pct: f64,
    pub lut_pct: f64,
    pub layers: Vec<usize>,
}

impl SlrUsage {
    pub fn is_occupied(&self) -> bool {
        !self.layers.is_empty()
    }

    fn packed_pcts(&self) -> [f64; 3] {
        [self.bram_pct, self.uram_pct, self.dsp_pct]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingPlan {
    pub network: String,
    pub device: DeviceProfile,
    pub clock_mhz: f64,
    /// SLRs the layers were packed into (ids `0..allotted_slrs`).
    pub allotted_slrs: usize,
    /// Per-image cycle budget the weight units were sized for.
    pub target_cycles: u64,
    pub timing: TimingModel,
    pub layers: Vec<LayerMapping>,
    pub slrs: Vec<SlrUsage>,
    pub imbalance_pp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub slrs: Vec<SlrUsage>,
    pub imbalance_pp: f64,
}

/// Percentages over the allotted SLRs; the score is the widest spread of
/// BRAM, URAM or DSP use between any two of them.
pub fn balance_report(plan: &MappingPlan) -> BalanceReport {
    let slrs: Vec<SlrUsage> = plan.slrs[..plan.allotted_slrs].to_vec();
    BalanceReport {
        imbalance_pp: imbalance(&slrs),
        slrs,
    }
}

fn imbalance(slrs: &[SlrUsage]) -> f64 {
    if slrs.is_empty() {
        return 0.0;
    }
    (0..3)
        .map(|r| {
            let vals = slrs.iter().map(|s| s.packed_pcts()[r]);
            let max = vals.clone().fold(f64::MIN, f64::max);
            let min = vals.fold(f64::MAX, f64::min);
            max - min
        })
        .fold(0.0, f64::max)
}

/// Knobs for [`assign_slrs`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThroughputHint {
    /// Fastest plan that fits the fewest SLRs within the balance target.
    Auto,
    /// Size every layer to finish an image within this many cycles.
    TargetCycles(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapOptions {
    pub hint: ThroughputHint,
    pub allow_split: bool,
    pub balance_target_pp: f64,
    pub group_size: usize,
    /// Contiguous partitions used as local-search starting points.
    pub search_starts: usize,
    pub timing: TimingModel,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            hint: ThroughputHint::Auto,
            allow_split: true,
            balance_target_pp: 20.0,
            group_size: DEFAULT_GROUP_SIZE,
            search_starts: 8,
            timing: TimingModel::default(),
        }
    }
}

/// Explicit placement used to build a plan directly.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanLayout {
    pub omegas: Vec<usize>,
    pub splits: Vec<Vec<SplitShare>>,
    pub allotted_slrs: usize,
    pub target_cycles: u64,
}

impl PlanLayout {
    /// Everything whole on SLR 0.
    pub fn single_slr(omegas: Vec<usize>) -> Self {
        let splits = omegas
            .iter()
            .map(|&w| vec![SplitShare { slr: 0, units: w }])
            .collect();
        PlanLayout {
            omegas,
            splits,
            allotted_slrs: 1,
            target_cycles: 0,
        }
    }
}

/// Materializes a plan from explicit weight-unit counts and placements.
/// Budgets are not enforced here; see [`MappingPlan::validate`].
pub fn build_plan(
    spec: &NetworkSpec,
    geoms: &[LayerGeometry],
    device: &DeviceProfile,
    layout: &PlanLayout,
    options: &MapOptions,
) -> Result<MappingPlan, MapError> {
    let n_layers = spec.layers.len();
    if geoms.len() != n_layers || layout.omegas.len() != n_layers || layout.splits.len() != n_layers
    {
        return Err(MapError::Mismatch(format!(
            "{} layers, {} geometries, {} omegas, {} placements",
            n_layers,
            geoms.len(),
            layout.omegas.len(),
            layout.splits.len()
        )));
    }
    if layout.allotted_slrs == 0 || layout.allotted_slrs > device.slr_count {
        return Err(MapError::InvalidPlan(format!(
            "{} SLRs allotted on a {}-SLR device",
            layout.allotted_slrs, device.slr_count
        )));
    }
    let mut slrs: Vec<SlrUsage> = (0..device.slr_count)
        .map(|slr| SlrUsage {
            slr,
            bram_blocks: 0,
            uram_blocks: 0,
            dsp: 0,
            luts: 0,
            bram_pct: 0.0,
            uram_pct: 0.0,
            dsp_pct: 0.0,
            lut_pct: 0.0,
            layers: Vec::new(),
        })
        .collect();
    let mut layers = Vec::with_capacity(n_layers);
    for (idx, ((layer, geom), &omega)) in spec
        .layers
        .iter()
        .zip(geoms)
        .zip(&layout.omegas)
        .enumerate()
    {
        let kind = layer.spec.memory;
        let mem = memory_blocks_for_layer(geom, omega, kind, device.max_cascade.for_kind(kind))
            .map_err(|e| e.at(idx))?;
        let splits = &layout.splits[idx];
        if splits.is_empty()
            || splits.iter().any(|s| s.units == 0 || s.slr >= layout.allotted_slrs)
            || splits.iter().map(|s| s.units).sum::<usize>() != omega
        {
            return Err(MapError::InvalidPlan(format!(
                "layer {idx}: shares {splits:?} do not partition omega {omega} over {} SLRs",
                layout.allotted_slrs
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        if !splits.iter().all(|s| seen.insert(s.slr)) {
            return Err(MapError::InvalidPlan(format!(
                "layer {idx}: an SLR appears twice in {splits:?}"
            )));
        }
        let dsp_per_unit = dsp_estimate(geom, 1, &device.dsp_model);
        let (lut_units, lut_fixed) = lut_estimate(geom, omega, &device.lut_model);
        let lut_per_unit = lut_units / omega as u64;
        let primary = splits[0].slr;
        for s in splits {
            let u = &mut slrs[s.slr];
            let units = s.units as u64;
            match kind {
                MemoryKind::Bram => u.bram_blocks += units * mem.cascade as u64,
                MemoryKind::Uram => u.uram_blocks += units * mem.cascade as u64,
            }
            u.dsp += units * dsp_per_unit;
            u.luts += units * lut_per_unit;
            if !u.layers.contains(&idx) {
                u.layers.push(idx);
            }
        }
        slrs[primary].luts += lut_fixed;
        layers.push(LayerMapping {
            layer: idx,
            notation: layer.spec.to_string(),
            kind: geom.kind,
            omega,
            neurons_per_unit: mem.neurons_per_unit,
            kappa: geom.kappa,
            cores: geom.kappa * omega,
            mem_kind: kind,
            cascade_requested: layer.spec.cascade,
            cascade_used: mem.cascade,
            mem_blocks: mem.blocks,
            bytes_per_unit: mem.bytes_per_unit,
            utilization_per_block: mem.utilization,
            dsp_est: dsp_estimate(geom, omega, &device.dsp_model),
            lut_est: lut_units + lut_fixed,
            splits: splits.clone(),
            primary_slr: primary,
            group_size: options.group_size,
            service_cycles: options.timing.layer_service(
                geom.out_dims.cols,
                mem.neurons_per_unit,
                geom.beats_per_neuron,
            ),
        });
    }
    let b = device.slr;
    for u in &mut slrs {
        u.bram_pct = pct(u.bram_blocks, b.bram_blocks);
        u.uram_pct = pct(u.uram_blocks, b.uram_blocks);
        u.dsp_pct = pct(u.dsp, b.dsp_slices);
        u.lut_pct = pct(u.luts, b.luts);
        u.layers.sort_unstable();
    }
    let imbalance_pp = imbalance(&slrs[..layout.allotted_slrs]);
    Ok(MappingPlan {
        network: spec.name.clone(),
        device: device.clone(),
        clock_mhz: spec.clock_mhz,
        allotted_slrs: layout.allotted_slrs,
        target_cycles: layout.target_cycles,
        timing: options.timing,
        layers,
        slrs,
        imbalance_pp,
    })
}

fn pct(used: u64, budget: u64) -> f64 {
    100.0 * used as f64 / budget as f64
}

impl MappingPlan {
    pub fn slrs_used(&self) -> usize {
        self.slrs.iter().filter(|s| s.is_occupied()).count()
    }

    pub fn omegas(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.omega).collect()
    }

    pub fn layout(&self) -> PlanLayout {
        PlanLayout {
            omegas: self.omegas(),
            splits: self.layers.iter().map(|l| l.splits.clone()).collect(),
            allotted_slrs: self.allotted_slrs,
            target_cycles: self.target_cycles,
        }
    }

    /// Slowest analytic layer service, in cycles per image.
    pub fn max_service(&self) -> u64 {
        self.layers.iter().map(|l| l.service_cycles).max().unwrap_or(0)
    }

    /// Rebuilds the plan from its own layout and checks every invariant,
    /// including that no SLR exceeds its budget. Used on plans read from disk.
    pub fn validate(&self, spec: &NetworkSpec, geoms: &[LayerGeometry]) -> Result<(), MapError> {
        self.device
            .validate()
            .map_err(|e| MapError::InvalidPlan(e.to_string()))?;
        let options = MapOptions {
            group_size: self.layers.first().map_or(DEFAULT_GROUP_SIZE, |l| l.group_size),
            timing: self.timing,
            ..MapOptions::default()
        };
        let rebuilt = build_plan(spec, geoms, &self.device, &self.layout(), &options)?;
        for (a, b) in rebuilt.layers.iter().zip(&self.layers) {
            if a.omega != b.omega
                || a.neurons_per_unit != b.neurons_per_unit
                || a.kappa != b.kappa
                || a.cascade_used != b.cascade_used
                || a.mem_blocks != b.mem_blocks
            {
                return Err(MapError::Mismatch(format!(
                    "layer {} was planned for a different network shape",
                    a.layer
                )));
            }
        }
        for u in &rebuilt.slrs {
            let b = self.device.slr;
            let over = [
                ("BRAM", u.bram_blocks, b.bram_blocks),
                ("URAM", u.uram_blocks, b.uram_blocks),
                ("DSP", u.dsp, b.dsp_slices),
            ]
            .into_iter()
            .find(|(_, used, cap)| used > cap);
            if let Some((name, used, cap)) = over {
                return Err(MapError::InvalidPlan(format!(
                    "SLR {} uses {used} {name} of {cap}",
                    u.slr
                )));
            }
        }
        Ok(())
    }
}
