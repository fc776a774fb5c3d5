//! Seeded random networks, parameters and images for testing and for runs
//! without a trained model.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::mapper::{is_valid_omega, CascadeLimits, DeviceProfile, PlanLayout, SlrBudget, SplitShare};
use crate::netspec::{Dims, InputShape, LayerGeometry, NetworkSpec, BEAT_LANES};
use crate::pipesim::Image;
use crate::quantizer::{
    Beat, BatchNormParams, FloatLayerParams, FloatModel, QuantizedLayer, QuantizedModel,
};

pub fn random_image<R: Rng>(rng: &mut R, dims: Dims) -> Image {
    let data = (0..dims.len()).map(|_| rng.gen()).collect();
    Image { dims, data }
}

/// Random int8 weights in ±127 with zeroed padding lanes, and thresholds
/// spread around the typical potential so layers neither saturate nor stay
/// silent.
pub fn random_quantized_model<R: Rng>(rng: &mut R, geoms: &[LayerGeometry]) -> QuantizedModel {
    let layers = geoms
        .iter()
        .map(|g| {
            let in_ch = g.in_dims.channels;
            let groups = g.in_groups();
            let positions = g.kernel_rows * g.kernel_cols;
            let out = g.out_dims.channels;
            let mut weights = Vec::with_capacity(out * g.beats_per_neuron);
            for _ in 0..out {
                for _ in 0..positions {
                    for grp in 0..groups {
                        let mut beat: Beat = [0; BEAT_LANES];
                        for (lane, w) in beat.iter_mut().enumerate() {
                            if grp * BEAT_LANES + lane < in_ch {
                                *w = rng.gen_range(-127..=127);
                            }
                        }
                        weights.push(beat);
                    }
                }
            }
            let input_scale = if g.kind == crate::netspec::LayerKind::TransductionConv {
                128.0
            } else {
                0.5
            };
            let spread = (64.0 * input_scale * (g.fan_in as f64).sqrt()) as i32 + 1;
            let thresholds = (0..out).map(|_| rng.gen_range(-spread..=spread)).collect();
            QuantizedLayer {
                scale: 1.0,
                out_channels: out,
                beats_per_neuron: g.beats_per_neuron,
                weights,
                thresholds,
            }
        })
        .collect();
    QuantizedModel { layers }
}

/// Float weights in [-1, 1] with a random batch norm per channel. Gains are
/// kept away from zero; a few are negative.
pub fn random_float_model<R: Rng>(rng: &mut R, geoms: &[LayerGeometry]) -> FloatModel {
    let layers = geoms
        .iter()
        .map(|g| {
            let out = g.out_dims.channels;
            let weights = (0..out)
                .map(|_| (0..g.fan_in).map(|_| rng.gen_range(-1.0..=1.0)).collect())
                .collect();
            let gamma = (0..out)
                .map(|_| {
                    let m: f64 = rng.gen_range(0.25..2.0);
                    if rng.gen_bool(0.1) {
                        -m
                    } else {
                        m
                    }
                })
                .collect();
            let spread = (g.fan_in as f64).sqrt();
            let bn = BatchNormParams {
                gamma,
                beta: (0..out).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                mean: (0..out).map(|_| rng.gen_range(-spread..spread)).collect(),
                std: (0..out).map(|_| rng.gen_range(0.5..2.0) * spread).collect(),
            };
            FloatLayerParams { weights, bn }
        })
        .collect();
    FloatModel { layers }
}

/// Limits for [`random_network`].
#[derive(Debug, Clone, Copy)]
pub struct NetShape {
    pub max_layers: usize,
    pub max_extent: usize,
    pub max_channels: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        NetShape {
            max_layers: 4,
            max_extent: 16,
            max_channels: 32,
        }
    }
}

/// A valid random network: convolutions and pooling windows followed by one
/// fully-connected layer.
pub fn random_network<R: Rng>(rng: &mut R, shape: NetShape) -> NetworkSpec {
    let channel_choices: Vec<usize> = (1..=shape.max_channels).collect();
    loop {
        let rows = rng.gen_range(3..=shape.max_extent);
        let cols = rng.gen_range(3..=shape.max_extent);
        let input = InputShape::new(rows, cols, rng.gen_range(1..=shape.max_channels.min(8)));
        let n_layers = rng.gen_range(2..=shape.max_layers.max(2));
        let mut notations = Vec::with_capacity(n_layers);
        for i in 0..n_layers - 1 {
            let window = match rng.gen_range(0..if i == 0 { 4 } else { 5 }) {
                0 => "pConv3-1",
                1 => "pConv3-2",
                2 => "Conv3-1",
                3 => "Conv3-2",
                _ => "Conv2-2",
            };
            let ch = *channel_choices.choose(rng).expect("non-empty");
            notations.push(format!("{window}-{ch}/{}1", mem(rng)));
        }
        let classes = rng.gen_range(1..=shape.max_channels.min(16));
        notations.push(format!("Fc-{classes}/{}1", mem(rng)));
        let refs: Vec<&str> = notations.iter().map(String::as_str).collect();
        if let Ok(spec) = NetworkSpec::from_notation("random", input, 100.0, &refs) {
            return spec;
        }
    }
}

fn mem<R: Rng>(rng: &mut R) -> char {
    if rng.gen_bool(0.5) {
        'b'
    } else {
        'u'
    }
}

/// A three-SLR device with effectively unlimited budgets and cascades, for
/// functional runs of layouts that no real part could hold.
pub fn bench_device() -> DeviceProfile {
    let mut d = DeviceProfile::vu9p_3slr();
    d.name = "bench".into();
    d.slr = SlrBudget {
        bram_blocks: 1 << 32,
        uram_blocks: 1 << 32,
        dsp_slices: 1 << 32,
        luts: 1 << 40,
    };
    d.max_cascade = CascadeLimits {
        bram: 1 << 20,
        uram: 1 << 20,
    };
    d
}

/// Legal weight-unit counts for a layer with `channels` outputs.
pub fn omega_choices(channels: usize) -> Vec<usize> {
    (1..=channels)
        .filter(|&w| is_valid_omega(w) && channels % w == 0)
        .collect()
}

/// Random single-SLR layout.
pub fn random_layout<R: Rng>(rng: &mut R, geoms: &[LayerGeometry]) -> PlanLayout {
    let omegas = geoms
        .iter()
        .map(|g| *omega_choices(g.out_dims.channels).choose(rng).expect("1 is always legal"))
        .collect();
    PlanLayout::single_slr(omegas)
}

/// Splits `omega` units over up to `slrs` SLRs. Shares are whole units.
pub fn random_split<R: Rng>(rng: &mut R, omega: usize, slrs: usize) -> Vec<SplitShare> {
    let parts = rng.gen_range(1..=slrs.min(omega));
    let mut cuts: Vec<usize> = (1..omega).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(parts - 1).collect();
    cuts.sort_unstable();
    let mut ids: Vec<usize> = (0..slrs).collect();
    ids.shuffle(rng);
    let mut prev = 0;
    cuts.into_iter()
        .chain(std::iter::once(omega))
        .zip(ids)
        .map(|(c, slr)| {
            let s = SplitShare {
                slr,
                units: c - prev,
            };
            prev = c;
            s
        })
        .collect()
}
