//! Dense nested-loop reference for inference and operation counts. Written
//! independently of the simulator datapath so the two can check each other.

use thiserror::Error;

use crate::netspec::{Dims, LayerGeometry};
use crate::quantizer::QuantizedModel;

/// Per-layer potentials and spikes, both indexed `[row][col][channel]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceLayer {
    pub dims: Dims,
    pub potentials: Vec<i32>,
    pub spikes: Vec<bool>,
}

impl ReferenceLayer {
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.dims.cols + col) * self.dims.channels + ch
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceActivations {
    pub layers: Vec<ReferenceLayer>,
}

impl ReferenceActivations {
    pub fn final_potentials(&self) -> &[i32] {
        &self.layers.last().expect("at least one layer").potentials
    }

    /// Argmax of the final potentials, first index wins ties.
    pub fn class(&self) -> usize {
        let p = self.final_potentials();
        let max = p.iter().copied().max().unwrap_or(0);
        p.iter().position(|&v| v == max).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("model has {model} layers, network has {network}")]
    LayerCount { model: usize, network: usize },
    #[error("layer {layer}: {reason}")]
    Shape { layer: usize, reason: String },
    #[error("image has {found} values, expected {expected}")]
    Image { found: usize, expected: usize },
}

/// Weight of output channel `o` at kernel offset (`ky`, `kx`) for input
/// channel `ci`.
fn weight(model: &QuantizedModel, n: usize, g: &LayerGeometry, o: usize, ky: usize, kx: usize, ci: usize) -> i32 {
    let l = &model.layers[n];
    let groups = g.in_dims.channels.div_ceil(8);
    let beat = o * l.beats_per_neuron + (ky * g.kernel_cols + kx) * groups + ci / 8;
    l.weights[beat][ci % 8] as i32
}

/// Runs `image` (row/column/channel bytes) through the network.
pub fn reference_inference(
    geoms: &[LayerGeometry],
    model: &QuantizedModel,
    image: &[u8],
) -> Result<ReferenceActivations, OracleError> {
    if model.layers.len() != geoms.len() {
        return Err(OracleError::LayerCount {
            model: model.layers.len(),
            network: geoms.len(),
        });
    }
    let Some(first) = geoms.first() else {
        return Ok(ReferenceActivations { layers: Vec::new() });
    };
    if image.len() != first.in_dims.len() {
        return Err(OracleError::Image {
            found: image.len(),
            expected: first.in_dims.len(),
        });
    }
    let mut input: Vec<i32> = image.iter().map(|&p| p as i32).collect();
    let mut layers = Vec::with_capacity(geoms.len());
    for (n, g) in geoms.iter().enumerate() {
        let l = &model.layers[n];
        let per_neuron = g.kernel_rows * g.kernel_cols * g.in_dims.channels.div_ceil(8);
        if l.out_channels != g.out_dims.channels
            || l.beats_per_neuron != per_neuron
            || l.weights.len() != l.out_channels * per_neuron
            || l.thresholds.len() != l.out_channels
        {
            return Err(OracleError::Shape {
                layer: n,
                reason: "parameters do not match the layer geometry".into(),
            });
        }
        let (ind, outd) = (g.in_dims, g.out_dims);
        let mut potentials = vec![0i32; outd.len()];
        let mut spikes = vec![false; outd.len()];
        for r in 0..outd.rows {
            for c in 0..outd.cols {
                for o in 0..outd.channels {
                    let mut acc = 0i32;
                    for ky in 0..g.kernel_rows {
                        let y = (r * g.stride + ky) as isize - g.pad_top as isize;
                        if y < 0 || y >= ind.rows as isize {
                            continue;
                        }
                        for kx in 0..g.kernel_cols {
                            let x = (c * g.stride + kx) as isize - g.pad_left as isize;
                            if x < 0 || x >= ind.cols as isize {
                                continue;
                            }
                            let base = (y as usize * ind.cols + x as usize) * ind.channels;
                            for ci in 0..ind.channels {
                                acc += input[base + ci] * weight(model, n, g, o, ky, kx, ci);
                            }
                        }
                    }
                    let idx = (r * outd.cols + c) * outd.channels + o;
                    potentials[idx] = acc;
                    spikes[idx] = acc > l.thresholds[o];
                }
            }
        }
        input = spikes.iter().map(|&s| s as i32).collect();
        layers.push(ReferenceLayer {
            dims: outd,
            potentials,
            spikes,
        });
    }
    Ok(ReferenceActivations { layers })
}

/// Multiply-accumulates per inference, counted as a dense network would.
pub fn count_macs(geoms: &[LayerGeometry]) -> u64 {
    geoms
        .iter()
        .map(|g| {
            (g.out_dims.len() * g.kernel_rows * g.kernel_cols * g.in_dims.channels) as u64
        })
        .sum()
}

pub fn count_ops(geoms: &[LayerGeometry]) -> u64 {
    2 * count_macs(geoms)
}
