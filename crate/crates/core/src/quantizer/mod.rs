//! Float weights + batch norm to int8 weights and folded int32 thresholds.

mod format;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netspec::{LayerGeometry, BEAT_LANES};

pub use format::{deserialize_params, serialize_params, FormatError, ParamFile, FORMAT_VERSION, MAGIC};

/// Largest stored weight magnitude; -128 is never produced.
pub const WEIGHT_MAX: f64 = 127.0;

/// One beat of weights, lane `l` pairs with input channel `group * 8 + l`.
pub type Beat = [i8; BEAT_LANES];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: f64,
    pub beta: f64,
    pub mean: f64,
    pub std: f64,
}

impl BatchNorm {
    pub const IDENTITY: BatchNorm = BatchNorm {
        gamma: 1.0,
        beta: 0.0,
        mean: 0.0,
        std: 1.0,
    };

    /// Float-domain fire decision for a pre-activation `a`.
    pub fn fires(&self, a: f64) -> bool {
        self.gamma * (a - self.mean) / self.std + self.beta > 0.0
    }
}

/// Per-channel batch-norm vectors, as stored in the JSON parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl BatchNormParams {
    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn channel(&self, c: usize) -> BatchNorm {
        BatchNorm {
            gamma: self.gamma[c],
            beta: self.beta[c],
            mean: self.mean[c],
            std: self.std[c],
        }
    }

    pub fn from_channels(channels: &[BatchNorm]) -> Self {
        BatchNormParams {
            gamma: channels.iter().map(|b| b.gamma).collect(),
            beta: channels.iter().map(|b| b.beta).collect(),
            mean: channels.iter().map(|b| b.mean).collect(),
            std: channels.iter().map(|b| b.std).collect(),
        }
    }
}

/// Float parameters of one layer. `weights[o]` is in kernel-position-major,
/// channel-minor order (row, column, channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatLayerParams {
    pub weights: Vec<Vec<f64>>,
    pub bn: BatchNormParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatModel {
    pub layers: Vec<FloatLayerParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub scale: f64,
    pub out_channels: usize,
    pub beats_per_neuron: usize,
    /// `out_channels * beats_per_neuron` beats, neuron-major.
    pub weights: Vec<Beat>,
    pub thresholds: Vec<i32>,
}

impl QuantizedLayer {
    pub fn neuron(&self, n: usize) -> &[Beat] {
        &self.weights[n * self.beats_per_neuron..(n + 1) * self.beats_per_neuron]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub layers: Vec<QuantizedLayer>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantizeError {
    #[error("degenerate layer scale: every weight is zero")]
    DegenerateScale,
    #[error("degenerate batch-norm gain: gamma is zero")]
    DegenerateGain,
    #[error("batch-norm std must be positive, got {0}")]
    NonPositiveStd(f64),
    #[error("non-finite parameter value")]
    NonFinite,
    #[error("folded threshold {0} does not fit in int32")]
    ThresholdOverflow(f64),
    #[error("layer {layer}: {reason}")]
    Shape { layer: usize, reason: String },
}

fn round_half_away(x: f64) -> f64 {
    // f64::round already rounds ties away from zero.
    x.round()
}

/// Per-layer symmetric int8 quantization. Returns the scale and the weights
/// laid out as beats (`in_channels` padded to a multiple of 8 with zeros).
pub fn quantize_weights(
    weights: &[Vec<f64>],
    in_channels: usize,
) -> Result<(f64, Vec<Beat>), QuantizeError> {
    let mut max_abs: f64 = 0.0;
    for w in weights.iter().flatten() {
        if !w.is_finite() {
            return Err(QuantizeError::NonFinite);
        }
        max_abs = max_abs.max(w.abs());
    }
    if max_abs == 0.0 {
        return Err(QuantizeError::DegenerateScale);
    }
    let scale = WEIGHT_MAX / max_abs;
    let groups = in_channels.div_ceil(BEAT_LANES);
    let mut beats = Vec::new();
    for neuron in weights {
        let positions = neuron.len() / in_channels;
        for pos in 0..positions {
            for g in 0..groups {
                let mut beat = [0i8; BEAT_LANES];
                for (lane, slot) in beat.iter_mut().enumerate() {
                    let c = g * BEAT_LANES + lane;
                    if c < in_channels {
                        let q = round_half_away(neuron[pos * in_channels + c] * scale);
                        *slot = q.clamp(-WEIGHT_MAX, WEIGHT_MAX) as i8;
                    }
                }
                beats.push(beat);
            }
        }
    }
    Ok((scale, beats))
}

/// Result of folding one channel's batch norm into a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldedThreshold {
    pub threshold: i32,
    /// The channel's weights must be negated (negative gain).
    pub negated: bool,
}

/// Folds batch norm into an integer threshold on the scaled accumulator.
///
/// The float neuron fires iff `a > mean - beta*std/gamma` (for gamma > 0).
/// The accumulator is an integer, so `acc > x` is the same decision as
/// `acc > floor(x)`; a relative tolerance absorbs float noise when `x` is an
/// integer in exact arithmetic. A negative gain flips the comparison, which
/// is undone by negating the weights and the threshold.
pub fn fold_threshold(bn: &BatchNorm, scale: f64) -> Result<FoldedThreshold, QuantizeError> {
    if ![bn.gamma, bn.beta, bn.mean, bn.std, scale]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(QuantizeError::NonFinite);
    }
    if bn.std <= 0.0 {
        return Err(QuantizeError::NonPositiveStd(bn.std));
    }
    if bn.gamma == 0.0 {
        return Err(QuantizeError::DegenerateGain);
    }
    let float_threshold = bn.mean - bn.beta * bn.std / bn.gamma;
    let negated = bn.gamma < 0.0;
    let x = if negated { -scale * float_threshold } else { scale * float_threshold };
    let t = (x + 1e-9 * x.abs().max(1.0)).floor();
    if t.abs() >= 2f64.powi(31) {
        return Err(QuantizeError::ThresholdOverflow(t));
    }
    Ok(FoldedThreshold {
        threshold: t as i32,
        negated,
    })
}

/// Quantizes one layer against its geometry.
pub fn quantize_layer(
    params: &FloatLayerParams,
    geom: &LayerGeometry,
) -> Result<QuantizedLayer, QuantizeError> {
    let out_channels = geom.out_dims.channels;
    let shape = |reason: String| QuantizeError::Shape { layer: 0, reason };
    if params.weights.len() != out_channels {
        return Err(shape(format!(
            "{} weight rows for {out_channels} channels",
            params.weights.len()
        )));
    }
    if let Some(row) = params.weights.iter().find(|r| r.len() != geom.fan_in) {
        return Err(shape(format!("weight row of {} for fan-in {}", row.len(), geom.fan_in)));
    }
    let bn = &params.bn;
    if [bn.beta.len(), bn.mean.len(), bn.std.len(), bn.gamma.len()]
        .iter()
        .any(|&l| l != out_channels)
    {
        return Err(shape(format!("batch-norm vectors must have {out_channels} entries")));
    }
    let (scale, mut weights) = quantize_weights(&params.weights, geom.in_dims.channels)?;
    let beats = geom.beats_per_neuron;
    let mut thresholds = Vec::with_capacity(out_channels);
    for c in 0..out_channels {
        let folded = fold_threshold(&bn.channel(c), scale)?;
        if folded.negated {
            for beat in &mut weights[c * beats..(c + 1) * beats] {
                for w in beat.iter_mut() {
                    *w = -*w;
                }
            }
        }
        thresholds.push(folded.threshold);
    }
    Ok(QuantizedLayer {
        scale,
        out_channels,
        beats_per_neuron: beats,
        weights,
        thresholds,
    })
}

pub fn quantize_model(
    model: &FloatModel,
    geoms: &[LayerGeometry],
) -> Result<QuantizedModel, QuantizeError> {
    if model.layers.len() != geoms.len() {
        return Err(QuantizeError::Shape {
            layer: model.layers.len().min(geoms.len()),
            reason: format!("{} parameter layers for {} network layers", model.layers.len(), geoms.len()),
        });
    }
    let layers = model
        .layers
        .iter()
        .zip(geoms)
        .enumerate()
        .map(|(i, (p, g))| {
            quantize_layer(p, g).map_err(|e| match e {
                QuantizeError::Shape { reason, .. } => QuantizeError::Shape { layer: i, reason },
                other => other,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(QuantizedModel { layers })
}

impl FloatModel {
    pub fn load(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("layer {layer}: {reason}")]
pub struct ModelShapeError {
    pub layer: usize,
    pub reason: String,
}

impl QuantizedModel {
    /// Checks shapes against the network and the storage invariants: no
    /// -128, zero padding lanes, exact array lengths.
    pub fn check(&self, geoms: &[LayerGeometry]) -> Result<(), ModelShapeError> {
        if self.layers.len() != geoms.len() {
            return Err(ModelShapeError {
                layer: self.layers.len().min(geoms.len()),
                reason: format!("model has {} layers, network {}", self.layers.len(), geoms.len()),
            });
        }
        for (i, (l, g)) in self.layers.iter().zip(geoms).enumerate() {
            let err = |reason: String| Err(ModelShapeError { layer: i, reason });
            if l.out_channels != g.out_dims.channels || l.beats_per_neuron != g.beats_per_neuron {
                return err(format!(
                    "{} channels x {} beats, expected {} x {}",
                    l.out_channels, l.beats_per_neuron, g.out_dims.channels, g.beats_per_neuron
                ));
            }
            if l.weights.len() != l.out_channels * l.beats_per_neuron
                || l.thresholds.len() != l.out_channels
            {
                return err("weight or threshold array has the wrong length".into());
            }
            let in_ch = g.in_dims.channels;
            let groups = g.in_groups();
            for (b, beat) in l.weights.iter().enumerate() {
                let group = b % groups;
                for (lane, &w) in beat.iter().enumerate() {
                    if w == i8::MIN {
                        return err("weight -128 is outside the symmetric range".into());
                    }
                    if group * BEAT_LANES + lane >= in_ch && w != 0 {
                        return err(format!("padding lane {lane} of beat {b} is non-zero"));
                    }
                }
            }
        }
        Ok(())
    }
}
