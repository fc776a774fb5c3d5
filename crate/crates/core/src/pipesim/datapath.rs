//! Bit-exact neuron core arithmetic and column evaluation.

use std::ops::Range;

use super::spikes::{Image, SpikeTensor};
use crate::netspec::{LayerGeometry, BEAT_LANES};
use crate::quantizer::{Beat, QuantizedLayer};

/// One beat of a spiking core: the AND of each spike with its weight feeds
/// the adder tree, and the sum is accumulated.
#[inline]
pub fn core_beat(spikes: u8, weights: &Beat, acc: i32) -> i32 {
    let mut sum = 0i32;
    let mut bits = spikes;
    while bits != 0 {
        let lane = bits.trailing_zeros() as usize;
        sum += weights[lane] as i32;
        bits &= bits - 1;
    }
    acc + sum
}

/// One beat of the transduction core: eight u8 × i8 multiplies.
#[inline]
pub fn mac_beat(pixels: &[u8; BEAT_LANES], weights: &Beat, acc: i32) -> i32 {
    let mut sum = 0i32;
    for l in 0..BEAT_LANES {
        sum += pixels[l] as i32 * weights[l] as i32;
    }
    acc + sum
}

/// Strict greater-than: a potential equal to the threshold stays silent.
#[inline]
pub fn fire(acc: i32, threshold: i32) -> bool {
    acc > threshold
}

/// Argmax of the final potentials, lowest index on ties.
pub fn classify(potentials: &[i32]) -> usize {
    let mut best = 0;
    for (i, &p) in potentials.iter().enumerate() {
        if p > potentials[best] {
            best = i;
        }
    }
    best
}

/// State of a single neuron core between beats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeuronCoreState {
    pub acc: i32,
    pub threshold: i32,
    pub pipe_en: bool,
}

impl NeuronCoreState {
    pub fn new(threshold: i32) -> Self {
        NeuronCoreState {
            acc: 0,
            threshold,
            pipe_en: true,
        }
    }

    pub fn spikes(&mut self, spikes: u8, weights: &Beat) {
        if self.pipe_en {
            self.acc = core_beat(spikes, weights, self.acc);
        }
    }

    pub fn pixels(&mut self, pixels: &[u8; BEAT_LANES], weights: &Beat) {
        if self.pipe_en {
            self.acc = mac_beat(pixels, weights, self.acc);
        }
    }

    pub fn fire(&self) -> bool {
        fire(self.acc, self.threshold)
    }
}

/// What a layer reads: raw pixels for the transduction layer, spikes after.
#[derive(Debug, Clone, Copy)]
pub enum LayerInput<'a> {
    Pixels(&'a Image),
    Spikes(&'a SpikeTensor),
}

/// The beats presented to one kernel unit for one output position.
enum Window {
    Spikes(Vec<u8>),
    Pixels(Vec<[u8; BEAT_LANES]>),
}

fn gather(geom: &LayerGeometry, input: LayerInput<'_>, row: usize, col: usize) -> Window {
    let groups = geom.in_groups();
    let in_rows = geom.in_dims.rows as isize;
    let in_cols = geom.in_dims.cols as isize;
    let top = (row * geom.stride) as isize - geom.pad_top as isize;
    let left = (col * geom.stride) as isize - geom.pad_left as isize;
    let inside = |ky: usize, kx: usize| {
        let (y, x) = (top + ky as isize, left + kx as isize);
        (y >= 0 && y < in_rows && x >= 0 && x < in_cols).then_some((y as usize, x as usize))
    };
    match input {
        LayerInput::Spikes(t) => {
            let mut beats = vec![0u8; geom.beats_per_neuron];
            for ky in 0..geom.kernel_rows {
                for kx in 0..geom.kernel_cols {
                    if let Some((y, x)) = inside(ky, kx) {
                        let pos = ky * geom.kernel_cols + kx;
                        for g in 0..groups {
                            beats[pos * groups + g] = t.byte(y, x, g);
                        }
                    }
                }
            }
            Window::Spikes(beats)
        }
        LayerInput::Pixels(img) => {
            let ch = geom.in_dims.channels;
            let mut beats = vec![[0u8; BEAT_LANES]; geom.beats_per_neuron];
            for ky in 0..geom.kernel_rows {
                for kx in 0..geom.kernel_cols {
                    if let Some((y, x)) = inside(ky, kx) {
                        let pos = ky * geom.kernel_cols + kx;
                        for c in 0..ch {
                            beats[pos * groups + c / BEAT_LANES][c % BEAT_LANES] = img.pixel(y, x, c);
                        }
                    }
                }
            }
            Window::Pixels(beats)
        }
    }
}

/// Spikes and potentials of one output column for a range of neurons,
/// `rows × neurons.len()` entries, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnOutput {
    pub spikes: Vec<bool>,
    pub potentials: Vec<i32>,
}

/// Evaluates output column `col` for the neurons in `neurons`: one kernel
/// unit per output row, each neuron streaming its beats through a core.
pub fn column_outputs(
    geom: &LayerGeometry,
    layer: &QuantizedLayer,
    input: LayerInput<'_>,
    col: usize,
    neurons: Range<usize>,
) -> ColumnOutput {
    let rows = geom.out_dims.rows;
    let mut out = ColumnOutput {
        spikes: Vec::with_capacity(rows * neurons.len()),
        potentials: Vec::with_capacity(rows * neurons.len()),
    };
    for row in 0..rows {
        let window = gather(geom, input, row, col);
        for n in neurons.clone() {
            let mut core = NeuronCoreState::new(layer.thresholds[n]);
            let weights = layer.neuron(n);
            match &window {
                Window::Spikes(b) => {
                    for (s, w) in b.iter().zip(weights) {
                        core.spikes(*s, w);
                    }
                }
                Window::Pixels(b) => {
                    for (p, w) in b.iter().zip(weights) {
                        core.pixels(p, w);
                    }
                }
            }
            out.spikes.push(core.fire());
            out.potentials.push(core.acc);
        }
    }
    out
}

/// Writes a full-width column into a tensor and, optionally, a potential map
/// in row/column/channel order.
pub fn store_column(
    out: &mut SpikeTensor,
    col: usize,
    spikes: &[bool],
    potentials: Option<(&mut [i32], &[i32])>,
) {
    let d = out.dims();
    for row in 0..d.rows {
        for ch in 0..d.channels {
            out.set(row, col, ch, spikes[row * d.channels + ch]);
        }
    }
    if let Some((dst, src)) = potentials {
        for row in 0..d.rows {
            let base = (row * d.cols + col) * d.channels;
            dst[base..base + d.channels].copy_from_slice(&src[row * d.channels..(row + 1) * d.channels]);
        }
    }
}

/// Whole-layer evaluation; used for the transduction layer on its own.
pub fn evaluate_layer(
    geom: &LayerGeometry,
    layer: &QuantizedLayer,
    input: LayerInput<'_>,
    potentials: Option<&mut [i32]>,
) -> SpikeTensor {
    let mut out = SpikeTensor::zeros(geom.out_dims);
    let mut potentials = potentials;
    for col in 0..geom.out_dims.cols {
        let c = column_outputs(geom, layer, input, col, 0..geom.out_dims.channels);
        store_column(
            &mut out,
            col,
            &c.spikes,
            potentials.as_deref_mut().map(|p| (p, c.potentials.as_slice())),
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("image is {found:?}, the network expects {expected:?}")]
pub struct DimensionMismatch {
    pub expected: crate::netspec::Dims,
    pub found: crate::netspec::Dims,
}

/// Converts an 8-bit image into the first spike map.
pub fn transduce(
    image: &Image,
    geom: &LayerGeometry,
    layer: &QuantizedLayer,
) -> Result<SpikeTensor, DimensionMismatch> {
    if image.dims != geom.in_dims {
        return Err(DimensionMismatch {
            expected: geom.in_dims,
            found: image.dims,
        });
    }
    Ok(evaluate_layer(geom, layer, LayerInput::Pixels(image), None))
}
