use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::notation::{LayerKind, Padding};
use super::NetworkSpec;

/// Lanes per beat; fixed by the neuron core design.
pub const BEAT_LANES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl Dims {
    pub fn new(rows: usize, cols: usize, channels: usize) -> Self {
        Dims {
            rows,
            cols,
            channels,
        }
    }

    pub fn groups(&self) -> usize {
        self.channels.div_ceil(BEAT_LANES)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shape information for one layer, derived from its notation and input shape.
///
/// Fully-connected layers are expressed as a valid convolution whose kernel
/// covers the whole input map, which gives a 1×1 output and κ = 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub kind: LayerKind,
    pub in_dims: Dims,
    pub out_dims: Dims,
    pub kernel_rows: usize,
    pub kernel_cols: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub fan_in: usize,
    pub beats_per_neuron: usize,
    pub kappa: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("layer {layer} ({notation}): kernel {kernel} does not fit a {extent}-wide input")]
    NonPositiveOutput {
        layer: usize,
        notation: String,
        kernel: usize,
        extent: usize,
    },
    #[error("input shape has a zero dimension")]
    EmptyInput,
}

fn same_out(extent: usize, stride: usize) -> usize {
    extent.div_ceil(stride)
}

fn same_pad_before(extent: usize, kernel: usize, stride: usize) -> usize {
    let out = same_out(extent, stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(extent);
    total / 2
}

impl LayerGeometry {
    pub fn in_groups(&self) -> usize {
        self.in_dims.groups()
    }

    pub fn out_groups(&self) -> usize {
        self.out_dims.groups()
    }

    /// Kernel positions (beats per neuron divided by input channel groups).
    pub fn positions(&self) -> usize {
        self.kernel_rows * self.kernel_cols
    }

    pub fn is_fully_connected(&self) -> bool {
        self.kind == LayerKind::FullyConnected
    }

    /// Columns the window FIFO of this layer's input buffer can hold. A
    /// strided window needs `stride - 1` extra slots so the next window can
    /// fill while the current one is read; fully-connected layers ping-pong
    /// two whole maps.
    pub fn window_buffer_columns(&self) -> usize {
        if self.is_fully_connected() {
            2 * self.kernel_cols
        } else {
            self.kernel_cols + self.stride - 1
        }
    }

    /// Columns the landing stage in front of the window FIFO can hold: one
    /// window's worth, so the first window of the next image can arrive
    /// while the last window of the current one is still being read.
    pub fn landing_columns(&self) -> usize {
        if self.is_fully_connected() {
            1
        } else {
            self.kernel_cols
        }
    }

    /// Inclusive range of input columns touched by output column `col`,
    /// clipped to the map (padding columns are not stored anywhere).
    pub fn input_cols_for(&self, col: usize) -> (usize, usize) {
        let start = (col * self.stride) as isize - self.pad_left as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + self.kernel_cols as isize - 1) as usize).min(self.in_dims.cols - 1);
        (lo, hi)
    }

    fn build(
        kind: LayerKind,
        input: Dims,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Option<LayerGeometry> {
        let (kr, kc) = kernel;
        let (rows, cols, pad_top, pad_left) = match padding {
            Padding::Same => (
                same_out(input.rows, stride),
                same_out(input.cols, stride),
                same_pad_before(input.rows, kr, stride),
                same_pad_before(input.cols, kc, stride),
            ),
            Padding::Valid => {
                if kr > input.rows || kc > input.cols {
                    return None;
                }
                ((input.rows - kr) / stride + 1, (input.cols - kc) / stride + 1, 0, 0)
            }
        };
        Some(LayerGeometry {
            kind,
            in_dims: input,
            out_dims: Dims::new(rows, cols, out_channels),
            kernel_rows: kr,
            kernel_cols: kc,
            stride,
            pad_top,
            pad_left,
            fan_in: kr * kc * input.channels,
            beats_per_neuron: kr * kc * input.groups(),
            kappa: rows,
        })
    }
}

/// Walks the layer list and chains shapes from the input.
pub fn infer_geometry(spec: &NetworkSpec) -> Result<Vec<LayerGeometry>, GeometryError> {
    let mut dims = Dims::new(spec.input.height, spec.input.width, spec.input.channels);
    if dims.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let mut out = Vec::with_capacity(spec.layers.len());
    for (idx, layer) in spec.layers.iter().enumerate() {
        let l = &layer.spec;
        let geom = match l.window {
            Some(w) => LayerGeometry::build(
                l.kind,
                dims,
                l.out_channels,
                (w.kernel, w.kernel),
                w.stride,
                w.padding,
            )
            .ok_or_else(|| GeometryError::NonPositiveOutput {
                layer: idx,
                notation: l.to_string(),
                kernel: w.kernel,
                extent: dims.rows.min(dims.cols),
            })?,
            None => LayerGeometry::build(
                l.kind,
                dims,
                l.out_channels,
                (dims.rows, dims.cols),
                1,
                Padding::Valid,
            )
            .expect("full-extent kernel always fits"),
        };
        dims = geom.out_dims;
        out.push(geom);
    }
    Ok(out)
}
