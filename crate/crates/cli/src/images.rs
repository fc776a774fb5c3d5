//! Input image sets: raw `u8` dumps or `.npy` arrays of unsigned bytes.

use std::fs;
use std::path::Path;

use df2_core::netspec::Dims;
use df2_core::pipesim::Image;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}

const NPY_MAGIC: &[u8] = b"\x93NUMPY";

/// Loads up to `limit` images of shape `dims`. NPY arrays must be `uint8`
/// with a trailing shape of `(rows, cols, channels)`, or `(rows, cols)` for
/// single-channel input.
pub fn load_images(path: &Path, dims: Dims, limit: Option<usize>) -> Result<Vec<Image>, ImageError> {
    let shown = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: shown.clone(),
        source,
    })?;
    let bad = |reason: String| ImageError::Format {
        path: shown.clone(),
        reason,
    };
    let data = if bytes.starts_with(NPY_MAGIC) {
        let npy = npyz::NpyFile::new(&bytes[..]).map_err(|e| bad(e.to_string()))?;
        let shape: Vec<usize> = npy.shape().iter().map(|&d| d as usize).collect();
        let hwc = [dims.rows, dims.cols, dims.channels];
        let fits = shape.ends_with(&hwc) || (dims.channels == 1 && shape.ends_with(&hwc[..2]));
        if !fits {
            return Err(bad(format!(
                "array shape {shape:?} does not end with {}x{}x{}",
                dims.rows, dims.cols, dims.channels
            )));
        }
        if npy.order() == npyz::Order::Fortran {
            return Err(bad("Fortran-ordered arrays are not supported".into()));
        }
        npy.into_vec::<u8>()
            .map_err(|e| bad(format!("expected an unsigned byte array: {e}")))?
    } else {
        bytes
    };
    let per = dims.len();
    if per == 0 || data.len() % per != 0 {
        return Err(bad(format!(
            "{} bytes is not a whole number of {}-byte images",
            data.len(),
            per
        )));
    }
    let count = (data.len() / per).min(limit.unwrap_or(usize::MAX));
    Ok(data
        .chunks_exact(per)
        .take(count)
        .map(|c| Image::new(dims, c.to_vec()).expect("chunk has the image size"))
        .collect())
}
