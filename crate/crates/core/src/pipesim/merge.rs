//! Re-joining the outputs of a layer split across SLRs.

use std::ops::Range;

use thiserror::Error;

use crate::netspec::BEAT_LANES;

/// Output columns produced by one share of a layer. Each column holds
/// `rows × neurons.len()` spikes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnStream {
    pub neurons: Range<usize>,
    pub rows: usize,
    pub columns: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedStream {
    pub neurons: Range<usize>,
    pub rows: usize,
    pub columns: Vec<Vec<bool>>,
    /// Source visited in each merge slot, over all columns. A slot moves one
    /// 8-neuron group of every row.
    pub schedule: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MergeError {
    #[error("no streams to merge")]
    Empty,
    #[error("neuron ranges {a:?} and {b:?} overlap")]
    Overlap { a: Range<usize>, b: Range<usize> },
    #[error("neuron ranges leave a gap at {0}")]
    Gap(usize),
    #[error("streams disagree on shape: {0}")]
    Shape(String),
}

/// Interleaves the shares slot by slot, visiting sources in turn, and lays
/// the result out in global neuron order.
pub fn merge_round_robin(streams: &[ColumnStream]) -> Result<MergedStream, MergeError> {
    let first = streams.first().ok_or(MergeError::Empty)?;
    let rows = first.rows;
    let n_cols = first.columns.len();
    for s in streams {
        if s.rows != rows || s.columns.len() != n_cols {
            return Err(MergeError::Shape(format!(
                "{} rows x {} columns vs {} x {}",
                s.rows,
                s.columns.len(),
                rows,
                n_cols
            )));
        }
        if let Some(bad) = s.columns.iter().find(|c| c.len() != rows * s.neurons.len()) {
            return Err(MergeError::Shape(format!(
                "column of {} spikes for {} rows x {} neurons",
                bad.len(),
                rows,
                s.neurons.len()
            )));
        }
    }
    let mut order: Vec<usize> = (0..streams.len()).collect();
    order.sort_by_key(|&i| (streams[i].neurons.start, streams[i].neurons.end));
    for w in order.windows(2) {
        let (a, b) = (&streams[w[0]].neurons, &streams[w[1]].neurons);
        if b.start < a.end {
            return Err(MergeError::Overlap {
                a: a.clone(),
                b: b.clone(),
            });
        }
        if b.start > a.end {
            return Err(MergeError::Gap(a.end));
        }
    }
    let start = streams[order[0]].neurons.start;
    let end = streams[*order.last().expect("non-empty")].neurons.end;
    let width = end - start;

    let mut columns = Vec::with_capacity(n_cols);
    let mut schedule = Vec::new();
    for col in 0..n_cols {
        let mut merged = vec![false; rows * width];
        let mut cursor = vec![0usize; streams.len()];
        loop {
            let mut moved = false;
            for (src, s) in streams.iter().enumerate() {
                let len = s.neurons.len();
                if cursor[src] >= len {
                    continue;
                }
                let chunk = cursor[src]..(cursor[src] + BEAT_LANES).min(len);
                for row in 0..rows {
                    for k in chunk.clone() {
                        let global = s.neurons.start + k - start;
                        merged[row * width + global] = s.columns[col][row * len + k];
                    }
                }
                cursor[src] = chunk.end;
                schedule.push(src);
                moved = true;
            }
            if !moved {
                break;
            }
        }
        columns.push(merged);
    }
    Ok(MergedStream {
        neurons: start..end,
        rows,
        columns,
        schedule,
    })
}
