use serde::{Deserialize, Serialize};

use crate::netspec::{Dims, BEAT_LANES};

/// Binary feature map, row/column/channel-group order with one byte per
/// group of 8 channels. Bit `l` of a byte is channel `group * 8 + l`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpikeTensor {
    dims: Dims,
    data: Vec<u8>,
}

impl SpikeTensor {
    pub fn zeros(dims: Dims) -> Self {
        SpikeTensor {
            dims,
            data: vec![0; dims.rows * dims.cols * dims.groups()],
        }
    }

    /// Wraps packed bytes; `None` if the length or padding bits are wrong.
    pub fn from_packed(dims: Dims, data: Vec<u8>) -> Option<Self> {
        let t = SpikeTensor { dims, data };
        (t.data.len() == dims.rows * dims.cols * dims.groups() && t.padding_clear()).then_some(t)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut t = Self::zeros(dims);
        for r in 0..dims.rows {
            for c in 0..dims.cols {
                for ch in 0..dims.channels {
                    if f(r, c, ch) {
                        t.set(r, c, ch, true);
                    }
                }
            }
        }
        t
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    fn offset(&self, row: usize, col: usize, group: usize) -> usize {
        (row * self.dims.cols + col) * self.dims.groups() + group
    }

    /// The beat byte for channel group `group` at (`row`, `col`).
    pub fn byte(&self, row: usize, col: usize, group: usize) -> u8 {
        self.data[self.offset(row, col, group)]
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> bool {
        self.byte(row, col, ch / BEAT_LANES) >> (ch % BEAT_LANES) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, spike: bool) {
        debug_assert!(ch < self.dims.channels);
        let i = self.offset(row, col, ch / BEAT_LANES);
        let bit = 1u8 << (ch % BEAT_LANES);
        if spike {
            self.data[i] |= bit;
        } else {
            self.data[i] &= !bit;
        }
    }

    /// Spikes in row/column/channel order, one bool per channel.
    pub fn to_bools(&self) -> Vec<bool> {
        let d = self.dims;
        let mut out = Vec::with_capacity(d.len());
        for r in 0..d.rows {
            for c in 0..d.cols {
                for ch in 0..d.channels {
                    out.push(self.get(r, c, ch));
                }
            }
        }
        out
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Channels beyond the real count in the last group are never set.
    pub fn padding_clear(&self) -> bool {
        let used = self.dims.channels % BEAT_LANES;
        if used == 0 {
            return true;
        }
        let mask = !((1u8 << used) - 1);
        let groups = self.dims.groups();
        self.data
            .chunks(groups)
            .all(|px| px.last().map_or(true, |b| b & mask == 0))
    }
}

/// 8-bit input image in row/column/channel order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub dims: Dims,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(dims: Dims, data: Vec<u8>) -> Option<Self> {
        (data.len() == dims.len()).then_some(Image { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Image {
            dims,
            data: vec![0; dims.len()],
        }
    }

    pub fn pixel(&self, row: usize, col: usize, ch: usize) -> u8 {
        self.data[(row * self.dims.cols + col) * self.dims.channels + ch]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing_layout() {
        let d = Dims::new(2, 3, 10);
        let mut t = SpikeTensor::zeros(d);
        assert_eq!(t.as_bytes().len(), 2 * 3 * 2);
        t.set(1, 2, 9, true);
        t.set(0, 0, 0, true);
        t.set(0, 0, 7, true);
        assert_eq!(t.byte(0, 0, 0), 0b1000_0001);
        assert_eq!(t.byte(1, 2, 1), 0b10);
        assert!(t.get(1, 2, 9) && !t.get(1, 2, 8));
        assert_eq!(t.count_ones(), 3);
        assert!(t.padding_clear());
        t.set(0, 0, 7, false);
        assert_eq!(t.byte(0, 0, 0), 1);
        let mut bytes = t.as_bytes().to_vec();
        bytes[1] = 0b100;
        assert!(SpikeTensor::from_packed(d, bytes).is_none());
        assert!(SpikeTensor::from_packed(d, vec![0; 5]).is_none());
    }

    #[test]
    fn from_fn_matches_get() {
        let d = Dims::new(3, 2, 5);
        let t = SpikeTensor::from_fn(d, |r, c, ch| (r + c + ch) % 2 == 0);
        let b = t.to_bools();
        assert_eq!(b.len(), d.len());
        assert!(b[0] && !b[1]);
    }
}
