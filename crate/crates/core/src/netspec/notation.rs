use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What a layer does with its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    /// First layer: 8-bit pixels multiplied by int8 weights.
    TransductionConv,
    Conv,
    FullyConnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Memory primitive backing a weight unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MemoryKind {
    Bram,
    Uram,
}

impl MemoryKind {
    pub fn block_bytes(self) -> usize {
        match self {
            MemoryKind::Bram => 4096,
            MemoryKind::Uram => 32768,
        }
    }

    fn letter(self) -> char {
        match self {
            MemoryKind::Bram => 'b',
            MemoryKind::Uram => 'u',
        }
    }
}

impl fmt::Display for MemoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemoryKind::Bram => f.write_str("BRAM"),
            MemoryKind::Uram => f.write_str("URAM"),
        }
    }
}

/// Convolution window. Absent for fully-connected layers, whose window is
/// the whole input map and only known once geometry is inferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub window: Option<Window>,
    pub out_channels: usize,
    pub memory: MemoryKind,
    pub cascade: usize,
}

pub const LEGAL_KERNELS: [usize; 2] = [2, 3];
pub const LEGAL_STRIDES: [usize; 2] = [1, 2];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NotationError {
    #[error("malformed layer notation `{text}`: unexpected `{token}` ({expected})")]
    Malformed {
        text: String,
        token: String,
        expected: &'static str,
    },
    #[error("illegal kernel {0} (expected 2 or 3)")]
    IllegalKernel(usize),
    #[error("illegal stride {0} (expected 1 or 2)")]
    IllegalStride(usize),
    #[error("channel count must be positive")]
    ZeroChannels,
    #[error("cascade must be at least 1")]
    ZeroCascade,
}

impl NotationError {
    pub fn is_syntax(&self) -> bool {
        matches!(self, NotationError::Malformed { .. })
    }
}

/// Syntactic parse result before the legality checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawLayer {
    pub padded: bool,
    /// `(kernel, stride)`, `None` for `Fc`.
    pub conv: Option<(usize, usize)>,
    pub out_channels: usize,
    pub memory: MemoryKind,
    pub cascade: usize,
}

struct Cursor<'a> {
    full: &'a str,
    rest: &'a str,
}

impl<'a> Cursor<'a> {
    fn fail(&self, expected: &'static str) -> NotationError {
        let token: String = match self.rest.chars().next() {
            None => "<end of input>".to_string(),
            Some(c) if c.is_ascii_alphanumeric() => self
                .rest
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric())
                .collect(),
            Some(c) => c.to_string(),
        };
        NotationError::Malformed {
            text: self.full.to_string(),
            token,
            expected,
        }
    }

    fn eat(&mut self, lit: &str) -> bool {
        if let Some(r) = self.rest.strip_prefix(lit) {
            self.rest = r;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, lit: &str, expected: &'static str) -> Result<(), NotationError> {
        if self.eat(lit) {
            Ok(())
        } else {
            Err(self.fail(expected))
        }
    }

    fn number(&mut self, expected: &'static str) -> Result<usize, NotationError> {
        let len = self.rest.bytes().take_while(u8::is_ascii_digit).count();
        if len == 0 {
            return Err(self.fail(expected));
        }
        let value = self.rest[..len].parse().map_err(|_| self.fail(expected))?;
        self.rest = &self.rest[len..];
        Ok(value)
    }
}

/// Syntax-only parse of `[p]Conv<k>-<s>-<ch>/<b|u><n>` or `Fc-<ch>/<b|u><n>`.
/// Whitespace around the `/` (and at either end) is tolerated.
pub fn parse_raw(text: &str) -> Result<RawLayer, NotationError> {
    let compact: String = text.split_whitespace().collect();
    let mut cur = Cursor {
        full: text.trim(),
        rest: &compact,
    };
    let padded = cur.eat("p");
    let conv = if cur.eat("Conv") {
        let k = cur.number("kernel size")?;
        cur.expect("-", "`-` after kernel size")?;
        let s = cur.number("stride")?;
        cur.expect("-", "`-` after stride")?;
        Some((k, s))
    } else if !padded && cur.eat("Fc") {
        cur.expect("-", "`-` after `Fc`")?;
        None
    } else {
        return Err(cur.fail(if padded { "`Conv`" } else { "`Conv`, `pConv` or `Fc`" }));
    };
    let out_channels = cur.number("channel count")?;
    cur.expect("/", "`/` before memory kind")?;
    let memory = if cur.eat("b") {
        MemoryKind::Bram
    } else if cur.eat("u") {
        MemoryKind::Uram
    } else {
        return Err(cur.fail("memory kind `b` or `u`"));
    };
    let cascade = cur.number("cascade count")?;
    if !cur.rest.is_empty() {
        return Err(cur.fail("end of notation"));
    }
    Ok(RawLayer {
        padded,
        conv,
        out_channels,
        memory,
        cascade,
    })
}

impl TryFrom<RawLayer> for LayerSpec {
    type Error = NotationError;

    fn try_from(raw: RawLayer) -> Result<Self, Self::Error> {
        let window = match raw.conv {
            Some((kernel, stride)) => {
                if !LEGAL_KERNELS.contains(&kernel) {
                    return Err(NotationError::IllegalKernel(kernel));
                }
                if !LEGAL_STRIDES.contains(&stride) {
                    return Err(NotationError::IllegalStride(stride));
                }
                Some(Window {
                    kernel,
                    stride,
                    padding: if raw.padded { Padding::Same } else { Padding::Valid },
                })
            }
            None => None,
        };
        if raw.out_channels == 0 {
            return Err(NotationError::ZeroChannels);
        }
        if raw.cascade == 0 {
            return Err(NotationError::ZeroCascade);
        }
        Ok(LayerSpec {
            kind: if window.is_some() {
                LayerKind::Conv
            } else {
                LayerKind::FullyConnected
            },
            window,
            out_channels: raw.out_channels,
            memory: raw.memory,
            cascade: raw.cascade,
        })
    }
}

/// Parses one layer of the Table-style notation, e.g. `pConv3-1-64/b2`.
pub fn parse_layer_notation(text: &str) -> Result<LayerSpec, NotationError> {
    LayerSpec::try_from(parse_raw(text)?)
}

impl FromStr for LayerSpec {
    type Err = NotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_layer_notation(s)
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.window {
            Some(w) => {
                if w.padding == Padding::Same {
                    f.write_str("p")?;
                }
                write!(f, "Conv{}-{}-", w.kernel, w.stride)?;
            }
            None => f.write_str("Fc-")?,
        }
        write!(
            f,
            "{}/{}{}",
            self.out_channels,
            self.memory.letter(),
            self.cascade
        )
    }
}

impl LayerSpec {
    pub fn is_fully_connected(&self) -> bool {
        self.kind == LayerKind::FullyConnected
    }
}
