use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netspec::MemoryKind;

const VU9P_3SLR: &str = include_str!("../../profiles/vu9p-3slr.json");

/// Name of the profile used when neither the config nor the caller picks one.
pub const DEFAULT_DEVICE: &str = "vu9p-3slr";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlrBudget {
    pub bram_blocks: u64,
    pub uram_blocks: u64,
    pub dsp_slices: u64,
    pub luts: u64,
}

/// Longest legal memory cascade per weight unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeLimits {
    pub bram: usize,
    pub uram: usize,
}

impl Default for CascadeLimits {
    fn default() -> Self {
        CascadeLimits { bram: 16, uram: 64 }
    }
}

impl CascadeLimits {
    pub fn for_kind(&self, kind: MemoryKind) -> usize {
        match kind {
            MemoryKind::Bram => self.bram,
            MemoryKind::Uram => self.uram,
        }
    }
}

/// DSP slices per neuron core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DspModel {
    /// First adder-tree stage of a spiking core.
    pub add_per_core: u64,
    /// 8×8 multipliers of a transduction core.
    pub mul_per_core: u64,
}

impl Default for DspModel {
    fn default() -> Self {
        DspModel {
            add_per_core: 2,
            mul_per_core: 8,
        }
    }
}

/// Coarse LUT estimate; reported, never packed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LutModel {
    pub per_core: u64,
    pub per_buffer_byte: u64,
    pub per_controller: u64,
}

impl Default for LutModel {
    fn default() -> Self {
        LutModel {
            per_core: 40,
            per_buffer_byte: 4,
            per_controller: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub slr_count: usize,
    pub slr: SlrBudget,
    #[serde(default)]
    pub max_cascade: CascadeLimits,
    #[serde(default)]
    pub dsp_model: DspModel,
    #[serde(default)]
    pub lut_model: LutModel,
}

/// A device named in a config: either a profile name or inline budgets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceRef {
    Named(String),
    Inline(DeviceProfile),
}

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("unknown device profile `{name}` (searched: {searched})")]
    Unknown { name: String, searched: String },
    #[error("cannot read device profile {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid device profile JSON in {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("device profile `{name}`: {reason}")]
    Invalid { name: String, reason: String },
}

impl DeviceProfile {
    pub fn vu9p_3slr() -> Self {
        serde_json::from_str(VU9P_3SLR).expect("shipped profile parses")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        if name.eq_ignore_ascii_case(DEFAULT_DEVICE) {
            Some(Self::vu9p_3slr())
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |reason: &str| {
            Err(DeviceError::Invalid {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if !(1..=4).contains(&self.slr_count) {
            return bad("slr_count must be between 1 and 4");
        }
        let b = &self.slr;
        if b.bram_blocks == 0 || b.uram_blocks == 0 || b.dsp_slices == 0 || b.luts == 0 {
            return bad("every per-SLR budget must be positive");
        }
        if self.max_cascade.bram == 0 || self.max_cascade.uram == 0 {
            return bad("cascade limits must be positive");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DeviceError> {
        let text = std::fs::read_to_string(path).map_err(|source| DeviceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let profile: DeviceProfile =
            serde_json::from_str(&text).map_err(|source| DeviceError::Json {
                path: path.display().to_string(),
                source,
            })?;
        profile.validate()?;
        Ok(profile)
    }

    /// Resolves a profile name: built-ins first, then `<name>.json` in each
    /// search directory, then `name` itself as a file path.
    pub fn resolve(name: &str, search_dirs: &[PathBuf]) -> Result<Self, DeviceError> {
        if let Some(p) = Self::builtin(name) {
            return Ok(p);
        }
        for dir in search_dirs {
            let candidate = dir.join(format!("{name}.json"));
            if candidate.is_file() {
                return Self::load(&candidate);
            }
        }
        let direct = Path::new(name);
        if direct.is_file() {
            return Self::load(direct);
        }
        Err(DeviceError::Unknown {
            name: name.to_string(),
            searched: search_dirs
                .iter()
                .map(|d| d.display().to_string())
                .collect::<Vec<_>>()
                .join(", "),
        })
    }
}

impl DeviceRef {
    pub fn resolve(&self, search_dirs: &[PathBuf]) -> Result<DeviceProfile, DeviceError> {
        match self {
            DeviceRef::Named(name) => DeviceProfile::resolve(name, search_dirs),
            DeviceRef::Inline(p) => {
                p.validate()?;
                Ok(p.clone())
            }
        }
    }
}
