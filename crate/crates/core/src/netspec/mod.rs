//! Network description: layer notation, config files, shape inference and
//! validation.

mod geometry;
mod notation;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapper::{valid_omega_set, DeviceRef};

pub use geometry::{infer_geometry, Dims, GeometryError, LayerGeometry, BEAT_LANES};
pub use notation::{
    parse_layer_notation, parse_raw, LayerKind, LayerSpec, MemoryKind, NotationError, Padding,
    RawLayer, Window, LEGAL_KERNELS, LEGAL_STRIDES,
};

fn eight() -> u32 {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    #[serde(default = "eight")]
    pub bit_depth: u32,
}

impl InputShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        InputShape {
            height,
            width,
            channels,
            bit_depth: 8,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLayer {
    pub spec: LayerSpec,
    /// User-pinned number of weight units.
    pub omega: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input: InputShape,
    pub clock_mhz: f64,
    pub device: Option<DeviceRef>,
    pub layers: Vec<NetworkLayer>,
}

/// On-disk network config: notation strings are kept verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub name: String,
    pub input: InputShape,
    pub clock_mhz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<DeviceRef>,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub notation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    ParseError,
    IllegalKernel,
    IllegalStride,
    IllegalField,
    EmptyNetwork,
    FirstLayerNotConv,
    LastLayerNotFullyConnected,
    MisplacedTransduction,
    Geometry,
    PoolingConvention,
    IllegalOmega,
    BadInput,
    BadClock,
}

impl DiagnosticKind {
    pub fn label(self) -> &'static str {
        match self {
            DiagnosticKind::ParseError => "parse error",
            DiagnosticKind::IllegalKernel => "illegal kernel",
            DiagnosticKind::IllegalStride => "illegal stride",
            DiagnosticKind::IllegalField => "illegal field",
            DiagnosticKind::EmptyNetwork => "empty network",
            DiagnosticKind::FirstLayerNotConv => "first layer not a convolution",
            DiagnosticKind::LastLayerNotFullyConnected => "last layer not fully-connected",
            DiagnosticKind::MisplacedTransduction => "misplaced transduction layer",
            DiagnosticKind::Geometry => "geometry",
            DiagnosticKind::PoolingConvention => "pooling convention",
            DiagnosticKind::IllegalOmega => "illegal omega",
            DiagnosticKind::BadInput => "bad input shape",
            DiagnosticKind::BadClock => "bad clock",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub layer: Option<usize>,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl Diagnostic {
    fn new(layer: Option<usize>, kind: DiagnosticKind, message: impl Into<String>) -> Self {
        Diagnostic {
            layer,
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer {
            Some(l) => write!(f, "layer {l}: {}: {}", self.kind.label(), self.message),
            None => write!(f, "{}: {}", self.kind.label(), self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("network has {} diagnostic(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Diagnostic>),
}

impl NetworkConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Parses every layer and runs the full validation; any diagnostic is fatal.
    pub fn to_spec(&self) -> Result<NetworkSpec, ConfigError> {
        let diags = validate_config(self);
        if !diags.is_empty() {
            return Err(ConfigError::Invalid(diags));
        }
        let layers = self
            .layers
            .iter()
            .map(|e| NetworkLayer {
                spec: parse_layer_notation(&e.notation).expect("validated"),
                omega: e.omega,
            })
            .collect();
        Ok(NetworkSpec::from_layers(
            &self.name,
            self.input,
            self.clock_mhz,
            self.device.clone(),
            layers,
        ))
    }
}

impl From<&NetworkSpec> for NetworkConfig {
    fn from(spec: &NetworkSpec) -> Self {
        NetworkConfig {
            name: spec.name.clone(),
            input: spec.input,
            clock_mhz: spec.clock_mhz,
            device: spec.device.clone(),
            layers: spec
                .layers
                .iter()
                .map(|l| LayerEntry {
                    notation: l.spec.to_string(),
                    omega: l.omega,
                })
                .collect(),
        }
    }
}

impl NetworkSpec {
    /// Builds a spec, marking a leading convolution as the transduction layer.
    pub fn from_layers(
        name: &str,
        input: InputShape,
        clock_mhz: f64,
        device: Option<DeviceRef>,
        mut layers: Vec<NetworkLayer>,
    ) -> Self {
        if let Some(first) = layers.first_mut() {
            if first.spec.kind == LayerKind::Conv {
                first.spec.kind = LayerKind::TransductionConv;
            }
        }
        NetworkSpec {
            name: name.to_string(),
            input,
            clock_mhz,
            device,
            layers,
        }
    }

    /// Convenience constructor from notation strings; rejects invalid networks.
    pub fn from_notation(
        name: &str,
        input: InputShape,
        clock_mhz: f64,
        layers: &[&str],
    ) -> Result<Self, ConfigError> {
        NetworkConfig {
            name: name.to_string(),
            input,
            clock_mhz,
            device: None,
            layers: layers
                .iter()
                .map(|n| LayerEntry {
                    notation: n.to_string(),
                    omega: None,
                })
                .collect(),
        }
        .to_spec()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        NetworkConfig::load(path)?.to_spec()
    }

    pub fn class_count(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.out_channels)
    }
}

/// Syntax + semantic checks on a raw config. Never aborts.
pub fn validate_config(config: &NetworkConfig) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut parsed = Vec::with_capacity(config.layers.len());
    for (idx, entry) in config.layers.iter().enumerate() {
        match parse_layer_notation(&entry.notation) {
            Ok(spec) => parsed.push(NetworkLayer {
                spec,
                omega: entry.omega,
            }),
            Err(e) => {
                let kind = match e {
                    NotationError::Malformed { .. } => DiagnosticKind::ParseError,
                    NotationError::IllegalKernel(_) => DiagnosticKind::IllegalKernel,
                    NotationError::IllegalStride(_) => DiagnosticKind::IllegalStride,
                    NotationError::ZeroChannels | NotationError::ZeroCascade => {
                        DiagnosticKind::IllegalField
                    }
                };
                diags.push(Diagnostic::new(Some(idx), kind, e.to_string()));
            }
        }
    }
    if !diags.is_empty() {
        // Shape checks need every layer; report input-level problems only.
        diags.extend(
            check_header(&config.input, config.clock_mhz, config.layers.is_empty()).into_iter(),
        );
        return diags;
    }
    let spec = NetworkSpec::from_layers(
        &config.name,
        config.input,
        config.clock_mhz,
        config.device.clone(),
        parsed,
    );
    validate_network(&spec)
}

fn check_header(input: &InputShape, clock_mhz: f64, empty: bool) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    if empty {
        diags.push(Diagnostic::new(
            None,
            DiagnosticKind::EmptyNetwork,
            "the layer list is empty",
        ));
    }
    if input.height == 0 || input.width == 0 || input.channels == 0 {
        diags.push(Diagnostic::new(
            None,
            DiagnosticKind::BadInput,
            format!(
                "input {}x{}x{} has a zero dimension",
                input.height, input.width, input.channels
            ),
        ));
    }
    if input.bit_depth != 8 {
        diags.push(Diagnostic::new(
            None,
            DiagnosticKind::BadInput,
            format!("input bit depth must be 8, got {}", input.bit_depth),
        ));
    }
    if !(clock_mhz.is_finite() && clock_mhz > 0.0) {
        diags.push(Diagnostic::new(
            None,
            DiagnosticKind::BadClock,
            format!("clock must be a positive frequency, got {clock_mhz} MHz"),
        ));
    }
    diags
}

/// Semantic checks on a parsed network. Returns an empty list iff the network
/// can be handed to the mapper.
pub fn validate_network(spec: &NetworkSpec) -> Vec<Diagnostic> {
    let mut diags = check_header(&spec.input, spec.clock_mhz, spec.layers.is_empty());
    if spec.layers.is_empty() {
        return diags;
    }
    let last = spec.layers.len() - 1;
    for (idx, layer) in spec.layers.iter().enumerate() {
        let l = &layer.spec;
        if idx == 0 && l.kind != LayerKind::TransductionConv {
            diags.push(Diagnostic::new(
                Some(0),
                DiagnosticKind::FirstLayerNotConv,
                format!("`{l}` cannot consume 8-bit pixels; the first layer must be a convolution"),
            ));
        }
        if idx > 0 && l.kind == LayerKind::TransductionConv {
            diags.push(Diagnostic::new(
                Some(idx),
                DiagnosticKind::MisplacedTransduction,
                "only the first layer may be a transduction layer",
            ));
        }
        if idx == last && !l.is_fully_connected() {
            diags.push(Diagnostic::new(
                Some(idx),
                DiagnosticKind::LastLayerNotFullyConnected,
                format!("`{l}` must be a fully-connected classifier"),
            ));
        }
        if let Some(w) = l.window {
            if !LEGAL_KERNELS.contains(&w.kernel) {
                diags.push(Diagnostic::new(
                    Some(idx),
                    DiagnosticKind::IllegalKernel,
                    format!("kernel {} is not 2 or 3", w.kernel),
                ));
            }
            if !LEGAL_STRIDES.contains(&w.stride) {
                diags.push(Diagnostic::new(
                    Some(idx),
                    DiagnosticKind::IllegalStride,
                    format!("stride {} is not 1 or 2", w.stride),
                ));
            }
            if w.kernel == 2 && (w.stride != 2 || w.padding != Padding::Valid) {
                diags.push(Diagnostic::new(
                    Some(idx),
                    DiagnosticKind::PoolingConvention,
                    format!("`{l}`: 2x2 windows are only legal as valid stride-2 pooling"),
                ));
            }
        }
        if l.out_channels == 0 || l.cascade == 0 {
            diags.push(Diagnostic::new(
                Some(idx),
                DiagnosticKind::IllegalField,
                "channel count and cascade must be positive",
            ));
        }
        if let Some(omega) = layer.omega {
            let legal = valid_omega_set(l.out_channels.max(1));
            if !legal.contains(&omega) || l.out_channels % omega != 0 {
                diags.push(Diagnostic::new(
                    Some(idx),
                    DiagnosticKind::IllegalOmega,
                    format!(
                        "omega {omega} must be in {{1,2,4,8,16,24,...}} and divide {} channels",
                        l.out_channels
                    ),
                ));
            }
        }
    }
    if diags.is_empty() {
        if let Err(e) = infer_geometry(spec) {
            let layer = match e {
                GeometryError::NonPositiveOutput { layer, .. } => Some(layer),
                GeometryError::EmptyInput => None,
            };
            diags.push(Diagnostic::new(layer, DiagnosticKind::Geometry, e.to_string()));
        }
    }
    diags
}
