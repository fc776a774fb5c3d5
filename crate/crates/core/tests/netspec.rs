use std::path::{Path, PathBuf};

use df2_core::netspec::{
    infer_geometry, parse_layer_notation, validate_config, validate_network, DiagnosticKind,
    InputShape, LayerEntry, LayerKind, LayerSpec, MemoryKind, NetworkConfig, NetworkSpec,
    NotationError, Padding, Window,
};
use proptest::prelude::*;

fn configs() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    ["mnist", "cifar10", "cifar100", "tiny-imagenet", "imagenet"]
        .iter()
        .map(|n| dir.join(format!("{n}.json")))
        .collect()
}

fn config_with(layers: &[&str]) -> NetworkConfig {
    NetworkConfig {
        name: "t".into(),
        input: InputShape::new(28, 28, 1),
        clock_mhz: 100.0,
        device: None,
        layers: layers
            .iter()
            .map(|n| LayerEntry {
                notation: n.to_string(),
                omega: None,
            })
            .collect(),
    }
}

fn kinds(config: &NetworkConfig) -> Vec<DiagnosticKind> {
    validate_config(config).into_iter().map(|d| d.kind).collect()
}

#[test]
fn shipped_configs_validate_and_chain() {
    for path in configs() {
        let spec = NetworkSpec::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(validate_network(&spec).is_empty());
        let g = infer_geometry(&spec).unwrap();
        assert_eq!(g[0].kind, LayerKind::TransductionConv);
        assert_eq!(g[0].in_dims, spec.input.dims());
        for pair in g.windows(2) {
            assert_eq!(pair[1].in_dims, pair[0].out_dims, "{}", spec.name);
        }
        let last = g.last().unwrap();
        assert_eq!(last.kind, LayerKind::FullyConnected);
        assert_eq!(last.kappa, 1);
        assert_eq!((last.out_dims.rows, last.out_dims.cols), (1, 1));
    }
}

#[test]
fn same_padding_stride_one_kappa_is_row_count() {
    for path in configs() {
        let spec = NetworkSpec::load(&path).unwrap();
        let g = infer_geometry(&spec).unwrap();
        for (l, geom) in spec.layers.iter().zip(&g) {
            if let Some(w) = l.spec.window {
                if w.padding == Padding::Same && w.stride == 1 {
                    assert_eq!(geom.kappa, geom.in_dims.rows);
                    assert_eq!(geom.out_dims.rows, geom.in_dims.rows);
                }
            }
        }
    }
}

#[test]
fn geometry_examples() {
    let spec = NetworkSpec::from_notation(
        "imagenet-head",
        InputShape::new(224, 224, 3),
        100.0,
        &["pConv3-1-64/b1", "Conv2-2-64/b1", "Fc-10/b1"],
    )
    .unwrap();
    let g = infer_geometry(&spec).unwrap();
    assert_eq!(g[0].out_dims.rows, 224);
    assert_eq!(g[0].out_dims.channels, 64);
    assert_eq!(g[0].kappa, 224);
    assert_eq!(g[1].out_dims.rows, 112);

    let spec = NetworkSpec::from_notation(
        "mnist-head",
        InputShape::new(28, 28, 1),
        100.0,
        &["pConv3-1-16/b1", "Fc-10/b1"],
    )
    .unwrap();
    let g = infer_geometry(&spec).unwrap();
    assert_eq!(g[0].fan_in, 9);
    assert_eq!(g[0].beats_per_neuron, 9);
    // FC reads the whole 28x28x16 map, two channel groups per position.
    assert_eq!(g[1].fan_in, 28 * 28 * 16);
    assert_eq!(g[1].beats_per_neuron, 28 * 28 * 2);
}

#[test]
fn notation_fields() {
    let l = parse_layer_notation("Conv2-2-72/u3").unwrap();
    assert_eq!(
        l,
        LayerSpec {
            kind: LayerKind::Conv,
            window: Some(Window {
                kernel: 2,
                stride: 2,
                padding: Padding::Valid
            }),
            out_channels: 72,
            memory: MemoryKind::Uram,
            cascade: 3,
        }
    );
    let fc = parse_layer_notation("Fc-1000/u4").unwrap();
    assert!(fc.is_fully_connected());
    assert_eq!(fc.window, None);
    assert!(matches!(
        parse_layer_notation("Conv5-1-8/b1"),
        Err(NotationError::IllegalKernel(5))
    ));
    assert!(parse_layer_notation("Conv3-1-8/x1").unwrap_err().is_syntax());
    assert!(parse_layer_notation("Conv3-1-8").unwrap_err().is_syntax());
    assert_eq!(
        parse_layer_notation("Fc-0/b1").unwrap_err(),
        NotationError::ZeroChannels
    );
}

#[test]
fn diagnostics() {
    assert_eq!(kinds(&config_with(&[])), vec![DiagnosticKind::EmptyNetwork]);
    assert!(kinds(&config_with(&["pConv3-3-16/b1", "Fc-10/b1"]))
        .contains(&DiagnosticKind::IllegalStride));
    assert!(kinds(&config_with(&["pConv3-1-16/b1", "Conv3-1-16/b1"]))
        .contains(&DiagnosticKind::LastLayerNotFullyConnected));
    assert!(kinds(&config_with(&["Fc-16/b1", "Fc-10/b1"]))
        .contains(&DiagnosticKind::FirstLayerNotConv));
    assert!(kinds(&config_with(&["pConv3-1-16/b1", "Conv2-1-16/b1", "Fc-10/b1"]))
        .contains(&DiagnosticKind::PoolingConvention));
    assert!(kinds(&config_with(&["pConv3-1-16/b1", "Conv3-1-16/q1", "Fc-10/b1"]))
        .contains(&DiagnosticKind::ParseError));

    let mut bad_omega = config_with(&["pConv3-1-16/b1", "Fc-10/b1"]);
    bad_omega.layers[0].omega = Some(3);
    assert_eq!(kinds(&bad_omega), vec![DiagnosticKind::IllegalOmega]);
    // Legal in the set but does not divide 10 channels.
    bad_omega.layers[0].omega = None;
    bad_omega.layers[1].omega = Some(4);
    assert_eq!(kinds(&bad_omega), vec![DiagnosticKind::IllegalOmega]);

    let mut clock = config_with(&["pConv3-1-16/b1", "Fc-10/b1"]);
    clock.clock_mhz = 0.0;
    assert_eq!(kinds(&clock), vec![DiagnosticKind::BadClock]);

    // Every failure is reported, not just the first.
    let many = config_with(&["Conv5-1-8/b1", "Conv3-3-8/b1", "Fc-10/b1"]);
    assert_eq!(validate_config(&many).len(), 2);
}

#[test]
fn geometry_collapse_is_a_diagnostic() {
    let mut c = config_with(&["Conv3-2-8/b1", "Conv3-2-8/b1", "Conv3-2-8/b1", "Conv3-2-8/b1", "Fc-10/b1"]);
    c.input = InputShape::new(16, 16, 1);
    assert!(kinds(&c).contains(&DiagnosticKind::Geometry));
}

#[test]
fn config_json_round_trip() {
    for path in configs() {
        let text = std::fs::read_to_string(&path).unwrap();
        let config: NetworkConfig = serde_json::from_str(&text).unwrap();
        let spec = config.to_spec().unwrap();
        let back = NetworkConfig::from(&spec);
        assert_eq!(back.layers, config.layers);
        let again: NetworkConfig = serde_json::from_str(&serde_json::to_string(&back).unwrap()).unwrap();
        assert_eq!(again, back);
    }
}

#[test]
fn unknown_config_fields_are_rejected() {
    let text = r#"{"name":"x","input":{"height":8,"width":8,"channels":1},"clock_mhz":100,"layers":[],"extra":1}"#;
    assert!(serde_json::from_str::<NetworkConfig>(text).is_err());
}

fn layer_strategy() -> impl Strategy<Value = String> {
    let conv = (
        any::<bool>(),
        prop::sample::select(vec![2usize, 3]),
        prop::sample::select(vec![1usize, 2]),
        1usize..4096,
        prop::sample::select(vec!['b', 'u']),
        1usize..65,
    )
        .prop_map(|(p, k, s, ch, m, c)| {
            format!("{}Conv{k}-{s}-{ch}/{m}{c}", if p { "p" } else { "" })
        });
    let fc = (1usize..4096, prop::sample::select(vec!['b', 'u']), 1usize..65)
        .prop_map(|(ch, m, c)| format!("Fc-{ch}/{m}{c}"));
    prop_oneof![conv, fc]
}

proptest! {
    #[test]
    fn print_parse_round_trip(text in layer_strategy()) {
        let parsed = parse_layer_notation(&text).unwrap();
        prop_assert_eq!(parsed.to_string(), text);
        prop_assert_eq!(parse_layer_notation(&parsed.to_string()).unwrap(), parsed);
    }

    #[test]
    fn parser_never_panics(text in "\\PC{0,24}") {
        let _ = parse_layer_notation(&text);
    }
}
