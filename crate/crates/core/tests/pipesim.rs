use std::path::Path;

use df2_core::analytic::throughput_analytic;
use df2_core::mapper::{assign_slrs, build_plan, DeviceProfile, MapOptions, MappingPlan, PlanLayout};
use df2_core::netspec::{infer_geometry, Dims, InputShape, LayerGeometry, LayerKind, NetworkSpec};
use df2_core::oracle::reference_inference;
use df2_core::pipesim::{
    fire, simulate, simulate_with, transduce, Image, LayerState, SimError, SimOptions, SimReport,
};
use df2_core::quantizer::{QuantizedLayer, QuantizedModel};
use df2_core::synth::{self, NetShape};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn load(name: &str) -> (NetworkSpec, Vec<LayerGeometry>) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.json"));
    let spec = NetworkSpec::load(&path).unwrap();
    let geoms = infer_geometry(&spec).unwrap();
    (spec, geoms)
}

fn plan_for(spec: &NetworkSpec, geoms: &[LayerGeometry], omegas: &[usize]) -> MappingPlan {
    build_plan(
        spec,
        geoms,
        &synth::bench_device(),
        &PlanLayout::single_slr(omegas.to_vec()),
        &MapOptions::default(),
    )
    .unwrap()
}

fn run(
    spec: &NetworkSpec,
    geoms: &[LayerGeometry],
    plan: &MappingPlan,
    model: &QuantizedModel,
    images: &[Image],
    options: SimOptions,
) -> SimReport {
    simulate_with(spec, geoms, plan, model, images, &options).unwrap()
}

fn recorded() -> SimOptions {
    SimOptions {
        record_activations: true,
        ..SimOptions::default()
    }
}

/// Transduction, then the 14x14 layer under test, then a classifier.
fn fourteen() -> (NetworkSpec, Vec<LayerGeometry>) {
    let spec = NetworkSpec::from_notation(
        "fourteen",
        InputShape::new(14, 14, 1),
        100.0,
        &["pConv3-1-16/b1", "pConv3-1-16/b1", "Fc-8/b1"],
    )
    .unwrap();
    let geoms = infer_geometry(&spec).unwrap();
    (spec, geoms)
}

#[test]
fn single_conv_service_matches_the_model() {
    let (spec, geoms) = fourteen();
    assert_eq!(geoms[1].beats_per_neuron, 18);
    let plan = plan_for(&spec, &geoms, &[16, 2, 8]);
    let model = synth::random_quantized_model(&mut ChaCha8Rng::seed_from_u64(1), &geoms);
    let r = run(&spec, &geoms, &plan, &model, &[Image::zeros(geoms[0].in_dims)], SimOptions::default());
    assert_eq!(r.bottleneck_layer, 1);
    // 14 columns of 8 neurons x 18 beats, plus the per-column handshake.
    let analytic = 14 * (8 * 18 + 2);
    let steady = r.steady_state_cycles_per_image as f64;
    assert!((steady - analytic as f64).abs() <= 0.05 * analytic as f64, "{steady}");
    assert!(r.layers[1].busy_cycles >= r.stream_images as u64 * 14 * 8 * 18);
}

#[test]
fn widening_a_unique_bottleneck_raises_fps() {
    let (spec14, geoms14) = fourteen();
    let mut cases = vec![(spec14.clone(), geoms14.clone(), plan_for(&spec14, &geoms14, &[16, 2, 8]))];
    for name in ["mnist", "cifar10", "cifar100"] {
        let (spec, geoms) = load(name);
        let plan = assign_slrs(&spec, &geoms, &DeviceProfile::vu9p_3slr(), &MapOptions::default()).unwrap();
        cases.push((spec, geoms, plan));
    }
    let mut checked = 0;
    for (spec, geoms, plan) in cases {
        // With tied slowest layers, widening one of them cannot help.
        let mut services: Vec<u64> = plan.layers.iter().map(|m| m.service_cycles).collect();
        services.sort_unstable();
        if services[services.len() - 2] == services[services.len() - 1] {
            continue;
        }
        let model = synth::random_quantized_model(&mut ChaCha8Rng::seed_from_u64(2), &geoms);
        let image = synth::random_image(&mut ChaCha8Rng::seed_from_u64(3), geoms[0].in_dims);
        let base = run(&spec, &geoms, &plan, &model, std::slice::from_ref(&image), SimOptions::default());
        let b = base.bottleneck_layer;
        let mut omegas = plan.omegas();
        let wider = *synth::omega_choices(geoms[b].out_dims.channels)
            .iter()
            .find(|&&w| w > omegas[b])
            .expect("bottleneck can widen");
        omegas[b] = wider;
        let faster = plan_for(&spec, &geoms, &omegas);
        let r = run(&spec, &geoms, &faster, &model, &[image], SimOptions::default());
        assert!(r.fps_at_clock > base.fps_at_clock, "{}", spec.name);
        checked += 1;
    }
    assert!(checked >= 2, "only {checked} networks had a unique bottleneck");
}

#[test]
fn shipped_networks_match_the_oracle() {
    for name in ["mnist", "cifar10"] {
        let (spec, geoms) = load(name);
        let plan = assign_slrs(&spec, &geoms, &DeviceProfile::vu9p_3slr(), &MapOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = synth::random_quantized_model(&mut rng, &geoms);
        let images: Vec<Image> = (0..2).map(|_| synth::random_image(&mut rng, geoms[0].in_dims)).collect();
        let r = simulate(&spec, &plan, &model, &images, &recorded()).unwrap();
        for (i, img) in images.iter().enumerate() {
            let oracle = reference_inference(&geoms, &model, &img.data).unwrap();
            assert_eq!(r.results[i].class, oracle.class(), "{name} image {i}");
            assert_eq!(&r.results[i].final_potentials, oracle.final_potentials());
            for (a, o) in r.activations[i].iter().zip(&oracle.layers) {
                assert_eq!(a.potentials, o.potentials);
                assert_eq!(a.spikes.to_bools(), o.spikes);
                assert!(a.spikes.padding_clear());
            }
        }
    }
}

#[test]
fn transduction_examples() {
    let geom = LayerGeometry {
        kind: LayerKind::TransductionConv,
        in_dims: Dims::new(1, 1, 1),
        out_dims: Dims::new(1, 1, 2),
        kernel_rows: 1,
        kernel_cols: 1,
        stride: 1,
        pad_top: 0,
        pad_left: 0,
        fan_in: 1,
        beats_per_neuron: 1,
        kappa: 1,
    };
    let mut w = [[0i8; 8]; 2];
    w[0][0] = 3;
    w[1][0] = 3;
    let layer = QuantizedLayer {
        scale: 1.0,
        out_channels: 2,
        beats_per_neuron: 1,
        weights: w.to_vec(),
        thresholds: vec![29, 30],
    };
    let out = transduce(&Image::new(Dims::new(1, 1, 1), vec![10]).unwrap(), &geom, &layer).unwrap();
    // 30 > 29 fires, 30 > 30 does not.
    assert!(out.get(0, 0, 0));
    assert!(!out.get(0, 0, 1));
    assert!(transduce(&Image::zeros(Dims::new(2, 1, 1)), &geom, &layer).is_err());
}

#[test]
fn zero_image_gives_zero_transduction_potentials() {
    let (spec, geoms) = fourteen();
    let plan = plan_for(&spec, &geoms, &[1, 1, 1]);
    let model = synth::random_quantized_model(&mut ChaCha8Rng::seed_from_u64(5), &geoms);
    let r = run(&spec, &geoms, &plan, &model, &[Image::zeros(geoms[0].in_dims)], recorded());
    let first = &r.activations[0][0];
    assert!(first.potentials.iter().all(|&p| p == 0));
    let d = geoms[0].out_dims;
    for row in 0..d.rows {
        for col in 0..d.cols {
            for ch in 0..d.channels {
                assert_eq!(first.spikes.get(row, col, ch), fire(0, model.layers[0].thresholds[ch]));
            }
        }
    }
}

#[test]
fn reports_are_deterministic() {
    let (spec, geoms) = load("cifar100");
    let plan = assign_slrs(&spec, &geoms, &DeviceProfile::vu9p_3slr(), &MapOptions::default()).unwrap();
    let model = synth::random_quantized_model(&mut ChaCha8Rng::seed_from_u64(6), &geoms);
    let image = synth::random_image(&mut ChaCha8Rng::seed_from_u64(7), geoms[0].in_dims);
    let a = serde_json::to_vec(&simulate(&spec, &plan, &model, std::slice::from_ref(&image), &SimOptions::default()).unwrap()).unwrap();
    let b = serde_json::to_vec(&simulate(&spec, &plan, &model, &[image], &SimOptions::default()).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn trace_agrees_with_counters() {
    let (spec, geoms) = load("mnist");
    let plan = assign_slrs(&spec, &geoms, &DeviceProfile::vu9p_3slr(), &MapOptions::default()).unwrap();
    let model = synth::random_quantized_model(&mut ChaCha8Rng::seed_from_u64(8), &geoms);
    let r = run(
        &spec,
        &geoms,
        &plan,
        &model,
        &[Image::zeros(geoms[0].in_dims)],
        SimOptions {
            trace: true,
            ..SimOptions::default()
        },
    );
    let trace = r.trace.as_ref().unwrap();
    assert_eq!(trace.end, r.total_cycles);
    let mut busy = vec![0u64; geoms.len()];
    let mut stalled = vec![0u64; geoms.len()];
    for (i, (start, states)) in trace.changes.iter().enumerate() {
        let stop = trace.changes.get(i + 1).map_or(trace.end, |(c, _)| *c);
        for (l, s) in states.iter().enumerate() {
            match s {
                LayerState::Busy => busy[l] += stop - start,
                LayerState::Stalled => stalled[l] += stop - start,
                LayerState::Idle => {}
            }
        }
    }
    for (l, stats) in r.layers.iter().enumerate() {
        assert_eq!(busy[l], stats.busy_cycles);
        assert_eq!(stalled[l], stats.stalled_cycles);
        assert_eq!(
            stats.busy_cycles + stats.stalled_cycles + stats.idle_cycles,
            r.total_cycles
        );
    }
    let mut csv = Vec::new();
    trace.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count() as u64, r.total_cycles + 1);
}

#[test]
fn mapped_plans_track_the_analytic_model() {
    for name in ["mnist", "cifar10", "cifar100", "tiny-imagenet"] {
        let (spec, geoms) = load(name);
        let plan = assign_slrs(&spec, &geoms, &DeviceProfile::vu9p_3slr(), &MapOptions::default()).unwrap();
        let model = synth::random_quantized_model(&mut ChaCha8Rng::seed_from_u64(9), &geoms);
        let r = run(&spec, &geoms, &plan, &model, &[Image::zeros(geoms[0].in_dims)], SimOptions::default());
        let a = throughput_analytic(&geoms, &plan);
        assert_eq!(r.bottleneck_layer, a.bottleneck_layer, "{name}");
        assert!((r.fps_at_clock - a.fps).abs() <= 0.05 * a.fps, "{name}");
        // Compute lower bound per layer.
        for (stats, m) in r.layers.iter().zip(&plan.layers) {
            let g = &geoms[stats.layer];
            let bound = (g.out_dims.cols * m.neurons_per_unit * g.beats_per_neuron) as u64;
            assert!(stats.busy_cycles >= r.stream_images as u64 * bound);
        }
    }
}

#[test]
fn input_errors() {
    let (spec, geoms) = fourteen();
    let plan = plan_for(&spec, &geoms, &[1, 1, 1]);
    let model = synth::random_quantized_model(&mut ChaCha8Rng::seed_from_u64(10), &geoms);
    let wrong = Image::zeros(Dims::new(13, 14, 1));
    assert!(matches!(
        simulate_with(&spec, &geoms, &plan, &model, &[wrong], &SimOptions::default()),
        Err(SimError::Image { index: 0, .. })
    ));
    let mut short = model.clone();
    short.layers.pop();
    assert!(matches!(
        simulate_with(&spec, &geoms, &plan, &short, &[], &SimOptions::default()),
        Err(SimError::Model(_))
    ));
    let none = SimOptions {
        min_stream_images: 0,
        ..SimOptions::default()
    };
    assert!(matches!(
        simulate_with(&spec, &geoms, &plan, &model, &[], &none),
        Err(SimError::NoImages)
    ));
}

#[test]
fn cycle_cap_reports_controller_state() {
    let (spec, geoms) = fourteen();
    let plan = plan_for(&spec, &geoms, &[1, 1, 1]);
    let model = synth::random_quantized_model(&mut ChaCha8Rng::seed_from_u64(11), &geoms);
    let capped = SimOptions {
        max_cycles: 100,
        ..SimOptions::default()
    };
    match simulate_with(&spec, &geoms, &plan, &model, &[], &capped) {
        Err(e @ SimError::Deadlock { .. }) => {
            let SimError::Deadlock { layers, .. } = &e else { unreachable!() };
            assert_eq!(layers.len(), 3);
            assert!(e.to_string().contains("layer 0: next image"));
        }
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_splits_are_invisible(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = synth::random_network(&mut rng, NetShape::default());
        let geoms = infer_geometry(&spec).unwrap();
        let model = synth::random_quantized_model(&mut rng, &geoms);
        let image = synth::random_image(&mut rng, geoms[0].in_dims);
        let mut layout = synth::random_layout(&mut rng, &geoms);
        layout.allotted_slrs = 3;
        let whole = build_plan(&spec, &geoms, &synth::bench_device(), &layout, &MapOptions::default()).unwrap();
        for (n, w) in layout.omegas.clone().into_iter().enumerate() {
            layout.splits[n] = synth::random_split(&mut rng, w, 3);
        }
        let split = build_plan(&spec, &geoms, &synth::bench_device(), &layout, &MapOptions::default()).unwrap();
        let a = run(&spec, &geoms, &whole, &model, std::slice::from_ref(&image), recorded());
        let b = run(&spec, &geoms, &split, &model, std::slice::from_ref(&image), recorded());
        prop_assert_eq!(&a.activations, &b.activations);
        prop_assert_eq!(&a.results[0].final_spikes, &b.results[0].final_spikes);
    }

    #[test]
    fn stall_free_when_downstream_keeps_up(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = synth::random_network(&mut rng, NetShape::default());
        let geoms = infer_geometry(&spec).unwrap();
        let layout = synth::random_layout(&mut rng, &geoms);
        let plan = build_plan(&spec, &geoms, &synth::bench_device(), &layout, &MapOptions::default()).unwrap();
        let keeps_up = plan.layers.windows(2).all(|p| p[1].service_cycles <= p[0].service_cycles);
        prop_assume!(keeps_up);
        let model = synth::random_quantized_model(&mut rng, &geoms);
        let r = run(&spec, &geoms, &plan, &model, &[Image::zeros(geoms[0].in_dims)], SimOptions::default());
        prop_assert!(r.stalled_layers().is_empty(), "{:?}", r.stalled_layers());
    }

    #[test]
    fn batches_match_single_runs(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = synth::random_network(&mut rng, NetShape::default());
        let geoms = infer_geometry(&spec).unwrap();
        let model = synth::random_quantized_model(&mut rng, &geoms);
        let layout = synth::random_layout(&mut rng, &geoms);
        let plan = build_plan(&spec, &geoms, &synth::bench_device(), &layout, &MapOptions::default()).unwrap();
        let images: Vec<Image> = (0..3).map(|_| synth::random_image(&mut rng, geoms[0].in_dims)).collect();
        let batch = run(&spec, &geoms, &plan, &model, &images, SimOptions::default());
        for (i, img) in images.iter().enumerate() {
            let single = run(&spec, &geoms, &plan, &model, std::slice::from_ref(img), SimOptions::default());
            prop_assert_eq!(&batch.results[i].final_potentials, &single.results[0].final_potentials);
            prop_assert_eq!(batch.results[i].class, single.results[0].class);
        }
    }
}
