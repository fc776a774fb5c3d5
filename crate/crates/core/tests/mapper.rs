use std::path::Path;

use df2_core::mapper::{
    assign_slrs, balance_report, build_plan, dsp_estimate, is_valid_omega,
    memory_blocks_for_layer, valid_omega_set, DeviceProfile, DspModel, MapError, MapOptions,
    MappingPlan, PlanLayout, SlrBudget,
};
use df2_core::netspec::{infer_geometry, LayerGeometry, MemoryKind, NetworkSpec, InputShape};
use df2_core::synth::{self, NetShape};
use df2_core::timing::TimingModel;
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

fn map(name: &str) -> (NetworkSpec, Vec<LayerGeometry>, MappingPlan) {
    let (spec, geoms) = load(name);
    let plan = assign_slrs(&spec, &geoms, &DeviceProfile::vu9p_3slr(), &MapOptions::default()).unwrap();
    (spec, geoms, plan)
}

const SHIPPED: [(&str, usize); 5] = [
    ("mnist", 1),
    ("cifar10", 1),
    ("cifar100", 2),
    ("tiny-imagenet", 2),
    ("imagenet", 3),
];

#[test]
fn omega_set_examples() {
    assert_eq!(valid_omega_set(4), vec![1, 2, 4]);
    assert_eq!(valid_omega_set(20), vec![1, 2, 4, 8, 16]);
    assert_eq!(valid_omega_set(24)[5], 24);
    assert_eq!(valid_omega_set(1), vec![1]);
    for w in 1..200 {
        assert_eq!(is_valid_omega(w), valid_omega_set(w).contains(&w));
    }
}

#[test]
fn smallest_memory_case() {
    let spec = NetworkSpec::from_notation("m", InputShape::new(2, 2, 8), 100.0, &["Conv2-2-8/b1", "Fc-1/b1"]).unwrap();
    let g = infer_geometry(&spec).unwrap();
    let a = memory_blocks_for_layer(&g[1], 1, MemoryKind::Bram, 16).unwrap();
    assert_eq!((a.bytes_per_unit, a.cascade, a.blocks), (12, 1, 1));
    assert_eq!(a.utilization, 12.0 / 4096.0);
    let u = memory_blocks_for_layer(&g[1], 1, MemoryKind::Uram, 64).unwrap();
    assert_eq!(u.utilization, 12.0 / 32768.0);
    assert!(matches!(
        memory_blocks_for_layer(&g[1], 3, MemoryKind::Bram, 16),
        Err(MapError::InvalidOmega { .. })
    ));
}

#[test]
fn cascade_limit_makes_layer_unmappable() {
    let (_, geoms) = load("cifar10");
    // Fc-560 at one unit: 560 neurons of 1028 beats each.
    let fc = &geoms[10];
    assert!(matches!(
        memory_blocks_for_layer(fc, 1, MemoryKind::Uram, 64),
        Err(MapError::Unmappable { cascade, limit: 64, .. }) if cascade > 64
    ));
}

#[test]
fn dsp_examples() {
    let (_, geoms) = load("mnist");
    let d = DspModel::default();
    let mut conv = geoms[2].clone();
    conv.kappa = 3;
    assert_eq!(dsp_estimate(&conv, 2, &d), 12);
    conv.kappa = 1;
    assert_eq!(dsp_estimate(&conv, 1, &d), 2);
    assert_eq!(geoms[0].kappa, 28);
    assert_eq!(dsp_estimate(&geoms[0], 1, &d), 224);
}

#[test]
fn shipped_plans_are_feasible_and_conserve_memory() {
    for (name, slrs) in SHIPPED {
        let (spec, geoms, plan) = map(name);
        assert_eq!(plan.slrs_used(), slrs, "{name}");
        plan.validate(&spec, &geoms).unwrap();
        let budget = plan.device.slr;
        for s in &plan.slrs {
            assert!(s.bram_blocks <= budget.bram_blocks, "{name} slr {}", s.slr);
            assert!(s.uram_blocks <= budget.uram_blocks, "{name} slr {}", s.slr);
            assert!(s.dsp <= budget.dsp_slices, "{name} slr {}", s.slr);
        }
        for (m, g) in plan.layers.iter().zip(&geoms) {
            assert!(is_valid_omega(m.omega) && g.out_dims.channels % m.omega == 0);
            assert_eq!(m.neurons_per_unit * m.omega, g.out_dims.channels);
            // Stored bytes equal the layer's weights and thresholds.
            let bytes = g.out_dims.channels * (g.beats_per_neuron * 8 + 4);
            assert_eq!(m.omega * m.bytes_per_unit, bytes);
            let cap = m.mem_kind.block_bytes() as f64;
            let stored = m.mem_blocks as f64 * cap * m.utilization_per_block;
            assert!((stored - bytes as f64).abs() < 1e-6 * bytes as f64);
            // Shares cover the units and each lands on an allotted SLR.
            assert!(!m.splits.is_empty());
            assert!(m.splits.iter().all(|s| s.units > 0 && s.slr < plan.allotted_slrs));
            assert_eq!(m.splits.iter().map(|s| s.units).sum::<usize>(), m.omega);
            assert_eq!(
                m.splits.iter().map(|s| s.units * m.cascade_used).sum::<usize>(),
                m.mem_blocks
            );
            assert!(m.splits.iter().any(|s| s.slr == m.primary_slr));
            assert!(m.cascade_used <= plan.device.max_cascade.for_kind(m.mem_kind));
        }
    }
}

#[test]
fn per_slr_totals_add_up() {
    for (name, _) in SHIPPED {
        let (_, _, plan) = map(name);
        let mut bram = vec![0u64; plan.device.slr_count];
        let mut uram = vec![0u64; plan.device.slr_count];
        for m in &plan.layers {
            for s in &m.splits {
                let blocks = (s.units * m.cascade_used) as u64;
                match m.mem_kind {
                    MemoryKind::Bram => bram[s.slr] += blocks,
                    MemoryKind::Uram => uram[s.slr] += blocks,
                }
            }
        }
        for s in &plan.slrs {
            assert_eq!(s.bram_blocks, bram[s.slr], "{name}");
            assert_eq!(s.uram_blocks, uram[s.slr], "{name}");
        }
    }
}

#[test]
fn imagenet_splits_its_heavy_layers() {
    let (_, _, plan) = map("imagenet");
    assert!(plan.layers.iter().any(|m| m.is_split()));
    let (_, _, small) = map("cifar10");
    assert!(small.layers.iter().all(|m| !m.is_split()));
}

#[test]
fn mapping_is_deterministic() {
    for (name, _) in SHIPPED {
        let (spec, geoms) = load(name);
        let device = DeviceProfile::vu9p_3slr();
        let a = assign_slrs(&spec, &geoms, &device, &MapOptions::default()).unwrap();
        let b = assign_slrs(&spec, &geoms, &device, &MapOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn split_kernel_balances_cifar100_better_than_layer_wise() {
    let (spec, geoms) = load("cifar100");
    let device = DeviceProfile::vu9p_3slr();
    let split = assign_slrs(&spec, &geoms, &device, &MapOptions::default()).unwrap();
    let whole = assign_slrs(
        &spec,
        &geoms,
        &device,
        &MapOptions {
            allow_split: false,
            ..MapOptions::default()
        },
    )
    .unwrap();
    assert!(whole.layers.iter().all(|m| !m.is_split()));
    assert!(
        balance_report(&split).imbalance_pp < balance_report(&whole).imbalance_pp,
        "{} vs {}",
        balance_report(&split).imbalance_pp,
        balance_report(&whole).imbalance_pp
    );
}

#[test]
fn one_occupied_slr_of_two_scores_its_own_peak() {
    let (spec, geoms) = load("mnist");
    let mapped = assign_slrs(&spec, &geoms, &DeviceProfile::vu9p_3slr(), &MapOptions::default()).unwrap();
    let mut layout = PlanLayout::single_slr(mapped.omegas());
    layout.allotted_slrs = 2;
    let plan = build_plan(&spec, &geoms, &mapped.device, &layout, &MapOptions::default()).unwrap();
    let report = balance_report(&plan);
    assert_eq!(report.slrs.len(), 2);
    let s0 = &report.slrs[0];
    let peak = s0.bram_pct.max(s0.uram_pct).max(s0.dsp_pct);
    assert!((report.imbalance_pp - peak).abs() < 1e-9);

    let single = balance_report(&mapped);
    assert_eq!(single.slrs.len(), 1);
    assert_eq!(single.imbalance_pp, 0.0);
}

#[test]
fn exhausted_device_reports_shortfall() {
    let (spec, geoms) = load("imagenet");
    let mut device = DeviceProfile::vu9p_3slr();
    device.slr_count = 1;
    device.slr = SlrBudget {
        bram_blocks: 100,
        uram_blocks: 20,
        dsp_slices: 100,
        luts: 10_000,
    };
    match assign_slrs(&spec, &geoms, &device, &MapOptions::default()) {
        Err(MapError::DeviceExhausted(s)) => {
            assert!(!s.is_empty());
            assert!(s.iter().all(|s| s.needed > s.available));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn pinned_omegas_are_honoured_or_rejected() {
    let (mut spec, geoms) = load("cifar10");
    spec.layers[3].omega = Some(8);
    let plan = assign_slrs(&spec, &geoms, &DeviceProfile::vu9p_3slr(), &MapOptions::default()).unwrap();
    assert_eq!(plan.layers[3].omega, 8);
    spec.layers[3].omega = Some(3);
    assert!(matches!(
        assign_slrs(&spec, &geoms, &DeviceProfile::vu9p_3slr(), &MapOptions::default()),
        Err(MapError::InvalidOmega { layer: Some(3), .. })
    ));
}

#[test]
fn tampered_plan_fails_validation() {
    let (spec, geoms, mut plan) = map("cifar100");
    plan.layers[2].mem_blocks += 1;
    assert!(plan.validate(&spec, &geoms).is_err());
}

#[test]
fn device_profile_json_round_trip() {
    let d = DeviceProfile::vu9p_3slr();
    assert_eq!(d.slr_count, 3);
    assert_eq!(
        (d.slr.bram_blocks, d.slr.uram_blocks, d.slr.dsp_slices),
        (720, 320, 2280)
    );
    let back: DeviceProfile = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
    assert_eq!(back, d);
    let mut bad = d.clone();
    bad.slr_count = 5;
    assert!(bad.validate().is_err());
    bad.slr_count = 2;
    bad.slr.dsp_slices = 0;
    assert!(bad.validate().is_err());
    assert!(DeviceProfile::resolve("no-such-part", &[]).is_err());
}

proptest! {
    #[test]
    fn wider_layers_never_need_deeper_cascades(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = synth::random_network(&mut rng, NetShape::default());
        let geoms = infer_geometry(&spec).unwrap();
        let t = TimingModel::default();
        for g in &geoms {
            let ch = g.out_dims.channels;
            let mut prev: Option<(usize, u64)> = None;
            for w in synth::omega_choices(ch) {
                let a = memory_blocks_for_layer(g, w, MemoryKind::Bram, usize::MAX).unwrap();
                let service = t.layer_service(g.out_dims.cols, a.neurons_per_unit, g.beats_per_neuron);
                if let Some((cascade, svc)) = prev {
                    prop_assert!(a.cascade <= cascade);
                    prop_assert!(service <= svc);
                }
                prev = Some((a.cascade, service));
            }
        }
    }

    #[test]
    fn random_plans_are_valid(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = synth::random_network(&mut rng, NetShape::default());
        let geoms = infer_geometry(&spec).unwrap();
        if let Ok(plan) = assign_slrs(&spec, &geoms, &DeviceProfile::vu9p_3slr(), &MapOptions::default()) {
            prop_assert!(plan.validate(&spec, &geoms).is_ok());
            prop_assert!(plan.layers.iter().all(|m| is_valid_omega(m.omega)));
        }
    }
}
