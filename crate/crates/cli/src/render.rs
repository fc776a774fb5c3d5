//! Text and CSV renderings. JSON output serializes the core types directly.

use std::fmt::Write as _;

use df2_core::analytic::AnalyticReport;
use df2_core::mapper::{balance_report, MappingPlan, SlrUsage};
use df2_core::netspec::{Diagnostic, NetworkConfig};
use df2_core::pipesim::SimReport;
use serde::Serialize;

use crate::output::RunManifest;

fn csv_rows<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("flat rows serialize");
    }
    w.into_inner().expect("in-memory writer")
}

pub fn diagnostics_text(config: &NetworkConfig, diags: &[Diagnostic]) -> Vec<u8> {
    let mut s = String::new();
    if diags.is_empty() {
        let _ = writeln!(s, "ok: {} ({} layers)", config.name, config.layers.len());
    }
    for d in diags {
        let _ = writeln!(s, "{d}");
    }
    s.into_bytes()
}

#[derive(Serialize)]
struct DiagRow<'a> {
    layer: Option<usize>,
    kind: &'a str,
    message: &'a str,
}

pub fn diagnostics_csv(diags: &[Diagnostic]) -> Vec<u8> {
    let rows = diags.iter().map(|d| DiagRow {
        layer: d.layer,
        kind: d.kind.label(),
        message: &d.message,
    });
    let out = csv_rows(rows);
    if out.is_empty() {
        b"layer,kind,message\n".to_vec()
    } else {
        out
    }
}

fn placement(shares: &[df2_core::mapper::SplitShare]) -> String {
    shares
        .iter()
        .map(|s| format!("{}:{}", s.slr, s.units))
        .collect::<Vec<_>>()
        .join("+")
}

#[derive(Serialize)]
struct PlanRow<'a> {
    layer: usize,
    notation: &'a str,
    omega: usize,
    neurons_per_unit: usize,
    memory: String,
    cascade: usize,
    blocks: usize,
    utilization_pct: f64,
    dsp: u64,
    luts: u64,
    placement: String,
    service_cycles: u64,
}

pub fn plan_csv(plan: &MappingPlan) -> Vec<u8> {
    csv_rows(plan.layers.iter().map(|l| PlanRow {
        layer: l.layer,
        notation: &l.notation,
        omega: l.omega,
        neurons_per_unit: l.neurons_per_unit,
        memory: l.mem_kind.to_string(),
        cascade: l.cascade_used,
        blocks: l.mem_blocks,
        utilization_pct: round2(100.0 * l.utilization_per_block),
        dsp: l.dsp_est,
        luts: l.lut_est,
        placement: placement(&l.splits),
        service_cycles: l.service_cycles,
    }))
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn slr_table(s: &mut String, slrs: &[SlrUsage]) {
    let _ = writeln!(s, "{:<4} {:>7} {:>7} {:>7} {:>7}  layers", "slr", "bram%", "uram%", "dsp%", "lut%");
    for u in slrs {
        let layers: Vec<String> = u.layers.iter().map(ToString::to_string).collect();
        let _ = writeln!(
            s,
            "{:<4} {:>7.1} {:>7.1} {:>7.1} {:>7.1}  {}",
            u.slr,
            u.bram_pct,
            u.uram_pct,
            u.dsp_pct,
            u.lut_pct,
            layers.join(",")
        );
    }
}

pub fn plan_text(plan: &MappingPlan) -> Vec<u8> {
    let mut s = String::new();
    let pace = plan.max_service();
    let _ = writeln!(
        s,
        "{} on {}: {} of {} SLRs, {} MHz",
        plan.network, plan.device.name, plan.allotted_slrs, plan.device.slr_count, plan.clock_mhz
    );
    let _ = writeln!(
        s,
        "slowest layer {} cycles/image ({:.1} kFPS), imbalance {:.1} pp\n",
        pace,
        plan.clock_mhz * 1e3 / pace as f64,
        plan.imbalance_pp
    );
    let _ = writeln!(
        s,
        "{:>3}  {:<18} {:>5} {:>6} {:>4} {:>6} {:>6} {:>6}  {:<12} {:>8}",
        "#", "layer", "omega", "n/unit", "mem", "blocks", "util%", "dsp", "slr:units", "service"
    );
    for l in &plan.layers {
        let _ = writeln!(
            s,
            "{:>3}  {:<18} {:>5} {:>6} {:>4} {:>6} {:>6.1} {:>6}  {:<12} {:>8}",
            l.layer,
            l.notation,
            l.omega,
            l.neurons_per_unit,
            l.mem_kind,
            l.mem_blocks,
            100.0 * l.utilization_per_block,
            l.dsp_est,
            placement(&l.splits),
            l.service_cycles
        );
    }
    s.push('\n');
    slr_table(&mut s, &balance_report(plan).slrs);
    s.into_bytes()
}

#[derive(Serialize)]
struct SimRow<'a> {
    layer: usize,
    notation: &'a str,
    busy_cycles: u64,
    stalled_cycles: u64,
    idle_cycles: u64,
    columns: u64,
    column_cycles: u64,
    latency_cycles: u64,
    service_cycles: u64,
    split_sources: usize,
}

pub fn sim_csv(r: &SimReport) -> Vec<u8> {
    csv_rows(r.layers.iter().map(|l| SimRow {
        layer: l.layer,
        notation: &l.notation,
        busy_cycles: l.busy_cycles,
        stalled_cycles: l.stalled_cycles,
        idle_cycles: l.idle_cycles,
        columns: l.columns,
        column_cycles: l.column_cycles,
        latency_cycles: l.latency_cycles,
        service_cycles: l.service_cycles,
        split_sources: l.split_sources,
    }))
}

pub fn sim_text(r: &SimReport) -> Vec<u8> {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{}: {} image(s), {} simulated, {} MHz",
        r.network, r.images, r.stream_images, r.clock_mhz
    );
    let _ = writeln!(
        s,
        "steady state {} cycles/image, fill {} cycles, {:.2} kFPS, {:.1} GOPS",
        r.steady_state_cycles_per_image,
        r.fill_latency_cycles,
        r.fps_at_clock / 1e3,
        r.gops
    );
    let _ = writeln!(s, "bottleneck layer {}\n", r.bottleneck_layer);
    let _ = writeln!(s, "{:>3}  {:<18} {:>10} {:>10} {:>10}", "#", "layer", "busy", "stalled", "idle");
    for l in &r.layers {
        let _ = writeln!(
            s,
            "{:>3}  {:<18} {:>10} {:>10} {:>10}",
            l.layer, l.notation, l.busy_cycles, l.stalled_cycles, l.idle_cycles
        );
    }
    s.push('\n');
    for img in &r.results {
        let _ = writeln!(s, "image {}: class {}", img.index, img.class);
    }
    s.into_bytes()
}

#[derive(Debug, Serialize)]
pub struct ReportLayer {
    pub layer: usize,
    pub notation: String,
    pub omega: usize,
    pub placement: String,
    pub service_cycles: u64,
    pub busy_cycles: u64,
    pub stalled_cycles: u64,
    pub idle_cycles: u64,
    pub backpressure_risk: bool,
}

#[derive(Debug, Serialize)]
pub struct Report<'a> {
    pub manifest: &'a RunManifest,
    pub network: String,
    pub device: String,
    pub clock_mhz: f64,
    pub slrs_used: usize,
    pub images: usize,
    pub steady_state_cycles_per_image: u64,
    pub fill_latency_cycles: u64,
    pub fps: f64,
    pub kfps: f64,
    pub ops_per_image: u64,
    pub gops: f64,
    pub analytic_cycles_per_image: u64,
    pub analytic_fps: f64,
    pub analytic_error_pct: f64,
    pub bottleneck_layer: usize,
    pub analytic_bottleneck_layer: usize,
    pub imbalance_pp: f64,
    pub slrs: Vec<SlrUsage>,
    pub layers: Vec<ReportLayer>,
    pub classes: Vec<usize>,
}

impl<'a> Report<'a> {
    pub fn build(
        manifest: &'a RunManifest,
        plan: &MappingPlan,
        sim: &SimReport,
        analytic: &AnalyticReport,
    ) -> Self {
        let balance = balance_report(plan);
        let layers = plan
            .layers
            .iter()
            .zip(&sim.layers)
            .zip(&analytic.layers)
            .map(|((m, s), a)| ReportLayer {
                layer: m.layer,
                notation: m.notation.clone(),
                omega: m.omega,
                placement: placement(&m.splits),
                service_cycles: a.service_cycles,
                busy_cycles: s.busy_cycles,
                stalled_cycles: s.stalled_cycles,
                idle_cycles: s.idle_cycles,
                backpressure_risk: a.backpressure_risk,
            })
            .collect();
        let err = if sim.fps_at_clock > 0.0 {
            100.0 * (analytic.fps - sim.fps_at_clock) / sim.fps_at_clock
        } else {
            0.0
        };
        Report {
            manifest,
            network: plan.network.clone(),
            device: plan.device.name.clone(),
            clock_mhz: plan.clock_mhz,
            slrs_used: plan.slrs_used(),
            images: sim.images,
            steady_state_cycles_per_image: sim.steady_state_cycles_per_image,
            fill_latency_cycles: sim.fill_latency_cycles,
            fps: sim.fps_at_clock,
            kfps: sim.fps_at_clock / 1e3,
            ops_per_image: sim.ops_per_image,
            gops: sim.gops,
            analytic_cycles_per_image: analytic.cycles_per_image,
            analytic_fps: analytic.fps,
            analytic_error_pct: err,
            bottleneck_layer: sim.bottleneck_layer,
            analytic_bottleneck_layer: analytic.bottleneck_layer,
            imbalance_pp: balance.imbalance_pp,
            slrs: balance.slrs,
            layers,
            classes: sim.results.iter().map(|r| r.class).collect(),
        }
    }
}

pub fn report_csv(r: &Report<'_>) -> Vec<u8> {
    csv_rows(&r.layers)
}

pub fn report_text(r: &Report<'_>) -> Vec<u8> {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} on {} ({} SLR(s) used), {} MHz",
        r.network, r.device, r.slrs_used, r.clock_mhz
    );
    let _ = writeln!(
        s,
        "throughput  {:.2} kFPS simulated, {:.2} kFPS analytic ({:+.2}%)",
        r.kfps,
        r.analytic_fps / 1e3,
        r.analytic_error_pct
    );
    let _ = writeln!(
        s,
        "cycles      {} per image steady state, {} fill latency",
        r.steady_state_cycles_per_image, r.fill_latency_cycles
    );
    let _ = writeln!(s, "work        {} ops/image, {:.1} GOPS", r.ops_per_image, r.gops);
    let _ = writeln!(
        s,
        "bottleneck  layer {} (analytic: layer {})",
        r.bottleneck_layer, r.analytic_bottleneck_layer
    );
    let _ = writeln!(s, "imbalance   {:.1} pp\n", r.imbalance_pp);
    slr_table(&mut s, &r.slrs);
    let _ = writeln!(
        s,
        "\n{:>3}  {:<18} {:>5} {:<10} {:>9} {:>10} {:>10} {:>10}  flag",
        "#", "layer", "omega", "slr:units", "service", "busy", "stalled", "idle"
    );
    for l in &r.layers {
        let _ = writeln!(
            s,
            "{:>3}  {:<18} {:>5} {:<10} {:>9} {:>10} {:>10} {:>10}  {}",
            l.layer,
            l.notation,
            l.omega,
            l.placement,
            l.service_cycles,
            l.busy_cycles,
            l.stalled_cycles,
            l.idle_cycles,
            if l.backpressure_risk { "slower than input" } else { "" }
        );
    }
    s.into_bytes()
}
