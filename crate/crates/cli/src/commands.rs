use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use df2_core::analytic::throughput_analytic;
use df2_core::mapper::{
    assign_slrs, balance_report, DeviceProfile, MapOptions, MappingPlan, DEFAULT_DEVICE,
};
use df2_core::netspec::{
    infer_geometry, validate_config, validate_network, LayerGeometry, NetworkConfig, NetworkSpec,
};
use df2_core::oracle::reference_inference;
use df2_core::pipesim::{simulate_with, Image, SimOptions};
use df2_core::quantizer::{deserialize_params, quantize_model, serialize_params, FloatModel, QuantizedModel};
use df2_core::synth;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::images::load_images;
use crate::output::{emit, sha256_hex, to_json, RunManifest};
use crate::render;
use crate::{Common, Format, QuantizeArgs, SimArgs};

#[derive(Debug)]
pub struct Failure {
    pub stage: Option<&'static str>,
    pub message: String,
    pub details: Vec<String>,
}

impl Failure {
    fn new(stage: &'static str, message: impl Display) -> Self {
        Failure {
            stage: Some(stage),
            message: message.to_string(),
            details: Vec::new(),
        }
    }
}

fn at<E: Display>(stage: &'static str) -> impl FnOnce(E) -> Failure {
    move |e| Failure::new(stage, e)
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::new("io", format!("cannot read {}: {e}", path.display())))
}

fn write(path: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    emit(path, bytes).map_err(|e| {
        let target = path.map_or("stdout".to_string(), |p| p.display().to_string());
        Failure::new("io", format!("cannot write {target}: {e}"))
    })
}

/// A validated network with its device, ready to map.
struct Prepared {
    spec: NetworkSpec,
    geoms: Vec<LayerGeometry>,
    device: DeviceProfile,
    manifest: RunManifest,
}

fn search_dirs(common: &Common) -> Vec<PathBuf> {
    let mut dirs = common.profile_dir.clone();
    if let Some(parent) = common.config.parent() {
        dirs.push(parent.to_path_buf());
    }
    dirs
}

fn prepare(command: &str, common: &Common, omegas_from_params: Option<&[usize]>) -> Result<Prepared, Failure> {
    let bytes = read(&common.config)?;
    let config: NetworkConfig = serde_json::from_slice(&bytes).map_err(at("check"))?;
    let diags = validate_config(&config);
    if !diags.is_empty() {
        return Err(Failure {
            stage: Some("check"),
            message: format!("{} has {} problem(s)", common.config.display(), diags.len()),
            details: diags.iter().map(ToString::to_string).collect(),
        });
    }
    let mut spec = config.to_spec().map_err(at("check"))?;
    if let Some(mhz) = common.clock_mhz {
        if !(mhz.is_finite() && mhz > 0.0) {
            return Err(Failure::new("check", format!("clock {mhz} MHz must be positive")));
        }
        spec.clock_mhz = mhz;
    }
    let mut overrides = BTreeMap::new();
    if let Some(omegas) = omegas_from_params {
        if omegas.len() != spec.layers.len() {
            return Err(Failure::new(
                "params",
                format!("parameter file has {} layers, network has {}", omegas.len(), spec.layers.len()),
            ));
        }
        for (layer, &w) in spec.layers.iter_mut().zip(omegas) {
            layer.omega = Some(w);
        }
    }
    for o in &common.omega {
        let Some(layer) = spec.layers.get_mut(o.layer) else {
            return Err(Failure::new(
                "check",
                format!("--omega names layer {}, network has {}", o.layer, spec.layers.len()),
            ));
        };
        if omegas_from_params.is_some() && layer.omega != Some(o.omega) {
            return Err(Failure::new(
                "params",
                format!(
                    "--omega {}={} disagrees with the parameter file ({})",
                    o.layer,
                    o.omega,
                    layer.omega.unwrap_or(0)
                ),
            ));
        }
        layer.omega = Some(o.omega);
        overrides.insert(o.layer, o.omega);
    }
    let diags = validate_network(&spec);
    if !diags.is_empty() {
        return Err(Failure {
            stage: Some("check"),
            message: format!("{} problem(s) after overrides", diags.len()),
            details: diags.iter().map(ToString::to_string).collect(),
        });
    }
    let dirs = search_dirs(common);
    let device = match (&common.device, &spec.device) {
        (Some(name), _) => DeviceProfile::resolve(name, &dirs),
        (None, Some(r)) => r.resolve(&dirs),
        (None, None) => DeviceProfile::resolve(DEFAULT_DEVICE, &dirs),
    }
    .map_err(at("device"))?;
    let geoms = infer_geometry(&spec).map_err(at("check"))?;
    let manifest = RunManifest {
        command: command.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: common.config.display().to_string(),
        config_sha256: sha256_hex(&bytes),
        device: device.name.clone(),
        device_sha256: sha256_hex(&serde_json::to_vec(&device).expect("profile serializes")),
        clock_mhz: spec.clock_mhz,
        omega_overrides: overrides,
        params: None,
        params_sha256: None,
        images: None,
        images_sha256: None,
        seed: None,
        limit: None,
    };
    Ok(Prepared {
        spec,
        geoms,
        device,
        manifest,
    })
}

fn map_plan(p: &Prepared, common: &Common) -> Result<MappingPlan, Failure> {
    let options = MapOptions {
        allow_split: !common.no_split,
        ..MapOptions::default()
    };
    assign_slrs(&p.spec, &p.geoms, &p.device, &options).map_err(at("map"))
}

pub fn check(common: &Common) -> Result<ExitCode, Failure> {
    let bytes = read(&common.config)?;
    let config: NetworkConfig = serde_json::from_slice(&bytes).map_err(at("check"))?;
    let diags = validate_config(&config);
    let out = match common.format.unwrap_or(Format::Text) {
        Format::Json => to_json(&serde_json::json!({
            "config": common.config.display().to_string(),
            "network": config.name,
            "valid": diags.is_empty(),
            "diagnostics": diags,
        })),
        Format::Csv => render::diagnostics_csv(&diags),
        Format::Text => render::diagnostics_text(&config, &diags),
    };
    write(common.out.as_deref(), &out)?;
    Ok(if diags.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

#[derive(Serialize)]
struct MapDoc<'a> {
    manifest: &'a RunManifest,
    plan: &'a MappingPlan,
    balance: df2_core::mapper::BalanceReport,
}

pub fn map(common: &Common) -> Result<ExitCode, Failure> {
    let p = prepare("map", common, None)?;
    let plan = map_plan(&p, common)?;
    let out = match common.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&MapDoc {
            manifest: &p.manifest,
            plan: &plan,
            balance: balance_report(&plan),
        }),
        Format::Csv => render::plan_csv(&plan),
        Format::Text => render::plan_text(&plan),
    };
    write(common.out.as_deref(), &out)?;
    Ok(ExitCode::SUCCESS)
}

pub fn quantize(args: &QuantizeArgs) -> Result<ExitCode, Failure> {
    let common = &args.common;
    let Some(out_path) = common.out.as_deref() else {
        return Err(Failure::new("quantize", "--out is required for the binary parameter file"));
    };
    let mut p = prepare("quantize", common, None)?;
    let plan = map_plan(&p, common)?;
    let float = match (&args.params, args.seed) {
        (Some(path), _) => {
            let bytes = read(path)?;
            p.manifest.params = Some(path.display().to_string());
            p.manifest.params_sha256 = Some(sha256_hex(&bytes));
            serde_json::from_slice::<FloatModel>(&bytes).map_err(at("params"))?
        }
        (None, Some(seed)) => {
            p.manifest.seed = Some(seed);
            synth::random_float_model(&mut ChaCha8Rng::seed_from_u64(seed), &p.geoms)
        }
        (None, None) => return Err(Failure::new("quantize", "give --params or --seed")),
    };
    let model = quantize_model(&float, &p.geoms).map_err(at("quantize"))?;
    let bytes = serialize_params(&model, &plan).map_err(at("quantize"))?;
    write(Some(out_path), &bytes)?;
    let summary = serde_json::json!({
        "manifest": p.manifest,
        "out": out_path.display().to_string(),
        "bytes": bytes.len(),
        "sha256": sha256_hex(&bytes),
        "omegas": plan.omegas(),
    });
    match common.format.unwrap_or(Format::Text) {
        Format::Json => write(None, &to_json(&summary))?,
        _ => println!(
            "wrote {} bytes ({} layers) to {}",
            bytes.len(),
            model.layers.len(),
            out_path.display()
        ),
    }
    Ok(ExitCode::SUCCESS)
}

/// Everything a simulation needs, with the manifest filled in.
struct Loaded {
    prepared: Prepared,
    plan: MappingPlan,
    model: QuantizedModel,
    images: Vec<Image>,
}

fn load_for_sim(command: &str, args: &SimArgs) -> Result<Loaded, Failure> {
    let common = &args.common;
    let params = match &args.params {
        Some(path) => {
            let bytes = read(path)?;
            let file = deserialize_params(&bytes).map_err(at("params"))?;
            Some((path.display().to_string(), sha256_hex(&bytes), file))
        }
        None => None,
    };
    let mut p = prepare(command, common, params.as_ref().map(|(_, _, f)| f.omegas.as_slice()))?;
    p.manifest.seed = Some(args.seed);
    p.manifest.limit = args.limit;
    let plan = map_plan(&p, common)?;
    let model = match params {
        Some((path, hash, file)) => {
            p.manifest.params = Some(path);
            p.manifest.params_sha256 = Some(hash);
            file.model.check(&p.geoms).map_err(at("params"))?;
            file.model
        }
        None => synth::random_quantized_model(&mut ChaCha8Rng::seed_from_u64(args.seed), &p.geoms),
    };
    let dims = p.geoms[0].in_dims;
    let images = match &args.images {
        Some(path) => {
            p.manifest.images = Some(path.display().to_string());
            p.manifest.images_sha256 = Some(sha256_hex(&read(path)?));
            load_images(path, dims, args.limit).map_err(at("images"))?
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            rng.set_stream(1);
            (0..args.limit.unwrap_or(1))
                .map(|_| synth::random_image(&mut rng, dims))
                .collect()
        }
    };
    if images.is_empty() {
        return Err(Failure::new("images", "no images to simulate"));
    }
    Ok(Loaded {
        prepared: p,
        plan,
        model,
        images,
    })
}

fn run_sim(l: &Loaded, trace: bool) -> Result<df2_core::pipesim::SimReport, Failure> {
    let p = &l.prepared;
    let options = SimOptions {
        trace,
        ..SimOptions::default()
    };
    simulate_with(&p.spec, &p.geoms, &l.plan, &l.model, &l.images, &options).map_err(at("sim"))
}

fn write_trace(path: Option<&Path>, report: &df2_core::pipesim::SimReport) -> Result<(), Failure> {
    if let (Some(path), Some(trace)) = (path, &report.trace) {
        let mut csv = Vec::new();
        trace.write_csv(&mut csv).expect("writing to memory");
        write(Some(path), &csv)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SimDoc<'a> {
    manifest: &'a RunManifest,
    report: &'a df2_core::pipesim::SimReport,
}

pub fn sim(args: &SimArgs) -> Result<ExitCode, Failure> {
    let loaded = load_for_sim("sim", args)?;
    let report = run_sim(&loaded, args.trace.is_some())?;
    write_trace(args.trace.as_deref(), &report)?;
    let manifest = &loaded.prepared.manifest;
    let out = match args.common.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&SimDoc {
            manifest,
            report: &report,
        }),
        Format::Csv => render::sim_csv(&report),
        Format::Text => render::sim_text(&report),
    };
    write(args.common.out.as_deref(), &out)?;
    Ok(ExitCode::SUCCESS)
}

pub fn report(args: &SimArgs) -> Result<ExitCode, Failure> {
    let loaded = load_for_sim("report", args)?;
    let sim = run_sim(&loaded, args.trace.is_some())?;
    write_trace(args.trace.as_deref(), &sim)?;
    let analytic = throughput_analytic(&loaded.prepared.geoms, &loaded.plan);
    let doc = render::Report::build(&loaded.prepared.manifest, &loaded.plan, &sim, &analytic);
    let out = match args.common.format.unwrap_or(Format::Text) {
        Format::Json => to_json(&doc),
        Format::Csv => render::report_csv(&doc),
        Format::Text => render::report_text(&doc),
    };
    write(args.common.out.as_deref(), &out)?;
    Ok(ExitCode::SUCCESS)
}

pub fn oracle(args: &SimArgs) -> Result<ExitCode, Failure> {
    let loaded = load_for_sim("oracle", args)?;
    let geoms = &loaded.prepared.geoms;
    let mut results = Vec::with_capacity(loaded.images.len());
    for (index, img) in loaded.images.iter().enumerate() {
        let acts = reference_inference(geoms, &loaded.model, &img.data).map_err(at("oracle"))?;
        results.push(serde_json::json!({
            "index": index,
            "class": acts.class(),
            "final_potentials": acts.final_potentials(),
            "spike_counts": acts.layers.iter().map(|l| l.spikes.iter().filter(|&&s| s).count()).collect::<Vec<_>>(),
        }));
    }
    let doc = serde_json::json!({ "manifest": loaded.prepared.manifest, "results": results });
    write(args.common.out.as_deref(), &to_json(&doc))?;
    Ok(ExitCode::SUCCESS)
}
