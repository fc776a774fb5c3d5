//! Weight-unit sizing and SLR packing.
//!
//! Every layer gets the smallest legal ω whose analytic service meets a
//! per-image cycle target. Layers are then packed into SLRs, starting from
//! the best contiguous partitions and improving them one layer at a time
//! (whole, two-way, thirds, three-way splits).

use std::cmp::Ordering;

use super::{
    build_plan, memory_blocks_for_layer, valid_omega_set, DeviceProfile, MapError, MapOptions,
    MappingPlan, PlanLayout, Shortfall, SplitShare, ThroughputHint,
};
use crate::netspec::{LayerGeometry, LayerKind, MemoryKind, NetworkSpec};

const RESOURCES: [&str; 3] = ["BRAM", "URAM", "DSP"];
/// Imbalance charged per extra share of a split layer; keeps splits for
/// layers that actually need them.
const SPLIT_PENALTY_PP: f64 = 0.5;
const MAX_PASSES: usize = 50;

#[derive(Debug, Clone, Copy)]
struct Candidate {
    omega: usize,
    service: u64,
    /// BRAM, URAM and DSP per weight unit.
    unit: [u64; 3],
}

fn layer_candidates(
    spec: &NetworkSpec,
    geoms: &[LayerGeometry],
    device: &DeviceProfile,
    options: &MapOptions,
) -> Result<Vec<Vec<Candidate>>, MapError> {
    let mut all = Vec::with_capacity(geoms.len());
    for (idx, (layer, geom)) in spec.layers.iter().zip(geoms).enumerate() {
        let kind = layer.spec.memory;
        let limit = device.max_cascade.for_kind(kind);
        let out_ch = geom.out_dims.channels;
        let mut cands = Vec::new();
        let mut first_err = None;
        let wanted: Vec<usize> = match layer.omega {
            Some(w) => vec![w],
            None => valid_omega_set(out_ch)
                .into_iter()
                .filter(|w| out_ch % w == 0)
                .collect(),
        };
        for omega in wanted {
            match memory_blocks_for_layer(geom, omega, kind, limit) {
                Ok(mem) => {
                    let per_core = match geom.kind {
                        LayerKind::TransductionConv => device.dsp_model.mul_per_core,
                        _ => device.dsp_model.add_per_core,
                    };
                    let mut unit = [0, 0, geom.kappa as u64 * per_core];
                    match kind {
                        MemoryKind::Bram => unit[0] = mem.cascade as u64,
                        MemoryKind::Uram => unit[1] = mem.cascade as u64,
                    }
                    cands.push(Candidate {
                        omega,
                        service: options.timing.layer_service(
                            geom.out_dims.cols,
                            mem.neurons_per_unit,
                            geom.beats_per_neuron,
                        ),
                        unit,
                    });
                }
                Err(e) => {
                    first_err.get_or_insert(e.at(idx));
                }
            }
        }
        if cands.is_empty() {
            return Err(first_err.expect("at least omega 1 was tried"));
        }
        all.push(cands);
    }
    Ok(all)
}

/// Smallest ω meeting `target`, or the fastest available.
fn choose(cands: &[Vec<Candidate>], target: u64) -> Vec<Candidate> {
    cands
        .iter()
        .map(|c| {
            *c.iter()
                .find(|c| c.service <= target)
                .unwrap_or_else(|| c.last().expect("non-empty"))
        })
        .collect()
}

fn totals(chosen: &[Candidate]) -> [u64; 3] {
    let mut t = [0; 3];
    for c in chosen {
        for (r, v) in t.iter_mut().enumerate() {
            *v += c.unit[r] * c.omega as u64;
        }
    }
    t
}

fn lower_bound_slrs(chosen: &[Candidate], budget: [u64; 3]) -> usize {
    let t = totals(chosen);
    (0..3)
        .map(|r| t[r].div_ceil(budget[r]) as usize)
        .max()
        .unwrap_or(1)
        .max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct Cost {
    /// Percentage points above 100%, summed over SLRs and resources.
    over: f64,
    /// Imbalance score plus the split penalty.
    spread: f64,
    /// Squared deviation from the mean, a tie-breaker that favours evening out.
    deviation: f64,
}

impl Cost {
    fn better_than(&self, other: &Cost) -> bool {
        self.partial_cmp(other) == Some(Ordering::Less)
    }
}

struct Packer<'a> {
    chosen: &'a [Candidate],
    n: usize,
    budget: [u64; 3],
    allow_split: bool,
}

struct State {
    loads: Vec<[u64; 3]>,
    extra_shares: usize,
    splits: Vec<Vec<SplitShare>>,
}

impl Packer<'_> {
    fn options(&self, omega: usize) -> Vec<Vec<SplitShare>> {
        let n = self.n;
        let share = |slr, units| SplitShare { slr, units };
        let mut opts: Vec<Vec<SplitShare>> = (0..n).map(|s| vec![share(s, omega)]).collect();
        if !self.allow_split || n < 2 || omega < 2 {
            return opts;
        }
        let half = omega / 2;
        let major = (2 * omega + 1) / 3;
        for a in 0..n {
            for b in (0..n).filter(|&b| b != a) {
                opts.push(vec![share(a, half), share(b, omega - half)]);
            }
        }
        if omega >= 3 && major != half && major < omega {
            for a in 0..n {
                for b in (0..n).filter(|&b| b != a) {
                    opts.push(vec![share(a, major), share(b, omega - major)]);
                }
            }
        }
        if n >= 3 && omega >= 3 {
            let q = omega / 3;
            let sizes = [omega - 2 * q, q, q];
            for a in 0..n {
                for b in (0..n).filter(|&b| b != a) {
                    for c in (0..n).filter(|&c| c != a && c != b) {
                        opts.push(vec![share(a, sizes[0]), share(b, sizes[1]), share(c, sizes[2])]);
                    }
                }
            }
        }
        opts
    }

    fn cost(&self, loads: &[[u64; 3]], extra_shares: usize) -> Cost {
        let n = self.n as f64;
        let mut over = 0.0;
        let mut imbalance: f64 = 0.0;
        let mut deviation = 0.0;
        for r in 0..3 {
            let pcts: Vec<f64> = loads
                .iter()
                .map(|l| 100.0 * l[r] as f64 / self.budget[r] as f64)
                .collect();
            let max = pcts.iter().copied().fold(f64::MIN, f64::max);
            let min = pcts.iter().copied().fold(f64::MAX, f64::min);
            let mean = pcts.iter().sum::<f64>() / n;
            imbalance = imbalance.max(max - min);
            for p in &pcts {
                over += (p - 100.0).max(0.0);
                deviation += (p - mean) * (p - mean);
            }
        }
        Cost {
            over,
            spread: imbalance + SPLIT_PENALTY_PP * extra_shares as f64,
            deviation,
        }
    }

    fn apply(&self, state: &mut State, layer: usize, shares: &[SplitShare], add: bool) {
        let unit = self.chosen[layer].unit;
        for s in shares {
            for r in 0..3 {
                let v = unit[r] * s.units as u64;
                if add {
                    state.loads[s.slr][r] += v;
                } else {
                    state.loads[s.slr][r] -= v;
                }
            }
        }
        if add {
            state.extra_shares += shares.len() - 1;
        } else {
            state.extra_shares -= shares.len() - 1;
        }
    }

    fn state_for(&self, splits: Vec<Vec<SplitShare>>) -> State {
        let mut state = State {
            loads: vec![[0; 3]; self.n],
            extra_shares: 0,
            splits: Vec::new(),
        };
        for (i, s) in splits.iter().enumerate() {
            self.apply(&mut state, i, s, true);
        }
        state.splits = splits;
        state
    }

    /// Whole-layer contiguous partitions, best first.
    fn contiguous_starts(&self, keep: usize) -> Vec<Vec<Vec<SplitShare>>> {
        let layers = self.chosen.len();
        let whole = |slr_of: &dyn Fn(usize) -> usize| -> Vec<Vec<SplitShare>> {
            (0..layers)
                .map(|i| {
                    vec![SplitShare {
                        slr: slr_of(i),
                        units: self.chosen[i].omega,
                    }]
                })
                .collect()
        };
        if self.n == 1 || layers < self.n {
            let n = self.n;
            return vec![whole(&|i| i.min(n - 1))];
        }
        let mut scored: Vec<(Cost, Vec<Vec<SplitShare>>)> = Vec::new();
        let mut cuts: Vec<usize> = (1..self.n).collect();
        loop {
            let splits = whole(&|i| cuts.iter().filter(|&&c| c <= i).count());
            let st = self.state_for(splits);
            scored.push((self.cost(&st.loads, 0), st.splits));
            if !next_combination(&mut cuts, layers - 1) {
                break;
            }
        }
        // Stable sort keeps enumeration order among equal costs.
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
        scored.into_iter().take(keep.max(1)).map(|(_, s)| s).collect()
    }

    fn improve(&self, start: Vec<Vec<SplitShare>>) -> (Cost, Vec<Vec<SplitShare>>) {
        let mut state = self.state_for(start);
        let mut current = self.cost(&state.loads, state.extra_shares);
        let all_options: Vec<Vec<Vec<SplitShare>>> =
            self.chosen.iter().map(|c| self.options(c.omega)).collect();
        for _ in 0..MAX_PASSES {
            let mut changed = false;
            for layer in 0..self.chosen.len() {
                let original = state.splits[layer].clone();
                self.apply(&mut state, layer, &original, false);
                let mut best: Option<&Vec<SplitShare>> = None;
                for opt in &all_options[layer] {
                    self.apply(&mut state, layer, opt, true);
                    let c = self.cost(&state.loads, state.extra_shares);
                    self.apply(&mut state, layer, opt, false);
                    if c.better_than(&current) {
                        current = c;
                        best = Some(opt);
                    }
                }
                let chosen = best.cloned().unwrap_or(original);
                if best.is_some() {
                    changed = true;
                }
                self.apply(&mut state, layer, &chosen, true);
                state.splits[layer] = chosen;
            }
            if !changed {
                break;
            }
        }
        (current, state.splits)
    }

    fn pack(&self, starts: usize) -> (Cost, Vec<Vec<SplitShare>>) {
        let mut best: Option<(Cost, Vec<Vec<SplitShare>>)> = None;
        for start in self.contiguous_starts(starts) {
            let cand = self.improve(start);
            if best.as_ref().map_or(true, |b| cand.0.better_than(&b.0)) {
                best = Some(cand);
            }
        }
        best.expect("at least one start")
    }
}

/// Advances `c` (strictly increasing values in `1..=max`) to the next
/// combination in lexicographic order.
fn next_combination(c: &mut [usize], max: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < max - (k - 1 - i) {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

struct Packed {
    chosen: Vec<Candidate>,
    splits: Vec<Vec<SplitShare>>,
    n: usize,
    target: u64,
    imbalance: f64,
}

fn try_pack(
    chosen: Vec<Candidate>,
    n: usize,
    budget: [u64; 3],
    options: &MapOptions,
    target: u64,
) -> Option<Packed> {
    let packer = Packer {
        chosen: &chosen,
        n,
        budget,
        allow_split: options.allow_split,
    };
    let (cost, splits) = packer.pack(options.search_starts);
    if cost.over > 0.0 {
        return None;
    }
    let state = packer.state_for(splits);
    let imbalance = packer.cost(&state.loads, 0).spread;
    Some(Packed {
        splits: state.splits,
        chosen,
        n,
        target,
        imbalance,
    })
}

fn shortfall(chosen: &[Candidate], device: &DeviceProfile, budget: [u64; 3]) -> Vec<Shortfall> {
    let t = totals(chosen);
    let all: Vec<Shortfall> = (0..3)
        .map(|r| Shortfall {
            resource: RESOURCES[r].to_string(),
            needed: t[r],
            available: budget[r] * device.slr_count as u64,
        })
        .collect();
    let short: Vec<Shortfall> = all.iter().filter(|s| s.needed > s.available).cloned().collect();
    // Totals can fit while no per-SLR packing does; then report everything.
    if short.is_empty() {
        all
    } else {
        short
    }
}

/// Sizes every layer and places it on the device. Deterministic for equal
/// inputs.
pub fn assign_slrs(
    spec: &NetworkSpec,
    geoms: &[LayerGeometry],
    device: &DeviceProfile,
    options: &MapOptions,
) -> Result<MappingPlan, MapError> {
    device
        .validate()
        .map_err(|e| MapError::InvalidPlan(e.to_string()))?;
    if geoms.len() != spec.layers.len() || geoms.is_empty() {
        return Err(MapError::Mismatch(format!(
            "{} layers but {} geometries",
            spec.layers.len(),
            geoms.len()
        )));
    }
    let cands = layer_candidates(spec, geoms, device, options)?;
    let budget = [
        device.slr.bram_blocks,
        device.slr.uram_blocks,
        device.slr.dsp_slices,
    ];
    let packed = match options.hint {
        ThroughputHint::TargetCycles(target) => {
            let chosen = choose(&cands, target);
            let lb = lower_bound_slrs(&chosen, budget);
            (lb..=device.slr_count)
                .find_map(|n| try_pack(chosen.clone(), n, budget, options, target))
                .ok_or_else(|| MapError::DeviceExhausted(shortfall(&chosen, device, budget)))?
        }
        ThroughputHint::Auto => auto_pack(&cands, device, budget, options)?,
    };
    let layout = PlanLayout {
        omegas: packed.chosen.iter().map(|c| c.omega).collect(),
        splits: packed.splits,
        allotted_slrs: packed.n,
        target_cycles: packed.target,
    };
    let plan = build_plan(spec, geoms, device, &layout, options)?;
    debug_assert!((plan.imbalance_pp - packed.imbalance).abs() < 1e-9);
    Ok(plan)
}

/// Fastest pace that packs into the fewest SLRs. The transduction layer is
/// held at its smallest ω (its cores are the most DSP-hungry), which sets
/// the fastest pace worth trying; a pace is accepted once it fits and its
/// imbalance is within the target. If no pace at a given SLR count is
/// balanced, the fastest one that fits is taken before adding an SLR.
fn auto_pack(
    cands: &[Vec<Candidate>],
    device: &DeviceProfile,
    budget: [u64; 3],
    options: &MapOptions,
) -> Result<Packed, MapError> {
    let slowest = choose(cands, u64::MAX);
    let n_min = lower_bound_slrs(&slowest, budget);
    if n_min > device.slr_count {
        return Err(MapError::DeviceExhausted(shortfall(&slowest, device, budget)));
    }
    let floor = cands[0][0].service;
    let mut paces: Vec<u64> = cands
        .iter()
        .flatten()
        .map(|c| c.service)
        .filter(|&s| s >= floor)
        .collect();
    paces.push(floor);
    paces.sort_unstable();
    paces.dedup();

    for n in n_min..=device.slr_count {
        let mut fallback = None;
        for &pace in &paces {
            let chosen = choose(cands, pace);
            if lower_bound_slrs(&chosen, budget) > n {
                continue;
            }
            if let Some(p) = try_pack(chosen, n, budget, options, pace) {
                if p.imbalance <= options.balance_target_pp {
                    return Ok(p);
                }
                fallback.get_or_insert(p);
            }
        }
        if let Some(p) = fallback {
            return Ok(p);
        }
    }
    Err(MapError::DeviceExhausted(shortfall(&slowest, device, budget)))
}
