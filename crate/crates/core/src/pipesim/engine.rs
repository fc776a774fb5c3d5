use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::ops::Range;

use super::datapath::{classify, column_outputs, store_column, LayerInput};
use super::merge::{merge_round_robin, ColumnStream};
use super::spikes::{Image, SpikeTensor};
use super::trace::{LayerState, Trace};
use super::{
    ControllerDump, ImageResult, LayerActivation, LayerStats, SimError, SimOptions, SimReport,
};
use crate::mapper::MappingPlan;
use crate::netspec::{LayerGeometry, NetworkSpec};
use crate::oracle::count_ops;
use crate::quantizer::QuantizedModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    /// The core array of a layer finished streaming a column.
    Done(usize),
    /// A finished column reached the next buffer (or the output).
    Land {
        layer: usize,
        image: usize,
        col: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time: u64,
    seq: u64,
    kind: EventKind,
}

/// Input buffer of a layer: the landing stage (stage 1) and the window FIFO
/// (stage 2). Columns already promised by the upstream layer count against
/// its capacity, less what the upstream output pipeline holds in registers.
#[derive(Debug, Default)]
struct Buffer {
    cap: usize,
    landing: usize,
    pipeline: usize,
    stage1: VecDeque<(usize, usize)>,
    stage2: VecDeque<(usize, usize)>,
    in_flight: usize,
}

impl Buffer {
    fn has_credit(&self) -> bool {
        self.stage1.len() + self.stage2.len() + self.in_flight < self.cap + self.landing + self.pipeline
    }

    fn transfer(&mut self, needed: &[bool]) -> bool {
        let mut changed = false;
        while let Some(&(img, col)) = self.stage1.front() {
            if !needed[col] {
                self.stage1.pop_front();
            } else if self.stage2.len() < self.cap {
                self.stage1.pop_front();
                self.stage2.push_back((img, col));
            } else {
                break;
            }
            changed = true;
        }
        changed
    }
}

struct Stage {
    column_cycles: u64,
    latency: u64,
    out_cols: usize,
    windows: Vec<(usize, usize)>,
    needed: Vec<bool>,
    shares: Vec<Range<usize>>,
    next: (usize, usize),
    current: Option<(usize, usize)>,
    counters: [u64; 3],
    columns: u64,
}

pub(super) struct Engine<'a> {
    spec: &'a NetworkSpec,
    geoms: &'a [LayerGeometry],
    plan: &'a MappingPlan,
    model: &'a QuantizedModel,
    images: &'a [Image],
    options: &'a SimOptions,
    stream: usize,
    stages: Vec<Stage>,
    buffers: Vec<Buffer>,
    source_next: usize,
    events: BinaryHeap<Reverse<Event>>,
    seq: u64,
    now: u64,
    completions: Vec<Option<u64>>,
    outputs: Vec<Vec<Option<SpikeTensor>>>,
    potentials: Vec<Vec<Option<Vec<i32>>>>,
    kept: Vec<Vec<Option<SpikeTensor>>>,
    trace: Option<Trace>,
}

impl<'a> Engine<'a> {
    pub(super) fn new(
        spec: &'a NetworkSpec,
        geoms: &'a [LayerGeometry],
        plan: &'a MappingPlan,
        model: &'a QuantizedModel,
        images: &'a [Image],
        options: &'a SimOptions,
    ) -> Self {
        let t = &plan.timing;
        let stream = images.len().max(options.min_stream_images);
        let stages: Vec<Stage> = geoms
            .iter()
            .zip(&plan.layers)
            .map(|(g, m)| {
                let windows: Vec<_> = (0..g.out_dims.cols).map(|c| g.input_cols_for(c)).collect();
                let mut needed = vec![false; g.in_dims.cols];
                for &(lo, hi) in &windows {
                    needed[lo..=hi].iter_mut().for_each(|n| *n = true);
                }
                let ch = g.out_dims.channels;
                let shares = m
                    .share_neurons()
                    .into_iter()
                    .map(|r| r.start.min(ch)..r.end.min(ch))
                    .filter(|r| !r.is_empty())
                    .collect();
                Stage {
                    column_cycles: t.column_cycles(m.neurons_per_unit, g.beats_per_neuron),
                    latency: t.core_latency(m.cores, m.group_size) + t.split_latency(m.splits.len()),
                    out_cols: g.out_dims.cols,
                    windows,
                    needed,
                    shares,
                    next: (0, 0),
                    current: None,
                    counters: [0; 3],
                    columns: 0,
                }
            })
            .collect();
        let buffers = geoms
            .iter()
            .enumerate()
            .map(|(n, g)| Buffer {
                cap: g.window_buffer_columns(),
                landing: g.landing_columns(),
                pipeline: n.checked_sub(1).map_or(0, |p| {
                    let up = &stages[p];
                    up.latency.div_ceil(up.column_cycles) as usize
                }),
                ..Buffer::default()
            })
            .collect();
        let layers = geoms.len();
        let real = images.len();
        Engine {
            spec,
            geoms,
            plan,
            model,
            images,
            options,
            stream,
            stages,
            buffers,
            source_next: 0,
            events: BinaryHeap::new(),
            seq: 0,
            now: 0,
            completions: vec![None; stream],
            outputs: vec![vec![None; real]; layers],
            potentials: vec![vec![None; real]; layers],
            kept: vec![vec![None; real]; layers],
            trace: options.trace.then(|| Trace {
                layers,
                ..Trace::default()
            }),
        }
    }

    fn push(&mut self, time: u64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Reverse(Event {
            time,
            seq: self.seq,
            kind,
        }));
    }

    fn input_ready(&self, n: usize) -> bool {
        let st = &self.stages[n];
        if st.next.0 >= self.stream {
            return false;
        }
        let (img, col) = st.next;
        let hi = st.windows[col].1;
        self.buffers[n].stage2.contains(&(img, hi))
    }

    fn output_credit(&self, n: usize) -> bool {
        n + 1 == self.stages.len() || self.buffers[n + 1].has_credit()
    }

    fn try_start(&mut self, n: usize) -> Result<bool, SimError> {
        if self.stages[n].current.is_some() || !self.input_ready(n) || !self.output_credit(n) {
            return Ok(false);
        }
        let (img, col) = self.stages[n].next;
        if img < self.images.len() {
            self.compute(n, img, col)?;
        }
        let st = &mut self.stages[n];
        st.current = Some((img, col));
        st.next = if col + 1 == st.out_cols {
            (img + 1, 0)
        } else {
            (img, col + 1)
        };
        let done = self.now + st.column_cycles;
        let land = done + st.latency;
        if n + 1 < self.buffers.len() {
            self.buffers[n + 1].in_flight += 1;
        }
        self.push(done, EventKind::Done(n));
        self.push(
            land,
            EventKind::Land {
                layer: n,
                image: img,
                col,
            },
        );
        Ok(true)
    }

    /// Functional evaluation of one output column, share by share.
    fn compute(&mut self, n: usize, img: usize, col: usize) -> Result<(), SimError> {
        let geom = &self.geoms[n];
        let layer = &self.model.layers[n];
        let (before, after) = self.outputs.split_at_mut(n);
        let input = match before.last() {
            None => LayerInput::Pixels(&self.images[img]),
            Some(prev) => LayerInput::Spikes(
                prev[img]
                    .as_ref()
                    .expect("input map is kept until the layer consumes it"),
            ),
        };
        let rows = geom.out_dims.rows;
        let ch = geom.out_dims.channels;
        let mut streams = Vec::with_capacity(self.stages[n].shares.len());
        let mut column_potentials = vec![0i32; rows * ch];
        for r in &self.stages[n].shares {
            let out = column_outputs(geom, layer, input, col, r.clone());
            let len = r.len();
            for row in 0..rows {
                column_potentials[row * ch + r.start..row * ch + r.end]
                    .copy_from_slice(&out.potentials[row * len..(row + 1) * len]);
            }
            streams.push(ColumnStream {
                neurons: r.clone(),
                rows,
                columns: vec![out.spikes],
            });
        }
        let merged = merge_round_robin(&streams)?;
        let released = n + 1 < self.stages.len() && self.stages[n + 1].next.0 > img;
        if released && !self.options.record_activations {
            return Ok(());
        }
        // A consumer that never reads trailing columns can release the map
        // before they are written; late columns then go to the kept copy.
        let tensor = match self.kept[n][img].as_mut() {
            Some(kept) => kept,
            None => after[0][img].get_or_insert_with(|| SpikeTensor::zeros(geom.out_dims)),
        };
        let keep = self.options.record_activations || n + 1 == self.geoms.len();
        let pots = if keep {
            Some(self.potentials[n][img].get_or_insert_with(|| vec![0; geom.out_dims.len()]))
        } else {
            None
        };
        store_column(
            tensor,
            col,
            &merged.columns[0],
            pots.map(|p| (p.as_mut_slice(), column_potentials.as_slice())),
        );
        Ok(())
    }

    fn on_done(&mut self, n: usize) {
        let st = &mut self.stages[n];
        let (img, col) = st.current.take().expect("done event for an idle layer");
        st.columns += 1;
        let buf = &mut self.buffers[n];
        if col + 1 == st.out_cols {
            buf.stage2.retain(|&(i, _)| i != img);
            // The input map is no longer read.
            if n > 0 && img < self.images.len() {
                let map = self.outputs[n - 1][img].take();
                if self.options.record_activations {
                    self.kept[n - 1][img] = map;
                }
            }
        } else {
            let lo = st.windows[col + 1].0;
            buf.stage2.retain(|&(i, c)| i != img || c >= lo);
        }
    }

    fn on_land(&mut self, layer: usize, img: usize, col: usize) {
        if layer + 1 < self.buffers.len() {
            let buf = &mut self.buffers[layer + 1];
            buf.in_flight -= 1;
            buf.stage1.push_back((img, col));
        } else if col + 1 == self.stages[layer].out_cols {
            self.completions[img] = Some(self.now);
        }
    }

    fn settle(&mut self) -> Result<(), SimError> {
        let in_cols = self.geoms[0].in_dims.cols;
        let total_source = self.stream * in_cols;
        loop {
            let mut changed = false;
            while self.source_next < total_source && self.buffers[0].has_credit() {
                let s = self.source_next;
                self.buffers[0].stage1.push_back((s / in_cols, s % in_cols));
                self.source_next += 1;
                changed = true;
            }
            for n in 0..self.stages.len() {
                let needed = &self.stages[n].needed;
                changed |= self.buffers[n].transfer(needed);
            }
            for n in 0..self.stages.len() {
                changed |= self.try_start(n)?;
            }
            if !changed {
                return Ok(());
            }
        }
    }

    fn states(&self) -> Vec<LayerState> {
        (0..self.stages.len())
            .map(|n| {
                if self.stages[n].current.is_some() {
                    LayerState::Busy
                } else if self.input_ready(n) && !self.output_credit(n) {
                    LayerState::Stalled
                } else {
                    LayerState::Idle
                }
            })
            .collect()
    }

    fn dump(&self) -> Vec<ControllerDump> {
        self.stages
            .iter()
            .zip(&self.buffers)
            .enumerate()
            .map(|(layer, (st, buf))| ControllerDump {
                layer,
                next_image: st.next.0,
                next_column: st.next.1,
                busy: st.current.is_some(),
                stage1: buf.stage1.iter().copied().collect(),
                stage2: buf.stage2.iter().copied().collect(),
                in_flight: buf.in_flight,
            })
            .collect()
    }

    pub(super) fn run(mut self) -> Result<SimReport, SimError> {
        loop {
            self.settle()?;
            let states = self.states();
            if let Some(t) = self.trace.as_mut() {
                t.record(self.now, &states);
            }
            let Some(Reverse(head)) = self.events.peek().copied() else {
                break;
            };
            if head.time > self.options.max_cycles {
                return Err(SimError::Deadlock {
                    cycle: self.now,
                    layers: self.dump(),
                });
            }
            let dt = head.time - self.now;
            for (st, s) in self.stages.iter_mut().zip(&states) {
                let idx = match s {
                    LayerState::Busy => 0,
                    LayerState::Stalled => 1,
                    LayerState::Idle => 2,
                };
                st.counters[idx] += dt;
            }
            self.now = head.time;
            while let Some(Reverse(ev)) = self.events.peek().copied() {
                if ev.time != self.now {
                    break;
                }
                self.events.pop();
                match ev.kind {
                    EventKind::Done(n) => self.on_done(n),
                    EventKind::Land { layer, image, col } => self.on_land(layer, image, col),
                }
            }
        }
        if self.completions.iter().any(Option::is_none) {
            return Err(SimError::Deadlock {
                cycle: self.now,
                layers: self.dump(),
            });
        }
        Ok(self.report())
    }

    fn report(mut self) -> SimReport {
        let done: Vec<u64> = self.completions.iter().map(|c| c.expect("checked")).collect();
        let total = self.now;
        let stream = self.stream;
        let steady = if stream == 1 {
            done[0]
        } else {
            let last = stream - 1;
            let first = (stream / 2).min(stream - 2);
            let span = (last - first) as u64;
            (done[last] - done[first] + span / 2) / span
        };
        let clock_hz = self.plan.clock_mhz * 1e6;
        let fps = if steady == 0 { 0.0 } else { clock_hz / steady as f64 };
        let ops = count_ops(self.geoms);
        let layers: Vec<LayerStats> = self
            .stages
            .iter()
            .zip(&self.plan.layers)
            .enumerate()
            .map(|(layer, (st, m))| LayerStats {
                layer,
                notation: m.notation.clone(),
                busy_cycles: st.counters[0],
                stalled_cycles: st.counters[1],
                idle_cycles: st.counters[2],
                columns: st.columns,
                column_cycles: st.column_cycles,
                latency_cycles: st.latency,
                service_cycles: st.column_cycles * st.out_cols as u64,
                split_sources: m.splits.len(),
            })
            .collect();
        let mut bottleneck = 0;
        for (i, l) in layers.iter().enumerate() {
            if l.busy_cycles > layers[bottleneck].busy_cycles {
                bottleneck = i;
            }
        }
        let last = self.geoms.len() - 1;
        let results = (0..self.images.len())
            .map(|i| {
                let spikes = self.outputs[last][i].as_ref().expect("final map");
                let pots = self.potentials[last][i].clone().expect("final potentials");
                ImageResult {
                    index: i,
                    class: classify(&pots),
                    final_potentials: pots,
                    final_spikes: spikes.as_bytes().iter().map(|b| format!("{b:02x}")).collect(),
                    completed_at: done[i],
                }
            })
            .collect();
        let activations = if self.options.record_activations {
            for i in 0..self.images.len() {
                self.kept[last][i] = self.outputs[last][i].take();
            }
            (0..self.images.len())
                .map(|i| {
                    (0..=last)
                        .map(|n| LayerActivation {
                            spikes: self.kept[n][i].take().expect("recorded map"),
                            potentials: self.potentials[n][i].take().expect("recorded potentials"),
                        })
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        let trace = self.trace.take().map(|mut t| {
            t.end = total;
            t
        });
        SimReport {
            network: self.spec.name.clone(),
            clock_mhz: self.plan.clock_mhz,
            images: self.images.len(),
            stream_images: stream,
            steady_state_cycles_per_image: steady,
            fill_latency_cycles: done[0],
            total_cycles: total,
            fps_at_clock: fps,
            ops_per_image: ops,
            gops: ops as f64 * fps / 1e9,
            bottleneck_layer: bottleneck,
            layers,
            results,
            activations,
            trace,
        }
    }
}
