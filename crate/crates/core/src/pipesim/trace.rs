use std::io::{self, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerState {
    /// Core array is streaming beats.
    Busy,
    /// Input window is ready but the downstream buffer has no room.
    Stalled,
    /// Waiting for input, or finished.
    Idle,
}

impl LayerState {
    pub fn letter(self) -> char {
        match self {
            LayerState::Busy => 'B',
            LayerState::Stalled => 'S',
            LayerState::Idle => 'I',
        }
    }
}

/// Layer states recorded at every change.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub layers: usize,
    pub changes: Vec<(u64, Vec<LayerState>)>,
    pub end: u64,
}

impl Trace {
    pub fn record(&mut self, cycle: u64, states: &[LayerState]) {
        if self.changes.last().map_or(true, |(_, s)| s != states) {
            self.changes.push((cycle, states.to_vec()));
        }
    }

    /// State of every layer at `cycle`.
    pub fn at(&self, cycle: u64) -> Option<&[LayerState]> {
        let idx = self.changes.partition_point(|(c, _)| *c <= cycle);
        idx.checked_sub(1).map(|i| self.changes[i].1.as_slice())
    }

    /// One row per cycle: `cycle,L0,L1,...` with B/S/I letters.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "cycle")?;
        for l in 0..self.layers {
            write!(w, ",L{l}")?;
        }
        writeln!(w)?;
        let mut row = String::new();
        for (i, (start, states)) in self.changes.iter().enumerate() {
            let stop = self.changes.get(i + 1).map_or(self.end, |(c, _)| *c);
            row.clear();
            for s in states {
                row.push(',');
                row.push(s.letter());
            }
            for cycle in *start..stop {
                writeln!(w, "{cycle}{row}")?;
            }
        }
        Ok(())
    }
}
