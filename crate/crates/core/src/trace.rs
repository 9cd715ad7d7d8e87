//! Timestamped execution log. Every metric is computed from it.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::clock::SimTime;
use crate::model::{DeviceId, DeviceState, RoutineId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeaseKind {
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TraceKind {
    RoutineSubmit { routine: RoutineId },
    RoutineStart { routine: RoutineId },
    CmdStart { routine: RoutineId, index: usize, device: DeviceId },
    /// `ok == false` means the device did not apply the command.
    CmdEnd { routine: RoutineId, index: usize, device: DeviceId, state: DeviceState, ok: bool },
    Feedback { routine: RoutineId, index: usize, device: DeviceId },
    LeaseGrant { device: DeviceId, src: RoutineId, dst: RoutineId, lease: LeaseKind, revoke_at: SimTime },
    LeaseRevoke { device: DeviceId, src: RoutineId, dst: RoutineId },
    /// `executed` counts commands the routine had applied before aborting.
    Abort { routine: RoutineId, executed: usize, total: usize },
    Commit { routine: RoutineId },
    DeviceFail { device: DeviceId },
    DeviceRestart { device: DeviceId },
    RollbackCmd { routine: RoutineId, device: DeviceId, state: DeviceState },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: SimTime,
    #[serde(flatten)]
    pub kind: TraceKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, time: SimTime, kind: TraceKind) {
        debug_assert!(self.events.last().is_none_or(|e| e.time <= time), "trace time went backwards");
        self.events.push(TraceEvent { time, kind });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> crate::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> crate::Result<Self> {
        let mut events = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line)?);
        }
        Ok(Trace { events })
    }

    /// Time of the last event; the run's makespan when submissions start at 0.
    pub fn end_time(&self) -> SimTime {
        self.events.last().map_or(0, |e| e.time)
    }
}
