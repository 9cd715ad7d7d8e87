use std::fmt::Write as _;

use serde::Serialize;

use super::LineageTable;
use crate::model::{DeviceId, DeviceState, RoutineId};

#[derive(Debug, Clone, Serialize)]
pub struct EntryView {
    pub routine: RoutineId,
    pub status: &'static str,
    pub desired: DeviceState,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LineageRow {
    pub device: DeviceId,
    pub committed: DeviceState,
    pub entries: Vec<EntryView>,
}

impl LineageTable {
    pub fn rows(&self) -> Vec<LineageRow> {
        self.lineages()
            .map(|lin| LineageRow {
                device: lin.device,
                committed: lin.committed.clone(),
                entries: lin
                    .entries
                    .iter()
                    .map(|e| EntryView {
                        routine: e.routine,
                        status: e.status.letter(),
                        desired: e.desired.clone(),
                        start: e.start,
                        end: e.end(),
                    })
                    .collect(),
            })
            .collect()
    }

    /// One line per device: `d#0 [OFF] | R1:A ON @0-100 | R2:S 5 @100-200`.
    pub fn dump_text(&self) -> String {
        let mut s = String::new();
        for row in self.rows() {
            let _ = write!(s, "{} [{}]", row.device, row.committed);
            for e in &row.entries {
                let _ = write!(s, " | {}:{} {} @{}-{}", e.routine, e.status, e.desired, e.start, e.end);
            }
            s.push('\n');
        }
        s
    }

    pub fn dump_json(&self) -> serde_json::Value {
        serde_json::to_value(self.rows()).expect("rows serialize")
    }
}
