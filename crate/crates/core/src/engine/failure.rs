//! How a device failure or restart that happens while a routine runs affects
//! that routine, per visibility model.

use serde::{Deserialize, Serialize};

use super::VisibilityModel;
use crate::clock::SimTime;

/// Where a routine stands relative to its own accesses of the device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimingCase {
    /// The routine never touches the device.
    Untouched,
    /// Failed and restarted before the routine's first touch.
    BeforeFirstTouchRecovered,
    /// Failed after the last touch and back up before the routine finishes.
    AfterLastTouchRecovered,
    /// Failed after the last touch and still down when the routine finishes.
    AfterLastTouchStillDown,
    /// Failed between the first and last touch.
    DuringTouches,
    /// Failed before the first touch and still down when it comes.
    BeforeFirstTouchStillDown,
}

impl TimingCase {
    pub const ALL: [TimingCase; 6] = [
        TimingCase::Untouched,
        TimingCase::BeforeFirstTouchRecovered,
        TimingCase::AfterLastTouchRecovered,
        TimingCase::AfterLastTouchStillDown,
        TimingCase::DuringTouches,
        TimingCase::BeforeFirstTouchStillDown,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureDecision {
    /// The routine may go on either side of the event.
    ArbitraryOrder,
    /// The failure (and any restart) is serialized before the routine.
    SerializeBefore,
    /// The failure (and any restart) is serialized after the routine.
    SerializeAfter,
    AbortRoutine,
}

impl FailureDecision {
    pub fn symbol(self) -> &'static str {
        match self {
            FailureDecision::ArbitraryOrder => "ok",
            FailureDecision::SerializeBefore => "F<R",
            FailureDecision::SerializeAfter => "R<F",
            FailureDecision::AbortRoutine => "X",
        }
    }
}

/// The routine's execution as seen from one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecutionWindow {
    pub start: SimTime,
    pub finish: SimTime,
    /// Start of the first and end of the last command on the device.
    pub touches: Option<(SimTime, SimTime)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outage {
    pub fail: SimTime,
    pub restart: Option<SimTime>,
}

impl Outage {
    fn up_by(&self, t: SimTime) -> bool {
        self.restart.is_some_and(|r| r <= t)
    }
}

pub fn timing_case(w: ExecutionWindow, o: Outage) -> TimingCase {
    let Some((first, last)) = w.touches else {
        return TimingCase::Untouched;
    };
    if o.fail < first {
        if o.up_by(first) {
            TimingCase::BeforeFirstTouchRecovered
        } else {
            TimingCase::BeforeFirstTouchStillDown
        }
    } else if o.fail > last {
        if o.up_by(w.finish) {
            TimingCase::AfterLastTouchRecovered
        } else {
            TimingCase::AfterLastTouchStillDown
        }
    } else {
        TimingCase::DuringTouches
    }
}

/// The decision table. `None` for WV, which records no decision and never
/// aborts.
pub fn decide(model: VisibilityModel, case: TimingCase) -> Option<FailureDecision> {
    use FailureDecision::*;
    use TimingCase::*;
    match model {
        VisibilityModel::Wv => None,
        VisibilityModel::Sgsv => Some(AbortRoutine),
        VisibilityModel::Gsv => Some(if case == Untouched { ArbitraryOrder } else { AbortRoutine }),
        VisibilityModel::Psv | VisibilityModel::Ev(_) => Some(match case {
            Untouched => ArbitraryOrder,
            BeforeFirstTouchRecovered => SerializeBefore,
            AfterLastTouchRecovered => SerializeAfter,
            AfterLastTouchStillDown if model == VisibilityModel::Psv => AbortRoutine,
            AfterLastTouchStillDown => SerializeAfter,
            DuringTouches | BeforeFirstTouchStillDown => AbortRoutine,
        }),
    }
}

/// Classifies an outage that overlaps the routine's execution.
pub fn classify_failure(model: VisibilityModel, w: ExecutionWindow, o: Outage) -> Option<FailureDecision> {
    decide(model, timing_case(w, o))
}
