//! Domain vocabulary shared by every other module: devices, commands,
//! routines and device failure/restart events.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clock::SimTime;
use crate::error::{Error, Result};

/// Default boundary between short and long commands (1 minute).
pub const DEFAULT_SHORT_BOUND_MS: u64 = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub u32);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoutineId(pub u32);

impl fmt::Display for RoutineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.0)
    }
}

/// Scalar device state: a numeric level (setpoint, brightness) or a token
/// such as `ON`/`OFF`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceState {
    Level(i64),
    Token(String),
}

impl DeviceState {
    pub fn token(s: &str) -> Self {
        DeviceState::Token(s.to_string())
    }

    pub fn on() -> Self {
        Self::token("ON")
    }

    pub fn off() -> Self {
        Self::token("OFF")
    }
}

impl Default for DeviceState {
    fn default() -> Self {
        DeviceState::off()
    }
}

impl fmt::Display for DeviceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceState::Level(v) => write!(f, "{v}"),
            DeviceState::Token(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Device {
    pub id: DeviceId,
    pub name: String,
    #[serde(default)]
    pub initial: DeviceState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommandKind {
    Short,
    Long,
}

impl CommandKind {
    pub fn classify(duration_ms: u64, short_bound_ms: u64) -> Self {
        if duration_ms > short_bound_ms {
            CommandKind::Long
        } else {
            CommandKind::Short
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Necessity {
    #[default]
    Must,
    BestEffort,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub device: DeviceId,
    pub target: DeviceState,
    pub duration_ms: u64,
    pub kind: CommandKind,
    #[serde(default)]
    pub necessity: Necessity,
    /// The command is conditioned on the device's current state.
    #[serde(default, skip_serializing_if = "is_false")]
    pub reads: bool,
}

impl Command {
    pub fn new(device: DeviceId, target: DeviceState, duration_ms: u64, short_bound_ms: u64) -> Self {
        Command {
            device,
            target,
            duration_ms,
            kind: CommandKind::classify(duration_ms, short_bound_ms),
            necessity: Necessity::Must,
            reads: false,
        }
    }

    pub fn best_effort(mut self) -> Self {
        self.necessity = Necessity::BestEffort;
        self
    }

    pub fn is_must(&self) -> bool {
        self.necessity == Necessity::Must
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Routine {
    pub id: RoutineId,
    #[serde(default)]
    pub name: String,
    pub submit_time_ms: SimTime,
    pub commands: Vec<Command>,
}

impl Routine {
    /// Devices touched, in ascending id order.
    pub fn devices(&self) -> BTreeSet<DeviceId> {
        self.commands.iter().map(|c| c.device).collect()
    }

    pub fn touches(&self, d: DeviceId) -> bool {
        self.commands.iter().any(|c| c.device == d)
    }

    /// Sum of command durations: the runtime with no waiting at all.
    pub fn ideal_runtime(&self) -> u64 {
        self.commands.iter().map(|c| c.duration_ms).sum()
    }

    pub fn first_index_on(&self, d: DeviceId) -> Option<usize> {
        self.commands.iter().position(|c| c.device == d)
    }

    pub fn last_index_on(&self, d: DeviceId) -> Option<usize> {
        self.commands.iter().rposition(|c| c.device == d)
    }

    /// Value the routine leaves `d` in when all its commands succeed.
    pub fn last_write(&self, d: DeviceId) -> Option<&DeviceState> {
        self.commands.iter().rev().find(|c| c.device == d).map(|c| &c.target)
    }
}

/// Exact intersection of the devices referenced by two routines.
pub fn conflict_set(a: &Routine, b: &Routine) -> BTreeSet<DeviceId> {
    let da = a.devices();
    b.devices().into_iter().filter(|d| da.contains(d)).collect()
}

pub fn conflicts(a: &Routine, b: &Routine) -> bool {
    a.commands.iter().any(|c| b.touches(c.device))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HealthEvent {
    Failure,
    Restart,
}

/// A detected device up/down transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviceEvent {
    pub device: DeviceId,
    pub kind: HealthEvent,
    pub detect_time: SimTime,
}

/// Name → id lookup for routine documents.
#[derive(Debug, Clone, Default)]
pub struct Inventory {
    by_name: BTreeMap<String, DeviceId>,
}

impl Inventory {
    pub fn new(devices: &[Device]) -> Self {
        Inventory { by_name: devices.iter().map(|d| (d.name.clone(), d.id)).collect() }
    }

    pub fn lookup(&self, name: &str) -> Option<DeviceId> {
        self.by_name.get(name).copied()
    }
}

#[derive(Debug, Deserialize)]
struct CommandDoc {
    device: String,
    target: DeviceState,
    duration_ms: i64,
    kind: Option<CommandKind>,
    necessity: Option<Necessity>,
    #[serde(default)]
    reads: bool,
}

#[derive(Debug, Deserialize)]
struct RoutineDoc {
    name: String,
    commands: Vec<CommandDoc>,
}

/// A routine definition before it has been submitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutineTemplate {
    pub name: String,
    pub commands: Vec<Command>,
}

impl RoutineTemplate {
    pub fn instantiate(&self, id: RoutineId, submit_time_ms: SimTime) -> Routine {
        Routine { id, name: self.name.clone(), submit_time_ms, commands: self.commands.clone() }
    }
}

/// Parses a JSON routine document such as
/// `{"name": "breakfast", "commands": [{"device": "coffee", "target": "ON", "duration_ms": 240000}]}`.
pub fn parse_routine(text: &str, inventory: &Inventory, short_bound_ms: u64) -> Result<RoutineTemplate> {
    let doc: RoutineDoc = serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
    template_from_doc(doc, inventory, short_bound_ms)
}

pub(crate) fn parse_routine_value(
    value: serde_json::Value,
    inventory: &Inventory,
    short_bound_ms: u64,
) -> Result<RoutineTemplate> {
    let doc: RoutineDoc = serde_json::from_value(value).map_err(|e| Error::Malformed(e.to_string()))?;
    template_from_doc(doc, inventory, short_bound_ms)
}

fn template_from_doc(doc: RoutineDoc, inventory: &Inventory, short_bound_ms: u64) -> Result<RoutineTemplate> {
    if doc.commands.is_empty() {
        return Err(Error::EmptyRoutine(doc.name));
    }
    let mut commands = Vec::with_capacity(doc.commands.len());
    for (index, c) in doc.commands.into_iter().enumerate() {
        let device = inventory.lookup(&c.device).ok_or_else(|| Error::UnknownDevice(c.device.clone()))?;
        if c.duration_ms <= 0 {
            return Err(Error::NonPositiveDuration { routine: doc.name, index });
        }
        let duration_ms = c.duration_ms as u64;
        commands.push(Command {
            device,
            target: c.target,
            duration_ms,
            kind: c.kind.unwrap_or_else(|| CommandKind::classify(duration_ms, short_bound_ms)),
            necessity: c.necessity.unwrap_or_default(),
            reads: c.reads,
        });
    }
    Ok(RoutineTemplate { name: doc.name, commands })
}
