//! Emulated devices with scheduled fail-stop faults, plus the hub's
//! ping-based failure detector.

use serde::{Deserialize, Serialize};

use crate::clock::SimTime;
use crate::config::DetectorConfig;
use crate::model::{Device, DeviceEvent, DeviceId, DeviceState, HealthEvent};

/// A scheduled outage. With no restart the device stays down for good.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub device: DeviceId,
    pub fail_at_ms: SimTime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restart_at_ms: Option<SimTime>,
}

impl Fault {
    fn covers(&self, t: SimTime) -> bool {
        t >= self.fail_at_ms && self.restart_at_ms.is_none_or(|r| t < r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Health {
    Up,
    Failed,
}

#[derive(Debug, Clone)]
pub struct VirtualDevice {
    pub id: DeviceId,
    pub state: DeviceState,
    faults: Vec<Fault>,
}

impl VirtualDevice {
    pub fn health(&self, t: SimTime) -> Health {
        if self.faults.iter().any(|f| f.covers(t)) {
            Health::Failed
        } else {
            Health::Up
        }
    }

    /// First failure strictly inside `(from, to)`.
    fn fails_within(&self, from: SimTime, to: SimTime) -> Option<SimTime> {
        self.faults.iter().map(|f| f.fail_at_ms).filter(|&t| t > from && t < to).min()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandOutcome {
    Completes(SimTime),
    Fails(SimTime),
}

#[derive(Debug, Clone)]
pub struct Fabric {
    devices: Vec<VirtualDevice>,
}

impl Fabric {
    /// Devices must carry ids `0..n` in order.
    pub fn new(devices: &[Device], faults: &[Fault]) -> Self {
        let mut devs: Vec<VirtualDevice> = devices
            .iter()
            .map(|d| VirtualDevice { id: d.id, state: d.initial.clone(), faults: Vec::new() })
            .collect();
        for f in faults {
            devs[f.device.0 as usize].faults.push(*f);
        }
        for d in &mut devs {
            d.faults.sort_by_key(|f| f.fail_at_ms);
        }
        Fabric { devices: devs }
    }

    pub fn device(&self, d: DeviceId) -> &VirtualDevice {
        &self.devices[d.0 as usize]
    }

    pub fn state(&self, d: DeviceId) -> &DeviceState {
        &self.devices[d.0 as usize].state
    }

    pub fn states(&self) -> Vec<DeviceState> {
        self.devices.iter().map(|d| d.state.clone()).collect()
    }

    pub fn is_up(&self, d: DeviceId, t: SimTime) -> bool {
        self.device(d).health(t) == Health::Up
    }

    pub fn has_faults(&self) -> bool {
        self.devices.iter().any(|d| !d.faults.is_empty())
    }

    pub fn faulty_devices(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.devices.iter().filter(|d| !d.faults.is_empty()).map(|d| d.id)
    }

    /// When a command dispatched now will finish or fail. A device that is
    /// down refuses at once; one that fails mid-command fails at that instant.
    pub fn execute_command(&self, d: DeviceId, duration_ms: u64, now: SimTime) -> CommandOutcome {
        let dev = self.device(d);
        if dev.health(now) == Health::Failed {
            return CommandOutcome::Fails(now);
        }
        match dev.fails_within(now, now + duration_ms) {
            Some(t) => CommandOutcome::Fails(t),
            None => CommandOutcome::Completes(now + duration_ms),
        }
    }

    /// Applies a completed command. Failed devices keep their frozen state.
    pub fn apply(&mut self, d: DeviceId, state: DeviceState, now: SimTime) -> bool {
        let dev = &mut self.devices[d.0 as usize];
        if dev.health(now) == Health::Failed {
            return false;
        }
        dev.state = state;
        true
    }
}

/// Tracks which devices the hub believes are up, driven by periodic pings.
#[derive(Debug, Clone)]
pub struct FailureDetector {
    cfg: DetectorConfig,
    believed_up: Vec<bool>,
    last_heard: Vec<Option<SimTime>>,
    last_ping: Option<SimTime>,
}

impl FailureDetector {
    pub fn new(cfg: DetectorConfig, device_count: usize) -> Self {
        FailureDetector { cfg, believed_up: vec![true; device_count], last_heard: vec![None; device_count], last_ping: None }
    }

    pub fn config(&self) -> DetectorConfig {
        self.cfg
    }

    pub fn believes_up(&self, d: DeviceId) -> bool {
        self.believed_up[d.0 as usize]
    }

    /// Any message from the device counts as an implicit ack.
    pub fn note_heard(&mut self, d: DeviceId, t: SimTime) {
        self.last_heard[d.0 as usize] = Some(t);
    }

    /// Next ping instant strictly after `t`.
    pub fn next_ping_after(&self, t: SimTime) -> SimTime {
        (t / self.cfg.ping_interval_ms + 1) * self.cfg.ping_interval_ms
    }

    /// A failed command tells the hub the device is down right away.
    pub fn command_failed(&mut self, d: DeviceId, now: SimTime) -> Option<DeviceEvent> {
        let up = &mut self.believed_up[d.0 as usize];
        if *up {
            *up = false;
            Some(DeviceEvent { device: d, kind: HealthEvent::Failure, detect_time: now })
        } else {
            None
        }
    }

    /// Pings the given devices at `now`. A device that does not answer is
    /// reported failed once the ack timeout lapses; a device believed down
    /// that answers is reported restarted.
    pub fn detector_step(
        &mut self,
        now: SimTime,
        fabric: &Fabric,
        devices: impl IntoIterator<Item = DeviceId>,
    ) -> Vec<DeviceEvent> {
        let since = self.last_ping.unwrap_or(0);
        let first = self.last_ping.is_none();
        self.last_ping = Some(now);
        let mut out = Vec::new();
        for d in devices {
            let i = d.0 as usize;
            if self.believed_up[i] && self.cfg.implicit_ack {
                if let Some(h) = self.last_heard[i] {
                    if (first || h > since) && h <= now {
                        continue;
                    }
                }
            }
            let up = fabric.is_up(d, now);
            if up && !self.believed_up[i] {
                self.believed_up[i] = true;
                out.push(DeviceEvent { device: d, kind: HealthEvent::Restart, detect_time: now });
            } else if !up && self.believed_up[i] {
                self.believed_up[i] = false;
                out.push(DeviceEvent {
                    device: d,
                    kind: HealthEvent::Failure,
                    detect_time: now + self.cfg.ack_timeout_ms,
                });
            }
        }
        out
    }
}
