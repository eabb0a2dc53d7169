//! Ground-truth scenario simulator.
//!
//! A [`Scenario`] places sniffing nodes and devices in a rectangular area.
//! [`generate`] turns it into a time-sorted packet stream with per-node
//! features and one [`GroundTruth`] label per packet; [`render_iq`]
//! synthesises the raw multi-antenna baseband for a single packet.

mod generate;
mod profile;
mod render;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::locate::{Area, NodePose};

pub use generate::{generate, propagate, DeviceDraw, GroundTruth, NodeTruth, SimOutput, SimPacket};
pub use profile::{AdvKind, DeviceState, Profile};
pub use render::{render_iq, RenderConfig};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-node radio model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelModel {
    /// dBm at 1 m.
    pub tx_power_dbm: f64,
    pub path_loss_exp: f64,
    pub shadowing_db: f64,
    /// AoA noise σ near the node, degrees.
    pub aoa_sigma_min: f64,
    /// AoA noise σ at `aoa_sigma_range_m` and beyond, degrees.
    pub aoa_sigma_max: f64,
    pub aoa_sigma_range_m: f64,
    /// Extra AoA σ per m/s of device speed, degrees.
    pub aoa_sigma_per_mps: f64,
    /// Per-packet CFO estimation noise, Hz.
    pub cfo_noise_hz: f64,
    /// Spread of the fixed per-node oscillator offset, Hz.
    pub node_cfo_spread_hz: f64,
    pub detection_radius_m: f64,
    /// Receiver noise floor in a 2 MHz channel, dBm.
    pub noise_floor_dbm: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            tx_power_dbm: -45.0,
            path_loss_exp: 2.0,
            shadowing_db: 2.0,
            aoa_sigma_min: 2.5,
            aoa_sigma_max: 4.8,
            aoa_sigma_range_m: 10.0,
            aoa_sigma_per_mps: 1.0,
            cfo_noise_hz: 200.0,
            node_cfo_spread_hz: 5000.0,
            detection_radius_m: 20.0,
            noise_floor_dbm: -100.0,
        }
    }
}

impl ChannelModel {
    pub fn aoa_sigma(&self, distance: f64, speed: f64) -> f64 {
        let f = (distance / self.aoa_sigma_range_m).clamp(0.0, 1.0);
        self.aoa_sigma_min + (self.aoa_sigma_max - self.aoa_sigma_min) * f + self.aoa_sigma_per_mps * speed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub state: DeviceState,
}

/// Status or activity shown by a device over an interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactEvent {
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default)]
    pub status: Option<String>,
    #[serde(default)]
    pub activity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub profile: Profile,
    /// Presence and state. Outside every interval the device is absent.
    /// Empty means active for the whole scenario.
    #[serde(default)]
    pub schedule: Vec<StateInterval>,
    /// Packets/min per advertisement kind, overriding the profile.
    #[serde(default)]
    pub rates: Option<Vec<f64>>,
    /// Drawn when absent.
    #[serde(default)]
    pub tau_fix: Option<i32>,
    #[serde(default)]
    pub epsilon_bound: Option<u32>,
    #[serde(default)]
    pub cfo_hz: Option<f64>,
    pub waypoints: Vec<[f64; 2]>,
    /// m/s along the waypoints.
    #[serde(default)]
    pub speed: f64,
    /// Repeat the path (closing it) instead of stopping at the end.
    #[serde(default)]
    pub loop_path: bool,
    /// The device waits at the first waypoint until this time, s.
    #[serde(default)]
    pub depart_s: f64,
    /// Stop at waypoint `i` for `pauses_s[i]` seconds; missing entries are 0.
    #[serde(default)]
    pub pauses_s: Vec<f64>,
    #[serde(default)]
    pub events: Vec<FactEvent>,
}

impl DeviceSpec {
    pub fn new(profile: Profile, position: [f64; 2]) -> Self {
        DeviceSpec {
            profile,
            schedule: Vec::new(),
            rates: None,
            tau_fix: None,
            epsilon_bound: None,
            cfo_hz: None,
            waypoints: vec![position],
            speed: 0.0,
            loop_path: false,
            depart_s: 0.0,
            pauses_s: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn epsilon(&self) -> u32 {
        self.epsilon_bound.unwrap_or_else(|| self.profile.epsilon_bound())
    }

    /// State at `t_s`, `None` when absent.
    pub fn state_at(&self, t_s: f64, duration_s: f64) -> Option<DeviceState> {
        if self.schedule.is_empty() {
            return (0.0..duration_s).contains(&t_s).then_some(DeviceState::Active);
        }
        self.schedule.iter().find(|i| (i.start_s..i.end_s).contains(&t_s)).map(|i| i.state)
    }

    /// Start of the next scheduled interval after `t_s`.
    pub fn next_start(&self, t_s: f64) -> Option<f64> {
        self.schedule.iter().map(|i| i.start_s).filter(|&s| s > t_s).min_by(f64::total_cmp)
    }

    pub fn rate(&self, kind: usize, state: DeviceState) -> f64 {
        match &self.rates {
            Some(r) if state != DeviceState::Off => r.get(kind).copied().unwrap_or(0.0),
            _ => self.profile.kinds().get(kind).map_or(0.0, |k| k.rate(state)),
        }
    }

    pub fn status_at(&self, t_s: f64) -> (Option<&str>, Option<&str>) {
        let mut out = (None, None);
        for e in self.events.iter().filter(|e| (e.start_s..e.end_s).contains(&t_s)) {
            out.0 = out.0.or(e.status.as_deref());
            out.1 = out.1.or(e.activity.as_deref());
        }
        out
    }

    fn path_len(&self) -> (Vec<[f64; 2]>, f64) {
        let mut pts = self.waypoints.clone();
        if self.loop_path && pts.len() > 1 {
            pts.push(pts[0]);
        }
        let len = pts.windows(2).map(|w| dist(w[0], w[1])).sum();
        (pts, len)
    }

    /// Position and speed at `t_s`.
    pub fn position_at(&self, t_s: f64) -> ([f64; 2], f64) {
        let (pts, len) = self.path_len();
        if pts.len() < 2 || self.speed <= 0.0 || len <= 0.0 {
            return (self.waypoints[0], 0.0);
        }
        let pause = |i: usize| self.pauses_s.get(i).copied().unwrap_or(0.0).max(0.0);
        let legs = pts.len() - 1;
        let cycle = len / self.speed + (0..legs).map(pause).sum::<f64>();
        let mut t = (t_s - self.depart_s).max(0.0);
        if self.loop_path {
            t %= cycle;
        } else if t >= cycle + pause(legs) {
            return (pts[legs], 0.0);
        }
        for (i, w) in pts.windows(2).enumerate() {
            if t < pause(i) {
                return (w[0], 0.0);
            }
            t -= pause(i);
            let leg = dist(w[0], w[1]) / self.speed;
            if t < leg {
                let f = t / leg;
                return ([w[0][0] + f * (w[1][0] - w[0][0]), w[0][1] + f * (w[1][1] - w[0][1])], self.speed);
            }
            t -= leg;
        }
        (pts[legs], 0.0)
    }
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Apartment,
    Lab,
    Mall,
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "apartment" => Ok(ScenarioKind::Apartment),
            "lab" => Ok(ScenarioKind::Lab),
            "mall" => Ok(ScenarioKind::Mall),
            _ => Err(format!("unknown scenario {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub area: Area,
    pub nodes: Vec<NodePose>,
    #[serde(default)]
    pub devices: Vec<DeviceSpec>,
    pub duration_s: f64,
    pub seed: u64,
    #[serde(default)]
    pub channel: ChannelModel,
    /// Nominal address lifetime, s.
    #[serde(default = "default_rotation")]
    pub rotation_s: f64,
}

fn default_rotation() -> f64 {
    900.0
}

/// Four nodes at the middle of each wall, facing inward.
pub fn wall_nodes(area: Area) -> Vec<NodePose> {
    let (w, h) = (area.width, area.height);
    vec![
        NodePose { position: [0.0, h / 2.0], boresight: 90.0 },
        NodePose { position: [w / 2.0, h], boresight: 180.0 },
        NodePose { position: [w, h / 2.0], boresight: 270.0 },
        NodePose { position: [w / 2.0, 0.0], boresight: 0.0 },
    ]
}

impl Scenario {
    /// Empty scenario with the preset geometry and noise profile.
    pub fn preset(kind: ScenarioKind, duration_s: f64, seed: u64) -> Self {
        let (name, area, channel) = match kind {
            ScenarioKind::Apartment => ("apartment", Area { width: 6.5, height: 9.5 }, ChannelModel::default()),
            ScenarioKind::Lab => (
                "lab",
                Area { width: 7.5, height: 10.0 },
                ChannelModel {
                    path_loss_exp: 2.5,
                    shadowing_db: 3.0,
                    aoa_sigma_min: 2.8,
                    aoa_sigma_max: 5.3,
                    ..ChannelModel::default()
                },
            ),
            ScenarioKind::Mall => (
                "mall",
                Area { width: 10.0, height: 20.0 },
                ChannelModel {
                    path_loss_exp: 3.0,
                    shadowing_db: 4.0,
                    aoa_sigma_min: 3.1,
                    aoa_sigma_max: 5.8,
                    ..ChannelModel::default()
                },
            ),
        };
        Scenario {
            name: name.into(),
            area,
            nodes: wall_nodes(area),
            devices: Vec::new(),
            duration_s,
            seed,
            channel,
            rotation_s: default_rotation(),
        }
    }

    /// Adds devices with random positions and slow looping walks. Devices
    /// arrive at random times in the first `arrival_s` seconds.
    pub fn populate(&mut self, profiles: &[Profile], arrival_s: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x706f_7075_6c61_7465);
        let m = 0.5;
        let point = |rng: &mut ChaCha8Rng| {
            [rng.random_range(m..self.area.width - m), rng.random_range(m..self.area.height - m)]
        };
        for &p in profiles {
            let waypoints: Vec<[f64; 2]> = (0..3).map(|_| point(&mut rng)).collect();
            let start = if arrival_s > 0.0 { rng.random_range(0.0..arrival_s) } else { 0.0 };
            let mut d = DeviceSpec::new(p, waypoints[0]);
            d.waypoints = waypoints;
            d.speed = rng.random_range(0.0..0.3);
            d.loop_path = true;
            d.schedule = vec![StateInterval { start_s: start, end_s: self.duration_s, state: DeviceState::Active }];
            self.devices.push(d);
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if !(self.area.width > 0.0 && self.area.height > 0.0) {
            return bad("area must be positive".into());
        }
        if !(self.duration_s > 0.0) {
            return bad("duration must be positive".into());
        }
        if !(self.rotation_s > 0.0) {
            return bad("rotation period must be positive".into());
        }
        if self.nodes.is_empty() {
            return bad("no sniffing nodes".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !self.area.contains(n.position) {
                return bad(format!("node {i} outside the area"));
            }
        }
        for (i, d) in self.devices.iter().enumerate() {
            if d.waypoints.is_empty() {
                return bad(format!("device {i} has no waypoints"));
            }
            if let Some(w) = d.waypoints.iter().find(|w| !self.area.contains(**w)) {
                return bad(format!("device {i} waypoint {w:?} outside the area"));
            }
            if !(d.speed >= 0.0) {
                return bad(format!("device {i} has negative speed"));
            }
            if !d.depart_s.is_finite() || d.pauses_s.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                return bad(format!("device {i} has a bad departure time or pause"));
            }
            if let Some(r) = &d.rates {
                if r.iter().any(|x| !(*x >= 0.0)) {
                    return bad(format!("device {i} has a negative rate"));
                }
            }
            if let Some(t) = d.tau_fix {
                let b = d.epsilon() as i32;
                if !(-300..=300 - b).contains(&t) {
                    return bad(format!("device {i} tau_fix {t} outside [-300, {}]", 300 - b));
                }
            }
            if d.epsilon() > 300 {
                return bad(format!("device {i} epsilon bound too large"));
            }
            if d.schedule.iter().any(|s| !(s.end_s > s.start_s)) {
                return bad(format!("device {i} has an empty schedule interval"));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
