//! Per-device packet database.
//!
//! Each device keeps its packets in timestamp order together with the
//! advertising addresses it has used, its fixed features and the running
//! estimate of its slot offset. Everything except the packets themselves
//! is derived state: it is rebuilt by replaying inserts, which is how
//! [`Store::load`] restores it.

mod persist;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{AdvAddress, AdvChannel, DeviceFact, Vendor};
use crate::grouping::time::{time_residual, wrap_residual};

pub use persist::{SCHEMA_NAME, SCHEMA_VERSION};

pub type DeviceId = u64;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("device {device}: timestamp {ts} does not follow {last}")]
    OutOfOrder { device: DeviceId, last: i64, ts: i64 },
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("store line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Features one sniffing node measured for a packet. Any of them may be
/// missing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeObservation {
    pub rss: Option<f64>,
    pub cfo: Option<f64>,
    pub aoa: Option<f64>,
}

impl NodeObservation {
    pub fn is_null(&self) -> bool {
        self.rss.is_none() && self.cfo.is_none() && self.aoa.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    /// µs.
    pub timestamp: i64,
    /// One entry per node, in node order.
    pub phy: Vec<NodeObservation>,
    pub adv_address: AdvAddress,
    pub facts: DeviceFact,
    pub channel: AdvChannel,
}

impl PacketRecord {
    pub fn validate(&self, nodes: usize) -> Result<(), StoreError> {
        if self.phy.len() != nodes {
            return Err(StoreError::InvalidRecord(format!(
                "{} node observations, store has {nodes} nodes",
                self.phy.len()
            )));
        }
        if self.phy.iter().all(NodeObservation::is_null) {
            return Err(StoreError::InvalidRecord("no node observed the packet".into()));
        }
        let finite = |v: Option<f64>| v.is_none_or(f64::is_finite);
        if !self.phy.iter().all(|o| finite(o.rss) && finite(o.cfo) && finite(o.aoa)) {
            return Err(StoreError::InvalidRecord("non-finite feature".into()));
        }
        Ok(())
    }
}

/// Features that never change for a device. `None` is unknown.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedFeatures {
    pub vendor: Option<Vendor>,
    pub model: Option<String>,
    pub color: Option<String>,
}

impl FixedFeatures {
    /// `Vendor::Other` carries no information and maps to unknown.
    pub fn from_fact(f: &DeviceFact) -> Self {
        let vendor = (f.vendor != Vendor::Other).then_some(f.vendor);
        FixedFeatures { vendor, model: f.model.clone(), color: f.color.clone() }
    }

    /// Equal or unknown on either side, field by field.
    pub fn compatible(&self, other: &FixedFeatures) -> bool {
        fn ok<T: PartialEq>(a: &Option<T>, b: &Option<T>) -> bool {
            match (a, b) {
                (Some(x), Some(y)) => x == y,
                _ => true,
            }
        }
        ok(&self.vendor, &other.vendor) && ok(&self.model, &other.model) && ok(&self.color, &other.color)
    }

    /// Sets unknown fields from `other`; known fields are kept.
    pub fn fill(&mut self, other: &FixedFeatures) {
        if self.vendor.is_none() {
            self.vendor = other.vendor;
        }
        if self.model.is_none() {
            self.model.clone_from(&other.model);
        }
        if self.color.is_none() {
            self.color.clone_from(&other.color);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressEpoch {
    pub address: AdvAddress,
    pub first_seen: i64,
    pub last_seen: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceEntry {
    pub device_id: DeviceId,
    pub fixed: FixedFeatures,
    pub addresses: Vec<AddressEpoch>,
    pub packets: Vec<PacketRecord>,
    /// Slot offset estimate, µs. Unknown until the second packet.
    pub tau_fix: Option<f64>,
    /// Residuals folded into `tau_fix` so far.
    pub tau_samples: u32,
    pub latest_status: Option<String>,
    pub latest_activity: Option<String>,
}

impl DeviceEntry {
    pub fn latest(&self) -> Option<&PacketRecord> {
        self.packets.last()
    }

    pub fn first_seen(&self) -> Option<i64> {
        self.packets.first().map(|p| p.timestamp)
    }

    /// Packets with `t0 <= ts < t1`.
    pub fn window(&self, t0: i64, t1: i64) -> &[PacketRecord] {
        let a = self.packets.partition_point(|p| p.timestamp < t0);
        let b = self.packets.partition_point(|p| p.timestamp < t1);
        &self.packets[a..b.max(a)]
    }

    pub fn vendor(&self) -> Vendor {
        self.fixed.vendor.unwrap_or(Vendor::Other)
    }
}

/// Tunables that shape derived per-device state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub nodes: usize,
    /// Silence after which an address no longer identifies its device, µs.
    pub epoch_expiry_us: i64,
    /// Smoothing factor of the slot-offset estimate. The first `1/alpha`
    /// residuals are averaged.
    pub tau_alpha: f64,
    /// Largest step one residual may move the slot offset by, µs.
    pub tau_clamp_us: f64,
    /// Packet gaps above this (µs) do not update the slot offset.
    pub drift_guard_us: i64,
}

impl StoreConfig {
    pub fn with_nodes(nodes: usize) -> Self {
        StoreConfig { nodes, epoch_expiry_us: 20 * 60 * 1_000_000, tau_alpha: 0.1, tau_clamp_us: 10.0, drift_guard_us: 10_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Store {
    config: StoreConfig,
    devices: BTreeMap<DeviceId, DeviceEntry>,
    /// Address → devices that have used it.
    address_index: HashMap<AdvAddress, Vec<DeviceId>>,
    next_id: DeviceId,
    records: usize,
}

impl Store {
    pub fn new(config: StoreConfig) -> Self {
        Store { config, devices: BTreeMap::new(), address_index: HashMap::new(), next_id: 1, records: 0 }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn nodes(&self) -> usize {
        self.config.nodes
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn record_count(&self) -> usize {
        self.records
    }

    pub fn device(&self, id: DeviceId) -> Option<&DeviceEntry> {
        self.devices.get(&id)
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceEntry> {
        self.devices.values()
    }

    /// Creates a device holding `record` as its first packet.
    pub fn create_device(&mut self, record: PacketRecord) -> Result<DeviceId, StoreError> {
        let id = self.next_id;
        self.create_with_id(id, record)?;
        Ok(id)
    }

    fn create_with_id(&mut self, id: DeviceId, record: PacketRecord) -> Result<(), StoreError> {
        record.validate(self.config.nodes)?;
        self.devices.insert(
            id,
            DeviceEntry {
                device_id: id,
                fixed: FixedFeatures::default(),
                addresses: Vec::new(),
                packets: Vec::new(),
                tau_fix: None,
                tau_samples: 0,
                latest_status: None,
                latest_activity: None,
            },
        );
        self.next_id = self.next_id.max(id + 1);
        self.insert(id, record)
    }

    /// Appends `record` to device `id` and updates derived state.
    pub fn insert(&mut self, id: DeviceId, record: PacketRecord) -> Result<(), StoreError> {
        record.validate(self.config.nodes)?;
        let cfg = self.config;
        let dev = self.devices.get_mut(&id).ok_or(StoreError::UnknownDevice(id))?;
        let ts = record.timestamp;
        if let Some(prev) = dev.packets.last() {
            if ts < prev.timestamp {
                return Err(StoreError::OutOfOrder { device: id, last: prev.timestamp, ts });
            }
            let dt = ts - prev.timestamp;
            if dt > 0 && dt <= cfg.drift_guard_us {
                let r = time_residual(ts, prev.timestamp);
                dev.tau_samples += 1;
                dev.tau_fix = Some(match dev.tau_fix {
                    None => r,
                    Some(tau) => {
                        let gain = cfg.tau_alpha.max(1.0 / dev.tau_samples as f64);
                        let step = wrap_residual(r - tau).clamp(-cfg.tau_clamp_us, cfg.tau_clamp_us);
                        wrap_residual(tau + gain * step)
                    }
                });
            }
        }

        let addr = record.adv_address;
        match dev
            .addresses
            .iter_mut()
            .rev()
            .find(|e| e.address == addr && ts - e.last_seen <= cfg.epoch_expiry_us)
        {
            Some(e) => e.last_seen = ts,
            None => {
                dev.addresses.push(AddressEpoch { address: addr, first_seen: ts, last_seen: ts });
                let ids = self.address_index.entry(addr).or_default();
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
        }

        dev.fixed.fill(&FixedFeatures::from_fact(&record.facts));
        if record.facts.status.is_some() {
            dev.latest_status.clone_from(&record.facts.status);
        }
        if record.facts.activity.is_some() {
            dev.latest_activity.clone_from(&record.facts.activity);
        }
        dev.packets.push(record);
        self.records += 1;
        Ok(())
    }

    /// Devices whose epoch for `addr` is live at `ts`.
    pub fn devices_with_address(&self, addr: AdvAddress, ts: i64) -> Vec<DeviceId> {
        let expiry = self.config.epoch_expiry_us;
        self.address_index
            .get(&addr)
            .into_iter()
            .flatten()
            .copied()
            .filter(|id| {
                self.devices[id].addresses.iter().any(|e| {
                    e.address == addr && e.first_seen <= ts && ts - e.last_seen <= expiry
                })
            })
            .collect()
    }

    /// Records with `t0 <= ts < t1`, grouped by device.
    pub fn query_window(&self, t0: i64, t1: i64) -> BTreeMap<DeviceId, &[PacketRecord]> {
        self.devices
            .iter()
            .map(|(&id, d)| (id, d.window(t0, t1)))
            .filter(|(_, w)| !w.is_empty())
            .collect()
    }

    /// Every record in (timestamp, device id) order.
    pub fn records_in_order(&self) -> Vec<(DeviceId, &PacketRecord)> {
        let mut all: Vec<(DeviceId, &PacketRecord)> = self
            .devices
            .iter()
            .flat_map(|(&id, d)| d.packets.iter().map(move |p| (id, p)))
            .collect();
        all.sort_by_key(|(id, p)| (p.timestamp, *id));
        all
    }
}
