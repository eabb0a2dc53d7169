//! Packet grouping: assigns each packet to a device across address
//! randomisation.
//!
//! 1. A live advertising address identifies its device directly.
//! 2. Otherwise devices whose fixed features contradict the packet are
//!    ruled out.
//! 3. The remaining devices are scored against their latest packet on slot
//!    alignment, AoA, CFO and RSS. The lowest score wins if it is within
//!    `s_thre`; failing that a new device is created.

pub mod params;
pub mod time;

use thiserror::Error;

use crate::frames::AdvAddress;
use crate::store::{DeviceEntry, DeviceId, FixedFeatures, PacketRecord, Store, StoreError};

pub use params::{GroupingParams, ParamsError};
pub use time::{time_residual, wrap_residual, TimeAlignment, SLOT_US};

#[derive(Debug, Error)]
pub enum GroupingError {
    #[error("address {addr} is live on devices {devices:?}")]
    AmbiguousAddress { addr: AdvAddress, devices: Vec<DeviceId> },
    #[error("device {0} has no packets")]
    NoHistory(DeviceId),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Params(#[from] params::ParamsError),
}

/// Step I.
pub fn match_address(packet: &PacketRecord, store: &Store) -> Result<Option<DeviceId>, GroupingError> {
    let ids = store.devices_with_address(packet.adv_address, packet.timestamp);
    match ids.len() {
        0 => Ok(None),
        1 => Ok(Some(ids[0])),
        _ => Err(GroupingError::AmbiguousAddress { addr: packet.adv_address, devices: ids }),
    }
}

/// Step II: devices whose fixed features are compatible with the packet.
pub fn filter_fixed(packet: &PacketRecord, store: &Store) -> Vec<DeviceId> {
    let f = FixedFeatures::from_fact(&packet.facts);
    store.devices().filter(|d| d.fixed.compatible(&f)).map(|d| d.device_id).collect()
}

fn mean_abs_delta(
    a: &PacketRecord,
    b: &PacketRecord,
    get: impl Fn(&crate::store::NodeObservation) -> Option<f64>,
) -> Option<f64> {
    let (sum, n) = a
        .phy
        .iter()
        .zip(&b.phy)
        .filter_map(|(x, y)| Some((get(x)? - get(y)?).abs()))
        .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Dissimilarity between `packet` and the device's latest packet. Terms
/// that cannot be evaluated are left out and the remaining weights
/// rescaled; `None` if nothing can be compared.
pub fn score(packet: &PacketRecord, dev: &DeviceEntry, params: &GroupingParams) -> Option<f64> {
    let last = dev.latest()?;
    let mut acc = 0.0;
    let mut wsum = 0.0;
    let dt = packet.timestamp.abs_diff(last.timestamp);
    if let Some(tau) = dev.tau_fix {
        if dt <= params.drift_guard_us as u64 && params.w_ts > 0.0 {
            let dev_us = wrap_residual(time_residual(packet.timestamp, last.timestamp) - tau).abs();
            acc += params.w_ts * dev_us / params.ts_thre;
            wsum += params.w_ts;
        }
    }
    let terms = [
        (params.w_aoa, params.aoa_thre, mean_abs_delta(packet, last, |o| o.aoa)),
        (params.w_cfo, params.cfo_thre, mean_abs_delta(packet, last, |o| o.cfo)),
        (params.w_rss, params.rss_thre, mean_abs_delta(packet, last, |o| o.rss)),
    ];
    for (w, thre, delta) in terms {
        if let (Some(d), true) = (delta, w > 0.0) {
            acc += w * d / thre;
            wsum += w;
        }
    }
    (wsum > 0.0).then(|| acc / wsum)
}

/// Step III. Candidates that cannot be compared on any feature are
/// omitted from the result.
pub fn score_candidates(
    packet: &PacketRecord,
    candidates: &[DeviceId],
    params: &GroupingParams,
    store: &Store,
) -> Result<Vec<(DeviceId, f64)>, GroupingError> {
    let mut out = Vec::with_capacity(candidates.len());
    for &id in candidates {
        let dev = store.device(id).ok_or(StoreError::UnknownDevice(id))?;
        if dev.packets.is_empty() {
            return Err(GroupingError::NoHistory(id));
        }
        if let Some(s) = score(packet, dev, params) {
            out.push((id, s));
        }
    }
    Ok(out)
}

/// Outcome of one grouping decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub device_id: DeviceId,
    pub created: bool,
    /// Winning score; `None` for address matches and new devices.
    pub score: Option<f64>,
}

/// Runs Steps I to III and stores the packet.
pub fn ingest(packet: PacketRecord, store: &mut Store, params: &GroupingParams) -> Result<Assignment, GroupingError> {
    if let Some(id) = match_address(&packet, store)? {
        store.insert(id, packet)?;
        return Ok(Assignment { device_id: id, created: false, score: None });
    }
    // A device can only take a packet newer than everything it holds.
    let candidates: Vec<DeviceId> = filter_fixed(&packet, store)
        .into_iter()
        .filter(|id| store.device(*id).and_then(DeviceEntry::latest).is_some_and(|p| p.timestamp < packet.timestamp))
        .collect();
    let scored = score_candidates(&packet, &candidates, params, store)?;
    let best = scored.into_iter().fold(None, |best: Option<(DeviceId, f64)>, (id, s)| match best {
        Some((_, bs)) if bs <= s => best,
        _ => Some((id, s)),
    });
    match best {
        Some((id, s)) if s <= params.s_thre => {
            store.insert(id, packet)?;
            Ok(Assignment { device_id: id, created: false, score: Some(s) })
        }
        _ => {
            let id = store.create_device(packet)?;
            Ok(Assignment { device_id: id, created: true, score: None })
        }
    }
}

/// Ingests a time-ordered stream, returning one assignment per packet.
pub fn ingest_all(
    packets: impl IntoIterator<Item = PacketRecord>,
    store: &mut Store,
    params: &GroupingParams,
) -> Result<Vec<Assignment>, GroupingError> {
    packets.into_iter().map(|p| ingest(p, store, params)).collect()
}
