//! Windowed localisation over the store.

use super::{kalman_track, triangulate_relative, Fix, KalmanConfig, LocateConfig, NodePose, RelativeBearing, Trajectory};
use crate::store::{DeviceEntry, DeviceId, PacketRecord, Store};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalizeResult {
    pub fixes: Vec<Fix>,
    /// Devices with packets in the window but fewer than 2 usable nodes.
    pub skipped: Vec<DeviceId>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

/// Mean after dropping samples more than `k` MADs from the median.
pub fn robust_mean(values: &[f64], k: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - m).abs()).collect();
    let mad = median(&mut dev);
    let kept: Vec<f64> = values.iter().copied().filter(|x| (x - m).abs() <= k * mad).collect();
    Some(kept.iter().sum::<f64>() / kept.len() as f64)
}

fn fix_from_packets(id: DeviceId, packets: &[PacketRecord], poses: &[NodePose], cfg: &LocateConfig) -> Option<Fix> {
    let last = packets.last()?;
    let nodes = poses.len().min(packets[0].phy.len());
    let obs: Vec<RelativeBearing> = (0..nodes)
        .filter_map(|n| {
            let aoa: Vec<f64> = packets.iter().filter_map(|p| p.phy[n].aoa).collect();
            let rss: Vec<f64> = packets.iter().filter_map(|p| p.phy[n].rss).collect();
            Some(RelativeBearing { node: n, aoa: robust_mean(&aoa, cfg.mad_k)?, rss: robust_mean(&rss, cfg.mad_k) })
        })
        .collect();
    if obs.len() < 2 {
        return None;
    }
    let e = triangulate_relative(&obs, poses, cfg).ok()?;
    Some(Fix { device_id: id, position: e.position, covariance: e.covariance, timestamp: last.timestamp, nodes_used: e.nodes_used })
}

/// Fix for one device from its packets with `t0 <= ts < t1`.
pub fn localize_device(dev: &DeviceEntry, t0: i64, t1: i64, poses: &[NodePose], cfg: &LocateConfig) -> Option<Fix> {
    fix_from_packets(dev.device_id, dev.window(t0, t1), poses, cfg)
}

/// One fix per device heard in `[t0, t1)`, in device-id order.
pub fn localize_all(store: &Store, t0: i64, t1: i64, poses: &[NodePose], cfg: &LocateConfig) -> LocalizeResult {
    let mut out = LocalizeResult::default();
    for (id, packets) in store.query_window(t0, t1) {
        match fix_from_packets(id, packets, poses, cfg) {
            Some(f) => out.fixes.push(f),
            None => out.skipped.push(id),
        }
    }
    out
}

/// Fixes over consecutive `cfg.window_us` windows, then smoothed.
pub fn track_device(
    dev: &DeviceEntry,
    t0: i64,
    t1: i64,
    poses: &[NodePose],
    cfg: &LocateConfig,
    kalman: &KalmanConfig,
) -> Option<(Vec<Fix>, Trajectory)> {
    let step = cfg.window_us.max(1);
    let mut fixes = Vec::new();
    let mut t = t0;
    while t < t1 {
        if let Some(f) = localize_device(dev, t, (t + step).min(t1), poses, cfg) {
            fixes.push(f);
        }
        t += step;
    }
    let traj = kalman_track(&fixes, kalman).ok()?;
    Some((fixes, traj))
}
