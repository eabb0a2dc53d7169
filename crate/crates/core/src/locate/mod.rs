//! Position fixes from multi-node bearings, and trajectory smoothing.
//!
//! World frame: x east, y north, metres, origin at the south-west corner of
//! the area. Bearings are degrees clockwise from north, so a bearing `b`
//! points along `(sin b, cos b)`.

mod kalman;
mod window;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::DeviceId;

pub use kalman::{kalman_smooth, kalman_track, KalmanConfig, KalmanOutput, TrackPoint, Trajectory};
pub use window::{localize_all, localize_device, robust_mean, track_device, LocalizeResult};

#[derive(Debug, Error, PartialEq)]
pub enum LocateError {
    #[error("bearings are parallel within {0}°")]
    DegenerateGeometry(f64),
    #[error("need at least 2 bearings, got {0}")]
    TooFewBearings(usize),
    #[error("node {0} has no pose")]
    UnknownNode(usize),
    #[error("fix timestamps must strictly increase")]
    Unordered,
    #[error("no fixes")]
    Empty,
}

/// Rectangular area `[0, width] × [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        const EPS: f64 = 1e-9;
        (-EPS..=self.width + EPS).contains(&p[0]) && (-EPS..=self.height + EPS).contains(&p[1])
    }

    /// Length of the part of the ray `from + t·dir, t ≥ 0` inside the area.
    pub fn ray_inside_len(&self, from: [f64; 2], dir: [f64; 2]) -> f64 {
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for (o, d, max) in [(from[0], dir[0], self.width), (from[1], dir[1], self.height)] {
            if d.abs() < 1e-12 {
                if o < -1e-9 || o > max + 1e-9 {
                    return 0.0;
                }
                continue;
            }
            let (a, b) = ((0.0 - o) / d, (max - o) / d);
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
        (hi - lo).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodePose {
    pub position: [f64; 2],
    /// Array broadside direction, degrees clockwise from north.
    pub boresight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fix {
    pub device_id: DeviceId,
    pub position: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    /// µs.
    pub timestamp: i64,
    pub nodes_used: usize,
}

#[derive(Serialize, Deserialize)]
struct FixLine {
    ts_us: i64,
    device_id: DeviceId,
    x_m: f64,
    y_m: f64,
    cov: [f64; 4],
    nodes_used: usize,
}

impl Serialize for Fix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let c = self.covariance;
        FixLine {
            ts_us: self.timestamp,
            device_id: self.device_id,
            x_m: self.position[0],
            y_m: self.position[1],
            cov: [c[0][0], c[0][1], c[1][0], c[1][1]],
            nodes_used: self.nodes_used,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Fix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let l = FixLine::deserialize(d)?;
        Ok(Fix {
            device_id: l.device_id,
            position: [l.x_m, l.y_m],
            covariance: [[l.cov[0], l.cov[1]], [l.cov[2], l.cov[3]]],
            timestamp: l.ts_us,
            nodes_used: l.nodes_used,
        })
    }
}

/// One node's bearing to a device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bearing {
    pub node: usize,
    /// World bearing, degrees.
    pub bearing: f64,
    /// dBm.
    pub rss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocateConfig {
    /// Assumed per-bearing noise, degrees. Scales the covariance.
    pub bearing_sigma_deg: f64,
    /// Averaging window for one fix, µs.
    pub window_us: i64,
    /// Samples further than this many MADs from the median are dropped.
    pub mad_k: f64,
    /// Used to resolve front/back ambiguity.
    pub area: Option<Area>,
}

impl Default for LocateConfig {
    fn default() -> Self {
        LocateConfig { bearing_sigma_deg: 4.0, window_us: 3_000_000, mad_k: 2.0, area: None }
    }
}

impl LocateConfig {
    pub fn with_area(area: Area) -> Self {
        LocateConfig { area: Some(area), ..Default::default() }
    }
}

/// Wraps degrees onto `[0, 360)`.
pub fn normalize_deg(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r >= 360.0 { 0.0 } else { r }
}

pub fn bearings_to_world(aoa: f64, pose: &NodePose) -> f64 {
    normalize_deg(pose.boresight + aoa)
}

/// Front and back world bearings consistent with an array-relative angle;
/// a linear array cannot tell `θ` from `180° − θ`.
pub fn candidate_bearings(aoa: f64, pose: &NodePose) -> [f64; 2] {
    [bearings_to_world(aoa, pose), bearings_to_world(180.0 - aoa, pose)]
}

pub fn direction(bearing_deg: f64) -> [f64; 2] {
    let b = bearing_deg.to_radians();
    [b.sin(), b.cos()]
}

/// Compass bearing from `from` to `to`.
pub fn bearing_between(from: [f64; 2], to: [f64; 2]) -> f64 {
    normalize_deg((to[0] - from[0]).atan2(to[1] - from[1]).to_degrees())
}

/// RSS weights `10^(rss/20)`, scaled so the strongest is 1, clamped to
/// `[1e-3, 1]`. Missing RSS counts as 1.
fn rss_weights(obs: &[Bearing]) -> Vec<f64> {
    let lin: Vec<Option<f64>> = obs.iter().map(|o| o.rss.map(|r| 10f64.powf(r / 20.0))).collect();
    let max = lin.iter().flatten().copied().fold(0.0, f64::max);
    lin.iter().map(|l| l.map_or(1.0, |v| if max > 0.0 { (v / max).clamp(1e-3, 1.0) } else { 1.0 })).collect()
}

/// Position estimate before it is attached to a device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub position: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    pub nodes_used: usize,
    /// Weighted sum of squared perpendicular distances to the bearing lines.
    pub cost: f64,
}

fn solve(obs: &[Bearing], poses: &[NodePose], w: &[f64]) -> Option<([f64; 2], [[f64; 2]; 2])> {
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (o, &wi) in obs.iter().zip(w) {
        let p = poses[o.node].position;
        let [s, c] = direction(o.bearing);
        // Normal to the bearing line.
        let n = [c, -s];
        let np = n[0] * p[0] + n[1] * p[1];
        a11 += wi * n[0] * n[0];
        a12 += wi * n[0] * n[1];
        a22 += wi * n[1] * n[1];
        b1 += wi * n[0] * np;
        b2 += wi * n[1] * np;
    }
    let det = a11 * a22 - a12 * a12;
    let scale = (a11 + a22).powi(2);
    if !(det.abs() > 1e-12 * scale) {
        return None;
    }
    let x = [(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det];
    let inv = [[a22 / det, -a12 / det], [-a12 / det, a11 / det]];
    Some((x, inv))
}

fn line_cost(obs: &[Bearing], poses: &[NodePose], w: &[f64], x: [f64; 2]) -> f64 {
    obs.iter()
        .zip(w)
        .map(|(o, wi)| {
            let p = poses[o.node].position;
            let [s, c] = direction(o.bearing);
            wi * (c * (x[0] - p[0]) - s * (x[1] - p[1])).powi(2)
        })
        .sum()
}

/// Weighted least-squares intersection of bearing lines.
///
/// A first pass weights by RSS alone; the second divides by squared range
/// from the first estimate, since a fixed angular error displaces a line
/// in proportion to range. The covariance is the inverse normal matrix of
/// the second pass.
pub fn triangulate(obs: &[Bearing], poses: &[NodePose], cfg: &LocateConfig) -> Result<Estimate, LocateError> {
    if obs.len() < 2 {
        return Err(LocateError::TooFewBearings(obs.len()));
    }
    if let Some(o) = obs.iter().find(|o| o.node >= poses.len()) {
        return Err(LocateError::UnknownNode(o.node));
    }
    let parallel = obs.iter().all(|a| {
        obs.iter().all(|b| {
            let d = (a.bearing - b.bearing).rem_euclid(180.0);
            d.min(180.0 - d) < 1.0
        })
    });
    if parallel {
        return Err(LocateError::DegenerateGeometry(1.0));
    }
    let q = rss_weights(obs);
    let (x1, _) = solve(obs, poses, &q).ok_or(LocateError::DegenerateGeometry(1.0))?;
    let sigma = cfg.bearing_sigma_deg.to_radians().max(1e-6);
    let w: Vec<f64> = obs
        .iter()
        .zip(&q)
        .map(|(o, qi)| {
            let p = poses[o.node].position;
            let r = ((x1[0] - p[0]).powi(2) + (x1[1] - p[1]).powi(2)).sqrt().max(0.1);
            qi / (r * sigma).powi(2)
        })
        .collect();
    let (x, cov) = solve(obs, poses, &w).ok_or(LocateError::DegenerateGeometry(1.0))?;
    Ok(Estimate { position: x, covariance: cov, nodes_used: obs.len(), cost: line_cost(obs, poses, &w, x) })
}

/// Per-node array-relative angle to be turned into a bearing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeBearing {
    pub node: usize,
    pub aoa: f64,
    pub rss: Option<f64>,
}

/// Triangulates array-relative angles, picking front or back per node.
///
/// A candidate whose ray leaves the area at once is discarded. Nodes that
/// stay ambiguous are enumerated and the combination whose solution lies
/// ahead of every node, inside the area, with least cost wins.
pub fn triangulate_relative(
    obs: &[RelativeBearing],
    poses: &[NodePose],
    cfg: &LocateConfig,
) -> Result<Estimate, LocateError> {
    if let Some(o) = obs.iter().find(|o| o.node >= poses.len()) {
        return Err(LocateError::UnknownNode(o.node));
    }
    let options: Vec<Vec<f64>> = obs
        .iter()
        .map(|o| {
            let pose = &poses[o.node];
            let c = candidate_bearings(o.aoa, pose);
            if (c[0] - c[1]).abs() < 1e-9 {
                return vec![c[0]];
            }
            let kept: Vec<f64> = match cfg.area {
                Some(area) => c.into_iter().filter(|b| area.ray_inside_len(pose.position, direction(*b)) > 0.1).collect(),
                None => c.to_vec(),
            };
            if kept.is_empty() { vec![c[0]] } else { kept }
        })
        .collect();
    let ambiguous: Vec<usize> = (0..obs.len()).filter(|&i| options[i].len() > 1).collect();
    // Caps the search at 2^8 combinations; extra ambiguous nodes keep
    // their front bearing.
    let searched = &ambiguous[..ambiguous.len().min(8)];
    let mut best: Option<(bool, f64, Estimate)> = None;
    let mut last_err = LocateError::TooFewBearings(obs.len());
    for mask in 0u32..(1 << searched.len()) {
        let bearings: Vec<Bearing> = obs
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let pick = searched.iter().position(|&j| j == i).map_or(0, |k| ((mask >> k) & 1) as usize);
                Bearing { node: o.node, bearing: options[i][pick], rss: o.rss }
            })
            .collect();
        let est = match triangulate(&bearings, poses, cfg) {
            Ok(e) => e,
            Err(e) => {
                last_err = e;
                continue;
            }
        };
        let ahead = bearings.iter().all(|b| {
            let p = poses[b.node].position;
            let d = direction(b.bearing);
            (est.position[0] - p[0]) * d[0] + (est.position[1] - p[1]) * d[1] > -1e-6
        });
        let inside = cfg.area.is_none_or(|a| a.contains(est.position));
        let plausible = ahead && inside;
        let better = match &best {
            None => true,
            Some((bp, bc, _)) => (plausible && !bp) || (plausible == *bp && est.cost < *bc),
        };
        if better {
            best = Some((plausible, est.cost, est));
        }
    }
    best.map(|(_, _, e)| e).ok_or(last_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(x: f64, y: f64, b: f64) -> NodePose {
        NodePose { position: [x, y], boresight: b }
    }

    #[test]
    fn world_bearing_examples() {
        assert_eq!(bearings_to_world(0.0, &pose(0.0, 0.0, 90.0)), 90.0);
        assert_eq!(bearings_to_world(-30.0, &pose(0.0, 0.0, 10.0)), 340.0);
        assert_eq!(normalize_deg(-1e-18), 0.0);
        assert_eq!(bearing_between([0.0, 0.0], [1.0, 0.0]), 90.0);
        assert_eq!(bearing_between([0.0, 0.0], [0.0, -1.0]), 180.0);
    }

    #[test]
    fn symmetric_crossing() {
        let poses = [pose(0.0, 0.0, 0.0), pose(10.0, 0.0, 0.0)];
        let obs = [
            Bearing { node: 0, bearing: 45.0, rss: None },
            Bearing { node: 1, bearing: 315.0, rss: None },
        ];
        let e = triangulate(&obs, &poses, &LocateConfig::default()).unwrap();
        assert!((e.position[0] - 5.0).abs() < 1e-9 && (e.position[1] - 5.0).abs() < 1e-9);
        assert_eq!(e.nodes_used, 2);
        let c = e.covariance;
        assert!((c[0][1] - c[1][0]).abs() < 1e-12 && c[0][0] > 0.0 && c[0][0] * c[1][1] >= c[0][1] * c[0][1]);
    }

    #[test]
    fn noiseless_four_nodes_exact() {
        let poses = [pose(0.0, 0.0, 45.0), pose(6.5, 0.0, 315.0), pose(6.5, 9.5, 225.0), pose(0.0, 9.5, 135.0)];
        for target in [[1.0, 2.0], [3.3, 7.7], [6.0, 0.5], [0.2, 9.0]] {
            let obs: Vec<Bearing> = poses
                .iter()
                .enumerate()
                .map(|(n, p)| Bearing { node: n, bearing: bearing_between(p.position, target), rss: Some(-40.0 - n as f64) })
                .collect();
            let e = triangulate(&obs, &poses, &LocateConfig::default()).unwrap();
            let err = ((e.position[0] - target[0]).powi(2) + (e.position[1] - target[1]).powi(2)).sqrt();
            assert!(err <= 1e-6, "{target:?} {err}");
        }
    }

    #[test]
    fn degenerate_and_short_inputs() {
        let poses = [pose(0.0, 0.0, 0.0), pose(10.0, 0.0, 0.0)];
        let cfg = LocateConfig::default();
        let par = [
            Bearing { node: 0, bearing: 10.0, rss: None },
            Bearing { node: 1, bearing: 190.5, rss: None },
        ];
        assert_eq!(triangulate(&par, &poses, &cfg), Err(LocateError::DegenerateGeometry(1.0)));
        assert_eq!(triangulate(&par[..1], &poses, &cfg), Err(LocateError::TooFewBearings(1)));
        let bad = [par[0], Bearing { node: 5, bearing: 0.0, rss: None }];
        assert_eq!(triangulate(&bad, &poses, &cfg), Err(LocateError::UnknownNode(5)));
    }

    #[test]
    fn ray_inside_length() {
        let a = Area { width: 4.0, height: 2.0 };
        assert!((a.ray_inside_len([0.0, 1.0], [1.0, 0.0]) - 4.0).abs() < 1e-12);
        assert_eq!(a.ray_inside_len([0.0, 1.0], [-1.0, 0.0]), 0.0);
        assert_eq!(a.ray_inside_len([5.0, 1.0], [1.0, 0.0]), 0.0);
    }

    #[test]
    fn front_back_resolved_by_area() {
        let area = Area { width: 6.5, height: 9.5 };
        // Nodes on the west and south walls facing inward.
        let poses = [pose(0.0, 4.0, 90.0), pose(3.0, 0.0, 0.0)];
        let target = [4.0, 6.0];
        let obs: Vec<RelativeBearing> = poses
            .iter()
            .enumerate()
            .map(|(n, p)| {
                let rel = normalize_deg(bearing_between(p.position, target) - p.boresight);
                let rel = if rel > 180.0 { rel - 360.0 } else { rel };
                RelativeBearing { node: n, aoa: rel, rss: None }
            })
            .collect();
        let e = triangulate_relative(&obs, &poses, &LocateConfig::with_area(area)).unwrap();
        assert!((e.position[0] - 4.0).abs() < 1e-9 && (e.position[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn front_back_interior_nodes_enumerated() {
        // Nodes inside the area: both candidates survive the bounds test.
        let area = Area { width: 10.0, height: 10.0 };
        let poses = [pose(2.0, 2.0, 0.0), pose(8.0, 2.0, 0.0), pose(5.0, 8.0, 90.0)];
        let target = [6.0, 5.0];
        let obs: Vec<RelativeBearing> = poses
            .iter()
            .enumerate()
            .map(|(n, p)| {
                let mut rel = normalize_deg(bearing_between(p.position, target) - p.boresight);
                if rel > 180.0 {
                    rel -= 360.0;
                }
                if rel > 90.0 {
                    rel = 180.0 - rel;
                } else if rel < -90.0 {
                    rel = -180.0 - rel;
                }
                RelativeBearing { node: n, aoa: rel, rss: None }
            })
            .collect();
        let e = triangulate_relative(&obs, &poses, &LocateConfig::with_area(area)).unwrap();
        assert!((e.position[0] - 6.0).abs() < 1e-6 && (e.position[1] - 5.0).abs() < 1e-6, "{:?}", e.position);
    }

    #[test]
    fn fix_json_shape() {
        let f = Fix { device_id: 3, position: [1.0, 2.5], covariance: [[0.1, 0.0], [0.0, 0.2]], timestamp: 9, nodes_used: 4 };
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"ts_us":9,"device_id":3,"x_m":1.0,"y_m":2.5,"cov":[0.1,0.0,0.0,0.2],"nodes_used":4}"#);
        assert_eq!(serde_json::from_str::<Fix>(&s).unwrap(), f);
    }
}
