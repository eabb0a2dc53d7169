//! Aggregate queries over a grouped store: new visitors, zone popularity
//! and visitor flow.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AppsError;
use crate::frames::Vendor;
use crate::locate::{localize_device, track_device, Area, KalmanConfig, LocateConfig, NodePose, Trajectory};
use crate::store::{DeviceId, Store};

/// Named polygon, vertices in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub name: String,
    pub points: Vec<[f64; 2]>,
}

impl Zone {
    pub fn rect(name: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Zone { name: name.into(), points: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]] }
    }

    /// Even-odd rule; points on an edge may fall either way.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.points.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (self.points[i], self.points[j]);
            if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Proper crossing; touching endpoints do not count.
fn segments_cross(p: ([f64; 2], [f64; 2]), q: ([f64; 2], [f64; 2])) -> bool {
    let d1 = cross(q.0, q.1, p.0);
    let d2 = cross(q.0, q.1, p.1);
    let d3 = cross(p.0, p.1, q.0);
    let d4 = cross(p.0, p.1, q.1);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn on_boundary(z: &Zone, p: [f64; 2]) -> bool {
    z.edges().any(|(a, b)| {
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let t = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])) / (len * len);
        cross(a, b, p).abs() <= 1e-9 * len.max(1.0) && (-1e-9..=1.0 + 1e-9).contains(&t)
    })
}

fn strictly_inside(z: &Zone, p: [f64; 2]) -> bool {
    z.contains(p) && !on_boundary(z, p)
}

fn overlap(a: &Zone, b: &Zone) -> bool {
    let mid = |z: &Zone| {
        let n = z.points.len() as f64;
        [z.points.iter().map(|p| p[0]).sum::<f64>() / n, z.points.iter().map(|p| p[1]).sum::<f64>() / n]
    };
    a.edges().any(|e| b.edges().any(|f| segments_cross(e, f)))
        || a.points.iter().any(|&p| strictly_inside(b, p))
        || b.points.iter().any(|&p| strictly_inside(a, p))
        || strictly_inside(b, mid(a))
        || strictly_inside(a, mid(b))
}

#[derive(Deserialize)]
struct ZoneFile {
    zone: Vec<Zone>,
}

/// Parses `[[zone]]` tables with `name` and `points = [[x, y], ...]`.
pub fn parse_zones(text: &str) -> Result<Vec<Zone>, AppsError> {
    let f: ZoneFile = toml::from_str(text).map_err(|e| AppsError::Zones(e.to_string()))?;
    Ok(f.zone)
}

pub fn load_zones(path: &Path) -> Result<Vec<Zone>, AppsError> {
    parse_zones(&std::fs::read_to_string(path)?)
}

/// Zones need three or more vertices, must lie inside `area` and must not
/// overlap each other.
pub fn validate_zones(zones: &[Zone], area: Option<Area>) -> Result<(), AppsError> {
    for (i, z) in zones.iter().enumerate() {
        if z.points.len() < 3 {
            return Err(AppsError::Zones(format!("zone {:?} has fewer than 3 points", z.name)));
        }
        if let Some(a) = area {
            if let Some(p) = z.points.iter().find(|p| !(0.0..=a.width).contains(&p[0]) || !(0.0..=a.height).contains(&p[1])) {
                return Err(AppsError::Zones(format!("zone {:?} point {p:?} outside the area", z.name)));
            }
        }
        if let Some(o) = zones[..i].iter().find(|o| overlap(o, z)) {
            return Err(AppsError::Zones(format!("zones {:?} and {:?} overlap", o.name, z.name)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Visitors {
    /// First ever seen inside the window.
    pub new: Vec<DeviceId>,
    /// Seen in the window but also before it.
    pub returning: Vec<DeviceId>,
}

/// Devices heard in `[t0, t1)`, split by whether they were seen before.
pub fn visitors(store: &Store, t0: i64, t1: i64) -> Visitors {
    let mut v = Visitors::default();
    for (id, _) in store.query_window(t0, t1) {
        let first = store.device(id).and_then(|d| d.first_seen()).unwrap_or(t0);
        if first >= t0 { v.new.push(id) } else { v.returning.push(id) }
    }
    v
}

/// Restricts new visitors to those first located inside `zone`.
#[derive(Debug, Clone, Copy)]
pub struct ZoneFilter<'a> {
    pub zone: &'a Zone,
    pub poses: &'a [NodePose],
    pub locate: &'a LocateConfig,
}

/// Devices whose first appearance falls in `[t0, t1)`. With a zone, the
/// fix over the device's first `locate.window_us` must lie inside it.
pub fn count_new_visitors(store: &Store, t0: i64, t1: i64, zone: Option<ZoneFilter<'_>>) -> (usize, Vec<DeviceId>) {
    let mut ids = visitors(store, t0, t1).new;
    if let Some(z) = zone {
        ids.retain(|&id| {
            let Some(dev) = store.device(id) else { return false };
            let first = dev.first_seen().unwrap_or(t0);
            localize_device(dev, first, first + z.locate.window_us, z.poses, z.locate)
                .is_some_and(|f| z.zone.contains(f.position))
        });
    }
    (ids.len(), ids)
}

/// Groups devices whose trajectories stay within `radius_m` of each other
/// (median distance over shared time steps) into one person. Each group
/// is sorted; groups are ordered by their first member.
pub fn cluster_persons(tracks: &[(DeviceId, Trajectory)], step_us: i64, radius_m: f64) -> Vec<Vec<DeviceId>> {
    let binned: Vec<BTreeMap<i64, [f64; 2]>> = tracks
        .iter()
        .map(|(_, t)| t.points.iter().map(|p| (p.ts_us.div_euclid(step_us.max(1)), [p.x, p.y])).collect())
        .collect();
    let mut parent: Vec<usize> = (0..tracks.len()).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..tracks.len() {
        for j in i + 1..tracks.len() {
            let mut d: Vec<f64> = binned[i]
                .iter()
                .filter_map(|(k, a)| binned[j].get(k).map(|b| (a[0] - b[0]).hypot(a[1] - b[1])))
                .collect();
            if d.len() < 2 {
                continue;
            }
            d.sort_by(f64::total_cmp);
            let n = d.len();
            let median = if n % 2 == 1 { d[n / 2] } else { (d[n / 2 - 1] + d[n / 2]) / 2.0 };
            if median < radius_m {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<DeviceId>> = BTreeMap::new();
    for i in 0..tracks.len() {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().push(tracks[i].0);
    }
    groups.into_values().map(|mut g| {
        g.sort_unstable();
        g
    }).collect()
}

/// Longest stretch (µs) the trajectory spends inside `zone`. Points more
/// than `max_gap_us` apart break a stretch.
pub fn longest_dwell(traj: &Trajectory, zone: &Zone, max_gap_us: i64) -> i64 {
    let (mut best, mut start, mut prev): (i64, Option<i64>, Option<i64>) = (0, None, None);
    for p in &traj.points {
        let inside = zone.contains([p.x, p.y]);
        let contiguous = prev.is_some_and(|t| p.ts_us - t <= max_gap_us);
        start = match (inside, start) {
            (true, Some(s)) if contiguous => Some(s),
            (true, _) => Some(p.ts_us),
            (false, _) => None,
        };
        if let Some(s) = start {
            best = best.max(p.ts_us - s);
        }
        prev = Some(p.ts_us);
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopularityOptions {
    /// Minimum continuous time inside a zone for a visit, µs.
    pub dwell_us: i64,
    /// Devices closer than this (median) are one person, m. Zero disables.
    pub person_radius_m: f64,
    /// Fix window for trajectories, µs.
    pub track_step_us: i64,
    pub locate: LocateConfig,
    pub kalman: KalmanConfig,
}

impl Default for PopularityOptions {
    fn default() -> Self {
        PopularityOptions {
            dwell_us: 60_000_000,
            person_radius_m: 0.5,
            track_step_us: 3_000_000,
            locate: LocateConfig::default(),
            kalman: KalmanConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ZoneCount {
    pub zone: String,
    pub visits: usize,
}

/// Smoothed trajectories over `[t0, t1)` for every device heard in it.
pub fn trajectories(
    store: &Store,
    t0: i64,
    t1: i64,
    poses: &[NodePose],
    step_us: i64,
    locate: &LocateConfig,
    kalman: &KalmanConfig,
) -> Vec<(DeviceId, Trajectory)> {
    let cfg = LocateConfig { window_us: step_us, ..*locate };
    store
        .query_window(t0, t1)
        .into_iter()
        .filter_map(|(id, packets)| {
            let dev = store.device(id)?;
            // Align windows to the step grid so devices share bins.
            let first = packets.first()?.timestamp;
            let last = packets.last()?.timestamp;
            let a = t0 + (first - t0).div_euclid(step_us) * step_us;
            let (_, traj) = track_device(dev, a, (last + 1).min(t1), poses, &cfg, kalman)?;
            Some((id, traj))
        })
        .collect()
}

/// People who dwelt in each zone for at least `dwell_us` within `[t0, t1)`.
/// Each person counts at most once per zone.
pub fn zone_popularity(
    store: &Store,
    t0: i64,
    t1: i64,
    zones: &[Zone],
    poses: &[NodePose],
    opts: &PopularityOptions,
) -> Result<Vec<ZoneCount>, AppsError> {
    if opts.track_step_us <= 0 || opts.dwell_us < 0 {
        return Err(AppsError::InvalidArgument("track step must be positive and dwell non-negative".into()));
    }
    validate_zones(zones, opts.locate.area)?;
    let tracks = trajectories(store, t0, t1, poses, opts.track_step_us, &opts.locate, &opts.kalman);
    let persons = if opts.person_radius_m > 0.0 {
        cluster_persons(&tracks, opts.track_step_us, opts.person_radius_m)
    } else {
        tracks.iter().map(|(id, _)| vec![*id]).collect()
    };
    let by_id: BTreeMap<DeviceId, &Trajectory> = tracks.iter().map(|(id, t)| (*id, t)).collect();
    let max_gap = 2 * opts.track_step_us;
    Ok(zones
        .iter()
        .map(|z| {
            let visits = persons
                .iter()
                .filter(|p| p.iter().any(|id| by_id.get(id).is_some_and(|t| longest_dwell(t, z, max_gap) >= opts.dwell_us)))
                .count();
            ZoneCount { zone: z.name.clone(), visits }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlowBin {
    pub start_us: i64,
    pub new_visitors: usize,
    pub apple: usize,
    pub android: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlowReport {
    pub bin_us: i64,
    pub bins: Vec<FlowBin>,
}

impl FlowReport {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.new_visitors).sum()
    }

    /// `bin_start` is in seconds from the stream origin.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_start,new_visitors,apple,android\n");
        for b in &self.bins {
            let _ = writeln!(s, "{},{},{},{}", b.start_us as f64 / 1e6, b.new_visitors, b.apple, b.android);
        }
        s
    }
}

/// New visitors per `bin_us` bin over `[t0, t1)`, with the Apple/Android
/// split. The last bin may be shorter.
pub fn visitor_flow(store: &Store, t0: i64, t1: i64, bin_us: i64) -> Result<FlowReport, AppsError> {
    if bin_us <= 0 {
        return Err(AppsError::InvalidArgument("bin must be positive".into()));
    }
    let n = if t1 > t0 { ((t1 - t0) + bin_us - 1) / bin_us } else { 0 };
    let mut bins: Vec<FlowBin> =
        (0..n).map(|i| FlowBin { start_us: t0 + i * bin_us, new_visitors: 0, apple: 0, android: 0 }).collect();
    for dev in store.devices() {
        let Some(first) = dev.first_seen() else { continue };
        if !(t0..t1).contains(&first) {
            continue;
        }
        let b = &mut bins[((first - t0) / bin_us) as usize];
        b.new_visitors += 1;
        match dev.vendor() {
            Vendor::Apple => b.apple += 1,
            Vendor::Android => b.android += 1,
            _ => {}
        }
    }
    Ok(FlowReport { bin_us, bins })
}
