//! Comparing estimated tracks with simulator ground truth.

use std::collections::{BTreeMap, HashMap};

use crate::frames::AdvAddress;
use crate::simulate::GroundTruth;
use crate::store::{DeviceId, Store};

/// Discrete Fréchet distance between two polylines; infinite if either is
/// empty.
pub fn frechet(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let d = |i: usize, j: usize| (a[i][0] - b[j][0]).hypot(a[i][1] - b[j][1]);
    let mut prev = vec![0.0f64; b.len()];
    let mut cur = vec![0.0; b.len()];
    for i in 0..a.len() {
        for j in 0..b.len() {
            let reach = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]),
            };
            cur[j] = d(i, j).max(reach);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len() - 1]
}

/// Joins a grouped store with the simulator's labels.
#[derive(Debug, Clone, Default)]
pub struct TruthIndex {
    /// Engine device → majority true device.
    owner: HashMap<DeviceId, usize>,
    /// True device → (timestamp, position), time-sorted.
    tracks: BTreeMap<usize, Vec<(i64, [f64; 2])>>,
    correct: usize,
    total: usize,
}

impl TruthIndex {
    pub fn new(store: &Store, truth: &[GroundTruth]) -> Self {
        let by_key: HashMap<(i64, AdvAddress), usize> = truth.iter().map(|t| ((t.ts_us, t.addr), t.device)).collect();
        let mut tracks: BTreeMap<usize, Vec<(i64, [f64; 2])>> = BTreeMap::new();
        for t in truth {
            tracks.entry(t.device).or_default().push((t.ts_us, t.position));
        }
        for v in tracks.values_mut() {
            v.sort_by_key(|p| p.0);
        }
        let mut owner = HashMap::new();
        let (mut correct, mut total) = (0, 0);
        for dev in store.devices() {
            let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
            for p in &dev.packets {
                if let Some(&d) = by_key.get(&(p.timestamp, p.adv_address)) {
                    *votes.entry(d).or_default() += 1;
                }
            }
            total += votes.values().sum::<usize>();
            // Ties go to the lowest true id.
            if let Some((d, n)) = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
                owner.insert(dev.device_id, *d);
                correct += n;
            }
        }
        TruthIndex { owner, tracks, correct, total }
    }

    pub fn true_device(&self, id: DeviceId) -> Option<usize> {
        self.owner.get(&id).copied()
    }

    /// Fraction of labelled packets whose engine device maps to their true
    /// device.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 { 1.0 } else { self.correct as f64 / self.total as f64 }
    }

    /// True position of `device` at its last emission at or before `ts`.
    pub fn position(&self, device: usize, ts: i64) -> Option<[f64; 2]> {
        let v = self.tracks.get(&device)?;
        let i = v.partition_point(|p| p.0 <= ts);
        v.get(i.saturating_sub(1)).map(|p| p.1)
    }

    /// Label for an engine device at `ts`.
    pub fn label(&self, id: DeviceId, ts: i64) -> Option<[f64; 2]> {
        self.position(self.true_device(id)?, ts)
    }

    /// True path of `device` within `[t0, t1)`, one point per `step_us`.
    pub fn path(&self, device: usize, t0: i64, t1: i64, step_us: i64) -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        let mut t = t0;
        while t < t1 {
            out.extend(self.position(device, t));
            t += step_us.max(1);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frechet_known_values() {
        let a = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let b = [[0.0, 1.0], [1.0, 1.0], [2.0, 1.0]];
        assert!((frechet(&a, &b) - 1.0).abs() < 1e-12);
        assert_eq!(frechet(&a, &a), 0.0);
        // Reversed direction pays for the endpoints.
        let r = [[2.0, 0.0], [1.0, 0.0], [0.0, 0.0]];
        assert!((frechet(&a, &r) - 2.0).abs() < 1e-12);
        // Uneven sampling of the same segment.
        let fine = [[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [1.5, 0.0], [2.0, 0.0]];
        assert!((frechet(&a, &fine) - 0.5).abs() < 1e-12);
        assert!(frechet(&a, &[]).is_infinite());
    }

    #[test]
    fn frechet_is_symmetric_and_bounded_by_hausdorff_pairs() {
        let a = [[0.0, 0.0], [3.0, 4.0], [6.0, 0.0]];
        let b = [[0.0, 1.0], [3.0, 3.0], [5.0, 0.0], [6.0, 1.0]];
        assert_eq!(frechet(&a, &b), frechet(&b, &a));
        assert!(frechet(&a, &b) >= 1.0);
    }
}
