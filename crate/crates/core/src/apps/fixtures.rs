//! Simulator fixtures for the reporting case studies: visitor counting,
//! station popularity and letter tracing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Zone;
use crate::locate::Area;
use crate::simulate::{wall_nodes, DeviceSpec, DeviceState, Profile, Scenario, ScenarioKind, StateInterval};

fn present(d: &mut DeviceSpec, start_s: f64, end_s: f64) {
    d.schedule = vec![StateInterval { start_s, end_s, state: DeviceState::Active }];
}

const PHONES: [Profile; 3] = [Profile::Iphone, Profile::Samsung, Profile::Pixel];
const ANY: [Profile; 4] = [Profile::Iphone, Profile::Airpods, Profile::Samsung, Profile::Pixel];

/// Visitor-count window used by [`visitor_fixture`], s.
pub const VISITOR_WINDOW_S: (f64, f64) = (600.0, 1200.0);

/// A 20 min lab scenario: `returning` devices present throughout, two that
/// leave after 5 min, and `new` devices arriving during the last 10 min.
pub fn visitor_fixture(new: usize, returning: usize, seed: u64) -> Scenario {
    let mut sc = Scenario::preset(ScenarioKind::Lab, VISITOR_WINDOW_S.1, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7669_7369_746f_7273);
    let (w, h) = (sc.area.width, sc.area.height);
    let add = |rng: &mut ChaCha8Rng, start: f64, end: f64| {
        let p = [rng.random_range(0.5..w - 0.5), rng.random_range(0.5..h - 0.5)];
        let q = [rng.random_range(0.5..w - 0.5), rng.random_range(0.5..h - 0.5)];
        let mut d = DeviceSpec::new(ANY[rng.random_range(0..ANY.len())], p);
        d.waypoints.push(q);
        d.speed = rng.random_range(0.0..0.3);
        d.loop_path = true;
        present(&mut d, start, end);
        d
    };
    for _ in 0..returning {
        let d = add(&mut rng, 0.0, VISITOR_WINDOW_S.1);
        sc.devices.push(d);
    }
    for _ in 0..2 {
        let d = add(&mut rng, 0.0, 300.0);
        sc.devices.push(d);
    }
    for _ in 0..new {
        let start = rng.random_range(VISITOR_WINDOW_S.0 + 20.0..VISITOR_WINDOW_S.1 - 60.0);
        let d = add(&mut rng, start, VISITOR_WINDOW_S.1);
        sc.devices.push(d);
    }
    sc
}

#[derive(Debug, Clone)]
pub struct StationFixture {
    pub scenario: Scenario,
    pub zones: Vec<Zone>,
    /// People who dwell at each zone, in zone order.
    pub planted: Vec<usize>,
    /// Minimum planted dwell, s.
    pub min_dwell_s: f64,
}

/// A 16 m × 12 m hall with five food stations. `counts[k]` people each walk
/// from the entrance to a free spot at station `k`, stay 90–240 s and walk
/// out; half of them carry a second device. Spots are 1.4 m or more apart.
/// `walkers` extra people stop for at most 40 s anywhere in the hall.
pub fn station_fixture(counts: &[usize], walkers: usize, seed: u64) -> StationFixture {
    const SESSION_S: f64 = 7200.0;
    const SPEED: f64 = 1.0;
    let area = Area { width: 16.0, height: 12.0 };
    let rects = [[1.0, 8.0, 4.6, 11.0], [11.4, 8.0, 15.0, 11.0], [1.0, 1.5, 4.6, 4.5], [11.4, 1.5, 15.0, 4.5], [6.2, 4.5, 9.8, 7.5]];
    assert!(counts.len() <= rects.len(), "at most {} stations", rects.len());
    let zones: Vec<Zone> = rects[..counts.len()]
        .iter()
        .enumerate()
        .map(|(k, r)| Zone::rect(&format!("station_{}", (b'a' + k as u8) as char), r[0], r[1], r[2], r[3]))
        .collect();
    let (entrance, exit) = ([4.0, 0.5], [12.0, 0.5]);
    let walk = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]) / SPEED;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7374_6174_696f_6e73);
    let mut sc = Scenario {
        name: "dining_hall".into(),
        area,
        nodes: wall_nodes(area),
        devices: Vec::new(),
        duration_s: SESSION_S,
        seed,
        channel: Default::default(),
        rotation_s: 900.0,
    };
    let mut person = |rng: &mut ChaCha8Rng, start: f64, stop: [f64; 2], pause: f64| {
        let end = start + walk(entrance, stop) + pause + walk(stop, exit) + 1.0;
        let first = PHONES[rng.random_range(0..PHONES.len())];
        let mut kinds = vec![first];
        if rng.random_bool(0.5) {
            kinds.push(ANY[rng.random_range(0..ANY.len())]);
        }
        for (i, p) in kinds.into_iter().enumerate() {
            // A second device rides 10 cm away.
            let off = 0.1 * i as f64;
            let mut d = DeviceSpec::new(p, [entrance[0] + off, entrance[1]]);
            d.waypoints.extend([[stop[0] + off, stop[1]], [exit[0] + off, exit[1]]]);
            d.speed = SPEED;
            d.depart_s = start;
            d.pauses_s = vec![0.0, pause, 0.0];
            present(&mut d, start, end.min(SESSION_S));
            sc.devices.push(d);
        }
    };

    for (k, &n) in counts.iter().enumerate() {
        let r = rects[k];
        let spots: Vec<[f64; 2]> = [[0.9, 0.8], [2.7, 0.8], [0.9, 2.2], [2.7, 2.2]]
            .iter()
            .map(|o| [r[0] + o[0], r[1] + o[1]])
            .collect();
        let mut free_at = vec![0.0f64; spots.len()];
        let mut arrivals: Vec<f64> = (0..n).map(|_| rng.random_range(30.0..SESSION_S - 700.0)).collect();
        arrivals.sort_by(f64::total_cmp);
        for t in arrivals {
            let dwell = rng.random_range(90.0..240.0);
            let s = rng.random_range(0..spots.len());
            // Take a random spot if free on arrival, else the first to free up.
            let (spot, ready) = if free_at[s] <= t + walk(entrance, spots[s]) {
                (s, t)
            } else {
                let (i, f) = free_at.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, f)| (i, *f)).unwrap();
                (i, t.max(f - walk(entrance, spots[i]) + 5.0))
            };
            let at = ready + walk(entrance, spots[spot]);
            free_at[spot] = at + dwell + 5.0;
            person(&mut rng, ready, spots[spot], dwell);
        }
    }
    for _ in 0..walkers {
        let stop = [rng.random_range(1.0..area.width - 1.0), rng.random_range(1.5..area.height - 1.0)];
        let start = rng.random_range(30.0..SESSION_S - 300.0);
        let pause = rng.random_range(0.0..40.0);
        person(&mut rng, start, stop, pause);
    }
    StationFixture { scenario: sc, zones, planted: counts.to_vec(), min_dwell_s: 90.0 }
}

/// Stroke of a capital letter in a unit box, x right and y up.
pub fn letter_stroke(letter: char) -> Option<&'static [[f64; 2]]> {
    Some(match letter.to_ascii_uppercase() {
        'L' => &[[0.0, 1.0], [0.0, 0.0], [1.0, 0.0]],
        'M' => &[[0.0, 0.0], [0.0, 1.0], [0.5, 0.5], [1.0, 1.0], [1.0, 0.0]],
        'N' => &[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]],
        'W' => &[[0.0, 1.0], [0.25, 0.0], [0.5, 0.6], [0.75, 0.0], [1.0, 1.0]],
        'Z' => &[[0.0, 1.0], [1.0, 1.0], [0.0, 0.0], [1.0, 0.0]],
        _ => return None,
    })
}

/// One person carrying an iPhone, AirPods and a Samsung phone who writes
/// `letter` by walking it out at 0.5 m/s in a 3.5 m × 4.5 m box in the lab.
pub fn letter_fixture(letter: char, seed: u64) -> Option<Scenario> {
    const SPEED: f64 = 0.5;
    let stroke = letter_stroke(letter)?;
    let (x0, y0, w, h) = (2.0, 3.0, 3.5, 4.5);
    let pts: Vec<[f64; 2]> = stroke.iter().map(|p| [x0 + w * p[0], y0 + h * p[1]]).collect();
    let len: f64 = pts.windows(2).map(|s| (s[1][0] - s[0][0]).hypot(s[1][1] - s[0][1])).sum();
    let depart = 10.0;
    let mut sc = Scenario::preset(ScenarioKind::Lab, depart + len / SPEED + 10.0, seed);
    sc.name = format!("letter_{}", letter.to_ascii_uppercase());
    for (i, p) in [Profile::Iphone, Profile::Airpods, Profile::Samsung].into_iter().enumerate() {
        let off = 0.05 * i as f64;
        let mut d = DeviceSpec::new(p, [pts[0][0] + off, pts[0][1]]);
        d.waypoints = pts.iter().map(|q| [q[0] + off, q[1]]).collect();
        d.speed = SPEED;
        d.depart_s = depart;
        sc.devices.push(d);
    }
    Some(sc)
}
