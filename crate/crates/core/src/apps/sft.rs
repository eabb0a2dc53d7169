//! Supervised fine-tuning dataset export.
//!
//! A template is a list of prompt/response turns whose text contains
//! `{slot}` placeholders. `{{` and `}}` stand for literal braces. Templates
//! are stored as TOML:
//!
//! ```toml
//! id = "where_now"
//! [[turns]]
//! prompt = "{node_count} nodes at {node_coords}. Where are the {device_count} devices?"
//! response = "At {locations}."
//! ```
//!
//! Every slot is filled from one sample window: scenario geometry, the
//! per-device packet features, and the fixes and trajectories computed
//! from the store. Coordinates are printed with two decimals.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::AppsError;
use crate::frames::Vendor;
use crate::locate::{localize_all, robust_mean, track_device, Fix, KalmanConfig, LocateConfig, NodePose};
use crate::store::{DeviceId, PacketRecord, Store};

/// Slots a template may use.
pub const SLOTS: &[&str] = &[
    "scenario",
    "width",
    "height",
    "origin",
    "node_count",
    "node_coords",
    "node_facings",
    "packets",
    "device_count",
    "locations",
    "apple_count",
    "android_count",
    "other_count",
    "trajectories",
    "stationary_count",
    "moving_count",
    "model_summary",
    "activity_summary",
    "window_start_s",
    "window_end_s",
];

/// Mean smoothed speed above which a device is called moving, m/s.
pub const MOVING_SPEED: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq)]
enum Piece<'a> {
    Text(&'a str),
    Brace(char),
    Slot(&'a str),
}

fn pieces(text: &str) -> Result<Vec<Piece<'_>>, AppsError> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let (mut i, mut start) = (0, 0);
    while i < bytes.len() {
        match bytes[i] {
            b'{' | b'}' if bytes.get(i + 1) == Some(&bytes[i]) => {
                out.push(Piece::Text(&text[start..i]));
                out.push(Piece::Brace(bytes[i] as char));
                i += 2;
                start = i;
            }
            b'{' => {
                let end = text[i..].find('}').map(|e| i + e).ok_or_else(|| AppsError::Template(format!("unclosed '{{' at byte {i}")))?;
                let name = &text[i + 1..end];
                if name.is_empty() || !name.bytes().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == b'_') {
                    return Err(AppsError::Template(format!("bad slot name {name:?}")));
                }
                out.push(Piece::Text(&text[start..i]));
                out.push(Piece::Slot(name));
                i = end + 1;
                start = i;
            }
            b'}' => return Err(AppsError::Template(format!("stray '}}' at byte {i}"))),
            _ => i += 1,
        }
    }
    out.push(Piece::Text(&text[start..]));
    Ok(out)
}

/// Substitutes `{slot}` placeholders. Unknown or missing slots are errors.
pub fn fill(text: &str, values: &HashMap<&str, String>) -> Result<String, AppsError> {
    let mut out = String::with_capacity(text.len() * 2);
    for p in pieces(text)? {
        match p {
            Piece::Text(t) => out.push_str(t),
            Piece::Brace(c) => out.push(c),
            Piece::Slot(name) => {
                out.push_str(values.get(name).ok_or_else(|| AppsError::Template(format!("no value for slot {name:?}")))?)
            }
        }
    }
    Ok(out)
}

impl Template {
    /// Location, trajectory and device-detail turns.
    pub fn builtin() -> Self {
        Template {
            id: "location_trajectory_details".into(),
            turns: vec![
                Turn {
                    prompt: "This is the {scenario} scenario, an area of {width} m by {height} m. {node_count} Bluetooth \
                             sniffing nodes are installed at {node_coords}; their antenna arrays face {node_facings} \
                             degrees clockwise from north. Coordinates are in meters with x pointing east, y pointing \
                             north and the origin at the {origin} corner. People here carry Bluetooth devices and do \
                             different things. For each device we captured advertising packets and list the angle of \
                             arrival at every node (degrees from array broadside) followed by the received signal \
                             strength at every node (dBm): {packets}. Where are these {device_count} devices now?"
                        .into(),
                    response: "Based on these measurements the {device_count} devices are most likely at {locations}. \
                               Of these devices, {apple_count} are Apple and {android_count} are Android."
                        .into(),
                },
                Turn {
                    prompt: "Now give me the trajectory of every device.".into(),
                    response: "Here are the trajectories of the {device_count} devices.\n{trajectories}".into(),
                },
                Turn {
                    prompt: "Tell me more about these devices.".into(),
                    response: "{stationary_count} of them are stationary and {moving_count} are moving. {model_summary} \
                               {activity_summary}"
                        .into(),
                },
            ],
        }
    }

    pub fn parse(text: &str) -> Result<Self, AppsError> {
        let t: Template = toml::from_str(text).map_err(|e| AppsError::Template(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, AppsError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Checks the slot grammar and that every slot is known.
    pub fn validate(&self) -> Result<(), AppsError> {
        if self.turns.is_empty() {
            return Err(AppsError::Template("template has no turns".into()));
        }
        for t in &self.turns {
            for text in [&t.prompt, &t.response] {
                for p in pieces(text)? {
                    if let Piece::Slot(s) = p {
                        if !SLOTS.contains(&s) {
                            return Err(AppsError::Template(format!("unknown slot {s:?}")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn render(&self, values: &HashMap<&str, String>) -> Result<Vec<(String, String)>, AppsError> {
        self.turns.iter().map(|t| Ok((fill(&t.prompt, values)?, fill(&t.response, values)?))).collect()
    }
}

/// Geometry the prompt describes.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInfo {
    pub name: String,
    pub width: f64,
    pub height: f64,
    pub nodes: Vec<NodePose>,
}

impl SceneInfo {
    pub fn from_scenario(sc: &crate::simulate::Scenario) -> Self {
        SceneInfo { name: sc.name.clone(), width: sc.area.width, height: sc.area.height, nodes: sc.nodes.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMeta {
    pub scenario: String,
    pub template: String,
    pub window_start_us: i64,
    pub window_end_us: i64,
    pub device_count: usize,
    pub vendor_counts: BTreeMap<String, usize>,
    pub device_ids: Vec<DeviceId>,
    /// Positions printed in the location response, in order.
    pub locations: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSample {
    pub turns: Vec<(String, String)>,
    pub metadata: SftMeta,
}

/// Position labels to print instead of the localized ones, e.g. ground
/// truth: `(device, timestamp) -> position`.
pub type LabelFn<'a> = &'a dyn Fn(DeviceId, i64) -> Option<[f64; 2]>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExportOptions {
    /// Length of one sample window, µs.
    pub sample_us: i64,
    /// Start-to-start spacing of sample windows, µs.
    pub stride_us: i64,
    /// Fix window used for trajectory points, µs.
    pub track_step_us: i64,
    pub locate: LocateConfig,
    pub kalman: KalmanConfig,
}

impl Default for ExportOptions {
    fn default() -> Self {
        ExportOptions {
            sample_us: 10_000_000,
            stride_us: 10_000_000,
            track_step_us: 2_000_000,
            locate: LocateConfig::default(),
            kalman: KalmanConfig::default(),
        }
    }
}

pub fn fmt_xy(p: [f64; 2]) -> String {
    format!("({:.2}, {:.2})", p[0], p[1])
}

fn plural(n: usize, one: &str, many: &str) -> String {
    format!("{n} {}", if n == 1 { one } else { many })
}

fn fmt_feature(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.1}"))
}

fn packet_summary(k: usize, packets: &[PacketRecord], nodes: usize, mad_k: f64) -> String {
    let per_node = |get: fn(&crate::store::NodeObservation) -> Option<f64>| -> Vec<String> {
        (0..nodes)
            .map(|n| {
                let v: Vec<f64> = packets.iter().filter_map(|p| p.phy.get(n).and_then(get)).collect();
                fmt_feature(robust_mean(&v, mad_k))
            })
            .collect()
    };
    format!("{{dev_{k}: AoA {}; RSS {}}}", per_node(|o| o.aoa).join(", "), per_node(|o| o.rss).join(", "))
}

fn counts_sentence(counts: &BTreeMap<String, usize>, what: &str, none: &str) -> String {
    if counts.is_empty() {
        return none.to_string();
    }
    let parts: Vec<String> = counts
        .iter()
        .map(|(label, &n)| format!("{} {what} {label}", plural(n, "device", "devices")))
        .collect();
    format!("{}.", parts.join("; "))
}

/// One sample from the window `[t0, t1)`; `None` if no device can be
/// localized in it.
pub fn export_window(
    store: &Store,
    scene: &SceneInfo,
    t0: i64,
    t1: i64,
    template: &Template,
    opts: &ExportOptions,
    labels: Option<LabelFn<'_>>,
) -> Result<Option<SftSample>, AppsError> {
    let fixes: Vec<Fix> = localize_all(store, t0, t1, &scene.nodes, &opts.locate).fixes;
    if fixes.is_empty() {
        return Ok(None);
    }
    let label = |id: DeviceId, ts: i64, fallback: [f64; 2]| labels.and_then(|f| f(id, ts)).unwrap_or(fallback);
    let track_cfg = LocateConfig { window_us: opts.track_step_us, ..opts.locate };

    let mut vendors: BTreeMap<String, usize> = BTreeMap::new();
    let mut models: BTreeMap<String, usize> = BTreeMap::new();
    let mut states: BTreeMap<String, usize> = BTreeMap::new();
    let (mut moving, mut packets, mut locations, mut trajectories) = (0, Vec::new(), Vec::new(), String::new());
    for (i, fix) in fixes.iter().enumerate() {
        let k = i + 1;
        let dev = store.device(fix.device_id).ok_or(crate::store::StoreError::UnknownDevice(fix.device_id))?;
        let window = dev.window(t0, t1);
        *vendors.entry(dev.vendor().as_str().to_string()).or_default() += 1;
        if let Some(m) = &dev.fixed.model {
            *models.entry(m.clone()).or_default() += 1;
        }
        let last = |get: fn(&PacketRecord) -> Option<&String>| window.iter().rev().find_map(get).cloned();
        for s in [last(|p| p.facts.status.as_ref()), last(|p| p.facts.activity.as_ref())].into_iter().flatten() {
            *states.entry(format!("\"{s}\"")).or_default() += 1;
        }
        packets.push(packet_summary(k, window, scene.nodes.len(), opts.locate.mad_k));
        locations.push(label(fix.device_id, fix.timestamp, fix.position));

        let track = track_device(dev, t0, t1, &scene.nodes, &track_cfg, &opts.kalman);
        let points: Vec<(i64, [f64; 2], f64)> = match &track {
            Some((_, traj)) => traj.points.iter().map(|p| (p.ts_us, [p.x, p.y], p.speed())).collect(),
            None => vec![(fix.timestamp, fix.position, 0.0)],
        };
        let mean_speed = points.iter().map(|p| p.2).sum::<f64>() / points.len() as f64;
        if mean_speed >= MOVING_SPEED {
            moving += 1;
        }
        let path: Vec<String> = points.iter().map(|&(ts, p, _)| fmt_xy(label(fix.device_id, ts, p))).collect();
        let _ = writeln!(trajectories, "Device {k}: {}", path.join(", "));
    }

    let k = fixes.len();
    let count = |v: Vendor| vendors.get(v.as_str()).copied().unwrap_or(0);
    let other = k - count(Vendor::Apple) - count(Vendor::Android);
    let values: HashMap<&str, String> = [
        ("scenario", scene.name.clone()),
        ("width", format!("{:.2}", scene.width)),
        ("height", format!("{:.2}", scene.height)),
        ("origin", "south-west".to_string()),
        ("node_count", scene.nodes.len().to_string()),
        ("node_coords", scene.nodes.iter().map(|n| fmt_xy(n.position)).collect::<Vec<_>>().join(", ")),
        ("node_facings", scene.nodes.iter().map(|n| format!("{:.0}", n.boresight)).collect::<Vec<_>>().join(", ")),
        ("packets", packets.join(", ")),
        ("device_count", k.to_string()),
        ("locations", locations.iter().map(|p| fmt_xy(*p)).collect::<Vec<_>>().join(", ")),
        ("apple_count", count(Vendor::Apple).to_string()),
        ("android_count", count(Vendor::Android).to_string()),
        ("other_count", other.to_string()),
        ("trajectories", trajectories.trim_end().to_string()),
        ("stationary_count", (k - moving).to_string()),
        ("moving_count", moving.to_string()),
        ("model_summary", counts_sentence(&models, "identified as", "No device model could be identified.")),
        ("activity_summary", counts_sentence(&states, "showing", "No status or activity was reported.")),
        ("window_start_s", format!("{:.2}", t0 as f64 / 1e6)),
        ("window_end_s", format!("{:.2}", t1 as f64 / 1e6)),
    ]
    .into_iter()
    .collect();

    Ok(Some(SftSample {
        turns: template.render(&values)?,
        metadata: SftMeta {
            scenario: scene.name.clone(),
            template: template.id.clone(),
            window_start_us: t0,
            window_end_us: t1,
            device_count: k,
            vendor_counts: vendors,
            device_ids: fixes.iter().map(|f| f.device_id).collect(),
            locations,
        },
    }))
}

/// Samples over sliding windows covering `[t0, t1)`.
pub fn export_sft(
    store: &Store,
    scene: &SceneInfo,
    t0: i64,
    t1: i64,
    template: &Template,
    opts: &ExportOptions,
    labels: Option<LabelFn<'_>>,
) -> Result<Vec<SftSample>, AppsError> {
    if opts.sample_us <= 0 || opts.stride_us <= 0 || opts.track_step_us <= 0 {
        return Err(AppsError::InvalidArgument("sample, stride and track step must be positive".into()));
    }
    template.validate()?;
    let mut out = Vec::new();
    let mut w = t0;
    while w + opts.sample_us <= t1 {
        if let Some(s) = export_window(store, scene, w, w + opts.sample_us, template, opts, labels)? {
            out.push(s);
        }
        w += opts.stride_us;
    }
    if out.is_empty() {
        return Err(AppsError::EmptyWindow);
    }
    Ok(out)
}

fn pair_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\((-?\d+\.\d{2}), (-?\d+\.\d{2})\)").expect("valid regex"))
}

/// Every `(x.xx, y.yy)` pair in `text`, in order.
pub fn parse_coordinates(text: &str) -> Vec<[f64; 2]> {
    pair_regex()
        .captures_iter(text)
        .filter_map(|c| Some([c[1].parse().ok()?, c[2].parse().ok()?]))
        .collect()
}

/// Placeholders left in rendered text, e.g. `{device_count}`.
pub fn unresolved_placeholders(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\{[a-z_][a-z0-9_]*\}").expect("valid regex"));
    re.find_iter(text).map(|m| m.as_str().to_string()).collect()
}

pub fn write_samples<W: std::io::Write>(samples: &[SftSample], w: W) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(w);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{AdvAddress, AdvChannel, DeviceFact};
    use crate::locate::{bearing_between, normalize_deg, Area};
    use crate::store::{NodeObservation, StoreConfig};

    fn scene() -> SceneInfo {
        SceneInfo {
            name: "apartment".into(),
            width: 6.5,
            height: 9.5,
            nodes: crate::simulate::wall_nodes(Area { width: 6.5, height: 9.5 }),
        }
    }

    fn record(ts: i64, addr: u64, at: [f64; 2], facts: DeviceFact) -> PacketRecord {
        let phy = scene()
            .nodes
            .iter()
            .map(|n| {
                let mut r = normalize_deg(bearing_between(n.position, at) - n.boresight);
                if r > 180.0 {
                    r -= 360.0;
                }
                NodeObservation { rss: Some(-50.0), cfo: Some(0.0), aoa: Some(r) }
            })
            .collect();
        PacketRecord { timestamp: ts, phy, adv_address: AdvAddress::from_u64(addr), facts, channel: AdvChannel::new(37).unwrap() }
    }

    fn one_device_store(at: [f64; 2]) -> Store {
        let mut s = Store::new(StoreConfig::with_nodes(4));
        let facts = DeviceFact { model: Some("iPhone".into()), ..DeviceFact::vendor_only(Vendor::Apple) };
        let id = s.create_device(record(0, 1, at, facts.clone())).unwrap();
        for i in 1..50 {
            s.insert(id, record(i * 200_000, 1, at, facts.clone())).unwrap();
        }
        s
    }

    #[test]
    fn slot_grammar() {
        let v: HashMap<&str, String> = [("device_count", "3".to_string())].into_iter().collect();
        assert_eq!(fill("{{x}} {device_count}", &v).unwrap(), "{x} 3");
        assert!(fill("{device_count", &v).is_err());
        assert!(fill("a } b", &v).is_err());
        assert!(fill("{Bad}", &v).is_err());
        assert!(fill("{width}", &v).is_err());
        let t = Template { id: "x".into(), turns: vec![Turn { prompt: "{nope}".into(), response: String::new() }] };
        assert!(t.validate().is_err());
    }

    #[test]
    fn template_toml_round_trip() {
        let t = Template::builtin();
        let text = toml::to_string(&t).unwrap();
        assert_eq!(Template::parse(&text).unwrap(), t);
        assert!(Template::parse("id = \"x\"\nturns = []").is_err());
    }

    #[test]
    fn single_device_location_slot() {
        let s = one_device_store([1.0, 2.0]);
        let opts = ExportOptions { locate: LocateConfig::with_area(Area { width: 6.5, height: 9.5 }), ..Default::default() };
        let out = export_sft(&s, &scene(), 0, 10_000_000, &Template::builtin(), &opts, None).unwrap();
        assert_eq!(out.len(), 1);
        let (prompt, response) = &out[0].turns[0];
        assert!(response.contains("(1.00, 2.00)"), "{response}");
        assert!(response.contains("1 are Apple"));
        assert_eq!(parse_coordinates(prompt).len(), 4);
        assert!(out[0].turns[2].1.contains("1 device identified as iPhone"));
        for (p, r) in &out[0].turns {
            assert!(unresolved_placeholders(p).is_empty() && unresolved_placeholders(r).is_empty());
        }
    }

    #[test]
    fn labels_override_positions() {
        let s = one_device_store([1.0, 2.0]);
        let opts = ExportOptions { locate: LocateConfig::with_area(Area { width: 6.5, height: 9.5 }), ..Default::default() };
        let truth = |_: DeviceId, _: i64| Some([1.234, 5.678]);
        let out = export_sft(&s, &scene(), 0, 10_000_000, &Template::builtin(), &opts, Some(&truth)).unwrap();
        assert!(out[0].turns[0].1.contains("(1.23, 5.68)"));
        assert!(out[0].turns[1].1.lines().nth(1).unwrap().starts_with("Device 1: (1.23, 5.68)"));
    }

    #[test]
    fn empty_window_is_an_error() {
        let s = one_device_store([1.0, 2.0]);
        let r = export_sft(&s, &scene(), 20_000_000, 40_000_000, &Template::builtin(), &ExportOptions::default(), None);
        assert!(matches!(r, Err(AppsError::EmptyWindow)));
    }

    #[test]
    fn coordinate_parser() {
        assert_eq!(parse_coordinates("at (1.00, -2.50) and (10.25, 3.00)."), vec![[1.0, -2.5], [10.25, 3.0]]);
        assert!(parse_coordinates("(1.0, 2.0)").is_empty());
    }
}
