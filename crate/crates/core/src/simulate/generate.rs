//! Feature-level packet generation.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{dist, ChannelModel, DeviceSpec, Scenario, SimError};
use crate::frames::registry::builtin;
use crate::frames::{decode_adv, AdvAddress, AdvChannel, AdvFrame, Vendor};
use crate::locate::{bearing_between, normalize_deg, NodePose};
use crate::store::{NodeObservation, PacketRecord};

const SLOT: i64 = 625;

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// One emitted packet as the sniffing nodes saw it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPacket {
    pub ts_us: i64,
    pub addr: AdvAddress,
    pub channel: AdvChannel,
    #[serde(with = "hex_bytes")]
    pub pdu: Vec<u8>,
    /// All null when no node was in range.
    pub phy: Vec<NodeObservation>,
}

impl SimPacket {
    pub fn heard(&self) -> bool {
        self.phy.iter().any(|o| !o.is_null())
    }

    /// Decodes the payload into a store record; `None` if no node heard it
    /// or the PDU does not decode.
    pub fn to_record(&self) -> Option<PacketRecord> {
        if !self.heard() {
            return None;
        }
        let frame = decode_adv(&self.pdu, self.channel).ok()?;
        Some(PacketRecord {
            timestamp: self.ts_us,
            phy: self.phy.clone(),
            adv_address: frame.adv_address,
            facts: builtin().frame_facts(&frame),
            channel: self.channel,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeTruth {
    /// World bearing from the node to the device, degrees.
    pub bearing: f64,
    pub distance: f64,
    /// Array-relative angle folded into [-90, 90], degrees.
    pub aoa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub ts_us: i64,
    pub addr: AdvAddress,
    /// Index into the scenario's device list.
    pub device: usize,
    /// Advertisement kind index within the device profile.
    pub kind: usize,
    pub position: [f64; 2],
    pub speed: f64,
    pub nodes: Vec<NodeTruth>,
}

/// Values drawn once per device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceDraw {
    pub tau_fix: i32,
    pub epsilon_bound: u32,
    pub cfo_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimOutput {
    /// Sorted by (timestamp, device).
    pub packets: Vec<SimPacket>,
    /// `truth[i]` labels `packets[i]`.
    pub truth: Vec<GroundTruth>,
    pub devices: Vec<DeviceDraw>,
    /// Fixed CFO offset of each node's receiver, Hz.
    pub node_cfo_hz: Vec<f64>,
}

fn write_lines<T: Serialize, W: Write>(items: &[T], w: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn read_lines<T: for<'de> Deserialize<'de>, R: Read>(r: R) -> Result<Vec<T>, SimError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| SimError::InvalidScenario(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

impl SimOutput {
    pub fn write_packets<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_lines(&self.packets, w)
    }

    pub fn write_truth<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_lines(&self.truth, w)
    }

    pub fn read_packets<R: Read>(r: R) -> Result<Vec<SimPacket>, SimError> {
        read_lines(r)
    }

    pub fn read_truth<R: Read>(r: R) -> Result<Vec<GroundTruth>, SimError> {
        read_lines(r)
    }

    /// Heard packets as store records, each with its true device index.
    pub fn records(&self) -> Vec<(PacketRecord, usize)> {
        self.packets.iter().zip(&self.truth).filter_map(|(p, t)| Some((p.to_record()?, t.device))).collect()
    }
}

/// Maps an array-relative angle onto the half-plane a two-element array
/// can resolve.
pub(crate) fn fold_aoa(rel: f64) -> f64 {
    let mut r = normalize_deg(rel);
    if r > 180.0 {
        r -= 360.0;
    }
    if r > 90.0 {
        180.0 - r
    } else if r < -90.0 {
        -180.0 - r
    } else {
        r
    }
}

/// Features one node measures for a device at `position`. `cfo_hz` is the
/// offset between transmitter and this node's receiver.
pub fn propagate(
    position: [f64; 2],
    speed: f64,
    cfo_hz: f64,
    pose: &NodePose,
    model: &ChannelModel,
    rng: &mut impl Rng,
) -> (NodeObservation, NodeTruth) {
    let d = dist(position, pose.position);
    let bearing = bearing_between(pose.position, position);
    let truth = NodeTruth { bearing, distance: d, aoa: fold_aoa(bearing - pose.boresight) };
    if d > model.detection_radius_m {
        return (NodeObservation::default(), truth);
    }
    let gauss = |rng: &mut dyn rand::RngCore, s: f64| if s > 0.0 { Normal::new(0.0, s).unwrap().sample(rng) } else { 0.0 };
    let rss = model.tx_power_dbm - 10.0 * model.path_loss_exp * d.max(0.1).log10() + gauss(rng, model.shadowing_db);
    let aoa = (truth.aoa + gauss(rng, model.aoa_sigma(d, speed))).clamp(-90.0, 90.0);
    let cfo = cfo_hz + gauss(rng, model.cfo_noise_hz);
    (NodeObservation { rss: Some(rss), cfo: Some(cfo), aoa: Some(aoa) }, truth)
}

fn fresh_address(rng: &mut ChaCha8Rng, used: &mut HashSet<u64>) -> AdvAddress {
    loop {
        // Random static/resolvable style: top two bits 01.
        let v = (rng.random::<u64>() & 0x3FFF_FFFF_FFFF) | 0x4000_0000_0000;
        if used.insert(v) {
            return AdvAddress::from_u64(v);
        }
    }
}

fn device_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1))
}

struct Emitted {
    device: usize,
    packet: SimPacket,
    truth: GroundTruth,
}

#[allow(clippy::too_many_arguments)]
fn emit_device(
    sc: &Scenario,
    index: usize,
    d: &DeviceSpec,
    draw: DeviceDraw,
    node_cfo: &[f64],
    rng: &mut ChaCha8Rng,
    used: &mut HashSet<u64>,
    out: &mut Vec<Emitted>,
) -> Result<(), SimError> {
    let end = (sc.duration_s * 1e6) as i64;
    let kinds = d.profile.kinds().len();
    let b = draw.epsilon_bound as i64;
    let tau = draw.tau_fix as i64;
    let mut addrs: Vec<Option<(AdvAddress, i64)>> = vec![None; kinds];
    let total_rate = |s| (0..kinds).map(|k| d.rate(k, s)).sum::<f64>();
    let mean_slots = |rate: f64| (((60e6 / rate) - tau as f64 - b as f64 / 2.0) / SLOT as f64).round().max(1.0) as i64;

    let Some(first) = (if d.state_at(0.0, sc.duration_s).is_some() { Some(0.0) } else { d.next_start(0.0) }) else {
        return Ok(());
    };
    let mut t = (first * 1e6).ceil() as i64;
    // Random phase within the first gap.
    if let Some(s) = d.state_at(t as f64 / 1e6, sc.duration_s) {
        let r = total_rate(s);
        if r > 0.0 {
            t += rng.random_range(0..mean_slots(r)) * SLOT;
        }
    }
    let step = |t: i64, slots: i64, rng: &mut ChaCha8Rng| t + slots * SLOT + tau + rng.random_range(0..=b);

    while t < end {
        let ts = t as f64 / 1e6;
        let state = d.state_at(ts, sc.duration_s);
        let rate = state.map_or(0.0, total_rate);
        let Some(state) = state.filter(|_| rate > 0.0) else {
            match d.next_start(ts) {
                Some(next) if next * 1e6 < end as f64 => {
                    let slots = (((next * 1e6) as i64 - t + SLOT - 1) / SLOT).max(1);
                    t = step(t, slots, rng);
                    continue;
                }
                _ => break,
            }
        };
        let mut pick = rng.random::<f64>() * rate;
        let mut kind = kinds - 1;
        for k in 0..kinds {
            let r = d.rate(k, state);
            if pick < r {
                kind = k;
                break;
            }
            pick -= r;
        }
        let addr = match addrs[kind] {
            Some((a, expires)) if t < expires => a,
            prev => {
                let period = (rng.random_range(0.9..1.1) * sc.rotation_s * 1e6) as i64;
                let life = if prev.is_none() { (rng.random::<f64>() * period as f64) as i64 } else { period };
                let a = fresh_address(rng, used);
                addrs[kind] = Some((a, t + life.max(1)));
                a
            }
        };
        let channel = AdvChannel::ALL[rng.random_range(0..3)];
        let (status, activity) = d.status_at(ts);
        let pdu = AdvFrame::new(addr, channel, d.profile.ad(kind, status, activity))
            .to_bytes()
            .map_err(|e| SimError::InvalidScenario(format!("device {index}: {e}")))?;
        let (position, speed) = d.position_at(ts);
        let (phy, nodes): (Vec<_>, Vec<_>) = sc
            .nodes
            .iter()
            .zip(node_cfo)
            .map(|(pose, nc)| propagate(position, speed, draw.cfo_hz + nc, pose, &sc.channel, rng))
            .unzip();
        out.push(Emitted {
            device: index,
            packet: SimPacket { ts_us: t, addr, channel, pdu, phy },
            truth: GroundTruth { ts_us: t, addr, device: index, kind, position, speed, nodes },
        });

        let m = mean_slots(rate);
        let w = (m / 2).min(16);
        t = step(t, rng.random_range(m - w..=m + w).max(1), rng);
    }
    Ok(())
}

/// Runs the scenario. Equal seeds give identical output.
pub fn generate(sc: &Scenario) -> Result<SimOutput, SimError> {
    sc.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(sc.seed);
    let apple_mean = master.random_range(-40e3..40e3);
    let spread = sc.channel.node_cfo_spread_hz;
    let node_cfo: Vec<f64> =
        sc.nodes.iter().map(|_| if spread > 0.0 { master.random_range(-spread..spread) } else { 0.0 }).collect();
    let apple_cfo = Normal::new(apple_mean, 5e3).unwrap();

    let mut used = HashSet::new();
    let mut emitted = Vec::new();
    let mut draws = Vec::with_capacity(sc.devices.len());
    for (i, d) in sc.devices.iter().enumerate() {
        let mut rng = device_rng(sc.seed, i);
        let b = d.epsilon();
        let tau_fix = d.tau_fix.unwrap_or_else(|| rng.random_range(-300..=300 - b as i32));
        let cfo_hz = d.cfo_hz.unwrap_or_else(|| {
            let v: f64 = if d.profile.vendor() == Vendor::Apple { apple_cfo.sample(&mut rng) } else { rng.random_range(-50e3..50e3) };
            v.clamp(-50e3, 50e3)
        });
        let draw = DeviceDraw { tau_fix, epsilon_bound: b, cfo_hz };
        draws.push(draw);
        emit_device(sc, i, d, draw, &node_cfo, &mut rng, &mut used, &mut emitted)?;
    }
    emitted.sort_by_key(|e| (e.packet.ts_us, e.device));
    let (packets, truth) = emitted.into_iter().map(|e| (e.packet, e.truth)).unzip();
    Ok(SimOutput { packets, truth, devices: draws, node_cfo_hz: node_cfo })
}
