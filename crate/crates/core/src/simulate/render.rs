//! Signal-level rendering of one simulated packet at every node.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Scenario, SimOutput};
use crate::dsp::channelizer::{BAND_CENTER_HZ, CHANNEL_SPACING_HZ};
use crate::dsp::gfsk::{add_burst, Burst, GfskParams, BLE_SYMBOL_RATE};
use crate::dsp::music::LIGHT_SPEED;
use crate::dsp::IqFrame;
use crate::frames::link::to_air_bits;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub sample_rate: f64,
    pub center_freq: f64,
    pub antennas: usize,
    /// Element spacing, m.
    pub spacing: f64,
    /// Silence before and after the packet, µs.
    pub lead_us: f64,
    pub tail_us: f64,
    /// Overrides the SNR derived from the propagated RSS.
    pub snr_db: Option<f64>,
    pub noiseless: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            sample_rate: 80e6,
            center_freq: BAND_CENTER_HZ,
            antennas: 2,
            spacing: LIGHT_SPEED / BAND_CENTER_HZ / 2.0,
            lead_us: 20.0,
            tail_us: 20.0,
            snr_db: None,
            noiseless: false,
        }
    }
}

/// Wideband multi-antenna capture of packet `index` at every node; `None`
/// for nodes out of range. Antenna `m` sees the wavefront phase-shifted by
/// `m·Δ·sin θ`, with `Δ = 2π·spacing·f/c`.
pub fn render_iq(out: &SimOutput, index: usize, sc: &Scenario, cfg: &RenderConfig, rng: &mut impl Rng) -> Vec<Option<IqFrame>> {
    let packet = &out.packets[index];
    let truth = &out.truth[index];
    let bits = to_air_bits(&packet.pdu, packet.channel);
    let sps = (cfg.sample_rate / BLE_SYMBOL_RATE).round() as usize;
    let params = GfskParams::with_sps(sps);
    let fs_us = cfg.sample_rate / 1e6;
    let n = ((cfg.lead_us + bits.len() as f64 + 1.0 + cfg.tail_us) * fs_us).ceil() as usize;
    let ch_freq = packet.channel.center_freq_hz();
    let delta = 2.0 * std::f64::consts::PI * cfg.spacing * ch_freq / LIGHT_SPEED;
    let channels = cfg.sample_rate / CHANNEL_SPACING_HZ;
    let device_cfo = out.devices[truth.device].cfo_hz;

    sc.nodes
        .iter()
        .enumerate()
        .map(|(node, _)| {
            let obs = packet.phy[node];
            let rss = obs.rss?;
            let snr = cfg.snr_db.unwrap_or(rss - sc.channel.noise_floor_dbm);
            let sigma = (channels / 10f64.powf(snr / 10.0) / 2.0).sqrt();
            let theta = truth.nodes[node].aoa.to_radians();
            let cfo = device_cfo + out.node_cfo_hz[node];
            let phase0: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let antennas = (0..cfg.antennas)
                .map(|m| {
                    let mut x = if cfg.noiseless {
                        vec![Complex64::new(0.0, 0.0); n]
                    } else {
                        (0..n)
                            .map(|_| {
                                let a: f64 = StandardNormal.sample(rng);
                                let b: f64 = StandardNormal.sample(rng);
                                Complex64::new(a, b) * sigma
                            })
                            .collect()
                    };
                    let burst = Burst {
                        freq: ch_freq - cfg.center_freq + cfo,
                        amplitude: 1.0,
                        phase: phase0 + delta * theta.sin() * m as f64,
                        delay: cfg.lead_us * fs_us,
                    };
                    add_burst(&mut x, &bits, &params, &burst);
                    x
                })
                .collect();
            IqFrame::new(antennas, cfg.sample_rate, cfg.center_freq, packet.ts_us as f64 - cfg.lead_us).ok()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::{generate, DeviceSpec, Profile, ScenarioKind};
    use super::*;
    use crate::dsp::{channelizer::Channelizer, estimate_aoa_music, receive, ReceiverConfig, SteeringConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scenario() -> Scenario {
        let mut s = Scenario::preset(ScenarioKind::Apartment, 2.0, 8);
        s.devices.push(DeviceSpec::new(Profile::Iphone, [2.0, 6.0]));
        s
    }

    #[test]
    fn broadside_antennas_identical() {
        let mut s = scenario();
        // Straight in front of node 0 (west wall, facing east).
        s.devices[0].waypoints = vec![[4.0, s.area.height / 2.0]];
        let out = generate(&s).unwrap();
        let cfg = RenderConfig { noiseless: true, ..Default::default() };
        let frames = render_iq(&out, 0, &s, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let f = frames[0].as_ref().unwrap();
        let diff: f64 = f.antenna(0).iter().zip(f.antenna(1)).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn rendered_packet_decodes_with_features() {
        let s = scenario();
        let out = generate(&s).unwrap();
        let rcfg = ReceiverConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = RenderConfig { snr_db: Some(25.0), ..Default::default() };
        for i in 0..6 {
            let frames = render_iq(&out, i, &s, &cfg, &mut rng);
            for (node, f) in frames.iter().enumerate() {
                let rx = receive(f.as_ref().unwrap(), &rcfg).unwrap();
                assert_eq!(rx.packets.len(), 1, "packet {i} node {node}");
                let p = &rx.packets[0];
                assert_eq!(p.pdu, out.packets[i].pdu);
                assert!((p.features.timestamp - out.packets[i].ts_us).abs() <= 2);
                let true_cfo = out.devices[0].cfo_hz + out.node_cfo_hz[node];
                assert!((p.features.cfo - true_cfo).abs() <= 1e3);
                assert!((p.features.aoa - out.truth[i].nodes[node].aoa).abs() <= 5.0);
            }
        }
    }

    #[test]
    fn wavefront_at_thirty_degrees() {
        let mut s = scenario();
        // Node 3 sits mid south wall facing north; put the device 30° right of broadside.
        let n = s.nodes[3].position;
        let r = 3.0;
        s.devices[0].waypoints = vec![[n[0] + r * 30f64.to_radians().sin(), n[1] + r * 30f64.to_radians().cos()]];
        let out = generate(&s).unwrap();
        assert!((out.truth[0].nodes[3].aoa - 30.0).abs() < 1e-9);
        let cfg = RenderConfig { noiseless: true, ..Default::default() };
        let frames = render_iq(&out, 0, &s, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let chz = Channelizer::new(80e6, BAND_CENTER_HZ).unwrap();
        let ch = out.packets[0].channel;
        let stream = &chz.process(frames[3].as_ref().unwrap()).unwrap()[ch.rf_index()];
        let steer = SteeringConfig::half_wavelength(2).with_center_freq(ch.center_freq_hz());
        let (aoa, _) = estimate_aoa_music(stream, &steer).unwrap();
        assert!((aoa - 30.0).abs() <= 1.0, "{aoa}");
    }
}
