//! Wideband capture → decoded advertisements with physical features.

use super::channelizer::Channelizer;
use super::demod::{demodulate_in, samples_per_symbol};
use super::detect::detect_packets;
use super::music::{estimate_aoa_music, SteeringConfig};
use super::{estimate_rss, DspError, IqFrame, PhyFeatures};
use crate::frames::link::{air_bit_len, from_air_bits};
use crate::frames::{decode_adv, AdvChannel, AdvFrame};

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverConfig {
    /// Detection threshold above the noise floor, dB.
    pub threshold_db: f64,
    /// Added to the measured power to obtain dBm.
    pub cal_offset_db: f64,
    pub steering: SteeringConfig,
    pub channels: Vec<AdvChannel>,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        ReceiverConfig {
            threshold_db: 10.0,
            cal_offset_db: 0.0,
            steering: SteeringConfig::half_wavelength(2),
            channels: AdvChannel::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedPacket {
    pub channel: AdvChannel,
    pub pdu: Vec<u8>,
    pub frame: AdvFrame,
    pub features: PhyFeatures,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reception {
    /// Sorted by timestamp.
    pub packets: Vec<ReceivedPacket>,
    /// Detections that failed sync, CRC or PDU decoding.
    pub rejected: usize,
}

/// Processes one channel stream.
pub fn receive_channel(stream: &IqFrame, channel: AdvChannel, cfg: &ReceiverConfig) -> Reception {
    let mut out = Reception::default();
    let Ok(sps) = samples_per_symbol(stream) else {
        return out;
    };
    let steering = cfg.steering.clone().with_center_freq(stream.center_freq());
    for det in detect_packets(stream, cfg.threshold_db) {
        let Ok(span) = stream.slice(det.start, det.end) else {
            out.rejected += 1;
            continue;
        };
        match decode_span(&span, sps, channel, cfg, &steering) {
            Some(p) => out.packets.push(p),
            None => out.rejected += 1,
        }
    }
    out
}

fn decode_span(
    span: &IqFrame,
    sps: usize,
    channel: AdvChannel,
    cfg: &ReceiverConfig,
    steering: &SteeringConfig,
) -> Option<ReceivedPacket> {
    let demod = demodulate_in(span, sps, 0..(4 * sps).min(span.len())).ok()?;
    let pdu = from_air_bits(&demod.bits, channel).ok()?;
    let frame = decode_adv(&pdu, channel).ok()?;
    let first = demod.sync_position.round().max(0.0) as usize;
    let body = span.slice(first, first + air_bit_len(pdu.len()) * sps).ok()?;
    let aoa = estimate_aoa_music(&body, steering).ok()?.0;
    Some(ReceivedPacket {
        channel,
        pdu,
        frame,
        features: PhyFeatures {
            timestamp: span.time_of(demod.sync_position).round() as i64,
            rss: estimate_rss(&body, cfg.cal_offset_db),
            cfo: demod.cfo,
            aoa,
        },
    })
}

/// Channelizes a wideband capture and decodes the configured advertising
/// channels in parallel.
pub fn receive(wideband: &IqFrame, cfg: &ReceiverConfig) -> Result<Reception, DspError> {
    cfg.steering.validate()?;
    if wideband.antenna_count() != cfg.steering.antennas {
        return Err(DspError::BadParams(format!(
            "capture has {} antennas, receiver expects {}",
            wideband.antenna_count(),
            cfg.steering.antennas
        )));
    }
    let streams = Channelizer::new(wideband.sample_rate(), wideband.center_freq())?.process(wideband)?;
    let parts: Vec<Reception> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .channels
            .iter()
            .map(|&ch| {
                let stream = &streams[ch.rf_index()];
                s.spawn(move || receive_channel(stream, ch, cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("channel worker panicked")).collect()
    });
    let mut out = Reception::default();
    for p in parts {
        out.packets.extend(p.packets);
        out.rejected += p.rejected;
    }
    out.packets.sort_by_key(|p| (p.features.timestamp, p.channel));
    Ok(out)
}
