//! Energy detector with access-address confirmation.

use super::demod::{find_sync, samples_per_symbol, SYNC_THRESHOLD};
use super::IqFrame;
use crate::frames::link::SYNC_BITS;

/// Moving-average window, in symbols.
const ENERGY_WINDOW_SYMBOLS: usize = 4;
/// Quantile of the smoothed power taken as the noise floor.
const FLOOR_QUANTILE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    /// Arrival of the first preamble sample, µs.
    pub start_time: i64,
    /// Sample span `start..end` in the channel stream, starting a little
    /// ahead of the preamble.
    pub start: usize,
    pub end: usize,
}

/// Finds packets whose smoothed power exceeds the noise floor by
/// `threshold` dB and whose discriminator matches the advertising access
/// address. Results are sorted and non-overlapping.
pub fn detect_packets(channel: &IqFrame, threshold: f64) -> Vec<Detection> {
    let Ok(sps) = samples_per_symbol(channel) else {
        return Vec::new();
    };
    let n = channel.len();
    let win = ENERGY_WINDOW_SYMBOLS * sps;
    if n < (SYNC_BITS + 1) * sps {
        return Vec::new();
    }
    let power: Vec<f64> = (0..n)
        .map(|i| channel.antennas().iter().map(|a| a[i].norm_sqr()).sum::<f64>())
        .collect();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + power[i];
    }
    let smooth: Vec<f64> =
        (0..n).map(|i| (prefix[(i + win).min(n)] - prefix[i]) / win as f64).collect();

    let mut sorted = smooth.clone();
    let k = ((n as f64) * FLOOR_QUANTILE) as usize;
    let (_, floor, _) = sorted.select_nth_unstable_by(k, f64::total_cmp);
    let peak = smooth.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Vec::new();
    }
    let floor = floor.max(peak * 1e-12);
    let high = floor * 10f64.powf(threshold / 10.0);
    let low = floor * 10f64.powf(threshold / 20.0);

    let mut out: Vec<Detection> = Vec::new();
    let mut i = 0;
    while i < n {
        if smooth[i] <= high {
            i += 1;
            continue;
        }
        let a = i;
        while i < n && smooth[i] >= low {
            i += 1;
        }
        let b = (i + win).min(n);
        if b - a < SYNC_BITS * sps {
            continue;
        }
        let lo = a.saturating_sub(2 * win);
        let hi = (a + 2 * win).min(b);
        let Some((pos, corr)) = find_sync(&channel.antenna(0)[..b], sps, lo..hi) else {
            continue;
        };
        if corr < SYNC_THRESHOLD {
            continue;
        }
        let prev_end = out.last().map_or(0, |d| d.end);
        let start = (pos.floor() as usize).saturating_sub(2 * sps).max(prev_end);
        out.push(Detection {
            start_time: channel.time_of(pos).round() as i64,
            start,
            end: b,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::gfsk::{add_burst, Burst, GfskParams};
    use crate::frames::link::to_air_bits;
    use crate::frames::AdvChannel;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        (0..n)
            .map(|_| {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                Complex64::new(a, b) * sigma
            })
            .collect()
    }

    fn packet_bits(rng: &mut ChaCha8Rng) -> Vec<u8> {
        let mut pdu = vec![0x42, 20];
        pdu.extend((0..20).map(|_| rng.random::<u8>()));
        to_air_bits(&pdu, AdvChannel::new(38).unwrap())
    }

    #[test]
    fn silence_and_noise_give_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let zero = IqFrame::single(vec![Complex64::default(); 4000], 2e6).unwrap();
        assert!(detect_packets(&zero, 10.0).is_empty());
        let f = IqFrame::single(noise(20_000, 0.1, &mut rng), 2e6).unwrap();
        assert!(detect_packets(&f, 10.0).is_empty());
    }

    #[test]
    fn injected_packets_timed_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = GfskParams::default();
        let sigma = (0.01f64 / 2.0).sqrt(); // 20 dB
        let mut x = noise(24_000, sigma, &mut rng);
        let b1 = packet_bits(&mut rng);
        let b2 = packet_bits(&mut rng);
        add_burst(&mut x, &b1, &p, &Burst { delay: 2000.0, freq: 12e3, ..Default::default() });
        add_burst(&mut x, &b2, &p, &Burst { delay: 12000.0, freq: -7e3, ..Default::default() });
        let f = IqFrame::single(x, 2e6).unwrap();
        let d = detect_packets(&f, 10.0);
        assert_eq!(d.len(), 2);
        assert!((d[0].start_time - 1000).abs() <= 2);
        assert!((d[1].start_time - 6000).abs() <= 2);
        assert!(d[0].end <= d[1].start);
    }
}
