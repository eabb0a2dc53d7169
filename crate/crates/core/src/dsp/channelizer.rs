//! Critically sampled polyphase filter bank splitting the 80 MHz band into
//! the forty 2 MHz BLE channels.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{DspError, IqFrame};
use crate::frames::rf_center_freq_hz;

pub const CHANNEL_COUNT: usize = 40;
pub const CHANNEL_SPACING_HZ: f64 = 2e6;
pub const BAND_CENTER_HZ: f64 = 2440e6;

const PASS_EDGE_HZ: f64 = 0.7e6;
const STOP_EDGE_HZ: f64 = 1.3e6;
const STOPBAND_DB: f64 = 65.0;

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed lowpass prototype with unit DC gain.
pub fn kaiser_lowpass(sample_rate: f64, pass: f64, stop: f64, atten_db: f64, max_len: usize) -> Vec<f64> {
    let beta = if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    };
    let dw = 2.0 * PI * (stop - pass) / sample_rate;
    let mut n = ((atten_db - 8.0) / (2.285 * dw)).ceil() as usize + 1;
    n = n.min(max_len);
    if n % 2 == 0 {
        n -= 1;
    }
    let fc = 0.5 * (pass + stop) / sample_rate;
    let mid = (n - 1) as f64 / 2.0;
    let i0b = bessel_i0(beta);
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - mid;
            let sinc = if t == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * t).sin() / (PI * t) };
            let r = t / mid;
            sinc * bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

pub struct Channelizer {
    decimation: usize,
    /// Prototype zero-padded to a whole number of branches.
    taps: Vec<f64>,
    delay: usize,
    /// FFT bin of each RF channel.
    bins: [usize; CHANNEL_COUNT],
    center_freq: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Channelizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Channelizer")
            .field("decimation", &self.decimation)
            .field("taps", &self.taps.len())
            .field("delay", &self.delay)
            .finish()
    }
}

impl Channelizer {
    pub fn new(sample_rate: f64, center_freq: f64) -> Result<Self, DspError> {
        let ratio = sample_rate / CHANNEL_SPACING_HZ;
        if ratio.fract().abs() > 1e-9 || ratio < CHANNEL_COUNT as f64 {
            return Err(DspError::BadSpan(format!(
                "sample rate {sample_rate} Hz does not cover {CHANNEL_COUNT} channels of {CHANNEL_SPACING_HZ} Hz"
            )));
        }
        let d = ratio.round() as usize;
        let mut bins = [0usize; CHANNEL_COUNT];
        for (rf, bin) in bins.iter_mut().enumerate() {
            let off = (rf_center_freq_hz(rf) - center_freq) / CHANNEL_SPACING_HZ;
            if off.fract().abs() > 1e-6 || off.abs() > d as f64 / 2.0 {
                return Err(DspError::BadSpan(format!(
                    "channel {rf} is not on the filter-bank grid around {center_freq} Hz"
                )));
            }
            *bin = (off.round() as i64).rem_euclid(d as i64) as usize;
        }
        let proto = kaiser_lowpass(sample_rate, PASS_EDGE_HZ, STOP_EDGE_HZ, STOPBAND_DB, 64 * d - 1);
        let delay = (proto.len() - 1) / 2;
        let mut taps = proto;
        taps.resize(taps.len().div_ceil(d) * d, 0.0);
        let fft = FftPlanner::new().plan_fft_inverse(d);
        Ok(Channelizer { decimation: d, taps, delay, bins, center_freq, fft })
    }

    pub fn decimation(&self) -> usize {
        self.decimation
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Prototype group delay in input samples.
    pub fn delay(&self) -> usize {
        self.delay
    }

    /// FFT bin carrying RF channel `rf`.
    pub fn bin(&self, rf: usize) -> usize {
        self.bins[rf]
    }

    /// Returns one stream per RF channel, index 0 = 2402 MHz. Output start
    /// times are corrected for the prototype's group delay.
    pub fn process(&self, wideband: &IqFrame) -> Result<Vec<IqFrame>, DspError> {
        if (wideband.center_freq() - self.center_freq).abs() > 1e-3 {
            return Err(DspError::BadSpan("centre frequency differs from the plan".into()));
        }
        let d = self.decimation;
        let n_in = wideband.len();
        let n_out = (n_in + self.delay).div_ceil(d);
        let branches = self.taps.len() / d;
        let mut per_channel: Vec<Vec<Vec<Complex64>>> =
            vec![Vec::with_capacity(wideband.antenna_count()); CHANNEL_COUNT];
        let mut buf = vec![Complex64::default(); d];
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        for x in wideband.antennas() {
            let mut outs = vec![vec![Complex64::default(); n_out]; CHANNEL_COUNT];
            for n in 0..n_out {
                let now = (n * d) as isize;
                for (r, slot) in buf.iter_mut().enumerate() {
                    let mut acc = Complex64::default();
                    for p in 0..branches {
                        let idx = now - (p * d + r) as isize;
                        if idx < 0 {
                            break;
                        }
                        if let Some(s) = x.get(idx as usize) {
                            acc += s * self.taps[p * d + r];
                        }
                    }
                    *slot = acc;
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                for (rf, out) in outs.iter_mut().enumerate() {
                    out[n] = buf[self.bins[rf]];
                }
            }
            for (rf, out) in outs.into_iter().enumerate() {
                per_channel[rf].push(out);
            }
        }
        let rate = wideband.sample_rate() / d as f64;
        let start = wideband.time_of(-(self.delay as f64));
        per_channel
            .into_iter()
            .enumerate()
            .map(|(rf, ants)| IqFrame::new(ants, rate, rf_center_freq_hz(rf), start))
            .collect()
    }
}

/// Splits a wideband capture into the forty BLE channel streams.
pub fn channelize(wideband: &IqFrame) -> Result<Vec<IqFrame>, DspError> {
    Channelizer::new(wideband.sample_rate(), wideband.center_freq())?.process(wideband)
}
