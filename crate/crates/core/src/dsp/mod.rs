//! Baseband signal processing: GFSK synthesis and demodulation, the
//! wideband channelizer, packet detection and per-packet features
//! (RSS, CFO, MUSIC angle of arrival).

pub mod channelizer;
pub mod demod;
pub mod detect;
pub mod gfsk;
pub mod iqfile;
pub mod music;
pub mod receiver;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use channelizer::{channelize, Channelizer};
pub use demod::{demodulate, Demodulated};
pub use detect::{detect_packets, Detection};
pub use gfsk::{gfsk_modulate, GfskParams};
pub use music::{estimate_aoa_music, PseudoSpectrum, SteeringConfig};
pub use receiver::{receive, ReceivedPacket, ReceiverConfig};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("bad span: {0}")]
    BadSpan(String),
    #[error("sync failure: access-address correlation {correlation:.3} below threshold")]
    SyncFailure { correlation: f64 },
    #[error("degenerate covariance (all-zero input)")]
    DegenerateCovariance,
    #[error("bad I/Q file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Multi-antenna block of complex baseband samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IqFrame {
    samples: Vec<Vec<Complex64>>,
    sample_rate: f64,
    center_freq: f64,
    /// Time of sample 0, µs.
    start_time: f64,
}

impl IqFrame {
    pub fn new(
        samples: Vec<Vec<Complex64>>,
        sample_rate: f64,
        center_freq: f64,
        start_time: f64,
    ) -> Result<Self, DspError> {
        let n = samples.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(DspError::BadParams("frame needs at least one sample".into()));
        }
        if samples.iter().any(|a| a.len() != n) {
            return Err(DspError::BadParams("antenna sequences differ in length".into()));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(DspError::BadParams(format!("sample rate {sample_rate}")));
        }
        if !center_freq.is_finite() || !start_time.is_finite() {
            return Err(DspError::BadParams("non-finite frequency or start time".into()));
        }
        Ok(IqFrame { samples, sample_rate, center_freq, start_time })
    }

    pub fn single(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self, DspError> {
        Self::new(vec![samples], sample_rate, 0.0, 0.0)
    }

    pub fn antennas(&self) -> &[Vec<Complex64>] {
        &self.samples
    }

    pub fn antenna(&self, m: usize) -> &[Complex64] {
        &self.samples[m]
    }

    pub fn antenna_count(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn center_freq(&self) -> f64 {
        self.center_freq
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn into_samples(self) -> Vec<Vec<Complex64>> {
        self.samples
    }

    /// Time of sample `n` (may be fractional), µs.
    pub fn time_of(&self, n: f64) -> f64 {
        self.start_time + n / self.sample_rate * 1e6
    }

    pub fn with_center_freq(mut self, f: f64) -> Self {
        self.center_freq = f;
        self
    }

    pub fn with_start_time(mut self, t: f64) -> Self {
        self.start_time = t;
        self
    }

    /// Samples `start..end` of every antenna, clamped to the frame.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self, DspError> {
        let end = end.min(self.len());
        if start >= end {
            return Err(DspError::BadSpan(format!("empty slice {start}..{end}")));
        }
        Ok(IqFrame {
            samples: self.samples.iter().map(|a| a[start..end].to_vec()).collect(),
            sample_rate: self.sample_rate,
            center_freq: self.center_freq,
            start_time: self.time_of(start as f64),
        })
    }
}

/// Per-packet physical-layer features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhyFeatures {
    /// Arrival time of the preamble, µs.
    pub timestamp: i64,
    /// dBm.
    pub rss: f64,
    /// Hz.
    pub cfo: f64,
    /// Degrees from array broadside, [-90, 90].
    pub aoa: f64,
}

/// Mean power over all antennas in dB plus `cal_offset`. An all-zero span
/// gives negative infinity.
pub fn estimate_rss(span: &IqFrame, cal_offset: f64) -> f64 {
    let total: f64 = span.samples.iter().flatten().map(|s| s.norm_sqr()).sum();
    let count = (span.len() * span.antenna_count()) as f64;
    10.0 * (total / count).log10() + cal_offset
}
