//! GFSK modulation.
//!
//! The phase trajectory is built from the closed-form integral of a
//! rectangular symbol convolved with a Gaussian. Bit 1 raises the phase by
//! `π·h` over one symbol, bit 0 lowers it.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;

use super::{DspError, IqFrame};

pub const BLE_SYMBOL_RATE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfskParams {
    pub modulation_index: f64,
    pub bt: f64,
    pub samples_per_symbol: usize,
    pub symbol_rate: f64,
}

impl Default for GfskParams {
    fn default() -> Self {
        GfskParams { modulation_index: 0.5, bt: 0.5, samples_per_symbol: 2, symbol_rate: BLE_SYMBOL_RATE }
    }
}

impl GfskParams {
    pub fn with_sps(samples_per_symbol: usize) -> Self {
        GfskParams { samples_per_symbol, ..Default::default() }
    }

    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate * self.samples_per_symbol as f64
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.modulation_index) || !ok(self.bt) || !ok(self.symbol_rate) {
            return Err(DspError::BadParams(format!("{self:?}")));
        }
        if self.samples_per_symbol < 2 {
            return Err(DspError::BadParams("samples per symbol must be at least 2".into()));
        }
        Ok(())
    }

    /// Symbols on either side of a symbol's centre over which its pulse
    /// has not yet settled.
    fn pulse_half_span(&self) -> i64 {
        let sigma = LN_2.sqrt() / (2.0 * PI * self.bt);
        (0.5 + 8.0 * sigma).ceil() as i64
    }
}

/// Normalised phase response of one symbol at `x` symbols from its centre:
/// 0 long before, 1 long after.
pub fn phase_pulse(x: f64, bt: f64) -> f64 {
    let k = PI * bt * (2.0 / LN_2).sqrt();
    let e = |u: f64| u * libm::erf(k * u) + (-(k * u) * (k * u)).exp() / (k * PI.sqrt());
    0.5 * (e(x + 0.5) - e(x - 0.5)) + 0.5
}

/// Unwrapped phase (radians, without carrier) at samples `0..len`, with the
/// first symbol starting at sample `delay` (fractional allowed).
pub fn gfsk_phase(bits: &[u8], params: &GfskParams, delay: f64, len: usize) -> Vec<f64> {
    let sps = params.samples_per_symbol as i64;
    let span = params.pulse_half_span();
    let base = delay.floor();
    let frac = delay - base;
    let base = base as i64;

    // table[s][j + span]: pulse of a symbol `j` symbols behind the current
    // one, at sample `s` within the current symbol.
    let width = (2 * span + 1) as usize;
    let mut table = vec![0.0; sps as usize * width];
    for s in 0..sps {
        for j in -span..=span {
            let x = j as f64 + (s as f64 - frac) / sps as f64 - 0.5;
            table[s as usize * width + (j + span) as usize] = phase_pulse(x, params.bt);
        }
    }

    let amp: Vec<f64> = bits.iter().map(|&b| if b & 1 == 1 { 1.0 } else { -1.0 }).collect();
    let mut prefix = vec![0.0; amp.len() + 1];
    for (i, a) in amp.iter().enumerate() {
        prefix[i + 1] = prefix[i] + a;
    }
    let nbits = amp.len() as i64;
    let settled = |k: i64| prefix[k.clamp(0, nbits) as usize];

    let scale = PI * params.modulation_index;
    (0..len as i64)
        .map(|n| {
            let rel = n - base;
            let q = rel.div_euclid(sps);
            let s = rel.rem_euclid(sps) as usize;
            let row = &table[s * width..(s + 1) * width];
            let mut acc = settled(q - span);
            for j in -span..=span {
                let k = q - j;
                if (0..nbits).contains(&k) {
                    acc += amp[k as usize] * row[(j + span) as usize];
                }
            }
            scale * acc
        })
        .collect()
}

/// Placement of a modulated burst inside a longer sample buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Burst {
    /// Carrier offset from the buffer's centre frequency, Hz.
    pub freq: f64,
    pub amplitude: f64,
    pub phase: f64,
    /// Sample index (fractional) at which the first symbol starts.
    pub delay: f64,
}

impl Default for Burst {
    fn default() -> Self {
        Burst { freq: 0.0, amplitude: 1.0, phase: 0.0, delay: 0.0 }
    }
}

/// Adds `bits` modulated as `burst` into `out`. Samples outside the burst's
/// symbols are left untouched.
pub fn add_burst(out: &mut [Complex64], bits: &[u8], params: &GfskParams, burst: &Burst) {
    let sps = params.samples_per_symbol as f64;
    let lead = (params.pulse_half_span() as f64) * sps;
    let first = (burst.delay - lead).floor().max(0.0) as usize;
    let last = ((burst.delay + (bits.len() as f64) * sps + lead).ceil().max(0.0) as usize).min(out.len());
    if first >= last {
        return;
    }
    let phase = gfsk_phase(bits, params, burst.delay - first as f64, last - first);
    let w = 2.0 * PI * burst.freq / params.sample_rate();
    // Only the symbol interval carries energy: a transmitter ramps on at
    // the first symbol and off one symbol after the last.
    let on = burst.delay;
    let off = burst.delay + (bits.len() + 1) as f64 * sps;
    for (i, p) in phase.iter().enumerate() {
        let n = (first + i) as f64;
        if n < on || n >= off {
            continue;
        }
        out[first + i] += Complex64::from_polar(burst.amplitude, p + w * n + burst.phase);
    }
}

pub fn gfsk_modulate(
    bits: &[u8],
    params: &GfskParams,
    cfo: f64,
    amplitude: f64,
) -> Result<IqFrame, DspError> {
    params.validate()?;
    if bits.is_empty() {
        return Err(DspError::BadParams("no bits to modulate".into()));
    }
    if !(amplitude >= 0.0 && amplitude.is_finite()) || !cfo.is_finite() {
        return Err(DspError::BadParams(format!("amplitude {amplitude}, cfo {cfo}")));
    }
    let len = bits.len() * params.samples_per_symbol;
    let mut out = vec![Complex64::default(); len];
    add_burst(&mut out, bits, params, &Burst { freq: cfo, amplitude, ..Default::default() });
    IqFrame::single(out, params.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pulse_limits_and_symmetry() {
        assert!(phase_pulse(-4.0, 0.5).abs() < 1e-12);
        assert!((phase_pulse(4.0, 0.5) - 1.0).abs() < 1e-12);
        assert!((phase_pulse(0.0, 0.5) - 0.5).abs() < 1e-12);
        for x in [0.1, 0.4, 0.9, 1.7] {
            assert!((phase_pulse(x, 0.5) + phase_pulse(-x, 0.5) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pulse_matches_numeric_convolution() {
        // Oracle: trapezoidal integral of rect * gaussian frequency pulse.
        let bt = 0.5;
        let sigma = LN_2.sqrt() / (2.0 * PI * bt);
        let g = |t: f64| {
            let a = (t + 0.5) / (sigma * 2f64.sqrt());
            let b = (t - 0.5) / (sigma * 2f64.sqrt());
            0.5 * (libm::erf(a) - libm::erf(b))
        };
        let steps = 67_000;
        let dt = 6.7 / steps as f64;
        let acc: f64 = (0..steps)
            .map(|i| {
                let t = -6.0 + i as f64 * dt;
                0.5 * (g(t) + g(t + dt)) * dt
            })
            .sum();
        assert!((acc - phase_pulse(0.7, bt)).abs() < 1e-6, "{acc}");
    }

    #[test]
    fn length_and_phase_step() {
        let bits = [1u8; 32];
        let f = gfsk_modulate(&bits, &GfskParams::with_sps(4), 0.0, 1.0).unwrap();
        assert_eq!(f.len(), 128);
        // Steady-state increment of a run of ones: π/2 per symbol.
        let s = f.antenna(0);
        let d = (s[65] * s[64].conj()).arg();
        assert!((d - PI / 2.0 / 4.0).abs() < 1e-9);
    }

    #[test]
    fn all_zero_bits_rotate_negative() {
        let f = gfsk_modulate(&[0u8; 16], &GfskParams::default(), 0.0, 1.0).unwrap();
        let s = f.antenna(0);
        assert!(s.windows(2).all(|w| (w[1] * w[0].conj()).arg() < 0.0));
    }

    #[test]
    fn cfo_adds_constant_increment() {
        let bits: Vec<u8> = (0..40).map(|i| (i * 5 % 3 == 0) as u8).collect();
        let p = GfskParams::default();
        let a = gfsk_modulate(&bits, &p, 0.0, 1.0).unwrap();
        let b = gfsk_modulate(&bits, &p, 50e3, 1.0).unwrap();
        let want = 2.0 * PI * 50e3 / p.sample_rate();
        for n in 1..a.len() {
            let da = (a.antenna(0)[n] * a.antenna(0)[n - 1].conj()).arg();
            let db = (b.antenna(0)[n] * b.antenna(0)[n - 1].conj()).arg();
            assert!((db - da - want).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(gfsk_modulate(&[], &GfskParams::default(), 0.0, 1.0).is_err());
        assert!(gfsk_modulate(&[1], &GfskParams::with_sps(1), 0.0, 1.0).is_err());
        let neg = GfskParams { symbol_rate: -1.0, ..Default::default() };
        assert!(matches!(gfsk_modulate(&[1], &neg, 0.0, 1.0), Err(DspError::BadParams(_))));
    }

    #[test]
    fn fractional_delay_shifts_phase() {
        let bits: Vec<u8> = (0..20).map(|i| (i % 3 == 0) as u8).collect();
        let p = GfskParams::with_sps(8);
        let a = gfsk_phase(&bits, &p, 3.0, 200);
        let b = gfsk_phase(&bits, &p, 3.5, 200);
        let c = gfsk_phase(&bits, &p, 4.0, 200);
        assert!((a[50] - c[51]).abs() < 1e-12);
        // Half-sample delay lies between its neighbours.
        assert!((b[51] - 0.5 * (a[51] + c[51])).abs() < 0.05);
    }
}
