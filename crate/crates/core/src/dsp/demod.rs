//! GFSK demodulation: access-address sync, CFO estimation and bit slicing.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use super::gfsk::{gfsk_phase, GfskParams};
use super::{DspError, IqFrame};
use crate::frames::link::{sync_bits, SYNC_BITS};

/// Minimum normalised correlation between the frequency discriminator and
/// the known preamble + access address.
pub const SYNC_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct Demodulated {
    /// Hard bits from the preamble onward.
    pub bits: Vec<u8>,
    /// Hz.
    pub cfo: f64,
    /// Fractional sample index of the first preamble symbol.
    pub sync_position: f64,
    pub sync_correlation: f64,
}

pub(crate) fn samples_per_symbol(frame: &IqFrame) -> Result<usize, DspError> {
    let sps = frame.sample_rate() / GfskParams::default().symbol_rate;
    if sps.fract().abs() > 1e-9 || sps < 2.0 {
        return Err(DspError::BadParams(format!(
            "sample rate {} is not an integer multiple (>= 2) of the symbol rate",
            frame.sample_rate()
        )));
    }
    Ok(sps.round() as usize)
}

fn discriminator(x: &[Complex64]) -> Vec<f64> {
    x.windows(2).map(|w| (w[1] * w[0].conj()).arg()).collect()
}

/// Expected discriminator output over the sync word, mean removed and
/// unit-normalised.
fn sync_template(sps: usize) -> Vec<f64> {
    let len = SYNC_BITS * sps;
    let phase = gfsk_phase(&sync_bits(), &GfskParams::with_sps(sps), 0.0, len + 1);
    let mut r: Vec<f64> = phase.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    r.iter_mut().for_each(|v| *v -= mean);
    let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    r.iter_mut().for_each(|v| *v /= norm);
    r
}

/// Best sync lag within `lags` as (fractional position, correlation).
pub(crate) fn find_sync(x: &[Complex64], sps: usize, lags: Range<usize>) -> Option<(f64, f64)> {
    let r = sync_template(sps);
    let d = discriminator(x);
    if d.len() < r.len() {
        return None;
    }
    let last = d.len() - r.len();
    let lags = lags.start.min(last + 1)..lags.end.min(last + 1);
    let corr_at = |l: usize| {
        let w = &d[l..l + r.len()];
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in w.iter().zip(&r) {
            num += (a - mean) * b;
            den += (a - mean) * (a - mean);
        }
        if den > 0.0 {
            num / den.sqrt()
        } else {
            0.0
        }
    };
    let (best, c) = lags.clone().map(|l| (l, corr_at(l))).max_by(|a, b| a.1.total_cmp(&b.1))?;
    let mut pos = best as f64;
    if best > 0 && best < last {
        let (cm, cp) = (corr_at(best - 1), corr_at(best + 1));
        let curv = cm - 2.0 * c + cp;
        if curv < 0.0 {
            pos += (0.5 * (cm - cp) / curv).clamp(-0.5, 0.5);
        }
    }
    Some((pos, c))
}

/// Fits `phase residual = a + b·n + c·f_ref(n)` over the sync word and
/// returns (b in rad/sample, timing correction in samples).
fn fit_cfo_timing(x: &[Complex64], sps: usize, pos: f64) -> Option<(f64, f64)> {
    let params = GfskParams::with_sps(sps);
    let n0 = pos.ceil().max(0.0) as usize + 1;
    // Stop a symbol early: the tail of the sync word is shaped by the
    // unknown header bits that follow it.
    let n1 = ((pos + ((SYNC_BITS - 1) * sps) as f64).floor() as usize).min(x.len().saturating_sub(1));
    if n1 <= n0 + 8 {
        return None;
    }
    let phase = gfsk_phase(&sync_bits(), &params, pos, n1 + 1);
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    let mid = 0.5 * (n0 + n1) as f64;
    let mut unwrapped = 0.0;
    let mut prev: Option<f64> = None;
    for n in n0..n1 {
        let res = (x[n] * Complex64::from_polar(1.0, -phase[n])).arg();
        unwrapped = match prev {
            None => res,
            Some(p) => {
                let mut step = res - p;
                step -= 2.0 * PI * (step / (2.0 * PI)).round();
                unwrapped + step
            }
        };
        prev = Some(res);
        let f_ref = 0.5 * (phase[n + 1] - phase[n - 1]);
        let row = Vector3::new(1.0, n as f64 - mid, f_ref);
        ata += row * row.transpose();
        atb += row * unwrapped;
    }
    let sol = ata.try_inverse()? * atb;
    Some((sol[1], -sol[2]))
}

/// Demodulates antenna 0 of `span`. The span must hold the preamble and
/// access address.
pub fn demodulate(span: &IqFrame) -> Result<Demodulated, DspError> {
    let sps = samples_per_symbol(span)?;
    demodulate_in(span, sps, 0..span.len())
}

pub(crate) fn demodulate_in(
    span: &IqFrame,
    sps: usize,
    lags: Range<usize>,
) -> Result<Demodulated, DspError> {
    let x = span.antenna(0);
    let (mut pos, corr) =
        find_sync(x, sps, lags).ok_or(DspError::SyncFailure { correlation: 0.0 })?;
    if corr < SYNC_THRESHOLD {
        return Err(DspError::SyncFailure { correlation: corr });
    }
    let mut w = 0.0;
    for _ in 0..3 {
        let (slope, dt) =
            fit_cfo_timing(x, sps, pos).ok_or(DspError::SyncFailure { correlation: corr })?;
        w = slope;
        pos += dt.clamp(-1.0, 1.0);
    }

    // Cumulative phase of the CFO-corrected signal.
    let mut theta = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    theta.push(0.0);
    for n in 1..x.len() {
        let step = (x[n] * x[n - 1].conj()).arg() - w;
        acc += step - 2.0 * PI * (step / (2.0 * PI)).round();
        theta.push(acc);
    }
    let at = |t: f64| {
        let i = (t.floor().max(0.0) as usize).min(theta.len() - 2);
        let f = t - i as f64;
        theta[i] + f * (theta[i + 1] - theta[i])
    };
    // A final symbol is sliced if at least half of it is present.
    let last = (x.len() - 1) as f64;
    let half = 0.5 * sps as f64;
    let bits = (0..)
        .map(|k| pos + (k * sps) as f64)
        .take_while(|&t0| t0 + half <= last + 1e-6)
        .map(|t0| (at((t0 + sps as f64).min(last)) - at(t0) > 0.0) as u8)
        .collect();
    Ok(Demodulated {
        bits,
        cfo: w * span.sample_rate() / (2.0 * PI),
        sync_position: pos,
        sync_correlation: corr,
    })
}
