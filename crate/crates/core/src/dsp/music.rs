//! MUSIC angle-of-arrival estimation for a uniform linear array.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use super::{DspError, IqFrame};

pub const LIGHT_SPEED: f64 = 2.998e8;
const DEFAULT_F0: f64 = 2.44e9;

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringConfig {
    pub antennas: usize,
    /// Element spacing, metres.
    pub spacing: f64,
    pub center_freq: f64,
    /// Candidate angles, degrees, strictly increasing.
    pub grid: Vec<f64>,
    pub light_speed: f64,
}

impl SteeringConfig {
    /// Half-wavelength spacing at 2.44 GHz, grid -90..=90 in 0.5° steps.
    pub fn half_wavelength(antennas: usize) -> Self {
        SteeringConfig {
            antennas,
            spacing: LIGHT_SPEED / DEFAULT_F0 / 2.0,
            center_freq: DEFAULT_F0,
            grid: Self::default_grid(),
            light_speed: LIGHT_SPEED,
        }
    }

    pub fn default_grid() -> Vec<f64> {
        (0..=360).map(|i| -90.0 + 0.5 * i as f64).collect()
    }

    pub fn with_center_freq(mut self, f: f64) -> Self {
        self.center_freq = f;
        self
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.antennas < 2 {
            return Err(DspError::BadParams("MUSIC needs at least two antennas".into()));
        }
        if !(self.spacing > 0.0 && self.center_freq > 0.0 && self.light_speed > 0.0) {
            return Err(DspError::BadParams("spacing, frequency and light speed must be positive".into()));
        }
        if self.grid.is_empty() || self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DspError::BadParams("angle grid must be nonempty and increasing".into()));
        }
        Ok(())
    }

    /// Inter-element phase step `2π·a·f0/c`.
    pub fn delta(&self) -> f64 {
        2.0 * PI * self.spacing * self.center_freq / self.light_speed
    }

    /// `[1, e^{jΔ sinθ}, …, e^{jΔ sinθ (M-1)}]`.
    pub fn steering(&self, theta_deg: f64) -> DVector<Complex64> {
        let step = self.delta() * theta_deg.to_radians().sin();
        DVector::from_fn(self.antennas, |m, _| Complex64::from_polar(1.0, step * m as f64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSpectrum {
    /// Sample covariance normalised by the number of snapshots.
    pub covariance: DMatrix<Complex64>,
    /// Eigenvectors of the M-1 smallest eigenvalues.
    pub noise_subspace: DMatrix<Complex64>,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub peak: f64,
}

impl PseudoSpectrum {
    pub fn peak_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::MIN, f64::max)
    }
}

pub fn estimate_aoa_music(
    frame: &IqFrame,
    config: &SteeringConfig,
) -> Result<(f64, PseudoSpectrum), DspError> {
    config.validate()?;
    let m = frame.antenna_count();
    if m != config.antennas {
        return Err(DspError::BadParams(format!(
            "frame has {m} antennas, steering config {}",
            config.antennas
        )));
    }
    let ns = frame.len();
    if ns < m {
        return Err(DspError::BadParams(format!("{ns} snapshots for {m} antennas")));
    }
    let mut cov = DMatrix::<Complex64>::zeros(m, m);
    for i in 0..ns {
        for r in 0..m {
            let yr = frame.antenna(r)[i];
            for c in r..m {
                cov[(r, c)] += yr * frame.antenna(c)[i].conj();
            }
        }
    }
    for r in 0..m {
        for c in r..m {
            cov[(r, c)] /= ns as f64;
            cov[(c, r)] = cov[(r, c)].conj();
        }
    }
    let trace: f64 = (0..m).map(|i| cov[(i, i)].re).sum();
    if !(trace > 0.0 && trace.is_finite()) {
        return Err(DspError::DegenerateCovariance);
    }

    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let noise = DMatrix::from_fn(m, m - 1, |r, c| eig.eigenvectors[(r, order[c])]);

    // Projection lengths are at most M; the floor keeps values finite.
    let floor = m as f64 * 1e-15;
    let values: Vec<f64> = config
        .grid
        .iter()
        .map(|&th| {
            let b = config.steering(th);
            let proj = noise.ad_mul(&b);
            1.0 / proj.norm_squared().max(floor)
        })
        .collect();
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    let peak = config.grid[best];
    Ok((peak, PseudoSpectrum { covariance: cov, noise_subspace: noise, grid: config.grid.clone(), values, peak }))
}
