//! Constant-velocity Kalman filter with Rauch-Tung-Striebel smoothing.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use super::{Fix, LocateError};
use crate::store::DeviceId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanConfig {
    /// White-acceleration spectral density, m²/s³.
    pub accel_psd: f64,
    /// Prior velocity variance, (m/s)².
    pub init_vel_var: f64,
    /// Floor added to each fix covariance diagonal, m².
    pub min_meas_var: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig { accel_psd: 0.05, init_vel_var: 4.0, min_meas_var: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub ts_us: i64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl TrackPoint {
    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub device_id: DeviceId,
    pub points: Vec<TrackPoint>,
}

impl Trajectory {
    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(|p| [p.x, p.y]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("ts_us,device_id,x_m,y_m,vx,vy\n");
        for p in &self.points {
            s += &format!("{},{},{:.4},{:.4},{:.4},{:.4}\n", p.ts_us, self.device_id, p.x, p.y, p.vx, p.vy);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanOutput {
    pub trajectory: Trajectory,
    /// Filter (not smoother) output.
    pub filtered: Vec<TrackPoint>,
    /// Measurement minus prediction, one per fix after the first.
    pub innovations: Vec<[f64; 2]>,
    pub innovation_cov: Vec<[[f64; 2]; 2]>,
}

fn transition(dt: f64, q: f64) -> (Matrix4<f64>, Matrix4<f64>) {
    let f = Matrix4::new(1.0, 0.0, dt, 0.0, 0.0, 1.0, 0.0, dt, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let (a, b, c) = (q * dt.powi(3) / 3.0, q * dt.powi(2) / 2.0, q * dt);
    let qm = Matrix4::new(a, 0.0, b, 0.0, 0.0, a, 0.0, b, b, 0.0, c, 0.0, 0.0, b, 0.0, c);
    (f, qm)
}

fn point(ts: i64, x: &Vector4<f64>) -> TrackPoint {
    TrackPoint { ts_us: ts, x: x[0], y: x[1], vx: x[2], vy: x[3] }
}

pub fn kalman_smooth(fixes: &[Fix], cfg: &KalmanConfig) -> Result<KalmanOutput, LocateError> {
    let first = fixes.first().ok_or(LocateError::Empty)?;
    if fixes.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
        return Err(LocateError::Unordered);
    }
    let h = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
    let meas_cov = |f: &Fix| {
        let c = f.covariance;
        let sym = (c[0][1] + c[1][0]) / 2.0;
        Matrix2::new(c[0][0] + cfg.min_meas_var, sym, sym, c[1][1] + cfg.min_meas_var)
    };

    let n = fixes.len();
    let mut xs_f = Vec::with_capacity(n);
    let mut ps_f = Vec::with_capacity(n);
    let mut xs_p = Vec::with_capacity(n);
    let mut ps_p = Vec::with_capacity(n);
    let mut fs = Vec::with_capacity(n);
    let mut innovations = Vec::new();
    let mut innovation_cov = Vec::new();

    let mut x = Vector4::new(first.position[0], first.position[1], 0.0, 0.0);
    let r0 = meas_cov(first);
    let mut p = Matrix4::zeros();
    p.fixed_view_mut::<2, 2>(0, 0).copy_from(&r0);
    p[(2, 2)] = cfg.init_vel_var;
    p[(3, 3)] = cfg.init_vel_var;
    xs_f.push(x);
    ps_f.push(p);
    xs_p.push(x);
    ps_p.push(p);
    fs.push(Matrix4::identity());

    for w in fixes.windows(2) {
        let dt = (w[1].timestamp - w[0].timestamp) as f64 * 1e-6;
        let (f, q) = transition(dt, cfg.accel_psd);
        let xp = f * x;
        let pp = f * p * f.transpose() + q;
        let z = Vector2::new(w[1].position[0], w[1].position[1]);
        let y = z - h * xp;
        let s = h * pp * h.transpose() + meas_cov(&w[1]);
        let s_inv = s.try_inverse().ok_or(LocateError::DegenerateGeometry(0.0))?;
        let k = pp * h.transpose() * s_inv;
        x = xp + k * y;
        // Joseph form keeps P symmetric.
        let ikh = Matrix4::identity() - k * h;
        p = ikh * pp * ikh.transpose() + k * meas_cov(&w[1]) * k.transpose();
        innovations.push([y[0], y[1]]);
        innovation_cov.push([[s[(0, 0)], s[(0, 1)]], [s[(1, 0)], s[(1, 1)]]]);
        xs_p.push(xp);
        ps_p.push(pp);
        fs.push(f);
        xs_f.push(x);
        ps_f.push(p);
    }

    let mut xs_s = xs_f.clone();
    let mut p_next = ps_f[n - 1];
    for i in (0..n.saturating_sub(1)).rev() {
        let Some(pp_inv) = ps_p[i + 1].try_inverse() else {
            p_next = ps_f[i];
            continue;
        };
        let c = ps_f[i] * fs[i + 1].transpose() * pp_inv;
        xs_s[i] = xs_f[i] + c * (xs_s[i + 1] - xs_p[i + 1]);
        let ps = ps_f[i] + c * (p_next - ps_p[i + 1]) * c.transpose();
        p_next = ps;
    }

    let ts = |i: usize| fixes[i].timestamp;
    Ok(KalmanOutput {
        trajectory: Trajectory {
            device_id: first.device_id,
            points: xs_s.iter().enumerate().map(|(i, x)| point(ts(i), x)).collect(),
        },
        filtered: xs_f.iter().enumerate().map(|(i, x)| point(ts(i), x)).collect(),
        innovations,
        innovation_cov,
    })
}

pub fn kalman_track(fixes: &[Fix], cfg: &KalmanConfig) -> Result<Trajectory, LocateError> {
    kalman_smooth(fixes, cfg).map(|o| o.trajectory)
}
