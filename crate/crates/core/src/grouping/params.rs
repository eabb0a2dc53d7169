//! Grouping parameters and their `key = value` file format.
//!
//! ```text
//! # weights must sum to 1
//! w_ts = 0.5
//! w_aoa = 0.2
//! w_cfo = 0.2
//! s_thre = 0.8
//! epoch_expiry_s = 1200
//! ```
//!
//! Keys not listed keep their defaults. Unknown keys are an error.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::StoreConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupingParams {
    pub w_ts: f64,
    pub w_aoa: f64,
    pub w_cfo: f64,
    pub w_rss: f64,
    /// µs.
    pub ts_thre: f64,
    /// Degrees.
    pub aoa_thre: f64,
    /// Hz.
    pub cfo_thre: f64,
    /// dB.
    pub rss_thre: f64,
    pub s_thre: f64,
    /// Address validity after last use, µs.
    pub epoch_expiry_us: i64,
    pub tau_alpha: f64,
    /// Gaps longer than this (µs) skip the time term.
    pub drift_guard_us: i64,
}

impl Default for GroupingParams {
    fn default() -> Self {
        GroupingParams {
            w_ts: 0.4,
            w_aoa: 0.25,
            w_cfo: 0.25,
            w_rss: 0.1,
            ts_thre: 8.0,
            aoa_thre: 10.0,
            cfo_thre: 1000.0,
            rss_thre: 5.0,
            s_thre: 0.6,
            epoch_expiry_us: 20 * 60 * 1_000_000,
            tau_alpha: 0.1,
            drift_guard_us: 10_000_000,
        }
    }
}

impl GroupingParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        let w = [self.w_ts, self.w_aoa, self.w_cfo, self.w_rss];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(ParamsError::Invalid("weights must be finite and non-negative".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ParamsError::Invalid(format!("weights sum to {sum}, expected 1")));
        }
        let t = [self.ts_thre, self.aoa_thre, self.cfo_thre, self.rss_thre, self.s_thre];
        if t.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(ParamsError::Invalid("thresholds must be positive".into()));
        }
        if self.epoch_expiry_us <= 0 || self.drift_guard_us <= 0 {
            return Err(ParamsError::Invalid("epoch expiry and drift guard must be positive".into()));
        }
        if !(self.tau_alpha > 0.0 && self.tau_alpha <= 1.0) {
            return Err(ParamsError::Invalid("tau_alpha must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Store settings matching these parameters.
    pub fn store_config(&self, nodes: usize) -> StoreConfig {
        StoreConfig {
            nodes,
            epoch_expiry_us: self.epoch_expiry_us,
            tau_alpha: self.tau_alpha,
            tau_clamp_us: 10.0,
            drift_guard_us: self.drift_guard_us,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ParamsError> {
        let mut p = GroupingParams::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ParamsError::Syntax { line: i + 1, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            let key = key.trim();
            let v: f64 = value.trim().parse().map_err(|_| err(format!("bad number {:?}", value.trim())))?;
            match key {
                "w_ts" => p.w_ts = v,
                "w_aoa" => p.w_aoa = v,
                "w_cfo" => p.w_cfo = v,
                "w_rss" => p.w_rss = v,
                "ts_thre" => p.ts_thre = v,
                "aoa_thre" => p.aoa_thre = v,
                "cfo_thre" => p.cfo_thre = v,
                "rss_thre" => p.rss_thre = v,
                "s_thre" => p.s_thre = v,
                "epoch_expiry_s" => p.epoch_expiry_us = (v * 1e6).round() as i64,
                "tau_alpha" => p.tau_alpha = v,
                "drift_guard_s" => p.drift_guard_us = (v * 1e6).round() as i64,
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn from_file(path: &Path) -> Result<Self, ParamsError> {
        let text = std::fs::read_to_string(path).map_err(|e| ParamsError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        format!(
            "w_ts = {}\nw_aoa = {}\nw_cfo = {}\nw_rss = {}\nts_thre = {}\naoa_thre = {}\ncfo_thre = {}\nrss_thre = {}\n\
             s_thre = {}\nepoch_expiry_s = {}\ntau_alpha = {}\ndrift_guard_s = {}\n",
            self.w_ts,
            self.w_aoa,
            self.w_cfo,
            self.w_rss,
            self.ts_thre,
            self.aoa_thre,
            self.cfo_thre,
            self.rss_thre,
            self.s_thre,
            self.epoch_expiry_us as f64 / 1e6,
            self.tau_alpha,
            self.drift_guard_us as f64 / 1e6,
        )
    }
}
