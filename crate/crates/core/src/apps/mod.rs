//! Applications on top of the tracking pipeline: dataset export, visitor
//! reports and track comparison.

pub mod fixtures;
pub mod ingest;
pub mod report;
pub mod sft;
pub mod trace;

use thiserror::Error;

pub use ingest::merge_receptions;
pub use report::{
    cluster_persons, count_new_visitors, load_zones, parse_zones, validate_zones, visitor_flow, visitors,
    zone_popularity, FlowBin, FlowReport, PopularityOptions, Visitors, Zone, ZoneCount, ZoneFilter,
};
pub use sft::{export_sft, parse_coordinates, unresolved_placeholders, ExportOptions, SceneInfo, SftSample, Template};
pub use trace::{frechet, TruthIndex};

#[derive(Debug, Error)]
pub enum AppsError {
    #[error("no device could be localized in the window")]
    EmptyWindow,
    #[error("template: {0}")]
    Template(String),
    #[error("zones: {0}")]
    Zones(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses `500ms`, `3s`, `10m`, `2h` or a bare number of seconds into µs.
pub fn parse_duration(s: &str) -> Result<i64, AppsError> {
    let s = s.trim();
    let split = s.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let v: f64 = num.trim().parse().map_err(|_| AppsError::InvalidArgument(format!("bad duration {s:?}")))?;
    let scale = match unit {
        "us" => 1.0,
        "ms" => 1e3,
        "" | "s" => 1e6,
        "m" | "min" => 60e6,
        "h" => 3600e6,
        _ => return Err(AppsError::InvalidArgument(format!("bad duration unit in {s:?}"))),
    };
    if !(v.is_finite() && v >= 0.0) {
        return Err(AppsError::InvalidArgument(format!("bad duration {s:?}")));
    }
    Ok((v * scale).round() as i64)
}
