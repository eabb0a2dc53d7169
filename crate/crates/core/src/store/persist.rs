//! JSON Lines persistence.
//!
//! Line 1 is a header object; every following line is one packet record.
//! Records are written in (timestamp, device id) order so a store always
//! serialises to the same bytes.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DeviceId, NodeObservation, PacketRecord, Store, StoreConfig, StoreError};
use crate::frames::{AdvAddress, AdvChannel, DeviceFact};

pub const SCHEMA_NAME: &str = "bletrack-store";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    nodes: usize,
    epoch_expiry_us: i64,
    tau_alpha: f64,
    tau_clamp_us: f64,
    drift_guard_us: i64,
}

#[derive(Serialize, Deserialize)]
struct NodeLine {
    node: usize,
    rss: Option<f64>,
    cfo: Option<f64>,
    aoa: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    ts_us: i64,
    device_id: DeviceId,
    addr: AdvAddress,
    channel: AdvChannel,
    phy: Vec<NodeLine>,
    facts: DeviceFact,
}

impl Store {
    pub fn write_to<W: Write>(&self, w: W) -> Result<(), StoreError> {
        let mut w = BufWriter::new(w);
        let c = self.config;
        let header = Header {
            schema: SCHEMA_NAME.into(),
            version: SCHEMA_VERSION,
            nodes: c.nodes,
            epoch_expiry_us: c.epoch_expiry_us,
            tau_alpha: c.tau_alpha,
            tau_clamp_us: c.tau_clamp_us,
            drift_guard_us: c.drift_guard_us,
        };
        serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        for (id, r) in self.records_in_order() {
            let line = RecordLine {
                ts_us: r.timestamp,
                device_id: id,
                addr: r.adv_address,
                channel: r.channel,
                phy: r
                    .phy
                    .iter()
                    .enumerate()
                    .map(|(node, o)| NodeLine { node, rss: o.rss, cfo: o.cfo, aoa: o.aoa })
                    .collect(),
                facts: r.facts.clone(),
            };
            serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: std::io::Read>(r: R) -> Result<Self, StoreError> {
        let mut lines = BufReader::new(r).lines();
        let first = lines.next().ok_or_else(|| StoreError::SchemaMismatch("empty file".into()))??;
        let header: Header = serde_json::from_str(&first)
            .map_err(|e| StoreError::SchemaMismatch(format!("bad header: {e}")))?;
        if header.schema != SCHEMA_NAME || header.version != SCHEMA_VERSION {
            return Err(StoreError::SchemaMismatch(format!(
                "{} v{} (expected {SCHEMA_NAME} v{SCHEMA_VERSION})",
                header.schema, header.version
            )));
        }
        let mut store = Store::new(StoreConfig {
            nodes: header.nodes,
            epoch_expiry_us: header.epoch_expiry_us,
            tau_alpha: header.tau_alpha,
            tau_clamp_us: header.tau_clamp_us,
            drift_guard_us: header.drift_guard_us,
        });
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |msg: String| StoreError::Parse { line: i + 2, msg };
            let rec: RecordLine = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            let mut phy = vec![NodeObservation::default(); header.nodes];
            for n in rec.phy {
                let slot = phy.get_mut(n.node).ok_or_else(|| parse(format!("node {} out of range", n.node)))?;
                *slot = NodeObservation { rss: n.rss, cfo: n.cfo, aoa: n.aoa };
            }
            let record = PacketRecord {
                timestamp: rec.ts_us,
                phy,
                adv_address: rec.addr,
                facts: rec.facts,
                channel: rec.channel,
            };
            if store.devices.contains_key(&rec.device_id) {
                store.insert(rec.device_id, record)?;
            } else {
                store.create_with_id(rec.device_id, record)?;
            }
        }
        Ok(store)
    }

    pub fn persist(&self, path: &Path) -> Result<(), StoreError> {
        self.write_to(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::read_from(std::fs::File::open(path)?)
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory cannot fail");
        out
    }
}
