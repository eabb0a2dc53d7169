//! Versioned content → fact table.
//!
//! Text format, one record per line:
//!
//! ```text
//! #bletrack-registry v1
//! vendor,acm_type(hex),content(hex),model,status,activity,color
//! ```
//!
//! Empty fields are null. Lines starting with `#` after the version line are
//! comments.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AcmMessage, AcmType, AdvFrame, Vendor};

pub const REGISTRY_MAGIC: &str = "#bletrack-registry";
pub const REGISTRY_VERSION: u32 = 1;

static BUILTIN_TEXT: &str = include_str!("../../data/registry.csv");

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported registry version header {0:?}")]
    Version(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Semantic facts recovered from an advertisement payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceFact {
    pub vendor: Vendor,
    pub model: Option<String>,
    pub status: Option<String>,
    pub activity: Option<String>,
    pub color: Option<String>,
}

impl DeviceFact {
    pub fn vendor_only(vendor: Vendor) -> Self {
        DeviceFact { vendor, model: None, status: None, activity: None, color: None }
    }

    /// Fills null fields from `other`.
    pub fn merge(&mut self, other: &DeviceFact) {
        fn fill(dst: &mut Option<String>, src: &Option<String>) {
            if dst.is_none() {
                dst.clone_from(src);
            }
        }
        fill(&mut self.model, &other.model);
        fill(&mut self.status, &other.status);
        fill(&mut self.activity, &other.activity);
        fill(&mut self.color, &other.color);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub vendor: Vendor,
    pub acm_type: Option<u8>,
    pub content: Vec<u8>,
    pub model: Option<String>,
    pub status: Option<String>,
    pub activity: Option<String>,
    pub color: Option<String>,
}

impl RegistryEntry {
    pub fn fact(&self) -> DeviceFact {
        DeviceFact {
            vendor: self.vendor,
            model: self.model.clone(),
            status: self.status.clone(),
            activity: self.activity.clone(),
            color: self.color.clone(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: Vec<RegistryEntry>,
    acm_index: HashMap<(u8, Vec<u8>), usize>,
    manufacturer_index: HashMap<Vec<u8>, usize>,
}

fn opt(s: &str) -> Option<String> {
    let s = s.trim();
    (!s.is_empty()).then(|| s.to_string())
}

fn parse_hex(s: &str) -> Result<Vec<u8>, String> {
    let s = s.trim();
    if s.len() % 2 != 0 {
        return Err(format!("odd-length hex {s:?}"));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|e| format!("{s:?}: {e}")))
        .collect()
}

fn to_hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

impl Registry {
    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l.trim()).unwrap_or_default();
        let version = header
            .strip_prefix(REGISTRY_MAGIC)
            .and_then(|v| v.trim().strip_prefix('v'))
            .and_then(|v| v.parse::<u32>().ok());
        if version != Some(REGISTRY_VERSION) {
            return Err(RegistryError::Version(header.to_string()));
        }
        let mut reg = Registry::default();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| RegistryError::Parse { line: i + 1, msg };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(err(format!("expected 7 fields, found {}", f.len())));
            }
            let vendor: Vendor = f[0].parse().map_err(err)?;
            let acm_type = match f[1].trim() {
                "" => None,
                t => Some(u8::from_str_radix(t, 16).map_err(|e| err(e.to_string()))?),
            };
            let content = parse_hex(f[2]).map_err(err)?;
            reg.push(RegistryEntry {
                vendor,
                acm_type,
                content,
                model: opt(f[3]),
                status: opt(f[4]),
                activity: opt(f[5]),
                color: opt(f[6]),
            })
            .map_err(err)?;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn push(&mut self, entry: RegistryEntry) -> Result<(), String> {
        let idx = self.entries.len();
        match entry.acm_type {
            Some(t) => {
                if entry.vendor != Vendor::Apple {
                    return Err("continuity rows must use vendor Apple".into());
                }
                if AcmType::from_code(t).is_none() {
                    return Err(format!("continuity type {t:#04x} is not a known type"));
                }
                if self.acm_index.insert((t, entry.content.clone()), idx).is_some() {
                    return Err(format!("duplicate row for ({t:#04x}, {})", to_hex(&entry.content)));
                }
            }
            None => {
                if self.manufacturer_index.insert(entry.content.clone(), idx).is_some() {
                    return Err(format!("duplicate manufacturer row {}", to_hex(&entry.content)));
                }
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{REGISTRY_MAGIC} v{REGISTRY_VERSION}\n");
        for e in &self.entries {
            let o = |v: &Option<String>| v.clone().unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.vendor,
                e.acm_type.map(|t| format!("{t:02x}")).unwrap_or_default(),
                to_hex(&e.content),
                o(&e.model),
                o(&e.status),
                o(&e.activity),
                o(&e.color)
            ));
        }
        s
    }

    pub fn lookup_acm(&self, acm_type: u8, content: &[u8]) -> Option<&RegistryEntry> {
        self.acm_index.get(&(acm_type, content.to_vec())).map(|&i| &self.entries[i])
    }

    pub fn lookup_manufacturer(&self, bytes: &[u8]) -> Option<&RegistryEntry> {
        self.manufacturer_index.get(bytes).map(|&i| &self.entries[i])
    }

    /// Rows of one vendor whose model field is set.
    pub fn models(&self, vendor: Vendor) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.iter().filter(move |e| e.vendor == vendor && e.model.is_some())
    }

    /// Unknown types and unknown contents yield a fact with only the vendor set.
    pub fn decode_acm(&self, acm: &AcmMessage) -> DeviceFact {
        if acm.kind().is_none() {
            return DeviceFact::vendor_only(Vendor::Apple);
        }
        self.lookup_acm(acm.acm_type, &acm.content)
            .map(RegistryEntry::fact)
            .unwrap_or_else(|| DeviceFact::vendor_only(Vendor::Apple))
    }

    /// Merged facts of every message in the frame.
    pub fn frame_facts(&self, frame: &AdvFrame) -> DeviceFact {
        let vendor = frame.vendor();
        let mut fact = DeviceFact::vendor_only(vendor);
        if vendor == Vendor::Apple {
            for m in frame.acms() {
                fact.merge(&self.decode_acm(m));
            }
        } else if let Some(e) = frame.manufacturer_bytes().and_then(|b| self.lookup_manufacturer(&b)) {
            if e.vendor == vendor {
                fact.merge(&e.fact());
            }
        }
        fact
    }
}

/// The registry shipped with the crate.
pub fn builtin() -> &'static Registry {
    static REG: OnceLock<Registry> = OnceLock::new();
    REG.get_or_init(|| Registry::parse(BUILTIN_TEXT).expect("bundled registry is valid"))
}

/// Decodes a continuity message through the built-in registry.
pub fn decode_acm(acm: &AcmMessage) -> DeviceFact {
    builtin().decode_acm(acm)
}
