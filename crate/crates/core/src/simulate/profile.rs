//! Vendor broadcast profiles: which advertisement kinds a device sends,
//! at what rate in each state, and what the payloads look like.

use serde::{Deserialize, Serialize};

use crate::frames::registry::builtin;
use crate::frames::{AcmMessage, AcmType, AdElement, Vendor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceState {
    Active,
    Idle,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Iphone,
    Airpods,
    Samsung,
    Pixel,
    SonyHeadset,
    MicrosoftLaptop,
}

/// One advertisement kind with its own address and rates (packets/min).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvKind {
    pub name: &'static str,
    pub active: f64,
    pub idle: f64,
    pub off: f64,
}

impl AdvKind {
    pub fn rate(&self, state: DeviceState) -> f64 {
        match state {
            DeviceState::Active => self.active,
            DeviceState::Idle => self.idle,
            DeviceState::Off => self.off,
        }
    }
}

const fn kind(name: &'static str, active: f64, idle: f64, off: f64) -> AdvKind {
    AdvKind { name, active, idle, off }
}

const IPHONE: &[AdvKind] =
    &[kind("nearby_info", 200.0, 200.0, 0.0), kind("nearby_action", 100.0, 60.0, 0.0), kind("find_my", 0.0, 0.0, 50.0)];
const AIRPODS: &[AdvKind] = &[kind("proximity_pairing", 300.0, 270.0, 20.0)];
const ANDROID: &[AdvKind] = &[kind("manufacturer", 130.0, 60.0, 0.0), kind("service", 120.0, 60.0, 0.0)];
const SONY: &[AdvKind] = &[kind("manufacturer", 207.0, 207.0, 0.0)];
const MICROSOFT: &[AdvKind] = &[kind("manufacturer", 846.0, 846.0, 0.0)];

const NEARBY_INFO: [u8; 5] = [0x07, 0x1f, 0x2a, 0x8c, 0x31];
const FIND_MY: [u8; 25] = [
    0x00, 0x5a, 0x13, 0x77, 0x02, 0xc1, 0x4e, 0x90, 0x3b, 0x61, 0x0d, 0xe2, 0x58, 0xaf, 0x14, 0x86, 0x3c, 0x7b,
    0x29, 0xd0, 0x45, 0x9e, 0x01, 0x00, 0x00,
];
const FAST_PAIR: [u8; 3] = [0x2c, 0x11, 0x07];

impl Profile {
    pub const ALL: [Profile; 6] =
        [Profile::Iphone, Profile::Airpods, Profile::Samsung, Profile::Pixel, Profile::SonyHeadset, Profile::MicrosoftLaptop];

    pub fn vendor(self) -> Vendor {
        match self {
            Profile::Iphone | Profile::Airpods => Vendor::Apple,
            Profile::Samsung | Profile::Pixel => Vendor::Android,
            Profile::SonyHeadset => Vendor::Sony,
            Profile::MicrosoftLaptop => Vendor::Microsoft,
        }
    }

    pub fn kinds(self) -> &'static [AdvKind] {
        match self {
            Profile::Iphone => IPHONE,
            Profile::Airpods => AIRPODS,
            Profile::Samsung | Profile::Pixel => ANDROID,
            Profile::SonyHeadset => SONY,
            Profile::MicrosoftLaptop => MICROSOFT,
        }
    }

    pub fn total_rate(self, state: DeviceState) -> f64 {
        self.kinds().iter().map(|k| k.rate(state)).sum()
    }

    /// Upper bound of the per-packet timing jitter, µs.
    pub fn epsilon_bound(self) -> u32 {
        if self.vendor() == Vendor::Apple { 6 } else { 9 }
    }

    pub fn model(self) -> &'static str {
        match self {
            Profile::Iphone => "iPhone",
            Profile::Airpods => "Airpods Pro",
            Profile::Samsung => "Samsung Galaxy S23",
            Profile::Pixel => "Pixel 7",
            Profile::SonyHeadset => "Sony WH-1000XM5",
            Profile::MicrosoftLaptop => "Surface Laptop",
        }
    }

    /// AD structures for one packet of kind `kind`, carrying the current
    /// status and activity where the payload can express them.
    pub fn ad(self, kind: usize, status: Option<&str>, activity: Option<&str>) -> Vec<AdElement> {
        let reg = builtin();
        let apple_fact = |pick: &dyn Fn(&crate::frames::registry::RegistryEntry) -> bool| {
            reg.entries()
                .iter()
                .find(|e| e.vendor == Vendor::Apple && e.acm_type.is_some() && pick(e))
                .map(|e| AcmMessage::new(e.acm_type.unwrap_or_default(), e.content.clone()))
        };
        let by_status = |s: &str| apple_fact(&|e| e.status.as_deref() == Some(s));
        let by_activity = |a: &str| apple_fact(&|e| e.activity.as_deref() == Some(a));
        let by_model = |m: &str| apple_fact(&|e| e.model.as_deref() == Some(m));
        let manufacturer = |m: &str| {
            reg.models(self.vendor()).find(|e| e.acm_type.is_none() && e.model.as_deref() == Some(m)).map(|e| {
                let cid = u16::from_le_bytes([e.content[0], e.content[1]]);
                AdElement::manufacturer(cid, e.content[2..].to_vec())
            })
        };
        match (self, kind) {
            (Profile::Iphone, 0) => vec![AdElement::apple(vec![AcmMessage::new(AcmType::NearbyInfo.code(), NEARBY_INFO.to_vec())])],
            (Profile::Iphone, 1) => {
                let mut acms: Vec<AcmMessage> = by_model(self.model()).into_iter().collect();
                acms.extend(activity.and_then(by_activity));
                vec![AdElement::apple(acms)]
            }
            (Profile::Iphone, _) => vec![AdElement::apple(vec![AcmMessage::new(AcmType::FindMy.code(), FIND_MY.to_vec())])],
            (Profile::Airpods, _) => {
                let mut acms: Vec<AcmMessage> = by_model(self.model()).into_iter().collect();
                acms.extend(status.and_then(by_status));
                vec![AdElement::apple(acms)]
            }
            (Profile::Samsung | Profile::Pixel, 1) => {
                vec![AdElement::ServiceData16 { uuid: 0xFE2C, data: FAST_PAIR.to_vec() }]
            }
            _ => manufacturer(self.model()).into_iter().collect(),
        }
    }
}
