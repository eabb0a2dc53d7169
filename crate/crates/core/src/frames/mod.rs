//! BLE advertisement PDU codec.
//!
//! An advertising PDU is a two-byte header followed by the 6-byte advertiser
//! address and a sequence of AD structures (`len, type, body`). Manufacturer
//! data carrying the Apple company identifier is further split into
//! Continuity messages (see [`acm`]). Decoding is lossless: any byte string
//! that decodes re-encodes to the identical bytes.

pub mod acm;
pub mod link;
pub mod registry;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use acm::{AcmMessage, AcmType};
pub use registry::{decode_acm, DeviceFact, Registry, RegistryError};

pub const APPLE_COMPANY_ID: u16 = 0x004C;
pub const MICROSOFT_COMPANY_ID: u16 = 0x0006;
pub const SONY_COMPANY_ID: u16 = 0x012D;

/// Company identifiers used by Android handset vendors in manufacturer data.
pub const ANDROID_COMPANY_IDS: &[u16] = &[
    0x0075, // Samsung
    0x00E0, // Google
    0x038F, // Xiaomi
    0x027D, // Huawei
];

/// 16-bit service UUIDs assigned to Google (Fast Pair, Nearby, exposure).
pub const GOOGLE_SERVICE_UUIDS: &[u16] = &[0xFE2C, 0xFE9F, 0xFEF3, 0xFD6F];

pub const AD_TYPE_INCOMPLETE_UUID16: u8 = 0x02;
pub const AD_TYPE_COMPLETE_UUID16: u8 = 0x03;
pub const AD_TYPE_SERVICE_DATA16: u8 = 0x16;
pub const AD_TYPE_MANUFACTURER: u8 = 0xFF;

/// Largest payload (address + AD data) the length byte can describe.
pub const MAX_PAYLOAD_LEN: usize = 255;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("malformed advertising frame: {0}")]
    MalformedFrame(String),
    #[error("field overflow: {0}")]
    FieldOverflow(String),
    #[error("invalid advertising channel {0} (expected 37, 38 or 39)")]
    InvalidChannel(u8),
    #[error("invalid advertising address {0:?}")]
    InvalidAddress(String),
}

/// 48-bit advertising address, stored in on-air (little-endian) byte order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AdvAddress(pub [u8; 6]);

impl AdvAddress {
    pub fn from_u64(v: u64) -> Self {
        let b = v.to_le_bytes();
        AdvAddress([b[0], b[1], b[2], b[3], b[4], b[5]])
    }

    pub fn to_u64(self) -> u64 {
        let mut b = [0u8; 8];
        b[..6].copy_from_slice(&self.0);
        u64::from_le_bytes(b)
    }
}

impl fmt::Display for AdvAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[5], b[4], b[3], b[2], b[1], b[0]
        )
    }
}

impl fmt::Debug for AdvAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AdvAddress({self})")
    }
}

impl FromStr for AdvAddress {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(FrameError::InvalidAddress(s.to_string()));
        }
        let mut out = [0u8; 6];
        for (i, p) in parts.iter().enumerate() {
            out[5 - i] =
                u8::from_str_radix(p, 16).map_err(|_| FrameError::InvalidAddress(s.to_string()))?;
        }
        Ok(AdvAddress(out))
    }
}

impl Serialize for AdvAddress {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AdvAddress {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One of the three primary advertising channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct AdvChannel(u8);

impl AdvChannel {
    pub const ALL: [AdvChannel; 3] = [AdvChannel(37), AdvChannel(38), AdvChannel(39)];

    pub fn new(ch: u8) -> Result<Self, FrameError> {
        match ch {
            37..=39 => Ok(AdvChannel(ch)),
            other => Err(FrameError::InvalidChannel(other)),
        }
    }

    pub fn number(self) -> u8 {
        self.0
    }

    /// Index of the channel in the 2 MHz RF plan (0 = 2402 MHz … 39 = 2480 MHz).
    pub fn rf_index(self) -> usize {
        match self.0 {
            37 => 0,
            38 => 12,
            _ => 39,
        }
    }

    pub fn center_freq_hz(self) -> f64 {
        rf_center_freq_hz(self.rf_index())
    }
}

impl TryFrom<u8> for AdvChannel {
    type Error = FrameError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        AdvChannel::new(v)
    }
}

impl From<AdvChannel> for u8 {
    fn from(c: AdvChannel) -> u8 {
        c.0
    }
}

impl fmt::Display for AdvChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Center frequency of RF channel `rf` (0..40) in Hz.
pub fn rf_center_freq_hz(rf: usize) -> f64 {
    2402e6 + 2e6 * rf as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PduType {
    AdvInd,
    AdvNonconnInd,
    ScanRsp,
    AdvScanInd,
}

impl PduType {
    fn code(self) -> u8 {
        match self {
            PduType::AdvInd => 0x0,
            PduType::AdvNonconnInd => 0x2,
            PduType::ScanRsp => 0x4,
            PduType::AdvScanInd => 0x6,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0x0 => Some(PduType::AdvInd),
            0x2 => Some(PduType::AdvNonconnInd),
            0x4 => Some(PduType::ScanRsp),
            0x6 => Some(PduType::AdvScanInd),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Vendor {
    Apple,
    Android,
    Sony,
    Microsoft,
    Other,
}

impl Vendor {
    pub fn as_str(self) -> &'static str {
        match self {
            Vendor::Apple => "Apple",
            Vendor::Android => "Android",
            Vendor::Sony => "Sony",
            Vendor::Microsoft => "Microsoft",
            Vendor::Other => "Other",
        }
    }
}

impl fmt::Display for Vendor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Vendor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "Apple" => Ok(Vendor::Apple),
            "Android" => Ok(Vendor::Android),
            "Sony" => Ok(Vendor::Sony),
            "Microsoft" => Ok(Vendor::Microsoft),
            "Other" => Ok(Vendor::Other),
            other => Err(format!("unknown vendor {other:?}")),
        }
    }
}

/// Body of a manufacturer-specific AD structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ManufacturerData {
    /// Apple payload: Continuity messages followed by bytes that did not
    /// form a complete message.
    Apple { acms: Vec<AcmMessage>, rest: Vec<u8> },
    Opaque(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdElement {
    Manufacturer { company_id: u16, data: ManufacturerData },
    ServiceData16 { uuid: u16, data: Vec<u8> },
    ServiceUuids16 { complete: bool, uuids: Vec<u16> },
    Other { ad_type: u8, data: Vec<u8> },
}

impl AdElement {
    pub fn apple(acms: Vec<AcmMessage>) -> Self {
        AdElement::Manufacturer {
            company_id: APPLE_COMPANY_ID,
            data: ManufacturerData::Apple { acms, rest: Vec::new() },
        }
    }

    pub fn manufacturer(company_id: u16, data: Vec<u8>) -> Self {
        AdElement::Manufacturer { company_id, data: ManufacturerData::Opaque(data) }
    }

    fn ad_type(&self) -> u8 {
        match self {
            AdElement::Manufacturer { .. } => AD_TYPE_MANUFACTURER,
            AdElement::ServiceData16 { .. } => AD_TYPE_SERVICE_DATA16,
            AdElement::ServiceUuids16 { complete: true, .. } => AD_TYPE_COMPLETE_UUID16,
            AdElement::ServiceUuids16 { complete: false, .. } => AD_TYPE_INCOMPLETE_UUID16,
            AdElement::Other { ad_type, .. } => *ad_type,
        }
    }

    fn encode_body(&self, out: &mut Vec<u8>) -> Result<(), FrameError> {
        match self {
            AdElement::Manufacturer { company_id, data } => {
                out.extend_from_slice(&company_id.to_le_bytes());
                match data {
                    ManufacturerData::Apple { acms, rest } => {
                        for m in acms {
                            m.encode_into(out)?;
                        }
                        out.extend_from_slice(rest);
                    }
                    ManufacturerData::Opaque(bytes) => out.extend_from_slice(bytes),
                }
            }
            AdElement::ServiceData16 { uuid, data } => {
                out.extend_from_slice(&uuid.to_le_bytes());
                out.extend_from_slice(data);
            }
            AdElement::ServiceUuids16 { uuids, .. } => {
                for u in uuids {
                    out.extend_from_slice(&u.to_le_bytes());
                }
            }
            AdElement::Other { data, .. } => out.extend_from_slice(data),
        }
        Ok(())
    }

    fn decode(ad_type: u8, body: &[u8]) -> Result<Self, FrameError> {
        Ok(match ad_type {
            AD_TYPE_MANUFACTURER if body.len() >= 2 => {
                let company_id = u16::from_le_bytes([body[0], body[1]]);
                let rest = &body[2..];
                if company_id == APPLE_COMPANY_ID {
                    let (acms, tail) = acm::parse_acms(rest);
                    if acms.is_empty() {
                        return Err(FrameError::MalformedFrame(
                            "Apple manufacturer data carries no continuity message".into(),
                        ));
                    }
                    AdElement::Manufacturer {
                        company_id,
                        data: ManufacturerData::Apple { acms, rest: tail.to_vec() },
                    }
                } else {
                    AdElement::Manufacturer {
                        company_id,
                        data: ManufacturerData::Opaque(rest.to_vec()),
                    }
                }
            }
            AD_TYPE_SERVICE_DATA16 if body.len() >= 2 => AdElement::ServiceData16 {
                uuid: u16::from_le_bytes([body[0], body[1]]),
                data: body[2..].to_vec(),
            },
            AD_TYPE_COMPLETE_UUID16 | AD_TYPE_INCOMPLETE_UUID16 if body.len() % 2 == 0 => {
                AdElement::ServiceUuids16 {
                    complete: ad_type == AD_TYPE_COMPLETE_UUID16,
                    uuids: body.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect(),
                }
            }
            _ => AdElement::Other { ad_type, data: body.to_vec() },
        })
    }
}

/// Android-identifying parts of a frame.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AndroidPayload {
    /// Manufacturer AD body including the little-endian company identifier.
    pub manufacturer: Option<Vec<u8>>,
    /// Service UUID bytes (little-endian) followed by any service data.
    pub service: Option<Vec<u8>>,
}

/// A decoded advertising PDU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdvFrame {
    pub pdu_type: PduType,
    /// Upper nibble of the first header byte (RFU, ChSel, TxAdd, RxAdd).
    pub header_flags: u8,
    pub adv_address: AdvAddress,
    pub channel: AdvChannel,
    pub ad: Vec<AdElement>,
    /// Bytes after the last well-formed AD structure.
    pub trailing: Vec<u8>,
}

impl AdvFrame {
    /// Non-connectable advertisement with a random (TxAdd = 1) address.
    pub fn new(adv_address: AdvAddress, channel: AdvChannel, ad: Vec<AdElement>) -> Self {
        AdvFrame {
            pdu_type: PduType::AdvNonconnInd,
            header_flags: 0x4,
            adv_address,
            channel,
            ad,
            trailing: Vec::new(),
        }
    }

    pub fn company_id(&self) -> Option<u16> {
        self.ad.iter().find_map(|e| match e {
            AdElement::Manufacturer { company_id, .. } => Some(*company_id),
            _ => None,
        })
    }

    pub fn acms(&self) -> impl Iterator<Item = &AcmMessage> {
        self.ad.iter().flat_map(|e| match e {
            AdElement::Manufacturer { data: ManufacturerData::Apple { acms, .. }, .. } => {
                acms.as_slice()
            }
            _ => &[],
        })
    }

    pub fn android_payload(&self) -> Option<AndroidPayload> {
        let mut out = AndroidPayload::default();
        for e in &self.ad {
            match e {
                AdElement::Manufacturer { company_id, data: ManufacturerData::Opaque(d) }
                    if ANDROID_COMPANY_IDS.contains(company_id) && out.manufacturer.is_none() =>
                {
                    let mut m = company_id.to_le_bytes().to_vec();
                    m.extend_from_slice(d);
                    out.manufacturer = Some(m);
                }
                AdElement::ServiceData16 { uuid, data }
                    if GOOGLE_SERVICE_UUIDS.contains(uuid) && out.service.is_none() =>
                {
                    let mut s = uuid.to_le_bytes().to_vec();
                    s.extend_from_slice(data);
                    out.service = Some(s);
                }
                AdElement::ServiceUuids16 { uuids, .. } if out.service.is_none() => {
                    if let Some(u) = uuids.iter().find(|u| GOOGLE_SERVICE_UUIDS.contains(u)) {
                        out.service = Some(u.to_le_bytes().to_vec());
                    }
                }
                _ => {}
            }
        }
        (out.manufacturer.is_some() || out.service.is_some()).then_some(out)
    }

    /// Manufacturer AD body (company id included) of the first non-Apple
    /// manufacturer element.
    pub fn manufacturer_bytes(&self) -> Option<Vec<u8>> {
        self.ad.iter().find_map(|e| match e {
            AdElement::Manufacturer { company_id, data: ManufacturerData::Opaque(d) } => {
                let mut m = company_id.to_le_bytes().to_vec();
                m.extend_from_slice(d);
                Some(m)
            }
            _ => None,
        })
    }

    pub fn vendor(&self) -> Vendor {
        classify_vendor(self)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FrameError> {
        encode_adv(self)
    }
}

pub fn classify_vendor(frame: &AdvFrame) -> Vendor {
    match frame.company_id() {
        Some(APPLE_COMPANY_ID) => Vendor::Apple,
        _ if frame.android_payload().is_some() => Vendor::Android,
        Some(SONY_COMPANY_ID) => Vendor::Sony,
        Some(MICROSOFT_COMPANY_ID) => Vendor::Microsoft,
        _ => Vendor::Other,
    }
}

pub fn decode_adv(bytes: &[u8], channel: AdvChannel) -> Result<AdvFrame, FrameError> {
    if bytes.len() < 2 + 6 {
        return Err(FrameError::MalformedFrame(format!(
            "{} bytes is shorter than header plus address",
            bytes.len()
        )));
    }
    let pdu_type = PduType::from_code(bytes[0] & 0x0F).ok_or_else(|| {
        FrameError::MalformedFrame(format!("unsupported PDU type {:#x}", bytes[0] & 0x0F))
    })?;
    let len = bytes[1] as usize;
    if len != bytes.len() - 2 {
        return Err(FrameError::MalformedFrame(format!(
            "length field {len} disagrees with {} payload bytes",
            bytes.len() - 2
        )));
    }
    if len < 6 {
        return Err(FrameError::MalformedFrame(format!("payload length {len} below 6")));
    }
    let mut addr = [0u8; 6];
    addr.copy_from_slice(&bytes[2..8]);

    let data = &bytes[8..];
    let mut ad = Vec::new();
    let mut pos = 0;
    while pos < data.len() {
        let l = data[pos] as usize;
        if l == 0 || pos + 1 + l > data.len() {
            break;
        }
        let body = &data[pos + 2..pos + 1 + l];
        ad.push(AdElement::decode(data[pos + 1], body)?);
        pos += 1 + l;
    }
    Ok(AdvFrame {
        pdu_type,
        header_flags: bytes[0] >> 4,
        adv_address: AdvAddress(addr),
        channel,
        ad,
        trailing: data[pos..].to_vec(),
    })
}

pub fn encode_adv(frame: &AdvFrame) -> Result<Vec<u8>, FrameError> {
    if frame.header_flags > 0x0F {
        return Err(FrameError::FieldOverflow(format!(
            "header flags {:#x} exceed 4 bits",
            frame.header_flags
        )));
    }
    let mut out = vec![frame.pdu_type.code() | (frame.header_flags << 4), 0];
    out.extend_from_slice(&frame.adv_address.0);
    let mut body = Vec::new();
    for e in &frame.ad {
        body.clear();
        e.encode_body(&mut body)?;
        if body.len() + 1 > u8::MAX as usize {
            return Err(FrameError::FieldOverflow(format!(
                "AD structure of {} bytes exceeds 254",
                body.len()
            )));
        }
        out.push(body.len() as u8 + 1);
        out.push(e.ad_type());
        out.extend_from_slice(&body);
    }
    out.extend_from_slice(&frame.trailing);
    let len = out.len() - 2;
    if len > MAX_PAYLOAD_LEN {
        return Err(FrameError::FieldOverflow(format!(
            "payload of {len} bytes exceeds {MAX_PAYLOAD_LEN}"
        )));
    }
    out[1] = len as u8;
    Ok(out)
}
