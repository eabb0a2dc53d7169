//! Apple Continuity messages: `type (1 byte), length (1 byte), content`.

use super::registry::{self, DeviceFact};
use super::FrameError;

/// The continuity message types observed in the wild.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AcmType {
    AirDrop,
    ProximityPairing,
    HeySiri,
    AirPlayTarget,
    AirPlaySource,
    MagicSwitch,
    Handoff,
    NearbyAction,
    NearbyInfo,
    FindMy,
}

impl AcmType {
    pub const ALL: [AcmType; 10] = [
        AcmType::AirDrop,
        AcmType::ProximityPairing,
        AcmType::HeySiri,
        AcmType::AirPlayTarget,
        AcmType::AirPlaySource,
        AcmType::MagicSwitch,
        AcmType::Handoff,
        AcmType::NearbyAction,
        AcmType::NearbyInfo,
        AcmType::FindMy,
    ];

    pub fn code(self) -> u8 {
        match self {
            AcmType::AirDrop => 0x05,
            AcmType::ProximityPairing => 0x07,
            AcmType::HeySiri => 0x08,
            AcmType::AirPlayTarget => 0x09,
            AcmType::AirPlaySource => 0x0A,
            AcmType::MagicSwitch => 0x0B,
            AcmType::Handoff => 0x0C,
            AcmType::NearbyAction => 0x0F,
            AcmType::NearbyInfo => 0x10,
            AcmType::FindMy => 0x12,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        AcmType::ALL.into_iter().find(|t| t.code() == code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AcmMessage {
    /// Raw type byte; codes outside [`AcmType::ALL`] are carried opaquely.
    pub acm_type: u8,
    pub content: Vec<u8>,
}

impl AcmMessage {
    pub fn new(acm_type: u8, content: Vec<u8>) -> Self {
        AcmMessage { acm_type, content }
    }

    pub fn kind(&self) -> Option<AcmType> {
        AcmType::from_code(self.acm_type)
    }

    /// Fact decoded through the built-in registry, `None` when the
    /// (type, content) pair is not known.
    pub fn decoded(&self) -> Option<DeviceFact> {
        registry::builtin().lookup_acm(self.acm_type, &self.content).map(|e| e.fact())
    }

    pub(crate) fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), FrameError> {
        if self.content.len() > u8::MAX as usize {
            return Err(FrameError::FieldOverflow(format!(
                "continuity message content of {} bytes",
                self.content.len()
            )));
        }
        out.push(self.acm_type);
        out.push(self.content.len() as u8);
        out.extend_from_slice(&self.content);
        Ok(())
    }
}

/// Splits manufacturer data into complete messages and the unparsed tail.
pub(crate) fn parse_acms(mut data: &[u8]) -> (Vec<AcmMessage>, &[u8]) {
    let mut out = Vec::new();
    while data.len() >= 2 {
        let len = data[1] as usize;
        if data.len() < 2 + len {
            break;
        }
        out.push(AcmMessage::new(data[0], data[2..2 + len].to_vec()));
        data = &data[2 + len..];
    }
    (out, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_known_types() {
        let codes: Vec<u8> = AcmType::ALL.iter().map(|t| t.code()).collect();
        assert_eq!(codes, vec![0x05, 0x07, 0x08, 0x09, 0x0A, 0x0B, 0x0C, 0x0F, 0x10, 0x12]);
        assert_eq!(AcmType::from_code(0x06), None);
    }

    #[test]
    fn parse_stops_at_truncated_message() {
        let (msgs, tail) = parse_acms(&[0x10, 0x02, 0xAA, 0xBB, 0x0C, 0x05, 0x01]);
        assert_eq!(msgs, vec![AcmMessage::new(0x10, vec![0xAA, 0xBB])]);
        assert_eq!(tail, &[0x0C, 0x05, 0x01]);
    }
}
