//! Link-layer framing of advertising PDUs: preamble, access address,
//! whitening and CRC-24. Bits are in transmission order.

use thiserror::Error;

use super::AdvChannel;

pub const ADV_ACCESS_ADDRESS: u32 = 0x8E89_BED6;
pub const ADV_CRC_INIT: u32 = 0x55_5555;
const CRC_POLY: u32 = 0x00_065B;
const PREAMBLE: u8 = 0xAA;

/// Preamble plus access address.
pub const SYNC_BITS: usize = 40;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinkError {
    #[error("bit stream too short: {have} bits, need {need}")]
    TooShort { have: usize, need: usize },
    #[error("CRC mismatch (computed {computed:06x}, received {received:06x})")]
    CrcMismatch { computed: u32, received: u32 },
}

pub fn bytes_to_bits(bytes: &[u8]) -> impl Iterator<Item = u8> + '_ {
    bytes.iter().flat_map(|&b| (0..8).map(move |i| (b >> i) & 1))
}

pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b & 1) << i)))
        .collect()
}

pub fn crc24(data: &[u8], init: u32) -> u32 {
    let mut state = init & 0xFF_FFFF;
    for bit in bytes_to_bits(data) {
        let fb = ((state >> 23) & 1) ^ bit as u32;
        state = (state << 1) & 0xFF_FFFF;
        if fb == 1 {
            state ^= CRC_POLY;
        }
    }
    state
}

fn crc_bits(crc: u32) -> impl Iterator<Item = u8> {
    (0..24).map(move |i| ((crc >> (23 - i)) & 1) as u8)
}

/// XORs the channel whitening sequence into `bits` in place.
pub fn whiten(bits: &mut [u8], channel: AdvChannel) {
    let mut coeff = channel.number().reverse_bits() | 2;
    for b in bits.iter_mut() {
        if coeff & 0x80 != 0 {
            coeff ^= 0x11;
            *b ^= 1;
        }
        coeff <<= 1;
    }
}

/// Air bits for one PDU: preamble, access address, whitened PDU and CRC.
pub fn to_air_bits(pdu: &[u8], channel: AdvChannel) -> Vec<u8> {
    let mut bits: Vec<u8> = bytes_to_bits(&[PREAMBLE]).collect();
    bits.extend(bytes_to_bits(&ADV_ACCESS_ADDRESS.to_le_bytes()));
    let mut body: Vec<u8> = bytes_to_bits(pdu).collect();
    body.extend(crc_bits(crc24(pdu, ADV_CRC_INIT)));
    whiten(&mut body, channel);
    bits.extend(body);
    bits
}

/// Known preamble + access-address bits.
pub fn sync_bits() -> Vec<u8> {
    let mut bits: Vec<u8> = bytes_to_bits(&[PREAMBLE]).collect();
    bits.extend(bytes_to_bits(&ADV_ACCESS_ADDRESS.to_le_bytes()));
    bits
}

/// Recovers the PDU from air bits that start at the preamble. Extra bits
/// past the CRC are ignored.
pub fn from_air_bits(bits: &[u8], channel: AdvChannel) -> Result<Vec<u8>, LinkError> {
    let need_hdr = SYNC_BITS + 16;
    if bits.len() < need_hdr {
        return Err(LinkError::TooShort { have: bits.len(), need: need_hdr });
    }
    let mut hdr = bits[SYNC_BITS..need_hdr].to_vec();
    whiten(&mut hdr, channel);
    let len = bits_to_bytes(&hdr)[1] as usize;
    let total = SYNC_BITS + (2 + len) * 8 + 24;
    if bits.len() < total {
        return Err(LinkError::TooShort { have: bits.len(), need: total });
    }
    let mut body = bits[SYNC_BITS..total].to_vec();
    whiten(&mut body, channel);
    let pdu_bits = &body[..(2 + len) * 8];
    let pdu = bits_to_bytes(pdu_bits);
    let received = body[(2 + len) * 8..].iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
    let computed = crc24(&pdu, ADV_CRC_INIT);
    if computed != received {
        return Err(LinkError::CrcMismatch { computed, received });
    }
    Ok(pdu)
}

/// Number of air bits for a PDU of `pdu_len` bytes.
pub fn air_bit_len(pdu_len: usize) -> usize {
    SYNC_BITS + pdu_len * 8 + 24
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_order_is_lsb_first() {
        let bits: Vec<u8> = bytes_to_bits(&[0xAA]).collect();
        assert_eq!(bits, vec![0, 1, 0, 1, 0, 1, 0, 1]);
        assert_eq!(bits_to_bytes(&bits), vec![0xAA]);
    }

    #[test]
    fn whitening_is_an_involution() {
        let ch = AdvChannel::new(38).unwrap();
        let orig: Vec<u8> = (0..200).map(|i| (i * 7 % 3 == 0) as u8).collect();
        let mut b = orig.clone();
        whiten(&mut b, ch);
        assert_ne!(b, orig);
        whiten(&mut b, ch);
        assert_eq!(b, orig);
    }

    #[test]
    fn air_round_trip_and_crc_detects_flips() {
        let ch = AdvChannel::new(37).unwrap();
        let pdu = vec![0x42, 0x09, 1, 2, 3, 4, 5, 6, 2, 1, 6];
        let mut bits = to_air_bits(&pdu, ch);
        assert_eq!(bits.len(), air_bit_len(pdu.len()));
        assert_eq!(&bits[..SYNC_BITS], sync_bits().as_slice());
        assert_eq!(from_air_bits(&bits, ch).unwrap(), pdu);
        bits[SYNC_BITS + 30] ^= 1;
        assert!(matches!(from_air_bits(&bits, ch), Err(LinkError::CrcMismatch { .. })));
        // Wrong channel de-whitens to garbage.
        let bits = to_air_bits(&pdu, ch);
        assert!(from_air_bits(&bits, AdvChannel::new(39).unwrap()).is_err());
    }
}
