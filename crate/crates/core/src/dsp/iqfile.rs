//! Raw I/Q capture files.
//!
//! Layout (little-endian):
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 8    | magic `BLETRKIQ`           |
//! | 8      | 4    | version (u32, = 1)         |
//! | 12     | 4    | antenna count M (u32)      |
//! | 16     | 8    | samples per antenna (u64)  |
//! | 24     | 8    | sample rate, Hz (f64)      |
//! | 32     | 8    | centre frequency, Hz (f64) |
//! | 40     | 8    | start time, µs (f64)       |
//! | 48     | 16   | reserved, zero             |
//!
//! followed by M planes of interleaved `f32` (I, Q) pairs.

use std::io::{Read, Write};

use num_complex::Complex64;

use super::{DspError, IqFrame};

pub const IQ_MAGIC: &[u8; 8] = b"BLETRKIQ";
pub const IQ_VERSION: u32 = 1;
pub const IQ_HEADER_LEN: usize = 64;

pub fn write_iq<W: Write>(mut w: W, frame: &IqFrame) -> Result<(), DspError> {
    let mut hdr = [0u8; IQ_HEADER_LEN];
    hdr[0..8].copy_from_slice(IQ_MAGIC);
    hdr[8..12].copy_from_slice(&IQ_VERSION.to_le_bytes());
    hdr[12..16].copy_from_slice(&(frame.antenna_count() as u32).to_le_bytes());
    hdr[16..24].copy_from_slice(&(frame.len() as u64).to_le_bytes());
    hdr[24..32].copy_from_slice(&frame.sample_rate().to_le_bytes());
    hdr[32..40].copy_from_slice(&frame.center_freq().to_le_bytes());
    hdr[40..48].copy_from_slice(&frame.start_time().to_le_bytes());
    w.write_all(&hdr)?;
    let mut buf = Vec::with_capacity(frame.len() * 8);
    for ant in frame.antennas() {
        buf.clear();
        for s in ant {
            buf.extend_from_slice(&(s.re as f32).to_le_bytes());
            buf.extend_from_slice(&(s.im as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_iq<R: Read>(mut r: R) -> Result<IqFrame, DspError> {
    let mut hdr = [0u8; IQ_HEADER_LEN];
    r.read_exact(&mut hdr)?;
    if &hdr[0..8] != IQ_MAGIC {
        return Err(DspError::BadFile("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(hdr[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(hdr[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != IQ_VERSION {
        return Err(DspError::BadFile(format!("unsupported version {version}")));
    }
    let m = u32_at(12) as usize;
    let n = u64::from_le_bytes(hdr[16..24].try_into().unwrap());
    if m == 0 || n == 0 {
        return Err(DspError::BadFile("empty capture".into()));
    }
    let n = usize::try_from(n).map_err(|_| DspError::BadFile("sample count too large".into()))?;
    let mut samples = Vec::with_capacity(m);
    let mut buf = vec![0u8; n.checked_mul(8).ok_or_else(|| DspError::BadFile("sample count too large".into()))?];
    for _ in 0..m {
        r.read_exact(&mut buf)?;
        samples.push(
            buf.chunks_exact(8)
                .map(|c| {
                    let i = f32::from_le_bytes(c[0..4].try_into().unwrap());
                    let q = f32::from_le_bytes(c[4..8].try_into().unwrap());
                    Complex64::new(i as f64, q as f64)
                })
                .collect(),
        );
    }
    IqFrame::new(samples, f64_at(24), f64_at(32), f64_at(40))
        .map_err(|e| DspError::BadFile(e.to_string()))
}

pub fn save_iq(path: &std::path::Path, frame: &IqFrame) -> Result<(), DspError> {
    write_iq(std::io::BufWriter::new(std::fs::File::create(path)?), frame)
}

pub fn load_iq(path: &std::path::Path) -> Result<IqFrame, DspError> {
    read_iq(std::io::BufReader::new(std::fs::File::open(path)?))
}
