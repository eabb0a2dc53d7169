//! C interface to the bletrack engine.
//!
//! Every fallible call returns a [`BtStatus`]; on failure the message is
//! available from [`bt_last_error`] on the same thread. Strings handed out
//! by the library are freed with [`bt_string_free`], engines with
//! [`bt_engine_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use bletrack::dsp::{estimate_aoa_music, IqFrame, SteeringConfig};
use bletrack::frames::registry::builtin;
use bletrack::frames::{decode_adv, AdElement, AdvChannel, AdvFrame, ManufacturerData};
use bletrack::grouping::{ingest, time_residual, GroupingParams};
use bletrack::simulate::SimPacket;
use bletrack::store::Store;
use num_complex::Complex64;
use serde_json::{json, Value};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MalformedFrame = 3,
    Dsp = 4,
    Grouping = 5,
    Io = 6,
    Panic = 99,
}

/// Packet grouping state: a device store plus grouping parameters.
pub struct BtEngine {
    store: Store,
    params: GroupingParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

type Failure = (BtStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BtStatus::Ok,
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            BtStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (BtStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (BtStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn bt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn frame_json(f: &AdvFrame) -> Value {
    let ad: Vec<Value> = f
        .ad
        .iter()
        .map(|e| match e {
            AdElement::Manufacturer { company_id, data: ManufacturerData::Apple { acms, rest } } => json!({
                "company_id": company_id,
                "acms": acms.iter().map(|m| json!({"type": m.acm_type, "content": hex::encode(&m.content)})).collect::<Vec<_>>(),
                "rest": hex::encode(rest),
            }),
            AdElement::Manufacturer { company_id, data: ManufacturerData::Opaque(d) } => {
                json!({"company_id": company_id, "data": hex::encode(d)})
            }
            AdElement::ServiceData16 { uuid, data } => json!({"service_uuid": uuid, "data": hex::encode(data)}),
            AdElement::ServiceUuids16 { complete, uuids } => json!({"uuids": uuids, "complete": complete}),
            AdElement::Other { ad_type, data } => json!({"ad_type": ad_type, "data": hex::encode(data)}),
        })
        .collect();
    json!({
        "adv_address": f.adv_address.to_string(),
        "channel": f.channel.number(),
        "pdu_type": f.pdu_type,
        "vendor": f.vendor().as_str(),
        "ad": ad,
        "trailing": hex::encode(&f.trailing),
        "facts": builtin().frame_facts(f),
    })
}

/// Decodes an advertising PDU (header, address, payload; no preamble,
/// access address or CRC) and writes a JSON description to `*out_json`.
///
/// # Safety
/// `pdu` must point to `len` readable bytes and `out_json` to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn bt_decode_adv(pdu: *const u8, len: usize, channel: u8, out_json: *mut *mut c_char) -> BtStatus {
    guard(|| {
        if pdu.is_null() {
            return Err(null("pdu"));
        }
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let ch = AdvChannel::new(channel).map_err(|e| (BtStatus::InvalidArgument, e.to_string()))?;
        let bytes = std::slice::from_raw_parts(pdu, len);
        let frame = decode_adv(bytes, ch).map_err(|e| (BtStatus::MalformedFrame, e.to_string()))?;
        *out_json = into_c_string(frame_json(&frame).to_string());
        Ok(())
    })
}

/// Residual of `t - t_prev` (µs) against the 625 µs emission lattice.
#[no_mangle]
pub extern "C" fn bt_time_residual(t_us: i64, t_prev_us: i64) -> f64 {
    time_residual(t_us, t_prev_us)
}

/// MUSIC angle of arrival, degrees from broadside, for a uniform linear
/// array. `iq` holds `antennas` planes of `samples` interleaved (I, Q)
/// pairs. `spacing_m <= 0` selects half-wavelength spacing.
///
/// # Safety
/// `iq` must point to `2 * antennas * samples` doubles and `out_deg` to
/// one writable double.
#[no_mangle]
pub unsafe extern "C" fn bt_estimate_aoa(
    iq: *const f64,
    samples: usize,
    antennas: usize,
    sample_rate: f64,
    center_freq: f64,
    spacing_m: f64,
    out_deg: *mut f64,
) -> BtStatus {
    guard(|| {
        if iq.is_null() {
            return Err(null("iq"));
        }
        if out_deg.is_null() {
            return Err(null("out_deg"));
        }
        let n = samples.checked_mul(antennas).and_then(|x| x.checked_mul(2));
        let Some(n) = n.filter(|&n| n > 0) else {
            return Err((BtStatus::InvalidArgument, "empty or oversized capture".into()));
        };
        let raw = std::slice::from_raw_parts(iq, n);
        let planes: Vec<Vec<Complex64>> = raw
            .chunks_exact(2 * samples)
            .map(|p| p.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
            .collect();
        let dsp = |e: bletrack::dsp::DspError| (BtStatus::Dsp, e.to_string());
        let frame = IqFrame::new(planes, sample_rate, center_freq, 0.0).map_err(dsp)?;
        let mut cfg = SteeringConfig::half_wavelength(antennas).with_center_freq(center_freq);
        if spacing_m > 0.0 {
            cfg.spacing = spacing_m;
        }
        let (aoa, _) = estimate_aoa_music(&frame, &cfg).map_err(dsp)?;
        *out_deg = aoa;
        Ok(())
    })
}

/// Creates a grouping engine for `nodes` sniffing nodes. `params` is a
/// key = value parameter text, or null for the defaults.
///
/// # Safety
/// `params` must be null or a NUL-terminated string; `out` must point to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn bt_engine_new(nodes: usize, params: *const c_char, out: *mut *mut BtEngine) -> BtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if nodes == 0 {
            return Err((BtStatus::InvalidArgument, "need at least one node".into()));
        }
        let params = if params.is_null() {
            GroupingParams::default()
        } else {
            GroupingParams::parse(str_arg(params, "params")?).map_err(|e| (BtStatus::InvalidArgument, e.to_string()))?
        };
        let store = Store::new(params.store_config(nodes));
        *out = Box::into_raw(Box::new(BtEngine { store, params }));
        Ok(())
    })
}

/// # Safety
/// `engine` must be null or come from [`bt_engine_new`] and not have been
/// freed.
#[no_mangle]
pub unsafe extern "C" fn bt_engine_free(engine: *mut BtEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Groups one packet, given as a JSON packet line (`ts_us`, `addr`,
/// `channel`, hex `pdu`, per-node `phy`). Packets must arrive in time
/// order. Writes the assigned device id to `*out_device` if non-null.
///
/// # Safety
/// `engine` must be a live engine and `packet_json` a NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn bt_engine_ingest(engine: *mut BtEngine, packet_json: *const c_char, out_device: *mut u64) -> BtStatus {
    guard(|| {
        let e = engine.as_mut().ok_or_else(|| null("engine"))?;
        let text = str_arg(packet_json, "packet_json")?;
        let packet: SimPacket = serde_json::from_str(text).map_err(|err| (BtStatus::InvalidArgument, err.to_string()))?;
        if packet.phy.len() != e.store.nodes() {
            return Err((
                BtStatus::InvalidArgument,
                format!("packet has {} node observations, engine expects {}", packet.phy.len(), e.store.nodes()),
            ));
        }
        let record = packet
            .to_record()
            .ok_or_else(|| (BtStatus::MalformedFrame, "packet was not heard or does not decode".to_string()))?;
        let a = ingest(record, &mut e.store, &e.params).map_err(|err| (BtStatus::Grouping, err.to_string()))?;
        if !out_device.is_null() {
            *out_device = a.device_id;
        }
        Ok(())
    })
}

/// Number of devices the engine has created so far.
///
/// # Safety
/// `engine` must be null or a live engine.
#[no_mangle]
pub unsafe extern "C" fn bt_engine_device_count(engine: *const BtEngine) -> usize {
    engine.as_ref().map_or(0, |e| e.store.len())
}

/// Writes the device store as JSON Lines to `path`.
///
/// # Safety
/// `engine` must be a live engine and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bt_engine_save(engine: *const BtEngine, path: *const c_char) -> BtStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        let path = str_arg(path, "path")?;
        e.store.persist(Path::new(path)).map_err(|err| (BtStatus::Io, err.to_string()))
    })
}
