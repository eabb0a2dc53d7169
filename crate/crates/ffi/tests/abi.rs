use std::ffi::{CStr, CString};
use std::ptr;

use bletrack::frames::{AcmMessage, AdElement, AdvAddress, AdvChannel, AdvFrame};
use bletrack::grouping::{ingest_all, GroupingParams};
use bletrack::simulate::{generate, Profile, Scenario, ScenarioKind};
use bletrack::store::Store;
use bletrack_ffi::*;

fn last_error() -> String {
    let p = bt_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn decode_adv_to_json() {
    let ch = AdvChannel::new(37).unwrap();
    let frame = AdvFrame::new(
        AdvAddress::from_u64(0x4a_1b_2c_3d_4e_5f),
        ch,
        vec![AdElement::apple(vec![AcmMessage::new(0x10, vec![0x05, 0x1c, 0x1e, 0x2f, 0x9b, 0x10])])],
    );
    let pdu = frame.to_bytes().unwrap();
    let mut out = ptr::null_mut();
    let rc = unsafe { bt_decode_adv(pdu.as_ptr(), pdu.len(), 37, &mut out) };
    assert_eq!(rc, BtStatus::Ok);
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { bt_string_free(out) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["adv_address"], frame.adv_address.to_string());
    assert_eq!(v["vendor"], "Apple");
    assert_eq!(v["channel"], 37);
    assert_eq!(v["ad"][0]["acms"][0]["type"], 0x10);
    assert_eq!(v["ad"][0]["acms"][0]["content"], "051c1e2f9b10");
}

#[test]
fn decode_errors_set_status_and_message() {
    let mut out = ptr::null_mut();
    let short = [0x42u8, 0x02, 0x00];
    assert_eq!(unsafe { bt_decode_adv(short.as_ptr(), short.len(), 37, &mut out) }, BtStatus::MalformedFrame);
    assert!(out.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { bt_decode_adv(short.as_ptr(), short.len(), 12, &mut out) }, BtStatus::InvalidArgument);
    assert_eq!(unsafe { bt_decode_adv(ptr::null(), 0, 37, &mut out) }, BtStatus::NullPointer);
    assert!(last_error().contains("pdu"));
    unsafe { bt_string_free(ptr::null_mut()) };
}

#[test]
fn residual_matches_core() {
    assert_eq!(bt_time_residual(625 * 40 + 17, 0), bletrack::grouping::time_residual(625 * 40 + 17, 0));
    assert_eq!(bt_time_residual(1000, 1000), 0.0);
}

#[test]
fn aoa_of_a_plane_wave() {
    let (n, fs, f0) = (256usize, 2e6, 2.426e9);
    for theta in [-40.0f64, 0.0, 25.0] {
        let step = std::f64::consts::PI * theta.to_radians().sin();
        let mut iq = Vec::with_capacity(4 * n);
        for m in 0..2 {
            for k in 0..n {
                let ph = 2.0 * std::f64::consts::PI * 250e3 * k as f64 / fs + step * m as f64;
                iq.extend([ph.cos(), ph.sin()]);
            }
        }
        let mut aoa = f64::NAN;
        let rc = unsafe { bt_estimate_aoa(iq.as_ptr(), n, 2, fs, f0, 0.0, &mut aoa) };
        assert_eq!(rc, BtStatus::Ok, "{}", last_error());
        assert!((aoa - theta).abs() <= 0.5, "{theta} -> {aoa}");
    }
    let iq = [1.0, 0.0, 1.0, 0.0];
    let mut aoa = 0.0;
    assert_eq!(unsafe { bt_estimate_aoa(iq.as_ptr(), 2, 1, 2e6, 2.4e9, 0.0, &mut aoa) }, BtStatus::Dsp);
    assert_eq!(unsafe { bt_estimate_aoa(iq.as_ptr(), 0, 2, 2e6, 2.4e9, 0.0, &mut aoa) }, BtStatus::InvalidArgument);
}

#[test]
fn engine_matches_native_grouping() {
    let mut sc = Scenario::preset(ScenarioKind::Apartment, 30.0, 5);
    sc.populate(&[Profile::Iphone, Profile::Samsung, Profile::Airpods], 0.0);
    let sim = generate(&sc).unwrap();

    let mut engine = ptr::null_mut();
    assert_eq!(unsafe { bt_engine_new(4, ptr::null(), &mut engine) }, BtStatus::Ok);
    let mut assigned = Vec::new();
    for p in sim.packets.iter().filter(|p| p.heard()) {
        let line = CString::new(serde_json::to_string(p).unwrap()).unwrap();
        let mut id = u64::MAX;
        assert_eq!(unsafe { bt_engine_ingest(engine, line.as_ptr(), &mut id) }, BtStatus::Ok, "{}", last_error());
        assigned.push(id);
    }

    let params = GroupingParams::default();
    let mut store = Store::new(params.store_config(4));
    let native = ingest_all(sim.packets.iter().filter_map(|p| p.to_record()), &mut store, &params).unwrap();
    assert_eq!(assigned, native.iter().map(|a| a.device_id).collect::<Vec<_>>());
    assert_eq!(unsafe { bt_engine_device_count(engine) }, store.len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { bt_engine_save(engine, cpath.as_ptr()) }, BtStatus::Ok);
    assert_eq!(std::fs::read(&path).unwrap(), store.to_jsonl());

    let bad = CString::new("{\"ts_us\": 1}").unwrap();
    assert_eq!(unsafe { bt_engine_ingest(engine, bad.as_ptr(), ptr::null_mut()) }, BtStatus::InvalidArgument);
    unsafe { bt_engine_free(engine) };
    assert_eq!(unsafe { bt_engine_device_count(ptr::null()) }, 0);

    let params = CString::new("s_thre = -1").unwrap();
    let mut e2 = ptr::null_mut();
    assert_eq!(unsafe { bt_engine_new(4, params.as_ptr(), &mut e2) }, BtStatus::InvalidArgument);
    assert!(e2.is_null());
}

#[test]
fn header_compiles_as_c() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let src = tempfile::Builder::new().suffix(".c").tempfile().unwrap();
    std::fs::write(
        src.path(),
        "#include \"bletrack.h\"\nint main(void) { BtEngine *e = 0; return bt_engine_new(4, 0, &e) == BT_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(format!("{dir}/include"))
        .arg(src.path())
        .output()
        .expect("a C compiler is on PATH");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
