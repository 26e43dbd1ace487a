use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use striprf_ffi::*;

const CONFIG: &str =
    r#"{"num_classes": 4, "base_width": 4, "depth": 1, "input_size": 32, "seed": 7}"#;

fn last_error() -> String {
    let p = srf_last_error_message();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_model(json: &str) -> *mut SrfModel {
    let cfg = CString::new(json).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { srf_model_new(cfg.as_ptr(), &mut model) },
        SrfStatus::Ok
    );
    assert!(!model.is_null());
    model
}

fn image(len: usize) -> Vec<f32> {
    (0..len).map(|i| ((i * 37) % 101) as f32 / 101.0).collect()
}

#[test]
fn forward_and_detect() {
    let model = new_model(CONFIG);
    let mut size = 0;
    assert_eq!(
        unsafe { srf_model_input_size(model, &mut size) },
        SrfStatus::Ok
    );
    assert_eq!(size, 32);
    let x = image(3 * 32 * 32);
    let mut outputs = ptr::null_mut();
    assert_eq!(
        unsafe { srf_model_forward(model, x.as_ptr(), x.len(), 1, &mut outputs) },
        SrfStatus::Ok
    );
    let mut count = 0;
    unsafe { srf_outputs_count(outputs, &mut count) };
    assert_eq!(count, 4);
    for (i, expected) in [(0usize, 8usize), (1, 4), (2, 2), (3, 1)] {
        let mut dims = [0usize; 4];
        let mut stride = 0;
        assert_eq!(
            unsafe { srf_outputs_head(outputs, i, dims.as_mut_ptr(), &mut stride) },
            SrfStatus::Ok
        );
        assert_eq!(dims, [1, 8, expected, expected]);
        assert_eq!(stride, 32 / expected);
        let mut data = ptr::null();
        let mut len = 0;
        unsafe { srf_outputs_data(outputs, i, &mut data, &mut len) };
        assert_eq!(len, 8 * expected * expected);
        let values = unsafe { std::slice::from_raw_parts(data, len) };
        assert!(values.iter().all(|v| v.is_finite()));
    }

    let mut dets = ptr::null_mut();
    assert_eq!(
        unsafe { srf_outputs_detect(outputs, 0.0, 0.5, &mut dets) },
        SrfStatus::Ok
    );
    let mut n = 0;
    unsafe { srf_detections_len(dets, &mut n) };
    assert!(n > 0);
    for i in 0..n {
        let mut d = SrfDetection {
            image_id: 9,
            class_id: 9,
            x: 0.0,
            y: 0.0,
            w: 0.0,
            h: 0.0,
            score: 0.0,
        };
        assert_eq!(
            unsafe { srf_detections_get(dets, i, &mut d) },
            SrfStatus::Ok
        );
        assert_eq!(d.image_id, 0);
        assert!(d.class_id < 4);
        assert!(d.x >= 0.0 && d.y >= 0.0 && d.x + d.w <= 32.0 + 1e-4 && d.y + d.h <= 32.0 + 1e-4);
    }
    unsafe {
        srf_detections_free(dets);
        srf_outputs_free(outputs);
        srf_model_free(model);
    }
}

#[test]
fn error_codes_and_messages() {
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { srf_model_new(ptr::null(), &mut model) },
        SrfStatus::NullPointer
    );
    assert!(last_error().contains("config_json"));

    let bad = CString::new(r#"{"num_classes": 4, "base_width": 4, "depth": 1, "input_size": 40}"#)
        .unwrap();
    assert_eq!(
        unsafe { srf_model_new(bad.as_ptr(), &mut model) },
        SrfStatus::Config
    );
    assert!(last_error().contains("input_size"));

    let model = new_model(CONFIG);
    assert!(
        srf_last_error_message().is_null(),
        "success clears the message"
    );
    let x = image(10);
    let mut outputs = ptr::null_mut();
    assert_eq!(
        unsafe { srf_model_forward(model, x.as_ptr(), x.len(), 1, &mut outputs) },
        SrfStatus::Shape
    );
    assert!(outputs.is_null());

    let mut dims = [0usize; 4];
    let mut stride = 0;
    assert_eq!(
        unsafe { srf_outputs_head(ptr::null(), 0, dims.as_mut_ptr(), &mut stride) },
        SrfStatus::NullPointer
    );
    unsafe { srf_model_free(model) };
    unsafe { srf_model_free(ptr::null_mut()) };
}

#[test]
fn weights_round_trip_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("w.srfw").to_str().unwrap()).unwrap();
    let a = new_model(CONFIG);
    assert_eq!(
        unsafe { srf_model_save_weights(a, path.as_ptr()) },
        SrfStatus::Ok
    );

    let b = new_model(&CONFIG.replace("\"seed\": 7", "\"seed\": 8"));
    assert_eq!(
        unsafe { srf_model_load_weights(b, path.as_ptr()) },
        SrfStatus::Ok
    );
    let x = image(3 * 32 * 32);
    let head0 = |m: *mut SrfModel| -> Vec<f32> {
        let mut o = ptr::null_mut();
        let mut data = ptr::null();
        let mut len = 0;
        unsafe {
            srf_model_forward(m, x.as_ptr(), x.len(), 1, &mut o);
            srf_outputs_data(o, 0, &mut data, &mut len);
            let v = std::slice::from_raw_parts(data, len).to_vec();
            srf_outputs_free(o);
            v
        }
    };
    assert_eq!(head0(a), head0(b));

    let other = new_model(&CONFIG.replace("\"base_width\": 4", "\"base_width\": 8"));
    assert_eq!(
        unsafe { srf_model_load_weights(other, path.as_ptr()) },
        SrfStatus::WeightMismatch
    );
    let missing = CString::new(dir.path().join("nope.srfw").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { srf_model_load_weights(other, missing.as_ptr()) },
        SrfStatus::Io
    );
    unsafe {
        srf_model_free(a);
        srf_model_free(b);
        srf_model_free(other);
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/striprf.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "srf_model_new",
        "srf_model_forward",
        "srf_outputs_detect",
        "srf_last_error_message",
        "SRF_STATUS_OK",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    match Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    {
        Ok(status) => assert!(status.success(), "header does not compile"),
        Err(_) => eprintln!("no C compiler found, skipping compile check"),
    }
}
