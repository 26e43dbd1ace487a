//! C ABI for the striprf detector.
//!
//! Every function returns an [`SrfStatus`]; results come back through out
//! pointers. On failure the message is available from
//! [`srf_last_error_message`] on the same thread until the next call.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use striprf::detect::{decode, nms, Detection};
use striprf::io;
use striprf::model::{build_model, ModelConfig, ModelGraph};
use striprf::{Error, ParamStore, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SrfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Format = 5,
    WeightMismatch = 6,
    Io = 7,
    Panic = 8,
}

/// One decoded box: top-left corner and size in pixels.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SrfDetection {
    pub image_id: u64,
    pub class_id: u32,
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
    pub score: f32,
}

pub struct SrfModel {
    graph: ModelGraph,
    params: ParamStore<f32>,
}

pub struct SrfOutputs {
    heads: Vec<Tensor<f32>>,
    strides: Vec<usize>,
    num_classes: usize,
    image_size: usize,
}

pub struct SrfDetections {
    items: Vec<SrfDetection>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SrfStatus {
    match e {
        Error::Shape { op: "weights", .. } => SrfStatus::WeightMismatch,
        Error::Shape { .. } | Error::NotScalar(_) => SrfStatus::Shape,
        Error::Config(_) => SrfStatus::Config,
        Error::Format { .. } | Error::Json(_) | Error::ClassNames(..) => SrfStatus::Format,
        Error::WeightMismatch { .. } | Error::UnknownParam(_) => SrfStatus::WeightMismatch,
        Error::Io(_) => SrfStatus::Io,
    }
}

struct Fail(SrfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SrfStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SrfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SrfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SrfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SrfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next `srf_` call on the same thread.
#[no_mangle]
pub extern "C" fn srf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Build a model from a JSON config and initialize its weights from the
/// config's seed.
///
/// # Safety
/// `config_json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srf_model_new(
    config_json: *const c_char,
    out: *mut *mut SrfModel,
) -> SrfStatus {
    guard(|| {
        let cfg = ModelConfig::from_json(str_arg(config_json, "config_json")?)?;
        let graph = build_model(&cfg)?;
        let params = graph.init_params(cfg.seed)?;
        let model = Box::new(SrfModel { graph, params });
        put(out, Box::into_raw(model), "out")
    })
}

/// # Safety
/// `model` must come from [`srf_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn srf_model_free(model: *mut SrfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Replace the model's weights with the contents of a weight file. Names and
/// shapes must match the model exactly; on failure the old weights stay.
///
/// # Safety
/// `model` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn srf_model_load_weights(
    model: *mut SrfModel,
    path: *const c_char,
) -> SrfStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let params = io::load_weights(Path::new(str_arg(path, "path")?))?;
        m.graph.check_weights(&params)?;
        m.params = params;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn srf_model_save_weights(
    model: *const SrfModel,
    path: *const c_char,
) -> SrfStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let bytes = io::write_weights(&m.params)?;
        std::fs::write(str_arg(path, "path")?, bytes).map_err(Error::from)?;
        Ok(())
    })
}

/// Number of learnable scalars.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn srf_model_param_count(
    model: *const SrfModel,
    out: *mut usize,
) -> SrfStatus {
    guard(|| put(out, ref_arg(model, "model")?.graph.param_count(), "out"))
}

/// Side length the model expects for its square inputs.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn srf_model_input_size(
    model: *const SrfModel,
    out: *mut usize,
) -> SrfStatus {
    guard(|| {
        put(
            out,
            ref_arg(model, "model")?.graph.config().input_size,
            "out",
        )
    })
}

/// Run the network on `batch` images stored as `batch × 3 × S × S` floats.
///
/// # Safety
/// `data` must point to `len` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srf_model_forward(
    model: *const SrfModel,
    data: *const f32,
    len: usize,
    batch: usize,
    out: *mut *mut SrfOutputs,
) -> SrfStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        if data.is_null() {
            return Err(null("data"));
        }
        let cfg = m.graph.config();
        let s = cfg.input_size;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let image = Tensor::new([batch, 3, s, s], values)?;
        let heads = m.graph.run(&m.params, &image)?;
        let outputs = Box::new(SrfOutputs {
            heads,
            strides: m.graph.head_strides(),
            num_classes: cfg.num_classes,
            image_size: s,
        });
        put(out, Box::into_raw(outputs), "out")
    })
}

/// # Safety
/// `outputs` must come from [`srf_model_forward`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn srf_outputs_free(outputs: *mut SrfOutputs) {
    if !outputs.is_null() {
        drop(Box::from_raw(outputs));
    }
}

/// # Safety
/// `outputs` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn srf_outputs_count(
    outputs: *const SrfOutputs,
    out: *mut usize,
) -> SrfStatus {
    guard(|| put(out, ref_arg(outputs, "outputs")?.heads.len(), "out"))
}

/// Dims (N, C, H, W) and stride of head `index`.
///
/// # Safety
/// `outputs` must be a live handle; `dims` must have room for 4 values.
#[no_mangle]
pub unsafe extern "C" fn srf_outputs_head(
    outputs: *const SrfOutputs,
    index: usize,
    dims: *mut usize,
    stride: *mut usize,
) -> SrfStatus {
    guard(|| {
        let o = ref_arg(outputs, "outputs")?;
        let head = o.heads.get(index).ok_or_else(|| {
            Fail(
                SrfStatus::InvalidArgument,
                format!("head {index} out of range ({} heads)", o.heads.len()),
            )
        })?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        std::slice::from_raw_parts_mut(dims, 4).copy_from_slice(&head.dims());
        put(stride, o.strides[index], "stride")
    })
}

/// Borrow the values of head `index`; valid while `outputs` lives.
///
/// # Safety
/// `outputs` must be a live handle; `data` and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn srf_outputs_data(
    outputs: *const SrfOutputs,
    index: usize,
    data: *mut *const f32,
    len: *mut usize,
) -> SrfStatus {
    guard(|| {
        let o = ref_arg(outputs, "outputs")?;
        let head = o.heads.get(index).ok_or_else(|| {
            Fail(
                SrfStatus::InvalidArgument,
                format!("head {index} out of range"),
            )
        })?;
        put(data, head.data().as_ptr(), "data")?;
        put(len, head.len(), "len")
    })
}

/// Decode every head, keep boxes scoring at least `conf`, and suppress
/// same-class overlaps above `nms_iou`.
///
/// # Safety
/// `outputs` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn srf_outputs_detect(
    outputs: *const SrfOutputs,
    conf: f64,
    nms_iou: f64,
    out: *mut *mut SrfDetections,
) -> SrfStatus {
    guard(|| {
        let o = ref_arg(outputs, "outputs")?;
        if !(0.0..=1.0).contains(&conf) || !nms_iou.is_finite() {
            return Err(Fail(
                SrfStatus::InvalidArgument,
                format!("conf {conf} / nms_iou {nms_iou} out of range"),
            ));
        }
        let s = o.image_size;
        let dets = decode(&o.heads, &o.strides, o.num_classes, conf, (s, s))?;
        let items = nms(&dets, nms_iou).iter().map(to_c).collect();
        put(out, Box::into_raw(Box::new(SrfDetections { items })), "out")
    })
}

fn to_c(d: &Detection) -> SrfDetection {
    SrfDetection {
        image_id: d.image_id,
        class_id: d.class_id as u32,
        x: d.bbox.x as f32,
        y: d.bbox.y as f32,
        w: d.bbox.w as f32,
        h: d.bbox.h as f32,
        score: d.score as f32,
    }
}

/// # Safety
/// `dets` must come from [`srf_outputs_detect`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn srf_detections_free(dets: *mut SrfDetections) {
    if !dets.is_null() {
        drop(Box::from_raw(dets));
    }
}

/// # Safety
/// `dets` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn srf_detections_len(
    dets: *const SrfDetections,
    out: *mut usize,
) -> SrfStatus {
    guard(|| put(out, ref_arg(dets, "detections")?.items.len(), "out"))
}

/// # Safety
/// `dets` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn srf_detections_get(
    dets: *const SrfDetections,
    index: usize,
    out: *mut SrfDetection,
) -> SrfStatus {
    guard(|| {
        let d = ref_arg(dets, "detections")?;
        let item = *d.items.get(index).ok_or_else(|| {
            Fail(
                SrfStatus::InvalidArgument,
                format!("detection {index} out of range"),
            )
        })?;
        put(out, item, "out")
    })
}
