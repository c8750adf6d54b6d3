//! C ABI over `reflectnet` models.
//!
//! Models live behind the opaque `RfnModel` handle. Every function returns an
//! `RfnStatus`; on failure, `rfn_last_error` returns a message for the calling thread.
//! Tensors cross the boundary as contiguous row-major `float` buffers with explicit
//! lengths.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use reflectnet::arch::{AttachSpec, ClassifierModel, ModelConfig, Role};
use reflectnet::engine::{checkpoint, Tensor};
use reflectnet::explainer::explain_batch;
use reflectnet::{seed, Error};

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RfnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Io = 5,
    Format = 6,
    Numeric = 7,
    Panic = 8,
}

/// Opaque model handle.
pub struct RfnModel {
    inner: ClassifierModel<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> RfnStatus {
    match e {
        Error::Shape(_) => RfnStatus::Shape,
        Error::NonFinite(_) | Error::Diverged(_) => RfnStatus::Numeric,
        Error::InvalidArgument(_) | Error::UnknownNode(_) | Error::MissingExplanation(_) => {
            RfnStatus::InvalidArgument
        }
        Error::Config(_) => RfnStatus::Config,
        Error::Format(_) => RfnStatus::Format,
        Error::Io(_) => RfnStatus::Io,
    }
}

struct Failure(RfnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: RfnStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RfnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RfnStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside reflectnet");
            RfnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(RfnStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(RfnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn model_arg<'a>(p: *const RfnModel) -> Result<&'a ClassifierModel<f32>, Failure> {
    match p.as_ref() {
        Some(m) => Ok(&m.inner),
        None => fail(RfnStatus::NullPointer, "model handle is null"),
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(RfnStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f32, len: usize, what: &str) -> Result<&'a mut [f32], Failure> {
    if p.is_null() {
        return fail(RfnStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn parse_config(json: &str) -> Result<ModelConfig, Failure> {
    let cfg: ModelConfig = serde_json::from_str(json)
        .or_else(|e| fail(RfnStatus::Config, format!("model config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

unsafe fn write_handle(
    out: *mut *mut RfnModel,
    model: ClassifierModel<f32>,
) -> Result<(), Failure> {
    if out.is_null() {
        return fail(RfnStatus::NullPointer, "output handle pointer is null");
    }
    *out = Box::into_raw(Box::new(RfnModel { inner: model }));
    Ok(())
}

/// Message of the last failed call on this thread, or an empty string. The pointer stays
/// valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rfn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rfn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Freshly initialized model from a JSON model config, e.g.
/// `{"family":"vgg","n_classes":10,"width_multiplier":0.25}`; add
/// `"explanation_attach":[{"layer":2,"depth":16}]` for a reflective model.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rfn_model_new(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut RfnModel,
) -> RfnStatus {
    guard(|| {
        let cfg = parse_config(str_arg(config_json, "config_json")?)?;
        let model = ClassifierModel::build(&cfg, &mut seed::stream(&[seed::purpose::INIT, seed]))?;
        write_handle(out, model)
    })
}

/// Model described by `config_json` with weights read from a checkpoint file.
///
/// # Safety
/// Both strings must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rfn_model_load(
    config_json: *const c_char,
    checkpoint_path: *const c_char,
    out: *mut *mut RfnModel,
) -> RfnStatus {
    guard(|| {
        let cfg = parse_config(str_arg(config_json, "config_json")?)?;
        let path = PathBuf::from(str_arg(checkpoint_path, "checkpoint_path")?);
        let mut model = ClassifierModel::build(&cfg, &mut seed::stream(&[0]))?;
        model.load_entries(&checkpoint::load(&path)?)?;
        write_handle(out, model)
    })
}

/// Writes the model's weights and running statistics to a checkpoint file.
///
/// # Safety
/// `model` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rfn_model_save(model: *const RfnModel, path: *const c_char) -> RfnStatus {
    guard(|| {
        let m = model_arg(model)?;
        let path = PathBuf::from(str_arg(path, "path")?);
        checkpoint::save(&path, &m.to_entries())?;
        Ok(())
    })
}

/// Reflective model that starts as the same function as `base`: base weights copied,
/// one branch of depth `depth` per entry of `layers`, branch read-in weights zeroed.
///
/// # Safety
/// `base` must be a live handle, `layers` must hold `n_layers` values and `out` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rfn_model_reflective_from(
    base: *const RfnModel,
    layers: *const u32,
    n_layers: usize,
    depth: u32,
    seed: u64,
    out: *mut *mut RfnModel,
) -> RfnStatus {
    guard(|| {
        let b = model_arg(base)?;
        let layers = slice_arg(layers, n_layers, "layers")?;
        if layers.is_empty() {
            return fail(RfnStatus::InvalidArgument, "no attach layer given");
        }
        let attach = layers
            .iter()
            .map(|&l| AttachSpec::new(l as usize, depth as usize))
            .collect();
        let mut rng = seed::stream(&[seed::purpose::BRANCH_INIT, seed]);
        write_handle(
            out,
            ClassifierModel::reflective_identity_from(b, attach, &mut rng)?,
        )
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `model` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rfn_model_free(model: *mut RfnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of classes.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rfn_model_n_classes(model: *const RfnModel, out: *mut u32) -> RfnStatus {
    guard(|| {
        let m = model_arg(model)?;
        if out.is_null() {
            return fail(RfnStatus::NullPointer, "out is null");
        }
        *out = m.n_classes() as u32;
        Ok(())
    })
}

/// Number of explanation inputs (0 for a base model).
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rfn_model_n_branches(model: *const RfnModel, out: *mut u32) -> RfnStatus {
    guard(|| {
        let m = model_arg(model)?;
        if out.is_null() {
            return fail(RfnStatus::NullPointer, "out is null");
        }
        *out = m.attach_points().len() as u32;
        Ok(())
    })
}

/// `[d,u,v]` of the explanation consumed by branch `branch` for `h x w` inputs.
///
/// # Safety
/// `model` must be a live handle and `out` must point to 3 writable values.
#[no_mangle]
pub unsafe extern "C" fn rfn_model_explanation_shape(
    model: *const RfnModel,
    branch: u32,
    height: u32,
    width: u32,
    out: *mut u32,
) -> RfnStatus {
    guard(|| {
        let m = model_arg(model)?;
        let shapes = m.explanation_shapes(height as usize, width as usize)?;
        let Some(s) = shapes.get(branch as usize) else {
            return fail(
                RfnStatus::InvalidArgument,
                format!("branch {branch} of {}", shapes.len()),
            );
        };
        if out.is_null() {
            return fail(RfnStatus::NullPointer, "out is null");
        }
        for (i, v) in s.iter().enumerate() {
            *out.add(i) = *v as u32;
        }
        Ok(())
    })
}

/// `[K,u,v]` of the feature maps at `layer` for `h x w` inputs.
///
/// # Safety
/// `model` must be a live handle and `out` must point to 3 writable values.
#[no_mangle]
pub unsafe extern "C" fn rfn_model_layer_shape(
    model: *const RfnModel,
    layer: u32,
    height: u32,
    width: u32,
    out: *mut u32,
) -> RfnStatus {
    guard(|| {
        let m = model_arg(model)?;
        let (k, u, v) = m.tap_shape(layer as usize, height as usize, width as usize)?;
        if out.is_null() {
            return fail(RfnStatus::NullPointer, "out is null");
        }
        for (i, x) in [k, u, v].into_iter().enumerate() {
            *out.add(i) = x as u32;
        }
        Ok(())
    })
}

/// Evaluation-mode logits `[n, n_classes]` for `n` images of shape `[c,h,w]`.
/// `explanations` holds every branch's `[n,d,u,v]` block back to back (length 0 and a
/// null pointer for a base model).
///
/// # Safety
/// Pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn rfn_forward(
    model: *const RfnModel,
    input: *const f32,
    n: u32,
    c: u32,
    h: u32,
    w: u32,
    explanations: *const f32,
    explanations_len: usize,
    logits_out: *mut f32,
    logits_len: usize,
) -> RfnStatus {
    guard(|| {
        let m = model_arg(model)?;
        let (n, c, h, w) = (n as usize, c as usize, h as usize, w as usize);
        let x = Tensor::new(
            vec![n, c, h, w],
            slice_arg(input, n * c * h * w, "input")?.to_vec(),
        )?;
        let flat = slice_arg(explanations, explanations_len, "explanations")?;
        let shapes = m.explanation_shapes(h, w)?;
        let needed: usize = shapes.iter().map(|s| n * s.iter().product::<usize>()).sum();
        if flat.len() != needed {
            return fail(
                RfnStatus::Shape,
                format!("expected {needed} explanation values, got {}", flat.len()),
            );
        }
        let mut ex = Vec::with_capacity(shapes.len());
        let mut at = 0;
        for s in &shapes {
            let len = n * s.iter().product::<usize>();
            ex.push(Tensor::new(
                vec![n, s[0], s[1], s[2]],
                flat[at..at + len].to_vec(),
            )?);
            at += len;
        }
        let logits = match m.role() {
            Role::Base => m.logits(&x, None)?,
            Role::Reflective => m.logits(&x, Some(&ex))?,
        };
        let out = slice_out(logits_out, logits_len, "logits_out")?;
        if out.len() != logits.numel() {
            return fail(
                RfnStatus::Shape,
                format!("logits buffer holds {}, need {}", out.len(), logits.numel()),
            );
        }
        out.copy_from_slice(logits.data());
        Ok(())
    })
}

/// Normalized depth-`depth` explanations `[n,depth,u,v]` of `classes[i]` for each image
/// at `layer` of a base model.
///
/// # Safety
/// Pointers must reference buffers of the stated lengths; `classes` holds `n` values.
#[no_mangle]
pub unsafe extern "C" fn rfn_explain(
    model: *const RfnModel,
    input: *const f32,
    n: u32,
    c: u32,
    h: u32,
    w: u32,
    classes: *const u32,
    layer: u32,
    depth: u32,
    out: *mut f32,
    out_len: usize,
) -> RfnStatus {
    guard(|| {
        let m = model_arg(model)?;
        let (n, c, h, w) = (n as usize, c as usize, h as usize, w as usize);
        let x = Tensor::new(
            vec![n, c, h, w],
            slice_arg(input, n * c * h * w, "input")?.to_vec(),
        )?;
        let classes: Vec<usize> = slice_arg(classes, n, "classes")?
            .iter()
            .map(|&k| k as usize)
            .collect();
        if let Some(&bad) = classes.iter().find(|&&k| k >= m.n_classes()) {
            return fail(
                RfnStatus::InvalidArgument,
                format!("class {bad} out of range"),
            );
        }
        let (_, per_layer) = explain_batch(m, &x, &classes, &[(layer as usize, depth as usize)])?;
        let expl = &per_layer[0];
        let total: usize = expl.iter().map(|e| e.data.numel()).sum();
        let dst = slice_out(out, out_len, "out")?;
        if dst.len() != total {
            return fail(
                RfnStatus::Shape,
                format!("output buffer holds {}, need {total}", dst.len()),
            );
        }
        let mut at = 0;
        for e in expl {
            dst[at..at + e.data.numel()].copy_from_slice(e.data.data());
            at += e.data.numel();
        }
        Ok(())
    })
}
