//! C ABI for loading quantized models and scoring rows.
//!
//! Every fallible function returns a [`DlnStatus`]; on failure the message is
//! available from [`dln_last_error_message`] on the same thread. Handles are
//! opaque and released with [`dln_model_free`]; strings returned by the
//! library are released with [`dln_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dln::data::Sample;
use dln::logic::{hard_logic, soft_logic};
use dln::model::{AnyModel, QuantizedModel};
use dln::simplify::{export_dot, extract};
use dln::{DlnError, GateId};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DlnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Config = 4,
    Data = 5,
    InvalidArgument = 6,
    Panic = 7,
}

/// A loaded quantized model.
pub struct DlnModel {
    inner: QuantizedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(DlnStatus, String);

impl From<DlnError> for Failure {
    fn from(e: DlnError) -> Self {
        let status = match e {
            DlnError::Io { .. } => DlnStatus::Io,
            DlnError::Data(_) => DlnStatus::Data,
            DlnError::InvalidGate(_) | DlnError::InvalidArgument(_) => DlnStatus::InvalidArgument,
            DlnError::Config(_) | DlnError::Json(_) | DlnError::Divergence { .. } => DlnStatus::Config,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: DlnStatus, message: impl Into<String>) -> Failure {
    Failure(status, message.into())
}

fn set_error(message: Option<String>) {
    let c = message.map(|m| CString::new(m.replace('\0', " ")).unwrap_or_default());
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> DlnStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(None);
            DlnStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(Some(message));
            status
        }
        Err(_) => {
            set_error(Some("internal panic".into()));
            DlnStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(DlnStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(DlnStatus::NullPointer, format!("{name} is null")))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(DlnStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DlnStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(DlnStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn into_handle(any: AnyModel, out: &mut *mut DlnModel) -> Result<(), Failure> {
    let inner = any.quantized()?;
    *out = Box::into_raw(Box::new(DlnModel { inner }));
    Ok(())
}

unsafe fn write_result(
    model: &QuantizedModel,
    class: usize,
    scores: &[u32],
    out_class: *mut usize,
    out_scores: *mut u32,
    scores_len: usize,
) -> Result<(), Failure> {
    let out_class = out_ref(out_class, "out_class")?;
    if !out_scores.is_null() {
        if scores_len < model.circuit.n_classes {
            return Err(fail(
                DlnStatus::InvalidArgument,
                format!("scores buffer holds {scores_len}, need {}", model.circuit.n_classes),
            ));
        }
        std::slice::from_raw_parts_mut(out_scores, scores.len()).copy_from_slice(scores);
    }
    *out_class = class;
    Ok(())
}

/// Loads a trained or quantized model file. On success `*out` receives a new
/// handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dln_model_load(path: *const c_char, out: *mut *mut DlnModel) -> DlnStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let path = str_arg(path, "path")?;
        into_handle(AnyModel::load(Path::new(path))?, out)
    })
}

/// Parses a trained or quantized model from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dln_model_from_json(json: *const c_char, out: *mut *mut DlnModel) -> DlnStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let text = str_arg(json, "json")?;
        into_handle(AnyModel::from_json(text)?, out)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dln_model_free(model: *mut DlnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dln_model_num_classes(model: *const DlnModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.circuit.n_classes)
}

/// Number of raw feature cells a row must have, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dln_model_num_features(model: *const DlnModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.preprocessor.schema.columns.len() - 1)
}

/// Scores one raw row given as string cells in schema column order, label
/// excluded. Missing values are empty strings. `scores` may be null;
/// otherwise it must hold at least `dln_model_num_classes` entries.
///
/// # Safety
/// `cells` must point to `n_cells` NUL-terminated strings; the out pointers
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn dln_model_predict_cells(
    model: *const DlnModel,
    cells: *const *const c_char,
    n_cells: usize,
    out_class: *mut usize,
    scores: *mut u32,
    scores_len: usize,
) -> DlnStatus {
    guard(|| {
        let m = &non_null(model, "model")?.inner;
        let ptrs = slice_arg(cells, n_cells, "cells")?;
        let cells = ptrs
            .iter()
            .enumerate()
            .map(|(i, &p)| str_arg(p, &format!("cells[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let (class, s) = m.evaluate_cells(&cells)?;
        write_result(m, class, &s, out_class, scores, scores_len)
    })
}

/// Scores one already-preprocessed row: continuous features scaled to the
/// training range and one-hot indicators of 0 or 1.
///
/// # Safety
/// `continuous` and `onehot` must point to `n_continuous` and `n_onehot`
/// values; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dln_model_predict_preprocessed(
    model: *const DlnModel,
    continuous: *const f64,
    n_continuous: usize,
    onehot: *const u8,
    n_onehot: usize,
    out_class: *mut usize,
    scores: *mut u32,
    scores_len: usize,
) -> DlnStatus {
    guard(|| {
        let m = &non_null(model, "model")?.inner;
        let c = slice_arg(continuous, n_continuous, "continuous")?;
        let o = slice_arg(onehot, n_onehot, "onehot")?;
        let circuit = &m.circuit;
        if c.len() != circuit.n_continuous || o.len() != circuit.n_onehot {
            return Err(fail(
                DlnStatus::Data,
                format!(
                    "expected {} continuous and {} one-hot values, got {} and {}",
                    circuit.n_continuous,
                    circuit.n_onehot,
                    c.len(),
                    o.len()
                ),
            ));
        }
        if o.iter().any(|&v| v > 1) {
            return Err(fail(DlnStatus::Data, "one-hot values must be 0 or 1"));
        }
        let (class, s) = circuit.evaluate(Sample { continuous: c, onehot: o });
        write_result(m, class, &s, out_class, scores, scores_len)
    })
}

/// Two-input gate equivalents of the circuit with `bits`-wide adders.
///
/// # Safety
/// `model` must be a live handle and `out_gate_level` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dln_model_count_ops(
    model: *const DlnModel,
    bits: u32,
    out_gate_level: *mut u64,
) -> DlnStatus {
    guard(|| {
        let m = &non_null(model, "model")?.inner;
        let out = out_ref(out_gate_level, "out_gate_level")?;
        *out = m.circuit.count_ops(bits)?.gate_level;
        Ok(())
    })
}

/// Simplified rules as a Graphviz DOT string. Free with `dln_string_free`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dln_model_export_dot(model: *const DlnModel, out: *mut *mut c_char) -> DlnStatus {
    guard(|| {
        let m = &non_null(model, "model")?.inner;
        let out = out_ref(out, "out")?;
        let dot = export_dot(&extract(&m.circuit, &m.preprocessor)?.simplify());
        let c = CString::new(dot).map_err(|_| fail(DlnStatus::Data, "DOT output contains NUL"))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dln_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null after a success.
/// Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn dln_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Real-valued gate `gate` (0..=15) at `(a, b)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dln_soft_logic(gate: u8, a: f64, b: f64, out: *mut f64) -> DlnStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = soft_logic(GateId::new(gate)?, a, b);
        Ok(())
    })
}

/// Boolean gate `gate` (0..=15) at `(a, b)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dln_hard_logic(gate: u8, a: bool, b: bool, out: *mut bool) -> DlnStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = hard_logic(GateId::new(gate)?, a, b);
        Ok(())
    })
}
