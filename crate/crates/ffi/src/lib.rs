//! C ABI for the engine.
//!
//! Every function returns a [`QeStatus`]; results come back through out
//! pointers. On failure the message is available from
//! [`qe_last_error_message`] on the same thread until the next call.
//! Handles are opaque and must be released with their `_free` function.
//! Strings returned by the library are freed with [`qe_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use qbaf_engine::condition::{eval_condition, parse_condition, EvalError};
use qbaf_engine::contest::{CaseInput, ContestEdit, ContestError};
use qbaf_engine::pipeline::PipelineError;
use qbaf_engine::qbaf::{df_quad_combine, evaluate, root_strength, QbafError};
use qbaf_engine::store::{ArtifactStore, StoreError};
use qbaf_engine::{ArgumentId, CaseParameters, Condition, Qbaf, Semantics};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QeStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Invalid = 4,
    Domain = 5,
    NotFound = 6,
    Rejected = 7,
    Io = 8,
    Panic = 99,
}

pub struct QeQbaf(Qbaf);

pub struct QeCondition(Condition);

pub struct QeStore(ArtifactStore);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(QeStatus, String);

impl Failure {
    fn new(status: QeStatus, message: impl ToString) -> Self {
        Failure(status, message.to_string())
    }
}

impl From<QbafError> for Failure {
    fn from(e: QbafError) -> Self {
        match e {
            QbafError::Domain(_) => Failure::new(QeStatus::Domain, e),
            _ => Failure::new(QeStatus::Invalid, e),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::new(QeStatus::Invalid, e)
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Contest(ContestError::Rejected(_)) => Failure::new(QeStatus::Rejected, e),
            StoreError::Contest(ContestError::NotFound(_)) | StoreError::Missing(_) => {
                Failure::new(QeStatus::NotFound, e)
            }
            StoreError::Io { .. } => Failure::new(QeStatus::Io, e),
            _ => Failure::new(QeStatus::Parse, e),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::new(QeStatus::Invalid, e)
    }
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QeStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QeStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QeStatus::Panic
        }
    }
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure::new(QeStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| Failure::new(QeStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| Failure::new(QeStatus::NullArgument, format!("{what} is null")))
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(QeStatus::NullArgument, "output pointer is null"));
    }
    out.write(value);
    Ok(())
}

fn json<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> Result<T, Failure> {
    serde_json::from_str(s).map_err(|e| Failure::new(QeStatus::Parse, format!("{what}: {e}")))
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(std::ptr::null_mut())
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library.
#[no_mangle]
pub extern "C" fn qe_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn qe_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// DF-QuAD combination of a base score with aggregated attack and support.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qe_df_quad_combine(base: f64, attack: f64, support: f64, out: *mut f64) -> QeStatus {
    guard(|| write(out, df_quad_combine(base, attack, support)?))
}

/// Parse a framework from its JSON form and validate it.
///
/// # Safety
/// `json_text` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qe_qbaf_from_json(json_text: *const c_char, out: *mut *mut QeQbaf) -> QeStatus {
    guard(|| {
        let qbaf: Qbaf = json(text(json_text, "json")?, "framework")?;
        let report = qbaf.validate();
        if !report.is_ok() {
            return Err(Failure::new(QeStatus::Invalid, report));
        }
        write(out, Box::into_raw(Box::new(QeQbaf(qbaf))))
    })
}

/// # Safety
/// `qbaf` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qe_qbaf_root_strength(qbaf: *const QeQbaf, out: *mut f64) -> QeStatus {
    guard(|| write(out, root_strength(&handle(qbaf, "qbaf")?.0)?))
}

/// # Safety
/// `qbaf` must be a live handle, `argument` a NUL-terminated string and `out`
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qe_qbaf_strength(qbaf: *const QeQbaf, argument: *const c_char, out: *mut f64) -> QeStatus {
    guard(|| {
        let qbaf = &handle(qbaf, "qbaf")?.0;
        let id = ArgumentId::new(text(argument, "argument")?);
        let strength =
            evaluate(qbaf)?.get(&id).ok_or_else(|| Failure::new(QeStatus::NotFound, format!("argument {id}")))?;
        write(out, strength)
    })
}

/// # Safety
/// `qbaf` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qe_qbaf_free(qbaf: *mut QeQbaf) {
    if !qbaf.is_null() {
        drop(Box::from_raw(qbaf));
    }
}

/// Parse an applicability condition.
///
/// # Safety
/// `json_text` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qe_condition_parse(json_text: *const c_char, out: *mut *mut QeCondition) -> QeStatus {
    guard(|| {
        let cond = parse_condition(text(json_text, "json")?).map_err(|e| Failure::new(QeStatus::Parse, e))?;
        write(out, Box::into_raw(Box::new(QeCondition(cond))))
    })
}

/// Evaluate a condition against case parameters given as a JSON object.
///
/// # Safety
/// `cond` must be a live handle, `params_json` a NUL-terminated string and
/// `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qe_condition_eval(
    cond: *const QeCondition,
    params_json: *const c_char,
    out: *mut bool,
) -> QeStatus {
    guard(|| {
        let cond = &handle(cond, "condition")?.0;
        let params: CaseParameters = json(text(params_json, "params")?, "parameters")?;
        write(out, eval_condition(cond, &params)?)
    })
}

/// # Safety
/// `cond` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qe_condition_free(cond: *mut QeCondition) {
    if !cond.is_null() {
        drop(Box::from_raw(cond));
    }
}

/// Open an existing artifact store directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qe_store_open(path: *const c_char, out: *mut *mut QeStore) -> QeStatus {
    guard(|| {
        let store = ArtifactStore::open(Path::new(text(path, "path")?))?;
        write(out, Box::into_raw(Box::new(QeStore(store))))
    })
}

/// # Safety
/// `store` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qe_store_revision(store: *const QeStore, out: *mut u64) -> QeStatus {
    guard(|| write(out, handle(store, "store")?.0.revision()))
}

/// Score every option for explicit case parameters. Writes a JSON document
/// `{"revision", "params", "results", "failures"}` with results ranked; free
/// it with [`qe_string_free`].
///
/// # Safety
/// `store` must be a live handle, `params_json` a NUL-terminated string and
/// `out_json` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qe_store_infer(
    store: *const QeStore,
    params_json: *const c_char,
    out_json: *mut *mut c_char,
) -> QeStatus {
    guard(|| {
        let snap = handle(store, "store")?.0.snapshot();
        let params: CaseParameters = json(text(params_json, "params")?, "parameters")?;
        let input = CaseInput { case_id: None, case_text: None, params: Some(params) };
        let inference = snap.artifacts.infer(None, &input, Semantics::DfQuad)?;
        let doc = serde_json::json!({
            "revision": snap.revision,
            "params": inference.params,
            "results": inference.ranked(),
            "failures": inference.failures,
        });
        write(out_json, owned_string(doc.to_string()))
    })
}

/// Apply a contestation and append it to the store's log.
///
/// # Safety
/// `store` must be a live handle not used concurrently, `edit_json` and
/// `justification` NUL-terminated strings and `out_revision` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qe_store_contest(
    store: *mut QeStore,
    edit_json: *const c_char,
    justification: *const c_char,
    out_revision: *mut u64,
) -> QeStatus {
    guard(|| {
        let store = store.as_mut().ok_or_else(|| Failure::new(QeStatus::NullArgument, "store is null"))?;
        let edit: ContestEdit = json(text(edit_json, "edit")?, "edit")?;
        let entry = store.0.apply(edit, text(justification, "justification")?)?;
        write(out_revision, entry.revision)
    })
}

/// # Safety
/// `store` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qe_store_free(store: *mut QeStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}
