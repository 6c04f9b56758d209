//! C ABI for the fairdiet toolkit.
//!
//! Exposes the gender lexicon (detection and counterfactual flipping) and
//! the fairness metrics over plain arrays, behind opaque handles and error
//! codes. Strings returned by this library must be released with
//! `fd_string_free`, lexicon handles with `fd_lexicon_free`. Error details
//! for the most recent failing call on the current thread are available
//! via `fd_last_error_message`.
//!
//! The header is generated into `include/fairdiet.h` at build time.

use fairdiet::faireval;
use fairdiet::lexicon::{contains_gender_words, flip_gender, GenderLexicon};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status code returned by fallible functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdStatus {
    FdOk = 0,
    FdNullPointer = 1,
    FdInvalidUtf8 = 2,
    FdParseError = 3,
    FdInvalidInput = 4,
    FdUndefinedMetric = 5,
    FdIoError = 6,
    FdPanic = 7,
}

/// Opaque lexicon handle.
pub struct FdLexicon {
    inner: GenderLexicon,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("error message unavailable").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn status_of(err: &fairdiet::Error) -> FdStatus {
    use fairdiet::Error as E;
    match err {
        E::LexiconParse { .. }
        | E::DuplicateMapping { .. }
        | E::TemplateParse { .. }
        | E::SnapshotParse { .. } => FdStatus::FdParseError,
        E::UndefinedMetric { .. } => FdStatus::FdUndefinedMetric,
        E::Io(_) | E::IoPath { .. } => FdStatus::FdIoError,
        _ => FdStatus::FdInvalidInput,
    }
}

fn fail(err: &fairdiet::Error) -> FdStatus {
    set_error(err.to_string());
    status_of(err)
}

fn guard<F: FnOnce() -> FdStatus>(f: F) -> FdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".to_string());
            FdStatus::FdPanic
        }
    }
}

unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, FdStatus> {
    if ptr.is_null() {
        set_error("null string argument".to_string());
        return Err(FdStatus::FdNullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8".to_string());
        FdStatus::FdInvalidUtf8
    })
}

/// Message for the most recent failing call on this thread, or null.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |msg| msg.as_ptr())
    })
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn fd_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// The built-in lexicon. Never fails; free with `fd_lexicon_free`.
#[no_mangle]
pub extern "C" fn fd_lexicon_default() -> *mut FdLexicon {
    Box::into_raw(Box::new(FdLexicon {
        inner: GenderLexicon::default_builtin().clone(),
    }))
}

/// Load a lexicon file (UTF-8 path). On success stores a handle in `out`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn fd_lexicon_load(path: *const c_char, out: *mut *mut FdLexicon) -> FdStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer".to_string());
            return FdStatus::FdNullPointer;
        }
        let path = match utf8_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match GenderLexicon::load(path) {
            Ok(lexicon) => {
                *out = Box::into_raw(Box::new(FdLexicon { inner: lexicon }));
                FdStatus::FdOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a lexicon handle. Null is ignored.
///
/// # Safety
/// `lexicon` must have been produced by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn fd_lexicon_free(lexicon: *mut FdLexicon) {
    if !lexicon.is_null() {
        drop(Box::from_raw(lexicon));
    }
}

/// Flip every gender word in `text`; stores a newly allocated string in
/// `out` (free with `fd_string_free`).
///
/// # Safety
/// `lexicon` must be a live handle; `text` a valid NUL-terminated string;
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fd_flip_gender(
    lexicon: *const FdLexicon,
    text: *const c_char,
    out: *mut *mut c_char,
) -> FdStatus {
    guard(|| {
        if lexicon.is_null() || out.is_null() {
            set_error("null lexicon or output pointer".to_string());
            return FdStatus::FdNullPointer;
        }
        let text = match utf8_arg(text) {
            Ok(t) => t,
            Err(status) => return status,
        };
        let flipped = flip_gender(text, &(*lexicon).inner);
        match CString::new(flipped) {
            Ok(c) => {
                *out = c.into_raw();
                FdStatus::FdOk
            }
            Err(_) => {
                set_error("flipped text contains an interior NUL".to_string());
                FdStatus::FdInvalidInput
            }
        }
    })
}

/// True iff at least one token of `text` matches the lexicon.
///
/// # Safety
/// Same contracts as `fd_flip_gender`.
#[no_mangle]
pub unsafe extern "C" fn fd_contains_gender_words(
    lexicon: *const FdLexicon,
    text: *const c_char,
    out: *mut bool,
) -> FdStatus {
    guard(|| {
        if lexicon.is_null() || out.is_null() {
            set_error("null lexicon or output pointer".to_string());
            return FdStatus::FdNullPointer;
        }
        let text = match utf8_arg(text) {
            Ok(t) => t,
            Err(status) => return status,
        };
        *out = contains_gender_words(text, &(*lexicon).inner);
        FdStatus::FdOk
    })
}

/// Release a string allocated by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize) -> Result<&'a [T], FdStatus> {
    if ptr.is_null() {
        set_error("null array argument".to_string());
        return Err(FdStatus::FdNullPointer);
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn bools(bytes: &[u8]) -> Vec<bool> {
    bytes.iter().map(|&b| b != 0).collect()
}

/// DP = 1 - |P(pred=1 | z=1) - P(pred=1 | z=0)| over two equal-length
/// 0/1 prediction arrays.
///
/// # Safety
/// `pred_z1` and `pred_z0` must point to `len` readable bytes; `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fd_demographic_parity(
    pred_z1: *const u8,
    pred_z0: *const u8,
    len: usize,
    out: *mut f64,
) -> FdStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer".to_string());
            return FdStatus::FdNullPointer;
        }
        let (z1, z0) = match (slice_arg(pred_z1, len), slice_arg(pred_z0, len)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match faireval::demographic_parity(&bools(z1), &bools(z0)) {
            Ok(v) => {
                *out = v;
                FdStatus::FdOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Equality of opportunity conditioned on y = `conditioned_label` (0 or 1).
///
/// # Safety
/// All arrays must point to `len` readable bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fd_eq_opp(
    pred_z1: *const u8,
    pred_z0: *const u8,
    labels: *const u8,
    len: usize,
    conditioned_label: u8,
    out: *mut f64,
) -> FdStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer".to_string());
            return FdStatus::FdNullPointer;
        }
        let (z1, z0, y) = match (
            slice_arg(pred_z1, len),
            slice_arg(pred_z0, len),
            slice_arg(labels, len),
        ) {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            (Err(s), _, _) | (_, Err(s), _) | (_, _, Err(s)) => return s,
        };
        match faireval::eq_opp(&bools(z1), &bools(z0), y, conditioned_label) {
            Ok(v) => {
                *out = v;
                FdStatus::FdOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// EqOdd = 0.5 * (EqOpp1 + EqOpp0); pure arithmetic, never fails.
#[no_mangle]
pub extern "C" fn fd_eq_odd(eq_opp1: f64, eq_opp0: f64) -> f64 {
    faireval::eq_odd(eq_opp1, eq_opp0)
}

/// AUC in the Mann-Whitney form (ties count one half) over scores and 0/1
/// labels. Fails with `FdUndefinedMetric` unless both classes are present.
///
/// # Safety
/// `scores` must point to `len` readable doubles, `labels` to `len`
/// readable bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fd_auc(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    out: *mut f64,
) -> FdStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer".to_string());
            return FdStatus::FdNullPointer;
        }
        let (s, y) = match (slice_arg(scores, len), slice_arg(labels, len)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return e,
        };
        match faireval::auc(s, y) {
            Ok(v) => {
                *out = v;
                FdStatus::FdOk
            }
            Err(e) => fail(&e),
        }
    })
}
