//! C ABI over the quarry metric suite.
//!
//! The binding surface is deliberately small and pure: build a corpus of
//! query strings behind an opaque handle, compute the diversity metrics on
//! it, and evaluate delta/ratio helpers. Functions return a [`QuarryStatus`]
//! code; on failure a thread-local message is retrievable once via
//! [`quarry_last_error_message`].
//!
//! Ownership rules:
//! - handles from `quarry_corpus_new` are freed with `quarry_corpus_free`;
//! - strings returned by `quarry_last_error_message` are freed with
//!   `quarry_string_free`;
//! - `quarry_version` returns a static string that must not be freed.

use libc::{c_char, size_t};
use quarry_core::gateway::embed::HashEmbedder;
use quarry_core::metrics::{
    cost_ratio, delta_percent, distinct_n, format_ratio, mean_pairwise_cosine_distance, mtld,
    Corpus, MTLD_TTR_THRESHOLD, PAIRWISE_SUBSAMPLE_CAP,
};
use std::cell::RefCell;
use std::ffi::{CStr, CString};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuarryStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ComputeFailed = 4,
    BufferTooSmall = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl std::fmt::Display) {
    let rendered = CString::new(message.to_string())
        .unwrap_or_else(|_| CString::new("error message contained NUL").expect("static"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(rendered));
}

fn fail(status: QuarryStatus, message: impl std::fmt::Display) -> QuarryStatus {
    set_error(message);
    status
}

/// An opaque, growable collection of query strings.
pub struct QuarryCorpus {
    queries: Vec<String>,
}

/// Create an empty corpus. Free with [`quarry_corpus_free`].
#[no_mangle]
pub extern "C" fn quarry_corpus_new() -> *mut QuarryCorpus {
    Box::into_raw(Box::new(QuarryCorpus {
        queries: Vec::new(),
    }))
}

/// Free a corpus handle. NULL is a no-op.
///
/// # Safety
/// `corpus` must be a pointer returned by [`quarry_corpus_new`] that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn quarry_corpus_free(corpus: *mut QuarryCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Append one UTF-8 query string to the corpus.
///
/// # Safety
/// `corpus` must be a live handle and `query` a NUL-terminated string valid
/// for the duration of the call; the string is copied.
#[no_mangle]
pub unsafe extern "C" fn quarry_corpus_add_query(
    corpus: *mut QuarryCorpus,
    query: *const c_char,
) -> QuarryStatus {
    let Some(corpus) = corpus.as_mut() else {
        return fail(QuarryStatus::NullPointer, "corpus is NULL");
    };
    if query.is_null() {
        return fail(QuarryStatus::NullPointer, "query is NULL");
    }
    match CStr::from_ptr(query).to_str() {
        Ok(text) => {
            corpus.queries.push(text.to_owned());
            QuarryStatus::Ok
        }
        Err(e) => fail(QuarryStatus::InvalidUtf8, e),
    }
}

/// Number of queries currently in the corpus; 0 for NULL.
///
/// # Safety
/// `corpus` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn quarry_corpus_len(corpus: *const QuarryCorpus) -> size_t {
    corpus.as_ref().map_or(0, |c| c.queries.len())
}

unsafe fn with_corpus<F>(
    corpus: *const QuarryCorpus,
    out: *mut f64,
    compute: F,
) -> QuarryStatus
where
    F: FnOnce(&Corpus) -> Result<f64, quarry_core::Error>,
{
    let Some(corpus) = corpus.as_ref() else {
        return fail(QuarryStatus::NullPointer, "corpus is NULL");
    };
    if out.is_null() {
        return fail(QuarryStatus::NullPointer, "out is NULL");
    }
    match compute(&Corpus::new(corpus.queries.clone())) {
        Ok(value) => {
            *out = value;
            QuarryStatus::Ok
        }
        Err(e) => fail(QuarryStatus::ComputeFailed, e),
    }
}

/// Distinct-n: unique n-grams over total n-gram occurrences, pooled across
/// queries without crossing query boundaries. `n` must be 1, 2, or 3.
///
/// # Safety
/// `corpus` must be a live handle; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn quarry_corpus_distinct_n(
    corpus: *const QuarryCorpus,
    n: u32,
    out: *mut f64,
) -> QuarryStatus {
    if !(1..=3).contains(&n) {
        return fail(QuarryStatus::InvalidArgument, format!("n must be 1..=3, got {n}"));
    }
    with_corpus(corpus, out, |c| distinct_n(c, n as usize))
}

/// Bidirectional MTLD of the corpus token stream. Pass `ttr_threshold <= 0`
/// for the default of 0.72.
///
/// # Safety
/// `corpus` must be a live handle; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn quarry_corpus_mtld(
    corpus: *const QuarryCorpus,
    ttr_threshold: f64,
    out: *mut f64,
) -> QuarryStatus {
    let threshold = if ttr_threshold <= 0.0 {
        MTLD_TTR_THRESHOLD
    } else {
        ttr_threshold
    };
    with_corpus(corpus, out, |c| mtld(c, threshold))
}

/// One minus the mean pairwise cosine similarity under the deterministic
/// hash embedder. Pass `dimension = 0` for the default of 256. Needs at
/// least two queries.
///
/// # Safety
/// `corpus` must be a live handle; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn quarry_corpus_cosine_diversity(
    corpus: *const QuarryCorpus,
    dimension: size_t,
    out: *mut f64,
) -> QuarryStatus {
    let dim = if dimension == 0 { 256 } else { dimension };
    with_corpus(corpus, out, |c| {
        mean_pairwise_cosine_distance(c, &HashEmbedder::new(dim), PAIRWISE_SUBSAMPLE_CAP, 0)
    })
}

/// Signed percent change of `value` against `baseline`. Fails on a zero
/// baseline.
///
/// # Safety
/// `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn quarry_delta_percent(
    value: f64,
    baseline: f64,
    out: *mut f64,
) -> QuarryStatus {
    if out.is_null() {
        return fail(QuarryStatus::NullPointer, "out is NULL");
    }
    match delta_percent(value, baseline) {
        Ok(v) => {
            *out = v;
            QuarryStatus::Ok
        }
        Err(e) => fail(QuarryStatus::ComputeFailed, e),
    }
}

/// Render `method_tokens / reference_tokens` in the `x1.3` style into `buf`
/// (NUL-terminated). Fails with `BUFFER_TOO_SMALL` when `buf_len` cannot
/// hold the rendering.
///
/// # Safety
/// `buf` must point to at least `buf_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn quarry_format_cost_ratio(
    method_tokens: f64,
    reference_tokens: f64,
    buf: *mut c_char,
    buf_len: size_t,
) -> QuarryStatus {
    if buf.is_null() {
        return fail(QuarryStatus::NullPointer, "buf is NULL");
    }
    let ratio = match cost_ratio(method_tokens, reference_tokens) {
        Ok(r) => r,
        Err(e) => return fail(QuarryStatus::ComputeFailed, e),
    };
    let rendered = format_ratio(ratio);
    let bytes = rendered.as_bytes();
    if buf_len < bytes.len() + 1 {
        return fail(
            QuarryStatus::BufferTooSmall,
            format!("need {} bytes, got {buf_len}", bytes.len() + 1),
        );
    }
    std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast(), bytes.len());
    *buf.add(bytes.len()) = 0;
    QuarryStatus::Ok
}

/// Take the last error message for this thread, or NULL when none is
/// pending. Free the result with [`quarry_string_free`].
#[no_mangle]
pub extern "C" fn quarry_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match slot.borrow_mut().take() {
        Some(message) => message.into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Free a string returned by [`quarry_last_error_message`].
///
/// # Safety
/// `s` must be a pointer previously returned by this library's string-
/// returning functions, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn quarry_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static NUL-terminated string; do not free.
#[no_mangle]
pub extern "C" fn quarry_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
