//! C ABI over the q2d metrics, prompt rendering and filter primitives.
//!
//! Conventions:
//! - Every fallible function returns a [`Q2dStatus`] and writes its result
//!   through an out-pointer. On failure [`q2d_last_error`] describes the
//!   problem; the message belongs to the calling thread and stays valid until
//!   that thread's next call into this library.
//! - Strings in are NUL-terminated UTF-8. Strings out are owned by the caller
//!   and released with [`q2d_string_free`].
//! - Handles are opaque and released with their `*_free` function; passing
//!   NULL to a `*_free` function is a no-op.
//! - Panics never cross the boundary; they surface as `Q2D_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use q2d_core::corpus::{Dialog, FilterKind, FilterScores};
use q2d_core::eval::{recall_at_10, SearchResultPage};
use q2d_core::filter::{apply_filters, FilterConfig, LeakScope};
use q2d_core::llm::PromptSet;
use q2d_core::scoring::{BuiltinEmbedder, Embedder};
use q2d_core::textmetrics::{contains_overlap, rouge1_recall};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Q2dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Panic = 6,
}

/// Bits of [`Q2dVerdict::failed_mask`].
pub const Q2D_FAIL_INTENT: u32 = 1;
pub const Q2D_FAIL_ANSWER_LEAK: u32 = 1 << 1;
pub const Q2D_FAIL_LAST_TURN: u32 = 1 << 2;
pub const Q2D_FAIL_NLI: u32 = 1 << 3;

/// Values of [`Q2dFilterConfig::leak_scope`].
pub const Q2D_LEAK_ALL_TURNS: u32 = 0;
pub const Q2D_LEAK_ASSISTANT_TURNS: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Q2dFilterConfig {
    pub t_query: f64,
    pub t_answer: f64,
    pub t_last_turn: f64,
    pub nli_enabled: bool,
    pub t_nli: f64,
    /// `Q2D_LEAK_ALL_TURNS` or `Q2D_LEAK_ASSISTANT_TURNS`.
    pub leak_scope: u32,
}

/// Precomputed filter scores. `nli_intent` is NaN when absent.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Q2dFilterScores {
    pub intent_similarity: f64,
    pub answer_leak: f64,
    pub last_turn_similarity: f64,
    pub nli_intent: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Q2dVerdict {
    pub retained: bool,
    pub failed_mask: u32,
}

/// Opaque embedder handle.
pub struct Q2dEmbedder {
    inner: Box<dyn Embedder>,
}

/// Opaque prompt-set handle.
pub struct Q2dPromptSet {
    inner: PromptSet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', "\\0");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("NULs escaped"));
}

struct Fail(Q2dStatus, String);

type FfiResult<T> = Result<T, Fail>;

impl From<q2d_core::Error> for Fail {
    fn from(e: q2d_core::Error) -> Self {
        use q2d_core::Error as E;
        let status = match &e {
            E::Io { .. } => Q2dStatus::Io,
            E::Record { .. } | E::DialogParse { .. } => Q2dStatus::Parse,
            _ => Q2dStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> Q2dStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Q2dStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            Q2dStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Fail(Q2dStatus::NullPointer, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(Q2dStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Fail(Q2dStatus::NullPointer, format!("{name} is NULL")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| Fail(Q2dStatus::NullPointer, format!("{name} is NULL")))
}

fn into_c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(Q2dStatus::InvalidArgument, "result contains a NUL byte".into()))
}

/// Message for the last failed call on this thread ("" after a success).
#[no_mangle]
pub extern "C" fn q2d_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn q2d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a pointer obtained from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn q2d_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Rouge-1 recall of `candidate` against `reference`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn q2d_rouge1_recall(
    reference: *const c_char,
    candidate: *const c_char,
    out: *mut f64,
) -> Q2dStatus {
    guard(|| {
        let r = str_arg(reference, "reference")?;
        let c = str_arg(candidate, "candidate")?;
        *out_arg(out, "out")? = rouge1_recall(r, c);
        Ok(())
    })
}

/// Fraction of `needle` tokens found in `haystack` (the answer-leak score).
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn q2d_contains_overlap(
    haystack: *const c_char,
    needle: *const c_char,
    out: *mut f64,
) -> Q2dStatus {
    guard(|| {
        let h = str_arg(haystack, "haystack")?;
        let n = str_arg(needle, "needle")?;
        *out_arg(out, "out")? = contains_overlap(h, n);
        Ok(())
    })
}

/// The dependency-free hashed bag-of-words embedder.
#[no_mangle]
pub extern "C" fn q2d_embedder_builtin_new() -> *mut Q2dEmbedder {
    Box::into_raw(Box::new(Q2dEmbedder {
        inner: Box::new(BuiltinEmbedder),
    }))
}

/// # Safety
/// `h` must be NULL or a live handle from [`q2d_embedder_builtin_new`].
#[no_mangle]
pub unsafe extern "C" fn q2d_embedder_free(h: *mut Q2dEmbedder) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Cosine similarity of the embeddings of `a` and `b`.
///
/// # Safety
/// `h` must be a live handle; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn q2d_embedder_similarity(
    h: *const Q2dEmbedder,
    a: *const c_char,
    b: *const c_char,
    out: *mut f64,
) -> Q2dStatus {
    guard(|| {
        let h = ref_arg(h, "embedder")?;
        let (a, b) = (str_arg(a, "a")?, str_arg(b, "b")?);
        *out_arg(out, "out")? = h.inner.similarity(a, b)?;
        Ok(())
    })
}

/// Parses a prompt set from JSON text into `*out`.
///
/// # Safety
/// `json` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn q2d_prompt_set_from_json(json: *const c_char, out: *mut *mut Q2dPromptSet) -> Q2dStatus {
    guard(|| {
        let inner = PromptSet::from_json(str_arg(json, "json")?)?;
        *out_arg(out, "out")? = Box::into_raw(Box::new(Q2dPromptSet { inner }));
        Ok(())
    })
}

/// Loads a prompt set from a JSON file into `*out`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn q2d_prompt_set_load(path: *const c_char, out: *mut *mut Q2dPromptSet) -> Q2dStatus {
    guard(|| {
        let inner = PromptSet::load(str_arg(path, "path")?)?;
        *out_arg(out, "out")? = Box::into_raw(Box::new(Q2dPromptSet { inner }));
        Ok(())
    })
}

/// # Safety
/// `h` must be NULL or a live prompt-set handle.
#[no_mangle]
pub unsafe extern "C" fn q2d_prompt_set_free(h: *mut Q2dPromptSet) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Renders the question → dialog prompt. Free `*out` with [`q2d_string_free`].
///
/// # Safety
/// `h` must be a live handle; `question` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn q2d_prompt_set_render_forward(
    h: *const Q2dPromptSet,
    question: *const c_char,
    out: *mut *mut c_char,
) -> Q2dStatus {
    guard(|| {
        let h = ref_arg(h, "prompt set")?;
        let q = str_arg(question, "question")?;
        *out_arg(out, "out")? = into_c_string(h.inner.render_forward(q))?;
        Ok(())
    })
}

/// Renders the dialog → question prompt. `dialog_json` is a JSON array of
/// `{"role": "user"|"assistant", "text": ...}` turns.
///
/// # Safety
/// `h` must be a live handle; `dialog_json` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn q2d_prompt_set_render_reverse(
    h: *const Q2dPromptSet,
    dialog_json: *const c_char,
    out: *mut *mut c_char,
) -> Q2dStatus {
    guard(|| {
        let h = ref_arg(h, "prompt set")?;
        let dialog: Dialog = serde_json::from_str(str_arg(dialog_json, "dialog_json")?)
            .map_err(|e| Fail(Q2dStatus::Parse, format!("dialog_json: {e}")))?;
        dialog.validate()?;
        *out_arg(out, "out")? = into_c_string(h.inner.render_reverse(&dialog))?;
        Ok(())
    })
}

impl From<&FilterConfig> for Q2dFilterConfig {
    fn from(c: &FilterConfig) -> Self {
        Q2dFilterConfig {
            t_query: c.t_query,
            t_answer: c.t_answer,
            t_last_turn: c.t_last_turn,
            nli_enabled: c.nli_enabled,
            t_nli: c.t_nli,
            leak_scope: match c.leak_scope {
                LeakScope::AllTurns => Q2D_LEAK_ALL_TURNS,
                LeakScope::AssistantTurns => Q2D_LEAK_ASSISTANT_TURNS,
            },
        }
    }
}

impl Q2dFilterConfig {
    fn to_core(self) -> FfiResult<FilterConfig> {
        let c = self;
        let leak_scope = match c.leak_scope {
            Q2D_LEAK_ALL_TURNS => LeakScope::AllTurns,
            Q2D_LEAK_ASSISTANT_TURNS => LeakScope::AssistantTurns,
            other => return Err(Fail(Q2dStatus::InvalidArgument, format!("unknown leak_scope {other}"))),
        };
        let cfg = FilterConfig {
            t_query: c.t_query,
            t_answer: c.t_answer,
            t_last_turn: c.t_last_turn,
            nli_enabled: c.nli_enabled,
            t_nli: c.t_nli,
            leak_scope,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Writes the default filter thresholds into `*out`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn q2d_filter_config_default(out: *mut Q2dFilterConfig) -> Q2dStatus {
    guard(|| {
        *out_arg(out, "out")? = (&FilterConfig::default()).into();
        Ok(())
    })
}

/// Applies the filter cascade to precomputed scores.
///
/// # Safety
/// `cfg` and `scores` must be readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn q2d_filter_apply(
    cfg: *const Q2dFilterConfig,
    scores: *const Q2dFilterScores,
    out: *mut Q2dVerdict,
) -> Q2dStatus {
    guard(|| {
        let cfg = (*ref_arg(cfg, "cfg")?).to_core()?;
        let s = ref_arg(scores, "scores")?;
        let scores = FilterScores {
            intent_similarity: s.intent_similarity,
            answer_leak: s.answer_leak,
            last_turn_similarity: s.last_turn_similarity,
            nli_intent: (!s.nli_intent.is_nan()).then_some(s.nli_intent),
        };
        scores.check_ranges()?;
        let v = apply_filters(&scores, &cfg);
        let failed_mask = v.failed_filters.iter().fold(0, |m, f| {
            m | match f {
                FilterKind::Intent => Q2D_FAIL_INTENT,
                FilterKind::AnswerLeak => Q2D_FAIL_ANSWER_LEAK,
                FilterKind::LastTurn => Q2D_FAIL_LAST_TURN,
                FilterKind::Nli => Q2D_FAIL_NLI,
                FilterKind::ParseError => 0,
            }
        });
        *out_arg(out, "out")? = Q2dVerdict {
            retained: v.retained,
            failed_mask,
        };
        Ok(())
    })
}

unsafe fn url_list(urls: *const *const c_char, n: usize, name: &str) -> FfiResult<Vec<String>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if urls.is_null() {
        return Err(Fail(Q2dStatus::NullPointer, format!("{name} is NULL")));
    }
    std::slice::from_raw_parts(urls, n)
        .iter()
        .enumerate()
        .map(|(i, &u)| str_arg(u, &format!("{name}[{i}]")).map(str::to_string))
        .collect()
}

/// Recall@10 of the predicted result URLs against the gold ones, after URL
/// normalization and de-duplication (first ten kept). Writes NaN when the
/// gold list is empty.
///
/// # Safety
/// `gold` / `pred` must point to `n_gold` / `n_pred` NUL-terminated strings
/// (either may be NULL when its count is 0); `out` writable.
#[no_mangle]
pub unsafe extern "C" fn q2d_recall_at_10(
    gold: *const *const c_char,
    n_gold: usize,
    pred: *const *const c_char,
    n_pred: usize,
    out: *mut f64,
) -> Q2dStatus {
    guard(|| {
        let g = SearchResultPage::new("", url_list(gold, n_gold, "gold")?);
        let p = SearchResultPage::new("", url_list(pred, n_pred, "pred")?);
        *out_arg(out, "out")? = recall_at_10(&g, &p).unwrap_or(f64::NAN);
        Ok(())
    })
}
