//! C ABI over the icl-lab core: opaque handles, status codes, and a
//! thread-local last-error message. The header `include/icl_lab.h` is
//! generated by cbindgen at build time.
//!
//! Ownership rules: every `*_new`/`*_generate`/`*_load`/`*_parse` output is
//! owned by the caller and released with the matching `*_free`; strings
//! returned as `char*` are released with `icl_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use icl_lab::assumptions::{generate_compliant_hmm, AnchorMode, HmmSpec};
use icl_lab::hmm::{
    build_prompt, forward_likelihood, log_forward_likelihood, operator_likelihood,
    DemoLengthPolicy,
};
use icl_lab::operator::{MomentEstimator, SigmaCache};
use icl_lab::predict::{
    bayes_predict, kernel_predict, prediction_similarity, NormalizationDomain,
};
use icl_lab::Error;

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IclStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    ParseError = 5,
    UnlabelableInput = 6,
    ImpossibleInput = 7,
    DegenerateKernelMass = 8,
    EnumerationCap = 9,
    SingularMatrix = 10,
    NonCompliant = 11,
    BufferTooSmall = 12,
    Internal = 13,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> IclStatus {
    match err {
        Error::Validation(_) | Error::NotADistribution { .. } | Error::InfeasibleSpec(_)
        | Error::Config { .. } | Error::DistinguishabilityViolated { .. }
        | Error::DeviationViolated { .. } => IclStatus::InvalidArgument,
        Error::EnumerationCap { .. } => IclStatus::EnumerationCap,
        Error::SingularMatrix { .. } => IclStatus::SingularMatrix,
        Error::UnlabelableInput => IclStatus::UnlabelableInput,
        Error::ImpossiblePrompt | Error::ImpossibleInput => IclStatus::ImpossibleInput,
        Error::DegenerateKernelMass { .. } => IclStatus::DegenerateKernelMass,
        Error::NonCompliant { .. } => IclStatus::NonCompliant,
        Error::TextFormat { .. } => IclStatus::ParseError,
        Error::Io { .. } => IclStatus::Io,
    }
}

fn fail(err: Error) -> IclStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

/// Opaque HMM handle.
pub struct IclHmm(icl_lab::Hmm);

/// Opaque prompt handle.
pub struct IclPrompt(icl_lab::IclPrompt);

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn icl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent error on this thread, or an empty string.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn icl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(c) => c.as_ptr(),
        None => b"\0".as_ptr() as *const c_char,
    })
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must have been returned by an icl-lab function and not freed before.
#[no_mangle]
pub unsafe extern "C" fn icl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn cstr<'a>(p: *const c_char) -> Result<&'a str, IclStatus> {
    if p.is_null() {
        set_error("null string pointer");
        return Err(IclStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string is not valid UTF-8");
        IclStatus::InvalidUtf8
    })
}

unsafe fn tokens_from<'a>(ptr: *const u32, len: usize) -> Result<Vec<usize>, IclStatus> {
    if ptr.is_null() && len > 0 {
        set_error("null token pointer");
        return Err(IclStatus::NullPointer);
    }
    let slice = if len == 0 { &[][..] } else { std::slice::from_raw_parts(ptr, len) };
    Ok(slice.iter().map(|&t| t as usize).collect())
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

macro_rules! try_core {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => return fail(err),
        }
    };
}

unsafe fn hmm_ref<'a>(h: *const IclHmm) -> Result<&'a icl_lab::Hmm, IclStatus> {
    if h.is_null() {
        set_error("null hmm handle");
        return Err(IclStatus::NullPointer);
    }
    Ok(&(*h).0)
}

// ---------------------------------------------------------------------------
// HMM lifecycle
// ---------------------------------------------------------------------------

/// Generate an assumption-compliant HMM.
/// `shared_anchors` nonzero keeps the anchor pool shared across tasks
/// (finite task distinguishability); zero gives each task a private anchor.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icl_hmm_generate(
    num_tasks: usize,
    d_per_task: usize,
    m: usize,
    epsilon_r_target: f64,
    epsilon_d_target: f64,
    separation_target: f64,
    num_labels: usize,
    label_margin: f64,
    shared_anchors: i32,
    seed: u64,
    out: *mut *mut IclHmm,
) -> IclStatus {
    if out.is_null() {
        set_error("null output pointer");
        return IclStatus::NullPointer;
    }
    let spec = HmmSpec {
        num_tasks,
        d_per_task,
        m,
        epsilon_r_target,
        epsilon_d_target,
        separation_target,
        num_labels,
        label_margin,
        anchor_mode: if shared_anchors != 0 { AnchorMode::Shared } else { AnchorMode::Dedicated },
        ..HmmSpec::default()
    };
    let hmm = try_core!(generate_compliant_hmm(&spec, seed));
    *out = Box::into_raw(Box::new(IclHmm(hmm)));
    IclStatus::Ok
}

/// Load an HMM from the structured text format.
///
/// # Safety
/// `path` must be a valid NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icl_hmm_load(path: *const c_char, out: *mut *mut IclHmm) -> IclStatus {
    if out.is_null() {
        set_error("null output pointer");
        return IclStatus::NullPointer;
    }
    let path = try_ffi!(cstr(path));
    let hmm = try_core!(icl_lab::textfmt::load_hmm(Path::new(path)));
    *out = Box::into_raw(Box::new(IclHmm(hmm)));
    IclStatus::Ok
}

/// Parse an HMM from in-memory text.
///
/// # Safety
/// `text` must be a valid NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icl_hmm_parse(text: *const c_char, out: *mut *mut IclHmm) -> IclStatus {
    if out.is_null() {
        set_error("null output pointer");
        return IclStatus::NullPointer;
    }
    let text = try_ffi!(cstr(text));
    let hmm = try_core!(icl_lab::textfmt::hmm_from_str("<memory>", text));
    *out = Box::into_raw(Box::new(IclHmm(hmm)));
    IclStatus::Ok
}

/// Write an HMM to a file in the structured text format.
///
/// # Safety
/// `hmm` must be a live handle and `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn icl_hmm_save(hmm: *const IclHmm, path: *const c_char) -> IclStatus {
    let hmm = try_ffi!(hmm_ref(hmm));
    let path = try_ffi!(cstr(path));
    try_core!(icl_lab::textfmt::save_hmm(Path::new(path), hmm));
    IclStatus::Ok
}

/// Serialize an HMM to a newly-allocated string (free with icl_string_free).
///
/// # Safety
/// `hmm` must be a live handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icl_hmm_to_text(hmm: *const IclHmm, out: *mut *mut c_char) -> IclStatus {
    let hmm = try_ffi!(hmm_ref(hmm));
    if out.is_null() {
        set_error("null output pointer");
        return IclStatus::NullPointer;
    }
    let text = icl_lab::textfmt::hmm_to_string(hmm);
    match CString::new(text) {
        Ok(c) => {
            *out = c.into_raw();
            IclStatus::Ok
        }
        Err(_) => {
            set_error("serialized text contained NUL");
            IclStatus::Internal
        }
    }
}

/// Release an HMM handle.
///
/// # Safety
/// `hmm` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn icl_hmm_free(hmm: *mut IclHmm) {
    if !hmm.is_null() {
        drop(Box::from_raw(hmm));
    }
}

#[no_mangle]
pub unsafe extern "C" fn icl_hmm_num_states(hmm: *const IclHmm) -> usize {
    hmm_ref(hmm).map(|h| h.num_states()).unwrap_or(0)
}

#[no_mangle]
pub unsafe extern "C" fn icl_hmm_num_obs(hmm: *const IclHmm) -> usize {
    hmm_ref(hmm).map(|h| h.num_obs()).unwrap_or(0)
}

#[no_mangle]
pub unsafe extern "C" fn icl_hmm_num_tasks(hmm: *const IclHmm) -> usize {
    hmm_ref(hmm).map(|h| h.num_tasks()).unwrap_or(0)
}

#[no_mangle]
pub unsafe extern "C" fn icl_hmm_delimiter(hmm: *const IclHmm) -> u32 {
    hmm_ref(hmm).map(|h| h.delimiter() as u32).unwrap_or(u32::MAX)
}

/// Copy the label set into `buf`; `written` receives the label count.
/// Fails with BufferTooSmall when `cap` is insufficient.
///
/// # Safety
/// Pointers must be valid for the stated capacities.
#[no_mangle]
pub unsafe extern "C" fn icl_hmm_label_set(
    hmm: *const IclHmm,
    buf: *mut u32,
    cap: usize,
    written: *mut usize,
) -> IclStatus {
    let hmm = try_ffi!(hmm_ref(hmm));
    if buf.is_null() || written.is_null() {
        set_error("null buffer pointer");
        return IclStatus::NullPointer;
    }
    let labels = hmm.label_set();
    *written = labels.len();
    if cap < labels.len() {
        set_error("label buffer too small");
        return IclStatus::BufferTooSmall;
    }
    for (i, &y) in labels.iter().enumerate() {
        *buf.add(i) = y as u32;
    }
    IclStatus::Ok
}

// ---------------------------------------------------------------------------
// Likelihoods and similarity
// ---------------------------------------------------------------------------

/// P(tokens | p_pre-train) by the forward recursion.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn icl_forward_likelihood(
    hmm: *const IclHmm,
    tokens: *const u32,
    len: usize,
    out: *mut f64,
) -> IclStatus {
    let hmm = try_ffi!(hmm_ref(hmm));
    let seq = try_ffi!(tokens_from(tokens, len));
    if out.is_null() {
        set_error("null output pointer");
        return IclStatus::NullPointer;
    }
    *out = try_core!(forward_likelihood(hmm, hmm.pretrain_init(), &seq));
    IclStatus::Ok
}

/// P(tokens | p_pre-train) by observable-operator products.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn icl_operator_likelihood(
    hmm: *const IclHmm,
    tokens: *const u32,
    len: usize,
    out: *mut f64,
) -> IclStatus {
    let hmm = try_ffi!(hmm_ref(hmm));
    let seq = try_ffi!(tokens_from(tokens, len));
    if out.is_null() {
        set_error("null output pointer");
        return IclStatus::NullPointer;
    }
    *out = try_core!(operator_likelihood(hmm, hmm.pretrain_init(), &seq));
    IclStatus::Ok
}

/// ln P(tokens | p_pre-train); -inf for impossible sequences.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn icl_log_likelihood(
    hmm: *const IclHmm,
    tokens: *const u32,
    len: usize,
    out: *mut f64,
) -> IclStatus {
    let hmm = try_ffi!(hmm_ref(hmm));
    let seq = try_ffi!(tokens_from(tokens, len));
    if out.is_null() {
        set_error("null output pointer");
        return IclStatus::NullPointer;
    }
    *out = try_core!(log_forward_likelihood(hmm, hmm.pretrain_init(), &seq));
    IclStatus::Ok
}

/// Dot product of the two inputs' next-token predictive distributions.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn icl_prediction_similarity(
    hmm: *const IclHmm,
    a: *const u32,
    a_len: usize,
    b: *const u32,
    b_len: usize,
    out: *mut f64,
) -> IclStatus {
    let hmm = try_ffi!(hmm_ref(hmm));
    let sa = try_ffi!(tokens_from(a, a_len));
    let sb = try_ffi!(tokens_from(b, b_len));
    if out.is_null() {
        set_error("null output pointer");
        return IclStatus::NullPointer;
    }
    *out = try_core!(prediction_similarity(hmm, &sa, &sb));
    IclStatus::Ok
}

// ---------------------------------------------------------------------------
// Prompts and predictors
// ---------------------------------------------------------------------------

/// Sample an in-context prompt: n demonstrations of fixed length plus a
/// test input, all from `task`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icl_build_prompt(
    hmm: *const IclHmm,
    task: usize,
    n: usize,
    demo_length: usize,
    seed: u64,
    out: *mut *mut IclPrompt,
) -> IclStatus {
    let hmm = try_ffi!(hmm_ref(hmm));
    if out.is_null() {
        set_error("null output pointer");
        return IclStatus::NullPointer;
    }
    let prompt = try_core!(build_prompt(
        hmm,
        task,
        n,
        DemoLengthPolicy::Fixed { length: demo_length },
        seed
    ));
    *out = Box::into_raw(Box::new(IclPrompt(prompt)));
    IclStatus::Ok
}

/// Release a prompt handle.
///
/// # Safety
/// `prompt` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn icl_prompt_free(prompt: *mut IclPrompt) {
    if !prompt.is_null() {
        drop(Box::from_raw(prompt));
    }
}

/// Number of tokens in the flattened prompt.
///
/// # Safety
/// `prompt` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn icl_prompt_token_count(prompt: *const IclPrompt) -> usize {
    if prompt.is_null() {
        return 0;
    }
    (*prompt).0.flatten().len()
}

/// Copy the flattened prompt tokens into `buf`.
///
/// # Safety
/// Pointers must be valid for the stated capacities.
#[no_mangle]
pub unsafe extern "C" fn icl_prompt_tokens(
    prompt: *const IclPrompt,
    buf: *mut u32,
    cap: usize,
    written: *mut usize,
) -> IclStatus {
    if prompt.is_null() || buf.is_null() || written.is_null() {
        set_error("null pointer");
        return IclStatus::NullPointer;
    }
    let flat = (*prompt).0.flatten();
    *written = flat.len();
    if cap < flat.len() {
        set_error("token buffer too small");
        return IclStatus::BufferTooSmall;
    }
    for (i, &t) in flat.iter().enumerate() {
        *buf.add(i) = t as u32;
    }
    IclStatus::Ok
}

/// Exact Bayesian posterior prediction over the prompt. `scores` receives
/// one probability per label (label-set order); `out_label` the argmax
/// label token.
///
/// # Safety
/// Pointers must be valid for the stated capacities.
#[no_mangle]
pub unsafe extern "C" fn icl_bayes_predict(
    hmm: *const IclHmm,
    prompt: *const IclPrompt,
    out_label: *mut u32,
    scores: *mut f64,
    scores_cap: usize,
) -> IclStatus {
    let hmm = try_ffi!(hmm_ref(hmm));
    if prompt.is_null() || out_label.is_null() || scores.is_null() {
        set_error("null pointer");
        return IclStatus::NullPointer;
    }
    if scores_cap < hmm.label_set().len() {
        set_error("scores buffer too small");
        return IclStatus::BufferTooSmall;
    }
    let outcome = try_core!(bayes_predict(hmm, &(*prompt).0, NormalizationDomain::Labels));
    *out_label = outcome.argmax_label as u32;
    for (i, &s) in outcome.label_scores.iter().enumerate() {
        *scores.add(i) = s;
    }
    IclStatus::Ok
}

/// Kernel-regression prediction with pre-training-moment weights.
/// Moment matrices are enumerated exactly up to `exact_cap` sequences per
/// length; `lambda_rel` is the ridge weight relative to trace/dim.
///
/// # Safety
/// Pointers must be valid for the stated capacities.
#[no_mangle]
pub unsafe extern "C" fn icl_kernel_predict(
    hmm: *const IclHmm,
    prompt: *const IclPrompt,
    lambda_rel: f64,
    exact_cap: u64,
    out_label: *mut u32,
    scores: *mut f64,
    scores_cap: usize,
) -> IclStatus {
    let hmm = try_ffi!(hmm_ref(hmm));
    if prompt.is_null() || out_label.is_null() || scores.is_null() {
        set_error("null pointer");
        return IclStatus::NullPointer;
    }
    if scores_cap < hmm.label_set().len() {
        set_error("scores buffer too small");
        return IclStatus::BufferTooSmall;
    }
    let cache = SigmaCache::new(hmm, lambda_rel, MomentEstimator::Exact { cap: exact_cap });
    let outcome = try_core!(kernel_predict(hmm, &(*prompt).0, &cache));
    *out_label = outcome.argmax_label as u32;
    for (i, &s) in outcome.label_scores.iter().enumerate() {
        *scores.add(i) = s;
    }
    IclStatus::Ok
}
