//! C ABI over `edgelab`.
//!
//! Models and caches are opaque heap handles created and released through
//! this interface. Every fallible call returns an [`ElStatus`]; on failure the
//! message is available from [`el_last_error`] until the next failing call on
//! the same thread. Output buffers are caller-owned: functions that fill one
//! take its capacity and report the required length, returning
//! `EL_STATUS_BUFFER_TOO_SMALL` when it does not fit.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use edgelab::kv::{cache_bytes, EvictionPolicy, KvCache};
use edgelab::lm::{greedy_decode, io, Token};
use edgelab::metrics::rouge_texts;
use edgelab::quant::{model_bpw, ptq_model, PrecisionPlan, QuantSpec};
use edgelab::spec::{block_efficiency, decode_speculative, DraftConfig};
use edgelab::tensor::argmax;
use edgelab::{Error, ModelConfig, TinyLM};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElStatus {
    Ok = 0,
    NullArgument = 1,
    Config = 2,
    Shape = 3,
    TokenOutOfRange = 4,
    SequenceTooLong = 5,
    NonMonotonePosition = 6,
    InvalidInput = 7,
    ContractViolation = 8,
    Format = 9,
    Io = 10,
    Json = 11,
    Utf8 = 12,
    BufferTooSmall = 13,
    Panic = 14,
}

impl From<&Error> for ElStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => ElStatus::Config,
            Error::Shape(_) => ElStatus::Shape,
            Error::TokenOutOfRange { .. } => ElStatus::TokenOutOfRange,
            Error::SequenceTooLong { .. } => ElStatus::SequenceTooLong,
            Error::NonMonotonePosition { .. } => ElStatus::NonMonotonePosition,
            Error::InvalidInput(_) => ElStatus::InvalidInput,
            Error::Contract(_) => ElStatus::ContractViolation,
            Error::Format(_) => ElStatus::Format,
            Error::Io(_) => ElStatus::Io,
            Error::Json(_) => ElStatus::Json,
        }
    }
}

/// Opaque model handle.
pub struct ElModel(TinyLM);

/// Opaque KV cache handle, bound to the geometry of the model it was made for.
pub struct ElCache(KvCache);

/// ROUGE F1 scores of a hypothesis against a reference.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ElRouge {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

/// Counters from one speculative decode.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ElSpecStats {
    pub rounds: u64,
    pub proposed: u64,
    pub accepted: u64,
    pub emitted: u64,
    pub block_efficiency: f64,
}

struct Failure(ElStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ElStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ElStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            ElStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ElStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(ElStatus::Utf8, format!("`{what}` is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn mut_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copies `src` into a caller buffer of capacity `cap`, always reporting the
/// required length through `out_len`.
unsafe fn fill<T: Copy>(src: &[T], out: *mut T, cap: usize, out_len: *mut usize) -> Result<(), Failure> {
    if let Some(l) = out_len.as_mut() {
        *l = src.len();
    }
    if src.len() > cap {
        return Err(Failure(ElStatus::BufferTooSmall, format!("need {} elements, capacity is {cap}", src.len())));
    }
    if !src.is_empty() {
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

fn into_handle<T>(value: T, out: *mut *mut T) -> Result<(), Failure> {
    // SAFETY: checked non-null; the caller owns the slot.
    unsafe { *mut_arg(out, "out")? = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message of the last failure on this thread; empty when none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn el_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn el_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Seeded model from a JSON model config (same fields as the CLI config's
/// `model` object; `NULL` selects the defaults).
///
/// # Safety
/// `config_json` must be NULL or a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn el_model_init(config_json: *const c_char, seed: u64, out: *mut *mut ElModel) -> ElStatus {
    guard(|| {
        let cfg: ModelConfig = if config_json.is_null() {
            ModelConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?
        };
        into_handle(ElModel(TinyLM::init(cfg, seed)?), out)
    })
}

/// Loads a model from the binary model format.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn el_model_load(path: *const c_char, out: *mut *mut ElModel) -> ElStatus {
    guard(|| into_handle(ElModel(io::load_model(Path::new(str_arg(path, "path")?))?), out))
}

/// Saves a model in the binary model format.
///
/// # Safety
/// `model` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn el_model_save(model: *const ElModel, path: *const c_char) -> ElStatus {
    guard(|| Ok(io::save_model(&ref_arg(model, "model")?.0, Path::new(str_arg(path, "path")?))?))
}

/// Releases a model handle. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn el_model_free(model: *mut ElModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vocabulary size of the model, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn el_model_vocab_size(model: *const ElModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().vocab_size)
}

/// Exact bits per weight of the model's matrices.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn el_model_bpw(model: *const ElModel, out: *mut f64) -> ElStatus {
    guard(|| {
        *mut_arg(out, "out")? = model_bpw(&ref_arg(model, "model")?.0);
        Ok(())
    })
}

/// Post-training quantization of every matrix with symmetric per-group codes
/// of `bits` bits and group size `group`. The result is a new handle.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn el_model_quantize(
    model: *const ElModel,
    bits: u8,
    group: usize,
    out: *mut *mut ElModel,
) -> ElStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let spec = QuantSpec::symmetric_per_group(bits, group);
        into_handle(ElModel(ptq_model(m, &PrecisionPlan::uniform(m, spec))?), out)
    })
}

/// Greedy decoding. Writes prompt plus continuation into `out_tokens`.
///
/// # Safety
/// Pointers must be valid for their stated lengths; `out_len` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn el_greedy_decode(
    model: *const ElModel,
    prompt: *const u32,
    prompt_len: usize,
    max_new: usize,
    out_tokens: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> ElStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let p: &[Token] = slice_arg(prompt, prompt_len, "prompt")?;
        fill(&greedy_decode(m, p, max_new)?, out_tokens, cap, out_len)
    })
}

/// Lossless speculative decoding with `draft` as an independent draft model
/// proposing `k` tokens per round. Output equals greedy decoding of `target`.
///
/// # Safety
/// Pointers must be valid for their stated lengths; `out_len` and `stats`
/// may be NULL.
#[no_mangle]
pub unsafe extern "C" fn el_speculative_decode(
    target: *const ElModel,
    draft: *const ElModel,
    prompt: *const u32,
    prompt_len: usize,
    k: usize,
    max_new: usize,
    out_tokens: *mut u32,
    cap: usize,
    out_len: *mut usize,
    stats: *mut ElSpecStats,
) -> ElStatus {
    guard(|| {
        let t = &ref_arg(target, "target")?.0;
        let d = ref_arg(draft, "draft")?.0.clone();
        let p: &[Token] = slice_arg(prompt, prompt_len, "prompt")?;
        let (tokens, s) = decode_speculative(t, &DraftConfig::independent(d, k), p, max_new)?;
        if let Some(out) = stats.as_mut() {
            *out = ElSpecStats {
                rounds: s.rounds,
                proposed: s.proposed,
                accepted: s.accepted,
                emitted: s.emitted,
                block_efficiency: block_efficiency(&s)?,
            };
        }
        fill(&tokens, out_tokens, cap, out_len)
    })
}

/// Empty KV cache shaped for `model`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn el_cache_new(model: *const ElModel, out: *mut *mut ElCache) -> ElStatus {
    guard(|| into_handle(ElCache(KvCache::for_model(ref_arg(model, "model")?.0.config())), out))
}

/// Releases a cache handle. NULL is ignored.
///
/// # Safety
/// `cache` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn el_cache_free(cache: *mut ElCache) {
    if !cache.is_null() {
        drop(Box::from_raw(cache));
    }
}

/// Number of entries held by `layer`, or 0 for NULL or an unknown layer.
///
/// # Safety
/// `cache` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn el_cache_layer_len(cache: *const ElCache, layer: usize) -> usize {
    cache.as_ref().and_then(|c| c.0.layers().get(layer)).map_or(0, |l| l.len())
}

/// Cache footprint in bytes at `bytes_per_element` bytes per stored value.
///
/// # Safety
/// `cache` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn el_cache_bytes(cache: *const ElCache, bytes_per_element: u64, out: *mut u64) -> ElStatus {
    guard(|| {
        *mut_arg(out, "out")? = cache_bytes(&ref_arg(cache, "cache")?.0, bytes_per_element);
        Ok(())
    })
}

/// Appends `tokens` through the cache and writes the logits of the last
/// token (vocabulary-sized) into `out_logits`; `out_next` receives their
/// argmax.
///
/// # Safety
/// Pointers must be valid for their stated lengths; `out_next` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn el_forward(
    model: *const ElModel,
    cache: *mut ElCache,
    tokens: *const u32,
    len: usize,
    out_logits: *mut f32,
    cap: usize,
    out_next: *mut u32,
) -> ElStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let c = &mut mut_arg(cache, "cache")?.0;
        let t: &[Token] = slice_arg(tokens, len, "tokens")?;
        if t.is_empty() {
            return Err(Failure(ElStatus::InvalidInput, "no tokens".into()));
        }
        let logits = m.forward(t, Some(c), false)?.logits;
        let last = logits.row(logits.rows - 1);
        if let Some(n) = out_next.as_mut() {
            *n = argmax(last) as u32;
        }
        fill(last, out_logits, cap, ptr::null_mut())
    })
}

/// One-shot eviction of every layer down to `budget` entries. `policy_json`
/// uses the CLI config's policy objects, e.g. `{"kind":"heavy_hitter","recent":16}`.
/// `out_fraction` receives evicted entries over entries before eviction.
///
/// # Safety
/// `cache` must be a live handle and `policy_json` a valid C string;
/// `out_fraction` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn el_cache_evict(
    cache: *mut ElCache,
    policy_json: *const c_char,
    budget: usize,
    out_fraction: *mut f64,
) -> ElStatus {
    guard(|| {
        let c = &mut mut_arg(cache, "cache")?.0;
        let policy: EvictionPolicy = serde_json::from_str(str_arg(policy_json, "policy_json")?).map_err(Error::from)?;
        let report = c.evict(&policy, budget)?;
        if let Some(f) = out_fraction.as_mut() {
            *f = report.eviction_ratio()?;
        }
        Ok(())
    })
}

/// ROUGE-1/2/L F1 of two texts (whitespace tokens, lowercase, clipped counts).
///
/// # Safety
/// Both strings must be valid C strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn el_rouge(reference: *const c_char, hypothesis: *const c_char, out: *mut ElRouge) -> ElStatus {
    guard(|| {
        let r = rouge_texts(str_arg(reference, "reference")?, str_arg(hypothesis, "hypothesis")?);
        *mut_arg(out, "out")? = ElRouge { rouge1: r.rouge1.f1, rouge2: r.rouge2.f1, rouge_l: r.rouge_l.f1 };
        Ok(())
    })
}
