//! C ABI for the story rewriter.
//!
//! Every fallible function returns an [`SrStatus`]; on failure a message is
//! available from [`sr_last_error_message`] on the same thread. Strings
//! returned through `out` pointers are owned by the caller and must be
//! released with [`sr_string_free`]. Input strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use storyrewrite::corpus::{detokenize, ending_from_text, tokenize, StoryPair, Vocab};
use storyrewrite::eval::rouge_l;
use storyrewrite::generator::{rewrite, GeneratorModel, SamplerConfig};
use storyrewrite::skeleton::lcs_skeleton;
use storyrewrite::tagger::TaggerModel;
use storyrewrite::{Error, ErrorKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Io = 4,
    Data = 5,
    Model = 6,
    Invalid = 7,
    Panic = 8,
}

impl From<&Error> for SrStatus {
    fn from(e: &Error) -> Self {
        match e.kind() {
            ErrorKind::Config => SrStatus::Config,
            ErrorKind::Io => SrStatus::Io,
            ErrorKind::Data => SrStatus::Data,
            ErrorKind::Model => SrStatus::Model,
            ErrorKind::Invalid => SrStatus::Invalid,
        }
    }
}

/// Sampling settings for [`sr_rewriter_rewrite`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrSamplerOptions {
    pub k: usize,
    pub temperature: f64,
    pub seed: u64,
    pub max_ending_length: usize,
}

impl From<SrSamplerOptions> for SamplerConfig {
    fn from(o: SrSamplerOptions) -> Self {
        SamplerConfig {
            k: o.k,
            temperature: o.temperature,
            seed: o.seed,
            max_ending_length: o.max_ending_length,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SrRouge {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Loaded vocabulary, tagger and generator. Opaque to C.
pub struct SrRewriter {
    vocab: Vocab,
    tagger: TaggerModel,
    generator: GeneratorModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(SrStatus);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        set_error(e.to_string());
        Fail(SrStatus::from(&e))
    }
}

fn fail(status: SrStatus, msg: impl Into<String>) -> Fail {
    set_error(msg);
    Fail(status)
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SrStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SrStatus::Ok,
        Ok(Err(Fail(s))) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            SrStatus::Panic
        }
    }
}

unsafe fn arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if ptr.is_null() {
        return Err(fail(SrStatus::NullArgument, format!("{name} is NULL")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(SrStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn out_ptr<T>(out: *mut T, name: &str) -> Result<(), Fail> {
    if out.is_null() {
        Err(fail(SrStatus::NullArgument, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

fn to_c(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(SrStatus::Invalid, "output contains a NUL byte"))
}

unsafe fn story(
    premise: *const c_char,
    condition: *const c_char,
    ending: *const c_char,
    counterfactual_condition: *const c_char,
) -> Result<StoryPair, Fail> {
    let premise = arg(premise, "premise")?;
    let condition = arg(condition, "condition")?;
    let ending_text = arg(ending, "ending")?;
    let cf = arg(counterfactual_condition, "counterfactual_condition")?;
    let ending = ending_from_text(ending_text)
        .ok_or_else(|| fail(SrStatus::Invalid, "ending must have at least three sentences"))?;
    Ok(StoryPair::new("ffi", premise, condition, ending, cf, Vec::new())?)
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default sampling settings.
#[no_mangle]
pub extern "C" fn sr_sampler_defaults() -> SrSamplerOptions {
    let d = SamplerConfig::default();
    SrSamplerOptions {
        k: d.k,
        temperature: d.temperature,
        seed: d.seed,
        max_ending_length: d.max_ending_length,
    }
}

/// Loads a vocabulary and both checkpoints. On success `*out` holds a handle
/// to release with [`sr_rewriter_free`].
///
/// # Safety
/// Path arguments must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_rewriter_load(
    vocab_path: *const c_char,
    tagger_path: *const c_char,
    generator_path: *const c_char,
    out: *mut *mut SrRewriter,
) -> SrStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let vocab = Vocab::load(Path::new(arg(vocab_path, "vocab_path")?))?;
        let (tagger, _) = TaggerModel::load(Path::new(arg(tagger_path, "tagger_path")?), &vocab)?;
        let (generator, _) = GeneratorModel::load(Path::new(arg(generator_path, "generator_path")?), &vocab)?;
        *out = Box::into_raw(Box::new(SrRewriter {
            vocab,
            tagger,
            generator,
        }));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `rw` must come from [`sr_rewriter_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sr_rewriter_free(rw: *mut SrRewriter) {
    if !rw.is_null() {
        drop(Box::from_raw(rw));
    }
}

/// Predicted skeleton of `ending`, tokens joined by spaces with `[BLANK]` for
/// blanks.
///
/// # Safety
/// `rw` must be a live handle; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_rewriter_skeleton(
    rw: *const SrRewriter,
    premise: *const c_char,
    condition: *const c_char,
    ending: *const c_char,
    counterfactual_condition: *const c_char,
    out: *mut *mut c_char,
) -> SrStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let rw = rw.as_ref().ok_or_else(|| fail(SrStatus::NullArgument, "rewriter is NULL"))?;
        let pair = story(premise, condition, ending, counterfactual_condition)?;
        let k = rw.tagger.predict_skeleton(&pair, &rw.vocab)?;
        *out = to_c(k.render().join(" "))?;
        Ok(())
    })
}

/// Rewrites `ending` for `counterfactual_condition`. `options` may be NULL
/// for [`sr_sampler_defaults`]. The same options give the same output.
///
/// # Safety
/// `rw` must be a live handle; strings NUL-terminated; `options` NULL or
/// valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_rewriter_rewrite(
    rw: *const SrRewriter,
    premise: *const c_char,
    condition: *const c_char,
    ending: *const c_char,
    counterfactual_condition: *const c_char,
    options: *const SrSamplerOptions,
    out: *mut *mut c_char,
) -> SrStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let rw = rw.as_ref().ok_or_else(|| fail(SrStatus::NullArgument, "rewriter is NULL"))?;
        let pair = story(premise, condition, ending, counterfactual_condition)?;
        let opts = options.as_ref().copied().unwrap_or_else(|| sr_sampler_defaults());
        let r = rewrite(&rw.tagger, &rw.generator, &pair, &rw.vocab, &opts.into())?;
        *out = to_c(detokenize(&r.ending))?;
        Ok(())
    })
}

/// Skeleton of `ending` that keeps the tokens shared with `edited` along
/// their longest common subsequence.
///
/// # Safety
/// Strings must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_lcs_skeleton(
    ending: *const c_char,
    edited: *const c_char,
    out: *mut *mut c_char,
) -> SrStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let e = tokenize(arg(ending, "ending")?);
        let e2 = tokenize(arg(edited, "edited")?);
        *out = to_c(lcs_skeleton(&e, &e2).render().join(" "))?;
        Ok(())
    })
}

/// Token-level ROUGE-L of `candidate` against `reference`.
///
/// # Safety
/// Strings must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_rouge_l(
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut SrRouge,
) -> SrStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let r = rouge_l(&tokenize(arg(candidate, "candidate")?), &tokenize(arg(reference, "reference")?));
        *out = SrRouge {
            precision: r.precision,
            recall: r.recall,
            f_measure: r.f_measure,
        };
        Ok(())
    })
}
