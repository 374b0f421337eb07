//! C ABI for the matcher: opaque handles, status codes, and a flat match
//! record layout. The generated header lands in `include/topicmatch.h`.
//!
//! Ownership rules: everything returned through an out-pointer is owned by
//! the caller and must be released with the matching `tm_*_free` function.
//! Handles are not thread-safe; guard them externally if shared.

use std::ffi::{c_char, CStr};
use std::path::Path;
use std::ptr;

use topicmatch::checkpoint::open_matcher;
use topicmatch::config::{KernelKind, RunConfig};
use topicmatch::error::Error;
use topicmatch::imageio::load_image;
use topicmatch::model::{MatchOverrides, Matcher};

/// Status codes mirroring the CLI exit conventions.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TmStatus {
    TmOk = 0,
    /// Bad arguments: null pointers, invalid UTF-8, out-of-range values.
    TmUsage = 1,
    /// Missing or malformed files, config problems.
    TmData = 2,
    /// Numeric failures: non-finite values, degenerate geometry.
    TmNumeric = 3,
}

fn status_of(e: &Error) -> TmStatus {
    match e.exit_code() {
        2 => TmStatus::TmData,
        3 => TmStatus::TmNumeric,
        _ => TmStatus::TmUsage,
    }
}

/// Opaque matcher handle.
pub struct TmMatcher {
    inner: Matcher,
}

/// One refined correspondence in image coordinates.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TmMatch {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub confidence: f64,
    /// 0-based topic id.
    pub topic: u32,
    /// Heatmap total variance of the refinement, in fine-grid pixels^2.
    pub sigma2: f64,
}

/// Matching options; zero/negative fields fall back to the model config.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TmMatchOptions {
    /// Confidence threshold override; use a value in (0, 1) or 0 for default.
    pub tau: f64,
    /// Covisible topic count override; 0 for default.
    pub covisible: u32,
    /// Match cap; 0 keeps everything.
    pub topk: u64,
}

unsafe fn cstr_to_path<'a>(s: *const c_char) -> Option<&'a Path> {
    if s.is_null() {
        return None;
    }
    CStr::from_ptr(s).to_str().ok().map(Path::new)
}

/// Load a matcher from a checkpoint file. `config_path` may be null to use
/// the checkpoint's embedded config.
///
/// # Safety
/// `checkpoint_path` (and `config_path` when non-null) must be valid
/// NUL-terminated strings; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_matcher_load(
    checkpoint_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut TmMatcher,
) -> TmStatus {
    if out.is_null() {
        return TmStatus::TmUsage;
    }
    *out = ptr::null_mut();
    let Some(ckpt) = cstr_to_path(checkpoint_path) else {
        return TmStatus::TmUsage;
    };
    let cfg = if config_path.is_null() {
        None
    } else {
        let Some(p) = cstr_to_path(config_path) else {
            return TmStatus::TmUsage;
        };
        match RunConfig::from_file(p) {
            Ok(c) => Some(c),
            Err(e) => return status_of(&e),
        }
    };
    match open_matcher(ckpt, cfg) {
        Ok((matcher, _)) => {
            *out = Box::into_raw(Box::new(TmMatcher { inner: matcher }));
            TmStatus::TmOk
        }
        Err(e) => status_of(&e),
    }
}

/// Release a matcher handle. Null is a no-op.
///
/// # Safety
/// `matcher` must have come from `tm_matcher_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tm_matcher_free(matcher: *mut TmMatcher) {
    if !matcher.is_null() {
        drop(Box::from_raw(matcher));
    }
}

/// Number of topics of the loaded model, or 0 on a null handle.
///
/// # Safety
/// `matcher` must be a live handle from `tm_matcher_load`.
#[no_mangle]
pub unsafe extern "C" fn tm_matcher_topics(matcher: *const TmMatcher) -> u32 {
    matcher.as_ref().map(|m| m.inner.cfg.topics as u32).unwrap_or(0)
}

/// Switch every attention stage to the given kernel: 0 dot, 1 linear.
///
/// # Safety
/// `matcher` must be a live handle from `tm_matcher_load`.
#[no_mangle]
pub unsafe extern "C" fn tm_matcher_set_kernel(matcher: *mut TmMatcher, kernel: u32) -> TmStatus {
    let Some(m) = matcher.as_mut() else {
        return TmStatus::TmUsage;
    };
    match kernel {
        0 => m.inner.set_kernel(KernelKind::Dot),
        1 => m.inner.set_kernel(KernelKind::Linear),
        _ => return TmStatus::TmUsage,
    }
    TmStatus::TmOk
}

/// Match two image files (PGM or PNG). On success `*out_matches` points to a
/// caller-owned array of `*out_len` records sorted by descending confidence;
/// free it with `tm_matches_free`.
///
/// # Safety
/// All pointer arguments must be valid; the paths must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tm_match_files(
    matcher: *const TmMatcher,
    image_a: *const c_char,
    image_b: *const c_char,
    options: *const TmMatchOptions,
    out_matches: *mut *mut TmMatch,
    out_len: *mut usize,
) -> TmStatus {
    if out_matches.is_null() || out_len.is_null() {
        return TmStatus::TmUsage;
    }
    *out_matches = ptr::null_mut();
    *out_len = 0;
    let Some(m) = matcher.as_ref() else {
        return TmStatus::TmUsage;
    };
    let (Some(pa), Some(pb)) = (cstr_to_path(image_a), cstr_to_path(image_b)) else {
        return TmStatus::TmUsage;
    };
    let img_a = match load_image(pa) {
        Ok(i) => i,
        Err(e) => return status_of(&e),
    };
    let img_b = match load_image(pb) {
        Ok(i) => i,
        Err(e) => return status_of(&e),
    };
    let mut ov = MatchOverrides::default();
    if let Some(opts) = options.as_ref() {
        if opts.tau > 0.0 && opts.tau < 1.0 {
            ov.tau = Some(opts.tau);
        }
        if opts.covisible > 0 {
            ov.covisible = Some(opts.covisible as usize);
        }
        if opts.topk > 0 {
            ov.topk = Some(opts.topk as usize);
        }
    }
    match m.inner.match_pair(&img_a, &img_b, &ov) {
        Ok(result) => {
            let mut records: Vec<TmMatch> = result
                .refined
                .iter()
                .map(|r| TmMatch {
                    x1: r.x1,
                    y1: r.y1,
                    x2: r.x2,
                    y2: r.y2,
                    confidence: r.confidence,
                    topic: r.topic as u32,
                    sigma2: r.sigma2,
                })
                .collect();
            records.shrink_to_fit();
            *out_len = records.len();
            let mut boxed = records.into_boxed_slice();
            *out_matches = boxed.as_mut_ptr();
            std::mem::forget(boxed);
            TmStatus::TmOk
        }
        Err(e) => status_of(&e),
    }
}

/// Release a match array from `tm_match_files`. Null is a no-op.
///
/// # Safety
/// `matches`/`len` must be exactly the pair produced by `tm_match_files`.
#[no_mangle]
pub unsafe extern "C" fn tm_matches_free(matches: *mut TmMatch, len: usize) {
    if !matches.is_null() {
        drop(Box::from_raw(std::slice::from_raw_parts_mut(matches, len)));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn tm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
