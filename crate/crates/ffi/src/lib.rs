//! C ABI over the voxrestore engine.
//!
//! Conventions:
//! - every fallible call returns a [`VxStatus`]; results come back through
//!   out-pointers that are written only on success;
//! - objects are opaque handles released with their matching `*_free`;
//! - strings returned to the caller are NUL-terminated UTF-8 released with
//!   [`vx_string_free`];
//! - after a failure, [`vx_last_error`] describes it on the calling thread.
//!
//! Panics never cross the boundary; they surface as `VX_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use voxrestore::audio_io::Waveform;
use voxrestore::degrade::{apply_chain, DegradationSpec};
use voxrestore::generator::{init_weights, load_weights, Generator, ModelConfig};
use voxrestore::losses::{evaluate, LossWeights};
use voxrestore::ranking::{rank, ComparisonSet, DEFAULT_MAX_ITER, DEFAULT_TOL};
use voxrestore::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    SampleRate = 5,
    LengthMismatch = 6,
    Weights = 7,
    Disconnected = 8,
    Degenerate = 9,
    Panic = 10,
    Other = 11,
}

/// A loaded generator.
pub struct VxModel {
    model: Generator,
}

/// Mono audio owned by the library.
pub struct VxAudio {
    wave: Waveform,
}

/// Reconstruction losses of an estimate against a reference.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VxReconLosses {
    pub wav: f64,
    pub spec: f64,
    pub omni: f64,
    pub recon: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> VxStatus {
    match e {
        Error::Io { .. } => VxStatus::Io,
        Error::Channel(_) | Error::Format(_) | Error::CorruptFile(_) | Error::Parse(_) => VxStatus::Format,
        Error::SampleRate { .. } => VxStatus::SampleRate,
        Error::LengthMismatch(..) => VxStatus::LengthMismatch,
        Error::Manifest(_) => VxStatus::Weights,
        Error::Connectivity(_) => VxStatus::Disconnected,
        Error::Degenerate(_) | Error::InsufficientData(_) => VxStatus::Degenerate,
        Error::Config(_) | Error::EmptyInput(_) | Error::InputTooShort { .. } | Error::NonInvertible(_) => {
            VxStatus::InvalidArgument
        }
        _ => VxStatus::Other,
    }
}

struct Failure(VxStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

/// Run `f`, record any failure and convert it to a status.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> VxStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VxStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {message}"));
            VxStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(VxStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Failure(VxStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// As [`opt_str`].
unsafe fn req_str<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    opt_str(p, what)?.ok_or_else(|| null(what))
}

/// # Safety
/// `samples` is null only when `len` is 0, otherwise it points to `len` floats.
unsafe fn waveform(samples: *const f32, len: usize, sample_rate: u32) -> FfiResult<Waveform> {
    let data = if len == 0 {
        Vec::new()
    } else if samples.is_null() {
        return Err(null("samples"));
    } else {
        std::slice::from_raw_parts(samples, len).to_vec()
    };
    Ok(Waveform::new(data, sample_rate)?)
}

fn load_config(path: Option<&str>) -> FfiResult<ModelConfig> {
    Ok(match path {
        Some(p) => ModelConfig::load(p)?,
        None => ModelConfig::default(),
    })
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior NULs removed").into_raw()
}

/// Message of the last failure on this thread, or null. Valid until the next
/// call into the library on the same thread.
#[no_mangle]
pub extern "C" fn vx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static name of a status code (an integer so unknown codes are safe).
#[no_mangle]
pub extern "C" fn vx_status_name(status: i32) -> *const c_char {
    let s: &'static CStr = match status {
        0 => c"ok",
        1 => c"null pointer",
        2 => c"invalid argument",
        3 => c"i/o error",
        4 => c"format error",
        5 => c"sample rate mismatch",
        6 => c"length mismatch",
        7 => c"weight manifest mismatch",
        8 => c"disconnected comparisons",
        9 => c"degenerate data",
        10 => c"internal panic",
        11 => c"error",
        _ => c"unknown status",
    };
    s.as_ptr()
}

/// Load a generator from a weight file and an optional config file (null
/// selects the full default configuration).
///
/// # Safety
/// Path arguments are null or NUL-terminated; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vx_model_load(
    weights_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut VxModel,
) -> VxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let weights_path = req_str(weights_path, "weights_path")?;
        let config = load_config(opt_str(config_path, "config_path")?)?;
        let store = load_weights(weights_path)?;
        let model = Generator::new(config, &store)?;
        *out = Box::into_raw(Box::new(VxModel { model }));
        Ok(())
    })
}

/// Build a generator with seeded random weights, for testing and benchmarks.
///
/// # Safety
/// As [`vx_model_load`].
#[no_mangle]
pub unsafe extern "C" fn vx_model_new_random(config_path: *const c_char, seed: u64, out: *mut *mut VxModel) -> VxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = load_config(opt_str(config_path, "config_path")?)?;
        let store = init_weights(&config, seed)?;
        let model = Generator::new(config, &store)?;
        *out = Box::into_raw(Box::new(VxModel { model }));
        Ok(())
    })
}

/// Sample rate the model expects, or 0 for a null handle.
///
/// # Safety
/// `model` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vx_model_sample_rate(model: *const VxModel) -> u32 {
    model.as_ref().map_or(0, |m| m.model.config().sample_rate)
}

/// # Safety
/// `model` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vx_model_free(model: *mut VxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Restore `len` samples recorded at `sample_rate`.
///
/// # Safety
/// `model` is a live handle, `samples` points to `len` floats, `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn vx_model_restore(
    model: *const VxModel,
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    out: *mut *mut VxAudio,
) -> VxStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let wave = waveform(samples, len, sample_rate)?;
        let restored = model.model.restore_chunked(&wave, 30.0, 1.0)?;
        *out = Box::into_raw(Box::new(VxAudio { wave: restored }));
        Ok(())
    })
}

/// Number of samples, 0 for a null handle.
///
/// # Safety
/// `audio` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vx_audio_len(audio: *const VxAudio) -> usize {
    audio.as_ref().map_or(0, |a| a.wave.len())
}

/// Sample rate, 0 for a null handle.
///
/// # Safety
/// `audio` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vx_audio_sample_rate(audio: *const VxAudio) -> u32 {
    audio.as_ref().map_or(0, |a| a.wave.sample_rate)
}

/// Borrowed pointer to the samples, valid until the handle is freed.
///
/// # Safety
/// `audio` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vx_audio_data(audio: *const VxAudio) -> *const f32 {
    audio.as_ref().map_or(ptr::null(), |a| a.wave.samples.as_ptr())
}

/// # Safety
/// `audio` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vx_audio_free(audio: *mut VxAudio) {
    if !audio.is_null() {
        drop(Box::from_raw(audio));
    }
}

/// Apply the degradation chain. `spec_text` holds a degradation spec in its
/// key-value text form (null selects the defaults); `seed` overrides its
/// seed. The applied-stage trace is returned as JSON lines in `out_trace`
/// when that pointer is non-null.
///
/// # Safety
/// `samples` points to `len` floats; `spec_text` is null or NUL-terminated;
/// `out_audio` is valid; `out_trace` is null or valid.
#[no_mangle]
pub unsafe extern "C" fn vx_degrade(
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    spec_text: *const c_char,
    seed: u64,
    out_audio: *mut *mut VxAudio,
    out_trace: *mut *mut c_char,
) -> VxStatus {
    guard(|| {
        if out_audio.is_null() {
            return Err(null("out_audio"));
        }
        let spec = match opt_str(spec_text, "spec_text")? {
            Some(text) => DegradationSpec::from_text(text)?,
            None => DegradationSpec::default(),
        }
        .with_seed(seed);
        let wave = waveform(samples, len, sample_rate)?;
        let (degraded, trace) = apply_chain(&wave, &spec, &[])?;
        if !out_trace.is_null() {
            *out_trace = into_c_string(trace.to_json_lines());
        }
        *out_audio = Box::into_raw(Box::new(VxAudio { wave: degraded }));
        Ok(())
    })
}

/// Reconstruction losses of `est` against `reference`; the phase terms use
/// the STFT grid of the default model configuration.
///
/// # Safety
/// Sample pointers cover their lengths; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn vx_recon_losses(
    reference: *const f32,
    reference_len: usize,
    est: *const f32,
    est_len: usize,
    sample_rate: u32,
    out: *mut VxReconLosses,
) -> VxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let reference = waveform(reference, reference_len, sample_rate)?;
        let est = waveform(est, est_len, sample_rate)?;
        let grid = ModelConfig::default().stft_params();
        let r = evaluate(&est, &reference, &LossWeights::default(), &grid, None)?;
        *out = VxReconLosses { wav: r.wav, spec: r.spec, omni: r.omni, recon: r.recon };
        Ok(())
    })
}

/// Fit Bradley–Terry strengths to comparison CSV text (header
/// `system_a,system_b,outcome,category`) and return the JSON report.
///
/// # Safety
/// `csv_text` is NUL-terminated; `out_json` is valid.
#[no_mangle]
pub unsafe extern "C" fn vx_rank_csv(csv_text: *const c_char, out_json: *mut *mut c_char) -> VxStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let text = req_str(csv_text, "csv_text")?;
        let data = ComparisonSet::from_csv_reader(text.as_bytes())?;
        let report = rank(&data, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        *out_json = into_c_string(report.to_json());
        Ok(())
    })
}

/// Release a string returned by the library.
///
/// # Safety
/// `s` is null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
