//! C ABI over `fdmu`.
//!
//! Every function returns an [`FdmuStatus`]; on failure the message is kept
//! per thread and can be copied out with [`fdmu_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fdmu::diffusion::{sample, Checkpoint, Condition, NoiseSchedule};
use fdmu::divergence::{convergence_speed_index, DivergenceKind};
use fdmu::dynamics::{jacobian_at_equilibrium, TractableGame};
use fdmu::eval::evaluate;
use fdmu::gaussian::{closed_form, quadrature_divergence, DiagonalGaussian};
use fdmu::unlearn::{unlearn, UnlearnConfig, NULL_ANCHOR};
use fdmu::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdmuStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownDivergence = 3,
    Domain = 4,
    Unsupported = 5,
    Explosion = 6,
    NonFinite = 7,
    Io = 8,
    Format = 9,
    Dynamics = 10,
    BufferTooSmall = 11,
    Internal = 12,
}

/// A loaded denoiser checkpoint.
pub struct FdmuModel {
    checkpoint: Checkpoint,
    schedule: NoiseSchedule,
}

/// A scalar min-max game at its equilibrium.
pub struct FdmuGame {
    game: TractableGame,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> FdmuStatus {
    match e {
        Error::UnknownDivergence(_) => FdmuStatus::UnknownDivergence,
        Error::Domain { .. } => FdmuStatus::Domain,
        Error::Unsupported { .. } => FdmuStatus::Unsupported,
        Error::Explosion { .. } => FdmuStatus::Explosion,
        Error::NonFinite { .. } => FdmuStatus::NonFinite,
        Error::Io(_) => FdmuStatus::Io,
        Error::Format(_) => FdmuStatus::Format,
        Error::Dynamics(_) => FdmuStatus::Dynamics,
        Error::DimensionMismatch { .. }
        | Error::DivergenceUndefined(_)
        | Error::InvalidInput(_)
        | Error::OracleFailure(_)
        | Error::RelationViolated(_) => FdmuStatus::InvalidArgument,
    }
}

struct Failure(FdmuStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FdmuStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> FdmuStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            FdmuStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            FdmuStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(FdmuStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn write_str(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Failure> {
    if let Some(n) = needed.as_mut() {
        *n = s.len() + 1;
    }
    if buf.is_null() || len < s.len() + 1 {
        return Err(Failure(
            FdmuStatus::BufferTooSmall,
            format!("buffer of {len} bytes cannot hold {} bytes", s.len() + 1),
        ));
    }
    std::ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

fn kind(name: &str) -> Result<DivergenceKind, Failure> {
    Ok(name.parse::<DivergenceKind>()?)
}

/// Copies the calling thread's last error message (empty after a success).
///
/// # Safety
/// `buf` must point to `len` writable bytes (or be null to query the size);
/// `needed`, if non-null, receives the required size including the NUL.
#[no_mangle]
pub unsafe extern "C" fn fdmu_last_error_message(buf: *mut c_char, len: usize, needed: *mut usize) -> FdmuStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    match write_str(&msg, buf, len, needed) {
        Ok(()) => FdmuStatus::Ok,
        Err(Failure(code, _)) => code,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fdmu_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Closed-form divergence between `N(p_mean, p_var)` and `N(q_mean, q_var)`.
///
/// # Safety
/// `kind_name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fdmu_divergence_closed_form(
    kind_name: *const c_char,
    p_mean: f64,
    p_var: f64,
    q_mean: f64,
    q_var: f64,
    out: *mut f64,
) -> FdmuStatus {
    guard(|| {
        let k = kind(str_arg(kind_name, "kind")?)?;
        let out = out_ref(out, "out")?;
        let p = DiagonalGaussian::scalar(p_mean, p_var)?;
        let q = DiagonalGaussian::scalar(q_mean, q_var)?;
        *out = closed_form(&k.spec(), &p, &q)?;
        Ok(())
    })
}

/// Quadrature value of the same divergence.
///
/// # Safety
/// As for [`fdmu_divergence_closed_form`].
#[no_mangle]
pub unsafe extern "C" fn fdmu_divergence_quadrature(
    kind_name: *const c_char,
    p_mean: f64,
    p_var: f64,
    q_mean: f64,
    q_var: f64,
    out: *mut f64,
) -> FdmuStatus {
    guard(|| {
        let k = kind(str_arg(kind_name, "kind")?)?;
        let out = out_ref(out, "out")?;
        let p = DiagonalGaussian::scalar(p_mean, p_var)?;
        let q = DiagonalGaussian::scalar(q_mean, q_var)?;
        *out = quadrature_divergence(&k.spec(), &p, &q)?;
        Ok(())
    })
}

/// `1 / f″(1)` for the named divergence.
///
/// # Safety
/// `kind_name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fdmu_speed_index(kind_name: *const c_char, out: *mut f64) -> FdmuStatus {
    guard(|| {
        let k = kind(str_arg(kind_name, "kind")?)?;
        *out_ref(out, "out")? = convergence_speed_index(&k.spec())?;
        Ok(())
    })
}

/// Loads a checkpoint file into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fdmu_model_load(path: *const c_char, out: *mut *mut FdmuModel) -> FdmuStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_ref(out, "out")?;
        let checkpoint = Checkpoint::load(Path::new(path))?;
        let schedule = checkpoint.schedule()?;
        *out = Box::into_raw(Box::new(FdmuModel { checkpoint, schedule }));
        Ok(())
    })
}

/// Writes the model to a checkpoint file.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fdmu_model_save(model: *const FdmuModel, path: *const c_char) -> FdmuStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        m.checkpoint.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fdmu_model_free(model: *mut FdmuModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of concepts the model is conditioned on.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fdmu_model_concept_count(model: *const FdmuModel, out: *mut usize) -> FdmuStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_ref(out, "out")? = m.checkpoint.concepts.len();
        Ok(())
    })
}

/// Hex SHA-256 of the model parameters.
///
/// # Safety
/// `model` must be a live handle; see [`fdmu_last_error_message`] for the
/// buffer convention.
#[no_mangle]
pub unsafe extern "C" fn fdmu_model_checksum(
    model: *const FdmuModel,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> FdmuStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        write_str(&m.checkpoint.net.checksum(), buf, len, needed)
    })
}

/// Draws `n` samples for `concept` (a label or `"null"`) into `out_xy`
/// as interleaved `x, y` pairs.
///
/// # Safety
/// `model` must be a live handle, `concept` a NUL-terminated string and
/// `out_xy` must hold `2 * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn fdmu_model_sample(
    model: *const FdmuModel,
    concept: *const c_char,
    n: usize,
    seed: u64,
    out_xy: *mut f64,
) -> FdmuStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let label = str_arg(concept, "concept")?;
        if out_xy.is_null() {
            return Err(null("out_xy"));
        }
        let cond = if label == NULL_ANCHOR {
            Condition::Null
        } else {
            Condition::Concept(m.checkpoint.concepts.index_of(label)?)
        };
        let s = sample(&m.checkpoint.net, cond, &m.schedule, n, seed, false)?.samples;
        let out = std::slice::from_raw_parts_mut(out_xy, 2 * n);
        out.copy_from_slice(s.as_slice());
        Ok(())
    })
}

/// Per-concept classifier accuracy of `n` generated samples each.
///
/// # Safety
/// `model` must be a live handle; `out_accuracy` must hold `len` doubles,
/// where `len` is at least the concept count.
#[no_mangle]
pub unsafe extern "C" fn fdmu_model_evaluate(
    model: *const FdmuModel,
    n: usize,
    seed: u64,
    out_accuracy: *mut f64,
    len: usize,
) -> FdmuStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out_accuracy.is_null() {
            return Err(null("out_accuracy"));
        }
        let k = m.checkpoint.concepts.len();
        if len < k {
            return Err(Failure(FdmuStatus::BufferTooSmall, format!("need {k} slots, got {len}")));
        }
        let reports = evaluate(&m.checkpoint.net, &m.checkpoint.concepts, &m.schedule, n, seed)?;
        let out = std::slice::from_raw_parts_mut(out_accuracy, k);
        for (o, r) in out.iter_mut().zip(&reports) {
            *o = r.accuracy;
        }
        Ok(())
    })
}

/// Runs unlearning with a TOML configuration and returns a new handle.
///
/// # Safety
/// `model` must be a live handle, `config_toml` a NUL-terminated string
/// (may be empty for defaults) and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fdmu_unlearn(
    model: *const FdmuModel,
    config_toml: *const c_char,
    out: *mut *mut FdmuModel,
) -> FdmuStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let config = UnlearnConfig::from_toml(str_arg(config_toml, "config_toml")?)?;
        let out = out_ref(out, "out")?;
        let res = unlearn(&m.checkpoint.net, &m.checkpoint.concepts, &m.schedule, &config)?;
        let mut checkpoint = m.checkpoint.clone();
        checkpoint.net = res.net;
        *out = Box::into_raw(Box::new(FdmuModel {
            checkpoint,
            schedule: m.schedule.clone(),
        }));
        Ok(())
    })
}

/// Scalar game with target `N(mean, sd²)` for the named divergence.
///
/// # Safety
/// `kind_name` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fdmu_game_new(
    kind_name: *const c_char,
    mean: f64,
    sd: f64,
    out: *mut *mut FdmuGame,
) -> FdmuStatus {
    guard(|| {
        let k = kind(str_arg(kind_name, "kind")?)?;
        let out = out_ref(out, "out")?;
        let game = TractableGame::scalar(mean, sd, k)?;
        *out = Box::into_raw(Box::new(FdmuGame { game }));
        Ok(())
    })
}

/// Releases a game handle; null is ignored.
///
/// # Safety
/// `game` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fdmu_game_free(game: *mut FdmuGame) {
    if !game.is_null() {
        drop(Box::from_raw(game));
    }
}

/// Equilibrium Jacobian eigenvalues, sorted by real part.
///
/// # Safety
/// `game` must be a live handle; `re` and `im` must hold `len` doubles;
/// `count`, if non-null, receives the number of eigenvalues.
#[no_mangle]
pub unsafe extern "C" fn fdmu_game_eigenvalues(
    game: *const FdmuGame,
    re: *mut f64,
    im: *mut f64,
    len: usize,
    count: *mut usize,
) -> FdmuStatus {
    guard(|| {
        let g = game.as_ref().ok_or_else(|| null("game"))?;
        let report = jacobian_at_equilibrium(&g.game)?;
        let n = report.eigenvalues.len();
        if let Some(c) = count.as_mut() {
            *c = n;
        }
        if re.is_null() || im.is_null() || len < n {
            return Err(Failure(FdmuStatus::BufferTooSmall, format!("need {n} slots, got {len}")));
        }
        for (i, (r, m)) in report.eigenvalues.iter().enumerate() {
            *re.add(i) = *r;
            *im.add(i) = *m;
        }
        Ok(())
    })
}

/// Full equilibrium report as JSON.
///
/// # Safety
/// `game` must be a live handle; see [`fdmu_last_error_message`] for the
/// buffer convention.
#[no_mangle]
pub unsafe extern "C" fn fdmu_game_report_json(
    game: *const FdmuGame,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> FdmuStatus {
    guard(|| {
        let g = game.as_ref().ok_or_else(|| null("game"))?;
        let report = jacobian_at_equilibrium(&g.game)?;
        let json = serde_json::to_string(&report).map_err(|e| Failure(FdmuStatus::Format, e.to_string()))?;
        write_str(&json, buf, len, needed)
    })
}
