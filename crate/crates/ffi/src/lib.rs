//! C ABI for ratiobench.
//!
//! Conventions shared by every function:
//!
//! - Fallible calls return an [`RbStatus`]; `RB_STATUS_OK` is zero. After a
//!   failure, [`rb_last_error_message`] describes it until the next call on
//!   the same thread.
//! - Objects are opaque handles. Each constructor has a matching `_free`;
//!   freeing `NULL` is a no-op.
//! - Strings returned through out-parameters belong to the caller and are
//!   released with [`rb_string_free`].
//! - Array arguments are `(pointer, length)` pairs; a null pointer is
//!   accepted only with length zero. Matrices are row-major.
//! - Panics never cross the boundary; they surface as `RB_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::str::FromStr;

use ratiobench::cli::{run_command, Command};
use ratiobench::config::{parse_config, RunConfig};
use ratiobench::eval::Curve;
use ratiobench::matrix::Matrix;
use ratiobench::models::{Checkpoint, RatioNet};
use ratiobench::scoring::ClassBalance;
use ratiobench::trainer::{GeneratorLoss, RatioLoss};
use ratiobench::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Usage = 4,
    Dimension = 5,
    Domain = 6,
    Unsupported = 7,
    /// Non-finite values or a diverged training run.
    Numeric = 8,
    Io = 9,
    /// The command ran but some of its checks failed.
    ChecksFailed = 10,
    Panic = 11,
}

/// Parsed run configuration.
pub struct RbConfig {
    inner: RunConfig,
}

/// Ratio network loaded from a checkpoint.
pub struct RbRatioNet {
    inner: RatioNet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(RbStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config { .. } => RbStatus::Config,
            Error::Usage(_) => RbStatus::Usage,
            Error::Dimension { .. } | Error::Shape { .. } => RbStatus::Dimension,
            Error::Domain(_) | Error::GraphDomain { .. } => RbStatus::Domain,
            Error::Unsupported(_) => RbStatus::Unsupported,
            Error::NonFinite(_) | Error::Diverged { .. } => RbStatus::Numeric,
            Error::Io(_) => RbStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn set_last_error(message: Option<String>) {
    let c = message.map(|m| CString::new(m.replace('\0', " ")).expect("interior NULs removed"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Outcome) -> RbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            RbStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(Some(message));
            status
        }
        Err(_) => {
            set_last_error(Some("internal panic".into()));
            RbStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(RbStatus::NullPointer, format!("`{what}` is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RbStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null(what)),
        (false, n) => Ok(std::slice::from_raw_parts(p, n)),
    }
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn parse<T: FromStr<Err = Error>>(s: &str) -> Result<T, Failure> {
    s.parse().map_err(Failure::from)
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior NULs removed").into_raw()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or `NULL` if the last
/// call succeeded. The pointer stays valid until the next call.
#[no_mangle]
pub extern "C" fn rb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be `NULL` or a pointer obtained from this library that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn rb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a configuration holding every default.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn rb_config_default(out: *mut *mut RbConfig) -> RbStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(RbConfig {
            inner: RunConfig::default(),
        }));
        Ok(())
    })
}

/// Parses a `section.key = value` document.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rb_config_parse(text: *const c_char, out: *mut *mut RbConfig) -> RbStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = out_arg(out, "out")?;
        let inner = parse_config(text)?;
        *out = Box::into_raw(Box::new(RbConfig { inner }));
        Ok(())
    })
}

/// Writes the canonical text form of `cfg` to `*out`.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rb_config_serialize(cfg: *const RbConfig, out: *mut *mut c_char) -> RbStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let out = out_arg(out, "out")?;
        *out = to_c_string(cfg.inner.serialize());
        Ok(())
    })
}

/// Overrides the training seed, as the `--seed` flag does.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rb_config_set_seed(cfg: *mut RbConfig, seed: u64) -> RbStatus {
    guard(|| {
        out_arg(cfg, "cfg")?.inner.train.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be `NULL` or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn rb_config_free(cfg: *mut RbConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Loads a ratio network from checkpoint text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rb_ratio_net_load(text: *const c_char, out: *mut *mut RbRatioNet) -> RbStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = out_arg(out, "out")?;
        match parse::<Checkpoint>(text)? {
            Checkpoint::Ratio(inner) => {
                *out = Box::into_raw(Box::new(RbRatioNet { inner }));
                Ok(())
            }
            Checkpoint::Generator(_) => Err(Failure(
                RbStatus::Usage,
                "checkpoint holds a generator, not a ratio network".into(),
            )),
        }
    })
}

/// Input dimension of `net`.
///
/// # Safety
/// `net` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rb_ratio_net_input_dim(net: *const RbRatioNet, out: *mut usize) -> RbStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        *out_arg(out, "out")? = net.inner.data_dim();
        Ok(())
    })
}

/// Evaluates `log r(x)` for each of the `rows` points in the row-major
/// `rows × cols` array `x`, writing `rows` values to `out`.
///
/// # Safety
/// `net` must be a live handle, `x` must hold `rows * cols` values and `out`
/// must have room for `rows` values.
#[no_mangle]
pub unsafe extern "C" fn rb_ratio_net_log_ratio(
    net: *const RbRatioNet,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> RbStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        let len = rows.checked_mul(cols).ok_or_else(|| Failure(RbStatus::Dimension, "rows * cols overflows".into()))?;
        let values = slice_arg(x, len, "x")?;
        if rows > 0 && out.is_null() {
            return Err(null("out"));
        }
        let m = Matrix::from_vec(rows, cols, values.to_vec())?;
        let log_r = net.inner.eval_log_ratio(&m)?;
        if rows > 0 {
            std::slice::from_raw_parts_mut(out, rows).copy_from_slice(&log_r);
        }
        Ok(())
    })
}

/// # Safety
/// `net` must be `NULL` or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn rb_ratio_net_free(net: *mut RbRatioNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Evaluates a ratio loss by its configuration name (`bernoulli`,
/// `fdiv:kl`, `lsif`, `bregman:squared`, ...). CPE rules read the inputs as
/// discriminator values in `[0, 1]`; every other loss reads them as ratios.
/// `pi` is the class balance and only affects CPE rules.
///
/// # Safety
/// `name` must be NUL-terminated, the arrays must hold the stated number of
/// values, and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rb_ratio_loss(
    name: *const c_char,
    real: *const f64,
    n_real: usize,
    gen: *const f64,
    n_gen: usize,
    pi: f64,
    out: *mut f64,
) -> RbStatus {
    guard(|| {
        let loss: RatioLoss = parse(str_arg(name, "name")?)?;
        let (real, gen) = (slice_arg(real, n_real, "real")?, slice_arg(gen, n_gen, "gen")?);
        let out = out_arg(out, "out")?;
        *out = loss.evaluate(real, gen, ClassBalance::new(pi)?)?;
        Ok(())
    })
}

/// Evaluates a generator loss by name on network outputs at generated
/// points, read as in [`rb_ratio_loss`]. Sample-based losses (`mmd`,
/// `moments:<k>`) return `RB_STATUS_UNSUPPORTED`.
///
/// # Safety
/// `name` must be NUL-terminated, `gen` must hold `n_gen` values and `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rb_generator_loss(
    name: *const c_char,
    gen: *const f64,
    n_gen: usize,
    out: *mut f64,
) -> RbStatus {
    guard(|| {
        let loss: GeneratorLoss = parse(str_arg(name, "name")?)?;
        let gen = slice_arg(gen, n_gen, "gen")?;
        let out = out_arg(out, "out")?;
        *out = loss.evaluate(gen)?;
        Ok(())
    })
}

/// One point of a loss-landscape curve: the value shifted to vanish at
/// `r = 1` and its derivative with respect to `log r`. `name` is an
/// f-divergence name, `minimax` or `nonsaturating`.
///
/// # Safety
/// `name` must be NUL-terminated; `value` and `slope` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rb_curve(name: *const c_char, log_r: f64, value: *mut f64, slope: *mut f64) -> RbStatus {
    guard(|| {
        let curve: Curve = parse(str_arg(name, "name")?)?;
        let (value, slope) = (out_arg(value, "value")?, out_arg(slope, "slope")?);
        (*value, *slope) = curve.eval(log_r);
        Ok(())
    })
}

/// Runs a CLI command (`train`, `estimate-ratio`, `curves`, `gradcheck`,
/// `benchmark`) writing into `out_dir`. Relative data paths resolve
/// against `base_dir`, or the working directory when it is `NULL`.
/// Returns `RB_STATUS_CHECKS_FAILED` when the command completes but reports
/// failing checks.
///
/// # Safety
/// `command` and `out_dir` must be NUL-terminated, `base_dir` must be `NULL`
/// or NUL-terminated, and `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rb_run_command(
    command: *const c_char,
    cfg: *const RbConfig,
    base_dir: *const c_char,
    out_dir: *const c_char,
) -> RbStatus {
    guard(|| {
        let cmd: Command = parse(str_arg(command, "command")?)?;
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let base = if base_dir.is_null() { "." } else { str_arg(base_dir, "base_dir")? };
        let out = str_arg(out_dir, "out_dir")?;
        let outcome = run_command(cmd, &cfg.inner, Path::new(base), Path::new(out))?;
        if outcome.success {
            Ok(())
        } else {
            Err(Failure(RbStatus::ChecksFailed, format!("{} reported failing checks", cmd.name())))
        }
    })
}
