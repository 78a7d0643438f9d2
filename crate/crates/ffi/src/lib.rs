//! C interface to the `dppg` toolkit.
//!
//! Every function returns a [`DppgStatus`]; results are written through out
//! pointers. After a non-zero status, [`dppg_last_error_message`] describes
//! the failure on the calling thread. Objects are opaque handles created by
//! `*_new`/`*_load` functions and released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dppg_core::accountant::{self, Mechanism};
use dppg_core::config::ExperimentConfig;
use dppg_core::distributions::{ncx2_cdf, ncx2_quantile, NoncentralChiSq};
use dppg_core::harness;
use dppg_core::linalg::SquareMatrix;
use dppg_core::policies::PolicyParams;
use dppg_core::trust_region::{self, FisherMatrix, LossGapParams, TrustRegionParams};
use dppg_core::Error;

/// Outcome of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DppgStatus {
    Ok = 0,
    NullPointer = 1,
    /// Argument outside the domain of the operation.
    Domain = 2,
    /// Lengths or dimensions disagree.
    Dimension = 3,
    Contract = 4,
    /// Invalid configuration value.
    Config = 5,
    /// Unparseable file or string.
    Parse = 6,
    Io = 7,
    InvalidUtf8 = 8,
    Panic = 9,
}

/// Which Gaussian mechanism certifies a budget.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DppgMechanism {
    M1 = 1,
    M2 = 2,
}

/// Clipping-norm rule that needs no Fisher matrix.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DppgL2Rule {
    Quantile = 0,
    Markov = 1,
}

/// A symmetric positive semi-definite Fisher matrix.
pub struct DppgFisher(FisherMatrix);

/// A trained policy loaded from a checkpoint.
pub struct DppgPolicy(PolicyParams);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> DppgStatus {
    match e {
        Error::Domain(_) => DppgStatus::Domain,
        Error::Dimension { .. } => DppgStatus::Dimension,
        Error::Contract(_) => DppgStatus::Contract,
        Error::Config(_) => DppgStatus::Config,
        Error::Parse { .. } | Error::Json(_) => DppgStatus::Parse,
        Error::Io(_) => DppgStatus::Io,
    }
}

struct Fail(DppgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

type Outcome = Result<(), Fail>;

fn guard(f: impl FnOnce() -> Outcome) -> DppgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            DppgStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            DppgStatus::Panic
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(DppgStatus::NullPointer, format!("{name} is null"))
}

unsafe fn write<T>(out: *mut T, value: T, name: &str) -> Outcome {
    if out.is_null() {
        return Err(null(name));
    }
    // SAFETY: the caller guarantees `out` points to writable storage for a T.
    unsafe { out.write(value) };
    Ok(())
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    // SAFETY: the caller guarantees a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|e| Fail(DppgStatus::InvalidUtf8, format!("{name} is not UTF-8: {e}")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    // SAFETY: the caller guarantees `len` readable doubles at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `len` bytes. Returns the full
/// message length excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dppg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            // SAFETY: `buf` holds `len` bytes and `n < len`.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dppg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Privacy budget of one release with noise multiplier `z` at failure probability `delta`.
///
/// # Safety
/// `out_epsilon` must be valid for writes; `out_mechanism` may be null.
#[no_mangle]
pub unsafe extern "C" fn dppg_epsilon_of_z(
    z: f64,
    delta: f64,
    out_epsilon: *mut f64,
    out_mechanism: *mut DppgMechanism,
) -> DppgStatus {
    guard(|| {
        let b = accountant::epsilon_of_z(z, delta)?;
        unsafe { write(out_epsilon, b.epsilon, "out_epsilon")? };
        if !out_mechanism.is_null() {
            let m = match b.mechanism_used {
                Mechanism::M1 => DppgMechanism::M1,
                Mechanism::M2 => DppgMechanism::M2,
            };
            unsafe { write(out_mechanism, m, "out_mechanism")? };
        }
        Ok(())
    })
}

/// Smallest noise multiplier achieving `epsilon` at `delta`.
///
/// # Safety
/// `out_z` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dppg_z_of_epsilon(
    epsilon: f64,
    delta: f64,
    out_z: *mut f64,
) -> DppgStatus {
    guard(|| unsafe { write(out_z, accountant::z_of_epsilon(epsilon, delta)?, "out_z") })
}

/// Calibration constant of the classical Gaussian mechanism.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dppg_c1(delta: f64, out: *mut f64) -> DppgStatus {
    guard(|| unsafe { write(out, accountant::c1(delta)?, "out") })
}

/// Calibration constant of the improved Gaussian mechanism.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dppg_c2(delta: f64, out: *mut f64) -> DppgStatus {
    guard(|| unsafe { write(out, accountant::c2(delta)?, "out") })
}

/// CDF of the non-central chi-squared distribution.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dppg_ncx2_cdf(
    dof: usize,
    noncentrality: f64,
    x: f64,
    out: *mut f64,
) -> DppgStatus {
    guard(|| {
        let d = NoncentralChiSq::new(dof, noncentrality)?;
        unsafe { write(out, ncx2_cdf(&d, x), "out") }
    })
}

/// Quantile of the non-central chi-squared distribution.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dppg_ncx2_quantile(
    dof: usize,
    noncentrality: f64,
    p: f64,
    out: *mut f64,
) -> DppgStatus {
    guard(|| {
        let d = NoncentralChiSq::new(dof, noncentrality)?;
        unsafe { write(out, ncx2_quantile(&d, p)?, "out") }
    })
}

/// Clipping norm of an L2 trust-region rule.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dppg_clip_norm_l2(
    rule: DppgL2Rule,
    alpha: f64,
    beta: f64,
    eta: f64,
    z: f64,
    d: usize,
    out: *mut f64,
) -> DppgStatus {
    guard(|| {
        let p = TrustRegionParams::new(alpha, beta, eta, z, d)?;
        let s = match rule {
            DppgL2Rule::Quantile => trust_region::clip_norm_l2_quantile(&p)?,
            DppgL2Rule::Markov => trust_region::clip_norm_l2_markov(&p)?,
        };
        unsafe { write(out, s, "out") }
    })
}

/// Clipping norm of the KL trust-region rule for a Fisher matrix.
///
/// # Safety
/// `fisher` must come from [`dppg_fisher_new`]; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dppg_clip_norm_kl(
    fisher: *const DppgFisher,
    alpha: f64,
    beta: f64,
    eta: f64,
    z: f64,
    out: *mut f64,
) -> DppgStatus {
    guard(|| {
        let f = unsafe { fisher.as_ref() }.ok_or_else(|| null("fisher"))?;
        let p = TrustRegionParams::new(alpha, beta, eta, z, f.0.dim())?;
        unsafe { write(out, trust_region::clip_norm_kl(&p, &f.0)?, "out") }
    })
}

/// Clipping norm that keeps the objective gap within `lambda_slack` with probability `1 - beta2`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dppg_clip_norm_loss_gap(
    lambda_slack: f64,
    beta2: f64,
    grad_norm: f64,
    eta: f64,
    z: f64,
    out: *mut f64,
) -> DppgStatus {
    guard(|| {
        let p = LossGapParams::new(lambda_slack, beta2, grad_norm)?;
        unsafe { write(out, trust_region::clip_norm_loss_gap(&p, eta, z)?, "out") }
    })
}

/// Builds a Fisher matrix from `dim * dim` row-major entries.
///
/// # Safety
/// `data` must point to `dim * dim` doubles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dppg_fisher_new(
    data: *const f64,
    dim: usize,
    out: *mut *mut DppgFisher,
) -> DppgStatus {
    guard(|| {
        let n = dim
            .checked_mul(dim)
            .ok_or_else(|| Fail(DppgStatus::Domain, "dimension overflows".into()))?;
        let values = unsafe { slice_arg(data, n, "data")? }.to_vec();
        let f = FisherMatrix::new(SquareMatrix::from_row_major(dim, values)?)?;
        unsafe { write(out, Box::into_raw(Box::new(DppgFisher(f))), "out") }
    })
}

/// Largest eigenvalue and trace of a Fisher matrix.
///
/// # Safety
/// `fisher` must come from [`dppg_fisher_new`]; both out pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dppg_fisher_spectrum(
    fisher: *const DppgFisher,
    out_max_eigenvalue: *mut f64,
    out_trace: *mut f64,
) -> DppgStatus {
    guard(|| {
        let f = unsafe { fisher.as_ref() }.ok_or_else(|| null("fisher"))?;
        unsafe {
            write(
                out_max_eigenvalue,
                f.0.max_eigenvalue(),
                "out_max_eigenvalue",
            )?;
            write(out_trace, f.0.trace(), "out_trace")
        }
    })
}

/// Releases a Fisher matrix; null is ignored.
///
/// # Safety
/// `fisher` must be null or come from [`dppg_fisher_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dppg_fisher_free(fisher: *mut DppgFisher) {
    if !fisher.is_null() {
        drop(unsafe { Box::from_raw(fisher) });
    }
}

/// Loads a policy checkpoint written by the `dppg` command line.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dppg_policy_load(
    path: *const c_char,
    out: *mut *mut DppgPolicy,
) -> DppgStatus {
    guard(|| {
        let path = unsafe { str_arg(path, "path")? };
        let p = PolicyParams::load(Path::new(path))?;
        unsafe { write(out, Box::into_raw(Box::new(DppgPolicy(p))), "out") }
    })
}

/// Observation length, action count and parameter count of a policy.
///
/// # Safety
/// `policy` must come from [`dppg_policy_load`]; null out pointers are skipped.
#[no_mangle]
pub unsafe extern "C" fn dppg_policy_shape(
    policy: *const DppgPolicy,
    out_obs_dim: *mut usize,
    out_n_actions: *mut usize,
    out_param_dim: *mut usize,
) -> DppgStatus {
    guard(|| {
        let p = unsafe { policy.as_ref() }.ok_or_else(|| null("policy"))?;
        let arch = &p.0.arch;
        for (out, v, name) in [
            (out_obs_dim, arch.obs_dim(), "out_obs_dim"),
            (out_n_actions, arch.n_actions(), "out_n_actions"),
            (out_param_dim, arch.param_dim(), "out_param_dim"),
        ] {
            if !out.is_null() {
                unsafe { write(out, v, name)? };
            }
        }
        Ok(())
    })
}

/// Action probabilities of `policy` at one observation.
///
/// # Safety
/// `obs` must hold `obs_len` doubles and `out_probs` `n_actions` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dppg_policy_probabilities(
    policy: *const DppgPolicy,
    obs: *const f64,
    obs_len: usize,
    out_probs: *mut f64,
    n_actions: usize,
) -> DppgStatus {
    guard(|| {
        let p = unsafe { policy.as_ref() }.ok_or_else(|| null("policy"))?;
        let arch = &p.0.arch;
        if obs_len != arch.obs_dim() {
            return Err(Error::Dimension {
                expected: arch.obs_dim(),
                got: obs_len,
            }
            .into());
        }
        if n_actions != arch.n_actions() {
            return Err(Error::Dimension {
                expected: arch.n_actions(),
                got: n_actions,
            }
            .into());
        }
        if out_probs.is_null() {
            return Err(null("out_probs"));
        }
        let o = unsafe { slice_arg(obs, obs_len, "obs")? };
        let lp = arch.log_probs(&p.0.theta, o);
        // SAFETY: the caller provides `n_actions` writable doubles.
        let out = unsafe { std::slice::from_raw_parts_mut(out_probs, n_actions) };
        for (dst, l) in out.iter_mut().zip(lp) {
            *dst = l.exp();
        }
        Ok(())
    })
}

/// Releases a policy; null is ignored.
///
/// # Safety
/// `policy` must be null or come from [`dppg_policy_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dppg_policy_free(policy: *mut DppgPolicy) {
    if !policy.is_null() {
        drop(unsafe { Box::from_raw(policy) });
    }
}

/// Runs a training job described by a TOML config string and writes its
/// artifacts into `out_dir`. Riverswim configs run the linear experiment
/// with the configured variant; other environments train a neural policy.
/// The final mean evaluation return is written to `out_final_return`.
///
/// # Safety
/// Both strings must be NUL-terminated; `out_final_return` may be null.
#[no_mangle]
pub unsafe extern "C" fn dppg_train(
    config_toml: *const c_char,
    out_dir: *const c_char,
    out_final_return: *mut f64,
) -> DppgStatus {
    guard(|| {
        let text = unsafe { str_arg(config_toml, "config_toml")? };
        let dir = Path::new(unsafe { str_arg(out_dir, "out_dir")? });
        let cfg = ExperimentConfig::from_toml(text, Path::new("<config>"))?;
        let summary = if cfg.env == dppg_core::envs::EnvId::Riverswim {
            harness::run_train_riverswim(&cfg, cfg.linear.variant, dir)?.1
        } else {
            harness::run_train(&cfg, dir)?.1
        };
        if !out_final_return.is_null() {
            unsafe {
                write(
                    out_final_return,
                    summary.final_mean_return,
                    "out_final_return",
                )?
            };
        }
        Ok(())
    })
}
