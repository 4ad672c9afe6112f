//! C ABI for the `rismf` estimators.
//!
//! Conventions:
//!
//! - Every fallible function returns a [`RismfStatus`]. On failure a message
//!   is kept per thread and can be read with [`rismf_last_error_message`].
//! - Complex arrays are [`RismfComplex`] (two doubles) in column-major order.
//! - Results live behind opaque handles that the caller releases with the
//!   matching `_free` function. Passing NULL to a `_free` function is a no-op.
//! - Panics never cross the boundary; they are reported as
//!   [`RismfStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use num_complex::Complex64;
use rismf::faer::Mat;
use rismf::manifold::GridSearch;
use rismf::mf::{estimate_single_user, EstimateResult, MfConfig};
use rismf::multiuser::{estimate_multi_user, predicted_mse, MultiUserEstimate};
use rismf::signal::{orthogonal_user_pilots, DownlinkObservations, PilotSchedule, UplinkObservations, UplinkSchedule};
use rismf::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RismfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// Too few pilots or a numerically singular design.
    Infeasible = 4,
    /// The observations carry no energy.
    NoSignal = 5,
    /// Output buffer shorter than required.
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RismfComplex {
    pub re: f64,
    pub im: f64,
}

impl From<RismfComplex> for Complex64 {
    fn from(z: RismfComplex) -> Self {
        Complex64::new(z.re, z.im)
    }
}

impl From<Complex64> for RismfComplex {
    fn from(z: Complex64) -> Self {
        RismfComplex { re: z.re, im: z.im }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RismfSolver {
    AlternatingMinimization = 0,
    GradientDescent = 1,
}

/// Solver settings for [`rismf_single_user_estimate`].
pub struct RismfConfig {
    inner: MfConfig,
}

/// Result of [`rismf_single_user_estimate`].
pub struct RismfEstimate {
    inner: EstimateResult,
    n_bs: usize,
}

/// Result of [`rismf_multi_user_estimate`].
pub struct RismfMultiUserEstimate {
    inner: MultiUserEstimate,
    n_bs: usize,
    m_ris: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(RismfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimensionMismatch(_) => RismfStatus::DimensionMismatch,
            Error::NoSignal(_) => RismfStatus::NoSignal,
            e if e.is_infeasible() => RismfStatus::Infeasible,
            _ => RismfStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(RismfStatus::NullPointer, format!("{name} is NULL"))
}

/// Runs `f`, converting errors and panics to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RismfStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RismfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            RismfStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be NULL or point to `len` readable elements.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be NULL or point to `rows * cols` readable elements.
unsafe fn matrix(ptr: *const RismfComplex, rows: usize, cols: usize, name: &str) -> Result<Mat<Complex64>, Failure> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure(RismfStatus::InvalidArgument, format!("{name}: size overflows")))?;
    let data = slice(ptr, len, name)?;
    Ok(Mat::from_fn(rows, cols, |i, j| data[i + j * rows].into()))
}

/// # Safety
/// `out` must be NULL or point to `capacity` writable elements.
unsafe fn write_matrix(m: &Mat<Complex64>, out: *mut RismfComplex, capacity: usize) -> Result<(), Failure> {
    let needed = m.nrows() * m.ncols();
    if out.is_null() {
        return Err(null("out"));
    }
    if capacity < needed {
        return Err(Failure(
            RismfStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {needed} needed"),
        ));
    }
    let dst = std::slice::from_raw_parts_mut(out, needed);
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            dst[i + j * m.nrows()] = m[(i, j)].into();
        }
    }
    Ok(())
}

/// # Safety
/// `out` must be NULL or point to `capacity` writable elements.
unsafe fn write_vector(v: &[Complex64], out: *mut RismfComplex, capacity: usize) -> Result<(), Failure> {
    let m = Mat::from_fn(v.len(), 1, |i, _| v[i]);
    write_matrix(&m, out, capacity)
}

/// # Safety
/// `out` must be NULL or valid for a write.
unsafe fn put<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rismf_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains NUL"),
    };
    VERSION.as_ptr()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn rismf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// New solver settings with the defaults of `solver`.
#[no_mangle]
pub extern "C" fn rismf_config_new(solver: RismfSolver) -> *mut RismfConfig {
    let inner = match solver {
        RismfSolver::AlternatingMinimization => MfConfig::am(),
        RismfSolver::GradientDescent => MfConfig::gd(),
    };
    Box::into_raw(Box::new(RismfConfig { inner }))
}

/// # Safety
/// `config` must come from [`rismf_config_new`].
#[no_mangle]
pub unsafe extern "C" fn rismf_config_set_max_iters(config: *mut RismfConfig, max_iters: usize) -> RismfStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| null("config"))?;
        c.inner.max_iters = max_iters;
        c.inner.validate()?;
        Ok(())
    })
}

/// # Safety
/// `config` must be NULL or come from [`rismf_config_new`], and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn rismf_config_free(config: *mut RismfConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Single-user downlink estimate from `k` received samples.
///
/// `pilots` is `n_bs x k`, `phases` is `m_ris x k`, `received` has `k`
/// entries. A NULL `config` selects alternating minimization with defaults.
///
/// # Safety
/// Array arguments must point to the stated number of elements; `out` must
/// be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn rismf_single_user_estimate(
    n_bs: usize,
    m_ris: usize,
    k: usize,
    pilots: *const RismfComplex,
    phases: *const RismfComplex,
    received: *const RismfComplex,
    noise_var: f64,
    config: *const RismfConfig,
    out: *mut *mut RismfEstimate,
) -> RismfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(std::ptr::null_mut());
        let sched = PilotSchedule::new(matrix(pilots, n_bs, k, "pilots")?, matrix(phases, m_ris, k, "phases")?)?;
        let r = slice(received, k, "received")?.iter().map(|&z| z.into()).collect();
        let obs = DownlinkObservations { r, noise_var };
        let default = MfConfig::am();
        let cfg = config.as_ref().map_or(&default, |c| &c.inner);
        let inner = estimate_single_user(&obs, &sched, cfg)?;
        out.write(Box::into_raw(Box::new(RismfEstimate { inner, n_bs })));
        Ok(())
    })
}

/// # Safety
/// `est` must come from [`rismf_single_user_estimate`]; `psi` must be valid
/// for a write.
#[no_mangle]
pub unsafe extern "C" fn rismf_estimate_psi(est: *const RismfEstimate, psi: *mut f64) -> RismfStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("est"))?;
        put(psi, e.inner.psi_hat, "psi")
    })
}

/// Iterations used and whether the stopping rule was met.
///
/// # Safety
/// `est` must come from [`rismf_single_user_estimate`]; outputs must be
/// valid for a write.
#[no_mangle]
pub unsafe extern "C" fn rismf_estimate_iterations(
    est: *const RismfEstimate,
    iters: *mut usize,
    converged: *mut bool,
) -> RismfStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("est"))?;
        put(iters, e.inner.iters_used, "iters")?;
        put(converged, e.inner.converged, "converged")
    })
}

/// Writes the `m_ris x n_bs` channel estimate.
///
/// # Safety
/// `est` must come from [`rismf_single_user_estimate`]; `out` must hold
/// `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn rismf_estimate_channel(
    est: *const RismfEstimate,
    out: *mut RismfComplex,
    capacity: usize,
) -> RismfStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("est"))?;
        debug_assert_eq!(e.inner.h_e_hat.ncols(), e.n_bs);
        write_matrix(&e.inner.h_e_hat, out, capacity)
    })
}

/// Writes the `m_ris` entries of the RIS-side factor.
///
/// # Safety
/// `est` must come from [`rismf_single_user_estimate`]; `out` must hold
/// `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn rismf_estimate_a_bar(
    est: *const RismfEstimate,
    out: *mut RismfComplex,
    capacity: usize,
) -> RismfStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("est"))?;
        write_vector(&e.inner.a_bar_hat, out, capacity)
    })
}

/// # Safety
/// `est` must be NULL or come from [`rismf_single_user_estimate`], and not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rismf_estimate_free(est: *mut RismfEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Two-stage uplink estimate for `q_users` users over `k` blocks of
/// `t_symbols` symbols.
///
/// `phases` is `m_ris x k`. `received` is `n_bs x (k * t_symbols)`, block
/// `j` in columns `j t .. (j + 1) t`. `user_pilots` is `t_symbols x q_users`
/// with orthogonal columns of energy `t_symbols`, reused in every block;
/// NULL selects the DFT pilots.
///
/// # Safety
/// Array arguments must point to the stated number of elements; `out` must
/// be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn rismf_multi_user_estimate(
    n_bs: usize,
    m_ris: usize,
    q_users: usize,
    t_symbols: usize,
    k: usize,
    phases: *const RismfComplex,
    received: *const RismfComplex,
    user_pilots: *const RismfComplex,
    noise_var: f64,
    out: *mut *mut RismfMultiUserEstimate,
) -> RismfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(std::ptr::null_mut());
        let theta = matrix(phases, m_ris, k, "phases")?;
        let x = if user_pilots.is_null() {
            orthogonal_user_pilots(q_users, t_symbols)?
        } else {
            matrix(user_pilots, t_symbols, q_users, "user_pilots")?
        };
        let sched = UplinkSchedule::new(theta, vec![x; k])?;
        let cols = k
            .checked_mul(t_symbols)
            .ok_or_else(|| Failure(RismfStatus::InvalidArgument, "k * t_symbols overflows".into()))?;
        let y = matrix(received, n_bs, cols, "received")?;
        let blocks = (0..k).map(|j| y.as_ref().subcols(j * t_symbols, t_symbols).to_owned()).collect();
        if !(noise_var >= 0.0) || !noise_var.is_finite() {
            return Err(Failure(RismfStatus::InvalidArgument, format!("noise variance {noise_var}")));
        }
        let obs = UplinkObservations { blocks, noise_var };
        let inner = estimate_multi_user(&obs, &sched, &GridSearch::default(), None)?;
        out.write(Box::into_raw(Box::new(RismfMultiUserEstimate { inner, n_bs, m_ris })));
        Ok(())
    })
}

/// # Safety
/// `est` must come from [`rismf_multi_user_estimate`]; outputs must be valid
/// for a write.
#[no_mangle]
pub unsafe extern "C" fn rismf_multi_user_summary(
    est: *const RismfMultiUserEstimate,
    psi: *mut f64,
    n_users: *mut usize,
    predicted_mse: *mut f64,
) -> RismfStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("est"))?;
        put(psi, e.inner.psi_hat, "psi")?;
        put(n_users, e.inner.h_q_hats.len(), "n_users")?;
        put(predicted_mse, e.inner.predicted_mse, "predicted_mse")
    })
}

/// Writes the `n_bs x m_ris` channel estimate of user `user`.
///
/// # Safety
/// `est` must come from [`rismf_multi_user_estimate`]; `out` must hold
/// `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn rismf_multi_user_channel(
    est: *const RismfMultiUserEstimate,
    user: usize,
    out: *mut RismfComplex,
    capacity: usize,
) -> RismfStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("est"))?;
        let h = e.inner.h_q_hats.get(user).ok_or_else(|| {
            Failure(
                RismfStatus::InvalidArgument,
                format!("user {user} out of range ({} users)", e.inner.h_q_hats.len()),
            )
        })?;
        debug_assert_eq!((h.nrows(), h.ncols()), (e.n_bs, e.m_ris));
        write_matrix(h, out, capacity)
    })
}

/// # Safety
/// `est` must be NULL or come from [`rismf_multi_user_estimate`], and not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rismf_multi_user_free(est: *mut RismfMultiUserEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// `||h_true - h_hat||_F^2 / ||h_true||_F^2` for `rows x cols` matrices.
///
/// # Safety
/// Both arrays must hold `rows * cols` values; `out` must be valid for a
/// write.
#[no_mangle]
pub unsafe extern "C" fn rismf_nmse(
    h_true: *const RismfComplex,
    h_hat: *const RismfComplex,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> RismfStatus {
    guard(|| {
        let a = matrix(h_true, rows, cols, "h_true")?;
        let b = matrix(h_hat, rows, cols, "h_hat")?;
        put(out, rismf::experiments::nmse(a.as_ref(), b.as_ref())?, "out")
    })
}

/// Predicted uplink MSE of the RIS factor for an `m_ris x k` phase design.
///
/// # Safety
/// `phases` must hold `m_ris * k` values; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn rismf_predicted_mse(
    noise_var: f64,
    t_symbols: usize,
    phases: *const RismfComplex,
    m_ris: usize,
    k: usize,
    out: *mut f64,
) -> RismfStatus {
    guard(|| {
        let theta = matrix(phases, m_ris, k, "phases")?;
        put(out, predicted_mse(noise_var, t_symbols, theta.as_ref())?, "out")
    })
}
