//! Single-user downlink estimation by rank-one matrix factorization.
//!
//! The cascaded channel is modelled as `H_e = a_bar a_B(psi)^H`, so slot `k`
//! observes `r_k = (theta_k^T a_bar) (a_B(psi)^H x_k) + n_k`. The estimator
//! minimizes
//!
//! ```text
//! J(a_bar, psi) = sum_k | theta_k^T a_bar a_B(psi)^H x_k - r_k |^2
//! ```
//!
//! starting from a spectral initialization (`psi` from the correlation matrix
//! `S`, then `a_bar` by least squares) and refining with either alternating
//! minimization or plain gradient descent on `(Re a_bar, Im a_bar, psi)`.

use std::f64::consts::PI;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::channel::{array_response, wrap_angle};
use crate::error::{Error, Result};
use crate::manifold::{GridSearch, SteeringQuadratic};
use crate::signal::{noiseless_downlink, DownlinkObservations, PilotSchedule};
use crate::{linalg, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Alternate a grid search over `psi` with an exact LS solve for `a_bar`.
    #[serde(rename = "am")]
    AlternatingMinimization,
    /// Gradient steps on `(Re a_bar, Im a_bar, psi)` with a shared step size.
    #[serde(rename = "gd")]
    GradientDescent,
}

/// How gradient steps are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GdScaling {
    /// `theta <- theta - eta * grad`, one `eta` for every parameter.
    #[default]
    Plain,
    /// Each block's gradient is divided by its diagonal Gauss-Newton
    /// curvature, so `eta = 1` is a full Gauss-Newton step per block.
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfConfig {
    pub solver: Solver,
    pub max_iters: usize,
    /// Gradient step size (eta).
    pub step_size: f64,
    /// Halve the step until `J` does not increase.
    pub backtracking: bool,
    pub max_halvings: usize,
    pub gd_scaling: GdScaling,
    /// Stop when the relative decrease of `J` falls below this.
    pub tol_objective: f64,
    pub search: GridSearch,
    /// Least-squares solves fail above this condition estimate.
    pub max_condition: f64,
}

impl MfConfig {
    pub fn am() -> Self {
        Self {
            solver: Solver::AlternatingMinimization,
            max_iters: 200,
            step_size: 1e-2,
            backtracking: true,
            max_halvings: 30,
            gd_scaling: GdScaling::Plain,
            tol_objective: 1e-10,
            search: GridSearch::default(),
            max_condition: 1e12,
        }
    }

    /// Gradient descent with per-block curvature scaling and unit step.
    pub fn gd() -> Self {
        Self {
            solver: Solver::GradientDescent,
            max_iters: 2000,
            step_size: 1.0,
            gd_scaling: GdScaling::Diagonal,
            ..Self::am()
        }
    }

    /// Gradient descent with one shared step `eta = 1e-2` for all parameters.
    pub fn gd_plain() -> Self {
        Self {
            step_size: 1e-2,
            gd_scaling: GdScaling::Plain,
            ..Self::gd()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be positive".into()));
        }
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidArgument(format!("step size {}", self.step_size)));
        }
        if !(self.tol_objective > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance {}", self.tol_objective)));
        }
        if !(self.max_condition > 1.0) {
            return Err(Error::InvalidArgument(format!("condition limit {}", self.max_condition)));
        }
        self.search.validate()
    }
}

impl Default for MfConfig {
    fn default() -> Self {
        Self::am()
    }
}

/// Iterate of the factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct MfState {
    pub a_bar: Vec<C64>,
    pub psi: f64,
    /// `J` after initialization and after every iteration.
    pub objective_history: Vec<f64>,
    pub iter: usize,
}

#[derive(Debug, Clone)]
pub struct EstimateResult {
    /// `a_bar_hat a_B(psi_hat)^H`, `M x N`.
    pub h_e_hat: Mat<C64>,
    pub psi_hat: f64,
    pub a_bar_hat: Vec<C64>,
    pub objective_final: f64,
    pub objective_history: Vec<f64>,
    pub iters_used: usize,
    pub converged: bool,
}

fn check_dims(a_bar: Option<&[C64]>, obs: &DownlinkObservations, sched: &PilotSchedule) -> Result<()> {
    if obs.len() != sched.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations for {} scheduled slots",
            obs.len(),
            sched.len()
        )));
    }
    if let Some(a) = a_bar {
        if a.len() != sched.m_ris() {
            return Err(Error::DimensionMismatch(format!(
                "a_bar has {} entries, RIS has {}",
                a.len(),
                sched.m_ris()
            )));
        }
    }
    Ok(())
}

/// `theta_k^T a_bar` for every slot.
fn phase_projections(a_bar: &[C64], sched: &PilotSchedule) -> Vec<C64> {
    (0..sched.len())
        .map(|k| {
            let mut acc = C64::new(0.0, 0.0);
            for (m, a) in a_bar.iter().enumerate() {
                acc += sched.phases[(m, k)] * a;
            }
            acc
        })
        .collect()
}

/// `a_B(psi)^H x_k` for every slot.
fn beam_projections(psi: f64, sched: &PilotSchedule) -> Vec<C64> {
    let a = array_response(sched.n_bs(), psi);
    (0..sched.len())
        .map(|k| {
            let mut acc = C64::new(0.0, 0.0);
            for (n, an) in a.iter().enumerate() {
                acc += an.conj() * sched.pilots[(n, k)];
            }
            acc
        })
        .collect()
}

/// `J(a_bar, psi) = sum_k |theta_k^T a_bar a_B(psi)^H x_k - r_k|^2`.
pub fn objective(a_bar: &[C64], psi: f64, obs: &DownlinkObservations, sched: &PilotSchedule) -> f64 {
    let t = phase_projections(a_bar, sched);
    let u = beam_projections(psi, sched);
    t.iter()
        .zip(u.iter())
        .zip(obs.r.iter())
        .map(|((tk, uk), rk)| (tk * uk - rk).norm_sqr())
        .sum()
}

/// `S = (sqrt(N) / K) sum_k r_k conj(theta_k) x_k^H`, `M x N`.
pub fn spectral_matrix(obs: &DownlinkObservations, sched: &PilotSchedule) -> Result<Mat<C64>> {
    check_dims(None, obs, sched)?;
    let k = sched.len();
    if k == 0 {
        return Err(Error::InvalidArgument("no training slots".into()));
    }
    let scale = (sched.n_bs() as f64).sqrt() / k as f64;
    let weighted = Mat::from_fn(sched.m_ris(), k, |m, j| sched.phases[(m, j)].conj() * obs.r[j] * scale);
    Ok(weighted.as_ref() * sched.pilots.adjoint())
}

/// `argmax_psi ||S a_B(psi)||^2`.
pub fn init_psi(s: MatRef<'_, C64>, search: &GridSearch) -> Result<f64> {
    if linalg::fro_norm_sqr(s) == 0.0 {
        return Err(Error::NoSignal("spectral matrix is zero"));
    }
    let q = SteeringQuadratic::from_gram((s.adjoint() * s).as_ref());
    Ok(search.maximize(s.ncols(), |psi| q.eval(psi)))
}

/// Least-squares `a_bar` for fixed `psi`: rows of the design are
/// `(a_B(psi)^H x_k) theta_k^T`.
pub fn ls_a_bar(
    psi: f64,
    obs: &DownlinkObservations,
    sched: &PilotSchedule,
    max_condition: f64,
) -> Result<Vec<C64>> {
    check_dims(None, obs, sched)?;
    let (k, m) = (sched.len(), sched.m_ris());
    if k < m {
        return Err(Error::RankDeficient(format!(
            "{k} pilots cannot determine {m} RIS coefficients"
        )));
    }
    let u = beam_projections(psi, sched);
    let design = Mat::from_fn(k, m, |row, col| u[row] * sched.phases[(col, row)]);
    linalg::lstsq(design.as_ref(), &obs.r, max_condition)
}

/// Spectral initialization: `psi` from [`init_psi`], then [`ls_a_bar`].
pub fn initialize(obs: &DownlinkObservations, sched: &PilotSchedule, config: &MfConfig) -> Result<MfState> {
    check_dims(None, obs, sched)?;
    if obs.r.iter().all(|r| *r == C64::new(0.0, 0.0)) {
        return Err(Error::NoSignal("all observations are zero"));
    }
    let s = spectral_matrix(obs, sched)?;
    let psi = init_psi(s.as_ref(), &config.search)?;
    let a_bar = ls_a_bar(psi, obs, sched, config.max_condition)?;
    let j = objective(&a_bar, psi, obs, sched);
    Ok(MfState {
        a_bar,
        psi,
        objective_history: vec![j],
        iter: 0,
    })
}

fn current_objective(state: &MfState, obs: &DownlinkObservations, sched: &PilotSchedule) -> f64 {
    state
        .objective_history
        .last()
        .copied()
        .unwrap_or_else(|| objective(&state.a_bar, state.psi, obs, sched))
}

/// One alternating-minimization step.
///
/// The `psi` update minimizes `||a_B(psi)^H A - r^T||^2` with
/// `A[:, k] = (theta_k^T a_bar) x_k`, and is kept only if it does not raise
/// `J`. The `a_bar` update is the exact least-squares solution at the new
/// angle.
pub fn am_iterate(
    state: &MfState,
    obs: &DownlinkObservations,
    sched: &PilotSchedule,
    config: &MfConfig,
) -> Result<MfState> {
    check_dims(Some(&state.a_bar), obs, sched)?;
    let j_old = current_objective(state, obs, sched);
    let t = phase_projections(&state.a_bar, sched);
    let (n, k) = (sched.n_bs(), sched.len());

    // J(psi) = a^H (A A^H) a - 2 Re{a^H A conj(r)} + ||r||^2
    let a_mat = Mat::from_fn(n, k, |i, j| sched.pilots[(i, j)] * t[j]);
    let gram = a_mat.as_ref() * a_mat.adjoint();
    let mut lin = vec![C64::new(0.0, 0.0); n];
    for j in 0..k {
        let rc = obs.r[j].conj();
        for (i, l) in lin.iter_mut().enumerate() {
            *l += a_mat[(i, j)] * rc;
        }
    }
    let q = SteeringQuadratic::from_gram(gram.as_ref()).with_linear(lin, linalg::norm_sqr(&obs.r));
    let candidate = config.search.maximize(n, |psi| -q.eval(psi));

    let j_same = objective(&state.a_bar, state.psi, obs, sched);
    let j_cand = objective(&state.a_bar, candidate, obs, sched);
    let (psi, j_mid) = if j_cand <= j_same {
        (candidate, j_cand)
    } else {
        (state.psi, j_same)
    };

    let refit = ls_a_bar(psi, obs, sched, config.max_condition)?;
    let j_refit = objective(&refit, psi, obs, sched);
    let (a_bar, j_new) = if j_refit <= j_mid {
        (refit, j_refit)
    } else {
        (state.a_bar.clone(), j_mid)
    };

    let mut history = state.objective_history.clone();
    if history.is_empty() {
        history.push(j_old);
    }
    history.push(j_new);
    Ok(MfState {
        a_bar,
        psi,
        objective_history: history,
        iter: state.iter + 1,
    })
}

/// Partial derivatives of `J` with respect to the real parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub re_a: Vec<f64>,
    pub im_a: Vec<f64>,
    pub psi: f64,
}

/// Gradients of `J` with respect to `Re a_bar`, `Im a_bar` and `psi`.
///
/// With `t_k = theta_k^T a_bar`, `u_k = a_B^H x_k` and `e_k = t_k u_k - r_k`:
///
/// - `dJ/dRe a_bar = Re{ sum_k 2 conj(u_k) conj(theta_k) e_k }`, and the same
///   sum's imaginary part for `Im a_bar`;
/// - `dJ/dRe a_B = Re{ sum_k 2 t_k x_k conj(e_k) }`, imaginary part for
///   `Im a_B`;
/// - `psi` by the chain rule through `dRe a_B/dpsi = -sin(psi z) z / sqrt(N)`
///   and `dIm a_B/dpsi = -cos(psi z) z / sqrt(N)`, `z = 2 pi [0, .., N-1]`.
pub fn gd_gradients(a_bar: &[C64], psi: f64, obs: &DownlinkObservations, sched: &PilotSchedule) -> Gradients {
    let (m, n) = (sched.m_ris(), sched.n_bs());
    let t = phase_projections(a_bar, sched);
    let u = beam_projections(psi, sched);

    let mut grad_a = vec![C64::new(0.0, 0.0); m];
    let mut grad_b = vec![C64::new(0.0, 0.0); n];
    for k in 0..sched.len() {
        let e = t[k] * u[k] - obs.r[k];
        let wa = 2.0 * u[k].conj() * e;
        for (i, g) in grad_a.iter_mut().enumerate() {
            *g += sched.phases[(i, k)].conj() * wa;
        }
        let wb = 2.0 * t[k] * e.conj();
        for (i, g) in grad_b.iter_mut().enumerate() {
            *g += sched.pilots[(i, k)] * wb;
        }
    }

    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let mut grad_psi = 0.0;
    for (i, g) in grad_b.iter().enumerate() {
        let z = 2.0 * PI * i as f64;
        let (sin, cos) = (psi * z).sin_cos();
        grad_psi += g.re * (-inv_sqrt_n * sin * z) + g.im * (-inv_sqrt_n * cos * z);
    }

    Gradients {
        re_a: grad_a.iter().map(|g| g.re).collect(),
        im_a: grad_a.iter().map(|g| g.im).collect(),
        psi: grad_psi,
    }
}

/// Gauss-Newton curvature of `J` along one coordinate of `a_bar`
/// (`2 sum_k |u_k|^2`, the same for every entry and for real and imaginary
/// parts) and along `psi` (`2 sum_k |t_k|^2 |du_k/dpsi|^2`).
fn diagonal_curvature(a_bar: &[C64], psi: f64, sched: &PilotSchedule) -> (f64, f64) {
    let n = sched.n_bs();
    let t = phase_projections(a_bar, sched);
    let u = beam_projections(psi, sched);
    let a = array_response(n, psi);
    // d conj(a_n)/dpsi = j 2 pi n conj(a_n)
    let da: Vec<C64> = a
        .iter()
        .enumerate()
        .map(|(i, ai)| C64::new(0.0, 2.0 * PI * i as f64) * ai.conj())
        .collect();
    let mut ca = 0.0;
    let mut cpsi = 0.0;
    for k in 0..sched.len() {
        ca += 2.0 * u[k].norm_sqr();
        let du: C64 = (0..n).map(|i| da[i] * sched.pilots[(i, k)]).sum();
        cpsi += 2.0 * t[k].norm_sqr() * du.norm_sqr();
    }
    (ca, cpsi)
}

/// One gradient step of size `step_size`, halved up to `max_halvings` times
/// when backtracking is enabled and the full step raises `J`. If no trial
/// step is acceptable the state is returned unchanged (with `J` appended).
pub fn gd_iterate(
    state: &MfState,
    obs: &DownlinkObservations,
    sched: &PilotSchedule,
    config: &MfConfig,
) -> Result<MfState> {
    check_dims(Some(&state.a_bar), obs, sched)?;
    let j_old = current_objective(state, obs, sched);
    let mut grad = gd_gradients(&state.a_bar, state.psi, obs, sched);
    if config.gd_scaling == GdScaling::Diagonal {
        let (ca, cpsi) = diagonal_curvature(&state.a_bar, state.psi, sched);
        if ca > 0.0 {
            grad.re_a.iter_mut().chain(grad.im_a.iter_mut()).for_each(|g| *g /= ca);
        }
        if cpsi > 0.0 {
            grad.psi /= cpsi;
        }
    }
    let attempts = if config.backtracking { config.max_halvings + 1 } else { 1 };

    let mut eta = config.step_size;
    let mut accepted = None;
    for _ in 0..attempts {
        let a_bar: Vec<C64> = state
            .a_bar
            .iter()
            .enumerate()
            .map(|(i, a)| C64::new(a.re - eta * grad.re_a[i], a.im - eta * grad.im_a[i]))
            .collect();
        let psi = wrap_angle(state.psi - eta * grad.psi);
        let j = objective(&a_bar, psi, obs, sched);
        if !config.backtracking || j <= j_old {
            accepted = Some((a_bar, psi, j));
            break;
        }
        eta *= 0.5;
    }

    let mut history = state.objective_history.clone();
    if history.is_empty() {
        history.push(j_old);
    }
    let (a_bar, psi, j) = accepted.unwrap_or_else(|| (state.a_bar.clone(), state.psi, j_old));
    history.push(j);
    Ok(MfState {
        a_bar,
        psi,
        objective_history: history,
        iter: state.iter + 1,
    })
}

impl EstimateResult {
    fn from_state(state: MfState, n_bs: usize, converged: bool) -> Self {
        let h_e_hat = linalg::outer(&state.a_bar, &array_response(n_bs, state.psi));
        Self {
            h_e_hat,
            psi_hat: state.psi,
            objective_final: *state.objective_history.last().unwrap_or(&f64::NAN),
            a_bar_hat: state.a_bar,
            objective_history: state.objective_history,
            iters_used: state.iter,
            converged,
        }
    }
}

/// Runs the full estimator: spectral initialization, then AM or GD
/// iterations until the relative decrease of `J` drops below
/// `tol_objective` or `max_iters` is reached. A run that hits the iteration
/// cap returns the best iterate with `converged = false`.
pub fn estimate_single_user(
    obs: &DownlinkObservations,
    sched: &PilotSchedule,
    config: &MfConfig,
) -> Result<EstimateResult> {
    config.validate()?;
    let mut state = initialize(obs, sched, config)?;
    let mut best: Option<MfState> = None;
    let mut converged = state.objective_history[0] == 0.0;

    while !converged && state.iter < config.max_iters {
        let prev = current_objective(&state, obs, sched);
        let next = match config.solver {
            Solver::AlternatingMinimization => am_iterate(&state, obs, sched, config)?,
            Solver::GradientDescent => gd_iterate(&state, obs, sched, config)?,
        };
        let j = current_objective(&next, obs, sched);
        let decrease = prev - j;
        converged = j == 0.0 || (decrease >= 0.0 && decrease < config.tol_objective * prev);
        if best
            .as_ref()
            .is_none_or(|b| j < current_objective(b, obs, sched))
        {
            best = Some(next.clone());
        }
        state = next;
    }

    // Without backtracking GD can overshoot; report the best iterate seen.
    if !converged {
        if let Some(b) = best {
            if current_objective(&b, obs, sched) < current_objective(&state, obs, sched) {
                let mut b = b;
                b.objective_history = state.objective_history.clone();
                b.objective_history.push(current_objective(&b, obs, sched));
                b.iter = state.iter;
                state = b;
            }
        }
    }
    Ok(EstimateResult::from_state(state, sched.n_bs(), converged))
}

/// Per-path estimates from successive cancellation and their sum.
#[derive(Debug, Clone)]
pub struct MultipathEstimate {
    pub paths: Vec<EstimateResult>,
    pub h_e_hat: Mat<C64>,
}

/// Successive multipath estimation: path `l` is estimated with
/// [`estimate_single_user`] after subtracting the predicted observations of
/// paths `1..l`.
pub fn estimate_multipath(
    obs: &DownlinkObservations,
    sched: &PilotSchedule,
    config: &MfConfig,
    n_paths: usize,
) -> Result<MultipathEstimate> {
    estimate_multipath_refined(obs, sched, config, n_paths, 0)
}

/// [`estimate_multipath`] followed by `sweeps` backfitting passes: each path
/// is re-estimated from the observations minus the current predictions of
/// all other paths.
pub fn estimate_multipath_refined(
    obs: &DownlinkObservations,
    sched: &PilotSchedule,
    config: &MfConfig,
    n_paths: usize,
    sweeps: usize,
) -> Result<MultipathEstimate> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    let mut residual = obs.clone();
    let mut paths = Vec::with_capacity(n_paths);
    let mut predictions = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let est = estimate_single_user(&residual, sched, config)?;
        let predicted = noiseless_downlink(est.h_e_hat.as_ref(), sched)?;
        for (r, p) in residual.r.iter_mut().zip(&predicted) {
            *r -= p;
        }
        paths.push(est);
        predictions.push(predicted);
    }
    for _ in 0..sweeps {
        for l in 0..n_paths {
            // Put path l back, re-fit it, take the new fit out again.
            for (r, p) in residual.r.iter_mut().zip(&predictions[l]) {
                *r += p;
            }
            let est = estimate_single_user(&residual, sched, config)?;
            let predicted = noiseless_downlink(est.h_e_hat.as_ref(), sched)?;
            for (r, p) in residual.r.iter_mut().zip(&predicted) {
                *r -= p;
            }
            paths[l] = est;
            predictions[l] = predicted;
        }
    }
    let mut total = Mat::<C64>::zeros(sched.m_ris(), sched.n_bs());
    for p in &paths {
        total = &total + &p.h_e_hat;
    }
    Ok(MultipathEstimate { paths, h_e_hat: total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{circular_distance, GainModel, Path, SystemDims};
    use crate::experiments::metrics::nmse;
    use crate::random::{complex_gaussian, rng_for, Stream};
    use crate::scenario::DownlinkScenario;
    use crate::signal::{noise_var_from_snr_db, ScheduleKind};

    fn scenario(n: usize, m: usize, k: usize, noise_var: f64, seed: u64) -> DownlinkScenario {
        DownlinkScenario::sample(&SystemDims::single_user(n, m, k), ScheduleKind::Random, noise_var, seed).unwrap()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn objective_examples() {
        let sc = scenario(6, 8, 20, 0.0, 1);
        let j = objective(&sc.cascade.a_bar, sc.cascade.psi, &sc.obs, &sc.schedule);
        assert!(j <= 1e-18 * linalg::norm_sqr(&sc.obs.r));

        let zero = vec![c(0.0, 0.0); 8];
        let j = objective(&zero, 0.3, &sc.obs, &sc.schedule);
        assert!((j - linalg::norm_sqr(&sc.obs.r)).abs() <= 1e-14);

        // Term-by-term oracle with explicit theta^T a_bar a^H x.
        let noisy = scenario(5, 7, 15, 0.4, 2);
        let mut rng = rng_for(2, Stream::Design);
        let a_bar: Vec<C64> = (0..7).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let psi = 0.613;
        let h = linalg::outer(&a_bar, &array_response(5, psi));
        let mut oracle = 0.0;
        for k in 0..15 {
            let mut pred = c(0.0, 0.0);
            for m in 0..7 {
                for n in 0..5 {
                    pred += noisy.schedule.phases[(m, k)] * h[(m, n)] * noisy.schedule.pilots[(n, k)];
                }
            }
            oracle += (pred - noisy.obs.r[k]).norm_sqr();
        }
        let got = objective(&a_bar, psi, &noisy.obs, &noisy.schedule);
        assert!((got - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn spectral_matrix_examples() {
        let n = 4;
        let theta = Mat::from_fn(3, 1, |_, _| c(1.0, 0.0));
        let mut x = Mat::<C64>::zeros(n, 1);
        x[(0, 0)] = c(1.0, 0.0);
        let sched = PilotSchedule::new(x, theta).unwrap();
        let obs = DownlinkObservations { r: vec![c(1.0, 0.0)], noise_var: 0.0 };
        let s = spectral_matrix(&obs, &sched).unwrap();
        for m in 0..3 {
            for j in 0..n {
                let e = if j == 0 { c(2.0, 0.0) } else { c(0.0, 0.0) };
                assert!((s[(m, j)] - e).norm() < 1e-15);
            }
        }

        let sc = scenario(5, 6, 12, 0.2, 3);
        let zero = DownlinkObservations { r: vec![c(0.0, 0.0); 12], noise_var: 0.0 };
        assert_eq!(linalg::fro_norm_sqr(spectral_matrix(&zero, &sc.schedule).unwrap().as_ref()), 0.0);

        let s = spectral_matrix(&sc.obs, &sc.schedule).unwrap();
        let mut oracle = Mat::<C64>::zeros(6, 5);
        for k in 0..12 {
            for m in 0..6 {
                for j in 0..5 {
                    oracle[(m, j)] += sc.obs.r[k] * sc.schedule.phases[(m, k)].conj() * sc.schedule.pilots[(j, k)].conj();
                }
            }
        }
        let scale = 5f64.sqrt() / 12.0;
        let oracle = Mat::from_fn(6, 5, |i, j| oracle[(i, j)] * scale);
        assert!(linalg::fro_dist_sqr(s.as_ref(), oracle.as_ref()).sqrt() <= 1e-13);
    }

    fn fine_grid_argmax(s: MatRef<'_, C64>, points: usize) -> f64 {
        let q = SteeringQuadratic::from_gram((s.adjoint() * s).as_ref());
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..points {
            let psi = i as f64 / points as f64;
            let v = q.eval(psi);
            if v > best.0 {
                best = (v, psi);
            }
        }
        best.1
    }

    #[test]
    fn init_psi_agrees_with_fine_grid() {
        for seed in 0..3 {
            let sc = scenario(16, 32, 32, 0.0, 10 + seed);
            let s = spectral_matrix(&sc.obs, &sc.schedule).unwrap();
            let got = init_psi(s.as_ref(), &GridSearch::default()).unwrap();
            let oracle = fine_grid_argmax(s.as_ref(), 1_000_000);
            assert!(circular_distance(got, oracle) <= 1e-6, "seed {seed}: {got} vs {oracle}");
        }
    }

    #[test]
    fn init_psi_exact_on_rank_one_input() {
        let w: Vec<C64> = (0..5).map(|i| c(i as f64 + 1.0, 0.5)).collect();
        for psi in [0.05, 0.5, 0.93] {
            let s = linalg::outer(&w, &array_response(12, psi));
            let got = init_psi(s.as_ref(), &GridSearch::default()).unwrap();
            assert!(circular_distance(got, psi) <= 1e-8);
        }
        let zero = Mat::<C64>::zeros(3, 4);
        assert!(matches!(init_psi(zero.as_ref(), &GridSearch::default()), Err(Error::NoSignal(_))));
    }

    #[test]
    fn init_psi_median_error_at_ten_db() {
        let mut errs: Vec<f64> = (0..100)
            .map(|seed| {
                let sc = scenario(16, 32, 128, 0.1, 100 + seed);
                let s = spectral_matrix(&sc.obs, &sc.schedule).unwrap();
                circular_distance(init_psi(s.as_ref(), &GridSearch::default()).unwrap(), sc.cascade.psi)
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        let median = 0.5 * (errs[49] + errs[50]);
        assert!(median <= 1e-2, "median {median}");
    }

    #[test]
    fn ls_a_bar_examples() {
        let sc = scenario(8, 10, 30, 0.0, 4);
        let a = ls_a_bar(sc.cascade.psi, &sc.obs, &sc.schedule, 1e12).unwrap();
        let err = a.iter().zip(sc.cascade.a_bar.iter()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>();
        assert!(err.sqrt() <= 1e-10 * linalg::norm_sqr(&sc.cascade.a_bar).sqrt());

        let zero = DownlinkObservations { r: vec![c(0.0, 0.0); 30], noise_var: 0.0 };
        let a = ls_a_bar(0.2, &zero, &sc.schedule, 1e12).unwrap();
        assert!(a.iter().all(|z| z.norm() == 0.0));

        let short = scenario(8, 10, 9, 0.0, 4);
        assert!(matches!(
            ls_a_bar(0.2, &short.obs, &short.schedule, 1e12),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn am_fixed_point_at_truth() {
        let sc = scenario(16, 32, 64, 0.0, 5);
        let state = MfState {
            a_bar: sc.cascade.a_bar.clone(),
            psi: sc.cascade.psi,
            objective_history: vec![],
            iter: 0,
        };
        let next = am_iterate(&state, &sc.obs, &sc.schedule, &MfConfig::am()).unwrap();
        assert!(circular_distance(next.psi, state.psi) <= 1e-10);
        let da = next.a_bar.iter().zip(state.a_bar.iter()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>();
        assert!(da.sqrt() <= 1e-10 * linalg::norm_sqr(&state.a_bar).sqrt());
    }

    #[test]
    fn am_never_increases_objective() {
        let cfg = MfConfig::am();
        for seed in 0..10 {
            let sc = scenario(8, 12, 24, 1.0, 200 + seed);
            let mut rng = rng_for(seed, Stream::Design);
            let mut state = MfState {
                a_bar: (0..12).map(|_| complex_gaussian(&mut rng, 1.0)).collect(),
                psi: rand::Rng::random(&mut rng),
                objective_history: vec![],
                iter: 0,
            };
            for _ in 0..5 {
                state = am_iterate(&state, &sc.obs, &sc.schedule, &cfg).unwrap();
            }
            for w in state.objective_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", state.objective_history);
            }
        }
    }

    #[test]
    fn am_converges_without_noise_when_overdetermined() {
        // K = 2M: psi is identifiable from noiseless data. AM converges
        // linearly, typically in 50 to 120 iterations.
        let mut ok = 0;
        for seed in 0..20 {
            let sc = scenario(16, 32, 64, 0.0, 300 + seed);
            let est = estimate_single_user(&sc.obs, &sc.schedule, &MfConfig::am()).unwrap();
            if nmse(sc.h_e.as_ref(), est.h_e_hat.as_ref()).unwrap() <= 1e-8 {
                ok += 1;
            }
        }
        assert!(ok >= 19, "{ok}/20");
    }

    #[test]
    fn square_system_fits_every_angle() {
        // With K = M the least-squares fit is exact at any psi, so noiseless
        // data cannot pin psi down and AM stops at the spectral angle.
        let sc = scenario(16, 32, 32, 0.0, 7);
        for psi in [0.1, 0.4, 0.85] {
            let a = ls_a_bar(psi, &sc.obs, &sc.schedule, 1e12).unwrap();
            let j = objective(&a, psi, &sc.obs, &sc.schedule);
            assert!(j <= 1e-16 * linalg::norm_sqr(&sc.obs.r), "J = {j}");
        }
        let est = estimate_single_user(&sc.obs, &sc.schedule, &MfConfig::am()).unwrap();
        assert!(est.objective_final <= 1e-16 * linalg::norm_sqr(&sc.obs.r));
    }

    fn finite_difference(sc: &DownlinkScenario, a_bar: &[C64], psi: f64, h: f64) -> Gradients {
        let f = |a: &[C64], p: f64| objective(a, p, &sc.obs, &sc.schedule);
        let mut re_a = Vec::new();
        let mut im_a = Vec::new();
        for i in 0..a_bar.len() {
            for (imag, out) in [(false, &mut re_a), (true, &mut im_a)] {
                let step = if imag { c(0.0, h) } else { c(h, 0.0) };
                let mut plus = a_bar.to_vec();
                let mut minus = a_bar.to_vec();
                plus[i] += step;
                minus[i] -= step;
                out.push((f(&plus, psi) - f(&minus, psi)) / (2.0 * h));
            }
        }
        let dpsi = (f(a_bar, psi + h) - f(a_bar, psi - h)) / (2.0 * h);
        Gradients { re_a, im_a, psi: dpsi }
    }

    fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
        (a - b).abs() / scale.max(1e-300)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let sc = scenario(6, 8, 24, 0.5, 8);
        let mut rng = rng_for(8, Stream::Design);
        for _ in 0..20 {
            let a_bar: Vec<C64> = (0..8).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
            let psi: f64 = rand::Rng::random(&mut rng);
            let g = gd_gradients(&a_bar, psi, &sc.obs, &sc.schedule);
            let fd = finite_difference(&sc, &a_bar, psi, 1e-6);
            let scale_a = g.re_a.iter().chain(g.im_a.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..8 {
                assert!(rel_err(g.re_a[i], fd.re_a[i], scale_a) <= 1e-5);
                assert!(rel_err(g.im_a[i], fd.im_a[i], scale_a) <= 1e-5);
            }
            assert!(rel_err(g.psi, fd.psi, g.psi.abs()) <= 1e-5, "{} vs {}", g.psi, fd.psi);
        }
    }

    #[test]
    fn gradients_vanish_at_noiseless_minimum() {
        let sc = scenario(10, 12, 30, 0.0, 9);
        let g = gd_gradients(&sc.cascade.a_bar, sc.cascade.psi, &sc.obs, &sc.schedule);
        let max = g.re_a.iter().chain(g.im_a.iter()).chain(std::iter::once(&g.psi)).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 1e-8, "max gradient {max}");

        let zero = vec![c(0.0, 0.0); 12];
        assert_eq!(gd_gradients(&zero, 0.37, &sc.obs, &sc.schedule).psi, 0.0);
    }

    #[test]
    fn gd_zero_step_and_monotone_backtracking() {
        let sc = scenario(8, 10, 30, 0.5, 11);
        let cfg = MfConfig::gd();
        let init = initialize(&sc.obs, &sc.schedule, &cfg).unwrap();
        let frozen = gd_iterate(&init, &sc.obs, &sc.schedule, &MfConfig { step_size: 0.0, ..cfg }).unwrap();
        assert_eq!(frozen.a_bar, init.a_bar);
        assert_eq!(frozen.psi, init.psi);

        let mut state = init;
        for _ in 0..50 {
            state = gd_iterate(&state, &sc.obs, &sc.schedule, &cfg).unwrap();
        }
        for w in state.objective_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn plain_gd_descends_slowly() {
        // One shared step for a_bar and psi: the psi curvature is orders of
        // magnitude larger, so backtracking keeps the a_bar updates tiny.
        let sc = scenario(16, 32, 64, 0.0, 400);
        let est = estimate_single_user(&sc.obs, &sc.schedule, &MfConfig { max_iters: 100, ..MfConfig::gd_plain() }).unwrap();
        for w in est.objective_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(est.objective_final < est.objective_history[0]);
        assert!(!est.converged);
    }

    #[test]
    fn gd_reaches_noiseless_solution() {
        let cfg = MfConfig { max_iters: 500, ..MfConfig::gd() };
        let mut ok = 0;
        for seed in 0..10 {
            let sc = scenario(16, 32, 64, 0.0, 400 + seed);
            let est = estimate_single_user(&sc.obs, &sc.schedule, &cfg).unwrap();
            if nmse(sc.h_e.as_ref(), est.h_e_hat.as_ref()).unwrap() <= 1e-6 {
                ok += 1;
            }
        }
        assert!(ok >= 9, "{ok}/10");
    }

    #[test]
    fn estimate_single_user_contracts() {
        let sc = scenario(8, 12, 36, noise_var_from_snr_db(10.0), 12);
        for cfg in [MfConfig::am(), MfConfig::gd()] {
            let est = estimate_single_user(&sc.obs, &sc.schedule, &cfg).unwrap();
            assert!(est.objective_final <= est.objective_history[0]);
            let rebuilt = linalg::outer(&est.a_bar_hat, &array_response(8, est.psi_hat));
            assert!(
                linalg::fro_dist_sqr(rebuilt.as_ref(), est.h_e_hat.as_ref()).sqrt()
                    <= 1e-12 * linalg::fro_norm_sqr(est.h_e_hat.as_ref()).sqrt()
            );
            assert!((0.0..1.0).contains(&est.psi_hat));
        }
        let short = scenario(8, 12, 11, 0.0, 12);
        for cfg in [MfConfig::am(), MfConfig::gd()] {
            assert!(matches!(
                estimate_single_user(&short.obs, &short.schedule, &cfg),
                Err(Error::RankDeficient(_))
            ));
        }
        let zero = DownlinkObservations { r: vec![c(0.0, 0.0); 36], noise_var: 0.0 };
        assert!(matches!(estimate_single_user(&zero, &sc.schedule, &MfConfig::am()), Err(Error::NoSignal(_))));
    }

    #[test]
    fn product_is_identified_from_different_starts() {
        let sc = scenario(16, 32, 64, 0.0, 13);
        let cfg = MfConfig::gd();
        let run = |mut state: MfState| {
            for _ in 0..1500 {
                state = gd_iterate(&state, &sc.obs, &sc.schedule, &cfg).unwrap();
            }
            linalg::outer(&state.a_bar, &array_response(16, state.psi))
        };
        let spectral = initialize(&sc.obs, &sc.schedule, &cfg).unwrap();
        let mut rng = rng_for(13, Stream::Design);
        let shifted_psi = wrap_angle(sc.cascade.psi + 0.002);
        let perturbed = MfState {
            a_bar: sc.cascade.a_bar.iter().map(|a| a * 0.8 + complex_gaussian(&mut rng, 0.01)).collect(),
            psi: shifted_psi,
            objective_history: vec![],
            iter: 0,
        };
        let (a, b) = (run(spectral), run(perturbed));
        let rel = linalg::fro_dist_sqr(a.as_ref(), b.as_ref()).sqrt() / linalg::fro_norm_sqr(a.as_ref()).sqrt();
        assert!(rel <= 1e-8, "products differ by {rel}");
    }

    #[test]
    fn multipath_single_path_matches_single_user() {
        let sc = scenario(8, 12, 36, 0.1, 14);
        let one = estimate_multipath(&sc.obs, &sc.schedule, &MfConfig::am(), 1).unwrap();
        let direct = estimate_single_user(&sc.obs, &sc.schedule, &MfConfig::am()).unwrap();
        assert_eq!(one.paths.len(), 1);
        assert_eq!(linalg::fro_dist_sqr(one.h_e_hat.as_ref(), direct.h_e_hat.as_ref()), 0.0);
    }

    #[test]
    fn multipath_two_separated_paths() {
        let (n, m) = (16, 32);
        let dims = SystemDims::single_user(n, m, 4 * m);
        let gm = GainModel { min_path_gap: Some(4.0 / n as f64), ..GainModel::default() };
        let median = |sweeps: usize| {
            let mut errs: Vec<f64> = (0..50)
                .map(|seed| {
                    let sc = DownlinkScenario::sample_with(&dims, 2, &gm, ScheduleKind::Random, 0.0, 500 + seed).unwrap();
                    let est = estimate_multipath_refined(&sc.obs, &sc.schedule, &MfConfig::am(), 2, sweeps).unwrap();
                    nmse(sc.h_e.as_ref(), est.h_e_hat.as_ref()).unwrap()
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            0.5 * (errs[24] + errs[25])
        };
        // A single successive pass leaves leakage between the paths
        // (median about 0.15); backfitting removes it.
        let single = median(0);
        assert!(single <= 0.3, "single pass median NMSE {single}");
        let refined = median(3);
        assert!(refined <= 1e-2, "refined median NMSE {refined}");
    }

    #[test]
    fn multipath_recovers_stronger_path_first() {
        let (n, m) = (16, 24);
        let dims = SystemDims::single_user(n, m, 4 * m);
        for seed in 0..10u64 {
            let mut rng = rng_for(seed, Stream::Design);
            let psi_strong: f64 = rand::Rng::random(&mut rng);
            let psi_weak = wrap_angle(psi_strong + 0.25 + 0.5 * rand::Rng::random::<f64>(&mut rng));
            let paths = vec![
                Path { gain: c(0.1, 0.0), phi: rand::Rng::random(&mut rng), psi: psi_weak },
                Path { gain: c(1.0, 0.0), phi: rand::Rng::random(&mut rng), psi: psi_strong },
            ];
            let mut ch = crate::channel::sample_channel(&dims, &GainModel::default(), &mut rng).unwrap();
            ch.g_matrix = crate::channel::bs_ris_matrix(m, n, &paths);
            ch.paths = paths;
            let sched = PilotSchedule::generate(n, m, 4 * m, ScheduleKind::Random, &mut rng).unwrap();
            let sc = DownlinkScenario::observe(ch, sched, 0.0, seed).unwrap();
            let est = estimate_multipath(&sc.obs, &sc.schedule, &MfConfig::am(), 2).unwrap();
            let first = est.paths[0].psi_hat;
            assert!(
                circular_distance(first, psi_strong) < circular_distance(first, psi_weak),
                "seed {seed}: first {first}, strong {psi_strong}, weak {psi_weak}"
            );
        }
    }
}
