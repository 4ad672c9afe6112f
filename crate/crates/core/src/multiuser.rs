//! Uplink multi-user estimation in two stages.
//!
//! After despreading, user `q` contributes `S_q = a_B(psi) (Theta^T conj(a_bar_q))^T`
//! plus noise. All users share `psi`, so it is estimated once from the
//! stacked `[S_1, .., S_Q]`; each `a_bar_q` then follows from a small
//! `M x M` least-squares system.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};

use crate::channel::array_response;
use crate::error::{Error, Result};
use crate::manifold::{GridSearch, SteeringQuadratic};
use crate::signal::{despread, UplinkObservations, UplinkSchedule};
use crate::{linalg, C64};

/// Relative eigenvalue floor below which the phase Gram is singular.
const GRAM_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct MultiUserEstimate {
    pub psi_hat: f64,
    pub a_bar_hats: Vec<Vec<C64>>,
    /// `a_B(psi_hat) a_bar_q^H`, `N x M` each.
    pub h_q_hats: Vec<Mat<C64>>,
    /// `(sigma^2 / T) tr((conj(Theta) Theta^T)^{-1})`.
    pub predicted_mse: f64,
}

/// `argmax_psi ||a_B(psi)^H [S_1, .., S_Q]||^2`.
pub fn estimate_psi_uplink(s_list: &[Mat<C64>], search: &GridSearch) -> Result<f64> {
    let n = s_list
        .first()
        .map(|s| s.nrows())
        .ok_or(Error::NoSignal("no despread observations"))?;
    if let Some(q) = s_list.iter().position(|s| s.nrows() != n) {
        return Err(Error::DimensionMismatch(format!("user {q} has {} rows, expected {n}", s_list[q].nrows())));
    }
    let mut gram = Mat::<C64>::zeros(n, n);
    for s in s_list {
        gram += s.as_ref() * s.adjoint();
    }
    if linalg::fro_norm_sqr(gram.as_ref()) == 0.0 {
        return Err(Error::NoSignal("all despread observations are zero"));
    }
    let q = SteeringQuadratic::from_gram(gram.as_ref());
    Ok(search.maximize(n, |psi| q.eval(psi)))
}

/// Cholesky factor of `conj(Theta) Theta^T` after a rank check.
#[derive(Debug)]
pub struct PhaseGram {
    gram: Mat<C64>,
    llt: faer::linalg::solvers::Llt<C64>,
}

impl PhaseGram {
    pub fn new(phase_matrix: MatRef<'_, C64>) -> Result<Self> {
        let (m, k) = (phase_matrix.nrows(), phase_matrix.ncols());
        if k < m {
            return Err(Error::RankDeficient(format!("{k} blocks cannot resolve {m} RIS elements")));
        }
        let gram = phase_matrix.conjugate() * phase_matrix.transpose();
        let eig = gram
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::RankDeficient(format!("eigenvalues of the phase Gram: {e:?}")))?;
        let (lo, hi) = (eig.first().copied().unwrap_or(0.0), eig.last().copied().unwrap_or(0.0));
        if !(lo > GRAM_RANK_TOL * hi) {
            return Err(Error::RankDeficient(format!(
                "phase design is not full row rank (eigenvalues {lo:.3e} .. {hi:.3e})"
            )));
        }
        let llt = gram
            .llt(Side::Lower)
            .map_err(|e| Error::RankDeficient(format!("Cholesky of the phase Gram: {e:?}")))?;
        Ok(Self { gram, llt })
    }

    pub fn gram(&self) -> MatRef<'_, C64> {
        self.gram.as_ref()
    }

    pub fn solve(&self, rhs: &[C64]) -> Vec<C64> {
        let mut x = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        self.llt.solve_in_place(x.as_mut());
        (0..rhs.len()).map(|i| x[(i, 0)]).collect()
    }

    /// `tr(Gram^{-1})`.
    pub fn inverse_trace(&self) -> f64 {
        let m = self.gram.nrows();
        let mut x = Mat::<C64>::identity(m, m);
        self.llt.solve_in_place(x.as_mut());
        (0..m).map(|i| x[(i, i)].re).sum()
    }
}

/// Least-squares `a_bar_q` from `vec(S_q) = (Theta^T kron a_B(psi)) conj(a_bar_q)`,
/// solved through the `M x M` normal equations.
pub fn estimate_a_q(s_q: MatRef<'_, C64>, phase_matrix: MatRef<'_, C64>, psi_hat: f64) -> Result<Vec<C64>> {
    let gram = PhaseGram::new(phase_matrix)?;
    estimate_a_q_with(s_q, phase_matrix, &gram, psi_hat)
}

fn estimate_a_q_with(
    s_q: MatRef<'_, C64>,
    phase_matrix: MatRef<'_, C64>,
    gram: &PhaseGram,
    psi_hat: f64,
) -> Result<Vec<C64>> {
    let (m, k) = (phase_matrix.nrows(), phase_matrix.ncols());
    if s_q.ncols() != k {
        return Err(Error::DimensionMismatch(format!("S_q has {} columns, schedule has {k}", s_q.ncols())));
    }
    let a = array_response(s_q.nrows(), psi_hat);
    // a^H S_q = conj(S_q^H a)
    let proj: Vec<C64> = (0..k)
        .map(|j| (0..s_q.nrows()).map(|i| a[i].conj() * s_q[(i, j)]).sum())
        .collect();
    let rhs: Vec<C64> = (0..m)
        .map(|i| (0..k).map(|j| phase_matrix[(i, j)].conj() * proj[j]).sum())
        .collect();
    Ok(gram.solve(&rhs).into_iter().map(|y| y.conj()).collect())
}

/// `(sigma^2 / T) tr((conj(Theta) Theta^T)^{-1})`.
pub fn predicted_mse(noise_var: f64, t_symbols: usize, phase_matrix: MatRef<'_, C64>) -> Result<f64> {
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(Error::InvalidArgument(format!("noise variance {noise_var}")));
    }
    if t_symbols == 0 {
        return Err(Error::InvalidArgument("T must be positive".into()));
    }
    let gram = PhaseGram::new(phase_matrix)?;
    Ok(noise_var / t_symbols as f64 * gram.inverse_trace())
}

/// Full two-stage estimator. `psi_override` replaces the estimated angle
/// (used to isolate the second stage in MSE studies).
pub fn estimate_multi_user(
    obs: &UplinkObservations,
    sched: &UplinkSchedule,
    search: &GridSearch,
    psi_override: Option<f64>,
) -> Result<MultiUserEstimate> {
    let q_users = sched.n_users();
    if q_users == 0 {
        return Err(Error::InvalidArgument("no users scheduled".into()));
    }
    let gram = PhaseGram::new(sched.phase_matrix.as_ref())?;
    let s_list = (0..q_users)
        .map(|q| despread(obs, sched, q))
        .collect::<Result<Vec<_>>>()?;
    let psi_hat = match psi_override {
        Some(p) => crate::channel::wrap_angle(p),
        None => estimate_psi_uplink(&s_list, search)?,
    };
    let n = s_list[0].nrows();
    let a = array_response(n, psi_hat);
    let mut a_bar_hats = Vec::with_capacity(q_users);
    let mut h_q_hats = Vec::with_capacity(q_users);
    for s in &s_list {
        let a_bar = estimate_a_q_with(s.as_ref(), sched.phase_matrix.as_ref(), &gram, psi_hat)?;
        h_q_hats.push(linalg::outer(&a, &a_bar));
        a_bar_hats.push(a_bar);
    }
    Ok(MultiUserEstimate {
        psi_hat,
        a_bar_hats,
        h_q_hats,
        predicted_mse: obs.noise_var / sched.t_symbols() as f64 * gram.inverse_trace(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{circular_distance, SystemDims};
    use crate::random::{complex_gaussian, rng_for, Stream};
    use crate::scenario::UplinkScenario;
    use crate::signal::{dft_phase_schedule, random_phase_schedule, ScheduleKind};

    fn dims(n: usize, m: usize, q: usize, t: usize, k: usize) -> SystemDims {
        SystemDims { n_bs: n, m_ris: m, q_users: q, t_symbols: t, k_pilots: k }
    }

    /// Explicit `NK x M` Kronecker design solved by QR.
    fn kronecker_oracle(s_q: MatRef<'_, C64>, theta: MatRef<'_, C64>, psi: f64) -> Vec<C64> {
        let (n, k, m) = (s_q.nrows(), theta.ncols(), theta.nrows());
        let a = array_response(n, psi);
        let v = Mat::from_fn(n * k, m, |row, col| theta[(col, row / n)] * a[row % n]);
        let y: Vec<C64> = (0..n * k).map(|row| s_q[(row % n, row / n)]).collect();
        linalg::lstsq(v.as_ref(), &y, 1e14).unwrap().into_iter().map(|z| z.conj()).collect()
    }

    #[test]
    fn fast_path_equals_kronecker_ls() {
        let mut rng = rng_for(21, Stream::Design);
        for n in 1..=4 {
            for m in 1..=4 {
                for k in m..=4 {
                    let theta = random_phase_schedule(m, k, &mut rng);
                    let s = Mat::from_fn(n, k, |_, _| complex_gaussian(&mut rng, 1.0));
                    let psi: f64 = rand::Rng::random(&mut rng);
                    let fast = estimate_a_q(s.as_ref(), theta.as_ref(), psi).unwrap();
                    let oracle = kronecker_oracle(s.as_ref(), theta.as_ref(), psi);
                    for (x, y) in fast.iter().zip(oracle.iter()) {
                        assert!((x - y).norm() <= 1e-12 * (1.0 + y.norm()), "({n},{m},{k}): {x} vs {y}");
                    }
                }
            }
        }
    }

    #[test]
    fn a_q_exact_with_true_angle() {
        let sc = UplinkScenario::sample(&dims(8, 12, 3, 4, 16), ScheduleKind::Dft, 0.0, 22).unwrap();
        for q in 0..3 {
            let s = despread(&sc.obs, &sc.schedule, q).unwrap();
            let a = estimate_a_q(s.as_ref(), sc.schedule.phase_matrix.as_ref(), sc.cascades[q].psi).unwrap();
            let err: f64 = a.iter().zip(sc.cascades[q].a_bar.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
            assert!(err.sqrt() <= 1e-10 * linalg::norm_sqr(&sc.cascades[q].a_bar).sqrt());
        }
        let zero = Mat::<C64>::zeros(8, 16);
        let a = estimate_a_q(zero.as_ref(), sc.schedule.phase_matrix.as_ref(), 0.3).unwrap();
        assert!(a.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let theta = Mat::from_fn(4, 6, |_, _| C64::new(1.0, 0.0));
        assert!(matches!(PhaseGram::new(theta.as_ref()), Err(Error::RankDeficient(_))));
        let short = dft_phase_schedule(4, 4).unwrap();
        let short = short.as_ref().subcols(0, 3);
        assert!(matches!(predicted_mse(1.0, 2, short), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn predicted_mse_examples() {
        let dft = dft_phase_schedule(16, 32).unwrap();
        assert!((predicted_mse(1.0, 4, dft.as_ref()).unwrap() - 0.125).abs() <= 1e-12);
        assert_eq!(predicted_mse(0.0, 4, dft.as_ref()).unwrap(), 0.0);

        let mut rng = rng_for(23, Stream::Design);
        let bound = 8.0 / (16.0 * 2.0);
        for _ in 0..100 {
            let theta = random_phase_schedule(8, 16, &mut rng);
            assert!(predicted_mse(1.0, 2, theta.as_ref()).unwrap() >= bound * (1.0 - 1e-12));
        }
        let dft = dft_phase_schedule(8, 16).unwrap();
        assert!((predicted_mse(1.0, 2, dft.as_ref()).unwrap() - bound).abs() <= 1e-9);
    }

    #[test]
    fn psi_from_stacked_observations() {
        let sc = UplinkScenario::sample(&dims(32, 50, 5, 5, 50), ScheduleKind::Dft, 0.0, 24).unwrap();
        let s_list: Vec<_> = (0..5).map(|q| despread(&sc.obs, &sc.schedule, q).unwrap()).collect();
        let psi = estimate_psi_uplink(&s_list, &GridSearch::default()).unwrap();
        assert!(circular_distance(psi, sc.channel.psi) <= 1e-5);

        let w: Vec<C64> = (0..6).map(|i| C64::new(i as f64 - 2.5, 1.0)).collect();
        let exact = linalg::outer(&array_response(16, 0.421), &w);
        let psi = estimate_psi_uplink(&[exact], &GridSearch::default()).unwrap();
        assert!(circular_distance(psi, 0.421) <= 1e-6);

        let zero = vec![Mat::<C64>::zeros(4, 3); 2];
        assert!(matches!(estimate_psi_uplink(&zero, &GridSearch::default()), Err(Error::NoSignal(_))));
    }

    #[test]
    fn noiseless_end_to_end() {
        let sc = UplinkScenario::sample(&dims(32, 50, 5, 5, 50), ScheduleKind::Dft, 0.0, 25).unwrap();
        let est = estimate_multi_user(&sc.obs, &sc.schedule, &GridSearch::default(), None).unwrap();
        for (q, cascade) in sc.cascades.iter().enumerate() {
            let nmse = linalg::fro_dist_sqr(cascade.h_e.as_ref(), est.h_q_hats[q].as_ref())
                / linalg::fro_norm_sqr(cascade.h_e.as_ref());
            assert!(nmse <= 1e-8, "user {q}: {nmse}");
            let rebuilt = linalg::outer(&array_response(32, est.psi_hat), &est.a_bar_hats[q]);
            assert!(
                linalg::fro_dist_sqr(rebuilt.as_ref(), est.h_q_hats[q].as_ref()).sqrt()
                    <= 1e-12 * linalg::fro_norm_sqr(rebuilt.as_ref()).sqrt()
            );
        }
        assert_eq!(est.predicted_mse, 0.0);
    }

    #[test]
    fn single_user_matches_direct_computation() {
        let sc = UplinkScenario::sample(&dims(6, 4, 1, 1, 8), ScheduleKind::Dft, 0.3, 26).unwrap();
        let est = estimate_multi_user(&sc.obs, &sc.schedule, &GridSearch::default(), None).unwrap();
        let s = despread(&sc.obs, &sc.schedule, 0).unwrap();
        let psi = estimate_psi_uplink(std::slice::from_ref(&s), &GridSearch::default()).unwrap();
        assert_eq!(psi, est.psi_hat);
        let a = kronecker_oracle(s.as_ref(), sc.schedule.phase_matrix.as_ref(), psi);
        for (x, y) in a.iter().zip(est.a_bar_hats[0].iter()) {
            assert!((x - y).norm() <= 1e-12 * (1.0 + y.norm()));
        }
    }

    fn empirical_a_mse(k: usize, trials: u64, seed0: u64) -> f64 {
        let d = dims(8, 16, 2, 4, k);
        let mut total = 0.0;
        for t in 0..trials {
            let sc = UplinkScenario::sample(&d, ScheduleKind::Dft, 1.0, seed0 + t).unwrap();
            let est = estimate_multi_user(&sc.obs, &sc.schedule, &GridSearch::default(), Some(sc.channel.psi)).unwrap();
            total += est.a_bar_hats[0]
                .iter()
                .zip(sc.cascades[0].a_bar.iter())
                .map(|(x, y)| (x - y).norm_sqr())
                .sum::<f64>();
        }
        total / trials as f64
    }

    #[test]
    fn a_bar_mse_matches_prediction_and_halves_with_k() {
        let m32 = empirical_a_mse(32, 2000, 1000);
        assert!((m32 / 0.125 - 1.0).abs() <= 0.05, "MSE {m32}");
        let m64 = empirical_a_mse(64, 2000, 5000);
        assert!((m32 / m64 / 2.0 - 1.0).abs() <= 0.10, "ratio {}", m32 / m64);
    }
}
