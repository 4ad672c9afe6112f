//! Reference estimators that ignore the steering structure of `H_e`.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mf::spectral_matrix;
use crate::signal::{DownlinkObservations, PilotSchedule};
use crate::{linalg, C64};

const LS_MAX_CONDITION: f64 = 1e12;

/// Full least squares on `r_k = (x_k^T kron theta_k^T) vec(H_e)`.
pub fn ls_full(obs: &DownlinkObservations, sched: &PilotSchedule) -> Result<Mat<C64>> {
    let (m, n, k) = (sched.m_ris(), sched.n_bs(), sched.len());
    if obs.len() != k {
        return Err(Error::DimensionMismatch(format!("{} observations for {k} slots", obs.len())));
    }
    if k < m * n {
        return Err(Error::RankDeficient(format!("LS needs at least MN = {} pilots, got {k}", m * n)));
    }
    let design = Mat::from_fn(k, m * n, |row, col| sched.phases[(col % m, row)] * sched.pilots[(col / m, row)]);
    let vec_h = linalg::lstsq(design.as_ref(), &obs.r, LS_MAX_CONDITION)?;
    Ok(Mat::from_fn(m, n, |i, j| vec_h[i + j * m]))
}

/// `u v^H` with `||v|| = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneFactors {
    pub u: Vec<C64>,
    pub v: Vec<C64>,
}

impl RankOneFactors {
    pub fn matrix(&self) -> Mat<C64> {
        linalg::outer(&self.u, &self.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrConfig {
    pub max_iters: usize,
    pub tol_objective: f64,
    pub max_condition: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol_objective: 1e-10,
            max_condition: 1e12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LrEstimate {
    pub factors: RankOneFactors,
    pub h_e_hat: Mat<C64>,
    pub objective_history: Vec<f64>,
    pub iters_used: usize,
}

fn lr_objective(u: &[C64], v: &[C64], obs: &DownlinkObservations, sched: &PilotSchedule) -> f64 {
    (0..sched.len())
        .map(|k| {
            let t: C64 = (0..u.len()).map(|m| sched.phases[(m, k)] * u[m]).sum();
            let s: C64 = (0..v.len()).map(|n| v[n].conj() * sched.pilots[(n, k)]).sum();
            (t * s - obs.r[k]).norm_sqr()
        })
        .sum()
}

fn solve_u(v: &[C64], obs: &DownlinkObservations, sched: &PilotSchedule, cfg: &LrConfig) -> Result<Vec<C64>> {
    let (m, k) = (sched.m_ris(), sched.len());
    let design = Mat::from_fn(k, m, |row, col| {
        let s: C64 = (0..v.len()).map(|n| v[n].conj() * sched.pilots[(n, row)]).sum();
        s * sched.phases[(col, row)]
    });
    linalg::lstsq(design.as_ref(), &obs.r, cfg.max_condition)
}

/// Solves for `conj(v)` with `u` fixed, then rescales so `||v|| = 1`.
fn solve_v(u: &[C64], obs: &DownlinkObservations, sched: &PilotSchedule, cfg: &LrConfig) -> Result<RankOneFactors> {
    let (n, k) = (sched.n_bs(), sched.len());
    let t: Vec<C64> = (0..k)
        .map(|row| (0..u.len()).map(|m| sched.phases[(m, row)] * u[m]).sum())
        .collect();
    let design = Mat::from_fn(k, n, |row, col| t[row] * sched.pilots[(col, row)]);
    let w = linalg::lstsq(design.as_ref(), &obs.r, cfg.max_condition)?;
    let norm = linalg::norm_sqr(&w).sqrt();
    if norm == 0.0 {
        return Ok(RankOneFactors {
            u: vec![C64::new(0.0, 0.0); u.len()],
            v: vec![C64::new(0.0, 0.0); n],
        });
    }
    Ok(RankOneFactors {
        u: u.iter().map(|x| x * norm).collect(),
        v: w.iter().map(|x| x.conj() / norm).collect(),
    })
}

/// Alternating least squares for an unstructured rank-one `H_e = u v^H`,
/// started from the top singular pair of the spectral matrix.
pub fn lr_rankone(obs: &DownlinkObservations, sched: &PilotSchedule, cfg: &LrConfig) -> Result<LrEstimate> {
    if cfg.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be positive".into()));
    }
    let (m, n, k) = (sched.m_ris(), sched.n_bs(), sched.len());
    if k < m.max(n) {
        return Err(Error::RankDeficient(format!(
            "rank-one recovery needs at least max(M, N) = {} pilots, got {k}",
            m.max(n)
        )));
    }
    let s = spectral_matrix(obs, sched)?;
    if linalg::fro_norm_sqr(s.as_ref()) == 0.0 {
        let factors = RankOneFactors {
            u: vec![C64::new(0.0, 0.0); m],
            v: vec![C64::new(0.0, 0.0); n],
        };
        return Ok(LrEstimate {
            h_e_hat: factors.matrix(),
            factors,
            objective_history: vec![0.0],
            iters_used: 0,
        });
    }
    let (_, _, v0) = linalg::top_singular_pair(s.as_ref());
    let u0 = solve_u(&v0, obs, sched, cfg)?;
    let mut f = RankOneFactors { u: u0, v: v0 };
    let mut history = vec![lr_objective(&f.u, &f.v, obs, sched)];
    let mut iters = 0;
    while iters < cfg.max_iters {
        let next = solve_v(&f.u, obs, sched, cfg)?;
        let u = solve_u(&next.v, obs, sched, cfg)?;
        let cand = RankOneFactors { u, v: next.v };
        let j = lr_objective(&cand.u, &cand.v, obs, sched);
        let prev = *history.last().unwrap();
        iters += 1;
        if j > prev {
            // Rounding only; exact LS substeps cannot increase J.
            history.push(prev);
            break;
        }
        f = cand;
        history.push(j);
        if j == 0.0 || prev - j < cfg.tol_objective * prev {
            break;
        }
    }
    Ok(LrEstimate {
        h_e_hat: f.matrix(),
        factors: f,
        objective_history: history,
        iters_used: iters,
    })
}
