//! Training schedules and observation synthesis.
//!
//! Downlink: in slot `k` the BS sends a unit-norm pilot `x_k` while the RIS
//! applies phases `theta_k`; the UE sees `r_k = theta_k^T H_e x_k + n_k`.
//!
//! Uplink: in block `k` the RIS holds `theta_k` and every user sends `T`
//! orthogonal pilot symbols; the BS sees
//! `R_k = sum_q G diag(theta_k) h_q x_{q,k}^T + N_k`.

use std::f64::consts::PI;

use faer::{Mat, MatRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::complex_gaussian;
use crate::C64;

const UNIT_TOL: f64 = 1e-10;

/// How RIS training phases are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Independent phases uniform on `[0, 2 pi)`.
    #[default]
    Random,
    /// First `M` rows of the `K`-point DFT matrix; needs `K >= M`.
    Dft,
}

/// Downlink training schedule.
#[derive(Debug, Clone)]
pub struct PilotSchedule {
    /// `N x K`; column `k` is the unit-norm pilot `x_k`.
    pub pilots: Mat<C64>,
    /// `M x K`; column `k` is the unit-modulus phase vector `theta_k`.
    pub phases: Mat<C64>,
}

impl PilotSchedule {
    pub fn new(pilots: Mat<C64>, phases: Mat<C64>) -> Result<Self> {
        if pilots.ncols() != phases.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} pilots but {} phase vectors",
                pilots.ncols(),
                phases.ncols()
            )));
        }
        for k in 0..pilots.ncols() {
            let norm: f64 = pilots.col(k).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidArgument(format!("pilot {k} has norm {norm}")));
            }
        }
        check_unit_modulus(phases.as_ref())?;
        Ok(Self { pilots, phases })
    }

    /// Gaussian pilots normalized to unit norm, with phases of the given kind.
    pub fn generate<R: Rng + ?Sized>(
        n_bs: usize,
        m_ris: usize,
        k_pilots: usize,
        kind: ScheduleKind,
        rng: &mut R,
    ) -> Result<Self> {
        let phases = match kind {
            ScheduleKind::Random => random_phase_schedule(m_ris, k_pilots, rng),
            ScheduleKind::Dft => dft_phase_schedule(m_ris, k_pilots)?,
        };
        let pilots = random_unit_pilots(n_bs, k_pilots, rng);
        Ok(Self { pilots, phases })
    }

    pub fn n_bs(&self) -> usize {
        self.pilots.nrows()
    }

    pub fn m_ris(&self) -> usize {
        self.phases.nrows()
    }

    pub fn len(&self) -> usize {
        self.pilots.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_unit_modulus(phases: MatRef<'_, C64>) -> Result<()> {
    for k in 0..phases.ncols() {
        for m in 0..phases.nrows() {
            let a = phases[(m, k)].norm();
            if (a - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidArgument(format!(
                    "phase ({m}, {k}) has modulus {a}"
                )));
            }
        }
    }
    Ok(())
}

/// `M x K` matrix of `exp(j u)`, `u` uniform on `[0, 2 pi)`.
pub fn random_phase_schedule<R: Rng + ?Sized>(m_ris: usize, k_pilots: usize, rng: &mut R) -> Mat<C64> {
    let mut out = Mat::<C64>::zeros(m_ris, k_pilots);
    for k in 0..k_pilots {
        for m in 0..m_ris {
            out[(m, k)] = C64::cis(2.0 * PI * rng.random::<f64>());
        }
    }
    out
}

/// First `M` rows of the `K`-point DFT matrix, `exp(-j 2 pi m k / K)`. The
/// rows are orthogonal, so `Theta Theta^H = K I_M`.
pub fn dft_phase_schedule(m_ris: usize, k_pilots: usize) -> Result<Mat<C64>> {
    if k_pilots < m_ris {
        return Err(Error::InvalidArgument(format!(
            "a DFT phase design needs K >= M, got K={k_pilots} M={m_ris}"
        )));
    }
    Ok(Mat::from_fn(m_ris, k_pilots, |m, k| dft_entry(m, k, k_pilots)))
}

fn dft_entry(row: usize, col: usize, size: usize) -> C64 {
    // Reduce the exponent first so large products stay exact.
    let e = (row * col) % size;
    C64::cis(-2.0 * PI * e as f64 / size as f64)
}

/// `N x K` matrix of i.i.d. complex Gaussian columns scaled to unit norm.
pub fn random_unit_pilots<R: Rng + ?Sized>(n_bs: usize, k_pilots: usize, rng: &mut R) -> Mat<C64> {
    let mut out = Mat::<C64>::zeros(n_bs, k_pilots);
    for k in 0..k_pilots {
        let col: Vec<C64> = (0..n_bs).map(|_| complex_gaussian(rng, 1.0)).collect();
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for (n, z) in col.into_iter().enumerate() {
            out[(n, k)] = z / norm;
        }
    }
    out
}

/// `T x Q` matrix whose column `q` is column `q` of the `T`-point DFT matrix.
pub fn orthogonal_user_pilots(q_users: usize, t_symbols: usize) -> Result<Mat<C64>> {
    if t_symbols < q_users {
        return Err(Error::InvalidArgument(format!(
            "{q_users} orthogonal pilots need T >= Q, got T={t_symbols}"
        )));
    }
    Ok(Mat::from_fn(t_symbols, q_users, |t, q| dft_entry(t, q, t_symbols)))
}

/// Noisy downlink observations `r_k`.
#[derive(Debug, Clone)]
pub struct DownlinkObservations {
    pub r: Vec<C64>,
    pub noise_var: f64,
}

impl DownlinkObservations {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// `SNR = 1 / sigma^2`, in dB.
    pub fn snr_db(&self) -> f64 {
        -10.0 * self.noise_var.log10()
    }
}

/// Noise variance for an SNR in dB under `SNR = 1 / sigma^2`.
pub fn noise_var_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

fn check_noise_var(noise_var: f64) -> Result<()> {
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(Error::InvalidArgument(format!("noise variance {noise_var}")));
    }
    Ok(())
}

/// `theta_k^T H x_k` for every slot, for an `M x N` channel.
pub fn noiseless_downlink(h_e: MatRef<'_, C64>, sched: &PilotSchedule) -> Result<Vec<C64>> {
    if h_e.nrows() != sched.m_ris() || h_e.ncols() != sched.n_bs() {
        return Err(Error::DimensionMismatch(format!(
            "channel is {}x{} but schedule is for M={} N={}",
            h_e.nrows(),
            h_e.ncols(),
            sched.m_ris(),
            sched.n_bs()
        )));
    }
    // H X, then contract each column with its phase vector.
    let hx = h_e * sched.pilots.as_ref();
    Ok((0..sched.len())
        .map(|k| {
            let mut acc = C64::new(0.0, 0.0);
            for m in 0..sched.m_ris() {
                acc += sched.phases[(m, k)] * hx[(m, k)];
            }
            acc
        })
        .collect())
}

/// Draws `r_k = theta_k^T H_e x_k + n_k` with `n_k ~ CN(0, noise_var)`.
pub fn downlink_observe<R: Rng + ?Sized>(
    h_e: MatRef<'_, C64>,
    sched: &PilotSchedule,
    noise_var: f64,
    rng: &mut R,
) -> Result<DownlinkObservations> {
    check_noise_var(noise_var)?;
    let mut r = noiseless_downlink(h_e, sched)?;
    if noise_var > 0.0 {
        for rk in r.iter_mut() {
            *rk += complex_gaussian(rng, noise_var);
        }
    }
    Ok(DownlinkObservations { r, noise_var })
}

/// Uplink training schedule.
#[derive(Debug, Clone)]
pub struct UplinkSchedule {
    /// `M x K`; column `k` is `theta_k`.
    pub phase_matrix: Mat<C64>,
    /// One `T x Q` matrix per block; column `q` is `x_{q,k}`.
    pub user_pilots: Vec<Mat<C64>>,
}

impl UplinkSchedule {
    pub fn new(phase_matrix: Mat<C64>, user_pilots: Vec<Mat<C64>>) -> Result<Self> {
        if user_pilots.len() != phase_matrix.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} pilot blocks but {} phase vectors",
                user_pilots.len(),
                phase_matrix.ncols()
            )));
        }
        check_unit_modulus(phase_matrix.as_ref())?;
        let shape = user_pilots.first().map(|x| (x.nrows(), x.ncols()));
        for (k, x) in user_pilots.iter().enumerate() {
            if Some((x.nrows(), x.ncols())) != shape {
                return Err(Error::DimensionMismatch(format!("pilot block {k} has a different shape")));
            }
            check_orthogonal(x.as_ref()).map_err(|e| match e {
                Error::InvalidArgument(msg) => Error::InvalidArgument(format!("block {k}: {msg}")),
                other => other,
            })?;
        }
        Ok(Self {
            phase_matrix,
            user_pilots,
        })
    }

    /// Same DFT user pilots in every block.
    pub fn with_dft_pilots(phase_matrix: Mat<C64>, q_users: usize, t_symbols: usize) -> Result<Self> {
        let x = orthogonal_user_pilots(q_users, t_symbols)?;
        let blocks = vec![x; phase_matrix.ncols()];
        Self::new(phase_matrix, blocks)
    }

    pub fn m_ris(&self) -> usize {
        self.phase_matrix.nrows()
    }

    pub fn len(&self) -> usize {
        self.phase_matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_users(&self) -> usize {
        self.user_pilots.first().map_or(0, |x| x.ncols())
    }

    pub fn t_symbols(&self) -> usize {
        self.user_pilots.first().map_or(0, |x| x.nrows())
    }
}

/// Checks `x_q^H x_p = T delta_{qp}` for the columns of a `T x Q` block.
fn check_orthogonal(x: MatRef<'_, C64>) -> Result<()> {
    let t = x.nrows() as f64;
    let gram = x.adjoint() * x;
    for q in 0..x.ncols() {
        for p in 0..x.ncols() {
            let expected = if p == q { t } else { 0.0 };
            if (gram[(q, p)] - C64::new(expected, 0.0)).norm() > UNIT_TOL * t.max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "user pilots {q} and {p} are not orthogonal with energy T"
                )));
            }
        }
    }
    Ok(())
}

/// Received uplink blocks `R_k`, each `N x T`.
#[derive(Debug, Clone)]
pub struct UplinkObservations {
    pub blocks: Vec<Mat<C64>>,
    pub noise_var: f64,
}

/// Draws `R_k = sum_q G diag(theta_k) h_q x_{q,k}^T + N_k` for an `N x M` uplink
/// BS-RIS channel.
pub fn uplink_observe<R: Rng + ?Sized>(
    g: MatRef<'_, C64>,
    h_users: &[Vec<C64>],
    sched: &UplinkSchedule,
    noise_var: f64,
    rng: &mut R,
) -> Result<UplinkObservations> {
    check_noise_var(noise_var)?;
    let (n, m) = (g.nrows(), g.ncols());
    if m != sched.m_ris() {
        return Err(Error::DimensionMismatch(format!(
            "G has {m} columns but the phase schedule has {} rows",
            sched.m_ris()
        )));
    }
    if h_users.len() != sched.n_users() {
        return Err(Error::DimensionMismatch(format!(
            "{} user channels but {} pilot sequences",
            h_users.len(),
            sched.n_users()
        )));
    }
    if let Some(q) = h_users.iter().position(|h| h.len() != m) {
        return Err(Error::DimensionMismatch(format!("user {q} channel length differs from M={m}")));
    }

    let q_users = h_users.len();
    let t = sched.t_symbols();
    let mut blocks = Vec::with_capacity(sched.len());
    for k in 0..sched.len() {
        // Column q of `reflected` is diag(theta_k) h_q.
        let reflected = Mat::from_fn(m, q_users, |i, q| sched.phase_matrix[(i, k)] * h_users[q][i]);
        let per_user = g * reflected.as_ref();
        let mut r = per_user.as_ref() * sched.user_pilots[k].transpose();
        if noise_var > 0.0 {
            for j in 0..t {
                for i in 0..n {
                    r[(i, j)] += complex_gaussian(rng, noise_var);
                }
            }
        }
        blocks.push(r);
    }
    Ok(UplinkObservations { blocks, noise_var })
}

/// Isolates user `q`: column `k` of the `N x K` result is
/// `(1/T) R_k conj(x_{q,k})`.
pub fn despread(obs: &UplinkObservations, sched: &UplinkSchedule, q: usize) -> Result<Mat<C64>> {
    if q >= sched.n_users() {
        return Err(Error::InvalidArgument(format!(
            "user {q} out of range ({} users)",
            sched.n_users()
        )));
    }
    if obs.blocks.len() != sched.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} received blocks but {} scheduled",
            obs.blocks.len(),
            sched.len()
        )));
    }
    let n = obs.blocks.first().map_or(0, |b| b.nrows());
    let t = sched.t_symbols();
    let scale = 1.0 / t as f64;
    let mut s = Mat::<C64>::zeros(n, sched.len());
    for (k, block) in obs.blocks.iter().enumerate() {
        if block.ncols() != t || block.nrows() != n {
            return Err(Error::DimensionMismatch(format!("block {k} is not {n}x{t}")));
        }
        let x = sched.user_pilots[k].col(q);
        for j in 0..t {
            let w = x[j].conj() * scale;
            for i in 0..n {
                s[(i, k)] += block[(i, j)] * w;
            }
        }
    }
    Ok(s)
}
