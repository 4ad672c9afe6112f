//! Ground-truth channels: a line-of-sight BS-RIS link built from ULA array
//! responses, Rayleigh RIS-UE links, and the cascaded channels the estimators
//! try to recover.

use std::f64::consts::PI;

use faer::{Mat, MatRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::complex_gaussian_vec;
use crate::{linalg, C64};

/// Problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemDims {
    /// BS antennas (N).
    pub n_bs: usize,
    /// RIS elements (M).
    pub m_ris: usize,
    /// Users (Q), 1 for single-user downlink.
    pub q_users: usize,
    /// Symbols per uplink block (T).
    pub t_symbols: usize,
    /// Training slots (downlink) or blocks (uplink) (K).
    pub k_pilots: usize,
}

impl SystemDims {
    pub fn single_user(n_bs: usize, m_ris: usize, k_pilots: usize) -> Self {
        Self {
            n_bs,
            m_ris,
            q_users: 1,
            t_symbols: 1,
            k_pilots,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_bs", self.n_bs),
            ("m_ris", self.m_ris),
            ("q_users", self.q_users),
            ("t_symbols", self.t_symbols),
            ("k_pilots", self.k_pilots),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Extra check for the uplink: orthogonal user pilots need `T >= Q`.
    pub fn validate_uplink(&self) -> Result<()> {
        self.validate()?;
        if self.t_symbols < self.q_users {
            return Err(Error::InvalidArgument(format!(
                "orthogonal pilots need t_symbols >= q_users, got T={} Q={}",
                self.t_symbols, self.q_users
            )));
        }
        Ok(())
    }
}

/// Distribution of the BS-RIS path gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PathGain {
    /// Standard circularly-symmetric complex Gaussian.
    #[default]
    ComplexGaussian,
    /// Deterministic unit gain.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainModel {
    pub path_gain: PathGain,
    /// Minimum circular separation between BS-side angles of different paths.
    /// `None` means one beamwidth, `2 / N`.
    pub min_path_gap: Option<f64>,
}

impl Default for GainModel {
    fn default() -> Self {
        Self {
            path_gain: PathGain::ComplexGaussian,
            min_path_gap: None,
        }
    }
}

/// One BS-RIS propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: C64,
    /// RIS-side effective angle (phi).
    pub phi: f64,
    /// BS-side effective angle (psi).
    pub psi: f64,
}

/// A sampled set of ground-truth channels.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// BS-side effective angle of the first path.
    pub psi: f64,
    /// RIS-side effective angle of the first path.
    pub phi: f64,
    /// Gain of the first path.
    pub beta_br: C64,
    /// Downlink BS-RIS channel, `M x N`.
    pub g_matrix: Mat<C64>,
    /// Single-user RIS-UE channel (the first user's).
    pub h_r: Vec<C64>,
    /// Per-user RIS-UE channels.
    pub h_users: Vec<Vec<C64>>,
    /// Direct BS-UE channel. Always zero here; it is never estimated.
    pub h_direct: Vec<C64>,
    /// All BS-RIS paths; length 1 for the line-of-sight model.
    pub paths: Vec<Path>,
}

/// A cascaded channel together with its rank-one factors.
#[derive(Debug, Clone)]
pub struct CascadedChannel {
    /// `M x N` downlink `diag(h_r^H) G`, or `N x M` uplink `G diag(h_q)`.
    pub h_e: Mat<C64>,
    /// RIS-side factor.
    pub a_bar: Vec<C64>,
    pub psi: f64,
    pub link: Link,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Downlink,
    Uplink,
}

impl CascadedChannel {
    /// Rebuilds the matrix from `(a_bar, psi)`.
    pub fn reconstruct(&self) -> Mat<C64> {
        let n = match self.link {
            Link::Downlink => self.h_e.ncols(),
            Link::Uplink => self.h_e.nrows(),
        };
        let a = array_response(n, self.psi);
        match self.link {
            Link::Downlink => linalg::outer(&self.a_bar, &a),
            Link::Uplink => linalg::outer(&a, &self.a_bar),
        }
    }
}

/// Unit-norm ULA response: entry `i` is `exp(-j 2 pi angle i) / sqrt(n)`.
pub fn array_response(n_elements: usize, angle: f64) -> Vec<C64> {
    let scale = 1.0 / (n_elements as f64).sqrt();
    (0..n_elements)
        .map(|i| C64::from_polar(scale, -2.0 * PI * angle * i as f64))
        .collect()
}

/// Circular distance between two angles on the unit-period circle.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Wraps an angle into `[0, 1)`.
pub fn wrap_angle(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

fn draw_gain<R: Rng + ?Sized>(model: &GainModel, rng: &mut R) -> C64 {
    match model.path_gain {
        PathGain::ComplexGaussian => crate::random::complex_gaussian(rng, 1.0),
        PathGain::Unit => C64::new(1.0, 0.0),
    }
}

/// Single-path BS-RIS channel with Rayleigh RIS-UE links for every user.
pub fn sample_channel<R: Rng + ?Sized>(
    dims: &SystemDims,
    gain_model: &GainModel,
    rng: &mut R,
) -> Result<ChannelRealization> {
    sample_multipath_channel(dims, 1, gain_model, rng)
}

/// `L`-path BS-RIS channel. BS-side angles are drawn uniformly subject to a
/// minimum circular gap; `L = 1` consumes the generator exactly like
/// [`sample_channel`].
pub fn sample_multipath_channel<R: Rng + ?Sized>(
    dims: &SystemDims,
    n_paths: usize,
    gain_model: &GainModel,
    rng: &mut R,
) -> Result<ChannelRealization> {
    dims.validate()?;
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    let (n, m) = (dims.n_bs, dims.m_ris);
    let gap = gain_model.min_path_gap.unwrap_or(2.0 / n as f64);
    if !(gap >= 0.0) || n_paths as f64 * gap > 1.0 {
        return Err(Error::Infeasible(format!(
            "{n_paths} paths cannot be separated by {gap} on the unit circle"
        )));
    }

    let psis = if n_paths == 1 {
        vec![rng.random::<f64>()]
    } else {
        gapped_angles(n_paths, gap, rng)
    };
    let mut paths = Vec::with_capacity(n_paths);
    for psi in psis {
        let phi = rng.random::<f64>();
        let gain = draw_gain(gain_model, rng);
        paths.push(Path { gain, phi, psi });
    }

    let g_matrix = bs_ris_matrix(m, n, &paths);
    let h_users: Vec<Vec<C64>> = (0..dims.q_users)
        .map(|_| complex_gaussian_vec(rng, m, 1.0))
        .collect();

    Ok(ChannelRealization {
        psi: paths[0].psi,
        phi: paths[0].phi,
        beta_br: paths[0].gain,
        g_matrix,
        h_r: h_users[0].clone(),
        h_users,
        h_direct: vec![C64::new(0.0, 0.0); n],
        paths,
    })
}

/// Uniform angles on the circle with pairwise circular gap at least `gap`:
/// spread sorted uniforms over the free length, insert the gaps, rotate by a
/// uniform offset.
fn gapped_angles<R: Rng + ?Sized>(count: usize, gap: f64, rng: &mut R) -> Vec<f64> {
    let free = (1.0 - count as f64 * gap).max(0.0);
    let offset = rng.random::<f64>();
    let mut u: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * free).collect();
    u.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = u
        .iter()
        .enumerate()
        .map(|(i, ui)| wrap_angle(offset + ui + i as f64 * gap))
        .collect();
    // Random path order, so the first path is not biased toward the offset.
    for i in (1..out.len()).rev() {
        let j = rng.random_range(0..=i);
        out.swap(i, j);
    }
    out
}

/// `sum_l gain_l a_R(phi_l) a_B(psi_l)^H`, `M x N`.
pub fn bs_ris_matrix(m: usize, n: usize, paths: &[Path]) -> Mat<C64> {
    let mut g = Mat::<C64>::zeros(m, n);
    for p in paths {
        let ar = array_response(m, p.phi);
        let ab = array_response(n, p.psi);
        for j in 0..n {
            let bj = ab[j].conj();
            for i in 0..m {
                g[(i, j)] += p.gain * ar[i] * bj;
            }
        }
    }
    g
}

/// `diag(h_r^H) G`: row `m` of `G` scaled by `conj(h_r[m])`.
pub fn cascaded_downlink(h_r: &[C64], g: MatRef<'_, C64>) -> Result<Mat<C64>> {
    if h_r.len() != g.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "h_r has {} entries but G has {} rows",
            h_r.len(),
            g.nrows()
        )));
    }
    Ok(Mat::from_fn(g.nrows(), g.ncols(), |i, j| h_r[i].conj() * g[(i, j)]))
}

/// `G diag(h_q)`: column `m` of `G` scaled by `h_q[m]`.
pub fn cascaded_uplink(g: MatRef<'_, C64>, h_q: &[C64]) -> Result<Mat<C64>> {
    if h_q.len() != g.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "h_q has {} entries but G has {} columns",
            h_q.len(),
            g.ncols()
        )));
    }
    Ok(Mat::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)] * h_q[j]))
}

impl ChannelRealization {
    pub fn n_bs(&self) -> usize {
        self.g_matrix.ncols()
    }

    pub fn m_ris(&self) -> usize {
        self.g_matrix.nrows()
    }

    /// Uplink BS-RIS channel `N x M`, taken as the reciprocal `G^H`.
    pub fn uplink_g(&self) -> Mat<C64> {
        self.g_matrix.adjoint().to_owned()
    }

    fn path_a_bar(&self, path: &Path, h: &[C64]) -> Vec<C64> {
        let ar = array_response(self.m_ris(), path.phi);
        h.iter()
            .zip(ar.iter())
            .map(|(hm, am)| hm.conj() * path.gain * am)
            .collect()
    }

    /// Downlink cascade of the first path with its factors. For a
    /// single-path channel this is the whole cascaded channel.
    pub fn downlink_cascade(&self) -> CascadedChannel {
        let path = self.paths[0];
        CascadedChannel {
            h_e: cascaded_downlink(&self.h_r, self.g_matrix.as_ref()).expect("consistent dims"),
            a_bar: self.path_a_bar(&path, &self.h_r),
            psi: path.psi,
            link: Link::Downlink,
        }
    }

    /// Per-path downlink cascades; they sum to `diag(h_r^H) G`.
    pub fn downlink_path_cascades(&self) -> Vec<CascadedChannel> {
        let n = self.n_bs();
        self.paths
            .iter()
            .map(|p| {
                let a_bar = self.path_a_bar(p, &self.h_r);
                let h_e = linalg::outer(&a_bar, &array_response(n, p.psi));
                CascadedChannel {
                    h_e,
                    a_bar,
                    psi: p.psi,
                    link: Link::Downlink,
                }
            })
            .collect()
    }

    /// Uplink cascade `G_ul diag(h_q) = a_B(psi) a_bar_q^H` of user `q`
    /// (single-path channels).
    pub fn uplink_cascade(&self, q: usize) -> Result<CascadedChannel> {
        let h_q = self.h_users.get(q).ok_or_else(|| {
            Error::InvalidArgument(format!("user {q} out of range ({} users)", self.h_users.len()))
        })?;
        let g = self.uplink_g();
        // G_ul = conj(beta) a_B a_R^H, so a_bar_q[m] = beta a_R[m] conj(h_q[m]).
        Ok(CascadedChannel {
            h_e: cascaded_uplink(g.as_ref(), h_q)?,
            a_bar: self.path_a_bar(&self.paths[0], h_q),
            psi: self.psi,
            link: Link::Uplink,
        })
    }
}
