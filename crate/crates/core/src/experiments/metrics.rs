//! Per-trial error and spectral-efficiency metrics.

use faer::{Mat, MatRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::array_response;
use crate::error::{Error, Result};
use crate::signal::random_phase_schedule;
use crate::{linalg, C64};

/// `||h_true - h_hat||_F^2 / ||h_true||_F^2`.
pub fn nmse(h_true: MatRef<'_, C64>, h_hat: MatRef<'_, C64>) -> Result<f64> {
    if h_true.nrows() != h_hat.nrows() || h_true.ncols() != h_hat.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            h_true.nrows(),
            h_true.ncols(),
            h_hat.nrows(),
            h_hat.ncols()
        )));
    }
    let denom = linalg::fro_norm_sqr(h_true);
    if denom == 0.0 {
        return Err(Error::InvalidArgument("NMSE of a zero channel is undefined".into()));
    }
    Ok(linalg::fro_dist_sqr(h_true, h_hat) / denom)
}

/// Mean of the per-user NMSE.
pub fn nmse_multi(h_true: &[Mat<C64>], h_hat: &[Mat<C64>]) -> Result<f64> {
    if h_true.len() != h_hat.len() || h_true.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} true channels vs {} estimates",
            h_true.len(),
            h_hat.len()
        )));
    }
    let mut total = 0.0;
    for (t, h) in h_true.iter().zip(h_hat) {
        total += nmse(t.as_ref(), h.as_ref())?;
    }
    Ok(total / h_true.len() as f64)
}

/// RIS phases `theta` (length `M`) and BS beamformer `x` (length `N`).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamDesign {
    pub theta: Vec<C64>,
    pub x: Vec<C64>,
}

impl BeamDesign {
    /// Phase alignment plus matched beamforming on the dominant singular
    /// pair `sigma u v^H`: `theta_m = exp(-j arg u_m)`, `x = v`.
    pub fn from_channel(h: MatRef<'_, C64>) -> Self {
        let (_, u, v) = linalg::top_singular_pair(h);
        let theta = u
            .iter()
            .map(|z| if z.norm() == 0.0 { C64::new(1.0, 0.0) } else { C64::cis(-z.arg()) })
            .collect();
        Self { theta, x: v }
    }

    /// Uniform random phases and a steering beam toward a uniform random angle.
    pub fn random<R: Rng + ?Sized>(m_ris: usize, n_bs: usize, rng: &mut R) -> Self {
        let theta = random_phase_schedule(m_ris, 1, rng);
        let psi: f64 = rng.random();
        Self {
            theta: (0..m_ris).map(|i| theta[(i, 0)]).collect(),
            x: array_response(n_bs, psi),
        }
    }

    /// `log2(1 + |theta^T H x|^2 / sigma^2)`.
    pub fn spectral_efficiency(&self, h: MatRef<'_, C64>, noise_var: f64) -> Result<f64> {
        if !(noise_var > 0.0) {
            return Err(Error::InvalidArgument(format!("noise variance must be positive, got {noise_var}")));
        }
        if self.theta.len() != h.nrows() || self.x.len() != h.ncols() {
            return Err(Error::DimensionMismatch("beam design does not match the channel".into()));
        }
        let hx = linalg::mat_vec(h, &self.x);
        let gain: C64 = self.theta.iter().zip(hx.iter()).map(|(t, y)| t * y).sum();
        Ok((1.0 + gain.norm_sqr() / noise_var).log2())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeMode {
    /// Design from the estimate.
    Estimated,
    /// Random phases and beam.
    Random,
    /// Design from the true channel.
    Optimal,
}

/// Spectral efficiency on the true channel with the design chosen by `mode`.
/// `rng` is only drawn from in [`SeMode::Random`].
pub fn spectral_efficiency<R: Rng + ?Sized>(
    h_e_true: MatRef<'_, C64>,
    h_e_hat: MatRef<'_, C64>,
    noise_var: f64,
    mode: SeMode,
    rng: &mut R,
) -> Result<f64> {
    if h_e_true.nrows() != h_e_hat.nrows() || h_e_true.ncols() != h_e_hat.ncols() {
        return Err(Error::DimensionMismatch("estimate and channel differ in shape".into()));
    }
    let design = match mode {
        SeMode::Estimated => BeamDesign::from_channel(h_e_hat),
        SeMode::Optimal => BeamDesign::from_channel(h_e_true),
        SeMode::Random => BeamDesign::random(h_e_true.nrows(), h_e_true.ncols(), rng),
    };
    design.spectral_efficiency(h_e_true, noise_var)
}
