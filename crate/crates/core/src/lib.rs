//! Channel estimation for RIS-aided MIMO links by rank-one matrix
//! factorization.
//!
//! When the BS-RIS link is line-of-sight, the downlink cascaded channel
//! `H_e = diag(h_r^H) G` factors as `a_bar a_B(psi)^H`: an `M`-vector times the
//! conjugate of a BS array response. Estimating the `M + 1` factor parameters
//! instead of all `M N` entries cuts the number of training pilots from `M N`
//! to `M`.
//!
//! Modules:
//!
//! - [`channel`]: ground-truth channels and cascaded channels.
//! - [`signal`]: pilot and RIS phase schedules, noisy observations, despreading.
//! - [`mf`]: single-user downlink estimation (spectral initialization,
//!   alternating minimization, gradient descent, successive multipath).
//! - [`multiuser`]: two-stage uplink estimation and phase-design analysis.
//! - [`baselines`]: full least squares and unstructured rank-one recovery.
//! - [`experiments`]: metrics, the Monte Carlo sweep runner and result files.
//! - [`acceptance`]: the end-to-end property suite run by `rismf verify`.

pub mod acceptance;
pub mod baselines;
pub mod channel;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod manifold;
pub mod mf;
pub mod multiuser;
pub mod random;
pub mod scenario;
pub mod signal;

pub use faer;
pub use num_complex::Complex64 as C64;

pub use error::{Error, Result};
