//! One-dimensional search over the BS steering manifold `psi in [0, 1)`.
//!
//! Every angle subproblem in the estimators has the form "maximize a smooth
//! periodic score of `psi`". [`GridSearch`] does that with a circular coarse
//! grid followed by shrinking local grids. [`SteeringQuadratic`] evaluates
//! the common score `a_B(psi)^H C a_B(psi) - 2 Re{a_B(psi)^H b} + c` in `O(N)`
//! per angle by pre-summing the diagonals of `C`.

use std::f64::consts::PI;

use faer::MatRef;
use serde::{Deserialize, Serialize};

use crate::channel::wrap_angle;
use crate::C64;

/// Coarse-to-fine circular grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    /// Coarse grid size; `None` means `4 N`.
    pub coarse_points: Option<usize>,
    pub refine_levels: usize,
    /// Ratio between successive grid spacings, in `(0, 1)`.
    pub refine_shrink: f64,
}

impl Default for GridSearch {
    fn default() -> Self {
        Self {
            coarse_points: None,
            refine_levels: 6,
            refine_shrink: 0.1,
        }
    }
}

impl GridSearch {
    pub fn coarse_for(&self, n_bs: usize) -> usize {
        self.coarse_points.unwrap_or(4 * n_bs).max(1)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.coarse_points == Some(0) {
            return Err(crate::Error::InvalidArgument("coarse grid needs at least one point".into()));
        }
        if !(self.refine_shrink > 0.0 && self.refine_shrink < 1.0) {
            return Err(crate::Error::InvalidArgument(format!(
                "refine_shrink must lie in (0, 1), got {}",
                self.refine_shrink
            )));
        }
        Ok(())
    }

    /// Maximizes `score` over the circle. Ties keep the earliest point seen.
    ///
    /// Level 0 evaluates `coarse` equispaced angles. Each refinement level
    /// scans `best +/- spacing` with the spacing multiplied by
    /// `refine_shrink`, wrapping around the circle.
    pub fn maximize<F: FnMut(f64) -> f64>(&self, n_bs: usize, mut score: F) -> f64 {
        let coarse = self.coarse_for(n_bs);
        let mut spacing = 1.0 / coarse as f64;
        let mut best = 0.0;
        let mut best_score = f64::NEG_INFINITY;
        for i in 0..coarse {
            let psi = i as f64 * spacing;
            let s = score(psi);
            if s > best_score {
                best_score = s;
                best = psi;
            }
        }
        for _ in 0..self.refine_levels {
            let fine = spacing * self.refine_shrink;
            let steps = (spacing / fine).ceil() as i64;
            let center = best;
            for j in -steps..=steps {
                if j == 0 {
                    continue;
                }
                let psi = wrap_angle(center + j as f64 * fine);
                let s = score(psi);
                if s > best_score {
                    best_score = s;
                    best = psi;
                }
            }
            spacing = fine;
        }
        wrap_angle(best)
    }
}

/// `q(psi) = a^H C a - 2 Re{a^H b} + constant` with `a = a_B(psi)` and Hermitian
/// `C`.
#[derive(Debug, Clone)]
pub struct SteeringQuadratic {
    /// `diag_sums[d] = sum_{n - m = d} C[n, m]` for `d = 0..N`.
    diag_sums: Vec<C64>,
    linear: Vec<C64>,
    constant: f64,
}

impl SteeringQuadratic {
    /// Pure quadratic form `a^H C a`.
    pub fn from_gram(c: MatRef<'_, C64>) -> Self {
        let n = c.nrows();
        debug_assert_eq!(n, c.ncols());
        let mut diag_sums = vec![C64::new(0.0, 0.0); n];
        for (d, slot) in diag_sums.iter_mut().enumerate() {
            for m in 0..n - d {
                *slot += c[(m + d, m)];
            }
        }
        Self {
            diag_sums,
            linear: Vec::new(),
            constant: 0.0,
        }
    }

    /// Adds `-2 Re{a^H b} + constant`.
    pub fn with_linear(mut self, b: Vec<C64>, constant: f64) -> Self {
        debug_assert!(b.is_empty() || b.len() == self.diag_sums.len());
        self.linear = b;
        self.constant = constant;
        self
    }

    pub fn n_bs(&self) -> usize {
        self.diag_sums.len()
    }

    pub fn eval(&self, psi: f64) -> f64 {
        let n = self.n_bs();
        if n == 0 {
            return self.constant;
        }
        let w = 2.0 * PI * psi;
        // a^H C a = (1/N) sum_{n,m} C[n,m] e^{j w (n - m)}, Hermitian C.
        let mut quad = self.diag_sums[0].re;
        for d in 1..n {
            quad += 2.0 * (self.diag_sums[d] * C64::cis(w * d as f64)).re;
        }
        quad /= n as f64;
        let mut lin = 0.0;
        if !self.linear.is_empty() {
            let mut acc = C64::new(0.0, 0.0);
            for (i, b) in self.linear.iter().enumerate() {
                acc += C64::cis(w * i as f64) * b;
            }
            lin = acc.re / (n as f64).sqrt();
        }
        quad - 2.0 * lin + self.constant
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{array_response, circular_distance};
    use crate::linalg;
    use crate::random::{complex_gaussian, rng_for, Stream};
    use faer::Mat;

    fn brute_quadratic(c: MatRef<'_, C64>, b: &[C64], k: f64, psi: f64) -> f64 {
        let a = array_response(c.nrows(), psi);
        let ca = linalg::mat_vec(c, &a);
        let quad: C64 = a.iter().zip(ca.iter()).map(|(x, y)| x.conj() * y).sum();
        let lin: C64 = a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum();
        quad.re - 2.0 * lin.re + k
    }

    #[test]
    fn quadratic_matches_brute_force() {
        let mut rng = rng_for(1, Stream::Design);
        let n = 9;
        let x = Mat::from_fn(n, 5, |_, _| complex_gaussian(&mut rng, 1.0));
        let c = x.as_ref() * x.adjoint();
        let b: Vec<C64> = (0..n).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let q = SteeringQuadratic::from_gram(c.as_ref()).with_linear(b.clone(), 3.5);
        for i in 0..50 {
            let psi = i as f64 / 50.0 + 0.0037;
            let got = q.eval(psi);
            let want = brute_quadratic(c.as_ref(), &b, 3.5, psi);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    fn rank_one_score(n: usize, psi_true: f64) -> SteeringQuadratic {
        // S = w a_B(psi*)^H, score ||S a_B(psi)||^2 = a^H S^H S a.
        let a = array_response(n, psi_true);
        let w: Vec<C64> = (0..7).map(|i| C64::new(1.0 + i as f64, -0.5 * i as f64)).collect();
        let s = linalg::outer(&w, &a);
        SteeringQuadratic::from_gram((s.adjoint() * s.as_ref()).as_ref())
    }

    #[test]
    fn finds_peak_of_noiseless_score() {
        let gs = GridSearch::default();
        for (n, psi_true) in [(16usize, 0.3141), (32, 0.77777), (8, 0.0123)] {
            let q = rank_one_score(n, psi_true);
            let got = gs.maximize(n, |p| q.eval(p));
            // Fine-grid oracle over 10^6 points.
            let mut oracle = 0.0;
            let mut best = f64::NEG_INFINITY;
            for i in 0..1_000_000 {
                let p = i as f64 / 1e6;
                let s = q.eval(p);
                if s > best {
                    best = s;
                    oracle = p;
                }
            }
            assert!(circular_distance(oracle, psi_true) <= 1e-6);
            assert!(circular_distance(got, psi_true) <= 1e-6, "n={n} got {got}");
        }
    }

    #[test]
    fn wraps_around_the_circle() {
        let gs = GridSearch::default();
        for psi_true in [0.999, 0.9999995, 0.0000004] {
            let q = rank_one_score(16, psi_true);
            let got = gs.maximize(16, |p| q.eval(p));
            assert!((0.0..1.0).contains(&got));
            assert!(circular_distance(got, psi_true) <= 1e-6, "{psi_true} -> {got}");
        }
    }

    #[test]
    fn constant_score_returns_valid_angle() {
        let got = GridSearch::default().maximize(10, |_| 1.0);
        assert!((0.0..1.0).contains(&got));
    }

    #[test]
    fn validation() {
        assert!(GridSearch::default().validate().is_ok());
        let bad = GridSearch { refine_shrink: 1.0, ..GridSearch::default() };
        assert!(bad.validate().is_err());
        let bad = GridSearch { coarse_points: Some(0), ..GridSearch::default() };
        assert!(bad.validate().is_err());
    }
}
