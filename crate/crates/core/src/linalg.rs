//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Everything here works on `faer` matrices of [`C64`]. Least-squares solves
//! go through a Householder QR factorization and report rank problems from
//! the diagonal of the triangular factor instead of returning garbage.

use faer::linalg::solvers::SolveLstsq;
use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::C64;

/// Below this ratio of smallest to largest `|R_ii|` the design is treated as
/// exactly singular.
const SINGULAR_RATIO: f64 = 1e-13;

/// Solves `min_x ||A x - b||_2` with a thin QR factorization of `A`.
///
/// Fails with [`Error::RankDeficient`] when `A` has fewer rows than columns or
/// is numerically singular, and with [`Error::IllConditioned`] when the
/// estimated condition number exceeds `max_condition`.
pub fn lstsq(a: MatRef<'_, C64>, b: &[C64], max_condition: f64) -> Result<Vec<C64>> {
    let (rows, cols) = (a.nrows(), a.ncols());
    if b.len() != rows {
        return Err(Error::DimensionMismatch(format!(
            "design has {rows} rows but right-hand side has {} entries",
            b.len()
        )));
    }
    if cols == 0 {
        return Ok(Vec::new());
    }
    if rows < cols {
        return Err(Error::RankDeficient(format!(
            "{rows} equations for {cols} unknowns"
        )));
    }

    let qr = a.qr();
    let r = qr.thin_R();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..cols {
        let d = r[(i, i)].norm();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if !(hi > 0.0) || lo <= SINGULAR_RATIO * hi {
        return Err(Error::RankDeficient(format!(
            "{rows}x{cols} design is numerically singular"
        )));
    }
    let estimate = hi / lo;
    if estimate > max_condition {
        return Err(Error::IllConditioned {
            estimate,
            limit: max_condition,
        });
    }

    let rhs = Mat::from_fn(rows, 1, |i, _| b[i]);
    let x = qr.solve_lstsq(&rhs);
    Ok((0..cols).map(|i| x[(i, 0)]).collect())
}

/// Squared Frobenius norm.
pub fn fro_norm_sqr(m: MatRef<'_, C64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            acc += m[(i, j)].norm_sqr();
        }
    }
    acc
}

/// Squared Frobenius norm of `a - b`.
pub fn fro_dist_sqr(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> f64 {
    debug_assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            acc += (a[(i, j)] - b[(i, j)]).norm_sqr();
        }
    }
    acc
}

pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `u v^H` as a `u.len() x v.len()` matrix.
pub fn outer(u: &[C64], v: &[C64]) -> Mat<C64> {
    Mat::from_fn(u.len(), v.len(), |i, j| u[i] * v[j].conj())
}

/// `A x` for a plain slice.
pub fn mat_vec(a: MatRef<'_, C64>, x: &[C64]) -> Vec<C64> {
    debug_assert_eq!(a.ncols(), x.len());
    let mut y = vec![C64::new(0.0, 0.0); a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += a[(i, j)] * xj;
        }
    }
    y
}

/// Singular values in non-increasing order.
pub fn singular_values(m: MatRef<'_, C64>) -> Vec<f64> {
    let mut s = m
        .singular_values()
        .expect("SVD iteration failed to converge");
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Leading singular triple `(sigma, u, v)` with `m ~ sigma u v^H`.
pub fn top_singular_pair(m: MatRef<'_, C64>) -> (f64, Vec<C64>, Vec<C64>) {
    let svd = m.thin_svd().expect("SVD iteration failed to converge");
    let s = svd.S().column_vector();
    let mut best = 0;
    for i in 1..s.nrows() {
        if s[i].re > s[best].re {
            best = i;
        }
    }
    let u = svd.U().col(best).iter().copied().collect();
    let v = svd.V().col(best).iter().copied().collect();
    (s[best].re, u, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn lstsq_recovers_exact_solution() {
        let a = Mat::from_fn(5, 3, |i, j| c((i * 3 + j) as f64 % 7.0 - 2.0, (i as f64) - j as f64 * 0.5));
        let x = [c(1.0, -1.0), c(0.5, 2.0), c(-3.0, 0.25)];
        let b = mat_vec(a.as_ref(), &x);
        let got = lstsq(a.as_ref(), &b, 1e12).unwrap();
        for (g, e) in got.iter().zip(x.iter()) {
            assert!((g - e).norm() < 1e-12);
        }
    }

    #[test]
    fn lstsq_rejects_underdetermined_and_singular() {
        let a = Mat::from_fn(2, 3, |i, j| c((i + j) as f64, 0.0));
        assert!(matches!(
            lstsq(a.as_ref(), &[c(1.0, 0.0); 2], 1e12),
            Err(Error::RankDeficient(_))
        ));
        // Two identical columns.
        let a = Mat::from_fn(4, 2, |i, _| c(i as f64 + 1.0, 0.0));
        assert!(matches!(
            lstsq(a.as_ref(), &[c(1.0, 0.0); 4], 1e12),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn condition_limit_is_enforced() {
        let a = Mat::from_fn(3, 2, |i, j| match (i, j) {
            (0, 0) => c(1.0, 0.0),
            (1, 1) => c(1e-6, 0.0),
            _ => c(0.0, 0.0),
        });
        assert!(matches!(
            lstsq(a.as_ref(), &[c(1.0, 0.0); 3], 1e3),
            Err(Error::IllConditioned { .. })
        ));
        assert!(lstsq(a.as_ref(), &[c(1.0, 0.0); 3], 1e9).is_ok());
    }

    #[test]
    fn top_pair_of_rank_one() {
        let u = [c(1.0, 2.0), c(-0.5, 0.0), c(0.0, 1.0)];
        let v = [c(0.6, 0.0), c(0.0, 0.8)];
        let m = outer(&u, &v);
        let (s, uu, vv) = top_singular_pair(m.as_ref());
        let rec = outer(&uu.iter().map(|z| z * s).collect::<Vec<_>>(), &vv);
        assert!(fro_dist_sqr(rec.as_ref(), m.as_ref()) < 1e-24);
        let sv = singular_values(m.as_ref());
        assert!(sv[1] <= 1e-12 * sv[0]);
    }
}
