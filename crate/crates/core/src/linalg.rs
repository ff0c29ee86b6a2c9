//! Dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};

/// Thin SVD with singular values sorted nonincreasing.
///
/// `u` is n×k, `v` is d×k with k = min(n, d); `rank` counts singular values
/// above `tol * sigma_1`. All-zero input yields rank 0 and empty factors.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
    pub rank: usize,
}

impl SvdFactors {
    /// Sum of the top `k` rank-one terms.
    pub fn truncate(&self, k: usize) -> DMatrix<f64> {
        let k = k.min(self.sigma.len());
        let n = self.u.nrows();
        let d = self.v.nrows();
        let mut out = DMatrix::zeros(n, d);
        for j in 0..k {
            out += self.u.column(j) * self.v.column(j).transpose() * self.sigma[j];
        }
        out
    }
}

pub fn svd_decompose(x: &DMatrix<f64>, tol: f64) -> Result<SvdFactors> {
    let (n, d) = x.shape();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("matrix contains non-finite entries".into()));
    }
    let max_abs = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if n == 0 || d == 0 || max_abs == 0.0 {
        return Ok(SvdFactors {
            u: DMatrix::zeros(n, 0),
            sigma: DVector::zeros(0),
            v: DMatrix::zeros(d, 0),
            rank: 0,
        });
    }
    let svd = SVD::try_new(x.clone(), true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Data("SVD failed to converge".into()))?;
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut su = DMatrix::zeros(n, k);
    let mut sv = DMatrix::zeros(d, k);
    let mut sigma = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_column(dst, &vt.row(src).transpose());
        sigma[dst] = svd.singular_values[src];
    }
    let rank = sigma.iter().filter(|&&s| s > tol * sigma[0]).count();
    Ok(SvdFactors { u: su, sigma, v: sv, rank })
}

/// Least squares via SVD; minimum-norm solution for rank-deficient systems.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = SVD::new(a.clone(), true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-13 * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, eps.max(1e-300)).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Least squares on a full-column-rank system by Householder QR, falling
/// back to [`lstsq`] when the columns are (nearly) dependent.
fn lstsq_tall(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (m, k) = a.shape();
    if k == 0 || k > m {
        return lstsq(a, b);
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    if r.diagonal().iter().any(|v| v.abs() <= 1e-10 * diag_max.max(1e-300)) {
        return lstsq(a, b);
    }
    let rhs = qr.q().transpose() * b;
    r.solve_upper_triangular(&rhs).unwrap_or_else(|| lstsq(a, b))
}

/// Lawson–Hanson nonnegative least squares: `min ||A x - b||` over `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (m, n) = a.shape();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let norm = a.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
    let tol = 10.0 * f64::EPSILON * norm * (m.max(n) as f64) * b.amax().max(1.0);
    let mut passive = vec![false; n];
    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        let grad = a.transpose() * (b - a * &x);
        let mut best = None;
        let mut best_val = tol;
        for j in 0..n {
            if !passive[j] && grad[j] > best_val {
                best_val = grad[j];
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = a.select_columns(&idx);
            let s_sub = lstsq_tall(&sub, b);
            if s_sub.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (p, &k) in idx.iter().enumerate() {
                    x[k] = s_sub[p];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (p, &k) in idx.iter().enumerate() {
                if s_sub[p] <= 0.0 {
                    let denom = x[k] - s_sub[p];
                    if denom > 0.0 {
                        alpha = alpha.min(x[k] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            let scale = x.amax().max(1e-300);
            for (p, &k) in idx.iter().enumerate() {
                x[k] += alpha * (s_sub[p] - x[k]);
                if x[k] <= 1e-14 * scale {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
            if idx.iter().all(|&k| !passive[k]) {
                break;
            }
        }
    }
    x
}

/// Euclidean projection of `z` onto the polyhedral cone `{w : C w >= 0}`.
pub fn project_onto_cone(c: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
    let viol = c * z;
    if viol.iter().all(|&v| v >= 0.0) {
        return z.clone();
    }
    let mu = nnls(&c.transpose(), &(-z));
    z + c.transpose() * mu
}

/// Box-constrained least squares `min ||r0 + M c||` over `lo <= c <= hi`.
pub fn box_least_squares(
    m: &DMatrix<f64>,
    r0: &DVector<f64>,
    lo: f64,
    hi: f64,
    iters: usize,
) -> DVector<f64> {
    let k = m.ncols();
    let mut c = DVector::from_element(k, 0.5 * (lo + hi));
    if k == 0 {
        return c;
    }
    let gram = m.transpose() * m;
    let lip = gram.norm().max(1e-300);
    let lin = m.transpose() * r0;
    let mut y = c.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let g = &gram * &y + &lin;
        let next = (&y - g / lip).map(|v| v.clamp(lo, hi));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &c) * ((t - 1.0) / t_next);
        y.apply(|v| *v = v.clamp(lo, hi));
        c = next;
        t = t_next;
    }
    c
}

/// Largest eigenvalue of a positive semidefinite operator by power iteration.
pub fn power_iteration<F>(dim: usize, iters: usize, mut apply: F) -> f64
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    if dim == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(dim, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = apply(&v);
        let nrm = w.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        lambda = nrm;
        v = w / nrm;
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_reconstructs_and_sorts() {
        let x = DMatrix::from_row_slice(4, 3, &[1., 2., 0., 0., 1., 3., 4., 0., 1., 2., 2., 2.]);
        let f = svd_decompose(&x, 1e-10).unwrap();
        assert_eq!(f.rank, 3);
        for j in 1..3 {
            assert!(f.sigma[j - 1] >= f.sigma[j]);
        }
        let back = f.truncate(3);
        assert!((back - &x).norm() < 1e-12 * x.norm());
    }

    #[test]
    fn svd_zero_matrix_has_rank_zero() {
        let f = svd_decompose(&DMatrix::zeros(3, 2), 1e-10).unwrap();
        assert_eq!(f.rank, 0);
        assert_eq!(f.sigma.len(), 0);
    }

    #[test]
    fn nnls_matches_known_solution() {
        let a = DMatrix::from_row_slice(3, 2, &[1., 0., 0., 1., 1., 1.]);
        let b = DVector::from_vec(vec![-1.0, 2.0, 1.0]);
        let x = nnls(&a, &b);
        // With x0 clamped at 0 the optimum of (x1-2)^2+(x1-1)^2 is 1.5.
        assert!(x[0].abs() < 1e-12);
        assert!((x[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn cone_projection_is_feasible_and_idempotent() {
        let c = DMatrix::from_row_slice(2, 2, &[1., 0., 1., 1.]);
        let z = DVector::from_vec(vec![-1.0, 0.5]);
        let p = project_onto_cone(&c, &z);
        assert!((c.clone() * &p).iter().all(|&v| v >= -1e-12));
        let q = project_onto_cone(&c, &p);
        assert!((q - &p).norm() < 1e-12);
    }
}
