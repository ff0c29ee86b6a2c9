//! Singular-value-thresholding proximal gradient for
//! `0.5 * ||sum_k X_k z_k - y||^2 + beta * ||Z||_*`.

use nalgebra::{DMatrix, DVector};

use super::fista::fista;
use super::{SolveReport, SolverConfig};
use crate::error::{invalid, Error, Result};
use crate::linalg::power_iteration;

pub fn nuclear_norm(z: &DMatrix<f64>) -> f64 {
    if z.is_empty() {
        return 0.0;
    }
    z.clone().svd(false, false).singular_values.sum()
}

fn check_patches(patches: &[DMatrix<f64>], y: &DVector<f64>) -> Result<(usize, usize)> {
    let first = patches.first().ok_or_else(|| Error::InvalidArgument("no patches".into()))?;
    let (n, d) = first.shape();
    if patches.iter().any(|p| p.shape() != (n, d)) {
        return Err(Error::Shape("patch matrices differ in shape".into()));
    }
    if y.len() != n {
        return Err(Error::Shape(format!("labels have {} rows but patches have {n}", y.len())));
    }
    Ok((n, d))
}

/// Prediction `sum_k X_k z_k` for `Z = [z_1 ... z_K]`.
pub fn patch_predict(patches: &[DMatrix<f64>], z: &DMatrix<f64>) -> DVector<f64> {
    let n = patches[0].nrows();
    let mut out = DVector::zeros(n);
    for (k, xk) in patches.iter().enumerate() {
        out += xk * z.column(k);
    }
    out
}

/// `[X_1^T v ... X_K^T v]`.
pub fn patch_adjoint(patches: &[DMatrix<f64>], v: &DVector<f64>) -> DMatrix<f64> {
    let d = patches[0].ncols();
    let mut out = DMatrix::zeros(d, patches.len());
    for (k, xk) in patches.iter().enumerate() {
        out.set_column(k, &(xk.transpose() * v));
    }
    out
}

/// Largest singular value of `[X_1^T v ... X_K^T v]` with `v` the residual
/// at `z`; optimality requires it to be at most `beta`.
pub fn nuclear_certificate(patches: &[DMatrix<f64>], y: &DVector<f64>, z: &DMatrix<f64>) -> f64 {
    let v = patch_predict(patches, z) - y;
    let m = patch_adjoint(patches, &v);
    m.svd(false, false).singular_values.amax()
}

pub(crate) fn svt(z: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let svd = z.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let s = svd.singular_values.map(|s| (s - t).max(0.0));
    u * DMatrix::from_diagonal(&s) * vt
}

pub fn solve_nuclear(
    patches: &[DMatrix<f64>],
    y: &DVector<f64>,
    beta: f64,
    cfg: &SolverConfig,
) -> Result<(DMatrix<f64>, SolveReport)> {
    cfg.validate()?;
    let (_, d) = check_patches(patches, y)?;
    if !(beta >= 0.0) {
        return invalid("beta must be nonnegative");
    }
    let start = std::time::Instant::now();
    let kk = patches.len();
    let to_z = |x: &DVector<f64>| DMatrix::from_column_slice(d, kk, x.as_slice());
    let smooth = |x: &DVector<f64>| {
        let r = patch_predict(patches, &to_z(x)) - y;
        let g = patch_adjoint(patches, &r);
        (0.5 * r.norm_squared(), DVector::from_column_slice(g.as_slice()))
    };
    let nonsmooth = |x: &DVector<f64>| beta * nuclear_norm(&to_z(x));
    let prox = |v: &DVector<f64>, t: f64| DVector::from_column_slice(svt(&to_z(v), t * beta).as_slice());
    let lip = power_iteration(d * kk, 20, |v| {
        let f = patch_predict(patches, &to_z(v));
        DVector::from_column_slice(patch_adjoint(patches, &f).as_slice())
    });
    let outcome = fista(DVector::zeros(d * kk), lip, cfg, smooth, nonsmooth, prox, |_| 0.0);
    let z = to_z(&outcome.x);
    let objective = 0.5 * (patch_predict(patches, &z) - y).norm_squared() + beta * nuclear_norm(&z);
    let report = SolveReport {
        status: outcome.status,
        objective,
        objective_history: outcome.history,
        final_violation: 0.0,
        iterations: outcome.iterations,
        wall_time: start.elapsed().as_secs_f64(),
        log: outcome.log,
        message: None,
    };
    Ok((z, report))
}
