//! Complex lasso in the Fourier domain for circular convolutions.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::fista::fista;
use super::{SolveReport, SolverConfig};
use crate::error::{invalid, Error, Result};
use crate::linalg::power_iteration;

/// Unitary DFT matrix `F_{jk} = exp(-2 pi i j k / d) / sqrt(d)`.
pub fn dft_matrix(d: usize) -> DMatrix<Complex64> {
    let scale = 1.0 / (d as f64).sqrt();
    DMatrix::from_fn(d, d, |j, k| {
        let angle = -2.0 * std::f64::consts::PI * ((j * k) % d) as f64 / d as f64;
        Complex64::from_polar(scale, angle)
    })
}

/// Circulant filter `F diag(z) F^H` with spectrum `z`.
pub fn circulant_from_spectrum(z: &DVector<Complex64>) -> DMatrix<Complex64> {
    let f = dft_matrix(z.len());
    let fh = f.adjoint();
    f * DMatrix::from_diagonal(z) * fh
}

/// Solves `min 0.5 * ||X F z - y||^2 + (beta / sqrt(d)) * ||z||_1` over
/// complex `z` by proximal gradient; the prox shrinks magnitudes and keeps
/// phases.
pub fn solve_circular_fourier(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: f64,
    cfg: &SolverConfig,
) -> Result<(DVector<Complex64>, SolveReport)> {
    cfg.validate()?;
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(Error::Shape(format!("labels have {} rows but data has {n}", y.len())));
    }
    if !(beta >= 0.0) {
        return invalid("beta must be nonnegative");
    }
    let start = std::time::Instant::now();
    let xf = x.map(|v| Complex64::new(v, 0.0)) * dft_matrix(d);
    // Real form: [Re; Im] of the prediction from [Re z; Im z].
    let mut m = DMatrix::zeros(2 * n, 2 * d);
    for i in 0..n {
        for k in 0..d {
            let c = xf[(i, k)];
            m[(i, k)] = c.re;
            m[(i, k + d)] = -c.im;
            m[(i + n, k)] = c.im;
            m[(i + n, k + d)] = c.re;
        }
    }
    let mut target = DVector::zeros(2 * n);
    target.rows_mut(0, n).copy_from(y);
    let lam = beta / (d as f64).sqrt();
    let mt = m.transpose();
    let smooth = |v: &DVector<f64>| {
        let r = &m * v - &target;
        (0.5 * r.norm_squared(), &mt * r)
    };
    let nonsmooth = |v: &DVector<f64>| lam * (0..d).map(|k| v[k].hypot(v[k + d])).sum::<f64>();
    let prox = |v: &DVector<f64>, t: f64| {
        let mut out = v.clone();
        for k in 0..d {
            let mag = v[k].hypot(v[k + d]);
            let s = if mag > t * lam { 1.0 - t * lam / mag } else { 0.0 };
            out[k] *= s;
            out[k + d] *= s;
        }
        out
    };
    let mtm = &mt * &m;
    let lip = power_iteration(2 * d, 20, |v| &mtm * v);
    let outcome = fista(DVector::zeros(2 * d), lip, cfg, smooth, nonsmooth, prox, |_| 0.0);
    let z = DVector::from_fn(d, |k, _| Complex64::new(outcome.x[k], outcome.x[k + d]));
    let report = SolveReport {
        status: outcome.status,
        objective: smooth(&outcome.x).0 + nonsmooth(&outcome.x),
        objective_history: outcome.history,
        final_violation: 0.0,
        iterations: outcome.iterations,
        wall_time: start.elapsed().as_secs_f64(),
        log: outcome.log,
        message: None,
    };
    Ok((z, report))
}
