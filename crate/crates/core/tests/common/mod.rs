//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn uniform_index(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn leaky(x: f64, kappa: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        kappa * x
    }
}

/// Lawson–Hanson NNLS, written independently of the library.
pub fn oracle_nnls(e: &DMatrix<f64>, f: &DVector<f64>) -> DVector<f64> {
    let m = e.ncols();
    let mut x = DVector::zeros(m);
    let mut passive: Vec<usize> = Vec::new();
    let tol = 1e-13 * e.amax().max(1.0) * f.amax().max(1.0);
    for _ in 0..(5 * e.nrows() + 50) {
        let resid = f - e * &x;
        let grad = e.transpose() * &resid;
        let cand = (0..m)
            .filter(|j| !passive.contains(j))
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]));
        let Some(j) = cand else { break };
        if grad[j] <= tol {
            break;
        }
        passive.push(j);
        loop {
            let sub = e.select_columns(&passive);
            let qr = sub.clone().svd(true, true);
            let z = qr.solve(f, 1e-14).unwrap();
            if z.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &c) in passive.iter().enumerate() {
                    x[c] = z[k];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (k, &c) in passive.iter().enumerate() {
                if z[k] <= 0.0 {
                    let denom = x[c] - z[k];
                    alpha = alpha.min(if denom > 0.0 { x[c] / denom } else { 0.0 });
                }
            }
            for (k, &c) in passive.iter().enumerate() {
                x[c] += alpha * (z[k] - x[c]);
            }
            passive.retain(|&c| x[c] > 1e-15);
            for c in 0..m {
                if !passive.contains(&c) {
                    x[c] = 0.0;
                }
            }
            if passive.is_empty() {
                break;
            }
        }
    }
    x
}

/// Squared distance from `y` to `{v : G v <= h}` by least-distance
/// programming on top of NNLS.
pub fn oracle_dist2(g: &DMatrix<f64>, h: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let n = y.len();
    let slack = h - g * y;
    if slack.iter().all(|&s| s >= 0.0) {
        return 0.0;
    }
    let m = g.nrows();
    let mut e = DMatrix::zeros(n + 1, m);
    // Constraints in the form (-G) delta >= -slack.
    e.rows_mut(0, n).copy_from(&(-g.transpose()));
    for j in 0..m {
        e[(n, j)] = -slack[j];
    }
    let mut f = DVector::zeros(n + 1);
    f[n] = 1.0;
    let u = oracle_nnls(&e, &f);
    let r = &e * u - &f;
    assert!(r[n].abs() > 1e-14, "least-distance problem infeasible: r = {r}, u nnz = {}", u_nnz(&e, &f));
    let delta = r.rows(0, n) / (-r[n]);
    delta.norm_squared()
}

/// Global optimum of the weight-decayed two-layer problem with squared loss
/// for data with at most two columns, bracketed as `(lower, upper)`.
///
/// Uses the semi-infinite dual `max -0.5||v - y||^2 + 0.5||y||^2` subject to
/// `|v^T phi(X u)| <= beta` on the unit sphere. The sphere is discretised on
/// a grid that contains every angle where a row changes sign; the grid gives
/// an upper bound and the grid scaled by `cos(spacing / 2)` a lower bound.
pub fn dual_oracle(x: &DMatrix<f64>, y: &DVector<f64>, beta: f64, kappa: f64, grid: usize) -> (f64, f64) {
    let (n, d) = x.shape();
    assert!(d <= 2, "oracle handles at most two columns");
    let mut dirs: Vec<DVector<f64>> = Vec::new();
    let mut max_gap = 0.0;
    if d == 1 {
        dirs.push(DVector::from_element(1, 1.0));
        dirs.push(DVector::from_element(1, -1.0));
    } else {
        let mut angles: Vec<f64> = (0..grid).map(|k| 2.0 * std::f64::consts::PI * k as f64 / grid as f64).collect();
        for i in 0..n {
            let (a, b) = (x[(i, 0)], x[(i, 1)]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let base = (-a).atan2(b);
            for shift in [0.0, std::f64::consts::PI] {
                angles.push((base + shift).rem_euclid(2.0 * std::f64::consts::PI));
            }
        }
        angles.sort_by(f64::total_cmp);
        for k in 0..angles.len() {
            let next = if k + 1 < angles.len() { angles[k + 1] } else { angles[0] + 2.0 * std::f64::consts::PI };
            max_gap = f64::max(max_gap, next - angles[k]);
        }
        for &t in &angles {
            dirs.push(DVector::from_vec(vec![t.cos(), t.sin()]));
        }
    }
    let m = dirs.len();
    let mut g = DMatrix::zeros(2 * m, n);
    for (j, u) in dirs.iter().enumerate() {
        let a = (x * u).map(|v| leaky(v, kappa));
        g.row_mut(2 * j).copy_from(&a.transpose());
        g.row_mut(2 * j + 1).copy_from(&(-a.transpose()));
    }
    let y2 = y.norm_squared();
    let outer = DVector::from_element(2 * m, beta);
    let upper = 0.5 * y2 - 0.5 * oracle_dist2(&g, &outer, y);
    let shrink = (0.5 * max_gap).cos();
    let inner = DVector::from_element(2 * m, beta * shrink);
    let lower = 0.5 * y2 - 0.5 * oracle_dist2(&g, &inner, y);
    (lower, upper)
}

/// Every distinct pattern hit by a dense set of directions (brute force).
pub fn brute_force_patterns(x: &DMatrix<f64>, draws: usize, seed: u64) -> std::collections::BTreeSet<String> {
    let mut r = rng(seed);
    let mut out = std::collections::BTreeSet::new();
    for _ in 0..draws {
        let u = gaussian_vector(&mut r, x.ncols());
        let s: String = (x * u).iter().map(|&v| if v >= 0.0 { '1' } else { '0' }).collect();
        out.insert(s);
    }
    out
}

fn u_nnz(e: &DMatrix<f64>, f: &DVector<f64>) -> usize {
    oracle_nnls(e, f).iter().filter(|v| **v > 0.0).count()
}
