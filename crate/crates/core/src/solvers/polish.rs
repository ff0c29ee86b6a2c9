//! Active-set Newton refinement for least-squares group-lasso solutions.
//!
//! Active blocks stay active and near-tight cone rows become equalities;
//! each block is then parametrised on the null space of its tight rows and
//! the remaining smooth problem is solved by damped Newton.

use nalgebra::{DMatrix, DVector};

use super::project_feasible;
use crate::loss::group_mean;
use crate::program::{ConvexProgram, GroupWeights, ProgramMode, RegNorm};

struct Block {
    index: usize,
    basis: DMatrix<f64>,
    features: DMatrix<f64>,
}

pub(crate) fn polish(prog: &ConvexProgram, w: &GroupWeights) -> Option<GroupWeights> {
    if prog.reg() != RegNorm::L2 || prog.mode() != ProgramMode::Regularized {
        return None;
    }
    let groups = prog.loss().least_squares_groups()?;
    let mut best: Option<(GroupWeights, f64)> = None;
    for tight_tol in [1e-6, 1e-8, 1e-4] {
        if let Some(c) = polish_with(prog, w, groups, tight_tol) {
            let obj = prog.objective(&c);
            if best.as_ref().is_none_or(|(_, o)| obj < *o) {
                best = Some((c, obj));
            }
        }
    }
    best.map(|(c, _)| c)
}

fn polish_with(prog: &ConvexProgram, w: &GroupWeights, groups: usize, tight_tol: f64) -> Option<GroupWeights> {
    let p = prog.num_patterns();
    let max_norm = (0..w.num_blocks()).map(|i| w.matrix().column(i).norm()).fold(0.0, f64::max);
    if max_norm == 0.0 {
        return None;
    }
    let xc = prog.constraint_x();
    let row_norms: Vec<f64> = xc.row_iter().map(|r| r.norm()).collect();
    let mut blocks = Vec::new();
    for i in 0..w.num_blocks() {
        let wi = w.block(i);
        let nrm = wi.norm();
        if nrm <= 1e-9 * max_norm {
            continue;
        }
        let c = prog.constraint_block(i % p);
        let cw = &c * &wi;
        let tight: Vec<usize> = (0..c.nrows())
            .filter(|&r| row_norms[r] > 0.0 && cw[r] <= tight_tol * row_norms[r] * nrm)
            .collect();
        let basis = null_space(&c.select_rows(&tight), prog.dim());
        if basis.ncols() == 0 {
            return None;
        }
        let sign = if i < p { 1.0 } else { -1.0 };
        let raw = prog.feature_block(i % p) * sign;
        let features = group_mean(&raw, groups) * &basis;
        blocks.push(Block { index: i, basis, features });
    }
    let sizes: Vec<usize> = blocks.iter().map(|b| b.basis.ncols()).collect();
    let total: usize = sizes.iter().sum();
    let n_out = prog.y().len();
    let mut e = DMatrix::zeros(n_out, total);
    let mut z = DVector::zeros(total);
    let mut off = 0;
    for b in &blocks {
        let k = b.basis.ncols();
        e.columns_mut(off, k).copy_from(&b.features);
        z.rows_mut(off, k).copy_from(&(b.basis.transpose() * w.block(b.index)));
        off += k;
    }
    let y = prog.y();
    let beta = prog.beta();
    let objective = |z: &DVector<f64>| {
        let mut reg = 0.0;
        let mut o = 0;
        for &k in &sizes {
            reg += z.rows(o, k).norm();
            o += k;
        }
        0.5 * (&e * z - &y).norm_squared() + beta * reg
    };
    let ete = e.transpose() * &e;
    let mut f = objective(&z);
    for _ in 0..100 {
        let r = &e * &z - &y;
        let mut grad = e.transpose() * r;
        let mut hess = ete.clone();
        let mut o = 0;
        for &k in &sizes {
            let zb = z.rows(o, k).into_owned();
            let nb = zb.norm();
            if nb < 1e-300 {
                return None;
            }
            let unit = &zb / nb;
            grad.rows_mut(o, k).axpy(beta, &unit, 1.0);
            let curv = (DMatrix::identity(k, k) - &unit * unit.transpose()) * (beta / nb);
            let mut sub = hess.view_mut((o, o), (k, k));
            sub += curv;
            o += k;
        }
        let gnorm = grad.norm();
        if gnorm <= 1e-15 * (1.0 + y.norm()) {
            break;
        }
        let scale = hess.diagonal().amax().max(1e-300);
        let mut step = None;
        for damping in [0.0, 1e-12, 1e-9, 1e-6] {
            let mut h = hess.clone();
            for i in 0..total {
                h[(i, i)] += damping * scale;
            }
            if let Some(ch) = h.cholesky() {
                step = Some(ch.solve(&grad));
                break;
            }
        }
        let step = step?;
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-10 {
            let cand = &z - &step * t;
            let fc = objective(&cand);
            if fc <= f {
                z = cand;
                improved = fc < f;
                f = fc;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let mut out = GroupWeights::zeros(prog.dim(), p);
    let mut o = 0;
    for b in &blocks {
        let k = b.basis.ncols();
        out.set_block(b.index, &(&b.basis * z.rows(o, k)));
        o += k;
    }
    let scale = max_norm.max(1.0) * row_norms.iter().cloned().fold(0.0, f64::max).max(1.0);
    if prog.constraint_violation(&out) > 1e-8 * scale {
        return None;
    }
    Some(project_feasible(prog, &out))
}

/// Orthonormal basis of `{w : A w = 0}` in `R^dim`.
fn null_space(a: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(dim, dim);
    }
    let svd = a.transpose().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.amax();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax.max(1e-300)).count();
    // Complete the range of A^T to a basis of R^dim.
    let range = u.columns(0, rank).into_owned();
    let proj = DMatrix::identity(dim, dim) - &range * range.transpose();
    let svd2 = proj.svd(true, false);
    let u2 = svd2.u.expect("requested U");
    let keep: Vec<usize> = (0..svd2.singular_values.len()).filter(|&i| svd2.singular_values[i] > 0.5).collect();
    u2.select_columns(&keep)
}
