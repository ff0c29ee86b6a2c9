//! Accelerated proximal gradient on the constrained program itself.
//!
//! For the Euclidean group norm the prox of `t beta ||w|| + indicator(C w >= 0)`
//! is exact: project onto the cone, then shrink the norm. A block whose
//! input has norm at most `t beta` maps to zero without a projection.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::fista::fista;
use super::{SolveReport, SolverConfig};
use crate::error::{Error, Result};
use crate::linalg::{power_iteration, project_onto_cone};
use crate::program::{ConvexProgram, GroupWeights, ProgramMode, RegNorm};

/// Exact prox of `thr * ||.||_2` restricted to the cone `{w : C w >= 0}`.
pub fn prox_cone_group(c: &DMatrix<f64>, z: &DVector<f64>, thr: f64) -> DVector<f64> {
    if z.norm() <= thr {
        return DVector::zeros(z.len());
    }
    let proj = project_onto_cone(c, z);
    let nrm = proj.norm();
    if nrm <= thr {
        DVector::zeros(z.len())
    } else {
        proj * (1.0 - thr / nrm)
    }
}

/// Solves the regularized program with every iterate feasible.
pub fn solve_projected(prog: &ConvexProgram, cfg: &SolverConfig) -> Result<(GroupWeights, SolveReport)> {
    cfg.validate()?;
    if prog.reg() != RegNorm::L2 || matches!(prog.mode(), ProgramMode::Interpolation { .. }) {
        return Err(Error::Unsupported("the projected solver needs the regularized program with the l2 group norm".into()));
    }
    let start = std::time::Instant::now();
    let d = prog.dim();
    let p = prog.num_patterns();
    let nb = 2 * p;
    let blocks: Vec<DMatrix<f64>> = (0..p).map(|i| prog.constraint_block(i)).collect();
    let to_w = |x: &DVector<f64>| GroupWeights::from_matrix(DMatrix::from_column_slice(d, nb, x.as_slice())).unwrap();
    let smooth = |x: &DVector<f64>| {
        let w = to_w(x);
        let f = prog.predict(&w);
        let g = prog.adjoint(&prog.loss_gradient_of_prediction(&f));
        (prog.loss_of_prediction(&f), DVector::from_column_slice(g.matrix().as_slice()))
    };
    let nonsmooth = |x: &DVector<f64>| prog.beta() * prog.group_norm(&to_w(x));
    let prox = |v: &DVector<f64>, t: f64| {
        let thr = t * prog.beta();
        let out: Vec<DVector<f64>> = (0..nb)
            .into_par_iter()
            .map(|j| prox_cone_group(&blocks[j % p], &v.rows(j * d, d).into_owned(), thr))
            .collect();
        let mut x = DVector::zeros(d * nb);
        for (j, b) in out.iter().enumerate() {
            x.rows_mut(j * d, d).copy_from(b);
        }
        x
    };
    let lip0 = prog.loss().smoothness().unwrap_or(1.0)
        * power_iteration(d * nb, 20, |v| {
            let f = prog.predict(&to_w(v));
            DVector::from_column_slice(prog.adjoint(&f).matrix().as_slice())
        });
    let outcome = fista(DVector::zeros(d * nb), lip0, cfg, smooth, nonsmooth, prox, |x| prog.constraint_violation(&to_w(x)));
    let w = to_w(&outcome.x);
    let report = SolveReport {
        status: outcome.status,
        objective: prog.objective(&w),
        objective_history: outcome.history,
        final_violation: prog.constraint_violation(&w),
        iterations: outcome.iterations,
        wall_time: start.elapsed().as_secs_f64(),
        log: outcome.log,
        message: None,
    };
    Ok((w, report))
}
