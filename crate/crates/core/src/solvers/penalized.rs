//! Accelerated proximal gradient for the hinge-penalized program.
//!
//! The nonsmooth part `beta ||w_i|| + rho * sum hinge(-(C_i w_i))` has no
//! closed-form prox; per block it is solved through its box-constrained
//! dual `w = shrink(z + C_i^T mu)`, `0 <= mu <= t * rho`, by accelerated
//! projected gradient with warm starts.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::fista::fista;
use super::{SolveReport, SolverConfig};
use crate::error::Result;
use crate::linalg::{nnls, power_iteration};
use crate::program::{ConvexProgram, GroupWeights, ProgramMode, RegNorm};

/// Solves `objective + rho * hinge` for each `rho` in the continuation
/// schedule, warm-starting every stage from the previous one.
///
/// The returned iterate is not projected; `final_violation` reports how far
/// it is from the constraint cones.
pub fn solve_penalized(prog: &ConvexProgram, cfg: &SolverConfig) -> Result<(GroupWeights, SolveReport)> {
    cfg.validate()?;
    let rho = *cfg.rho_hinge.last().expect("validated nonempty");
    super::working_set::solve(prog, cfg, super::working_set::Pricing::Hinge { rho }, |sub, warm| {
        penalized_full(sub, cfg, warm)
    })
}

/// A warm start is taken to be near the final stage already, so only the
/// last penalty of the schedule is run from it.
fn penalized_full(
    prog: &ConvexProgram,
    cfg: &SolverConfig,
    warm: Option<&GroupWeights>,
) -> Result<(GroupWeights, SolveReport)> {
    if matches!(prog.mode(), ProgramMode::Interpolation { .. }) {
        return Err(crate::error::Error::Unsupported(
            "the penalized solver handles the regularized program only".into(),
        ));
    }
    let start = std::time::Instant::now();
    let d = prog.dim();
    let p = prog.num_patterns();
    let nb = 2 * p;
    let xc = prog.constraint_x();
    let dual_lip = {
        let s = xc.clone().svd(false, false).singular_values;
        (s.amax() * s.amax()).max(1e-12)
    };
    let cones: Vec<DMatrix<f64>> = (0..p).map(|i| prog.constraint_block(i)).collect();
    let to_w = |x: &DVector<f64>| GroupWeights::from_matrix(DMatrix::from_column_slice(d, nb, x.as_slice())).unwrap();

    let smooth = |x: &DVector<f64>| {
        let w = to_w(x);
        let f = prog.predict(&w);
        let g = prog.adjoint(&prog.loss_gradient_of_prediction(&f));
        (prog.loss_of_prediction(&f), DVector::from_column_slice(g.matrix().as_slice()))
    };
    let smoothness = prog.loss().smoothness().unwrap_or(1.0);
    let lip0 = smoothness
        * power_iteration(d * nb, 20, |v| {
            let w = to_w(v);
            let f = prog.predict(&w);
            DVector::from_column_slice(prog.adjoint(&f).matrix().as_slice())
        });

    let (mut x, schedule) = match warm {
        Some(w) => (DVector::from_column_slice(w.matrix().as_slice()), &cfg.rho_hinge[cfg.rho_hinge.len() - 1..]),
        None => (DVector::zeros(d * nb), &cfg.rho_hinge[..]),
    };
    let mut history = Vec::new();
    let mut log = Vec::new();
    let mut iterations = 0;
    let mut status = super::SolveStatus::MaxIters;
    let mut lip = lip0;
    // Dual variables of every block, stored as fractions of their box bound.
    let duals = RefCell::new(vec![DVector::<f64>::zeros(xc.nrows()); nb]);
    for &rho in schedule {
        let nonsmooth = |x: &DVector<f64>| {
            let w = to_w(x);
            prog.beta() * prog.group_norm(&w) + rho * prog.hinge_violation(&w)
        };
        let prox = |v: &DVector<f64>, t: f64| {
            let mut duals = duals.borrow_mut();
            let mut out = DVector::zeros(d * nb);
            out.as_mut_slice()
                .par_chunks_mut(d)
                .zip(duals.par_iter_mut())
                .enumerate()
                .for_each(|(j, (dst, frac))| {
                    let z = &v.as_slice()[j * d..(j + 1) * d];
                    let inner = BlockProx {
                        cone: &cones[j % p],
                        thr: t * prog.beta(),
                        reg: prog.reg(),
                        bound: t * rho,
                        step: 1.0 / dual_lip,
                        iters: cfg.inner_prox_iters,
                    };
                    inner.solve(z, frac, dst);
                });
            out
        };
        let violation = |x: &DVector<f64>| prog.constraint_violation(&to_w(x));
        let outcome = fista(x.clone(), lip, cfg, smooth, nonsmooth, prox, violation);
        x = outcome.x;
        lip = outcome.lipschitz;
        for mut rec in outcome.log {
            rec.iter += iterations;
            log.push(rec);
        }
        iterations += outcome.iterations;
        history.extend(outcome.history);
        status = outcome.status;
    }
    let w = to_w(&x);
    let rho_last = *cfg.rho_hinge.last().expect("validated nonempty");
    let objective = prog.penalized_objective(&w, rho_last);
    let report = SolveReport {
        status,
        objective,
        objective_history: history,
        final_violation: prog.constraint_violation(&w),
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        log,
        message: None,
    };
    Ok((w, report))
}

/// Prox of `thr ||w|| + bound * sum hinge(-(C w))` for one block.
struct BlockProx<'a> {
    cone: &'a DMatrix<f64>,
    thr: f64,
    reg: RegNorm,
    bound: f64,
    step: f64,
    iters: usize,
}

impl BlockProx<'_> {
    fn shrink(&self, v: &mut [f64]) {
        match self.reg {
            RegNorm::L2 => {
                let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let s = if nrm <= self.thr { 0.0 } else { 1.0 - self.thr / nrm };
                v.iter_mut().for_each(|x| *x *= s);
            }
            RegNorm::L1 => v.iter_mut().for_each(|x| *x = x.signum() * (x.abs() - self.thr).max(0.0)),
        }
    }

    /// `w = shrink(z + C^T mu)`.
    fn primal(&self, z: &[f64], mu: &[f64], w: &mut [f64]) {
        let c = self.cone;
        for (k, wk) in w.iter_mut().enumerate() {
            let col = c.column(k);
            *wk = z[k] + col.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>();
        }
        self.shrink(w);
    }

    fn apply(&self, w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, wk) in w.iter().enumerate() {
            if *wk != 0.0 {
                for (o, a) in out.iter_mut().zip(self.cone.column(k).iter()) {
                    *o += a * wk;
                }
            }
        }
    }

    /// Accelerated projected gradient on the box-constrained dual, warm
    /// started from `frac` and writing the primal block to `out`.
    fn solve(&self, z: &[f64], frac: &mut DVector<f64>, out: &mut [f64]) {
        let m = self.cone.nrows();
        let mut cw = vec![0.0; m];
        let zeros = vec![0.0; m];
        self.primal(z, &zeros, out);
        self.apply(out, &mut cw);
        if cw.iter().all(|&v| v >= 0.0) {
            frac.fill(0.0);
            return;
        }
        let bound = self.bound;
        if self.reg == RegNorm::L2 {
            // Exact penalty: the cone-constrained prox has the projection
            // multipliers as its own; when they fit in the box it is also
            // the hinge prox.
            let zv = DVector::from_column_slice(z);
            let lam = nnls(&self.cone.transpose(), &(-zv));
            if lam.iter().all(|&l| l <= bound) {
                self.primal(z, lam.as_slice(), out);
                for (f, l) in frac.iter_mut().zip(lam.iter()) {
                    *f = if bound > 0.0 { l / bound } else { 0.0 };
                }
                return;
            }
        }
        let mut mu: Vec<f64> = frac.iter().map(|f| f * bound).collect();
        let mut y = mu.clone();
        let mut next = vec![0.0; m];
        let mut tk = 1.0f64;
        for _ in 0..self.iters {
            self.primal(z, &y, out);
            self.apply(out, &mut cw);
            for r in 0..m {
                next[r] = (y[r] - cw[r] * self.step).clamp(0.0, bound);
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
            let mom = (tk - 1.0) / t_next;
            for r in 0..m {
                y[r] = (next[r] + (next[r] - mu[r]) * mom).clamp(0.0, bound);
            }
            std::mem::swap(&mut mu, &mut next);
            tk = t_next;
        }
        for (f, m) in frac.iter_mut().zip(&mu) {
            *f = if bound > 0.0 { m / bound } else { 0.0 };
        }
        self.primal(z, &mu, out);
    }
}
