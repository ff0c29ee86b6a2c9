//! ADMM for the cone-constrained group-lasso program.
//!
//! Splitting: `u` carries the least-squares term, `v = u` the group norm and
//! `s = C u >= 0` the cone constraints. The `u`-system
//! `G^T G + rho (I + C^T C)` is inverted with Woodbury; `C^T C` is block
//! diagonal with the shared block `X_c^T X_c` because the signs square to one.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::polish::polish;
use super::{project_feasible, prox_group, Clock, LogRecord, SolveReport, SolveStatus, SolverConfig};
use crate::error::{Error, Result};
use crate::loss::{group_mean, group_spread};
use crate::program::{ConvexProgram, GroupWeights, ProgramMode};

struct Factor {
    binv: DMatrix<f64>,
    core: Cholesky<f64, Dyn>,
}

struct Operators<'a> {
    prog: &'a ConvexProgram,
    groups: usize,
    /// Sum over patterns of `g_i g_i^T`, in data-row space.
    gate_gram: DMatrix<f64>,
    /// `[signs signs]`, one column per block.
    signs2: DMatrix<f64>,
}

impl<'a> Operators<'a> {
    fn new(prog: &'a ConvexProgram, groups: usize) -> Self {
        let gates = prog.gates();
        let gate_gram = gates * gates.transpose();
        let p = prog.num_patterns();
        let signs = prog.signs();
        let signs2 = DMatrix::from_fn(signs.nrows(), 2 * p, |r, j| signs[(r, j % p)]);
        Self { prog, groups, gate_gram, signs2 }
    }

    fn g(&self, u: &DMatrix<f64>) -> DVector<f64> {
        let w = GroupWeights::from_matrix(u.clone()).expect("even block count");
        let f = self.prog.predict(&w);
        let fm = DMatrix::from_column_slice(f.len(), 1, f.as_slice());
        group_mean(&fm, self.groups).column(0).into_owned()
    }

    fn gt(&self, r: &DVector<f64>) -> DMatrix<f64> {
        let rm = DMatrix::from_column_slice(r.len(), 1, r.as_slice());
        let spread = group_spread(&rm, self.groups).column(0).into_owned();
        self.prog.adjoint(&spread).into_matrix()
    }

    fn c(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        (self.prog.constraint_x() * u).component_mul(&self.signs2)
    }

    fn ct(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        self.prog.constraint_x().transpose() * s.component_mul(&self.signs2)
    }

    fn factor(&self, rho: f64, interpolate: bool) -> Result<Factor> {
        let xc = self.prog.constraint_x();
        let d = xc.ncols();
        let b = (DMatrix::identity(d, d) + xc.transpose() * xc) * rho;
        let binv = Cholesky::new(b)
            .ok_or_else(|| Error::Diverged("ridge block is not positive definite".into()))?
            .inverse();
        let x = self.prog.x();
        let h = x * &binv * x.transpose();
        let raw = h.component_mul(&self.gate_gram) * 2.0;
        let rows = group_mean(&raw, self.groups);
        let core = group_mean(&rows.transpose(), self.groups).transpose();
        let n = core.nrows();
        let mut k = if interpolate { core } else { core + DMatrix::identity(n, n) };
        let scale = k.diagonal().amax().max(1.0);
        let mut jitter = if interpolate { 1e-13 * scale } else { 0.0 };
        loop {
            if let Some(ch) = Cholesky::new(k.clone()) {
                return Ok(Factor { binv, core: ch });
            }
            jitter = if jitter == 0.0 { 1e-10 * scale } else { jitter * 10.0 };
            if jitter > 1e-2 * scale {
                return Err(Error::Diverged("ADMM core system is singular".into()));
            }
            for i in 0..n {
                k[(i, i)] += jitter;
            }
        }
    }
}

/// Solves the constrained program by ADMM with residual balancing.
///
/// The returned weights are projected onto the constraint cones and, when
/// enabled, refined by an active-set Newton step that is kept only if it
/// lowers the objective.
///
/// Large regularized programs are solved over a working set of patterns
/// that grows until every excluded block is certified zero-optimal.
pub fn solve_admm(prog: &ConvexProgram, cfg: &SolverConfig) -> Result<(GroupWeights, SolveReport)> {
    cfg.validate()?;
    if prog.loss().least_squares_groups().is_none() {
        return Err(Error::Unsupported("ADMM needs a least-squares loss; use the penalized solver".into()));
    }
    super::working_set::solve(prog, cfg, super::working_set::Pricing::Cone, |sub, warm| admm_full(sub, cfg, warm))
}

fn admm_full(prog: &ConvexProgram, cfg: &SolverConfig, warm: Option<&GroupWeights>) -> Result<(GroupWeights, SolveReport)> {
    let groups = prog.loss().least_squares_groups().ok_or_else(|| {
        Error::Unsupported("ADMM needs a least-squares loss; use the penalized solver".into())
    })?;
    let clock = Clock::new(cfg.record_time);
    let ops = Operators::new(prog, groups);
    let interpolate = matches!(prog.mode(), ProgramMode::Interpolation { .. });
    let threshold = if interpolate { 1.0 } else { prog.beta() };
    let y = prog.y();
    let d = prog.dim();
    let nb = 2 * prog.num_patterns();
    let m = prog.constraint_x().nrows();

    let mut rho = cfg.rho_admm;
    let mut fac = ops.factor(rho, interpolate)?;
    let gty = ops.gt(&y);
    let mut v = warm.map_or_else(|| DMatrix::zeros(d, nb), |w| w.matrix().clone());
    let mut lam = DMatrix::zeros(d, nb);
    let mut s = ops.c(&v).map(|x| x.max(0.0));
    let mut nu = DMatrix::zeros(m, nb);
    let n_primal = ((d + m) * nb) as f64;
    let n_dual = (d * nb) as f64;

    let mut history = Vec::new();
    let mut log = Vec::new();
    let mut status = SolveStatus::MaxIters;
    let mut iterations = 0;
    for k in 1..=cfg.max_iters {
        iterations = k;
        let mut rhs = (&v - &lam + ops.ct(&(&s - &nu))) * rho;
        if !interpolate {
            rhs += &gty;
        }
        let a = &fac.binv * &rhs;
        let ga = ops.g(&a);
        let z = if interpolate { fac.core.solve(&(ga - &y)) } else { fac.core.solve(&ga) };
        let u = &a - &fac.binv * ops.gt(&z);

        let v_old = v.clone();
        let s_old = s.clone();
        let shifted = &u + &lam;
        for j in 0..nb {
            let col = prox_group(&shifted.column(j).into_owned(), threshold / rho, prog.reg());
            v.set_column(j, &col);
        }
        let cu = ops.c(&u);
        s = (&cu + &nu).map(|x| x.max(0.0));
        lam += &u - &v;
        nu += &cu - &s;

        let r_prim = ((&u - &v).norm_squared() + (&cu - &s).norm_squared()).sqrt();
        let r_dual = rho * ((&v - &v_old) + ops.ct(&(&s - &s_old))).norm();
        let eps_prim = n_primal.sqrt() * cfg.abs_tol
            + cfg.rel_tol * (u.norm_squared() + cu.norm_squared()).sqrt().max((v.norm_squared() + s.norm_squared()).sqrt());
        let eps_dual = n_dual.sqrt() * cfg.abs_tol + cfg.rel_tol * rho * (&lam + ops.ct(&nu)).norm();

        let wv = GroupWeights::from_matrix(v.clone())?;
        let obj = prog.objective(&wv);
        history.push(obj);
        if k % cfg.log_every.max(1) == 0 || k == 1 {
            log.push(LogRecord { iter: k, objective: obj, violation: prog.constraint_violation(&wv), time: clock.stamp() });
        }
        if !obj.is_finite() {
            return Err(Error::Diverged("ADMM objective became non-finite".into()));
        }
        if r_prim <= eps_prim && r_dual <= eps_dual {
            status = SolveStatus::Converged;
            break;
        }
        if k % 10 == 0 {
            let new_rho = if r_prim > 10.0 * r_dual {
                rho * 2.0
            } else if r_dual > 10.0 * r_prim {
                rho / 2.0
            } else {
                rho
            };
            if new_rho != rho && (1e-8..=1e8).contains(&new_rho) {
                lam *= rho / new_rho;
                nu *= rho / new_rho;
                rho = new_rho;
                fac = ops.factor(rho, interpolate)?;
            }
        }
    }

    let raw = GroupWeights::from_matrix(v)?;
    let mut best = project_feasible(prog, &raw);
    let mut best_obj = prog.objective(&best);
    let mut message = None;
    if cfg.polish && !interpolate {
        if let Some(p) = polish(prog, &best) {
            let obj = prog.objective(&p);
            if obj < best_obj {
                best = p;
                best_obj = obj;
                message = Some("polished".to_string());
            }
        }
    }
    if let ProgramMode::Interpolation { feas_tol } = prog.mode() {
        if prog.residual_norm(&best) > feas_tol {
            status = SolveStatus::Infeasible;
            message = Some(format!("residual {:.3e} exceeds tolerance {feas_tol:.3e}", prog.residual_norm(&best)));
        }
    }
    let final_violation = prog.constraint_violation(&best);
    log.push(LogRecord { iter: iterations, objective: best_obj, violation: final_violation, time: clock.stamp() });
    let report = SolveReport {
        status,
        objective: best_obj,
        objective_history: history,
        final_violation,
        iterations,
        wall_time: clock.elapsed(),
        log,
        message,
    };
    Ok((best, report))
}
