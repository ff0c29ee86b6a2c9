//! Interior-point solve of the constrained program as a conic program.
//!
//! Variables are the stacked blocks, one norm bound per block (or one
//! absolute-value bound per entry for the l1 norm) and, in the regularized
//! mode, the residual. Cone constraints keep every block inside its
//! arrangement cone, so the returned point is feasible up to a final
//! projection that only removes round-off.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::DMatrix;

use super::polish::polish;
use super::{project_feasible, LogRecord, SolveReport, SolveStatus, SolverConfig};
use crate::error::{Error, Result};
use crate::loss::group_mean;
use crate::program::{ConvexProgram, GroupWeights, ProgramMode, RegNorm};

#[derive(Default)]
struct Triplets {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Triplets {
    fn push(&mut self, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            self.rows.push(r);
            self.cols.push(c);
            self.vals.push(v);
        }
    }

    fn into_csc(self, m: usize, n: usize) -> CscMatrix<f64> {
        CscMatrix::new_from_triplets(m, n, self.rows, self.cols, self.vals)
    }
}

/// Solves the program (regularized or interpolation, l1 or l2 group norm)
/// with a primal-dual interior-point method. Least-squares losses only.
pub fn solve_conic(prog: &ConvexProgram, cfg: &SolverConfig) -> Result<(GroupWeights, SolveReport)> {
    cfg.validate()?;
    if prog.loss().least_squares_groups().is_none() {
        return Err(Error::Unsupported("the conic solver needs a least-squares loss; use the penalized solver".into()));
    }
    super::working_set::solve(prog, cfg, super::working_set::Pricing::Cone, |sub, _| conic_full(sub, cfg))
}

fn conic_full(prog: &ConvexProgram, cfg: &SolverConfig) -> Result<(GroupWeights, SolveReport)> {
    let start = std::time::Instant::now();
    let groups = prog.loss().least_squares_groups().expect("checked by caller");
    let d = prog.dim();
    let p = prog.num_patterns();
    let nb = 2 * p;
    let y = prog.y();
    let n_out = y.len();
    let l2 = prog.reg() == RegNorm::L2;
    let regularized = prog.mode() == ProgramMode::Regularized;

    let nw = nb * d;
    let n_bound = if l2 { nb } else { nb * d };
    let r_off = nw + n_bound;
    let nvar = r_off + if regularized { n_out } else { 0 };

    // Prediction operator, one dense column per block coordinate.
    let mut pred = DMatrix::zeros(n_out, nw);
    for i in 0..p {
        let f = group_mean(&prog.feature_block(i), groups);
        pred.columns_mut(i * d, d).copy_from(&f);
        pred.columns_mut((i + p) * d, d).copy_from(&(-f));
    }

    let mut a = Triplets::default();
    let mut b = Vec::new();
    let mut cones = Vec::new();
    let mut row = 0;
    if regularized {
        // pred w - r = y
        for c in 0..nw {
            for r in 0..n_out {
                a.push(row + r, c, pred[(r, c)]);
            }
        }
        for r in 0..n_out {
            a.push(row + r, r_off + r, -1.0);
        }
        b.extend(y.iter().copied());
        cones.push(SupportedConeT::ZeroConeT(n_out));
        row += n_out;
    }

    // Cone rows C_i w_i >= 0; all-zero data rows carry no constraint.
    let xc = prog.constraint_x();
    let live: Vec<usize> = (0..xc.nrows()).filter(|&r| xc.row(r).iter().any(|v| *v != 0.0)).collect();
    let start_nonneg = row;
    for j in 0..nb {
        let signs = prog.signs().column(j % p);
        for &r in &live {
            for k in 0..d {
                a.push(row, j * d + k, -signs[r] * xc[(r, k)]);
            }
            b.push(0.0);
            row += 1;
        }
    }
    if !l2 {
        // u >= w and u >= -w entrywise.
        for e in 0..nw {
            a.push(row, nw + e, -1.0);
            a.push(row, e, 1.0);
            a.push(row + 1, nw + e, -1.0);
            a.push(row + 1, e, -1.0);
            b.extend([0.0, 0.0]);
            row += 2;
        }
    }
    cones.push(SupportedConeT::NonnegativeConeT(row - start_nonneg));
    if l2 {
        for j in 0..nb {
            a.push(row, nw + j, -1.0);
            for k in 0..d {
                a.push(row + 1 + k, j * d + k, -1.0);
            }
            b.extend(std::iter::repeat_n(0.0, d + 1));
            cones.push(SupportedConeT::SecondOrderConeT(d + 1));
            row += d + 1;
        }
    }
    if let ProgramMode::Interpolation { feas_tol } = prog.mode() {
        // (feas_tol, pred w - y) in the second-order cone.
        b.push(feas_tol);
        for r in 0..n_out {
            for c in 0..nw {
                a.push(row + 1 + r, c, -pred[(r, c)]);
            }
            b.push(-y[r]);
        }
        cones.push(SupportedConeT::SecondOrderConeT(n_out + 1));
        row += n_out + 1;
    }
    let a = a.into_csc(row, nvar);

    let mut q = vec![0.0; nvar];
    let weight = if regularized { prog.beta() } else { 1.0 };
    for v in q.iter_mut().skip(nw).take(n_bound) {
        *v = weight;
    }
    let mut pm = Triplets::default();
    if regularized {
        for r in 0..n_out {
            pm.push(r_off + r, r_off + r, 1.0);
        }
    }
    let pm = pm.into_csc(nvar, nvar);

    let settings = DefaultSettings { verbose: false, ..DefaultSettings::default() };
    let mut solver = DefaultSolver::new(&pm, &q, &a, &b, &cones, settings)
        .map_err(|e| Error::InvalidArgument(format!("conic setup failed: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    let (status, mut message) = match sol.status {
        SolverStatus::Solved => (SolveStatus::Converged, None),
        SolverStatus::AlmostSolved => (SolveStatus::Converged, Some("reduced accuracy".to_string())),
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            (SolveStatus::Infeasible, Some("no feasible point".to_string()))
        }
        other => (SolveStatus::MaxIters, Some(format!("interior point stopped: {other:?}"))),
    };
    let raw = GroupWeights::from_matrix(DMatrix::from_column_slice(d, nb, &sol.x[..nw]))?;
    let mut best = project_feasible(prog, &raw);
    let mut best_obj = prog.objective(&best);
    if cfg.polish && status == SolveStatus::Converged && regularized {
        if let Some(c) = polish(prog, &best) {
            let obj = prog.objective(&c);
            if obj < best_obj {
                best = c;
                best_obj = obj;
                message = Some(message.map_or("polished".into(), |m| format!("{m}; polished")));
            }
        }
    }
    let iterations = sol.iterations as usize;
    let final_violation = prog.constraint_violation(&best);
    let record = LogRecord {
        iter: iterations,
        objective: best_obj,
        violation: final_violation,
        time: cfg.record_time.then(|| start.elapsed().as_secs_f64()),
    };
    let report = SolveReport {
        status,
        objective: best_obj,
        objective_history: vec![best_obj],
        final_violation,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        log: vec![record],
        message,
    };
    Ok((best, report))
}
