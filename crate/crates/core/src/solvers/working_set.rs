//! Working-set driver: solve over a subset of patterns, then price every
//! excluded block against its exact zero-optimality condition and grow the
//! subset until no block violates it.

use rayon::prelude::*;

use super::{SolveReport, SolveStatus, SolverConfig};
use crate::error::Result;
use crate::linalg::{box_least_squares, project_onto_cone};
use crate::program::{ConvexProgram, GroupWeights, ProgramMode, RegNorm};

/// Programs with at most this many patterns are solved directly.
pub const WORKING_SET_MIN: usize = 48;
/// Relative slack on the block dual-norm condition `score <= beta`.
pub const WORKING_SET_TOL: f64 = 1e-6;
const MAX_ROUNDS: usize = 200;
const PRICING_ITERS: usize = 2000;

/// Zero-optimality test of a block: a zero block `b` with negative loss
/// gradient `a` is optimal iff `min ||a + C^T mu|| <= beta`, with `mu >= 0`
/// for the constrained program and `0 <= mu <= rho` for the hinge penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pricing {
    Cone,
    Hinge { rho: f64 },
}

/// Dual score of every block at `w`; entries are only meaningful for zero
/// blocks, where `score <= beta` certifies that the block may stay zero.
pub fn block_scores(prog: &ConvexProgram, w: &GroupWeights, pricing: Pricing) -> Vec<f64> {
    let f = prog.predict(w);
    let grad = prog.adjoint(&prog.loss_gradient_of_prediction(&f));
    let p = prog.num_patterns();
    let beta = prog.beta();
    (0..2 * p)
        .into_par_iter()
        .map(|b| {
            let a = -grad.block(b);
            let upper = a.norm();
            if upper <= beta {
                return upper;
            }
            let c = prog.constraint_block(b % p);
            match pricing {
                Pricing::Cone => project_onto_cone(&c, &a).norm(),
                Pricing::Hinge { rho } => {
                    let ct = c.transpose();
                    let mu = box_least_squares(&ct, &a, 0.0, rho, PRICING_ITERS);
                    (a + ct * mu).norm()
                }
            }
        })
        .collect()
}

fn pattern_scores(scores: &[f64], p: usize) -> Vec<f64> {
    (0..p).map(|i| scores[i].max(scores[i + p])).collect()
}

/// Runs `inner` on growing restrictions of `prog`, warm-starting every
/// round from the previous solution. Falls back to a single direct solve
/// when the program is small or pricing does not apply.
pub(crate) fn solve<F>(prog: &ConvexProgram, cfg: &SolverConfig, pricing: Pricing, inner: F) -> Result<(GroupWeights, SolveReport)>
where
    F: Fn(&ConvexProgram, Option<&GroupWeights>) -> Result<(GroupWeights, SolveReport)>,
{
    let p = prog.num_patterns();
    let direct = !cfg.working_set
        || p <= WORKING_SET_MIN
        || prog.reg() != RegNorm::L2
        || prog.beta() <= 0.0
        || matches!(prog.mode(), ProgramMode::Interpolation { .. });
    if direct {
        return inner(prog, None);
    }
    let start = std::time::Instant::now();
    let beta = prog.beta();
    let n = prog.x().nrows();
    let batch = (n / 2).max(8);

    let zero = prog.zero_weights();
    let initial = pattern_scores(&block_scores(prog, &zero, pricing), p);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| initial[b].total_cmp(&initial[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order.into_iter().take((2 * n).max(16).min(p)).collect();
    keep.sort_unstable();

    let mut iterations = 0;
    let mut history = Vec::new();
    let mut log = Vec::new();
    let mut warm: Option<GroupWeights> = None;
    for round in 1..=MAX_ROUNDS {
        let sub = prog.restrict(&keep)?;
        let (ws, rep) = inner(&sub, warm.as_ref())?;
        iterations += rep.iterations;
        history.extend(rep.objective_history.iter().copied());
        log.extend(rep.log.iter().cloned());
        let w = prog.embed(&keep, &ws);
        let scores = pattern_scores(&block_scores(prog, &w, pricing), p);
        let mut violators: Vec<usize> = (0..p)
            .filter(|i| keep.binary_search(i).is_err() && scores[*i] > beta * (1.0 + WORKING_SET_TOL))
            .collect();
        let done = violators.is_empty() || keep.len() == p;
        if done {
            let worst = (0..p).filter(|i| keep.binary_search(i).is_err()).map(|i| scores[i] / beta).fold(0.0, f64::max);
            let mut message = format!("working set {} of {p} patterns after {round} rounds; max excluded score/beta {worst:.3e}", keep.len());
            if let Some(m) = &rep.message {
                message = format!("{m}; {message}");
            }
            let status = if rep.status == SolveStatus::Converged && !violators.is_empty() { SolveStatus::MaxIters } else { rep.status };
            let report = SolveReport {
                status,
                objective: rep.objective,
                objective_history: history,
                final_violation: prog.constraint_violation(&w),
                iterations,
                wall_time: if cfg.record_time { start.elapsed().as_secs_f64() } else { rep.wall_time },
                log,
                message: Some(message),
            };
            return Ok((w, report));
        }
        violators.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        keep.extend(violators.into_iter().take(batch));
        keep.sort_unstable();
        warm = Some(prog.select(&keep, &w));
    }
    // Unreachable in practice: every round adds at least one pattern.
    let (w, rep) = inner(prog, None)?;
    Ok((w, rep))
}
