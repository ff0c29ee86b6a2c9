use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DVector;

use crate::error::{Error, Result};

/// Row constraint `a^T u >= t` (strict) or `a^T u >= 0` (weak).
pub(crate) struct MarginRow<'a> {
    pub coeffs: &'a [f64],
    pub strict: bool,
}

/// Solves `max t` subject to the rows, `|u_k| <= 1` and `t <= 1`.
///
/// Returns the optimal margin and the maximiser `u`. Strict rows should be
/// normalised so margins are comparable across rows.
pub(crate) fn max_margin(dim: usize, rows: &[MarginRow<'_>]) -> Result<(f64, DVector<f64>)> {
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let u: Vec<_> = (0..dim).map(|_| problem.add_var(0.0, (-1.0, 1.0))).collect();
    let t = problem.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    for row in rows {
        let mut terms: Vec<_> = u
            .iter()
            .zip(row.coeffs)
            .filter(|(_, c)| **c != 0.0)
            .map(|(v, c)| (*v, *c))
            .collect();
        if row.strict {
            terms.push((t, -1.0));
        }
        if terms.is_empty() {
            continue;
        }
        problem.add_constraint(terms.as_slice(), ComparisonOp::Ge, 0.0);
    }
    match problem.solve() {
        Ok(sol) => {
            let w = DVector::from_iterator(dim, u.iter().map(|v| sol[*v]));
            Ok((sol[t], w))
        }
        Err(minilp::Error::Infeasible) => Ok((f64::NEG_INFINITY, DVector::zeros(dim))),
        Err(e) => Err(Error::Lp(e.to_string())),
    }
}
