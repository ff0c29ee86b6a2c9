//! Solvers for the convex programs.

mod admm;
mod conic;
mod fista;
mod fourier;
mod nuclear;
mod penalized;
mod polish;
mod projected;
mod working_set;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::project_onto_cone;
use crate::program::{ConvexProgram, GroupWeights, RegNorm};

pub use admm::solve_admm;
pub use conic::solve_conic;
pub use working_set::{block_scores, Pricing, WORKING_SET_MIN, WORKING_SET_TOL};
pub use fourier::{circulant_from_spectrum, dft_matrix, solve_circular_fourier};
pub use nuclear::{nuclear_certificate, nuclear_norm, patch_adjoint, patch_predict, solve_nuclear};
pub use penalized::solve_penalized;
pub use projected::{prox_cone_group, solve_projected};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    Fixed,
    Backtracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Relative objective change over `window` iterations that stops FISTA.
    pub obj_tol: f64,
    pub window: usize,
    pub rho_admm: f64,
    /// Hinge penalty schedule for the penalized form; the last entry is final.
    pub rho_hinge: Vec<f64>,
    pub step_rule: StepRule,
    pub inner_prox_iters: usize,
    pub seed: u64,
    pub log_every: usize,
    /// Record wall-clock time in log records (breaks byte-identical output).
    pub record_time: bool,
    /// Active-set Newton refinement after ADMM.
    pub polish: bool,
    /// Solve over a growing subset of patterns certified by block pricing.
    #[serde(default = "default_true")]
    pub working_set: bool,
}

fn default_true() -> bool {
    true
}

impl SolverConfig {
    /// Tight tolerances for exactness checks.
    pub fn exact() -> Self {
        Self {
            max_iters: 50_000,
            abs_tol: 1e-10,
            rel_tol: 1e-9,
            obj_tol: 1e-8,
            window: 10,
            rho_admm: 1.0,
            rho_hinge: vec![0.01, 0.1, 1.0, 10.0],
            step_rule: StepRule::Backtracking,
            inner_prox_iters: 50,
            seed: 0,
            log_every: 10,
            record_time: false,
            polish: true,
            working_set: true,
        }
    }

    /// Looser tolerances for experiment sweeps.
    pub fn experiment() -> Self {
        Self { abs_tol: 1e-7, rel_tol: 1e-6, obj_tol: 1e-6, max_iters: 20_000, ..Self::exact() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0 && self.obj_tol > 0.0) {
            return invalid("tolerances must be positive");
        }
        if !(self.rho_admm > 0.0) || self.rho_hinge.is_empty() || self.rho_hinge.iter().any(|r| !(*r > 0.0)) {
            return invalid("penalty parameters must be positive");
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::exact()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    Infeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub objective: f64,
    pub violation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: f64,
    pub objective_history: Vec<f64>,
    pub final_violation: f64,
    pub iterations: usize,
    pub wall_time: f64,
    pub log: Vec<LogRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl SolveReport {
    /// One JSON object per log record.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for rec in &self.log {
            out.push_str(&serde_json::to_string(rec).expect("log record serialises"));
            out.push('\n');
        }
        out
    }
}

pub(crate) struct Clock {
    start: std::time::Instant,
    enabled: bool,
}

impl Clock {
    pub(crate) fn new(enabled: bool) -> Self {
        Self { start: std::time::Instant::now(), enabled }
    }

    pub(crate) fn stamp(&self) -> Option<f64> {
        self.enabled.then(|| self.start.elapsed().as_secs_f64())
    }

    pub(crate) fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

/// Proximal map of `t * ||.||_p` for `p` in {1, 2}.
pub fn prox_group(v: &DVector<f64>, t: f64, reg: RegNorm) -> DVector<f64> {
    match reg {
        RegNorm::L2 => {
            let nrm = v.norm();
            if nrm <= t {
                DVector::zeros(v.len())
            } else {
                v * (1.0 - t / nrm)
            }
        }
        RegNorm::L1 => v.map(|x| x.signum() * (x.abs() - t).max(0.0)),
    }
}

/// Projects every block onto its constraint cone.
pub fn project_feasible(prog: &ConvexProgram, w: &GroupWeights) -> GroupWeights {
    let p = prog.num_patterns();
    let mut out = w.clone();
    let blocks: Vec<(usize, DVector<f64>)> = {
        use rayon::prelude::*;
        (0..w.num_blocks())
            .into_par_iter()
            .filter_map(|i| {
                let b = w.block(i);
                if b.iter().all(|v| *v == 0.0) {
                    return None;
                }
                let c = prog.constraint_block(i % p);
                Some((i, project_onto_cone(&c, &b)))
            })
            .collect()
    };
    for (i, b) in blocks {
        out.set_block(i, &b);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prox_values() {
        let v = DVector::from_vec(vec![3.0, 4.0]);
        let p = prox_group(&v, 1.0, RegNorm::L2);
        assert!((p - DVector::from_vec(vec![2.4, 3.2])).norm() < 1e-15);
        assert_eq!(prox_group(&v, 5.0, RegNorm::L2), DVector::zeros(2));
        let q = prox_group(&DVector::from_vec(vec![3.0, -0.5]), 1.0, RegNorm::L1);
        assert_eq!(q, DVector::from_vec(vec![2.0, 0.0]));
    }
}
