//! Accelerated proximal gradient with backtracking and monotone restart.

use nalgebra::DVector;

use super::{Clock, LogRecord, SolveStatus, SolverConfig, StepRule};

pub(crate) struct FistaOutcome {
    pub x: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub log: Vec<LogRecord>,
    pub lipschitz: f64,
}

/// Minimises `f + g` where `smooth` returns `(f, grad f)`, `nonsmooth`
/// evaluates `g` and `prox(v, t)` returns `argmin g(x) + ||x - v||^2 / (2t)`.
///
/// Accepted iterates never increase the objective: a step that would is
/// discarded and momentum restarts from the last accepted point.
pub(crate) fn fista<S, G, P, V>(
    x0: DVector<f64>,
    lipschitz0: f64,
    cfg: &SolverConfig,
    smooth: S,
    nonsmooth: G,
    mut prox: P,
    violation: V,
) -> FistaOutcome
where
    S: Fn(&DVector<f64>) -> (f64, DVector<f64>),
    G: Fn(&DVector<f64>) -> f64,
    P: FnMut(&DVector<f64>, f64) -> DVector<f64>,
    V: Fn(&DVector<f64>) -> f64,
{
    let clock = Clock::new(cfg.record_time);
    let mut lip = lipschitz0.max(1e-12);
    let mut x = x0.clone();
    let mut y = x0;
    let mut t = 1.0f64;
    let (fx, _) = smooth(&x);
    let mut obj = fx + nonsmooth(&x);
    let mut history = vec![obj];
    let mut log = vec![LogRecord { iter: 0, objective: obj, violation: violation(&x), time: clock.stamp() }];
    let mut status = SolveStatus::MaxIters;
    let mut iterations = 0;
    let mut restarted = false;
    let mut best_obj = obj;
    let mut best_x = x.clone();
    let mut stalls = 0usize;
    for k in 1..=cfg.max_iters {
        iterations = k;
        let (fy, gy) = smooth(&y);
        let mut x_new;
        let mut fx_new;
        loop {
            let step = 1.0 / lip;
            x_new = prox(&(&y - &gy * step), step);
            fx_new = smooth(&x_new).0;
            if cfg.step_rule == StepRule::Fixed {
                break;
            }
            let diff = &x_new - &y;
            let bound = fy + gy.dot(&diff) + 0.5 * lip * diff.norm_squared();
            if fx_new <= bound + 1e-12 * fy.abs().max(1e-300) || lip > 1e20 {
                break;
            }
            lip *= 2.0;
        }
        let obj_new = fx_new + nonsmooth(&x_new);
        if !obj_new.is_finite() {
            status = SolveStatus::MaxIters;
            break;
        }
        if obj_new > obj && !restarted {
            t = 1.0;
            y = x.clone();
            restarted = true;
            continue;
        }
        restarted = false;
        if obj_new > obj {
            stalls += 1;
            if stalls >= 100 {
                break;
            }
        } else {
            stalls = 0;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        t = t_new;
        x = x_new;
        obj = obj_new;
        history.push(obj);
        if obj < best_obj {
            best_obj = obj;
            best_x = x.clone();
        }
        if k % cfg.log_every.max(1) == 0 {
            log.push(LogRecord { iter: k, objective: obj, violation: violation(&x), time: clock.stamp() });
        }
        let h = history.len();
        if h > cfg.window {
            let old = history[h - 1 - cfg.window];
            let cur = history[h - 1];
            if (old - cur).abs() <= cfg.obj_tol * cur.abs().max(1e-12) {
                status = SolveStatus::Converged;
                break;
            }
        }
    }
    let x = best_x;
    log.push(LogRecord { iter: iterations, objective: best_obj, violation: violation(&x), time: clock.stamp() });
    FistaOutcome { x, status, iterations, history, log, lipschitz: lip }
}
