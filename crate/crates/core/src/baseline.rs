//! Reference nonconvex training by (mini-batch) gradient descent with
//! weight decay.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::error::{invalid, Error, Result};
use crate::fmt::fmt_f64;
use crate::mapping::{nonconvex_objective, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Gd,
    Sgd,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(Self::Gd),
            "sgd" => Ok(Self::Sgd),
            _ => invalid(format!("unknown optimizer '{s}', expected gd or sgd")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub m: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub init_scale: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// When set, the step stays at `lr` for the first half of training and
    /// then decays geometrically to `lr_final` at the last epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_final: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { m: 50, lr: 1e-2, batch_size: 1, epochs: 1000, init_scale: 1.0, seed: 0, optimizer: Optimizer::Gd, lr_final: None }
    }
}

impl TrainConfig {
    /// Step used during `epoch`.
    pub fn step(&self, epoch: usize) -> f64 {
        match self.lr_final {
            None => self.lr,
            Some(f) => {
                let half = self.epochs / 2;
                if epoch < half || self.epochs - half <= 1 {
                    self.lr
                } else {
                    let t = (epoch - half) as f64 / (self.epochs - half - 1) as f64;
                    self.lr * (f / self.lr).powf(t)
                }
            }
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return invalid("learning rate must be finite and nonnegative");
        }
        if self.m == 0 {
            return invalid("neuron count must be positive");
        }
        if self.optimizer == Optimizer::Sgd && (self.batch_size == 0 || self.batch_size > n) {
            return invalid(format!("batch size must lie in 1..={n}"));
        }
        if let Some(f) = self.lr_final {
            if !(f > 0.0 && f <= self.lr) {
                return invalid("final learning rate must lie in (0, lr]");
            }
        }
        if !(self.init_scale >= 0.0) {
            return invalid("init scale must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub params: NetworkParams,
    /// Full-batch regularized objective after every epoch, starting with
    /// the initial value.
    pub trajectory: Vec<f64>,
    pub final_objective: f64,
    pub config: TrainConfig,
    /// Epochs whose full-batch objective increased.
    pub ascent_epochs: usize,
}

impl BaselineRun {
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for (epoch, v) in self.trajectory.iter().enumerate() {
            out.push_str(&format!(
                "{{\"seed\":{},\"epoch\":{epoch},\"objective\":{}}}\n",
                self.config.seed,
                serde_json::to_string(v).unwrap_or_else(|_| "null".into())
            ));
        }
        out
    }
}

/// `N(0, s^2/d)` first layer and `N(0, s^2/m)` output layer.
pub fn initialize(d: usize, outputs: usize, cfg: &TrainConfig, activation: ActivationSpec) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s1 = cfg.init_scale / (d as f64).sqrt();
    let s2 = cfg.init_scale / (cfg.m as f64).sqrt();
    let w1 = DMatrix::from_fn(d, cfg.m, |_, _| s1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
    let w2 = DMatrix::from_fn(cfg.m, outputs, |_, _| s2 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
    NetworkParams { w1, w2, bias: None, activation }
}

/// Gradient of `(scale/2)||phi(X W1) W2 - Y||^2 + (beta/2)(||W1||^2 + ||W2||^2)`
/// with slope 1 taken at the kink.
fn gradient(
    p: &NetworkParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    beta: f64,
    scale: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let z = x * &p.w1;
    let a = p.activation.apply_matrix(&z);
    let r = (&a * &p.w2 - y) * scale;
    let g2 = a.transpose() * &r + &p.w2 * beta;
    let mut back = &r * p.w2.transpose();
    back.zip_apply(&z, |b, zv| *b *= p.activation.slope(zv));
    let g1 = x.transpose() * back + &p.w1 * beta;
    (g1, g2)
}

/// Trains from the seeded initialization; SGD scales mini-batch gradients
/// by `n / batch` so they are unbiased for the full-batch objective.
pub fn train_nonconvex(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    beta: f64,
    activation: ActivationSpec,
    cfg: &TrainConfig,
) -> Result<BaselineRun> {
    let init = initialize(x.ncols(), y.ncols(), cfg, activation);
    train_from(x, y, beta, init, cfg)
}

pub fn train_from(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    beta: f64,
    init: NetworkParams,
    cfg: &TrainConfig,
) -> Result<BaselineRun> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::Shape(format!("labels have {} rows but data has {n}", y.nrows())));
    }
    cfg.validate(n)?;
    if !(beta >= 0.0) {
        return invalid("beta must be nonnegative");
    }
    let mut p = init;
    let mut trajectory = Vec::with_capacity(cfg.epochs + 1);
    let mut obj = nonconvex_objective(&p, x, y, beta)?;
    trajectory.push(obj);
    let mut ascent_epochs = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.step(epoch);
        match cfg.optimizer {
            Optimizer::Gd => {
                let (g1, g2) = gradient(&p, x, y, beta, 1.0);
                p.w1 -= g1 * lr;
                p.w2 -= g2 * lr;
            }
            Optimizer::Sgd => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(cfg.batch_size) {
                    let xb = x.select_rows(chunk);
                    let yb = y.select_rows(chunk);
                    let (g1, g2) = gradient(&p, &xb, &yb, beta, n as f64 / chunk.len() as f64);
                    p.w1 -= g1 * lr;
                    p.w2 -= g2 * lr;
                }
            }
        }
        let next = nonconvex_objective(&p, x, y, beta)?;
        if !next.is_finite() {
            return Err(Error::Diverged(format!(
                "objective became {next} at epoch {epoch} (lr {}, seed {})",
                cfg.lr, cfg.seed
            )));
        }
        if next > obj {
            ascent_epochs += 1;
        }
        obj = next;
        trajectory.push(obj);
    }
    Ok(BaselineRun { params: p, trajectory, final_objective: obj, config: cfg.clone(), ascent_epochs })
}

#[derive(Debug, Clone, Serialize)]
pub struct RestartRow {
    pub seed: u64,
    pub m: usize,
    pub lr: f64,
    pub final_objective: f64,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RestartSummary {
    pub rows: Vec<RestartRow>,
    pub best: f64,
    pub convex_optimum: Option<f64>,
}

impl RestartSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,m,lr,final_objective,gap\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.seed,
                r.m,
                fmt_f64(r.lr),
                fmt_f64(r.final_objective),
                r.gap.map(fmt_f64).unwrap_or_default()
            ));
        }
        out
    }
}

/// Runs every configuration in parallel and tabulates the final
/// objectives, with gaps against `convex_optimum` when supplied.
pub fn multi_restart(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    beta: f64,
    activation: ActivationSpec,
    cfgs: &[TrainConfig],
    convex_optimum: Option<f64>,
) -> Result<(RestartSummary, Vec<BaselineRun>)> {
    if cfgs.is_empty() {
        return invalid("multi_restart needs at least one configuration");
    }
    let runs: Vec<BaselineRun> = cfgs
        .par_iter()
        .map(|c| train_nonconvex(x, y, beta, activation, c))
        .collect::<Result<_>>()?;
    let rows: Vec<RestartRow> = runs
        .iter()
        .map(|r| RestartRow {
            seed: r.config.seed,
            m: r.config.m,
            lr: r.config.lr,
            final_objective: r.final_objective,
            gap: convex_optimum.map(|p| r.final_objective - p),
        })
        .collect();
    let best = rows.iter().map(|r| r.final_objective).fold(f64::INFINITY, f64::min);
    Ok((RestartSummary { rows, best, convex_optimum }, runs))
}

/// Factors of a linear CNN `sum_k X_k W1 W2[:, k]`.
#[derive(Debug, Clone)]
pub struct LinearCnnRun {
    /// `d × m` filters.
    pub filters: DMatrix<f64>,
    /// `m × K` output weights.
    pub outputs: DMatrix<f64>,
    pub trajectory: Vec<f64>,
    pub final_objective: f64,
}

impl LinearCnnRun {
    pub fn product(&self) -> DMatrix<f64> {
        &self.filters * &self.outputs
    }
}

fn linear_cnn_objective(patches: &[DMatrix<f64>], y: &DVector<f64>, w1: &DMatrix<f64>, w2: &DMatrix<f64>, beta: f64) -> f64 {
    let z = w1 * w2;
    let f = crate::solvers::patch_predict(patches, &z);
    0.5 * (f - y).norm_squared() + 0.5 * beta * (w1.norm_squared() + w2.norm_squared())
}

/// Full-batch gradient descent on the weight-decayed linear CNN.
pub fn train_linear_cnn(
    patches: &[DMatrix<f64>],
    y: &DVector<f64>,
    beta: f64,
    cfg: &TrainConfig,
) -> Result<LinearCnnRun> {
    let first = patches.first().ok_or_else(|| Error::InvalidArgument("no patches".into()))?;
    let (n, d) = first.shape();
    if y.len() != n {
        return Err(Error::Shape("labels do not match the patches".into()));
    }
    cfg.validate(n)?;
    let kk = patches.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s1 = cfg.init_scale / (d as f64).sqrt();
    let s2 = cfg.init_scale / (cfg.m as f64).sqrt();
    let mut w1 = DMatrix::from_fn(d, cfg.m, |_, _| s1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
    let mut w2 = DMatrix::from_fn(cfg.m, kk, |_, _| s2 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
    let mut trajectory = vec![linear_cnn_objective(patches, y, &w1, &w2, beta)];
    for epoch in 0..cfg.epochs {
        let z = &w1 * &w2;
        let r = crate::solvers::patch_predict(patches, &z) - y;
        let gz = crate::solvers::patch_adjoint(patches, &r);
        let g1 = &gz * w2.transpose() + &w1 * beta;
        let g2 = w1.transpose() * &gz + &w2 * beta;
        let lr = cfg.step(epoch);
        w1 -= g1 * lr;
        w2 -= g2 * lr;
        let obj = linear_cnn_objective(patches, y, &w1, &w2, beta);
        if !obj.is_finite() {
            return Err(Error::Diverged(format!("linear CNN objective became {obj} at epoch {epoch}")));
        }
        trajectory.push(obj);
    }
    let final_objective = *trajectory.last().expect("nonempty");
    Ok(LinearCnnRun { filters: w1, outputs: w2, trajectory, final_objective })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DMatrix<f64>, DMatrix<f64>) {
        let x = DMatrix::from_fn(5, 2, |i, j| if j == 0 { i as f64 - 2.0 } else { 1.0 });
        let y = DMatrix::from_column_slice(5, 1, &[1.0, -1.0, 1.0, 1.0, -1.0]);
        (x, y)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (x, y) = toy();
        let cfg = TrainConfig { m: 4, lr: 0.0, epochs: 5, seed: 3, ..Default::default() };
        let run = train_nonconvex(&x, &y, 1e-3, ActivationSpec::relu(), &cfg).unwrap();
        assert_eq!(run.params, initialize(2, 1, &cfg, ActivationSpec::relu()));
        assert_eq!(run.trajectory.len(), 6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = toy();
        let cfg = TrainConfig { m: 3, seed: 11, ..Default::default() };
        let p = initialize(2, 1, &cfg, ActivationSpec::leaky(0.1).unwrap());
        let (g1, g2) = gradient(&p, &x, &y, 0.3, 1.0);
        let h = 1e-6;
        for idx in 0..p.w1.len() {
            let mut a = p.clone();
            let mut b = p.clone();
            a.w1[idx] += h;
            b.w1[idx] -= h;
            let fd = (nonconvex_objective(&a, &x, &y, 0.3).unwrap() - nonconvex_objective(&b, &x, &y, 0.3).unwrap()) / (2.0 * h);
            assert!((fd - g1[idx]).abs() < 1e-5, "{fd} vs {}", g1[idx]);
        }
        for idx in 0..p.w2.len() {
            let mut a = p.clone();
            let mut b = p.clone();
            a.w2[idx] += h;
            b.w2[idx] -= h;
            let fd = (nonconvex_objective(&a, &x, &y, 0.3).unwrap() - nonconvex_objective(&b, &x, &y, 0.3).unwrap()) / (2.0 * h);
            assert!((fd - g2[idx]).abs() < 1e-5);
        }
    }

    #[test]
    fn runs_are_deterministic_and_empty_list_errors() {
        let (x, y) = toy();
        let cfg = TrainConfig { m: 6, lr: 0.05, batch_size: 2, epochs: 50, seed: 5, optimizer: Optimizer::Sgd, ..Default::default() };
        let a = train_nonconvex(&x, &y, 1e-3, ActivationSpec::relu(), &cfg).unwrap();
        let b = train_nonconvex(&x, &y, 1e-3, ActivationSpec::relu(), &cfg).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert!(multi_restart(&x, &y, 1e-3, ActivationSpec::relu(), &[], None).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let (x, y) = toy();
        let cfg = TrainConfig { m: 4, lr: 50.0, epochs: 200, seed: 1, ..Default::default() };
        assert!(matches!(train_nonconvex(&x, &y, 1e-3, ActivationSpec::relu(), &cfg), Err(Error::Diverged(_))));
    }
}
