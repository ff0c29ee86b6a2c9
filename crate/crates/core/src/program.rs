//! The finite-dimensional convex program over arrangement patterns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::arrangements::PatternSet;
use crate::data::{DataMatrix, LabelData};
use crate::error::{invalid, Error, Result};
use crate::loss::LossSpec;

/// Largest feature matrix (entries) that [`ConvexProgram::feature_matrix`]
/// will materialise.
pub const MATERIALIZE_CAP: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegNorm {
    L1,
    L2,
}

impl RegNorm {
    pub fn from_p(p: u32) -> Result<Self> {
        match p {
            1 => Ok(RegNorm::L1),
            2 => Ok(RegNorm::L2),
            other => invalid(format!("regularizer exponent must be 1 or 2, got {other}")),
        }
    }

    pub fn p(&self) -> u32 {
        match self {
            RegNorm::L1 => 1,
            RegNorm::L2 => 2,
        }
    }

    pub fn norm<'a>(&self, v: impl Iterator<Item = &'a f64>) -> f64 {
        match self {
            RegNorm::L1 => v.map(|x| x.abs()).sum(),
            RegNorm::L2 => v.map(|x| x * x).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProgramMode {
    /// `loss + beta * sum ||w_i||_p`.
    Regularized,
    /// `min sum ||w_i||_2` subject to `||prediction - y|| <= feas_tol`.
    Interpolation { feas_tol: f64 },
}

/// `2P` weight blocks stored as the columns of a `d × 2P` matrix.
///
/// Columns `0..P` pair with positive output weights, `P..2P` with negative
/// ones. For bias-augmented data the last row holds the biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupWeights {
    blocks: DMatrix<f64>,
}

impl GroupWeights {
    pub fn zeros(dim: usize, patterns: usize) -> Self {
        Self { blocks: DMatrix::zeros(dim, 2 * patterns) }
    }

    pub fn from_matrix(blocks: DMatrix<f64>) -> Result<Self> {
        if blocks.ncols() % 2 != 0 {
            return Err(Error::Shape("block count must be even".into()));
        }
        Ok(Self { blocks })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.blocks
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.blocks
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks.nrows()
    }

    pub fn num_patterns(&self) -> usize {
        self.blocks.ncols() / 2
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.ncols()
    }

    pub fn block(&self, i: usize) -> DVector<f64> {
        self.blocks.column(i).into_owned()
    }

    pub fn set_block(&mut self, i: usize, w: &DVector<f64>) {
        self.blocks.set_column(i, w);
    }

    /// Blocks with Euclidean norm above `tol`.
    pub fn active_blocks(&self, tol: f64) -> Vec<usize> {
        (0..self.num_blocks()).filter(|&i| self.blocks.column(i).norm() > tol).collect()
    }

    /// Splits the last coordinate off every block.
    pub fn split_bias(&self) -> (DMatrix<f64>, DVector<f64>) {
        let d = self.dim();
        let w = self.blocks.rows(0, d - 1).into_owned();
        let b = self.blocks.row(d - 1).transpose();
        (w, b)
    }

    /// `w_i - w_{i+P}` as a `d × P` matrix.
    pub fn differences(&self) -> DMatrix<f64> {
        let p = self.num_patterns();
        self.blocks.columns(0, p) - self.blocks.columns(p, p)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProgramSummary {
    pub n: usize,
    pub d: usize,
    pub patterns: usize,
    pub blocks: usize,
    pub beta: f64,
    pub kappa: f64,
    pub reg_p: u32,
    pub loss: String,
    pub mode: ProgramMode,
    pub with_bias: bool,
    pub low_rank_constraints: bool,
}

/// Convex reformulation of a two-layer network with fixed pattern set.
#[derive(Debug, Clone)]
pub struct ConvexProgram {
    data: DataMatrix,
    constraint_x: Option<DMatrix<f64>>,
    labels: LabelData,
    patterns: PatternSet,
    activation: ActivationSpec,
    loss: LossSpec,
    beta: f64,
    reg: RegNorm,
    mode: ProgramMode,
    /// `n × P` gate diagonals with entries in `{1, kappa}`.
    gates: DMatrix<f64>,
    /// `n × P` constraint signs with entries in `{+1, -1}`.
    signs: DMatrix<f64>,
}

pub struct ProgramBuilder {
    data: DataMatrix,
    labels: LabelData,
    patterns: PatternSet,
    activation: ActivationSpec,
    loss: LossSpec,
    beta: f64,
    reg: RegNorm,
    mode: ProgramMode,
    constraint_x: Option<DMatrix<f64>>,
    drop_zero: bool,
}

impl ProgramBuilder {
    pub fn activation(mut self, a: ActivationSpec) -> Self {
        self.activation = a;
        self
    }

    pub fn loss(mut self, loss: LossSpec) -> Self {
        self.loss = loss;
        self
    }

    pub fn beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn reg(mut self, reg: RegNorm) -> Self {
        self.reg = reg;
        self
    }

    /// Switches to the minimum-norm interpolation program.
    pub fn interpolation(mut self, feas_tol: f64) -> Self {
        self.mode = ProgramMode::Interpolation { feas_tol };
        self
    }

    /// Cone constraints come from `x` instead of the feature data.
    pub fn constraint_data(mut self, x: DMatrix<f64>) -> Self {
        self.constraint_x = Some(x);
        self
    }

    /// Drops the all-zero pattern when `kappa = 0`, where its block is inert.
    pub fn drop_zero_pattern(mut self, yes: bool) -> Self {
        self.drop_zero = yes;
        self
    }

    pub fn build(self) -> Result<ConvexProgram> {
        let n = self.data.nrows();
        if self.labels.outputs() != 1 {
            return invalid("the convex program is scalar-output; use the vector-output extension");
        }
        if self.loss.prediction_rows(self.labels.nrows()) != n {
            return Err(Error::Shape(format!(
                "loss expects {} prediction rows but data has {n}",
                self.loss.prediction_rows(self.labels.nrows())
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return invalid(format!("beta must be finite and nonnegative, got {}", self.beta));
        }
        if self.patterns.n() != n {
            return Err(Error::Shape(format!("patterns have length {} but data has {n} rows", self.patterns.n())));
        }
        if let ProgramMode::Interpolation { feas_tol } = self.mode {
            if !(feas_tol > 0.0) {
                return invalid("interpolation tolerance must be positive");
            }
            if self.reg != RegNorm::L2 {
                return invalid("interpolation uses the group l2 norm");
            }
        }
        if let Some(c) = &self.constraint_x {
            if c.shape() != self.data.values().shape() {
                return Err(Error::Shape("constraint data must match the feature data shape".into()));
            }
        }
        let patterns = if self.drop_zero && self.activation.kappa() == 0.0 {
            self.patterns.without_zero_pattern()
        } else {
            self.patterns
        };
        if patterns.is_empty() {
            return invalid("pattern set is empty");
        }
        let p = patterns.len();
        let kappa = self.activation.kappa();
        let gates = DMatrix::from_fn(n, p, |i, j| if patterns.get(j).bits()[i] { 1.0 } else { kappa });
        let signs = DMatrix::from_fn(n, p, |i, j| if patterns.get(j).bits()[i] { 1.0 } else { -1.0 });
        Ok(ConvexProgram {
            data: self.data,
            constraint_x: self.constraint_x,
            labels: self.labels,
            patterns,
            activation: self.activation,
            loss: self.loss,
            beta: self.beta,
            reg: self.reg,
            mode: self.mode,
            gates,
            signs,
        })
    }
}

impl ConvexProgram {
    pub fn builder(data: DataMatrix, labels: LabelData, patterns: PatternSet) -> ProgramBuilder {
        ProgramBuilder {
            data,
            labels,
            patterns,
            activation: ActivationSpec::relu(),
            loss: LossSpec::Squared,
            beta: 1e-3,
            reg: RegNorm::L2,
            mode: ProgramMode::Regularized,
            constraint_x: None,
            drop_zero: false,
        }
    }

    pub fn data(&self) -> &DataMatrix {
        &self.data
    }

    /// Same program over the patterns at `keep` (ascending indices).
    pub fn restrict(&self, keep: &[usize]) -> Result<ConvexProgram> {
        if keep.is_empty() || keep.windows(2).any(|w| w[0] >= w[1]) || keep[keep.len() - 1] >= self.num_patterns() {
            return invalid("restriction indices must be ascending, unique and in range");
        }
        let patterns = PatternSet::new(
            self.patterns.n(),
            keep.iter().map(|&i| self.patterns.get(i).clone()).collect(),
            self.patterns.source(),
            self.patterns.seed(),
        )?;
        Ok(ConvexProgram {
            data: self.data.clone(),
            constraint_x: self.constraint_x.clone(),
            labels: self.labels.clone(),
            patterns,
            activation: self.activation,
            loss: self.loss.clone(),
            beta: self.beta,
            reg: self.reg,
            mode: self.mode,
            gates: self.gates.select_columns(keep),
            signs: self.signs.select_columns(keep),
        })
    }

    /// Embeds weights of a restricted program back into this one.
    pub fn embed(&self, keep: &[usize], sub: &GroupWeights) -> GroupWeights {
        let p = self.num_patterns();
        let q = keep.len();
        let mut w = self.zero_weights();
        for (k, &i) in keep.iter().enumerate() {
            w.set_block(i, &sub.block(k));
            w.set_block(i + p, &sub.block(k + q));
        }
        w
    }

    /// Blocks of `w` at `keep`, laid out for [`Self::restrict`]`(keep)`.
    pub fn select(&self, keep: &[usize], w: &GroupWeights) -> GroupWeights {
        let p = self.num_patterns();
        let q = keep.len();
        let mut sub = GroupWeights::zeros(self.dim(), q);
        for (k, &i) in keep.iter().enumerate() {
            sub.set_block(k, &w.block(i));
            sub.set_block(k + q, &w.block(i + p));
        }
        sub
    }

    pub fn x(&self) -> &DMatrix<f64> {
        self.data.values()
    }

    /// Matrix whose rows define the cone constraints.
    pub fn constraint_x(&self) -> &DMatrix<f64> {
        self.constraint_x.as_ref().unwrap_or(self.data.values())
    }

    pub fn has_separate_constraints(&self) -> bool {
        self.constraint_x.is_some()
    }

    pub fn labels(&self) -> &LabelData {
        &self.labels
    }

    pub fn y(&self) -> DVector<f64> {
        self.labels.column(0)
    }

    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    pub fn activation(&self) -> ActivationSpec {
        self.activation
    }

    pub fn loss(&self) -> &LossSpec {
        &self.loss
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn reg(&self) -> RegNorm {
        self.reg
    }

    pub fn mode(&self) -> ProgramMode {
        self.mode
    }

    pub fn gates(&self) -> &DMatrix<f64> {
        &self.gates
    }

    pub fn signs(&self) -> &DMatrix<f64> {
        &self.signs
    }

    pub fn num_patterns(&self) -> usize {
        self.patterns.len()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn zero_weights(&self) -> GroupWeights {
        GroupWeights::zeros(self.dim(), self.num_patterns())
    }

    /// Feature block `D_i X` for pattern `i`.
    pub fn feature_block(&self, i: usize) -> DMatrix<f64> {
        let mut m = self.x().clone();
        for (r, mut row) in m.row_iter_mut().enumerate() {
            row *= self.gates[(r, i)];
        }
        m
    }

    /// Constraint block `(2 D̂_i - I) X` for pattern `i`.
    pub fn constraint_block(&self, i: usize) -> DMatrix<f64> {
        let mut m = self.constraint_x().clone();
        for (r, mut row) in m.row_iter_mut().enumerate() {
            row *= self.signs[(r, i)];
        }
        m
    }

    /// Full `n × 2dP` feature matrix; refuses sizes above [`MATERIALIZE_CAP`].
    pub fn feature_matrix(&self) -> Result<DMatrix<f64>> {
        let (n, d, p) = (self.data.nrows(), self.dim(), self.num_patterns());
        if n * d * 2 * p > MATERIALIZE_CAP {
            return invalid("feature matrix too large to materialise");
        }
        let mut out = DMatrix::zeros(n, 2 * d * p);
        for i in 0..p {
            let b = self.feature_block(i);
            out.columns_mut(i * d, d).copy_from(&b);
            out.columns_mut((i + p) * d, d).copy_from(&(-b));
        }
        Ok(out)
    }

    /// Raw predictions `sum_i D_i X (w_i - w_{i+P})`, one per data row.
    pub fn predict(&self, w: &GroupWeights) -> DVector<f64> {
        let xu = self.x() * w.differences();
        self.gates.component_mul(&xu).column_sum()
    }

    /// Adjoint of [`Self::predict`] mapped onto the `2P` blocks.
    pub fn adjoint(&self, r: &DVector<f64>) -> GroupWeights {
        let p = self.num_patterns();
        let scaled = DMatrix::from_fn(self.gates.nrows(), p, |i, j| self.gates[(i, j)] * r[i]);
        let pos = self.x().transpose() * scaled;
        let mut blocks = DMatrix::zeros(self.dim(), 2 * p);
        blocks.columns_mut(0, p).copy_from(&pos);
        blocks.columns_mut(p, p).copy_from(&(-pos));
        GroupWeights { blocks }
    }

    pub fn loss_value(&self, w: &GroupWeights) -> f64 {
        self.loss_of_prediction(&self.predict(w))
    }

    pub fn loss_of_prediction(&self, f: &DVector<f64>) -> f64 {
        let fm = DMatrix::from_column_slice(f.len(), 1, f.as_slice());
        self.loss.evaluate(&fm, self.labels.values())
    }

    pub fn loss_gradient_of_prediction(&self, f: &DVector<f64>) -> DVector<f64> {
        let fm = DMatrix::from_column_slice(f.len(), 1, f.as_slice());
        self.loss.gradient(&fm, self.labels.values()).column(0).into_owned()
    }

    /// Sum of block norms `sum_i ||w_i||_p` (without `beta`).
    pub fn group_norm(&self, w: &GroupWeights) -> f64 {
        (0..w.num_blocks()).map(|i| self.reg.norm(w.matrix().column(i).iter())).sum()
    }

    /// Program objective; in interpolation mode the group norm alone.
    pub fn objective(&self, w: &GroupWeights) -> f64 {
        match self.mode {
            ProgramMode::Regularized => self.loss_value(w) + self.beta * self.group_norm(w),
            ProgramMode::Interpolation { .. } => self.group_norm(w),
        }
    }

    /// `||prediction - y||_2` after any loss-side averaging.
    pub fn residual_norm(&self, w: &GroupWeights) -> f64 {
        let f = self.predict(w);
        let groups = self.loss.prediction_rows(1);
        let fm = DMatrix::from_column_slice(f.len(), 1, f.as_slice());
        let avg = crate::loss::group_mean(&fm, groups);
        (avg.column(0) - self.y()).norm()
    }

    /// `n × 2P` values of `(2 D̂_i - I) X w_i`.
    pub fn constraint_values(&self, w: &GroupWeights) -> DMatrix<f64> {
        let p = self.num_patterns();
        let cx = self.constraint_x() * w.matrix();
        DMatrix::from_fn(cx.nrows(), 2 * p, |r, j| cx[(r, j)] * self.signs[(r, j % p)])
    }

    /// Largest entrywise violation `max_i ||max(0, -(2 D̂_i - I) X w_i)||_inf`.
    pub fn constraint_violation(&self, w: &GroupWeights) -> f64 {
        self.constraint_values(w).iter().fold(0.0f64, |m, &v| m.max(-v))
    }

    /// Sum of hinge violations `sum_i 1^T max(0, -(2 D̂_i - I) X w_i)`.
    pub fn hinge_violation(&self, w: &GroupWeights) -> f64 {
        self.constraint_values(w).iter().map(|&v| (-v).max(0.0)).sum()
    }

    /// Objective of the unconstrained penalized form.
    pub fn penalized_objective(&self, w: &GroupWeights, rho: f64) -> f64 {
        self.objective(w) + rho * self.hinge_violation(w)
    }

    pub fn summary(&self) -> ProgramSummary {
        ProgramSummary {
            n: self.data.nrows(),
            d: self.dim(),
            patterns: self.num_patterns(),
            blocks: 2 * self.num_patterns(),
            beta: self.beta,
            kappa: self.activation.kappa(),
            reg_p: self.reg.p(),
            loss: self.loss.name(),
            mode: self.mode,
            with_bias: self.data.is_bias_augmented(),
            low_rank_constraints: self.constraint_x.is_some(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrangements::enumerate_exact;

    fn example_program() -> ConvexProgram {
        let x = DataMatrix::new(DMatrix::from_row_slice(3, 2, &[2., 2., 3., 3., 1., 0.])).unwrap();
        let patterns = enumerate_exact(&x).unwrap();
        let y = LabelData::scalar(&[1.0, 2.0, 0.5]).unwrap();
        ConvexProgram::builder(x, y, patterns).beta(0.1).build().unwrap()
    }

    #[test]
    fn feature_block_applies_gate() {
        let prog = example_program();
        let i = prog.patterns().bit_strings().iter().position(|s| s == "110").unwrap();
        let b = prog.feature_block(i);
        assert_eq!(b, DMatrix::from_row_slice(3, 2, &[2., 2., 3., 3., 0., 0.]));
    }

    #[test]
    fn prediction_matches_materialised_features() {
        let prog = example_program();
        let mut w = prog.zero_weights();
        let i = prog.patterns().bit_strings().iter().position(|s| s == "111").unwrap();
        w.set_block(i, &DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(prog.predict(&w), DVector::from_vec(vec![2.0, 3.0, 1.0]));
        let dense = prog.feature_matrix().unwrap();
        let flat = DVector::from_column_slice(w.matrix().as_slice());
        assert!((dense * flat - prog.predict(&w)).norm() < 1e-14);
    }

    #[test]
    fn adjoint_is_transpose_of_predict() {
        let prog = example_program();
        let w = GroupWeights::from_matrix(DMatrix::from_fn(2, 8, |i, j| ((i + 3 * j) as f64).sin())).unwrap();
        let r = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let lhs = prog.predict(&w).dot(&r);
        let rhs = prog.adjoint(&r).matrix().component_mul(w.matrix()).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn violation_detects_wrong_side() {
        let prog = example_program();
        let i = prog.patterns().bit_strings().iter().position(|s| s == "110").unwrap();
        let mut w = prog.zero_weights();
        w.set_block(i, &DVector::from_vec(vec![0.0, -1.0]));
        // (2D̂ - I) X w = (-2, -3, 0).
        assert!((prog.constraint_violation(&w) - 3.0).abs() < 1e-15);
        assert!((prog.hinge_violation(&w) - 5.0).abs() < 1e-15);
        assert_eq!(prog.constraint_violation(&prog.zero_weights()), 0.0);
    }

    #[test]
    fn objective_at_zero_is_half_label_norm() {
        let prog = example_program();
        let y = prog.y();
        assert!((prog.objective(&prog.zero_weights()) - 0.5 * y.norm_squared()).abs() < 1e-15);
    }
}
