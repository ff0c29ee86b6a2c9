//! Conversions between convex weights and two-layer networks, and the
//! first-order stationarity check.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::activation::ActivationSpec;
use crate::arrangements::{ArrangementPattern, PatternSet, PatternSource};
use crate::error::{Error, Result};
use crate::fmt::fmt_f64;
use crate::linalg::box_least_squares;
use crate::loss::LossSpec;
use crate::program::GroupWeights;

/// Two-layer network `phi(X W1 + 1 b^T) W2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// d×m first-layer weights, one column per neuron.
    pub w1: DMatrix<f64>,
    /// m×C output weights.
    pub w2: DMatrix<f64>,
    pub bias: Option<DVector<f64>>,
    pub activation: ActivationSpec,
}

impl NetworkParams {
    pub fn new(
        w1: DMatrix<f64>,
        w2: DMatrix<f64>,
        bias: Option<DVector<f64>>,
        activation: ActivationSpec,
    ) -> Result<Self> {
        if w1.ncols() != w2.nrows() {
            return Err(Error::Shape(format!(
                "W1 has {} neurons but w2 has {} rows",
                w1.ncols(),
                w2.nrows()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != w1.ncols() {
                return Err(Error::Shape("bias length must equal the neuron count".into()));
            }
        }
        Ok(Self { w1, w2, bias, activation })
    }

    pub fn empty(d: usize, outputs: usize, activation: ActivationSpec) -> Self {
        Self { w1: DMatrix::zeros(d, 0), w2: DMatrix::zeros(0, outputs), bias: None, activation }
    }

    pub fn neurons(&self) -> usize {
        self.w1.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w2.ncols()
    }

    /// Moves the last row of `W1` into an explicit bias, for networks
    /// trained on data with an appended ones column.
    pub fn split_bias_row(&self) -> Self {
        let d = self.w1.nrows();
        let w1 = self.w1.rows(0, d - 1).into_owned();
        let bias = self.w1.row(d - 1).transpose();
        Self { w1, w2: self.w2.clone(), bias: Some(bias), activation: self.activation }
    }

    /// Folds an explicit bias back into an extra last row of `W1`.
    pub fn merge_bias_row(&self) -> Self {
        match &self.bias {
            None => self.clone(),
            Some(b) => {
                let d = self.w1.nrows();
                let mut w1 = self.w1.clone().resize_vertically(d + 1, 0.0);
                w1.row_mut(d).copy_from(&b.transpose());
                Self { w1, w2: self.w2.clone(), bias: None, activation: self.activation }
            }
        }
    }

    /// Weight file: header comment, then one value per line in the order
    /// W1 column-major, w2 column-major, bias.
    pub fn to_weight_text(&self) -> String {
        let mut out = format!(
            "# cvxnn network v1 d={} m={} outputs={} bias={} activation={}\n",
            self.input_dim(),
            self.neurons(),
            self.outputs(),
            u8::from(self.bias.is_some()),
            self.activation.name()
        );
        for v in self.w1.iter().chain(self.w2.iter()) {
            out.push_str(&fmt_f64(*v));
            out.push('\n');
        }
        if let Some(b) = &self.bias {
            for v in b.iter() {
                out.push_str(&fmt_f64(*v));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_weight_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty weight file".into() })?;
        let mut dims = (None, None, None, None, ActivationSpec::relu());
        for field in header.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = field.split_once('=') {
                let parse = |v: &str| v.parse::<usize>().map_err(|e| Error::Parse { line: 1, msg: e.to_string() });
                match k {
                    "d" => dims.0 = Some(parse(v)?),
                    "m" => dims.1 = Some(parse(v)?),
                    "outputs" => dims.2 = Some(parse(v)?),
                    "bias" => dims.3 = Some(parse(v)? == 1),
                    "activation" => dims.4 = ActivationSpec::parse(v)?,
                    _ => {}
                }
            }
        }
        let (Some(d), Some(m), Some(c), Some(has_bias)) = (dims.0, dims.1, dims.2, dims.3) else {
            return Err(Error::Parse { line: 1, msg: "header must define d, m, outputs and bias".into() });
        };
        let mut vals = Vec::new();
        for (i, l) in lines {
            vals.push(l.trim().parse::<f64>().map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?);
        }
        let need = d * m + m * c + if has_bias { m } else { 0 };
        if vals.len() != need {
            return Err(Error::Parse { line: 0, msg: format!("expected {need} values, found {}", vals.len()) });
        }
        let w1 = DMatrix::from_column_slice(d, m, &vals[..d * m]);
        let w2 = DMatrix::from_column_slice(m, c, &vals[d * m..d * m + m * c]);
        let bias = has_bias.then(|| DVector::from_column_slice(&vals[d * m + m * c..]));
        Self::new(w1, w2, bias, dims.4)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_weight_text())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::from_weight_text(&std::fs::read_to_string(path)?)
    }
}

/// Pre-activations `X W1 + 1 b^T`.
fn preactivation(params: &NetworkParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "data has {} columns but the network expects {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    let mut z = x * &params.w1;
    if let Some(b) = &params.bias {
        for mut row in z.row_iter_mut() {
            row += b.transpose();
        }
    }
    Ok(z)
}

pub fn network_forward(params: &NetworkParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let z = preactivation(params, x)?;
    Ok(params.activation.apply_matrix(&z) * &params.w2)
}

/// `(||W1||_F^2 + ||b||^2 + ||W2||_F^2) / 2`.
pub fn weight_decay(params: &NetworkParams) -> f64 {
    let b = params.bias.as_ref().map_or(0.0, |b| b.norm_squared());
    0.5 * (params.w1.norm_squared() + b + params.w2.norm_squared())
}

/// Squared-loss training objective with weight decay.
pub fn nonconvex_objective(params: &NetworkParams, x: &DMatrix<f64>, y: &DMatrix<f64>, beta: f64) -> Result<f64> {
    nonconvex_objective_with_loss(params, x, y, beta, &LossSpec::Squared)
}

pub fn nonconvex_objective_with_loss(
    params: &NetworkParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    beta: f64,
    loss: &LossSpec,
) -> Result<f64> {
    let f = network_forward(params, x)?;
    if f.shape() != (loss.prediction_rows(y.nrows()), y.ncols()) {
        return Err(Error::Shape("network output does not match the labels".into()));
    }
    Ok(loss.evaluate(&f, y) + beta * weight_decay(params))
}

/// Squared loss plus `(beta/2) sum_j (||w1_j||^2 + ||w2_j||_1^2)`.
pub fn vector_output_objective(params: &NetworkParams, x: &DMatrix<f64>, y: &DMatrix<f64>, beta: f64) -> Result<f64> {
    let f = network_forward(params, x)?;
    let mut reg = 0.0;
    for j in 0..params.neurons() {
        let b = params.bias.as_ref().map_or(0.0, |b| b[j] * b[j]);
        let l1: f64 = params.w2.row(j).iter().map(|v| v.abs()).sum();
        reg += params.w1.column(j).norm_squared() + b + l1 * l1;
    }
    Ok(0.5 * (f - y).norm_squared() + 0.5 * beta * reg)
}

fn input_norm(params: &NetworkParams, j: usize) -> f64 {
    let b = params.bias.as_ref().map_or(0.0, |b| b[j] * b[j]);
    (params.w1.column(j).norm_squared() + b).sqrt()
}

/// Rescales every neuron so `||w1_j|| = ||w2_j||`; dead neurons (zero input
/// weights) are dropped because they only add penalty.
pub fn rescale_balanced(params: &NetworkParams) -> NetworkParams {
    let mut keep = Vec::new();
    let mut gammas = Vec::new();
    for j in 0..params.neurons() {
        let a = input_norm(params, j);
        let o = params.w2.row(j).norm();
        if a == 0.0 {
            continue;
        }
        keep.push(j);
        gammas.push(if o == 0.0 { 0.0 } else { (o / a).sqrt() });
    }
    let mut w1 = params.w1.select_columns(&keep);
    let mut w2 = params.w2.select_rows(&keep);
    let mut bias = params.bias.as_ref().map(|b| b.select_rows(&keep));
    for (k, &g) in gammas.iter().enumerate() {
        w1.column_mut(k).scale_mut(g);
        if let Some(b) = bias.as_mut() {
            b[k] *= g;
        }
        if g != 0.0 {
            w2.row_mut(k).scale_mut(1.0 / g);
        }
    }
    NetworkParams { w1, w2, bias, activation: params.activation }
}

/// Neuron `(w_i / sqrt||w_i||, +-sqrt||w_i||)` for every nonzero block.
pub fn convex_to_network(w: &GroupWeights, activation: ActivationSpec) -> NetworkParams {
    let p = w.num_patterns();
    let active: Vec<usize> = (0..w.num_blocks()).filter(|&i| w.matrix().column(i).norm() > 0.0).collect();
    let d = w.dim();
    let mut w1 = DMatrix::zeros(d, active.len());
    let mut w2 = DMatrix::zeros(active.len(), 1);
    for (k, &i) in active.iter().enumerate() {
        let b = w.block(i);
        let r = b.norm().sqrt();
        w1.set_column(k, &(b / r));
        w2[(k, 0)] = if i < p { r } else { -r };
    }
    NetworkParams { w1, w2, bias: None, activation }
}

/// Convex-side view of a network: one block per neuron, grouped under the
/// deduplicated neuron patterns.
#[derive(Debug, Clone)]
pub struct ConvexEmbedding {
    pub patterns: PatternSet,
    /// `(pattern index, positive output, block)` per live neuron.
    pub blocks: Vec<(usize, bool, DVector<f64>)>,
}

impl ConvexEmbedding {
    /// Sum of the kept block norms.
    pub fn group_norm(&self) -> f64 {
        self.blocks.iter().map(|(_, _, b)| b.norm()).sum()
    }

    /// Weights for a program over `patterns`, summing same-pattern,
    /// same-sign blocks.
    pub fn to_group_weights(&self) -> GroupWeights {
        let p = self.patterns.len();
        let d = self.blocks.first().map_or(0, |(_, _, b)| b.len());
        let mut w = GroupWeights::zeros(d, p);
        for (i, pos, b) in &self.blocks {
            let col = if *pos { *i } else { i + p };
            let cur = w.block(col) + b;
            w.set_block(col, &cur);
        }
        w
    }
}

/// Scalar-output network to convex blocks `w1_j * |w2_j|` after balancing.
pub fn network_to_convex(params: &NetworkParams, x: &DMatrix<f64>) -> Result<ConvexEmbedding> {
    if params.outputs() != 1 {
        return Err(Error::Unsupported("network_to_convex expects a scalar-output network".into()));
    }
    let merged = params.merge_bias_row();
    let xa = if params.bias.is_some() { x.clone().insert_column(x.ncols(), 1.0) } else { x.clone() };
    if xa.ncols() != merged.input_dim() {
        return Err(Error::Shape("data does not match the network input dimension".into()));
    }
    let bal = rescale_balanced(&merged);
    let mut raw = Vec::new();
    for j in 0..bal.neurons() {
        let a = bal.w2[(j, 0)];
        if a == 0.0 {
            continue;
        }
        let w1 = bal.w1.column(j).into_owned();
        let bits: Vec<bool> = (&xa * &w1).iter().map(|&v| v >= 0.0).collect();
        raw.push((bits, a > 0.0, w1 * a.abs()));
    }
    let patterns = PatternSet::new(
        xa.nrows(),
        raw.iter().map(|(b, _, _)| ArrangementPattern::new(b.clone(), None)).collect(),
        PatternSource::Loaded,
        None,
    )?;
    let blocks = raw
        .into_iter()
        .map(|(bits, pos, b)| {
            let idx = patterns.patterns().binary_search_by(|p| p.bits().cmp(&bits[..])).expect("pattern present");
            (idx, pos, b)
        })
        .collect();
    Ok(ConvexEmbedding { patterns, blocks })
}

#[derive(Debug, Clone, Serialize)]
pub struct NeuronStationarity {
    pub neuron: usize,
    /// `|beta w2_j + g^T phi(X w1_j)|`, maximised over outputs.
    pub output_residual: f64,
    /// Smallest `||beta w1_j + X^T (c * G w2_j)||` over admissible slopes.
    pub input_residual: f64,
    /// `beta * | ||w2_j|| - ||w1_j|| |`, in the same units as the gradient
    /// residuals (the two gradient conditions bound it through homogeneity).
    pub balance_residual: f64,
    pub boundary_rows: usize,
    pub failing: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityReport {
    pub is_stationary: bool,
    pub tol: f64,
    pub boundary_tol: f64,
    pub scale: f64,
    pub neurons: Vec<NeuronStationarity>,
}

/// Relative tolerance defining the boundary rows of a neuron.
pub const BOUNDARY_TOL: f64 = 1e-7;

/// Checks the Clarke first-order conditions of the squared-loss objective.
///
/// On boundary rows (`x_i^T w1_j` within [`BOUNDARY_TOL`]) the activation
/// slope may be any value between `kappa` and 1; the best slopes are found
/// by box-constrained least squares. Residuals are compared against
/// `tol * max(1, ||y||)`.
pub fn stationarity_check(
    params: &NetworkParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    beta: f64,
    tol: f64,
) -> Result<StationarityReport> {
    stationarity_check_with(params, x, y, beta, tol, BOUNDARY_TOL)
}

/// [`stationarity_check`] with an explicit relative boundary band: row `i`
/// is a boundary row of neuron `j` when
/// `|x_i^T w1_j| <= boundary_tol * ||x_i|| * ||w1_j||`.
pub fn stationarity_check_with(
    params: &NetworkParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    beta: f64,
    tol: f64,
    boundary_tol: f64,
) -> Result<StationarityReport> {
    let merged = params.merge_bias_row();
    let xa = if params.bias.is_some() { x.clone().insert_column(x.ncols(), 1.0) } else { x.clone() };
    let f = network_forward(&merged, &xa)?;
    if f.shape() != y.shape() {
        return Err(Error::Shape("network output does not match the labels".into()));
    }
    let g = &f - y;
    let kappa = merged.activation.kappa();
    let (lo, hi) = (kappa.min(1.0), kappa.max(1.0));
    let scale = y.norm().max(1.0);
    let row_norms: Vec<f64> = xa.row_iter().map(|r| r.norm()).collect();
    let neurons: Vec<NeuronStationarity> = (0..merged.neurons())
        .into_par_iter()
        .map(|j| {
            let w1 = merged.w1.column(j).into_owned();
            let w2 = merged.w2.row(j).transpose();
            let z = &xa * &w1;
            let act = z.map(|v| merged.activation.apply(v));
            let output_residual = (0..merged.outputs())
                .map(|c| (beta * w2[c] + g.column(c).dot(&act)).abs())
                .fold(0.0, f64::max);
            let geff = &g * &w2;
            let wn = w1.norm();
            let boundary: Vec<usize> =
                (0..xa.nrows()).filter(|&i| z[i].abs() <= boundary_tol * row_norms[i] * wn).collect();
            let slopes = z.map(|v| merged.activation.slope(v));
            let mut fixed = slopes.component_mul(&geff);
            for &i in &boundary {
                fixed[i] = 0.0;
            }
            let r0 = &w1 * beta + xa.transpose() * fixed;
            let input_residual = if boundary.is_empty() {
                r0.norm()
            } else {
                let m = DMatrix::from_fn(xa.ncols(), boundary.len(), |r, k| {
                    xa[(boundary[k], r)] * geff[boundary[k]]
                });
                let c = box_least_squares(&m, &r0, lo, hi, 2000);
                (r0 + m * c).norm()
            };
            let balance_residual = beta * (w2.norm() - wn).abs();
            let mut failing = Vec::new();
            if output_residual > tol * scale {
                failing.push("output".to_string());
            }
            if input_residual > tol * scale {
                failing.push("input".to_string());
            }
            if balance_residual > tol * scale {
                failing.push("balance".to_string());
            }
            NeuronStationarity { neuron: j, output_residual, input_residual, balance_residual, boundary_rows: boundary.len(), failing }
        })
        .collect();
    let is_stationary = neurons.iter().all(|n| n.failing.is_empty());
    Ok(StationarityReport { is_stationary, tol, boundary_tol, scale, neurons })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_x() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[2., 2., 3., 3., 1., 0.])
    }

    #[test]
    fn forward_examples() {
        let relu = ActivationSpec::relu();
        let p = NetworkParams::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), DMatrix::from_element(1, 1, 1.0), None, relu).unwrap();
        assert_eq!(network_forward(&p, &example_x()).unwrap().as_slice(), &[2.0, 3.0, 1.0]);
        let abs = NetworkParams::new(DMatrix::identity(2, 2), DMatrix::from_element(2, 1, 1.0), None, ActivationSpec::absolute()).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -3.0, 0.5]);
        assert_eq!(network_forward(&abs, &x).unwrap().as_slice(), &[3.0, 3.5]);
    }

    #[test]
    fn convex_to_network_examples() {
        let mut w = GroupWeights::zeros(2, 2);
        w.set_block(0, &DVector::from_vec(vec![4.0, 0.0]));
        w.set_block(3, &DVector::from_vec(vec![0.0, 9.0]));
        let net = convex_to_network(&w, ActivationSpec::relu());
        assert_eq!(net.w1, DMatrix::from_column_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
        assert_eq!(net.w2.as_slice(), &[2.0, -3.0]);
        let empty = convex_to_network(&GroupWeights::zeros(2, 2), ActivationSpec::relu());
        assert_eq!(empty.neurons(), 0);
        assert_eq!(network_forward(&empty, &example_x()).unwrap(), DMatrix::zeros(3, 1));
    }

    #[test]
    fn rescale_example() {
        let p = NetworkParams::new(DMatrix::from_column_slice(2, 1, &[4.0, 0.0]), DMatrix::from_element(1, 1, 1.0), None, ActivationSpec::relu()).unwrap();
        let b = rescale_balanced(&p);
        assert!((b.w1[(0, 0)] - 2.0).abs() < 1e-15 && (b.w2[(0, 0)] - 2.0).abs() < 1e-15);
        assert_eq!(rescale_balanced(&b), b);
    }

    #[test]
    fn weight_file_round_trip() {
        let p = NetworkParams::new(
            DMatrix::from_fn(3, 2, |i, j| (i as f64 + 0.1) * (j as f64 - 0.7)),
            DMatrix::from_fn(2, 2, |i, j| 1.0 / (1.0 + i as f64 + 3.0 * j as f64)),
            Some(DVector::from_vec(vec![0.25, -1.0 / 3.0])),
            ActivationSpec::leaky(0.1).unwrap(),
        )
        .unwrap();
        assert_eq!(NetworkParams::from_weight_text(&p.to_weight_text()).unwrap(), p);
    }

    #[test]
    fn bias_split_round_trip() {
        let x = DMatrix::from_row_slice(3, 2, &[0.5, 1.0, -1.0, 2.0, 0.2, -0.3]);
        let p = NetworkParams::new(DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 - 2.0), DMatrix::from_element(2, 1, 0.7), None, ActivationSpec::relu()).unwrap();
        let xa = x.clone().insert_column(2, 1.0);
        let split = p.split_bias_row();
        let a = network_forward(&p, &xa).unwrap();
        let b = network_forward(&split, &x).unwrap();
        assert!((a - b).norm() < 1e-14);
    }
}
