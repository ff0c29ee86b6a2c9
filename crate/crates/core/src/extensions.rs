//! Architectural variants built on top of the scalar convex program:
//! low-rank arrangements, the spike-free shortcut, vector outputs and
//! convolutional reductions.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::activation::ActivationSpec;
use crate::arrangements::{enumerate_exact, sample_gaussian, ArrangementPattern, ImageShape, PatternSet, PatternSource};
use crate::data::{DataMatrix, LabelData, RANK_TOL};
use crate::error::{invalid, Error, Result};
use crate::linalg::svd_decompose;
use crate::loss::LossSpec;
use crate::mapping::{convex_to_network, network_forward, nonconvex_objective, NetworkParams};
use crate::program::{ConvexProgram, GroupWeights};
use crate::solvers::{circulant_from_spectrum, nuclear_certificate, solve_admm, solve_nuclear, SolveReport, SolverConfig};

/// Certified approximation ratio for training on rank-`k` arrangements.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LowRankPlan {
    pub k: usize,
    pub sigma_kplus1: f64,
    /// Loss Lipschitz constant, estimated locally as `||y||` (the residual
    /// norm of the zero predictor).
    pub lipschitz_l: f64,
    /// Activation Lipschitz constant `max(1, |kappa|)`.
    pub lipschitz_r: f64,
    pub beta: f64,
    pub ratio: f64,
}

impl LowRankPlan {
    pub fn new(k: usize, sigma_kplus1: f64, lipschitz_l: f64, lipschitz_r: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return invalid("the low-rank ratio needs beta > 0");
        }
        let ratio = (1.0 + lipschitz_l * lipschitz_r * sigma_kplus1 / beta).powi(2);
        Ok(Self { k, sigma_kplus1, lipschitz_l, lipschitz_r, beta, ratio })
    }
}

/// How patterns are generated from the rank-`k` approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LowRankPatterns {
    Exact,
    Sampled { count: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct LowRankResult {
    pub weights: GroupWeights,
    pub plan: LowRankPlan,
    pub patterns: PatternSet,
    /// Convex objective of the approximate program.
    pub convex_objective: f64,
    /// Training objective of the reconstructed network on the original data.
    pub objective: f64,
    pub network: NetworkParams,
    pub report: SolveReport,
}

/// Trains on patterns of the rank-`k` truncation while features and loss
/// use the original data; the reconstructed network is evaluated exactly.
pub fn lowrank_train(
    data: &DataMatrix,
    labels: &LabelData,
    k: usize,
    beta: f64,
    activation: ActivationSpec,
    patterns: LowRankPatterns,
    cfg: &SolverConfig,
) -> Result<LowRankResult> {
    let rank = data.rank();
    if k == 0 || k > rank {
        return Err(Error::InvalidArgument(format!("target rank {k} must lie in 1..={rank}")));
    }
    let svd = data.svd();
    let xk = svd.truncate(k);
    let sigma = data.singular_values();
    let sigma_kplus1 = if k < sigma.len() { sigma[k] } else { 0.0 };
    let y = labels.column(0);
    let plan = LowRankPlan::new(k, sigma_kplus1, y.norm(), activation.kappa().abs().max(1.0), beta)?;
    let approx = DataMatrix::new(xk.clone())?;
    let set = match patterns {
        LowRankPatterns::Exact => enumerate_exact(&approx)?,
        LowRankPatterns::Sampled { count, seed } => sample_gaussian(&approx, count, seed)?,
    };
    let prog = ConvexProgram::builder(data.clone(), labels.clone(), set.clone())
        .activation(activation)
        .beta(beta)
        .constraint_data(xk)
        .build()?;
    let (weights, report) = solve_admm(&prog, cfg)?;
    let network = convex_to_network(&weights, activation);
    let objective = nonconvex_objective(&network, data.values(), labels.values(), beta)?;
    Ok(LowRankResult { convex_objective: prog.objective(&weights), weights, plan, patterns: set, objective, network, report })
}

/// Tolerance of the whitened-data check `X X^T = I`.
pub const WHITENED_TOL: f64 = 1e-8;

pub fn is_whitened(x: &DMatrix<f64>) -> bool {
    let g = x * x.transpose();
    (g - DMatrix::identity(x.nrows(), x.nrows())).amax() <= WHITENED_TOL
}

/// Two-block program over the all-ones pattern, exact for spike-free data.
///
/// Whitened data (`X X^T = I`) is accepted automatically; anything else
/// requires `assert_spike_free`.
pub fn spike_free_train(
    data: &DataMatrix,
    labels: &LabelData,
    beta: f64,
    cfg: &SolverConfig,
    assert_spike_free: bool,
) -> Result<(GroupWeights, SolveReport)> {
    if !assert_spike_free && !is_whitened(data.values()) {
        return invalid(
            "data is not whitened (X X^T != I within 1e-8); the single-pattern program is only exact \
             for spike-free data, pass the override if the data is known to be spike-free",
        );
    }
    let n = data.nrows();
    let set = PatternSet::new(n, vec![ArrangementPattern::new(vec![true; n], None)], PatternSource::Loaded, None)?;
    let prog = ConvexProgram::builder(data.clone(), labels.clone(), set)
        .activation(ActivationSpec::relu())
        .beta(beta)
        .build()?;
    solve_admm(&prog, cfg)
}

#[derive(Debug, Clone)]
pub struct VectorOutputResult {
    pub weights: Vec<GroupWeights>,
    pub reports: Vec<SolveReport>,
    pub objectives: Vec<f64>,
    /// Concatenated network; every neuron feeds exactly one output.
    pub network: NetworkParams,
}

impl VectorOutputResult {
    pub fn total_objective(&self) -> f64 {
        self.objectives.iter().sum()
    }
}

/// Solves one scalar program per output column in parallel.
pub fn vector_output_train(
    data: &DataMatrix,
    labels: &LabelData,
    beta: f64,
    patterns: &PatternSet,
    activation: ActivationSpec,
    cfg: &SolverConfig,
) -> Result<VectorOutputResult> {
    let c = labels.outputs();
    if c == 0 {
        return invalid("labels need at least one column");
    }
    let solved: Vec<Result<(GroupWeights, SolveReport, f64)>> = (0..c)
        .into_par_iter()
        .map(|col| {
            let column = LabelData::from_vector(labels.column(col))?;
            let prog = ConvexProgram::builder(data.clone(), column, patterns.clone())
                .activation(activation)
                .beta(beta)
                .build()?;
            let mut local = cfg.clone();
            local.seed = cfg.seed.wrapping_add(col as u64);
            let (w, report) = solve_admm(&prog, &local)?;
            let obj = prog.objective(&w);
            Ok((w, report, obj))
        })
        .collect();
    let mut weights = Vec::with_capacity(c);
    let mut reports = Vec::with_capacity(c);
    let mut objectives = Vec::with_capacity(c);
    for s in solved {
        let (w, r, o) = s?;
        weights.push(w);
        reports.push(r);
        objectives.push(o);
    }
    let parts: Vec<NetworkParams> = weights.iter().map(|w| convex_to_network(w, activation)).collect();
    let m: usize = parts.iter().map(|p| p.neurons()).sum();
    let d = data.ncols();
    let mut w1 = DMatrix::zeros(d, m);
    let mut w2 = DMatrix::zeros(m, c);
    let mut at = 0;
    for (col, p) in parts.iter().enumerate() {
        for j in 0..p.neurons() {
            w1.set_column(at, &p.w1.column(j));
            w2[(at, col)] = p.w2[(j, 0)];
            at += 1;
        }
    }
    let network = NetworkParams::new(w1, w2, None, activation)?;
    Ok(VectorOutputResult { weights, reports, objectives, network })
}

/// Geometry used to cut patches out of signals or images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PatchGeometry {
    pub patch: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub channels: usize,
}

/// `K` patch matrices of equal shape `n × d`.
#[derive(Debug, Clone)]
pub struct PatchSet {
    patches: Vec<DMatrix<f64>>,
    geometry: Option<PatchGeometry>,
}

impl PatchSet {
    pub fn new(patches: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = patches.first().ok_or_else(|| Error::InvalidArgument("a patch set needs at least one patch".into()))?;
        if first.is_empty() {
            return invalid("patches must be nonempty");
        }
        if patches.iter().any(|p| p.shape() != first.shape()) {
            return Err(Error::Shape("patch matrices differ in shape".into()));
        }
        Ok(Self { patches, geometry: None })
    }

    /// Sliding windows over the rows of `signals` (one signal per row),
    /// zero-padded on both ends.
    pub fn from_signals_1d(signals: &DMatrix<f64>, patch: usize, stride: usize, padding: usize) -> Result<Self> {
        let image = ImageShape { height: 1, width: signals.ncols(), channels: 1 };
        let mut set = Self::from_images_2d(signals, image, (1, patch), stride, padding)?;
        if let Some(g) = set.geometry.as_mut() {
            g.patch = (1, patch);
        }
        Ok(set)
    }

    /// Windows over row-major `height × width × channels` images, padding
    /// only the spatial axes that the window spans.
    pub fn from_images_2d(
        images: &DMatrix<f64>,
        image: ImageShape,
        filter: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if images.ncols() != image.len() {
            return Err(Error::Shape(format!("images have {} columns, shape needs {}", images.ncols(), image.len())));
        }
        let (fh, fw) = filter;
        if stride == 0 || fh == 0 || fw == 0 {
            return invalid("stride and filter sizes must be positive");
        }
        let pad_h = if image.height == 1 && fh == 1 { 0 } else { padding };
        let (ph, pw) = (image.height + 2 * pad_h, image.width + 2 * padding);
        if fh > ph || fw > pw {
            return invalid("filter does not fit inside the padded input");
        }
        let n = images.nrows();
        let d = fh * fw * image.channels;
        let mut patches = Vec::new();
        for top in (0..=ph - fh).step_by(stride) {
            for left in (0..=pw - fw).step_by(stride) {
                let mut p = DMatrix::zeros(n, d);
                for r in 0..fh {
                    for c in 0..fw {
                        let (rr, cc) = (top + r, left + c);
                        if rr < pad_h || cc < padding || rr >= pad_h + image.height || cc >= padding + image.width {
                            continue;
                        }
                        for ch in 0..image.channels {
                            let src = ((rr - pad_h) * image.width + cc - padding) * image.channels + ch;
                            let dst = (r * fw + c) * image.channels + ch;
                            p.column_mut(dst).copy_from(&images.column(src));
                        }
                    }
                }
                patches.push(p);
            }
        }
        let mut set = Self::new(patches)?;
        set.geometry = Some(PatchGeometry { patch: filter, stride, padding, channels: image.channels });
        Ok(set)
    }

    pub fn patches(&self) -> &[DMatrix<f64>] {
        &self.patches
    }

    pub fn count(&self) -> usize {
        self.patches.len()
    }

    pub fn nrows(&self) -> usize {
        self.patches[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.patches[0].ncols()
    }

    pub fn geometry(&self) -> Option<PatchGeometry> {
        self.geometry
    }

    /// `[X_1; ...; X_K]`, shape `nK × d`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (n, d) = (self.nrows(), self.dim());
        let mut out = DMatrix::zeros(n * self.count(), d);
        for (k, p) in self.patches.iter().enumerate() {
            out.rows_mut(k * n, n).copy_from(p);
        }
        out
    }
}

/// Global-average-pooling reduction: stacked patches plus a loss that
/// averages predictions over the `K` row groups.
pub fn cnn_gap_reduce(patches: &PatchSet, labels: &LabelData, loss: LossSpec) -> Result<(DataMatrix, LossSpec)> {
    labels.check_rows(patches.nrows())?;
    let stacked = DataMatrix::new(patches.stacked())?;
    Ok((stacked, LossSpec::averaged(patches.count(), loss)?))
}

/// Objective of a global-average-pooled CNN evaluated patch by patch.
pub fn cnn_gap_objective(params: &NetworkParams, patches: &PatchSet, y: &DMatrix<f64>, beta: f64) -> Result<f64> {
    let mut f = DMatrix::zeros(patches.nrows(), params.outputs());
    for p in patches.patches() {
        f += network_forward(params, p)?;
    }
    f /= patches.count() as f64;
    Ok(0.5 * (f - y).norm_squared() + beta * crate::mapping::weight_decay(params))
}

#[derive(Debug, Clone)]
pub struct LinearCnnResult {
    /// `d × K` solution of the nuclear-norm program.
    pub z: DMatrix<f64>,
    /// Unit-norm filters, one per retained singular value.
    pub filters: DMatrix<f64>,
    /// `r × K` output weights `sigma_j v_j^T`.
    pub output_weights: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// `||sum_k X_k z_k - sum_k X_k W1 w2_k||`.
    pub reconstruction_error: f64,
    /// `sigma_max([X_1^T v ... X_K^T v])` at the solution.
    pub certificate: f64,
    pub report: SolveReport,
}

impl LinearCnnResult {
    /// Balanced factors `(sqrt(sigma) u, sqrt(sigma) v^T)` of the
    /// weight-decay network.
    pub fn balanced_factors(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut w1 = self.filters.clone();
        let mut w2 = DMatrix::zeros(self.singular_values.len(), self.z.ncols());
        for j in 0..self.singular_values.len() {
            let s = self.singular_values[j];
            w1.column_mut(j).scale_mut(s.sqrt());
            w2.row_mut(j).copy_from(&(self.output_weights.row(j) / s.sqrt()));
        }
        (w1, w2)
    }
}

/// Relative singular-value cutoff for filter recovery.
pub const FILTER_RANK_TOL: f64 = 1e-10;

pub fn linear_cnn_train(patches: &PatchSet, y: &DVector<f64>, beta: f64, cfg: &SolverConfig) -> Result<LinearCnnResult> {
    let (z, report) = solve_nuclear(patches.patches(), y, beta, cfg)?;
    let f = svd_decompose(&z, FILTER_RANK_TOL)?;
    let r = f.rank;
    let filters = f.u.columns(0, r).into_owned();
    let mut output_weights = f.v.columns(0, r).transpose();
    for j in 0..r {
        output_weights.row_mut(j).scale_mut(f.sigma[j]);
    }
    let mut recon = DVector::zeros(patches.nrows());
    let mut direct = DVector::zeros(patches.nrows());
    for (k, xk) in patches.patches().iter().enumerate() {
        direct += xk * z.column(k);
        recon += xk * (&filters * output_weights.column(k));
    }
    let certificate = nuclear_certificate(patches.patches(), y, &z);
    Ok(LinearCnnResult {
        singular_values: f.sigma.rows(0, r).into_owned(),
        reconstruction_error: (direct - recon).norm(),
        z,
        filters,
        output_weights,
        certificate,
        report,
    })
}

/// Spectral-norm distance between the orthogonal projectors onto the
/// column spaces of `a` and `b`.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape("subspaces live in different dimensions".into()));
    }
    let proj = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let f = svd_decompose(m, RANK_TOL)?;
        let q = f.u.columns(0, f.rank).into_owned();
        Ok(&q * q.transpose())
    };
    let diff = proj(a)? - proj(b)?;
    if diff.is_empty() {
        return Ok(0.0);
    }
    Ok(diff.svd(false, false).singular_values.amax())
}

/// Largest `|z_k - conj(z_{-k mod d})|`; zero for spectra of real signals.
pub fn conjugate_symmetry_error(z: &DVector<Complex64>) -> f64 {
    let d = z.len();
    (0..d).map(|k| (z[k] - z[(d - k) % d].conj()).norm()).fold(0.0, f64::max)
}

/// Two-layer linear circular network realising spectrum `z`: a real
/// circulant filter followed by the output vector `sqrt(d) e_0`.
#[derive(Debug, Clone)]
pub struct CircularNetwork {
    pub filter: DMatrix<f64>,
    pub output: DVector<f64>,
    /// Largest imaginary part discarded when forming the real filter.
    pub imaginary_residual: f64,
}

impl CircularNetwork {
    pub fn from_spectrum(z: &DVector<Complex64>) -> Self {
        let d = z.len();
        let w = circulant_from_spectrum(z);
        let imaginary_residual = w.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
        let mut output = DVector::zeros(d);
        output[0] = (d as f64).sqrt();
        Self { filter: w.map(|c| c.re), output, imaginary_residual }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * (&self.filter * &self.output)
    }
}

/// `X F z` with the unitary DFT; real when `z` is conjugate-symmetric.
pub fn fourier_features_predict(x: &DMatrix<f64>, z: &DVector<Complex64>) -> DVector<Complex64> {
    let xf = x.map(|v| Complex64::new(v, 0.0)) * crate::solvers::dft_matrix(x.ncols());
    xf * z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_patches() {
        let s = DMatrix::from_row_slice(1, 6, &[1., 2., 3., 4., 5., 6.]);
        let p = PatchSet::from_signals_1d(&s, 2, 2, 0).unwrap();
        assert_eq!(p.count(), 3);
        assert_eq!(p.patches()[1].as_slice(), &[3.0, 4.0]);
        let padded = PatchSet::from_signals_1d(&s, 3, 1, 1).unwrap();
        assert_eq!(padded.count(), 6);
        assert_eq!(padded.patches()[0].as_slice(), &[0.0, 1.0, 2.0]);
        assert_eq!(padded.patches()[5].as_slice(), &[5.0, 6.0, 0.0]);
    }

    #[test]
    fn two_dimensional_patches() {
        let img = DMatrix::from_row_slice(1, 9, &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let shape = ImageShape { height: 3, width: 3, channels: 1 };
        let p = PatchSet::from_images_2d(&img, shape, (2, 2), 1, 0).unwrap();
        assert_eq!(p.count(), 4);
        assert_eq!(p.patches()[3].as_slice(), &[5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn plan_ratio() {
        let plan = LowRankPlan::new(2, 1.0, 1.0, 1.0, 0.1).unwrap();
        assert!((plan.ratio - 121.0).abs() < 1e-12);
        assert_eq!(LowRankPlan::new(2, 0.0, 3.0, 1.0, 0.1).unwrap().ratio, 1.0);
    }

    #[test]
    fn subspace_distance_basics() {
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(3, 1, &[-2.0, 0.0, 0.0]);
        assert!(subspace_distance(&a, &b).unwrap() < 1e-14);
        let c = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert!((subspace_distance(&a, &c).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn circular_network_matches_features() {
        let d = 6;
        let mut z = DVector::from_element(d, Complex64::new(0.0, 0.0));
        z[1] = Complex64::new(0.5, -0.25);
        z[5] = z[1].conj();
        z[0] = Complex64::new(1.5, 0.0);
        assert!(conjugate_symmetry_error(&z) < 1e-15);
        let net = CircularNetwork::from_spectrum(&z);
        assert!(net.imaginary_residual < 1e-12);
        let x = DMatrix::from_fn(4, d, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let a = net.forward(&x);
        let b = fourier_features_predict(&x, &z);
        for i in 0..4 {
            assert!((a[i] - b[i].re).abs() < 1e-12 && b[i].im.abs() < 1e-12);
        }
    }
}
