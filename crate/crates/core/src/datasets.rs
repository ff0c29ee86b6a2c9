//! Dataset generators and CSV ingestion.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::svd_decompose;

/// Features (without a ones column) and an `n × C` label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Shape(format!("{} feature rows but {} label rows", x.nrows(), y.nrows())));
        }
        let feature_names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        Ok(Self { x, y, feature_names })
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    /// First `round(fraction * n)` rows and the rest.
    pub fn split(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return invalid("split fraction must lie in (0, 1)");
        }
        let n = self.nrows();
        let k = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        let head: Vec<usize> = (0..k).collect();
        let tail: Vec<usize> = (k..n).collect();
        let part = |idx: &[usize]| Dataset {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
            feature_names: self.feature_names.clone(),
        };
        Ok((part(&head), part(&tail)))
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

/// The five-point 1D set `x = -2..2`, `y = (1, -1, 1, 1, -1)`.
pub fn toy1d() -> Dataset {
    let x = DMatrix::from_column_slice(5, 1, &[-2.0, -1.0, 0.0, 1.0, 2.0]);
    let y = DMatrix::from_column_slice(5, 1, &[1.0, -1.0, 1.0, 1.0, -1.0]);
    Dataset::new(x, y).expect("consistent shapes")
}

/// Number of hidden units in the planted teacher network.
pub const PLANTED_NEURONS: usize = 5;
/// Standard deviation of the label noise added to planted labels.
pub const PLANTED_NOISE: f64 = 0.1;

/// Labels `relu(X W1) w2 + 0.1 e` from a random five-unit teacher.
pub fn planted_labels(x: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let w1 = gaussian_matrix(x.ncols(), PLANTED_NEURONS, rng);
    let w2 = gaussian_matrix(PLANTED_NEURONS, 1, rng);
    let noise = gaussian_matrix(x.nrows(), 1, rng) * PLANTED_NOISE;
    (x * w1).map(|v| v.max(0.0)) * w2 + noise
}

/// Gaussian features with teacher-network labels.
pub fn planted_relu(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return invalid("planted_relu needs n, d >= 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_matrix(n, d, &mut rng);
    let y = planted_labels(&x, &mut rng);
    Dataset::new(x, y)
}

/// Gaussian features whose trailing singular values `sigma_{k+1..}` are
/// set to 1, with teacher-network labels.
pub fn rank_deficient_gaussian(n: usize, d: usize, k: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 || k > n.min(d) {
        return invalid(format!("rank_deficient_gaussian needs k <= min(n, d), got k={k}, n={n}, d={d}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = gaussian_matrix(n, d, &mut rng);
    let f = svd_decompose(&raw, 0.0)?;
    let mut sigma = f.sigma.clone();
    for s in sigma.iter_mut().skip(k) {
        *s = 1.0;
    }
    let x = &f.u * DMatrix::from_diagonal(&sigma) * f.v.transpose();
    let y = planted_labels(&x, &mut rng);
    Dataset::new(x, y)
}

/// Lag-3 regression rows `x_i = (s_{i-1}, s_{i-2}, s_{i-3})`, target `s_i`.
pub fn ar3(series: &[f64]) -> Result<Dataset> {
    if series.len() < 4 {
        return invalid("ar3 needs a series of length at least 4");
    }
    let n = series.len() - 3;
    let x = DMatrix::from_fn(n, 3, |i, j| series[i + 2 - j]);
    let y = DMatrix::from_fn(n, 1, |i, _| series[i + 3]);
    Dataset::new(x, y)
}

/// Quasi-periodic pulse train with noise, standing in for an ECG trace.
pub fn synthetic_pulse_series(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = 23.0;
    (0..len)
        .map(|t| {
            let phase = (t as f64 % period) / period;
            let spike = (-((phase - 0.3) / 0.03).powi(2)).exp();
            let wave = 0.25 * (2.0 * std::f64::consts::PI * phase).sin();
            spike + wave + 0.05 * gaussian(&mut rng)
        })
        .collect()
}

/// Rows `(cos(pi i / n), sin(pi i / n))`; the zonotope is a regular `2n`-gon.
pub fn regular_polygon_generators(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 2, |i, j| {
        let a = std::f64::consts::PI * i as f64 / n as f64;
        if j == 0 { a.cos() } else { a.sin() }
    })
}

/// Rows with `X X^T = I`: orthonormalized Gaussian rows (`n <= d`).
pub fn whitened_gaussian(n: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n > d {
        return invalid("whitened data needs n <= d");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = gaussian_matrix(d, n, &mut rng);
    let q = g.qr().q();
    Ok(q.transpose())
}

/// Named generator with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Toy1d,
    PlantedRelu { n: usize, d: usize, seed: u64 },
    RankDeficientGaussian { n: usize, d: usize, k: usize, seed: u64 },
    Ar3 { len: usize, seed: u64 },
}

impl GeneratorSpec {
    pub fn generate(&self) -> Result<Dataset> {
        match *self {
            Self::Toy1d => Ok(toy1d()),
            Self::PlantedRelu { n, d, seed } => planted_relu(n, d, seed),
            Self::RankDeficientGaussian { n, d, k, seed } => rank_deficient_gaussian(n, d, k, seed),
            Self::Ar3 { len, seed } => ar3(&synthetic_pulse_series(len, seed)),
        }
    }

    /// Parses `toy1d`, `planted_relu:n=20,d=3,seed=1` and similar.
    pub fn parse(text: &str) -> Result<Self> {
        let (name, rest) = text.split_once(':').unwrap_or((text, ""));
        let mut kv = std::collections::BTreeMap::new();
        for part in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("generator parameter '{part}' is not key=value")))?;
            let v: u64 = v.trim().parse().map_err(|_| Error::InvalidArgument(format!("parameter {k} must be an integer")))?;
            kv.insert(k.trim().to_string(), v);
        }
        let get = |k: &str, default: u64| kv.get(k).copied().unwrap_or(default);
        match name.trim() {
            "toy1d" => Ok(Self::Toy1d),
            "planted_relu" => Ok(Self::PlantedRelu { n: get("n", 20) as usize, d: get("d", 3) as usize, seed: get("seed", 0) }),
            "rank_deficient_gaussian" => {
                let d = get("d", 8) as usize;
                Ok(Self::RankDeficientGaussian { n: get("n", 10) as usize, d, k: get("k", (d / 2) as u64) as usize, seed: get("seed", 0) })
            }
            "ar3" => Ok(Self::Ar3 { len: get("len", 300) as usize, seed: get("seed", 0) }),
            other => invalid(format!("unknown generator '{other}'")),
        }
    }
}

/// Reads a CSV with a header row; the last `label_cols` columns are labels.
pub fn load_csv(path: &Path, label_cols: usize) -> Result<Dataset> {
    parse_csv(&std::fs::read_to_string(path)?, label_cols)
}

pub fn parse_csv(text: &str, label_cols: usize) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "missing header row".into() })?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if label_cols >= names.len() {
        return Err(Error::Parse { line: 1, msg: format!("need at least one feature and {label_cols} label columns") });
    }
    let width = names.len();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != width {
            return Err(Error::Parse { line: i + 1, msg: format!("expected {width} fields, found {}", vals.len()) });
        }
        let mut row = Vec::with_capacity(width);
        for v in vals {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line: i + 1, msg: format!("'{}' is not a number", v.trim()) })?;
            if !x.is_finite() {
                return Err(Error::Parse { line: i + 1, msg: "non-finite value".into() });
            }
            row.push(x);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 2, msg: "no data rows".into() });
    }
    let nf = width - label_cols;
    let x = DMatrix::from_fn(rows.len(), nf, |i, j| rows[i][j]);
    let y = DMatrix::from_fn(rows.len(), label_cols, |i, j| rows[i][nf + j]);
    Ok(Dataset { x, y, feature_names: names[..nf].to_vec() })
}

/// Reads a headerless single-column or comma-separated series.
pub fn parse_series(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for v in line.split(',').map(str::trim).filter(|v| !v.is_empty()) {
            out.push(v.parse().map_err(|_| Error::Parse { line: i + 1, msg: format!("'{v}' is not a number") })?);
        }
    }
    Ok(out)
}

pub fn to_csv(x: &DMatrix<f64>, y: &DMatrix<f64>) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
    header.extend((0..y.ncols()).map(|j| format!("y{j}")));
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..x.nrows() {
        let row: Vec<String> = x.row(i).iter().chain(y.row(i).iter()).map(|v| crate::fmt::fmt_f64(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Mean squared error between two equally shaped matrices.
pub fn mse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm_squared() / a.len().max(1) as f64
}

pub fn column(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_values() {
        let t = toy1d();
        assert_eq!(t.x.as_slice(), &[-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(t.y.as_slice(), &[1.0, -1.0, 1.0, 1.0, -1.0]);
    }

    #[test]
    fn rank_deficient_spectrum() {
        let d = rank_deficient_gaussian(10, 8, 4, 3).unwrap();
        let s = d.x.clone().svd(false, false).singular_values;
        let mut s: Vec<f64> = s.iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for v in &s[4..] {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!(s[3] > 1.0);
    }

    #[test]
    fn ar3_windowing() {
        let d = ar3(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(d.nrows(), 2);
        assert_eq!(d.x.row(0).iter().copied().collect::<Vec<_>>(), vec![3.0, 2.0, 1.0]);
        assert_eq!(d.y.as_slice(), &[4.0, 5.0]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let ok = parse_csv("a,b,y\n1,2,3\n4,5,6\n", 1).unwrap();
        assert_eq!(ok.x.shape(), (2, 2));
        match parse_csv("a,b,y\n1,2,3\n4,x,6\n", 1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_csv("a,b,y\n1,2\n", 1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let g = GeneratorSpec::parse("planted_relu:n=7,d=2,seed=4").unwrap();
        assert_eq!(g.generate().unwrap(), g.generate().unwrap());
        assert!(GeneratorSpec::parse("nope").is_err());
    }

    #[test]
    fn whitened_rows() {
        let x = whitened_gaussian(5, 8, 1).unwrap();
        assert!((&x * x.transpose() - DMatrix::identity(5, 5)).amax() < 1e-12);
    }
}
