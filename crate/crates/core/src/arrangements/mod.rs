//! Activation patterns of a data matrix and the tools that produce them.

mod enumerate;
mod lp;
mod sampling;
mod zonotope;

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fmt::fmt_f64;

pub use enumerate::{enumerate_exact, enumerate_exact_with, EnumerateConfig, DEFAULT_R_MAX};
pub use sampling::{sample_convolutional, sample_gaussian, sample_gaussian_sharded, ImageShape};
pub use zonotope::{estimate_solid_angles, zonotope_vertex, ZonotopeReport};

/// Sign pattern `1[X u >= 0]` with an optional witness direction.
///
/// Equality, ordering and hashing look at the bits only.
#[derive(Debug, Clone)]
pub struct ArrangementPattern {
    bits: Vec<bool>,
    witness: Option<DVector<f64>>,
}

impl ArrangementPattern {
    pub fn new(bits: Vec<bool>, witness: Option<DVector<f64>>) -> Self {
        Self { bits, witness }
    }

    /// Pattern of `x` at direction `u`; zero inner products give bit 1.
    pub fn from_direction(x: &DMatrix<f64>, u: &DVector<f64>) -> Self {
        let bits = (x * u).iter().map(|&v| v >= 0.0).collect();
        Self { bits, witness: Some(u.clone()) }
    }

    pub fn parse_bits(text: &str) -> Result<Vec<bool>> {
        text.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => invalid(format!("invalid bit character '{other}'")),
            })
            .collect()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn witness(&self) -> Option<&DVector<f64>> {
        self.witness.as_ref()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    /// Gate diagonal with `1` on set bits and `kappa` elsewhere.
    pub fn gate(&self, kappa: f64) -> DVector<f64> {
        DVector::from_iterator(self.bits.len(), self.bits.iter().map(|&b| if b { 1.0 } else { kappa }))
    }

    /// `+1` on set bits and `-1` elsewhere.
    pub fn signs(&self) -> DVector<f64> {
        DVector::from_iterator(self.bits.len(), self.bits.iter().map(|&b| if b { 1.0 } else { -1.0 }))
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

impl PartialEq for ArrangementPattern {
    fn eq(&self, other: &Self) -> bool {
        self.bits == other.bits
    }
}

impl Eq for ArrangementPattern {}

impl PartialOrd for ArrangementPattern {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ArrangementPattern {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bits.cmp(&other.bits)
    }
}

impl std::hash::Hash for ArrangementPattern {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.bits.hash(state);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternSource {
    Exact,
    Gaussian,
    Convolutional,
    Loaded,
}

impl fmt::Display for PatternSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PatternSource::Exact => "exact",
            PatternSource::Gaussian => "gaussian",
            PatternSource::Convolutional => "convolutional",
            PatternSource::Loaded => "loaded",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for PatternSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(PatternSource::Exact),
            "gaussian" => Ok(PatternSource::Gaussian),
            "convolutional" => Ok(PatternSource::Convolutional),
            "loaded" => Ok(PatternSource::Loaded),
            other => invalid(format!("unknown pattern source '{other}'")),
        }
    }
}

/// Deduplicated patterns sorted lexicographically on bits.
#[derive(Debug, Clone)]
pub struct PatternSet {
    n: usize,
    patterns: Vec<ArrangementPattern>,
    source: PatternSource,
    seed: Option<u64>,
}

impl PatternSet {
    pub fn new(
        n: usize,
        mut patterns: Vec<ArrangementPattern>,
        source: PatternSource,
        seed: Option<u64>,
    ) -> Result<Self> {
        if let Some(p) = patterns.iter().find(|p| p.len() != n) {
            return Err(Error::Shape(format!("pattern of length {} in a set for n = {n}", p.len())));
        }
        // Stable sort keeps the first witness among duplicates.
        patterns.sort();
        patterns.dedup();
        Ok(Self { n, patterns, source, seed })
    }

    pub fn from_bit_strings(n: usize, rows: &[&str]) -> Result<Self> {
        let patterns = rows
            .iter()
            .map(|r| Ok(ArrangementPattern::new(ArrangementPattern::parse_bits(r)?, None)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, patterns, PatternSource::Loaded, None)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn patterns(&self) -> &[ArrangementPattern] {
        &self.patterns
    }

    pub fn get(&self, i: usize) -> &ArrangementPattern {
        &self.patterns[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ArrangementPattern> {
        self.patterns.iter()
    }

    pub fn source(&self) -> PatternSource {
        self.source
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn contains(&self, bits: &[bool]) -> bool {
        self.patterns.binary_search_by(|p| p.bits.as_slice().cmp(bits)).is_ok()
    }

    pub fn is_subset_of(&self, other: &PatternSet) -> bool {
        self.patterns.iter().all(|p| other.contains(&p.bits))
    }

    /// Removes the all-zero pattern, whose block vanishes when `kappa = 0`.
    pub fn without_zero_pattern(&self) -> Self {
        let patterns = self.patterns.iter().filter(|p| p.count_ones() > 0).cloned().collect();
        Self { n: self.n, patterns, source: self.source, seed: self.seed }
    }

    pub fn bit_strings(&self) -> Vec<String> {
        self.patterns.iter().map(ArrangementPattern::bit_string).collect()
    }

    /// Plain-text form: a header with `n`, source and seed, then one line per
    /// pattern holding the bit string and an optional comma-separated witness.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# cvxnn patterns v1\n");
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        out.push_str(&format!("# n={} source={} seed={} count={}\n", self.n, self.source, seed, self.len()));
        for p in &self.patterns {
            out.push_str(&p.bit_string());
            if let Some(w) = &p.witness {
                let parts: Vec<String> = w.iter().map(|v| fmt_f64(*v)).collect();
                out.push(' ');
                out.push_str(&parts.join(","));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut n = None;
        let mut source = PatternSource::Loaded;
        let mut seed = None;
        let mut patterns = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: lineno + 1, msg };
            if let Some(rest) = line.strip_prefix('#') {
                for field in rest.split_whitespace() {
                    if let Some((k, v)) = field.split_once('=') {
                        match k {
                            "n" => n = Some(v.parse::<usize>().map_err(|e| parse_err(e.to_string()))?),
                            "source" => source = v.parse().map_err(|e: Error| parse_err(e.to_string()))?,
                            "seed" if v != "none" => {
                                seed = Some(v.parse::<u64>().map_err(|e| parse_err(e.to_string()))?)
                            }
                            _ => {}
                        }
                    }
                }
                continue;
            }
            let mut parts = line.split_whitespace();
            let bits_text = parts.next().unwrap_or_default();
            let bits = ArrangementPattern::parse_bits(bits_text).map_err(|e| parse_err(e.to_string()))?;
            let witness = match parts.next() {
                Some(w) => {
                    let vals = w
                        .split(',')
                        .map(|v| v.parse::<f64>().map_err(|e| parse_err(e.to_string())))
                        .collect::<Result<Vec<_>>>()?;
                    Some(DVector::from_vec(vals))
                }
                None => None,
            };
            patterns.push(ArrangementPattern::new(bits, witness));
        }
        let n = match n {
            Some(n) => n,
            None => patterns.first().map_or(0, ArrangementPattern::len),
        };
        Self::new(n, patterns, source, seed)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Upper bound `2 * sum_{k < r} C(n - 1, k)` on the number of regions of a
/// rank-`r` central arrangement of `n` hyperplanes.
pub fn count_bound(n: usize, r: usize) -> BigUint {
    if n == 0 {
        return BigUint::one();
    }
    let mut total = BigUint::zero();
    let mut binom = BigUint::one();
    for k in 0..r.min(n) {
        if k > 0 {
            binom = binom * BigUint::from(n - k) / BigUint::from(k);
        }
        total += &binom;
    }
    total * 2u32
}

/// Draws needed so a Gaussian sampler sees all `p` patterns with probability
/// at least `1 - epsilon`, given `theta_bar = p * min_i theta_i`.
pub fn sample_size_threshold(p: usize, theta_bar: f64, epsilon: f64) -> Result<u64> {
    if p == 0 {
        return invalid("pattern count must be positive");
    }
    if !(theta_bar > 0.0 && theta_bar.is_finite()) {
        return invalid(format!("theta_bar must be positive, got {theta_bar}"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return invalid(format!("epsilon must lie in (0, 1), got {epsilon}"));
    }
    let p = p as f64;
    let raw = p * (p / epsilon).ln() / theta_bar;
    Ok((raw.ceil() as u64).max(1))
}

/// Outcome of [`realizability_check`].
#[derive(Debug, Clone)]
pub struct Realizability {
    pub realizable: bool,
    /// True when the pattern is the interior of a full-dimensional cell.
    pub open_cell: bool,
    pub witness: Option<DVector<f64>>,
    pub margin: f64,
}

/// Margin below which an LP optimum counts as zero.
pub(crate) const LP_EPS: f64 = 1e-9;

/// Decides whether `bits = 1[X u >= 0]` for some direction `u`.
///
/// Set bits need `x_i^T u >= 0` and cleared bits need `x_i^T u < 0`, so the
/// all-ones pattern is always realised by `u = 0`.
pub fn realizability_check(bits: &[bool], x: &DMatrix<f64>) -> Result<Realizability> {
    let (n, d) = x.shape();
    if bits.len() != n {
        return Err(Error::Shape(format!("pattern has {} bits but data has {n} rows", bits.len())));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let r = x.row(i);
        let nrm = r.norm();
        let s = if bits[i] { 1.0 } else { -1.0 };
        if nrm == 0.0 {
            if !bits[i] {
                return Ok(Realizability { realizable: false, open_cell: false, witness: None, margin: 0.0 });
            }
            rows.push(vec![0.0; d]);
        } else {
            rows.push(r.iter().map(|v| s * v / nrm).collect());
        }
    }
    let nonzero = |i: usize| rows[i].iter().any(|&v| v != 0.0);
    let all_strict: Vec<lp::MarginRow<'_>> = (0..n)
        .filter(|&i| nonzero(i))
        .map(|i| lp::MarginRow { coeffs: &rows[i], strict: true })
        .collect();
    let (t, u) = lp::max_margin(d, &all_strict)?;
    if t > LP_EPS {
        return Ok(Realizability { realizable: true, open_cell: true, witness: Some(u), margin: t });
    }
    if bits.iter().all(|&b| b) {
        return Ok(Realizability { realizable: true, open_cell: false, witness: Some(DVector::zeros(d)), margin: 0.0 });
    }
    let mixed: Vec<lp::MarginRow<'_>> = (0..n)
        .filter(|&i| nonzero(i))
        .map(|i| lp::MarginRow { coeffs: &rows[i], strict: !bits[i] })
        .collect();
    let (t, u) = lp::max_margin(d, &mixed)?;
    let realizable = t > LP_EPS;
    Ok(Realizability { realizable, open_cell: false, witness: realizable.then_some(u), margin: t.max(0.0) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_one() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[2., 2., 3., 3., 1., 0.])
    }

    #[test]
    fn count_bound_values() {
        assert_eq!(count_bound(3, 2), BigUint::from(6u32));
        assert_eq!(count_bound(5, 1), BigUint::from(2u32));
        assert_eq!(count_bound(10, 3), BigUint::from(92u32));
        assert_eq!(count_bound(4, 10), BigUint::from(16u32));
    }

    #[test]
    fn threshold_values() {
        assert_eq!(sample_size_threshold(16, 2.0 * std::f64::consts::PI, 0.1).unwrap(), 13);
        assert_eq!(sample_size_threshold(4, std::f64::consts::PI, 0.1).unwrap(), 5);
        assert!(sample_size_threshold(4, 0.0, 0.1).is_err());
        assert!(sample_size_threshold(4, 1.0, 1.0).is_err());
    }

    #[test]
    fn realizability_on_example_one() {
        let x = example_one();
        let check = |s: &str| realizability_check(&ArrangementPattern::parse_bits(s).unwrap(), &x).unwrap();
        assert!(check("110").realizable);
        assert!(!check("101").realizable);
        assert!(check("111").realizable);
        assert!(check("000").open_cell);
    }

    #[test]
    fn realizability_respects_ties() {
        // Antiparallel rows: 11 is realised only at u = 0, 00 never.
        let x = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let r = realizability_check(&[true, true], &x).unwrap();
        assert!(r.realizable && !r.open_cell);
        assert!(!realizability_check(&[false, false], &x).unwrap().realizable);
        assert!(realizability_check(&[true, false], &x).unwrap().open_cell);
    }

    #[test]
    fn text_round_trip() {
        let x = example_one();
        let set = enumerate_exact(&crate::data::DataMatrix::new(x).unwrap()).unwrap();
        let text = set.to_text();
        let back = PatternSet::from_text(&text).unwrap();
        assert_eq!(back.bit_strings(), set.bit_strings());
        assert_eq!(back.source(), PatternSource::Exact);
        for (a, b) in back.iter().zip(set.iter()) {
            assert_eq!(a.witness(), b.witness());
        }
    }
}
