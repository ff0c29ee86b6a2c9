use std::collections::HashMap;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::PatternSet;
use crate::data::DataMatrix;
use crate::error::{invalid, Result};

/// Zonotope vertex selected by direction `v`: `X^T 1[X v >= 0]`.
pub fn zonotope_vertex(x: &DataMatrix, v: &DVector<f64>) -> DVector<f64> {
    let ind = (x.values() * v).map(|s| if s >= 0.0 { 1.0 } else { 0.0 });
    x.values().transpose() * ind
}

/// Monte-Carlo solid angles in Gaussian-probability units.
#[derive(Debug, Clone, Serialize)]
pub struct ZonotopeReport {
    /// Distinct patterns hit by the Monte-Carlo draws.
    pub vertex_count_estimate: usize,
    /// Fraction of draws landing in each pattern of the supplied set.
    pub solid_angle_estimates: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// `P * min_i theta_i` over the supplied set.
    pub theta_bar_estimate: f64,
    /// Indices of supplied patterns never hit.
    pub unreachable: Vec<usize>,
    pub mc_samples: usize,
}

pub fn estimate_solid_angles(
    x: &DataMatrix,
    patterns: &PatternSet,
    mc_samples: usize,
    seed: u64,
) -> Result<ZonotopeReport> {
    if mc_samples < 1000 {
        return invalid("at least 1000 Monte-Carlo samples are required");
    }
    let index: HashMap<&[bool], usize> = patterns.iter().enumerate().map(|(i, p)| (p.bits(), i)).collect();
    let mut counts = vec![0usize; patterns.len()];
    let mut distinct = std::collections::HashSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = x.ncols();
    for _ in 0..mc_samples {
        let u = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let bits: Vec<bool> = (x.values() * &u).iter().map(|&v| v >= 0.0).collect();
        if let Some(&i) = index.get(bits.as_slice()) {
            counts[i] += 1;
        }
        distinct.insert(bits);
    }
    let m = mc_samples as f64;
    let theta: Vec<f64> = counts.iter().map(|&c| c as f64 / m).collect();
    let se = theta.iter().map(|t| (t * (1.0 - t) / m).sqrt()).collect();
    let min = theta.iter().cloned().filter(|&t| t > 0.0).fold(f64::INFINITY, f64::min);
    let theta_bar = if min.is_finite() { patterns.len() as f64 * min } else { 0.0 };
    Ok(ZonotopeReport {
        vertex_count_estimate: distinct.len(),
        solid_angle_estimates: theta,
        standard_errors: se,
        theta_bar_estimate: theta_bar,
        unreachable: counts.iter().enumerate().filter(|(_, &c)| c == 0).map(|(i, _)| i).collect(),
        mc_samples,
    })
}
