use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::lp::{max_margin, MarginRow};
use super::{ArrangementPattern, PatternSet, PatternSource, LP_EPS};
use crate::data::DataMatrix;
use crate::error::{Error, Result};

/// Enumeration refuses ranks above this by default.
pub const DEFAULT_R_MAX: usize = 8;

#[derive(Debug, Clone, Copy)]
pub struct EnumerateConfig {
    pub r_max: usize,
}

impl Default for EnumerateConfig {
    fn default() -> Self {
        Self { r_max: DEFAULT_R_MAX }
    }
}

pub fn enumerate_exact(x: &DataMatrix) -> Result<PatternSet> {
    enumerate_exact_with(x, &EnumerateConfig::default())
}

#[derive(Clone)]
struct Cell {
    /// Side (+1/-1) of every inserted hyperplane.
    signs: Vec<f64>,
    witness: DVector<f64>,
}

/// All open cells of the arrangement `{x_i^T u = 0}`, built by incremental
/// hyperplane insertion in the rank-reduced coordinates.
///
/// Each cell keeps an interior witness; a cell splits on a new hyperplane
/// exactly when an LP finds positive margin on the side its witness is not
/// on. Zero rows carry bit 1 in every pattern.
pub fn enumerate_exact_with(x: &DataMatrix, cfg: &EnumerateConfig) -> Result<PatternSet> {
    let n = x.nrows();
    let r = x.rank();
    if r > cfg.r_max {
        return Err(Error::RankTooLarge { rank: r, limit: cfg.r_max });
    }
    if r == 0 {
        let bits = vec![true; n];
        let w = DVector::zeros(x.ncols());
        return PatternSet::new(n, vec![ArrangementPattern::new(bits, Some(w))], PatternSource::Exact, None);
    }
    let svd = x.svd();
    let u_r = svd.u.columns(0, r);
    let row_scale = u_r.row_iter().fold(0.0f64, |m, row| m.max(row.norm()));

    let mut normals: Vec<Vec<f64>> = Vec::new();
    let mut row_of: Vec<Option<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let row = u_r.row(i);
        let nrm = row.norm();
        if nrm <= 1e-12 * row_scale {
            row_of.push(None);
        } else {
            row_of.push(Some(normals.len()));
            normals.push(row.iter().map(|v| v / nrm).collect());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_ce11);
    let start: DVector<f64> = DVector::from_fn(r, |_, _| StandardNormal.sample(&mut rng));
    let start = &start / start.amax();
    let mut cells = vec![Cell { signs: Vec::new(), witness: start }];

    for h in 0..normals.len() {
        let next: Vec<Vec<Cell>> = cells
            .par_iter()
            .map(|cell| split_cell(cell, &normals, h, r))
            .collect::<Result<Vec<_>>>()?;
        cells = next.into_iter().flatten().collect();
    }

    let v_r = svd.v.columns(0, r);
    let mut patterns = Vec::with_capacity(cells.len());
    for cell in &cells {
        let bits: Vec<bool> = row_of
            .iter()
            .map(|slot| slot.map_or(true, |h| cell.signs[h] > 0.0))
            .collect();
        let scaled = DVector::from_fn(r, |k, _| cell.witness[k] / svd.sigma[k]);
        let mut u = &v_r * scaled;
        let amax = u.amax();
        if amax > 0.0 {
            u /= amax;
        }
        patterns.push(ArrangementPattern::new(bits, Some(u)));
    }
    PatternSet::new(n, patterns, PatternSource::Exact, None)
}

fn split_cell(cell: &Cell, normals: &[Vec<f64>], h: usize, dim: usize) -> Result<Vec<Cell>> {
    let a = &normals[h];
    let s: f64 = a.iter().zip(cell.witness.iter()).map(|(p, q)| p * q).sum();
    let sides: Vec<f64> = if s.abs() > 1e-7 {
        vec![s.signum(), -s.signum()]
    } else {
        vec![1.0, -1.0]
    };
    let mut out = Vec::with_capacity(2);
    for (k, &side) in sides.iter().enumerate() {
        let keep_witness = k == 0 && s.abs() > 1e-7;
        if keep_witness {
            let mut signs = cell.signs.clone();
            signs.push(side);
            out.push(Cell { signs, witness: cell.witness.clone() });
            continue;
        }
        let flipped: Vec<Vec<f64>> = cell
            .signs
            .iter()
            .enumerate()
            .map(|(j, &sg)| normals[j].iter().map(|v| sg * v).collect())
            .chain(std::iter::once(a.iter().map(|v| side * v).collect()))
            .collect();
        let rows: Vec<MarginRow<'_>> = flipped.iter().map(|c| MarginRow { coeffs: c, strict: true }).collect();
        let (t, w) = max_margin(dim, &rows)?;
        if t > LP_EPS {
            let mut signs = cell.signs.clone();
            signs.push(side);
            out.push(Cell { signs, witness: w });
        }
    }
    if out.is_empty() {
        return Err(Error::Lp("cell vanished during hyperplane insertion".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrangements::count_bound;
    use nalgebra::DMatrix;
    use num_bigint::BigUint;

    #[test]
    fn example_one_has_four_patterns() {
        let x = DataMatrix::new(DMatrix::from_row_slice(3, 2, &[2., 2., 3., 3., 1., 0.])).unwrap();
        let set = enumerate_exact(&x).unwrap();
        assert_eq!(set.bit_strings(), vec!["000", "001", "110", "111"]);
        for p in set.iter() {
            let w = p.witness().unwrap();
            assert_eq!(ArrangementPattern::from_direction(x.values(), w).bits(), p.bits());
        }
    }

    #[test]
    fn parallel_rows_do_not_split() {
        let x = DataMatrix::new(DMatrix::from_row_slice(3, 2, &[1., 0., 2., 0., -1., 0.])).unwrap();
        let set = enumerate_exact(&x).unwrap();
        assert_eq!(set.bit_strings(), vec!["001", "110"]);
    }

    #[test]
    fn zero_row_gets_bit_one() {
        let x = DataMatrix::new(DMatrix::from_row_slice(2, 2, &[0., 0., 1., 1.])).unwrap();
        let set = enumerate_exact(&x).unwrap();
        assert_eq!(set.bit_strings(), vec!["10", "11"]);
    }

    #[test]
    fn general_position_meets_bound() {
        let x = DMatrix::from_fn(7, 3, |i, j| ((i * 3 + j) as f64 * 1.7).sin() + 0.1 * j as f64);
        let data = DataMatrix::new(x).unwrap();
        let set = enumerate_exact(&data).unwrap();
        assert_eq!(BigUint::from(set.len()), count_bound(7, 3));
    }

    #[test]
    fn refuses_large_rank() {
        let x = DMatrix::from_fn(12, 10, |i, j| (((i + 1) * (j + 2)) as f64).sqrt().sin() + if i == j { 1.0 } else { 0.0 });
        let data = DataMatrix::new(x).unwrap();
        assert!(matches!(enumerate_exact(&data), Err(Error::RankTooLarge { .. })));
    }
}
