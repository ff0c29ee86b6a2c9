use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{ArrangementPattern, PatternSet, PatternSource};
use crate::data::DataMatrix;
use crate::error::{invalid, Error, Result};

fn collect_patterns(
    x: &DMatrix<f64>,
    draws: impl Iterator<Item = DVector<f64>>,
) -> BTreeMap<Vec<bool>, DVector<f64>> {
    let mut seen = BTreeMap::new();
    for u in draws {
        let bits: Vec<bool> = (x * &u).iter().map(|&v| v >= 0.0).collect();
        seen.entry(bits).or_insert(u);
    }
    seen
}

fn into_set(
    n: usize,
    seen: BTreeMap<Vec<bool>, DVector<f64>>,
    source: PatternSource,
    seed: u64,
) -> Result<PatternSet> {
    let patterns = seen
        .into_iter()
        .map(|(bits, u)| {
            let amax = u.amax();
            let w = if amax > 0.0 { u / amax } else { u };
            ArrangementPattern::new(bits, Some(w))
        })
        .collect();
    PatternSet::new(n, patterns, source, Some(seed))
}

/// Distinct patterns of `count` standard Gaussian directions.
pub fn sample_gaussian(x: &DataMatrix, count: usize, seed: u64) -> Result<PatternSet> {
    if count == 0 {
        return invalid("sample count must be positive");
    }
    let d = x.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = (0..count).map(|_| DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng)));
    let seen = collect_patterns(x.values(), draws);
    into_set(x.nrows(), seen, PatternSource::Gaussian, seed)
}

/// Gaussian sampling split over `shards` independent streams.
///
/// Shard `s` uses stream `s` of the seeded generator, so the merged result
/// depends on `(count, seed, shards)` but not on the thread pool.
pub fn sample_gaussian_sharded(x: &DataMatrix, count: usize, seed: u64, shards: usize) -> Result<PatternSet> {
    if count == 0 || shards == 0 {
        return invalid("sample count and shard count must be positive");
    }
    let d = x.ncols();
    let per = count.div_ceil(shards);
    let maps: Vec<_> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let take = per.min(count.saturating_sub(s * per));
            let draws = (0..take).map(|_| DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng)));
            collect_patterns(x.values(), draws)
        })
        .collect();
    let mut merged = BTreeMap::new();
    for m in maps {
        for (k, v) in m {
            merged.entry(k).or_insert(v);
        }
    }
    into_set(x.nrows(), merged, PatternSource::Gaussian, seed)
}

/// Row layout used to read data rows as images, channel-last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Patterns of Gaussian filters supported on one random `fh × fw` window.
pub fn sample_convolutional(
    x: &DataMatrix,
    image: ImageShape,
    filter: (usize, usize),
    count: usize,
    seed: u64,
) -> Result<PatternSet> {
    if count == 0 {
        return invalid("sample count must be positive");
    }
    if image.len() != x.ncols() {
        return Err(Error::Shape(format!(
            "image shape {}x{}x{} does not match {} columns",
            image.height,
            image.width,
            image.channels,
            x.ncols()
        )));
    }
    let (fh, fw) = filter;
    if fh == 0 || fw == 0 || fh > image.height || fw > image.width {
        return invalid("filter must be nonempty and fit inside the image");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(count);
    for _ in 0..count {
        let top = rng.random_range(0..=image.height - fh);
        let left = rng.random_range(0..=image.width - fw);
        let mut u = DVector::zeros(image.len());
        for r in top..top + fh {
            for c in left..left + fw {
                for ch in 0..image.channels {
                    u[(r * image.width + c) * image.channels + ch] = StandardNormal.sample(&mut rng);
                }
            }
        }
        draws.push(u);
    }
    let seen = collect_patterns(x.values(), draws.into_iter());
    into_set(x.nrows(), seen, PatternSource::Convolutional, seed)
}
