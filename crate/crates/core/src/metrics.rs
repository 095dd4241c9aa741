//! Divergence between sample sets and the compute-savings model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{check_dim, Error, Result};
use crate::oracle::CostModel;
use crate::rng::CounterRng;

/// Measured per-image savings of the reference GPU benchmark, as
/// `(fraction of iterations optimized, relative time saved)`.
pub const TIMING_TABLE_SAVINGS: [(f64, f64); 4] = [(0.2, 0.082), (0.3, 0.121), (0.4, 0.162), (0.5, 0.203)];
/// Measured seconds per image at f = 0, 0.2, 0.3, 0.4, 0.5.
pub const TIMING_TABLE_TIMES: [f64; 5] = [9.94, 9.13, 8.74, 8.33, 7.92];
/// Least-squares model fraction over [`TIMING_TABLE_SAVINGS`]: 2·0.219 / 0.54.
pub const TIMING_TABLE_UNET_FRACTION: f64 = 0.438 / 0.54;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub endpoint_mse: f64,
    pub sliced_w2: f64,
    pub n_pairs: usize,
    pub n_points: usize,
}

/// Mean squared Euclidean distance between same-seed endpoints.
pub fn endpoint_mse(baseline: &[(u64, Vec<f64>)], variant: &[(u64, Vec<f64>)]) -> Result<f64> {
    if baseline.is_empty() && variant.is_empty() {
        return Err(Error::EmptySet);
    }
    let by_seed: BTreeMap<u64, &Vec<f64>> = variant.iter().map(|(s, x)| (*s, x)).collect();
    if by_seed.len() != variant.len() || baseline.len() != variant.len() {
        return Err(Error::SeedMismatch);
    }
    let mut total = 0.0;
    for (seed, a) in baseline {
        let b = by_seed.get(seed).ok_or(Error::SeedMismatch)?;
        check_dim(a.len(), b.len())?;
        total += a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    Ok(total / baseline.len() as f64)
}

/// Squared W2 between two sorted 1-D empirical distributions with uniform
/// weights, coupling them through their quantile functions. Breakpoints
/// are tracked on the integer grid `1/(n·m)`.
fn w2_squared_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as u64, b.len() as u64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut cursor = 0u64;
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        let a_end = (i as u64 + 1) * m;
        let b_end = (j as u64 + 1) * n;
        let next = a_end.min(b_end);
        acc += (next - cursor) as f64 * (a[i] - b[j]).powi(2);
        cursor = next;
        if a_end == next {
            i += 1;
        }
        if b_end == next {
            j += 1;
        }
    }
    acc / (n * m) as f64
}

/// Random unit directions for sliced distances, addressed by projection index.
pub fn projection_directions(d: usize, n_projections: usize, seed: u64) -> Vec<Vec<f64>> {
    let rng = CounterRng::new(seed);
    (0..n_projections)
        .map(|p| {
            let mut v = rng.normals(p as u64, 0, d);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            v
        })
        .collect()
}

fn project_sorted(set: &[Vec<f64>], dir: &[f64]) -> Vec<f64> {
    let mut proj: Vec<f64> = set
        .iter()
        .map(|p| p.iter().zip(dir).map(|(x, w)| x * w).sum())
        .collect();
    proj.sort_by(f64::total_cmp);
    proj
}

/// Fixed comparison set for repeated sliced-W2 queries: directions and the
/// sorted projections of the reference are computed once.
#[derive(Debug, Clone)]
pub struct SlicedReference {
    dim: usize,
    directions: Vec<Vec<f64>>,
    projections: Vec<Vec<f64>>,
}

impl SlicedReference {
    pub fn new(reference: &[Vec<f64>], n_projections: usize, seed: u64) -> Result<Self> {
        let dim = reference.first().ok_or(Error::EmptySet)?.len();
        if n_projections == 0 {
            return Err(Error::InvalidExperiment("n_projections must be >= 1".into()));
        }
        for p in reference {
            check_dim(dim, p.len())?;
        }
        let directions = projection_directions(dim, n_projections, seed);
        let projections = directions.par_iter().map(|dir| project_sorted(reference, dir)).collect();
        Ok(Self {
            dim,
            directions,
            projections,
        })
    }

    /// Sliced W2 between `points` and the reference.
    pub fn distance(&self, points: &[Vec<f64>]) -> Result<f64> {
        if points.is_empty() {
            return Err(Error::EmptySet);
        }
        for p in points {
            check_dim(self.dim, p.len())?;
        }
        // collected before summing so the reduction order is fixed
        let per_dir: Vec<f64> = self
            .directions
            .par_iter()
            .zip(&self.projections)
            .map(|(dir, reference)| w2_squared_sorted(&project_sorted(points, dir), reference))
            .collect();
        let total: f64 = per_dir.iter().sum();
        Ok((total / self.directions.len() as f64).sqrt())
    }
}

/// Monte-Carlo sliced Wasserstein-2 distance.
pub fn sliced_w2(a: &[Vec<f64>], b: &[Vec<f64>], n_projections: usize, seed: u64) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    SlicedReference::new(b, n_projections, seed)?.distance(a)
}

/// `saving = f · u / 2`: skipping one of two evaluations on a fraction `f`
/// of iterations, where `u` is the model's share of iteration time.
pub fn predicted_saving(f: f64, unet_fraction: f64) -> f64 {
    f * unet_fraction / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SavingsModel {
    pub unet_fraction: f64,
}

impl SavingsModel {
    pub fn from_cost(cost: &CostModel) -> Self {
        Self {
            unet_fraction: cost.unet_fraction(),
        }
    }

    pub fn predicted_saving(&self, f: f64) -> f64 {
        predicted_saving(f, self.unet_fraction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnetFit {
    /// Fitted fraction, clamped to [0, 1].
    pub u: f64,
    pub raw_u: f64,
    pub clamped: bool,
    pub max_residual: f64,
}

/// Least-squares fit of `saving = f·u/2` through the origin.
pub fn fit_unet_fraction(rows: &[(f64, f64)]) -> Result<UnetFit> {
    let sum_ff: f64 = rows.iter().map(|(f, _)| f * f).sum();
    if !(sum_ff > 0.0) {
        return Err(Error::DegenerateFit);
    }
    let sum_fs: f64 = rows.iter().map(|(f, s)| f * s).sum();
    let raw_u = 2.0 * sum_fs / sum_ff;
    let u = raw_u.clamp(0.0, 1.0);
    let max_residual = rows
        .iter()
        .map(|(f, s)| (s - predicted_saving(*f, u)).abs())
        .fold(0.0, f64::max);
    Ok(UnetFit {
        u,
        raw_u,
        clamped: u != raw_u,
        max_residual,
    })
}
