//! Window-placement sweep, savings benchmark and guidance-scale retuning.
//!
//! Every experiment is a pure function of its config and seed range. Runs
//! are fanned out over rayon; results come back in seed order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{frac_to_index, GuidanceSpec};
use crate::metrics::{endpoint_mse, fit_unet_fraction, predicted_saving, sliced_w2, SlicedReference, UnetFit};
use crate::sampler::{run_sampling, RunConfig, Trajectory};
use crate::rng::CounterRng;

/// Size of the direct-draw reference set used for sliced distances.
pub const REFERENCE_DRAWS: usize = 4000;
pub const PROJECTIONS: usize = 64;
// Counter address of the reference draws; far from any loop iteration.
const REFERENCE_ITERATION: u64 = u64::MAX;
const REFERENCE_SLOT: u32 = 1;

/// Seeds `master, master + 1, …`.
pub fn run_seeds(master_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| master_seed.wrapping_add(i)).collect()
}

/// Run `config` once per seed, in parallel, preserving seed order.
pub fn run_batch(config: &RunConfig, seeds: &[u64]) -> Result<Vec<Trajectory>> {
    seeds
        .par_iter()
        .map(|s| run_sampling(&config.with_seed(*s)))
        .collect()
}

fn endpoints(runs: &[Trajectory]) -> Vec<(u64, Vec<f64>)> {
    runs.iter().map(|r| (r.seed, r.endpoint.clone())).collect()
}

fn endpoint_points(runs: &[Trajectory]) -> Vec<Vec<f64>> {
    runs.iter().map(|r| r.endpoint.clone()).collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// Direct draws from the distribution the runs are conditioned on.
pub fn reference_set(config: &RunConfig) -> Result<Vec<Vec<f64>>> {
    let mut stream = CounterRng::new(config.seed).stream(REFERENCE_ITERATION, REFERENCE_SLOT);
    config
        .mixture
        .sample(REFERENCE_DRAWS, &mut stream, config.condition)
}

fn require_seeds(n_seeds: usize) -> Result<()> {
    if n_seeds == 0 {
        return Err(Error::InvalidExperiment("n_seeds must be >= 1".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPosition {
    pub start_frac: f64,
    pub end_frac: f64,
    pub skipped_iters: usize,
    pub nfe: usize,
    pub simulated_time: f64,
    /// Mean same-seed endpoint MSE against the unskipped baseline.
    pub endpoint_mse: f64,
    /// Sliced W2 of the endpoint set against direct draws of the target.
    pub sliced_w2: f64,
    /// Sliced W2 of the endpoint set against the baseline endpoint set.
    pub sliced_w2_baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub num_steps: usize,
    pub width_frac: f64,
    pub window_iters: usize,
    pub n_seeds: usize,
    pub baseline_nfe: usize,
    pub baseline_sliced_w2: f64,
    pub positions: Vec<SweepPosition>,
}

/// Slide an equal-width skip window from the start to the end of the loop
/// and measure how far each placement drifts from the unskipped baseline.
pub fn window_sweep(
    base: &RunConfig,
    width_frac: f64,
    n_positions: usize,
    n_seeds: usize,
) -> Result<SweepResult> {
    require_seeds(n_seeds)?;
    if n_positions == 0 {
        return Err(Error::InvalidSweep("need at least one position".into()));
    }
    if !(0.0..=1.0).contains(&width_frac) || width_frac * n_positions as f64 > 1.0 + 1e-12 {
        return Err(Error::InvalidSweep(format!(
            "{n_positions} windows of width {width_frac} do not fit in [0, 1]"
        )));
    }
    let n = base.schedule.num_steps();
    let width = frac_to_index(width_frac, n, false);
    // starts resolved in index space so every window spans exactly `width` iterations
    let starts: Vec<usize> = if n_positions == 1 {
        vec![0]
    } else {
        (0..n_positions)
            .map(|p| ((p * (n - width)) as f64 / (n_positions - 1) as f64).round() as usize)
            .collect()
    };

    let scale = base.guidance.scale();
    let seeds = run_seeds(base.seed, n_seeds);
    let baseline = run_batch(&base.with_guidance(GuidanceSpec::no_skip(scale)?), &seeds)?;
    let baseline_ends = endpoints(&baseline);
    let baseline_points = endpoint_points(&baseline);
    let reference = SlicedReference::new(&reference_set(base)?, PROJECTIONS, base.seed)?;

    let positions = starts
        .iter()
        .map(|&start| {
            let (start_frac, end_frac) = (start as f64 / n as f64, (start + width) as f64 / n as f64);
            let spec = GuidanceSpec::new(scale, start_frac, end_frac)?;
            let runs = run_batch(&base.with_guidance(spec), &seeds)?;
            let points = endpoint_points(&runs);
            Ok(SweepPosition {
                start_frac,
                end_frac,
                skipped_iters: runs[0].skipped_iters(),
                nfe: runs[0].nfe_total,
                simulated_time: mean(runs.iter().map(|r| r.simulated_time)),
                endpoint_mse: endpoint_mse(&baseline_ends, &endpoints(&runs))?,
                sliced_w2: reference.distance(&points)?,
                sliced_w2_baseline: sliced_w2(&points, &baseline_points, PROJECTIONS, base.seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SweepResult {
        num_steps: n,
        width_frac,
        window_iters: width,
        n_seeds,
        baseline_nfe: baseline[0].nfe_total,
        baseline_sliced_w2: reference.distance(&baseline_points)?,
        positions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub f: f64,
    pub f_effective: f64,
    pub skipped_iters: usize,
    pub nfe: usize,
    pub simulated_time: f64,
    pub saving: f64,
    pub predicted_saving: f64,
    pub endpoint_mse: f64,
    pub sliced_w2: f64,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub num_steps: usize,
    pub n_seeds: usize,
    pub baseline_time: f64,
    /// `2·eval_cost / (2·eval_cost + iter_overhead)` of the configured cost model.
    pub cost_unet_fraction: f64,
    /// Fit over the rows with f > 0; absent when there are none.
    pub fit: Option<UnetFit>,
    pub rows: Vec<BenchRow>,
}

/// Per-image simulated time and saving for each "skip the last f" setting.
/// `fractions` must include 0, the baseline row.
pub fn bench(base: &RunConfig, fractions: &[f64], n_seeds: usize, warmup: usize) -> Result<BenchResult> {
    require_seeds(n_seeds)?;
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::InvalidExperiment("fractions must lie in [0, 1]".into()));
    }
    if !fractions.contains(&0.0) {
        return Err(Error::InvalidExperiment("fractions must include 0 (baseline)".into()));
    }
    let mut fractions = fractions.to_vec();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();

    let n = base.schedule.num_steps();
    let scale = base.guidance.scale();
    let seeds = run_seeds(base.seed, n_seeds);
    let baseline_cfg = base.with_guidance(GuidanceSpec::no_skip(scale)?);
    for w in 0..warmup {
        run_sampling(&baseline_cfg.with_seed(base.seed.wrapping_sub(1 + w as u64)))?;
    }
    let baseline = run_batch(&baseline_cfg, &seeds)?;
    let baseline_time = mean(baseline.iter().map(|r| r.simulated_time));
    let baseline_ends = endpoints(&baseline);
    let reference = SlicedReference::new(&reference_set(base)?, PROJECTIONS, base.seed)?;
    let u_cost = base.cost.unet_fraction();

    let rows = fractions
        .iter()
        .map(|&f| {
            let runs = if f == 0.0 {
                baseline.clone()
            } else {
                run_batch(&base.with_guidance(GuidanceSpec::skip_last(scale, f)?), &seeds)?
            };
            let simulated_time = mean(runs.iter().map(|r| r.simulated_time));
            let skipped = runs[0].skipped_iters();
            let f_effective = skipped as f64 / n as f64;
            Ok(BenchRow {
                f,
                f_effective,
                skipped_iters: skipped,
                nfe: runs[0].nfe_total,
                simulated_time,
                saving: if f == 0.0 { 0.0 } else { 1.0 - simulated_time / baseline_time },
                predicted_saving: predicted_saving(f_effective, u_cost),
                endpoint_mse: endpoint_mse(&baseline_ends, &endpoints(&runs))?,
                sliced_w2: reference.distance(&endpoint_points(&runs))?,
                wall_time: mean(runs.iter().map(|r| r.wall_time)),
            })
        })
        .collect::<Result<Vec<BenchRow>>>()?;

    let fit_rows: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.f_effective > 0.0)
        .map(|r| (r.f_effective, r.saving))
        .collect();
    let fit = if fit_rows.is_empty() {
        None
    } else {
        Some(fit_unet_fraction(&fit_rows)?)
    };

    Ok(BenchResult {
        num_steps: n,
        n_seeds,
        baseline_time,
        cost_unet_fraction: u_cost,
        fit,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunePoint {
    pub scale: f64,
    pub endpoint_mse: f64,
    pub sliced_w2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub f: f64,
    pub baseline_scale: f64,
    pub n_seeds: usize,
    pub best_scale: f64,
    pub best_endpoint_mse: f64,
    pub curve: Vec<TunePoint>,
}

/// Scale values 7.5, 7.6, …, 12.0.
pub fn default_scale_grid() -> Vec<f64> {
    (75..=120).map(|k| k as f64 / 10.0).collect()
}

/// With the last `f` of the loop skipped, find the guidance scale whose
/// endpoints stay closest to the unskipped baseline at the base scale.
/// Ties go to the smaller scale.
pub fn gs_tune(base: &RunConfig, f: f64, scale_grid: &[f64], n_seeds: usize) -> Result<TuneResult> {
    require_seeds(n_seeds)?;
    if scale_grid.is_empty() {
        return Err(Error::InvalidExperiment("scale grid is empty".into()));
    }
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::InvalidExperiment(format!("tune fraction {f} outside (0, 1]")));
    }
    let baseline_scale = base.guidance.scale();
    let seeds = run_seeds(base.seed, n_seeds);
    let baseline = run_batch(&base.with_guidance(GuidanceSpec::no_skip(baseline_scale)?), &seeds)?;
    let baseline_ends = endpoints(&baseline);
    let reference = SlicedReference::new(&reference_set(base)?, PROJECTIONS, base.seed)?;

    let curve = scale_grid
        .iter()
        .map(|&scale| {
            let runs = run_batch(&base.with_guidance(GuidanceSpec::skip_last(scale, f)?), &seeds)?;
            Ok(TunePoint {
                scale,
                endpoint_mse: endpoint_mse(&baseline_ends, &endpoints(&runs))?,
                sliced_w2: reference.distance(&endpoint_points(&runs))?,
            })
        })
        .collect::<Result<Vec<TunePoint>>>()?;

    let best = curve
        .iter()
        .min_by(|a, b| {
            a.endpoint_mse
                .total_cmp(&b.endpoint_mse)
                .then(a.scale.total_cmp(&b.scale))
        })
        .expect("non-empty grid");

    Ok(TuneResult {
        f,
        baseline_scale,
        n_seeds,
        best_scale: best.scale,
        best_endpoint_mse: best.endpoint_mse,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_offset_from_master() {
        assert_eq!(run_seeds(10, 3), vec![10, 11, 12]);
        assert_eq!(run_seeds(u64::MAX, 2), vec![u64::MAX, 0]);
    }

    #[test]
    fn batch_matches_serial_runs() {
        let cfg = RunConfig::default();
        let seeds = run_seeds(3, 8);
        let batch = run_batch(&cfg, &seeds).unwrap();
        for (tr, s) in batch.iter().zip(&seeds) {
            assert_eq!(tr.seed, *s);
            assert_eq!(tr.endpoint, run_sampling(&cfg.with_seed(*s)).unwrap().endpoint);
        }
    }

    #[test]
    fn sweep_rejects_overflowing_positions() {
        let cfg = RunConfig::default();
        assert!(matches!(window_sweep(&cfg, 0.3, 4, 2), Err(Error::InvalidSweep(_))));
        assert!(matches!(window_sweep(&cfg, 0.25, 0, 2), Err(Error::InvalidSweep(_))));
        assert!(window_sweep(&cfg, 0.25, 4, 0).is_err());
    }

    #[test]
    fn zero_width_sweep_has_no_divergence() {
        let res = window_sweep(&RunConfig::default(), 0.0, 4, 5).unwrap();
        for p in &res.positions {
            assert_eq!(p.endpoint_mse, 0.0);
            assert_eq!(p.sliced_w2_baseline, 0.0);
            assert_eq!(p.sliced_w2, res.baseline_sliced_w2);
            assert_eq!(p.nfe, 100);
        }
    }

    #[test]
    fn quarter_sweep_positions() {
        let res = window_sweep(&RunConfig::default(), 0.25, 4, 3).unwrap();
        let spans: Vec<(f64, f64)> = res.positions.iter().map(|p| (p.start_frac, p.end_frac)).collect();
        assert_eq!(spans, vec![(0.0, 0.24), (0.26, 0.5), (0.5, 0.74), (0.76, 1.0)]);
        assert!(res.positions.iter().all(|p| p.nfe == 88 && p.skipped_iters == 12));
    }

    #[test]
    fn bench_requires_baseline_row() {
        let cfg = RunConfig::default();
        assert!(bench(&cfg, &[0.2], 2, 0).is_err());
        assert!(bench(&cfg, &[0.0, 1.5], 2, 0).is_err());
        let single = bench(&cfg, &[0.0], 2, 0).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert_eq!(single.rows[0].saving, 0.0);
        assert!(single.fit.is_none());
    }

    #[test]
    fn tune_validation_and_singleton() {
        let cfg = RunConfig::default();
        assert!(gs_tune(&cfg, 0.4, &[], 2).is_err());
        assert!(gs_tune(&cfg, 0.0, &[7.5], 2).is_err());
        let r = gs_tune(&cfg, 0.4, &[7.5], 3).unwrap();
        assert_eq!(r.best_scale, 7.5);
        assert_eq!(r.curve.len(), 1);
    }

    #[test]
    fn tune_ties_go_to_smaller_scale() {
        // a skip window covering every iteration makes the scale irrelevant
        let cfg = RunConfig::default();
        let r = gs_tune(&cfg, 1.0, &[9.0, 8.0, 10.0], 2).unwrap();
        assert_eq!(r.curve[0].endpoint_mse, r.curve[1].endpoint_mse);
        assert_eq!(r.best_scale, 8.0);
    }

    #[test]
    fn default_grid() {
        let g = default_scale_grid();
        assert_eq!(g.len(), 46);
        assert_eq!(g[0], 7.5);
        assert_eq!(g[21], 9.6);
        assert_eq!(*g.last().unwrap(), 12.0);
    }
}
