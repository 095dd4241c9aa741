//! Exact noise predictions for a labeled Gaussian mixture, plus the
//! cost-charging wrapper used to emulate an expensive denoiser.
//!
//! Under the VP forward process the time-`t` marginal of component `k` is
//! `N(sqrt(ab)·mean_k, ab·var_k + (1 - ab))`, so the score of the marginal
//! mixture is available in closed form and the minimum-MSE noise prediction
//! is `-sqrt(1 - ab) · score`.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use crate::error::{check_dim, Error, Result};
use crate::schedule::ScheduleParams;

pub const DEFAULT_EVAL_COST: f64 = 0.0811;
pub const DEFAULT_ITER_OVERHEAD: f64 = 0.0366;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal covariance.
    pub var: Vec<f64>,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    dim: usize,
    components: Vec<Component>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureFile {
    components: Vec<Component>,
}

impl MixtureModel {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidMixture("no components".into()))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::InvalidMixture("dimension must be >= 1".into()));
        }
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != dim || c.var.len() != dim {
                return Err(Error::InvalidMixture(format!(
                    "component {i}: mean/var length differs from dimension {dim}"
                )));
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::InvalidMixture(format!(
                    "component {i}: weight must be positive"
                )));
            }
            if c.var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidMixture(format!(
                    "component {i}: variances must be strictly positive"
                )));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::InvalidMixture(format!(
                    "component {i}: non-finite mean"
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMixture(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { dim, components })
    }

    /// Two labels on a radius-4 circle in 2-D, alternating so that each
    /// label owns two opposite modes. Unit variances, equal weights.
    pub fn desk_default() -> Self {
        let components = (0..4)
            .map(|k| {
                let angle = k as f64 * TAU / 4.0;
                Component {
                    weight: 0.25,
                    mean: vec![4.0 * angle.cos(), 4.0 * angle.sin()],
                    var: vec![1.0, 1.0],
                    label: (k % 2) as u32,
                }
            })
            .collect();
        Self::new(components).expect("desk mixture is valid")
    }

    /// Parse a mixture definition (`[[components]]` tables).
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        let file: MixtureFile = toml::from_str(text).map_err(|e| e.to_string())?;
        Self::new(file.components).map_err(|e| e.to_string())
    }

    pub fn from_file(path: &Path) -> std::result::Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn labels(&self) -> BTreeSet<u32> {
        self.components.iter().map(|c| c.label).collect()
    }

    /// Components visible to `condition`, `None` meaning the full mixture.
    fn restrict(&self, condition: Option<u32>) -> Result<Vec<&Component>> {
        let selected: Vec<&Component> = self
            .components
            .iter()
            .filter(|c| condition.is_none_or(|y| c.label == y))
            .collect();
        match (selected.is_empty(), condition) {
            (true, Some(y)) => Err(Error::UnknownLabel(y)),
            _ => Ok(selected),
        }
    }

    pub fn check_condition(&self, condition: Option<u32>) -> Result<()> {
        self.restrict(condition).map(|_| ())
    }

    /// Exact noise prediction at signal level `alpha_bar`.
    pub fn epsilon(&self, x: &[f64], alpha_bar: f64, condition: Option<u32>) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let comps = self.restrict(condition)?;
        let signal = alpha_bar.sqrt();
        let noise_var = 1.0 - alpha_bar;

        // per-component log weight + log density, and the residual/var terms
        let mut log_terms = Vec::with_capacity(comps.len());
        let mut pulls = Vec::with_capacity(comps.len());
        for c in &comps {
            let mut lp = c.weight.ln();
            let mut pull = Vec::with_capacity(self.dim);
            for j in 0..self.dim {
                let v = alpha_bar * c.var[j] + noise_var;
                let r = x[j] - signal * c.mean[j];
                lp -= 0.5 * ((2.0 * PI * v).ln() + r * r / v);
                pull.push(r / v);
            }
            log_terms.push(lp);
            pulls.push(pull);
        }
        let resp = softmax(&log_terms);

        let scale = noise_var.sqrt();
        let mut eps = vec![0.0; self.dim];
        for (r, pull) in resp.iter().zip(&pulls) {
            for (e, p) in eps.iter_mut().zip(pull) {
                *e += r * p;
            }
        }
        eps.iter_mut().for_each(|e| *e *= scale);
        Ok(eps)
    }

    /// Log density of the time-marginal at signal level `alpha_bar`.
    pub fn log_density(&self, x: &[f64], alpha_bar: f64, condition: Option<u32>) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let comps = self.restrict(condition)?;
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        let signal = alpha_bar.sqrt();
        let terms: Vec<f64> = comps
            .iter()
            .map(|c| {
                let mut lp = (c.weight / total).ln();
                for j in 0..self.dim {
                    let v = alpha_bar * c.var[j] + 1.0 - alpha_bar;
                    let r = x[j] - signal * c.mean[j];
                    lp -= 0.5 * ((2.0 * PI * v).ln() + r * r / v);
                }
                lp
            })
            .collect();
        Ok(log_sum_exp(&terms))
    }

    /// Draw `n` points directly from the (restricted) data distribution.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
        condition: Option<u32>,
    ) -> Result<Vec<Vec<f64>>> {
        let comps = self.restrict(condition)?;
        let picker = WeightedIndex::new(comps.iter().map(|c| c.weight))
            .map_err(|e| Error::InvalidMixture(e.to_string()))?;
        Ok((0..n)
            .map(|_| {
                let c = comps[picker.sample(rng)];
                c.mean
                    .iter()
                    .zip(&c.var)
                    .map(|(m, v)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + v.sqrt() * z
                    })
                    .collect()
            })
            .collect())
    }
}

impl Default for MixtureModel {
    fn default() -> Self {
        Self::desk_default()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

/// Exact noise prediction at schedule step `t`.
pub fn gm_epsilon(
    model: &MixtureModel,
    x: &[f64],
    t: usize,
    schedule: &ScheduleParams,
    condition: Option<u32>,
) -> Result<Vec<f64>> {
    schedule.beta(t)?;
    model.epsilon(x, schedule.alpha_bar(t)?, condition)
}

/// Simulated seconds per model evaluation and per-iteration bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub eval_cost: f64,
    pub iter_overhead: f64,
}

impl CostModel {
    pub fn new(eval_cost: f64, iter_overhead: f64) -> Result<Self> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(eval_cost) || !ok(iter_overhead) {
            return Err(Error::InvalidCost(format!(
                "costs must be finite and non-negative, got eval_cost={eval_cost}, iter_overhead={iter_overhead}"
            )));
        }
        Ok(Self {
            eval_cost,
            iter_overhead,
        })
    }

    /// Share of a full (two-evaluation) iteration spent in the model.
    pub fn unet_fraction(&self) -> f64 {
        let full = 2.0 * self.eval_cost + self.iter_overhead;
        if full == 0.0 {
            0.0
        } else {
            2.0 * self.eval_cost / full
        }
    }
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            eval_cost: DEFAULT_EVAL_COST,
            iter_overhead: DEFAULT_ITER_OVERHEAD,
        }
    }
}

/// Deterministic accumulator of simulated seconds. One per run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VirtualClock {
    elapsed: f64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&mut self, seconds: f64) {
        self.elapsed += seconds;
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePrediction {
    pub epsilon: Vec<f64>,
    pub nfe: u32,
    pub simulated_cost: f64,
}

impl NoisePrediction {
    /// A single raw model evaluation that has not been charged yet.
    pub fn single(epsilon: Vec<f64>) -> Self {
        Self {
            epsilon,
            nfe: 1,
            simulated_cost: 0.0,
        }
    }
}

/// Run `inner` and charge `eval_cost` per evaluation it reports.
pub fn simulated_eval<F>(inner: F, cost: &CostModel, clock: &mut VirtualClock) -> Result<NoisePrediction>
where
    F: FnOnce() -> Result<NoisePrediction>,
{
    let mut pred = inner()?;
    pred.simulated_cost = cost.eval_cost * pred.nfe as f64;
    clock.advance(pred.simulated_cost);
    Ok(pred)
}
