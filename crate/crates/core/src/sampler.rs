//! Reverse denoising loop with selective guidance, NFE accounting and
//! virtual-clock timing.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{check_dim, Result};
use crate::guidance::{cfg_combine, selective_eps, GuidanceSpec};
use crate::oracle::{simulated_eval, CostModel, MixtureModel, NoisePrediction, VirtualClock};
use crate::rng::CounterRng;
use crate::schedule::ScheduleParams;

/// Draw slot of the initial state `x_N` (at iteration address `N`).
pub const INIT_SLOT: u32 = 0;
/// Draw slot of the per-iteration ancestral noise (at iteration address `i`).
pub const NOISE_SLOT: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[default]
    Ddpm,
    Ddim,
}

impl std::str::FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ddpm" => Ok(Self::Ddpm),
            "ddim" => Ok(Self::Ddim),
            other => Err(format!("unknown sampler `{other}` (expected ddpm|ddim)")),
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ddpm => "ddpm",
            Self::Ddim => "ddim",
        })
    }
}

/// Everything one sampling run depends on. `condition: None` samples the
/// unconditional mixture (both branches see the full mixture).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub schedule: ScheduleParams,
    pub guidance: GuidanceSpec,
    pub mixture: MixtureModel,
    pub condition: Option<u32>,
    pub sampler_kind: SamplerKind,
    pub seed: u64,
    pub cost: CostModel,
    pub record_trajectory: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleParams::default(),
            guidance: GuidanceSpec::default(),
            mixture: MixtureModel::default(),
            condition: Some(0),
            sampler_kind: SamplerKind::Ddpm,
            seed: 0,
            cost: CostModel::default(),
            record_trajectory: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.mixture.check_condition(self.condition)?;
        // re-run the constructors' checks on the plain-data pieces
        GuidanceSpec::new(
            self.guidance.scale(),
            self.guidance.skip_start_frac(),
            self.guidance.skip_end_frac(),
        )?;
        CostModel::new(self.cost.eval_cost, self.cost.iter_overhead)?;
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_guidance(&self, guidance: GuidanceSpec) -> Self {
        Self {
            guidance,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    /// `x_N, x_{N-1}, …, x_0` when recording is on.
    pub states: Option<Vec<Vec<f64>>>,
    pub endpoint: Vec<f64>,
    pub skip_flags: Vec<bool>,
    pub nfe_total: usize,
    pub simulated_time: f64,
    /// Informational only; never compared or serialized.
    pub wall_time: f64,
}

impl Trajectory {
    pub fn skipped_iters(&self) -> usize {
        self.skip_flags.iter().filter(|s| **s).count()
    }
}

/// DDPM ancestral update with `sigma_t = sqrt(beta_t)` and no noise at `t = 1`.
pub fn reverse_step_ddpm(
    x_t: &[f64],
    eps_hat: &[f64],
    t: usize,
    schedule: &ScheduleParams,
    noise: &[f64],
) -> Result<Vec<f64>> {
    check_dim(x_t.len(), eps_hat.len())?;
    check_dim(x_t.len(), noise.len())?;
    let beta = schedule.beta(t)?;
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t)?.sqrt();
    let eps_coef = beta / (1.0 - schedule.alpha_bar(t)?).sqrt();
    let sigma = if t > 1 { beta.sqrt() } else { 0.0 };
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .zip(noise)
        .map(|((x, e), z)| {
            let mean = (x - eps_coef * e) * inv_sqrt_alpha;
            if t > 1 {
                mean + sigma * z
            } else {
                mean
            }
        })
        .collect())
}

/// Deterministic DDIM update (eta = 0).
pub fn reverse_step_ddim(
    x_t: &[f64],
    eps_hat: &[f64],
    t: usize,
    schedule: &ScheduleParams,
) -> Result<Vec<f64>> {
    check_dim(x_t.len(), eps_hat.len())?;
    let ab = schedule.alpha_bar(t)?;
    let ab_prev = schedule.alpha_bar(t - 1)?;
    let (sqrt_ab, sqrt_one_minus_ab) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (sqrt_ab_prev, sqrt_one_minus_ab_prev) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .map(|(x, e)| {
            let x0 = (x - sqrt_one_minus_ab * e) / sqrt_ab;
            sqrt_ab_prev * x0 + sqrt_one_minus_ab_prev * e
        })
        .collect())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Policy {
    Selective,
    PlainCfg,
}

/// Full sampling run under selective guidance.
pub fn run_sampling(config: &RunConfig) -> Result<Trajectory> {
    sample_loop(config, Policy::Selective)
}

/// Reference path: classic two-branch guidance at every iteration,
/// ignoring the skip window entirely.
pub fn run_sampling_cfg(config: &RunConfig) -> Result<Trajectory> {
    sample_loop(config, Policy::PlainCfg)
}

fn sample_loop(config: &RunConfig, policy: Policy) -> Result<Trajectory> {
    config.validate()?;
    let started = Instant::now();
    let schedule = &config.schedule;
    let mixture = &config.mixture;
    let n = schedule.num_steps();
    let d = mixture.dim();
    let rng = CounterRng::new(config.seed);

    let mut x = rng.normals(n as u64, INIT_SLOT, d);
    let mut states = config.record_trajectory.then(|| {
        let mut v = Vec::with_capacity(n + 1);
        v.push(x.clone());
        v
    });
    let mut clock = VirtualClock::new();
    let mut skip_flags = Vec::with_capacity(n);
    let mut nfe_total = 0usize;

    for i in 0..n {
        let t = n - i;
        let ab = schedule.alpha_bar(t)?;
        let cond = |x: &[f64]| mixture.epsilon(x, ab, config.condition);
        let uncond = |x: &[f64]| mixture.epsilon(x, ab, None);
        let pred = simulated_eval(
            || match policy {
                Policy::Selective => selective_eps(cond, uncond, &x, i, n, &config.guidance),
                Policy::PlainCfg => Ok(NoisePrediction {
                    epsilon: cfg_combine(&uncond(&x)?, &cond(&x)?, config.guidance.scale())?,
                    nfe: 2,
                    simulated_cost: 0.0,
                }),
            },
            &config.cost,
            &mut clock,
        )?;
        clock.advance(config.cost.iter_overhead);
        skip_flags.push(pred.nfe == 1);
        nfe_total += pred.nfe as usize;

        x = match config.sampler_kind {
            SamplerKind::Ddpm => {
                let noise = if t > 1 {
                    rng.normals(i as u64, NOISE_SLOT, d)
                } else {
                    vec![0.0; d]
                };
                reverse_step_ddpm(&x, &pred.epsilon, t, schedule, &noise)?
            }
            SamplerKind::Ddim => reverse_step_ddim(&x, &pred.epsilon, t, schedule)?,
        };
        if let Some(states) = states.as_mut() {
            states.push(x.clone());
        }
    }

    Ok(Trajectory {
        seed: config.seed,
        states,
        endpoint: x,
        skip_flags,
        nfe_total,
        simulated_time: clock.elapsed(),
        wall_time: started.elapsed().as_secs_f64(),
    })
}
