//! Discrete variance-preserving noise schedules.
//!
//! Steps are indexed `t = 1..=N`, `t = N` being the noisiest state. The
//! denoising loop visits iteration `i = 0..N` at `t = N - i`.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

pub const DEFAULT_NUM_STEPS: usize = 50;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.02;

const COSINE_OFFSET: f64 = 0.008;
const COSINE_MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Linear,
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(format!("unknown schedule kind `{other}` (expected linear|cosine)")),
        }
    }
}

/// Betas, alphas and cumulative alpha-bars for `N` steps. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleParams {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl ScheduleParams {
    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::StepOutOfRange {
                t,
                num_steps: self.num_steps(),
            });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.index(t)?])
    }

    /// Cumulative product up to `t`; `alpha_bar(0)` is defined as 1.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        Ok(self.alpha_bars[self.index(t)?])
    }

    fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidScheduleConfig(format!(
                "beta {b} outside (0, 1)"
            )));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars: Vec<f64> = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let last = *alpha_bars.last().expect("non-empty");
        if !(last > 0.0) {
            return Err(Error::InvalidScheduleConfig(
                "alpha_bar underflows to zero".into(),
            ));
        }
        if alpha_bars.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidScheduleConfig(
                "alpha_bar is not strictly decreasing".into(),
            ));
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }
}

impl Default for ScheduleParams {
    fn default() -> Self {
        build_schedule(
            ScheduleKind::Linear,
            DEFAULT_NUM_STEPS,
            DEFAULT_BETA_MIN,
            DEFAULT_BETA_MAX,
        )
        .expect("default schedule is valid")
    }
}

/// Build a schedule. For `Cosine` the beta bounds are ignored.
pub fn build_schedule(
    kind: ScheduleKind,
    num_steps: usize,
    beta_min: f64,
    beta_max: f64,
) -> Result<ScheduleParams> {
    if num_steps == 0 {
        return Err(Error::InvalidScheduleConfig("num_steps must be >= 1".into()));
    }
    let betas = match kind {
        ScheduleKind::Linear => {
            if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
                return Err(Error::InvalidScheduleConfig(format!(
                    "linear schedule needs 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
                )));
            }
            linear_betas(num_steps, beta_min, beta_max)
        }
        ScheduleKind::Cosine => cosine_betas(num_steps),
    };
    ScheduleParams::from_betas(betas)
}

fn linear_betas(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    let mut betas: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    // pin the endpoint; lo + step*(n-1) can miss hi by an ulp
    betas[n - 1] = hi;
    betas
}

fn cosine_betas(n: usize) -> Vec<f64> {
    let f = |t: usize| {
        let u = (t as f64 / n as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
        (u * FRAC_PI_2).cos().powi(2)
    };
    (1..=n)
        .map(|t| (1.0 - f(t) / f(t - 1)).min(COSINE_MAX_BETA))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_alpha_bars(betas: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for t in 0..betas.len() {
            let mut p = 1.0;
            for b in &betas[..=t] {
                p *= 1.0 - b;
            }
            out.push(p);
        }
        out
    }

    #[test]
    fn single_step() {
        let s = build_schedule(ScheduleKind::Linear, 1, 1e-4, 0.02).unwrap();
        assert_eq!(s.betas(), &[1e-4]);
        assert_eq!(s.alpha_bars(), &[1.0 - 1e-4]);
    }

    #[test]
    fn two_steps_hand_product() {
        let s = build_schedule(ScheduleKind::Linear, 2, 1e-4, 0.02).unwrap();
        assert_eq!(s.betas(), &[1e-4, 0.02]);
        assert!((s.alpha_bars()[1] - 0.979902).abs() < 1e-12);
    }

    #[test]
    fn default_fifty_steps() {
        let s = ScheduleParams::default();
        assert_eq!(s.num_steps(), 50);
        let ab = s.alpha_bars();
        assert!(ab.windows(2).all(|w| w[1] < w[0]));
        assert!(ab[49] > 0.0 && ab[49] < 1.0);
        for (got, want) in ab.iter().zip(naive_alpha_bars(s.betas())) {
            assert!(((got - want) / want).abs() <= 1e-12);
        }
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_configs() {
        for (n, lo, hi) in [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)] {
            assert!(matches!(
                build_schedule(ScheduleKind::Linear, n, lo, hi),
                Err(Error::InvalidScheduleConfig(_))
            ));
        }
        assert!(build_schedule(ScheduleKind::Cosine, 0, 0.0, 0.0).is_err());
    }

    #[test]
    fn step_index_bounds() {
        let s = ScheduleParams::default();
        assert!(s.beta(0).is_err());
        assert!(s.beta(51).is_err());
        assert!(s.beta(50).is_ok());
    }

    #[test]
    fn cosine_clipped_and_monotone() {
        let s = build_schedule(ScheduleKind::Cosine, 50, 0.0, 0.0).unwrap();
        assert!(s.betas().iter().all(|b| *b > 0.0 && *b <= 0.999));
        assert_eq!(s.betas()[49], 0.999);
    }

    proptest! {
        #[test]
        fn invariants_hold(
            n in 1usize..400,
            lo in 1e-5f64..0.05,
            span in 0.0f64..0.5,
            cosine in any::<bool>(),
        ) {
            let kind = if cosine { ScheduleKind::Cosine } else { ScheduleKind::Linear };
            let s = build_schedule(kind, n, lo, lo + span).unwrap();
            let ab = s.alpha_bars();
            prop_assert!(ab.windows(2).all(|w| w[1] < w[0]));
            prop_assert!(ab[n - 1] > 0.0 && ab[0] < 1.0);
            for (got, want) in ab.iter().zip(naive_alpha_bars(s.betas())) {
                prop_assert!(((got - want) / want).abs() <= 1e-12);
            }
            if !cosine {
                prop_assert_eq!(s.betas()[0], lo);
            }
            if !cosine && n > 1 {
                prop_assert_eq!(s.betas()[n - 1], lo + span);
            }
        }
    }
}
