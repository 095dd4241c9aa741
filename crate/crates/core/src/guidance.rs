//! Classifier-free guidance and the selective-guidance skip window.
//!
//! Inside the skip window an iteration evaluates only the conditional
//! branch and uses it directly, which is what guidance with `s = 1` yields.
//! Outside it the usual two-branch combination applies.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::oracle::NoisePrediction;

pub const DEFAULT_SCALE: f64 = 7.5;

/// `eps_uncond + scale · (eps_cond - eps_uncond)`, component-wise.
///
/// At `scale == 1` the conditional term is returned as-is so that a skipped
/// iteration and a unit-scale combination agree bit for bit.
pub fn cfg_combine(eps_uncond: &[f64], eps_cond: &[f64], scale: f64) -> Result<Vec<f64>> {
    check_dim(eps_uncond.len(), eps_cond.len())?;
    if scale == 1.0 {
        return Ok(eps_cond.to_vec());
    }
    Ok(eps_uncond
        .iter()
        .zip(eps_cond)
        .map(|(u, c)| u + scale * (c - u))
        .collect())
}

/// Guidance scale plus the fractional window of loop iterations whose
/// unconditional evaluation is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSpec {
    scale: f64,
    skip_start_frac: f64,
    skip_end_frac: f64,
}

/// A skip window resolved to loop-iteration indices `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkipWindow {
    pub start: usize,
    pub end: usize,
}

impl SkipWindow {
    pub fn contains(&self, iter_index: usize) -> bool {
        self.start <= iter_index && iter_index < self.end
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl GuidanceSpec {
    pub fn new(scale: f64, skip_start_frac: f64, skip_end_frac: f64) -> Result<Self> {
        if !scale.is_finite() || scale < 0.0 {
            return Err(Error::InvalidGuidance(format!(
                "scale must be finite and >= 0, got {scale}"
            )));
        }
        let in_unit = |f: f64| (0.0..=1.0).contains(&f);
        if !in_unit(skip_start_frac) || !in_unit(skip_end_frac) || skip_start_frac > skip_end_frac {
            return Err(Error::InvalidGuidance(format!(
                "skip window ({skip_start_frac}, {skip_end_frac}) must satisfy 0 <= start <= end <= 1"
            )));
        }
        Ok(Self {
            scale,
            skip_start_frac,
            skip_end_frac,
        })
    }

    pub fn no_skip(scale: f64) -> Result<Self> {
        Self::new(scale, 0.0, 0.0)
    }

    /// Skip the final `frac` of the loop, i.e. the window `(1 - frac, 1)`.
    pub fn skip_last(scale: f64, frac: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::InvalidGuidance(format!(
                "skip-last fraction {frac} outside [0, 1]"
            )));
        }
        if frac == 0.0 {
            return Self::no_skip(scale);
        }
        Self::new(scale, 1.0 - frac, 1.0)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn skip_start_frac(&self) -> f64 {
        self.skip_start_frac
    }

    pub fn skip_end_frac(&self) -> f64 {
        self.skip_end_frac
    }

    pub fn with_scale(self, scale: f64) -> Result<Self> {
        Self::new(scale, self.skip_start_frac, self.skip_end_frac)
    }

    /// Iteration `i` is skipped iff its span `[i/N, (i+1)/N)` lies inside
    /// the window: start rounds up, end rounds down.
    pub fn window(&self, total_iters: usize) -> SkipWindow {
        let start = frac_to_index(self.skip_start_frac, total_iters, true);
        let end = frac_to_index(self.skip_end_frac, total_iters, false);
        SkipWindow {
            start,
            end: end.max(start),
        }
    }
}

impl Default for GuidanceSpec {
    fn default() -> Self {
        Self {
            scale: DEFAULT_SCALE,
            skip_start_frac: 0.0,
            skip_end_frac: 0.0,
        }
    }
}

// Products within 1e-9 of an integer are snapped to it so that, e.g.,
// (1 - 0.3) * 50 = 34.999999999999993 resolves to 35.
pub(crate) fn frac_to_index(frac: f64, n: usize, round_up: bool) -> usize {
    let x = frac * n as f64;
    let nearest = x.round();
    let idx = if (x - nearest).abs() <= 1e-9 * (n.max(1) as f64) {
        nearest
    } else if round_up {
        x.ceil()
    } else {
        x.floor()
    };
    (idx.max(0.0) as usize).min(n)
}

pub fn in_skip_window(iter_index: usize, total_iters: usize, spec: &GuidanceSpec) -> bool {
    spec.window(total_iters).contains(iter_index)
}

/// Model evaluations a full loop of `total_iters` iterations costs under `spec`.
pub fn total_nfe(total_iters: usize, spec: &GuidanceSpec) -> usize {
    2 * total_iters - spec.window(total_iters).len()
}

/// Noise prediction for one loop iteration under selective guidance.
///
/// The evaluators receive `x`; the caller binds the step `t` and any
/// condition into them.
pub fn selective_eps<C, U>(
    cond_eval: C,
    uncond_eval: U,
    x: &[f64],
    iter_index: usize,
    total_iters: usize,
    spec: &GuidanceSpec,
) -> Result<NoisePrediction>
where
    C: FnOnce(&[f64]) -> Result<Vec<f64>>,
    U: FnOnce(&[f64]) -> Result<Vec<f64>>,
{
    if in_skip_window(iter_index, total_iters, spec) {
        return Ok(NoisePrediction::single(cond_eval(x)?));
    }
    let eps_uncond = uncond_eval(x)?;
    let eps_cond = cond_eval(x)?;
    Ok(NoisePrediction {
        epsilon: cfg_combine(&eps_uncond, &eps_cond, spec.scale())?,
        nfe: 2,
        simulated_cost: 0.0,
    })
}
