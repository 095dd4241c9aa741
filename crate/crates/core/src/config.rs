//! Structured run/experiment configuration (TOML) with flag overrides.
//!
//! Keys mirror the dotted names used in docs: `schedule.num_steps`,
//! `guidance.scale`, `run.seed`, `cost.eval_cost`, `experiment.seeds`, …
//! A config file must set `schedule.num_steps`; everything else defaults.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::experiments::default_scale_grid;
use crate::guidance::{GuidanceSpec, DEFAULT_SCALE};
use crate::oracle::{Component, CostModel, MixtureModel, DEFAULT_EVAL_COST, DEFAULT_ITER_OVERHEAD};
use crate::sampler::{RunConfig, SamplerKind};
use crate::schedule::{
    build_schedule, ScheduleKind, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_NUM_STEPS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("missing required key `{0}`")]
    MissingKey(String),

    #[error("invalid value for `{key}`: {message}")]
    InvalidValue { key: String, message: String },
}

fn invalid(key: &str, message: impl std::fmt::Display) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schedule: Option<RawSchedule>,
    guidance: Option<RawGuidance>,
    run: Option<RawRun>,
    cost: Option<RawCost>,
    mixture: Option<RawMixture>,
    experiment: Option<RawExperiment>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    kind: Option<ScheduleKind>,
    num_steps: Option<i64>,
    beta_min: Option<f64>,
    beta_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGuidance {
    scale: Option<f64>,
    skip_start_frac: Option<f64>,
    skip_end_frac: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    sampler: Option<SamplerKind>,
    seed: Option<u64>,
    condition: Option<Condition>,
    record_trajectory: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    eval_cost: Option<f64>,
    iter_overhead: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMixture {
    file: Option<PathBuf>,
    components: Option<Vec<Component>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    seeds: Option<usize>,
    warmup: Option<usize>,
    fractions: Option<Vec<f64>>,
    width_frac: Option<f64>,
    n_positions: Option<usize>,
    tune_fraction: Option<f64>,
    scale_grid: Option<Vec<f64>>,
}

/// `run.condition`: a label id, or the string `"none"` for unconditional runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Condition {
    Label(u32),
    Keyword(Unconditional),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unconditional {
    None,
}

impl Condition {
    pub fn label(self) -> Option<u32> {
        match self {
            Condition::Label(y) => Some(y),
            Condition::Keyword(_) => None,
        }
    }
}

/// Command-line overrides, applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub seeds: Option<usize>,
    pub skip_last: Option<f64>,
    pub scale: Option<f64>,
    pub sampler: Option<SamplerKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleSettings {
    pub kind: ScheduleKind,
    pub num_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuidanceSettings {
    pub scale: f64,
    pub skip_start_frac: f64,
    pub skip_end_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSettings {
    pub sampler: SamplerKind,
    pub seed: u64,
    pub condition: Condition,
    pub record_trajectory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureSettings {
    pub components: Vec<Component>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSettings {
    pub seeds: usize,
    pub warmup: usize,
    pub fractions: Vec<f64>,
    pub width_frac: f64,
    pub n_positions: usize,
    pub tune_fraction: f64,
    pub scale_grid: Vec<f64>,
}

/// Fully resolved configuration. Serializes back to TOML as the config echo.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub schedule: ScheduleSettings,
    pub guidance: GuidanceSettings,
    pub run: RunSettings,
    pub cost: CostModel,
    pub mixture: MixtureSettings,
    pub experiment: ExperimentSettings,
}

impl Default for Settings {
    fn default() -> Self {
        resolve(RawConfig::default(), None, &Overrides::default(), false)
            .expect("defaults are valid")
    }
}

impl Settings {
    /// Defaults plus overrides, no file.
    pub fn from_overrides(overrides: &Overrides) -> Result<Self, ConfigError> {
        resolve(RawConfig::default(), None, overrides, false)
    }

    /// Parse `text`; relative paths (the mixture file) resolve against `base_dir`.
    pub fn from_toml_str(
        text: &str,
        base_dir: Option<&Path>,
        overrides: &Overrides,
    ) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        resolve(raw, base_dir, overrides, true)
    }

    pub fn from_file(path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text, path.parent(), overrides).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn echo(&self) -> String {
        toml::to_string(self).expect("settings serialize to TOML")
    }

    pub fn run_config(&self) -> Result<RunConfig, ConfigError> {
        let s = &self.schedule;
        let schedule = build_schedule(s.kind, s.num_steps, s.beta_min, s.beta_max)
            .map_err(|e| invalid("schedule", e))?;
        let g = &self.guidance;
        let guidance = GuidanceSpec::new(g.scale, g.skip_start_frac, g.skip_end_frac)
            .map_err(|e| invalid("guidance", e))?;
        let cost = CostModel::new(self.cost.eval_cost, self.cost.iter_overhead)
            .map_err(|e| invalid("cost", e))?;
        let mixture = MixtureModel::new(self.mixture.components.clone())
            .map_err(|e| invalid("mixture", e))?;
        let condition = self.run.condition.label();
        mixture
            .check_condition(condition)
            .map_err(|e| invalid("run.condition", e))?;
        Ok(RunConfig {
            schedule,
            guidance,
            mixture,
            condition,
            sampler_kind: self.run.sampler,
            seed: self.run.seed,
            cost,
            record_trajectory: self.run.record_trajectory,
        })
    }
}

fn resolve(
    raw: RawConfig,
    base_dir: Option<&Path>,
    ov: &Overrides,
    from_file: bool,
) -> Result<Settings, ConfigError> {
    let sched = raw.schedule.unwrap_or_default();
    let num_steps = match (ov.steps, sched.num_steps) {
        (Some(n), _) => n,
        (None, Some(n)) if n >= 1 => n as usize,
        (None, Some(n)) => return Err(invalid("schedule.num_steps", format!("{n} is not >= 1"))),
        (None, None) if from_file => return Err(ConfigError::MissingKey("schedule.num_steps".into())),
        (None, None) => DEFAULT_NUM_STEPS,
    };
    if num_steps == 0 {
        return Err(invalid("schedule.num_steps", "must be >= 1"));
    }
    let schedule = ScheduleSettings {
        kind: sched.kind.unwrap_or_default(),
        num_steps,
        beta_min: sched.beta_min.unwrap_or(DEFAULT_BETA_MIN),
        beta_max: sched.beta_max.unwrap_or(DEFAULT_BETA_MAX),
    };

    let g = raw.guidance.unwrap_or_default();
    let mut guidance = GuidanceSettings {
        scale: g.scale.unwrap_or(DEFAULT_SCALE),
        skip_start_frac: g.skip_start_frac.unwrap_or(0.0),
        skip_end_frac: g.skip_end_frac.unwrap_or(0.0),
    };
    if let Some(s) = ov.scale {
        guidance.scale = s;
    }
    if let Some(f) = ov.skip_last {
        let spec = GuidanceSpec::skip_last(guidance.scale, f).map_err(|e| invalid("--skip-last", e))?;
        guidance.skip_start_frac = spec.skip_start_frac();
        guidance.skip_end_frac = spec.skip_end_frac();
    }

    let r = raw.run.unwrap_or_default();
    let run = RunSettings {
        sampler: ov.sampler.or(r.sampler).unwrap_or_default(),
        seed: ov.seed.or(r.seed).unwrap_or(0),
        condition: r.condition.unwrap_or(Condition::Label(0)),
        record_trajectory: r.record_trajectory.unwrap_or(false),
    };

    let c = raw.cost.unwrap_or_default();
    let cost = CostModel {
        eval_cost: c.eval_cost.unwrap_or(DEFAULT_EVAL_COST),
        iter_overhead: c.iter_overhead.unwrap_or(DEFAULT_ITER_OVERHEAD),
    };

    let m = raw.mixture.unwrap_or_default();
    let components = match (m.file, m.components) {
        (Some(_), Some(_)) => {
            return Err(invalid("mixture", "set either `file` or `components`, not both"))
        }
        (Some(file), None) => {
            let path = match base_dir {
                Some(dir) if file.is_relative() => dir.join(file),
                _ => file,
            };
            MixtureModel::from_file(&path)
                .map_err(|e| invalid("mixture.file", e))?
                .components()
                .to_vec()
        }
        (None, Some(components)) => components,
        (None, None) => MixtureModel::desk_default().components().to_vec(),
    };

    let e = raw.experiment.unwrap_or_default();
    let experiment = ExperimentSettings {
        seeds: ov.seeds.or(e.seeds).unwrap_or(50),
        warmup: e.warmup.unwrap_or(10),
        fractions: e.fractions.unwrap_or_else(|| vec![0.0, 0.2, 0.3, 0.4, 0.5]),
        width_frac: e.width_frac.unwrap_or(0.25),
        n_positions: e.n_positions.unwrap_or(4),
        tune_fraction: e.tune_fraction.unwrap_or(0.4),
        scale_grid: e.scale_grid.unwrap_or_else(default_scale_grid),
    };
    if experiment.seeds == 0 {
        return Err(invalid("experiment.seeds", "must be >= 1"));
    }
    if experiment.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(invalid("experiment.fractions", "entries must lie in [0, 1]"));
    }

    let settings = Settings {
        schedule,
        guidance,
        run,
        cost,
        mixture: MixtureSettings { components },
        experiment,
    };
    // surface model-level problems now, keyed to their section
    settings.run_config()?;
    Ok(settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[schedule]\nnum_steps = 50\n";

    #[test]
    fn defaults_match_library_defaults() {
        let s = Settings::default();
        assert_eq!(s.run_config().unwrap(), RunConfig::default());
        let from_file = Settings::from_toml_str(MINIMAL, None, &Overrides::default()).unwrap();
        assert_eq!(from_file, s);
    }

    #[test]
    fn missing_num_steps_names_the_key() {
        let err = Settings::from_toml_str("[guidance]\nscale = 3.0\n", None, &Overrides::default())
            .unwrap_err();
        assert_eq!(err, ConfigError::MissingKey("schedule.num_steps".into()));
        assert!(err.to_string().contains("schedule.num_steps"));
        // a --steps override supplies it
        let ov = Overrides { steps: Some(20), ..Overrides::default() };
        assert!(Settings::from_toml_str("", None, &ov).is_ok());
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = Settings::from_toml_str("[schedule]\nnum_steps = \n", None, &Overrides::default())
            .unwrap_err();
        assert!(matches!(err, ConfigError::Parse(ref m) if m.contains("line 2")), "{err}");
        let err = Settings::from_toml_str("[schedule]\nnum_steps = 5\nbogus = 1\n", None, &Overrides::default())
            .unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn invalid_values_name_their_section() {
        let cases = [
            ("[schedule]\nnum_steps = 0\n", "schedule.num_steps"),
            ("[schedule]\nnum_steps = 10\nbeta_min = 0.5\nbeta_max = 0.1\n", "schedule"),
            ("[schedule]\nnum_steps = 10\n[guidance]\nskip_start_frac = 0.9\nskip_end_frac = 0.1\n", "guidance"),
            ("[schedule]\nnum_steps = 10\n[run]\ncondition = 5\n", "run.condition"),
            ("[schedule]\nnum_steps = 10\n[cost]\neval_cost = -1.0\n", "cost"),
        ];
        for (text, key) in cases {
            match Settings::from_toml_str(text, None, &Overrides::default()) {
                Err(ConfigError::InvalidValue { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn overrides_apply() {
        let ov = Overrides {
            steps: Some(20),
            seed: Some(7),
            seeds: Some(3),
            skip_last: Some(0.2),
            scale: Some(9.6),
            sampler: Some(SamplerKind::Ddim),
        };
        let s = Settings::from_toml_str(MINIMAL, None, &ov).unwrap();
        let rc = s.run_config().unwrap();
        assert_eq!(rc.schedule.num_steps(), 20);
        assert_eq!(rc.seed, 7);
        assert_eq!(s.experiment.seeds, 3);
        assert_eq!(rc.guidance, GuidanceSpec::skip_last(9.6, 0.2).unwrap());
        assert_eq!(rc.sampler_kind, SamplerKind::Ddim);
    }

    #[test]
    fn unconditional_keyword() {
        let s = Settings::from_toml_str(
            "[schedule]\nnum_steps = 10\n[run]\ncondition = \"none\"\n",
            None,
            &Overrides::default(),
        )
        .unwrap();
        assert_eq!(s.run_config().unwrap().condition, None);
        assert!(Settings::from_toml_str(
            "[schedule]\nnum_steps = 10\n[run]\ncondition = \"all\"\n",
            None,
            &Overrides::default()
        )
        .is_err());
    }

    #[test]
    fn inline_mixture_and_echo_round_trip() {
        let text = r#"
            [schedule]
            num_steps = 30
            kind = "cosine"

            [run]
            condition = 2

            [[mixture.components]]
            weight = 1.0
            mean = [0.5]
            var = [2.0]
            label = 2
        "#;
        let s = Settings::from_toml_str(text, None, &Overrides::default()).unwrap();
        assert_eq!(s.run_config().unwrap().mixture.dim(), 1);
        let again = Settings::from_toml_str(&s.echo(), None, &Overrides::default()).unwrap();
        assert_eq!(again, s);
        let unconditional = Settings {
            run: RunSettings { condition: Condition::Keyword(Unconditional::None), ..s.run.clone() },
            ..s
        };
        let again = Settings::from_toml_str(&unconditional.echo(), None, &Overrides::default()).unwrap();
        assert_eq!(again, unconditional);
    }

    #[test]
    fn mixture_file_relative_to_config() {
        let dir = std::env::temp_dir().join(format!("selguide-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(
            dir.join("mix.toml"),
            "[[components]]\nweight = 1.0\nmean = [0.0, 0.0, 0.0]\nvar = [1.0, 1.0, 1.0]\nlabel = 0\n",
        )
        .unwrap();
        let cfg = dir.join("run.cfg");
        std::fs::write(&cfg, "[schedule]\nnum_steps = 10\n[mixture]\nfile = \"mix.toml\"\n").unwrap();
        let s = Settings::from_file(&cfg, &Overrides::default()).unwrap();
        assert_eq!(s.run_config().unwrap().mixture.dim(), 3);
        std::fs::remove_dir_all(&dir).ok();
    }
}
