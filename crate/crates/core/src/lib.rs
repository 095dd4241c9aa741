//! Classifier-free guidance with a selective skip window for the
//! unconditional branch, driven by an exact Gaussian-mixture denoiser so
//! that compute savings and sample drift can be measured deterministically.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod guidance;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
pub use guidance::{cfg_combine, in_skip_window, selective_eps, total_nfe, GuidanceSpec, SkipWindow};
pub use oracle::{gm_epsilon, simulated_eval, Component, CostModel, MixtureModel, NoisePrediction, VirtualClock};
pub use sampler::{run_sampling, run_sampling_cfg, RunConfig, SamplerKind, Trajectory};
pub use schedule::{build_schedule, ScheduleKind, ScheduleParams};
