//! Score distillation sampling on analytic diffusion priors.
//!
//! The crate pairs a DDPM noise schedule with exact denoisers for Gaussian
//! mixtures, so the distillation gradient and its variance can be measured
//! without a trained network. On top of that it provides the
//! time-prioritized timestep schedule and the usual baselines, an
//! optimizer that records per-iteration trajectories, and diagnostics for
//! mode coverage, convergence speed and image spectra.
//!
//! The `examples/` directory is the best entry point:
//!
//! | example | shows |
//! |---|---|
//! | `noise_schedules` | linear and cosine schedules, forward noising |
//! | `ancestral_sampling` | sampling the mixture with the exact denoiser |
//! | `prior_weight` | the time-prioritized weight and its timestep trajectory |
//! | `sampler_zoo` | every timestep sampler side by side |
//! | `tp_vs_uniform` | optimizing one parameter vector with two samplers |
//! | `gradient_variance` | gradient variance as a function of `t` |
//! | `spectrum` | radially averaged power spectra |
//! | `experiment_sweep` | running a JSON-configured experiment |

pub mod diagnostics;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod io;
pub mod oracle;
pub mod scheduling;
pub mod sds;

pub use diagnostics::{
    convergence_stats, mode_coverage, radial_power_spectrum, ConvergenceReport, DiversityReport,
    SpectrumReport,
};
pub use diffusion::{Condition, Denoiser, NoiseSchedule, ScheduleKind, SigmaRule};
pub use error::{Error, Result};
pub use experiment::{
    export_schedule, load_config, report, run_experiment, ExperimentConfig, RunSummary,
};
pub use oracle::{GaussianMixture, GmmDenoiser};
pub use scheduling::{PriorWeight, TimestepSampler};
pub use sds::{optimize, SdsConfig, TrajectoryRecord, WeightRule};
