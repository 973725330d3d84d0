//! Declarative multi-seed sweeps.
//!
//! An [`ExperimentConfig`] names a schedule, a mixture, a list of timestep
//! samplers and a list of seeds. [`run_experiment`] runs every
//! `(sampler, seed)` pair and writes, under `{output_dir}/{name}/`:
//!
//! ```text
//! trajectories/{label}_seed{seed}.csv
//! schedules/{label}_weights.csv      samplers with a prior weight
//! schedules/{label}_timesteps.csv    deterministic samplers
//! reports/{label}_diversity.json
//! reports/{label}_convergence.json
//! manifest.json
//! ```
//!
//! Each run draws from its own seed, the first eight bytes (little endian)
//! of `SHA-256("run" ‖ master_seed ‖ len(label) ‖ label ‖ seed)` with
//! integers as little-endian `u64`. Jittered starting points use the same
//! scheme with the tag `"theta0"` and no label, so every sampler starts a
//! given seed from the same point.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    coverage_from_final_distances, first_passage, radial_power_spectrum, ConvergenceReport,
    DiversityReport, RunPassage, SpectrumReport,
};
use crate::diffusion::{Condition, NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::io;
use crate::oracle::{GaussianMixture, GmmDenoiser};
use crate::scheduling::{
    PriorWeight, TimestepSampler, DEFAULT_POWER, DEFAULT_TWO_STAGE_BOUNDARY,
    DEFAULT_TWO_STAGE_STAGE1, DEFAULT_TWO_STAGE_STAGE2,
};
use crate::sds::{optimize, RunStatus, SdsConfig, WeightRule};

/// Overrides `output_dir` when set (applied by the command-line tool).
pub const OUTPUT_DIR_ENV: &str = "SDS_LAB_OUTPUT_DIR";

pub const DEFAULT_TAU: f64 = 0.2;

pub const PRESET_NAMES: [&str; 4] = [
    "paper-default",
    "ablation-grid",
    "hyperparam-grid",
    "schedule-comparison",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default)]
    pub kind: ScheduleKind,
    #[serde(rename = "T", default = "default_max_t")]
    pub max_t: usize,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::default(),
            max_t: default_max_t(),
        }
    }
}

fn default_max_t() -> usize {
    1000
}

/// A named mixture (`"bimodal-far"`, `"quad"`) or explicit components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MixtureSpec {
    Preset(String),
    Explicit(ExplicitMixture),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitMixture {
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub num_components: Option<usize>,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl MixtureSpec {
    pub fn build(&self) -> Result<GaussianMixture> {
        match self {
            MixtureSpec::Preset(name) => GaussianMixture::preset(name)
                .ok_or_else(|| Error::config("mixture", format!("unknown preset `{name}`"))),
            MixtureSpec::Explicit(m) => {
                if let Some(k) = m.num_components {
                    if k != m.weights.len() {
                        return Err(Error::config(
                            "mixture.K",
                            format!("K = {k} but {} weights given", m.weights.len()),
                        ));
                    }
                }
                GaussianMixture::new(m.weights.clone(), m.means.clone(), m.variances.clone())
                    .map_err(|e| Error::config("mixture", e.to_string()))
            }
        }
    }
}

/// One timestep sampler. `label` names its output files and defaults to a
/// string built from the kind and any non-default parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSpec {
    Uniform {
        label: Option<String>,
        t_min: Option<usize>,
        t_max: Option<usize>,
    },
    /// Defaults `m = T/2`, `s = T/8`.
    Tp {
        label: Option<String>,
        m: Option<f64>,
        s: Option<f64>,
    },
    WpOnly {
        label: Option<String>,
        m: Option<f64>,
        s: Option<f64>,
    },
    WdOnly {
        label: Option<String>,
    },
    Linear {
        label: Option<String>,
    },
    TruncatedLinear {
        label: Option<String>,
        #[serde(default = "default_floor")]
        floor: usize,
    },
    Constant {
        label: Option<String>,
        t: usize,
    },
    /// Defaults `t_max = 0.98·T`, `t_min = 0.02·T`, `power = 0.5`.
    PowerAnnealed {
        label: Option<String>,
        t_max: Option<usize>,
        t_min: Option<usize>,
        #[serde(default = "default_power")]
        power: f64,
    },
    TwoStage {
        label: Option<String>,
        #[serde(default = "default_boundary")]
        boundary_fraction: f64,
        stage1: Option<[usize; 2]>,
        stage2: Option<[usize; 2]>,
    },
}

fn default_floor() -> usize {
    200
}

fn default_power() -> f64 {
    DEFAULT_POWER
}

fn default_boundary() -> f64 {
    DEFAULT_TWO_STAGE_BOUNDARY
}

fn scaled(max_t: usize, default: usize) -> usize {
    ((default as f64 * max_t as f64 / 1000.0).round() as usize).clamp(1, max_t)
}

impl SamplerSpec {
    pub fn label(&self) -> String {
        use SamplerSpec::*;
        let explicit = match self {
            Uniform { label, .. }
            | Tp { label, .. }
            | WpOnly { label, .. }
            | WdOnly { label }
            | Linear { label }
            | TruncatedLinear { label, .. }
            | Constant { label, .. }
            | PowerAnnealed { label, .. }
            | TwoStage { label, .. } => label,
        };
        if let Some(l) = explicit {
            return l.clone();
        }
        match self {
            Uniform {
                t_min: None,
                t_max: None,
                ..
            } => "uniform".into(),
            Uniform { t_min, t_max, .. } => format!(
                "uniform_t{}-{}",
                t_min.map_or("1".into(), |v| v.to_string()),
                t_max.map_or("T".into(), |v| v.to_string())
            ),
            Tp {
                m: None, s: None, ..
            } => "tp".into(),
            Tp { m, s, .. } => format!("tp{}", ms_suffix(*m, *s)),
            WpOnly {
                m: None, s: None, ..
            } => "wp_only".into(),
            WpOnly { m, s, .. } => format!("wp_only{}", ms_suffix(*m, *s)),
            WdOnly { .. } => "wd_only".into(),
            Linear { .. } => "linear".into(),
            TruncatedLinear { floor, .. } => format!("truncated_linear_{floor}"),
            Constant { t, .. } => format!("constant_{t}"),
            PowerAnnealed { power, .. } => format!("power_annealed_p{power}"),
            TwoStage { .. } => "two_stage".into(),
        }
    }

    /// Builds the sampler; `field` prefixes error paths.
    pub fn build(&self, schedule: &NoiseSchedule, field: &str) -> Result<TimestepSampler> {
        let max_t = schedule.max_t();
        let wrap = |e: Error| Error::config(field, e.to_string());
        let prior_params = |m: Option<f64>, s: Option<f64>| -> Result<(f64, f64)> {
            let m = m.unwrap_or(max_t as f64 / 2.0);
            let s = s.unwrap_or(max_t as f64 / 8.0);
            if !m.is_finite() {
                return Err(Error::config(
                    format!("{field}.m"),
                    format!("m must be finite, got {m}"),
                ));
            }
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::config(
                    format!("{field}.s"),
                    format!("s must be > 0, got {s}"),
                ));
            }
            Ok((m, s))
        };
        match *self {
            SamplerSpec::Uniform { t_min, t_max, .. } => {
                TimestepSampler::uniform_range(schedule, t_min.unwrap_or(1), t_max.unwrap_or(max_t))
                    .map_err(wrap)
            }
            SamplerSpec::Tp { m, s, .. } => {
                let (m, s) = prior_params(m, s)?;
                TimestepSampler::time_prioritized(schedule, m, s).map_err(wrap)
            }
            SamplerSpec::WpOnly { m, s, .. } => {
                let (m, s) = prior_params(m, s)?;
                TimestepSampler::wp_only(schedule, m, s).map_err(wrap)
            }
            SamplerSpec::WdOnly { .. } => TimestepSampler::wd_only(schedule).map_err(wrap),
            SamplerSpec::Linear { .. } => Ok(TimestepSampler::linear(schedule)),
            SamplerSpec::TruncatedLinear { floor, .. } => {
                TimestepSampler::truncated_linear(schedule, floor).map_err(wrap)
            }
            SamplerSpec::Constant { t, .. } => TimestepSampler::constant(schedule, t).map_err(wrap),
            SamplerSpec::PowerAnnealed {
                t_max,
                t_min,
                power,
                ..
            } => TimestepSampler::power_annealed(
                schedule,
                t_max.unwrap_or(scaled(max_t, 980)),
                t_min.unwrap_or(scaled(max_t, 20)),
                power,
            )
            .map_err(wrap),
            SamplerSpec::TwoStage {
                boundary_fraction,
                stage1,
                stage2,
                ..
            } => {
                let range = |r: Option<[usize; 2]>, d: std::ops::RangeInclusive<usize>| match r {
                    Some([a, b]) => a..=b,
                    None => scaled(max_t, *d.start())..=scaled(max_t, *d.end()),
                };
                TimestepSampler::two_stage(
                    schedule,
                    boundary_fraction,
                    range(stage1, DEFAULT_TWO_STAGE_STAGE1),
                    range(stage2, DEFAULT_TWO_STAGE_STAGE2),
                )
                .map_err(wrap)
            }
        }
    }
}

fn ms_suffix(m: Option<f64>, s: Option<f64>) -> String {
    let mut out = String::new();
    if let Some(m) = m {
        out += &format!("_m{m}");
    }
    if let Some(s) = s {
        out += &format!("_s{s}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdsSpec {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_iterations", alias = "N")]
    pub iterations: usize,
    #[serde(default)]
    pub w_rule: WeightRule,
    #[serde(default = "default_grad_samples")]
    pub grad_samples: usize,
}

impl Default for SdsSpec {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            iterations: default_iterations(),
            w_rule: WeightRule::default(),
            grad_samples: default_grad_samples(),
        }
    }
}

fn default_lr() -> f64 {
    0.01
}

fn default_iterations() -> usize {
    2000
}

fn default_grad_samples() -> usize {
    1
}

/// Starting parameters of every run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Theta0Spec {
    /// All zeros.
    #[default]
    Origin,
    /// `h·w` pixels at `level`.
    GreyGrid {
        h: usize,
        w: usize,
        #[serde(default = "default_grey")]
        level: f64,
    },
    Explicit {
        values: Vec<f64>,
    },
    /// `base` (zeros when absent) plus independent `U(−amplitude, amplitude)`
    /// per coordinate, drawn per seed.
    Jittered {
        base: Option<Vec<f64>>,
        amplitude: f64,
    },
}

fn default_grey() -> f64 {
    0.5
}

impl Theta0Spec {
    fn validate(&self, dim: usize) -> Result<()> {
        let len = match self {
            Theta0Spec::Origin => dim,
            Theta0Spec::GreyGrid { h, w, level } => {
                if !level.is_finite() {
                    return Err(Error::config("theta0.level", "must be finite"));
                }
                h * w
            }
            Theta0Spec::Explicit { values } => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("theta0.values", "must be finite"));
                }
                values.len()
            }
            Theta0Spec::Jittered { base, amplitude } => {
                if !(amplitude.is_finite() && *amplitude >= 0.0) {
                    return Err(Error::config(
                        "theta0.amplitude",
                        format!("must be >= 0, got {amplitude}"),
                    ));
                }
                match base {
                    Some(b) if b.iter().any(|v| !v.is_finite()) => {
                        return Err(Error::config("theta0.base", "must be finite"))
                    }
                    Some(b) => b.len(),
                    None => dim,
                }
            }
        };
        if len != dim {
            return Err(Error::config(
                "theta0",
                format!("has {len} coordinates but the mixture has dimension {dim}"),
            ));
        }
        Ok(())
    }

    /// Starting point for run seed `seed`.
    pub fn build(&self, dim: usize, master_seed: u64, seed: u64) -> Vec<f64> {
        match self {
            Theta0Spec::Origin => vec![0.0; dim],
            Theta0Spec::GreyGrid { h, w, level } => vec![*level; h * w],
            Theta0Spec::Explicit { values } => values.clone(),
            Theta0Spec::Jittered { base, amplitude } => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed("theta0", master_seed, "", seed));
                let base = base.clone().unwrap_or_else(|| vec![0.0; dim]);
                base.into_iter()
                    .map(|b| {
                        if *amplitude > 0.0 {
                            b + rng.random_range(-amplitude..=*amplitude)
                        } else {
                            b
                        }
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    pub mixture: MixtureSpec,
    pub samplers: Vec<SamplerSpec>,
    #[serde(default)]
    pub sds: SdsSpec,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub theta0: Theta0Spec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Parallel runs; all available cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

/// A validated config with its objects constructed.
#[derive(Debug, Clone)]
pub struct Plan {
    pub schedule: NoiseSchedule,
    pub mixture: GaussianMixture,
    pub samplers: Vec<(String, TimestepSampler)>,
    pub sds: SdsConfig,
}

impl Plan {
    pub fn num_runs(&self, config: &ExperimentConfig) -> usize {
        self.samplers.len() * config.seeds.len()
    }
}

fn is_file_safe(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !s.starts_with('.')
}

impl ExperimentConfig {
    /// Parses JSON, rejecting unknown keys, then validates.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(
                if path == "." { "(root)".into() } else { path },
                e.into_inner().to_string(),
            )
        })?;
        config.plan()?;
        Ok(config)
    }

    /// One of [`PRESET_NAMES`].
    pub fn preset(name: &str) -> Option<Self> {
        let text = match name {
            "paper-default" => include_str!("../presets/paper-default.json"),
            "ablation-grid" => include_str!("../presets/ablation-grid.json"),
            "hyperparam-grid" => include_str!("../presets/hyperparam-grid.json"),
            "schedule-comparison" => include_str!("../presets/schedule-comparison.json"),
            _ => return None,
        };
        Some(Self::from_json_str(text).expect("shipped presets are valid"))
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    /// Checks every parameter and constructs the schedule, mixture and samplers.
    pub fn plan(&self) -> Result<Plan> {
        if !is_file_safe(&self.name) {
            return Err(Error::config(
                "name",
                "must be non-empty and use only [A-Za-z0-9._-]",
            ));
        }
        let schedule = NoiseSchedule::new(self.schedule.kind, self.schedule.max_t)
            .map_err(|e| Error::config("schedule.T", e.to_string()))?;
        let mixture = self.mixture.build()?;

        if self.samplers.is_empty() {
            return Err(Error::config(
                "samplers",
                "at least one sampler is required",
            ));
        }
        let mut labels = BTreeSet::new();
        let mut samplers = Vec::with_capacity(self.samplers.len());
        for (k, spec) in self.samplers.iter().enumerate() {
            let field = format!("samplers[{k}]");
            let label = spec.label();
            if !is_file_safe(&label) {
                return Err(Error::config(
                    format!("{field}.label"),
                    format!("`{label}` is not a safe file name"),
                ));
            }
            if !labels.insert(label.clone()) {
                return Err(Error::config(
                    format!("{field}.label"),
                    format!("duplicate label `{label}`"),
                ));
            }
            samplers.push((label, spec.build(&schedule, &field)?));
        }

        let sds = SdsConfig {
            w_rule: self.sds.w_rule,
            lr: self.sds.lr,
            iterations: self.sds.iterations,
            grad_samples: self.sds.grad_samples,
            seed: 0,
            condition: Condition(0),
        };
        if !(sds.lr.is_finite() && sds.lr > 0.0) {
            return Err(Error::config(
                "sds.lr",
                format!("must be > 0, got {}", sds.lr),
            ));
        }
        if sds.iterations == 0 {
            return Err(Error::config("sds.iterations", "must be >= 1"));
        }
        if sds.grad_samples == 0 {
            return Err(Error::config("sds.grad_samples", "must be >= 1"));
        }

        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let mut seen = BTreeSet::new();
        for (k, s) in self.seeds.iter().enumerate() {
            if !seen.insert(*s) {
                return Err(Error::config(
                    format!("seeds[{k}]"),
                    format!("duplicate seed {s}"),
                ));
            }
        }
        self.theta0.validate(mixture.dim())?;
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::config(
                "tau",
                format!("must be > 0, got {}", self.tau),
            ));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "must be >= 1"));
        }
        Ok(Plan {
            schedule,
            mixture,
            samplers,
            sds,
        })
    }

    /// `{output_dir}/{name}`.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Reads and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_json_str(&text)
}

/// Per-run seed; see the module docs.
pub fn derive_seed(tag: &str, master_seed: u64, label: &str, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(master_seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed of the `(sampler label, run seed)` optimization run.
pub fn run_seed(master_seed: u64, label: &str, seed: u64) -> u64 {
    derive_seed("run", master_seed, label, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run_id: String,
    pub sampler: String,
    pub seed: u64,
    pub derived_seed: u64,
    /// Relative to the run directory.
    pub file: String,
    pub status: RunStatus,
    pub completed_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergentRun {
    pub run_id: String,
    pub iteration: usize,
    pub t: usize,
    #[serde(with = "crate::io::any_float")]
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub diversity: String,
    pub convergence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub workers: usize,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    pub runs: Vec<RunEntry>,
    pub divergent_runs: Vec<DivergentRun>,
    pub reports: BTreeMap<String, ReportFiles>,
    /// Every file written, relative to the run directory.
    pub files: Vec<String>,
}

impl Manifest {
    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Reports for one sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerReport {
    pub diversity: DiversityReport,
    pub convergence: ConvergenceReport,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub manifest: Manifest,
    /// Keyed by sampler label.
    pub reports: BTreeMap<String, SamplerReport>,
}

struct Outcome {
    entry: RunEntry,
    final_distances: Option<Vec<f64>>,
    first_passage: Option<usize>,
}

fn rel(path: &Path, root: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

/// Runs every `(sampler, seed)` pair and writes all artifacts.
///
/// Divergent runs are recorded, not fatal.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    let started = Instant::now();
    let started_unix_seconds = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let plan = config.plan()?;
    let run_dir = config.run_dir();
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let workers = config
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))?;

    let denoiser = GmmDenoiser::new(plan.schedule.clone(), plan.mixture.clone());
    let jobs: Vec<(&str, &TimestepSampler, u64)> = plan
        .samplers
        .iter()
        .flat_map(|(label, sampler)| {
            config
                .seeds
                .iter()
                .map(move |&s| (label.as_str(), sampler, s))
        })
        .collect();

    let outcomes: Vec<Outcome> = pool.install(|| {
        jobs.par_iter()
            .map(|&(label, sampler, seed)| {
                let run_id = format!("{label}_seed{seed}");
                let derived_seed = run_seed(config.master_seed, label, seed);
                let sds = SdsConfig {
                    seed: derived_seed,
                    ..plan.sds.clone()
                };
                let theta0 = config
                    .theta0
                    .build(plan.mixture.dim(), config.master_seed, seed);
                let (_, mut record) = optimize(&plan.schedule, &denoiser, sampler, &theta0, &sds)?;
                record.sampler = label.to_string();
                record.seed = seed;
                let path = run_dir.join("trajectories").join(format!("{run_id}.csv"));
                io::write_trajectory(&path, &run_id, &record, &plan.mixture)?;
                let final_distances = match record.status {
                    RunStatus::Completed => record
                        .final_theta()
                        .map(|th| plan.mixture.mode_distances(th)),
                    RunStatus::Diverged { .. } => None,
                };
                let first_passage = first_passage(
                    record
                        .rows
                        .iter()
                        .map(|r| (r.i, plan.mixture.mode_distances(&r.theta))),
                    config.tau,
                );
                Ok(Outcome {
                    entry: RunEntry {
                        run_id,
                        sampler: label.to_string(),
                        seed,
                        derived_seed,
                        file: rel(&path, &run_dir),
                        status: record.status,
                        completed_iterations: record.rows.len(),
                    },
                    final_distances,
                    first_passage,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut files: Vec<String> = outcomes.iter().map(|o| o.entry.file.clone()).collect();
    for (label, sampler) in &plan.samplers {
        if let Some(prior) = sampler.prior() {
            let path = run_dir
                .join("schedules")
                .join(format!("{label}_weights.csv"));
            io::write_weight_table(&path, prior)?;
            files.push(rel(&path, &run_dir));
        }
        if let Some(traj) = sampler.trajectory(plan.sds.iterations) {
            let path = run_dir
                .join("schedules")
                .join(format!("{label}_timesteps.csv"));
            io::write_timesteps(&path, &traj?)?;
            files.push(rel(&path, &run_dir));
        }
    }

    let mut reports = BTreeMap::new();
    let mut report_files = BTreeMap::new();
    for (label, _) in &plan.samplers {
        let mine: Vec<&Outcome> = outcomes
            .iter()
            .filter(|o| &o.entry.sampler == label)
            .collect();
        let report = sampler_report(&mine, &plan, config)?;
        let dir = run_dir.join("reports");
        let div = io::report_path(&dir, label, "diversity", "json");
        let conv = io::report_path(&dir, label, "convergence", "json");
        io::write_json(&div, &report.diversity)?;
        io::write_json(&conv, &report.convergence)?;
        files.push(rel(&div, &run_dir));
        files.push(rel(&conv, &run_dir));
        report_files.insert(
            label.clone(),
            ReportFiles {
                diversity: rel(&div, &run_dir),
                convergence: rel(&conv, &run_dir),
            },
        );
        reports.insert(label.clone(), report);
    }

    let divergent_runs = outcomes
        .iter()
        .filter_map(|o| match o.entry.status {
            RunStatus::Diverged {
                iteration,
                t,
                grad_norm,
            } => Some(DivergentRun {
                run_id: o.entry.run_id.clone(),
                iteration,
                t,
                grad_norm,
            }),
            RunStatus::Completed => None,
        })
        .collect();
    files.push("manifest.json".into());
    let manifest = Manifest {
        name: config.name.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config.hash(),
        config: config.clone(),
        workers,
        started_unix_seconds,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        runs: outcomes.into_iter().map(|o| o.entry).collect(),
        divergent_runs,
        reports: report_files,
        files,
    };
    io::write_json(&run_dir.join("manifest.json"), &manifest)?;
    Ok(RunSummary {
        run_dir,
        manifest,
        reports,
    })
}

fn sampler_report(
    outcomes: &[&Outcome],
    plan: &Plan,
    config: &ExperimentConfig,
) -> Result<SamplerReport> {
    let finals: Vec<_> = outcomes.iter().map(|o| o.final_distances.clone()).collect();
    let diversity =
        coverage_from_final_distances(&finals, plan.mixture.num_components(), config.tau)?;
    let passages = outcomes
        .iter()
        .map(|o| RunPassage {
            sampler: o.entry.sampler.clone(),
            seed: o.entry.seed,
            iterations: plan.sds.iterations,
            first_passage: o.first_passage,
        })
        .collect();
    let convergence = ConvergenceReport::from_passages(passages, config.tau)?;
    Ok(SamplerReport {
        diversity,
        convergence,
    })
}

/// Recomputes the per-sampler reports of a finished run from its manifest
/// and trajectory CSVs.
pub fn report(run_dir: impl AsRef<Path>) -> Result<BTreeMap<String, SamplerReport>> {
    let run_dir = run_dir.as_ref();
    let manifest = Manifest::read(run_dir)?;
    let config = &manifest.config;
    let plan = config.plan()?;
    let mut outcomes = Vec::with_capacity(manifest.runs.len());
    for entry in &manifest.runs {
        let rows = io::read_trajectory(&run_dir.join(&entry.file))?;
        let final_distances = match entry.status {
            RunStatus::Completed => rows.last().map(|r| r.mode_distances.clone()),
            RunStatus::Diverged { .. } => None,
        };
        let first_passage = first_passage(
            rows.iter().map(|r| (r.i, r.mode_distances.as_slice())),
            config.tau,
        );
        outcomes.push(Outcome {
            entry: entry.clone(),
            final_distances,
            first_passage,
        });
    }
    plan.samplers
        .iter()
        .map(|(label, _)| {
            let mine: Vec<&Outcome> = outcomes
                .iter()
                .filter(|o| &o.entry.sampler == label)
                .collect();
            Ok((label.clone(), sampler_report(&mine, &plan, config)?))
        })
        .collect()
}

/// Writes `tp_weights.csv` and `tp_timesteps.csv` into `out_dir`.
pub fn export_schedule(
    kind: ScheduleKind,
    max_t: usize,
    m: f64,
    s: f64,
    n: usize,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let schedule = NoiseSchedule::new(kind, max_t)?;
    let prior = PriorWeight::new(&schedule, m, s)?;
    if n == 0 {
        return Err(Error::invalid("N must be >= 1"));
    }
    let traj = (1..=n)
        .map(|i| prior.timestep(i, n))
        .collect::<Result<Vec<_>>>()?;
    let weights = out_dir.join("tp_weights.csv");
    let timesteps = out_dir.join("tp_timesteps.csv");
    io::write_weight_table(&weights, &prior)?;
    io::write_timesteps(&timesteps, &traj)?;
    Ok(vec![weights, timesteps])
}

/// Reads a headerless grid CSV and writes `{stem}_spectrum.csv` (per-bin
/// power) and `{stem}_spectrum.json` (full report) into `out_dir`.
pub fn spectrum_file(
    grid: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
) -> Result<(SpectrumReport, Vec<PathBuf>)> {
    let grid = grid.as_ref();
    let image = io::read_grid(grid)?;
    let report = radial_power_spectrum(&image)?;
    let stem = grid
        .file_stem()
        .map_or_else(|| "grid".into(), |s| s.to_string_lossy().into_owned());
    let csv = io::report_path(out_dir.as_ref(), &stem, "spectrum", "csv");
    let json = io::report_path(out_dir.as_ref(), &stem, "spectrum", "json");
    io::write_spectrum(&csv, &report)?;
    io::write_json(&json, &report)?;
    Ok((report, vec![csv, json]))
}
