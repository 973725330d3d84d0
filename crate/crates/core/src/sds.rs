//! Score distillation with an identity generator (`x = θ`).
//!
//! Each step noises the current parameters to a timestep chosen by a
//! [`TimestepSampler`], asks the denoiser for its noise prediction, and
//! moves `θ` against `w(t)·(ε̂ − ε)`. The optimizer is plain gradient
//! descent without momentum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    estimate_x0, noise_sample, noise_with, Condition, Denoiser, NoiseSchedule, NoisedSample,
};
use crate::error::{Error, Result};
use crate::oracle::GaussianMixture;
use crate::scheduling::TimestepSampler;

/// The timestep weighting `w(t)` applied to the noise residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    #[default]
    One,
    /// `√((1−ᾱ_t)/ᾱ_t)`, which makes the residual equal to the gradient of the
    /// clean-sample regression loss.
    SqrtInvSnr,
}

impl WeightRule {
    pub fn weight(self, schedule: &NoiseSchedule, t: usize) -> f64 {
        match self {
            WeightRule::One => 1.0,
            WeightRule::SqrtInvSnr => schedule.inv_sqrt_snr(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdsConfig {
    pub w_rule: WeightRule,
    pub lr: f64,
    /// Total iterations `N`.
    pub iterations: usize,
    /// Monte-Carlo noise draws averaged per step.
    pub grad_samples: usize,
    pub seed: u64,
    pub condition: Condition,
}

impl Default for SdsConfig {
    fn default() -> Self {
        Self {
            w_rule: WeightRule::One,
            lr: 0.01,
            iterations: 2000,
            grad_samples: 1,
            seed: 0,
            condition: Condition(0),
        }
    }
}

impl SdsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be >= 1"));
        }
        if self.grad_samples == 0 {
            return Err(Error::invalid("grad_samples must be >= 1"));
        }
        Ok(())
    }
}

/// One noise draw at `θ`, with the denoiser's prediction and the implied
/// clean-sample estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SdsDraw {
    pub sample: NoisedSample,
    pub eps_pred: Vec<f64>,
    pub x0_hat: Vec<f64>,
}

impl SdsDraw {
    pub fn draw<D, R>(
        schedule: &NoiseSchedule,
        denoiser: &D,
        theta: &[f64],
        t: usize,
        condition: Condition,
        rng: &mut R,
    ) -> Result<Self>
    where
        D: Denoiser + ?Sized,
        R: Rng + ?Sized,
    {
        let sample = noise_sample(schedule, theta, t, rng)?;
        Self::from_sample(schedule, denoiser, sample, condition)
    }

    /// Same as [`SdsDraw::draw`] with a caller-supplied `ε`.
    pub fn with_noise<D>(
        schedule: &NoiseSchedule,
        denoiser: &D,
        theta: &[f64],
        t: usize,
        condition: Condition,
        eps: Vec<f64>,
    ) -> Result<Self>
    where
        D: Denoiser + ?Sized,
    {
        let sample = noise_with(schedule, theta, eps, t)?;
        Self::from_sample(schedule, denoiser, sample, condition)
    }

    fn from_sample<D: Denoiser + ?Sized>(
        schedule: &NoiseSchedule,
        denoiser: &D,
        sample: NoisedSample,
        condition: Condition,
    ) -> Result<Self> {
        let eps_pred = denoiser.predict_eps(&sample.x_t, sample.t, condition)?;
        if eps_pred.len() != sample.x_t.len() {
            return Err(Error::DimensionMismatch {
                expected: sample.x_t.len(),
                got: eps_pred.len(),
            });
        }
        let x0_hat = estimate_x0(schedule, &sample.x_t, &eps_pred, sample.t)?;
        Ok(Self {
            sample,
            eps_pred,
            x0_hat,
        })
    }

    /// `ε̂ − ε`, the unweighted score-distillation direction.
    pub fn residual(&self) -> Vec<f64> {
        self.eps_pred
            .iter()
            .zip(&self.sample.eps)
            .map(|(p, e)| p - e)
            .collect()
    }

    /// `½‖θ − x̂_0‖²` with `x̂_0` held fixed.
    pub fn x0_loss(&self, theta: &[f64]) -> f64 {
        0.5 * theta
            .iter()
            .zip(&self.x0_hat)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    }

    /// `∇_θ ½‖θ − x̂_0‖² = θ − x̂_0`.
    pub fn x0_loss_gradient(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.x0_hat).map(|(a, b)| a - b).collect()
    }
}

/// Averaged gradient plus per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Vec<f64>,
    /// Mean over coordinates of the unbiased per-draw variance; needs at
    /// least two draws.
    pub variance: Option<f64>,
    /// Regression loss of the first draw.
    pub x0_loss: f64,
}

impl GradientEstimate {
    pub fn norm(&self) -> f64 {
        norm(&self.gradient)
    }
}

pub fn estimate_gradient<D, R>(
    schedule: &NoiseSchedule,
    denoiser: &D,
    theta: &[f64],
    t: usize,
    config: &SdsConfig,
    rng: &mut R,
) -> Result<GradientEstimate>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    config.validate()?;
    schedule.check_t(t)?;
    let weight = config.w_rule.weight(schedule, t);
    let mut stats = Welford::new(theta.len());
    let mut x0_loss = f64::NAN;
    for draw_idx in 0..config.grad_samples {
        let draw = SdsDraw::draw(schedule, denoiser, theta, t, config.condition, rng)?;
        if draw_idx == 0 {
            x0_loss = draw.x0_loss(theta);
        }
        let g: Vec<f64> = draw.residual().into_iter().map(|r| weight * r).collect();
        stats.push(&g);
    }
    let estimate = GradientEstimate {
        gradient: stats.mean().to_vec(),
        variance: stats.mean_variance(),
        x0_loss,
    };
    if estimate.gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            iteration: None,
            t,
            grad_norm: estimate.norm(),
        });
    }
    Ok(estimate)
}

/// `mean_k w(t)·(ε̂(x_t^k) − ε^k)` over `config.grad_samples` draws.
pub fn sds_gradient<D, R>(
    schedule: &NoiseSchedule,
    denoiser: &D,
    theta: &[f64],
    t: usize,
    config: &SdsConfig,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    Ok(estimate_gradient(schedule, denoiser, theta, t, config, rng)?.gradient)
}

/// `½‖θ − stop_grad(x̂_0)‖²` for a single noise draw.
pub fn sds_loss_x0<D, R>(
    schedule: &NoiseSchedule,
    denoiser: &D,
    theta: &[f64],
    t: usize,
    condition: Condition,
    rng: &mut R,
) -> Result<f64>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    let draw = SdsDraw::draw(schedule, denoiser, theta, t, condition, rng)?;
    let loss = draw.x0_loss(theta);
    if !loss.is_finite() {
        return Err(Error::Divergence {
            iteration: None,
            t,
            grad_norm: norm(&draw.x0_loss_gradient(theta)),
        });
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub i: usize,
    pub t: usize,
    pub grad_norm: f64,
    pub grad_variance_est: Option<f64>,
    pub x0_loss: f64,
    /// Parameters after this iteration's update.
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged {
        iteration: usize,
        t: usize,
        #[serde(with = "crate::io::any_float")]
        grad_norm: f64,
    },
}

/// Per-iteration log of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub sampler: String,
    pub seed: u64,
    pub iterations: usize,
    pub rows: Vec<TrajectoryRow>,
    pub status: RunStatus,
}

impl TrajectoryRecord {
    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Completed && self.rows.len() == self.iterations
    }

    pub fn final_theta(&self) -> Option<&[f64]> {
        self.rows.last().map(|r| r.theta.as_slice())
    }

    /// Distance to every mixture mean after each iteration.
    pub fn mode_distances(&self, mixture: &GaussianMixture) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| mixture.mode_distances(&r.theta))
            .collect()
    }
}

/// Mutable state of a run: parameters, iteration counter and the two
/// random streams (noise draws, stochastic timestep draws).
#[derive(Debug, Clone)]
pub struct OptimState {
    pub theta: Vec<f64>,
    pub i: usize,
    noise_rng: ChaCha8Rng,
    timestep_rng: ChaCha8Rng,
}

impl OptimState {
    pub const NOISE_STREAM: u64 = 0;
    pub const TIMESTEP_STREAM: u64 = 1;

    pub fn new(theta0: Vec<f64>, seed: u64) -> Self {
        Self {
            theta: theta0,
            i: 0,
            noise_rng: stream_rng(seed, Self::NOISE_STREAM),
            timestep_rng: stream_rng(seed, Self::TIMESTEP_STREAM),
        }
    }

    /// Runs iteration `self.i + 1`. On divergence `theta` is left unchanged.
    pub fn step<D: Denoiser + ?Sized>(
        &mut self,
        schedule: &NoiseSchedule,
        denoiser: &D,
        sampler: &TimestepSampler,
        config: &SdsConfig,
    ) -> Result<TrajectoryRow> {
        let i = self.i + 1;
        let t = sampler.sample(i, config.iterations, &mut self.timestep_rng)?;
        let estimate = estimate_gradient(
            schedule,
            denoiser,
            &self.theta,
            t,
            config,
            &mut self.noise_rng,
        )
        .map_err(|e| match e {
            Error::Divergence { t, grad_norm, .. } => Error::Divergence {
                iteration: Some(i),
                t,
                grad_norm,
            },
            other => other,
        })?;
        let grad_norm = estimate.norm();
        let next: Vec<f64> = self
            .theta
            .iter()
            .zip(&estimate.gradient)
            .map(|(th, g)| th - config.lr * g)
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration: Some(i),
                t,
                grad_norm,
            });
        }
        self.theta = next;
        self.i = i;
        Ok(TrajectoryRow {
            i,
            t,
            grad_norm,
            grad_variance_est: estimate.variance,
            x0_loss: estimate.x0_loss,
            theta: self.theta.clone(),
        })
    }
}

/// ChaCha stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `config.iterations` steps from `theta0`.
///
/// Divergence is an outcome, not an error: the record stops at the last
/// finite iterate and carries [`RunStatus::Diverged`].
pub fn optimize<D: Denoiser + ?Sized>(
    schedule: &NoiseSchedule,
    denoiser: &D,
    sampler: &TimestepSampler,
    theta0: &[f64],
    config: &SdsConfig,
) -> Result<(Vec<f64>, TrajectoryRecord)> {
    config.validate()?;
    if theta0.len() != denoiser.dim() {
        return Err(Error::DimensionMismatch {
            expected: denoiser.dim(),
            got: theta0.len(),
        });
    }
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial parameters must be finite"));
    }
    let mut state = OptimState::new(theta0.to_vec(), config.seed);
    let mut rows = Vec::with_capacity(config.iterations);
    let mut status = RunStatus::Completed;
    for _ in 0..config.iterations {
        match state.step(schedule, denoiser, sampler, config) {
            Ok(row) => rows.push(row),
            Err(Error::Divergence {
                iteration,
                t,
                grad_norm,
            }) => {
                status = RunStatus::Diverged {
                    iteration: iteration.unwrap_or(state.i + 1),
                    t,
                    grad_norm,
                };
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let record = TrajectoryRecord {
        sampler: sampler.kind().to_string(),
        seed: config.seed,
        iterations: config.iterations,
        rows,
        status,
    };
    Ok((state.theta, record))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceEstimate {
    pub t: usize,
    /// Sum over coordinates of the per-coordinate variance.
    pub trace: f64,
    pub per_dim: f64,
    pub mean: Vec<f64>,
}

/// Monte-Carlo variance of the `w = 1` gradient at fixed `θ` for each `t`.
pub fn gradient_variance_sweep<D, R>(
    schedule: &NoiseSchedule,
    denoiser: &D,
    theta: &[f64],
    t_list: &[usize],
    samples: usize,
    condition: Condition,
    rng: &mut R,
) -> Result<Vec<VarianceEstimate>>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    if samples < 2 {
        return Err(Error::invalid("variance sweep needs at least 2 samples"));
    }
    t_list
        .iter()
        .map(|&t| {
            schedule.check_t(t)?;
            let mut stats = Welford::new(theta.len());
            for _ in 0..samples {
                let draw = SdsDraw::draw(schedule, denoiser, theta, t, condition, rng)?;
                stats.push(&draw.residual());
            }
            let trace: f64 = stats.variances().iter().sum();
            Ok(VarianceEstimate {
                t,
                trace,
                per_dim: trace / theta.len() as f64,
                mean: stats.mean().to_vec(),
            })
        })
        .collect()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-coordinate running mean and variance.
#[derive(Debug, Clone)]
pub struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased (n − 1) variances; zeros before the second sample.
    pub fn variances(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![0.0; self.mean.len()];
        }
        self.m2.iter().map(|s| s / (self.n - 1) as f64).collect()
    }

    fn mean_variance(&self) -> Option<f64> {
        (self.n >= 2).then(|| self.variances().iter().sum::<f64>() / self.mean.len() as f64)
    }
}
