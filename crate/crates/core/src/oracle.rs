//! Exact, training-free denoiser for isotropic Gaussian-mixture data.
//!
//! Gaussians stay Gaussian under forward noising: component `k` at timestep
//! `t` has mean `√ᾱ_t μ_k` and variance `ᾱ_t σ_k² + (1 − ᾱ_t)`. The optimal
//! noise prediction is `ε*(x_t) = −√(1−ᾱ_t) ∇ log p_t(x_t)`, and the
//! score is a responsibility-weighted sum of per-component scores.
//! Responsibilities are computed in log space.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diffusion::{Condition, Denoiser, NoiseSchedule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if means.len() != k || variances.len() != k {
            return Err(Error::invalid(format!(
                "mixture has {k} weights but {} means and {} variances",
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() >= 1e-12 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("mixture variances must be positive"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::invalid("mixture means must have dimension >= 1"));
        }
        if let Some(bad) = means.iter().find(|m| m.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mixture means must be finite"));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    /// `N(μ, σ² I)`.
    pub fn single(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance])
    }

    /// d = 2, means `(±4, 0)`, `σ² = 0.05`, equal weights.
    pub fn bimodal_far() -> Self {
        Self::new(
            vec![0.5, 0.5],
            vec![vec![4.0, 0.0], vec![-4.0, 0.0]],
            vec![0.05, 0.05],
        )
        .expect("preset is valid")
    }

    /// d = 2, means at `(±3, ±3)`, `σ² = 0.05`, equal weights.
    pub fn quad() -> Self {
        Self::new(
            vec![0.25; 4],
            vec![
                vec![3.0, 3.0],
                vec![3.0, -3.0],
                vec![-3.0, 3.0],
                vec![-3.0, -3.0],
            ],
            vec![0.05; 4],
        )
        .expect("preset is valid")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "bimodal-far" => Some(Self::bimodal_far()),
            "quad" => Some(Self::quad()),
            _ => None,
        }
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Euclidean distance from `x` to each component mean.
    pub fn mode_distances(&self, x: &[f64]) -> Vec<f64> {
        self.means.iter().map(|m| dist(x, m)).collect()
    }

    /// View of the mixture after noising to timestep `t`.
    pub fn noised(&self, schedule: &NoiseSchedule, t: usize) -> Result<NoisedMixture<'_>> {
        schedule.check_t(t)?;
        let alpha_bar = schedule.alpha_bar(t);
        let signal = alpha_bar.sqrt();
        let variances = self
            .variances
            .iter()
            .map(|s2| alpha_bar * s2 + (1.0 - alpha_bar))
            .collect();
        Ok(NoisedMixture {
            base: self,
            alpha_bar,
            signal,
            variances,
        })
    }

    pub fn log_density(&self, schedule: &NoiseSchedule, x_t: &[f64], t: usize) -> Result<f64> {
        self.check_dim(x_t)?;
        Ok(self.noised(schedule, t)?.log_density(x_t))
    }

    /// Bayes-optimal noise prediction, `−√(1−ᾱ_t) ∇ log p_t(x_t)`.
    pub fn oracle_eps(&self, schedule: &NoiseSchedule, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check_dim(x_t)?;
        Ok(self.noised(schedule, t)?.eps(x_t))
    }

    /// `E[x_0 | x_t]` from per-component Gaussian posteriors.
    pub fn posterior_mean(
        &self,
        schedule: &NoiseSchedule,
        x_t: &[f64],
        t: usize,
    ) -> Result<Vec<f64>> {
        self.check_dim(x_t)?;
        Ok(self.noised(schedule, t)?.posterior_mean(x_t))
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Component means `√ᾱ_t μ_k` and variances `ᾱ_t σ_k² + (1 − ᾱ_t)`.
#[derive(Debug, Clone)]
pub struct NoisedMixture<'a> {
    base: &'a GaussianMixture,
    alpha_bar: f64,
    signal: f64,
    variances: Vec<f64>,
}

impl NoisedMixture<'_> {
    pub fn alpha_bar(&self) -> f64 {
        self.alpha_bar
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn mean(&self, k: usize) -> Vec<f64> {
        self.base.means[k].iter().map(|m| self.signal * m).collect()
    }

    /// `x − √ᾱ μ_k`.
    fn offset(&self, x: &[f64], k: usize) -> Vec<f64> {
        x.iter()
            .zip(&self.base.means[k])
            .map(|(xi, mi)| xi - self.signal * mi)
            .collect()
    }

    /// `log w_k + log N(x; √ᾱ μ_k, v_k I)` for every component.
    fn component_log_terms(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len() as f64;
        (0..self.base.num_components())
            .map(|k| {
                let v = self.variances[k];
                let sq: f64 = self.offset(x, k).iter().map(|o| o * o).sum();
                self.base.weights[k].ln() - 0.5 * d * (2.0 * PI * v).ln() - 0.5 * sq / v
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_log_terms(x))
    }

    /// Posterior component probabilities `p(k | x_t)`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let terms = self.component_log_terms(x);
        let lse = log_sum_exp(&terms);
        terms.iter().map(|l| (l - lse).exp()).collect()
    }

    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (k, r) in self.responsibilities(x).into_iter().enumerate() {
            let v = self.variances[k];
            for (o, d) in out.iter_mut().zip(self.offset(x, k)) {
                *o -= r * d / v;
            }
        }
        out
    }

    pub fn eps(&self, x: &[f64]) -> Vec<f64> {
        let noise = (1.0 - self.alpha_bar).sqrt();
        self.score(x).into_iter().map(|s| -noise * s).collect()
    }

    pub fn posterior_mean(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (k, r) in self.responsibilities(x).into_iter().enumerate() {
            let gain = self.signal * self.base.variances[k] / self.variances[k];
            let mu = &self.base.means[k];
            for ((o, d), m) in out.iter_mut().zip(self.offset(x, k)).zip(mu) {
                *o += r * (m + gain * d);
            }
        }
        out
    }
}

/// Max-shifted log-sum-exp.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// [`Denoiser`] backed by exact mixture scores. The condition token indexes
/// into the mixture list.
#[derive(Debug, Clone)]
pub struct GmmDenoiser {
    schedule: NoiseSchedule,
    mixtures: Vec<GaussianMixture>,
}

impl GmmDenoiser {
    pub fn new(schedule: NoiseSchedule, mixture: GaussianMixture) -> Self {
        Self {
            schedule,
            mixtures: vec![mixture],
        }
    }

    /// Several mixtures of the same dimension, selected by `Condition(k)`.
    pub fn conditional(schedule: NoiseSchedule, mixtures: Vec<GaussianMixture>) -> Result<Self> {
        let first = mixtures
            .first()
            .ok_or_else(|| Error::invalid("conditional oracle needs at least one mixture"))?;
        if let Some(m) = mixtures.iter().find(|m| m.dim() != first.dim()) {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                got: m.dim(),
            });
        }
        Ok(Self { schedule, mixtures })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn mixture(&self, condition: Condition) -> Result<&GaussianMixture> {
        self.mixtures.get(condition.0).ok_or_else(|| {
            Error::invalid(format!(
                "condition {} selects no mixture ({} available)",
                condition.0,
                self.mixtures.len()
            ))
        })
    }
}

impl Denoiser for GmmDenoiser {
    fn dim(&self) -> usize {
        self.mixtures[0].dim()
    }

    fn predict_eps(&self, x_t: &[f64], t: usize, condition: Condition) -> Result<Vec<f64>> {
        self.mixture(condition)?.oracle_eps(&self.schedule, x_t, t)
    }
}
