//! Discrete-time diffusion process.
//!
//! Timesteps are 1-based, `t ∈ 1..=T`. The implicit `ᾱ_0 = 1` is never
//! stored. Everything here works on plain `f64` slices; the state vectors
//! in this crate are small (a point in a few dimensions, or a tiny grid).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the per-step `β_t` values are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `β` linearly spaced from `1e-4` to `2e-2`.
    #[default]
    DdpmLinear,
    /// Squared-cosine `ᾱ` curve (offset `s = 0.008`), `β_t` clipped at `0.999`.
    Cosine,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::DdpmLinear => "ddpm_linear",
            ScheduleKind::Cosine => "cosine",
        }
    }
}

const LINEAR_BETA_START: f64 = 1e-4;
const LINEAR_BETA_END: f64 = 2e-2;
const COSINE_OFFSET: f64 = 0.008;
const COSINE_MAX_BETA: f64 = 0.999;

/// Per-timestep `β_t`, `α_t` and `ᾱ_t` tables.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, max_t: usize) -> Result<Self> {
        if max_t < 2 {
            return Err(Error::invalid(format!(
                "schedule needs at least 2 timesteps, got {max_t}"
            )));
        }
        let betas = match kind {
            ScheduleKind::DdpmLinear => linear_betas(max_t),
            ScheduleKind::Cosine => cosine_betas(max_t),
        };
        Ok(Self::from_betas(kind, betas))
    }

    fn from_betas(kind: ScheduleKind, betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |prod, a| {
                *prod *= a;
                Some(*prod)
            })
            .collect();
        Self {
            kind,
            betas,
            alphas,
            alpha_bars,
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// `T`, the largest valid timestep.
    pub fn max_t(&self) -> usize {
        self.betas.len()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.max_t() {
            Err(Error::TimestepOutOfRange {
                t,
                max_t: self.max_t(),
            })
        } else {
            Ok(())
        }
    }

    // Accessors panic on out-of-range `t`; fallible entry points call
    // `check_t` first.

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    /// `ᾱ_t / (1 − ᾱ_t)`.
    pub fn snr(&self, t: usize) -> f64 {
        let ab = self.alpha_bar(t);
        ab / (1.0 - ab)
    }

    /// `√((1 − ᾱ_t) / ᾱ_t)`, the reciprocal square root of the SNR.
    pub fn inv_sqrt_snr(&self, t: usize) -> f64 {
        let ab = self.alpha_bar(t);
        ((1.0 - ab) / ab).sqrt()
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
}

fn linear_betas(max_t: usize) -> Vec<f64> {
    let step = (LINEAR_BETA_END - LINEAR_BETA_START) / (max_t - 1) as f64;
    (0..max_t)
        .map(|k| {
            if k == max_t - 1 {
                LINEAR_BETA_END
            } else {
                LINEAR_BETA_START + step * k as f64
            }
        })
        .collect()
}

fn cosine_betas(max_t: usize) -> Vec<f64> {
    let f = |t: usize| {
        let x = (t as f64 / max_t as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
        (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
    };
    (1..=max_t)
        .map(|t| (1.0 - f(t) / f(t - 1)).min(COSINE_MAX_BETA))
        .collect()
}

/// Opaque conditioning token handed through to the denoiser.
///
/// The Gaussian-mixture oracle uses it to select which mixture to score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition(pub usize);

/// An ε-prediction network `ε_φ(x_t; y, t)`.
///
/// Implementations must be deterministic and return a vector of the same
/// dimension as `x_t`.
pub trait Denoiser {
    fn dim(&self) -> usize;

    fn predict_eps(&self, x_t: &[f64], t: usize, condition: Condition) -> Result<Vec<f64>>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn predict_eps(&self, x_t: &[f64], t: usize, condition: Condition) -> Result<Vec<f64>> {
        (**self).predict_eps(x_t, t, condition)
    }
}

/// Result of the forward noising `x_t = √ᾱ_t x + √(1−ᾱ_t) ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedSample {
    pub x_t: Vec<f64>,
    pub eps: Vec<f64>,
    pub t: usize,
}

pub fn standard_normal_vec<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Noise `x` with an explicit `eps`; the deterministic half of [`noise_sample`].
pub fn noise_with(
    schedule: &NoiseSchedule,
    x: &[f64],
    eps: Vec<f64>,
    t: usize,
) -> Result<NoisedSample> {
    schedule.check_t(t)?;
    if eps.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: eps.len(),
        });
    }
    let ab = schedule.alpha_bar(t);
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    let x_t = x
        .iter()
        .zip(&eps)
        .map(|(xi, ei)| signal * xi + noise * ei)
        .collect();
    Ok(NoisedSample { x_t, eps, t })
}

/// Draw `ε ~ N(0, I)` and noise `x` to timestep `t`.
pub fn noise_sample<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    x: &[f64],
    t: usize,
    rng: &mut R,
) -> Result<NoisedSample> {
    schedule.check_t(t)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cannot noise a non-finite sample"));
    }
    let eps = standard_normal_vec(x.len(), rng);
    noise_with(schedule, x, eps, t)
}

/// Clean-sample estimate `x̂_0 = (x_t − √(1−ᾱ_t) ε̂) / √ᾱ_t`.
pub fn estimate_x0(
    schedule: &NoiseSchedule,
    x_t: &[f64],
    eps_pred: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    if eps_pred.len() != x_t.len() {
        return Err(Error::DimensionMismatch {
            expected: x_t.len(),
            got: eps_pred.len(),
        });
    }
    let ab = schedule.alpha_bar(t);
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t
        .iter()
        .zip(eps_pred)
        .map(|(x, e)| (x - noise * e) / signal)
        .collect())
}

/// Choice of `σ_t` in the ancestral update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaRule {
    /// `σ_t = √(1 − α_t)`.
    #[default]
    SqrtOneMinusAlpha,
    /// Deterministic update.
    Zero,
}

impl SigmaRule {
    /// `σ_t`; always zero at `t = 1` so the last step is deterministic.
    pub fn sigma(self, schedule: &NoiseSchedule, t: usize) -> f64 {
        match self {
            _ if t == 1 => 0.0,
            SigmaRule::SqrtOneMinusAlpha => (1.0 - schedule.alpha(t)).sqrt(),
            SigmaRule::Zero => 0.0,
        }
    }
}

/// One DDPM ancestral step `x_t → x_{t−1}`.
pub fn ddpm_step<D, R>(
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    denoiser: &D,
    condition: Condition,
    sigma_rule: SigmaRule,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    schedule.check_t(t)?;
    let eps_pred = denoiser.predict_eps(x_t, t, condition)?;
    if eps_pred.len() != x_t.len() {
        return Err(Error::DimensionMismatch {
            expected: x_t.len(),
            got: eps_pred.len(),
        });
    }
    let alpha = schedule.alpha(t);
    let coef = (1.0 - alpha) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let scale = 1.0 / alpha.sqrt();
    let sigma = sigma_rule.sigma(schedule, t);

    let mut next: Vec<f64> = x_t
        .iter()
        .zip(&eps_pred)
        .map(|(x, e)| scale * (x - coef * e))
        .collect();
    if sigma > 0.0 {
        for v in next.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    Ok(next)
}

/// Full ancestral chain `t = T → 1` starting from `x_T ~ N(0, I)`.
pub fn ancestral_sample<D, R>(
    schedule: &NoiseSchedule,
    denoiser: &D,
    condition: Condition,
    sigma_rule: SigmaRule,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    let mut x = standard_normal_vec(denoiser.dim(), rng);
    for t in (1..=schedule.max_t()).rev() {
        x = ddpm_step(schedule, &x, t, denoiser, condition, sigma_rule, rng)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct ZeroDenoiser(usize);

    impl Denoiser for ZeroDenoiser {
        fn dim(&self) -> usize {
            self.0
        }

        fn predict_eps(&self, x_t: &[f64], _t: usize, _c: Condition) -> Result<Vec<f64>> {
            Ok(vec![0.0; x_t.len()])
        }
    }

    #[test]
    fn linear_endpoints() {
        let s = NoiseSchedule::new(ScheduleKind::DdpmLinear, 1000).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(1000), 2e-2);
    }

    #[test]
    fn two_step_linear_product() {
        let s = NoiseSchedule::new(ScheduleKind::DdpmLinear, 2).unwrap();
        assert_relative_eq!(
            s.alpha_bar(2),
            (1.0 - 1e-4) * (1.0 - 2e-2),
            max_relative = 1e-15
        );
    }

    #[test]
    fn rejects_short_schedule() {
        for kind in [ScheduleKind::DdpmLinear, ScheduleKind::Cosine] {
            assert!(matches!(
                NoiseSchedule::new(kind, 1),
                Err(Error::InvalidArgument(_))
            ));
            assert!(NoiseSchedule::new(kind, 0).is_err());
        }
    }

    #[test]
    fn schedule_invariants() {
        for kind in [ScheduleKind::DdpmLinear, ScheduleKind::Cosine] {
            for max_t in [2, 10, 1000] {
                let s = NoiseSchedule::new(kind, max_t).unwrap();
                let mut prev = 1.0;
                let mut prev_snr = f64::INFINITY;
                for t in 1..=max_t {
                    assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0, "{kind:?} beta({t})");
                    assert_eq!(s.alpha(t), 1.0 - s.beta(t));
                    let ab = s.alpha_bar(t);
                    assert!(ab > 0.0 && ab < prev, "{kind:?} T={max_t} t={t}");
                    assert!((ab / prev - s.alpha(t)).abs() <= 1e-12 * s.alpha(t));
                    assert!(s.snr(t) < prev_snr);
                    prev = ab;
                    prev_snr = s.snr(t);
                }
            }
        }
    }

    #[test]
    fn cosine_beta_is_clipped() {
        let s = NoiseSchedule::new(ScheduleKind::Cosine, 1000).unwrap();
        assert!(s.betas().iter().all(|&b| b <= 0.999));
        assert_eq!(s.beta(1000), 0.999);
    }

    #[test]
    fn zero_noise_scales_signal() {
        let s = NoiseSchedule::new(ScheduleKind::DdpmLinear, 100).unwrap();
        let x = [1.5, -2.0, 0.25];
        let n = noise_with(&s, &x, vec![0.0; 3], 40).unwrap();
        let k = s.alpha_bar(40).sqrt();
        for (a, b) in n.x_t.iter().zip(&x) {
            assert_eq!(*a, k * b);
        }
    }

    #[test]
    fn noise_sample_rejects_bad_input() {
        let s = NoiseSchedule::new(ScheduleKind::DdpmLinear, 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            noise_sample(&s, &[0.0], 0, &mut rng),
            Err(Error::TimestepOutOfRange { t: 0, max_t: 100 })
        ));
        assert!(noise_sample(&s, &[0.0], 101, &mut rng).is_err());
        assert!(noise_sample(&s, &[f64::NAN], 5, &mut rng).is_err());
    }

    #[test]
    fn estimate_x0_with_zero_eps() {
        let s = NoiseSchedule::new(ScheduleKind::Cosine, 50).unwrap();
        let x0 = estimate_x0(&s, &[2.0, -1.0], &[0.0, 0.0], 30).unwrap();
        let k = s.alpha_bar(30).sqrt();
        assert_relative_eq!(x0[0], 2.0 / k);
        assert_relative_eq!(x0[1], -1.0 / k);
        assert!(estimate_x0(&s, &[1.0], &[0.0, 0.0], 3).is_err());
    }

    #[test]
    fn zero_denoiser_step_rescales() {
        let s = NoiseSchedule::new(ScheduleKind::DdpmLinear, 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = [0.3, -0.7];
        let out = ddpm_step(
            &s,
            &x,
            60,
            &ZeroDenoiser(2),
            Condition(0),
            SigmaRule::Zero,
            &mut rng,
        )
        .unwrap();
        for (a, b) in out.iter().zip(&x) {
            assert_relative_eq!(*a, b / s.alpha(60).sqrt(), max_relative = 1e-15);
        }
    }

    #[test]
    fn final_step_is_deterministic() {
        let s = NoiseSchedule::new(ScheduleKind::DdpmLinear, 10).unwrap();
        assert_eq!(SigmaRule::SqrtOneMinusAlpha.sigma(&s, 1), 0.0);
        assert!(SigmaRule::SqrtOneMinusAlpha.sigma(&s, 2) > 0.0);
        let x = [1.0, 2.0];
        let a = ddpm_step(
            &s,
            &x,
            1,
            &ZeroDenoiser(2),
            Condition(0),
            SigmaRule::SqrtOneMinusAlpha,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let b = ddpm_step(
            &s,
            &x,
            1,
            &ZeroDenoiser(2),
            Condition(0),
            SigmaRule::SqrtOneMinusAlpha,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
