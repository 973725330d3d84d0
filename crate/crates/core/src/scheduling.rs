//! Timestep schedules for score distillation.
//!
//! The prioritized schedule assigns each timestep a weight
//! `W(t) = W_d(t) · W_p(t) / Z` with `W_d(t) = √((1−ᾱ_t)/ᾱ_t)` and
//! `W_p(t) = exp(−(t−m)² / 2s²)`. Iteration `i` of `N` then runs at the
//! timestep whose tail mass `Σ_{t ≥ t'} W(t)` is closest to `i/N`, so
//! timesteps with large weight are held for many iterations and
//! low-weight timesteps are passed quickly.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};

/// Which factors enter the product `W_d · W_p`. An omitted factor is
/// replaced by 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFactors {
    Both,
    /// `W = W_p`.
    PerceptionOnly,
    /// `W = W_d`.
    DiffusionOnly,
    /// `W = 1/T`.
    Flat,
}

/// Normalized prior weight over timesteps, plus its tail-sum table.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorWeight {
    m: f64,
    s: f64,
    factors: WeightFactors,
    w_d: Vec<f64>,
    w_p: Vec<f64>,
    w: Vec<f64>,
    cum: Vec<f64>,
    normalizer: f64,
}

impl PriorWeight {
    pub fn new(schedule: &NoiseSchedule, m: f64, s: f64) -> Result<Self> {
        Self::with_factors(schedule, m, s, WeightFactors::Both)
    }

    pub fn with_factors(
        schedule: &NoiseSchedule,
        m: f64,
        s: f64,
        factors: WeightFactors,
    ) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::invalid(format!(
                "prior width s must be > 0, got {s}"
            )));
        }
        if !m.is_finite() {
            return Err(Error::invalid(format!(
                "prior center m must be finite, got {m}"
            )));
        }
        let max_t = schedule.max_t();
        let w_d: Vec<f64> = (1..=max_t).map(|t| schedule.inv_sqrt_snr(t)).collect();
        let w_p: Vec<f64> = (1..=max_t)
            .map(|t| {
                let z = t as f64 - m;
                (-(z * z) / (2.0 * s * s)).exp()
            })
            .collect();
        let raw: Vec<f64> = w_d
            .iter()
            .zip(&w_p)
            .map(|(d, p)| match factors {
                WeightFactors::Both => d * p,
                WeightFactors::PerceptionOnly => *p,
                WeightFactors::DiffusionOnly => *d,
                WeightFactors::Flat => 1.0,
            })
            .collect();
        let normalizer: f64 = raw.iter().sum();
        if !(normalizer.is_finite() && normalizer > 0.0) {
            return Err(Error::invalid(format!(
                "prior weight has no mass on 1..={max_t} (m = {m}, s = {s})"
            )));
        }
        let w: Vec<f64> = raw.iter().map(|r| r / normalizer).collect();

        let mut cum = vec![0.0; max_t];
        let mut acc = 0.0;
        for idx in (0..max_t).rev() {
            acc += w[idx];
            cum[idx] = acc;
        }
        // Rescale so the full tail is exactly 1 and `i = N` lands on `t = 1`.
        for c in &mut cum {
            *c /= acc;
        }

        Ok(Self {
            m,
            s,
            factors,
            w_d,
            w_p,
            w,
            cum,
            normalizer,
        })
    }

    /// Constant weight `1/T`; the schedule descends linearly.
    pub fn flat(schedule: &NoiseSchedule) -> Result<Self> {
        Self::with_factors(schedule, 0.0, 1.0, WeightFactors::Flat)
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn factors(&self) -> WeightFactors {
        self.factors
    }

    pub fn max_t(&self) -> usize {
        self.w.len()
    }

    /// `Z`, the sum of the unnormalized product over `1..=T`.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// `W_d`, indexed from `t = 1`.
    pub fn w_d(&self) -> &[f64] {
        &self.w_d
    }

    pub fn w_p(&self) -> &[f64] {
        &self.w_p
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// `cum[t'−1] = Σ_{t=t'}^{T} W(t)`; non-increasing in `t'`.
    pub fn tail_mass(&self) -> &[f64] {
        &self.cum
    }

    pub fn weight(&self, t: usize) -> f64 {
        self.w[t - 1]
    }

    /// The `t` maximizing `W(t)`, smallest on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (idx, w) in self.w.iter().enumerate() {
            if *w > self.w[best] {
                best = idx;
            }
        }
        best + 1
    }

    /// Timestep for iteration `i` of `n`:
    /// `argmin_{t'} |Σ_{t ≥ t'} W(t) − i/n|`, ties toward the larger `t'`.
    pub fn timestep(&self, i: usize, n: usize) -> Result<usize> {
        check_iteration(i, n)?;
        Ok(self.timestep_for_quantile(i as f64 / n as f64))
    }

    fn timestep_for_quantile(&self, q: f64) -> usize {
        let dist = |idx: usize| (self.cum[idx] - q).abs();
        // `cum` is non-increasing, so entries with `cum >= q` form a prefix.
        let k = self.cum.partition_point(|&c| c >= q);
        let left = k.checked_sub(1);
        let mut right = (k < self.cum.len()).then_some(k);
        // Equal distances past the crossing would win the tie; walk to the last.
        if let Some(mut r) = right {
            let d = dist(r);
            while r + 1 < self.cum.len() && dist(r + 1) == d {
                r += 1;
            }
            right = Some(r);
        }
        let idx = match (left, right) {
            (Some(l), Some(r)) => {
                if dist(r) <= dist(l) {
                    r
                } else {
                    l
                }
            }
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (None, None) => unreachable!("tail-mass table is never empty"),
        };
        idx + 1
    }
}

fn check_iteration(i: usize, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("total iterations N must be >= 1"));
    }
    if i == 0 || i > n {
        return Err(Error::invalid(format!(
            "iteration {i} out of range 1..={n}"
        )));
    }
    Ok(())
}

/// A map from iteration `i` of `N` to a diffusion timestep.
#[derive(Debug, Clone, PartialEq)]
pub enum TimestepSampler {
    /// `t ~ U{t_min..=t_max}`, independent each iteration.
    UniformRandom {
        t_min: usize,
        t_max: usize,
    },
    /// Weighted non-increasing descent over a [`PriorWeight`]. Which factors
    /// are active distinguishes the full prior from the `W_p`-only and
    /// `W_d`-only ablations.
    Prioritized(PriorWeight),
    /// `round(T − (i−1)(T−1)/(N−1))`.
    Linear {
        max_t: usize,
    },
    /// Linear descent, never below `floor`.
    TruncatedLinear {
        max_t: usize,
        floor: usize,
    },
    Constant {
        t: usize,
    },
    /// `round(t_max − (t_max − t_min)(i/N)^p)`.
    PowerAnnealed {
        t_max: usize,
        t_min: usize,
        power: f64,
    },
    /// Uniform draws from `stage1` while `i/N <= boundary_fraction`, then
    /// from `stage2`.
    TwoStage {
        boundary_fraction: f64,
        stage1: RangeInclusive<usize>,
        stage2: RangeInclusive<usize>,
    },
}

pub const DEFAULT_POWER_T_MAX: usize = 980;
pub const DEFAULT_POWER_T_MIN: usize = 20;
pub const DEFAULT_POWER: f64 = 0.5;
pub const DEFAULT_TWO_STAGE_BOUNDARY: f64 = 0.5;
pub const DEFAULT_TWO_STAGE_STAGE1: RangeInclusive<usize> = 20..=980;
pub const DEFAULT_TWO_STAGE_STAGE2: RangeInclusive<usize> = 20..=500;

impl TimestepSampler {
    pub fn uniform(schedule: &NoiseSchedule) -> Self {
        TimestepSampler::UniformRandom {
            t_min: 1,
            t_max: schedule.max_t(),
        }
    }

    pub fn uniform_range(schedule: &NoiseSchedule, t_min: usize, t_max: usize) -> Result<Self> {
        check_range(schedule, "uniform_random", t_min, t_max)?;
        Ok(TimestepSampler::UniformRandom { t_min, t_max })
    }

    pub fn time_prioritized(schedule: &NoiseSchedule, m: f64, s: f64) -> Result<Self> {
        Ok(TimestepSampler::Prioritized(PriorWeight::new(
            schedule, m, s,
        )?))
    }

    pub fn wp_only(schedule: &NoiseSchedule, m: f64, s: f64) -> Result<Self> {
        Ok(TimestepSampler::Prioritized(PriorWeight::with_factors(
            schedule,
            m,
            s,
            WeightFactors::PerceptionOnly,
        )?))
    }

    pub fn wd_only(schedule: &NoiseSchedule) -> Result<Self> {
        // m and s are unused when W_p is dropped.
        Ok(TimestepSampler::Prioritized(PriorWeight::with_factors(
            schedule,
            0.0,
            1.0,
            WeightFactors::DiffusionOnly,
        )?))
    }

    pub fn linear(schedule: &NoiseSchedule) -> Self {
        TimestepSampler::Linear {
            max_t: schedule.max_t(),
        }
    }

    pub fn truncated_linear(schedule: &NoiseSchedule, floor: usize) -> Result<Self> {
        if floor == 0 || floor > schedule.max_t() {
            return Err(Error::invalid(format!(
                "truncation floor {floor} outside 1..={}",
                schedule.max_t()
            )));
        }
        Ok(TimestepSampler::TruncatedLinear {
            max_t: schedule.max_t(),
            floor,
        })
    }

    pub fn constant(schedule: &NoiseSchedule, t: usize) -> Result<Self> {
        schedule.check_t(t)?;
        Ok(TimestepSampler::Constant { t })
    }

    pub fn power_annealed(
        schedule: &NoiseSchedule,
        t_max: usize,
        t_min: usize,
        power: f64,
    ) -> Result<Self> {
        check_range(schedule, "power_annealed", t_min, t_max)?;
        if !(power.is_finite() && power > 0.0) {
            return Err(Error::invalid(format!(
                "annealing power must be > 0, got {power}"
            )));
        }
        Ok(TimestepSampler::PowerAnnealed {
            t_max,
            t_min,
            power,
        })
    }

    pub fn two_stage(
        schedule: &NoiseSchedule,
        boundary_fraction: f64,
        stage1: RangeInclusive<usize>,
        stage2: RangeInclusive<usize>,
    ) -> Result<Self> {
        if !(boundary_fraction > 0.0 && boundary_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "boundary_fraction must lie in (0, 1), got {boundary_fraction}"
            )));
        }
        check_range(schedule, "two_stage stage1", *stage1.start(), *stage1.end())?;
        check_range(schedule, "two_stage stage2", *stage2.start(), *stage2.end())?;
        Ok(TimestepSampler::TwoStage {
            boundary_fraction,
            stage1,
            stage2,
        })
    }

    /// Short identifier of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            TimestepSampler::UniformRandom { .. } => "uniform_random",
            TimestepSampler::Prioritized(p) => match p.factors() {
                WeightFactors::Both => "tp",
                WeightFactors::PerceptionOnly => "wp_only",
                WeightFactors::DiffusionOnly => "wd_only",
                WeightFactors::Flat => "flat",
            },
            TimestepSampler::Linear { .. } => "linear",
            TimestepSampler::TruncatedLinear { .. } => "truncated_linear",
            TimestepSampler::Constant { .. } => "constant",
            TimestepSampler::PowerAnnealed { .. } => "power_annealed",
            TimestepSampler::TwoStage { .. } => "two_stage",
        }
    }

    /// True when the sampler never touches its rng.
    pub fn is_deterministic(&self) -> bool {
        !matches!(
            self,
            TimestepSampler::UniformRandom { .. } | TimestepSampler::TwoStage { .. }
        )
    }

    pub fn prior(&self) -> Option<&PriorWeight> {
        match self {
            TimestepSampler::Prioritized(p) => Some(p),
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, i: usize, n: usize, rng: &mut R) -> Result<usize> {
        check_iteration(i, n)?;
        let t = match self {
            TimestepSampler::UniformRandom { t_min, t_max } => rng.random_range(*t_min..=*t_max),
            TimestepSampler::Prioritized(prior) => prior.timestep(i, n)?,
            TimestepSampler::Linear { max_t } => linear_descent(*max_t, i, n),
            TimestepSampler::TruncatedLinear { max_t, floor } => {
                linear_descent(*max_t, i, n).max(*floor)
            }
            TimestepSampler::Constant { t } => *t,
            TimestepSampler::PowerAnnealed {
                t_max,
                t_min,
                power,
            } => {
                let frac = (i as f64 / n as f64).powf(*power);
                let t = *t_max as f64 - (*t_max - *t_min) as f64 * frac;
                t.round() as usize
            }
            TimestepSampler::TwoStage {
                boundary_fraction,
                stage1,
                stage2,
            } => {
                if i as f64 / n as f64 <= *boundary_fraction {
                    rng.random_range(stage1.clone())
                } else {
                    rng.random_range(stage2.clone())
                }
            }
        };
        Ok(t)
    }

    /// Deterministic schedule as a vector; `None` for stochastic variants.
    pub fn trajectory(&self, n: usize) -> Option<Result<Vec<usize>>> {
        if !self.is_deterministic() {
            return None;
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        Some((1..=n).map(|i| self.sample(i, n, &mut rng)).collect())
    }
}

fn check_range(schedule: &NoiseSchedule, what: &str, lo: usize, hi: usize) -> Result<()> {
    if lo > hi {
        return Err(Error::invalid(format!("{what}: min {lo} > max {hi}")));
    }
    if lo == 0 || hi > schedule.max_t() {
        return Err(Error::invalid(format!(
            "{what}: range {lo}..={hi} outside 1..={}",
            schedule.max_t()
        )));
    }
    Ok(())
}

fn linear_descent(max_t: usize, i: usize, n: usize) -> usize {
    if n == 1 {
        return max_t;
    }
    let t = max_t as f64 - (i - 1) as f64 * (max_t - 1) as f64 / (n - 1) as f64;
    t.round() as usize
}

/// Free function form of [`PriorWeight::timestep`].
pub fn schedule_timestep(prior: &PriorWeight, i: usize, n: usize) -> Result<usize> {
    prior.timestep(i, n)
}

/// Free function form of [`TimestepSampler::sample`].
pub fn sample_timestep<R: Rng + ?Sized>(
    sampler: &TimestepSampler,
    i: usize,
    n: usize,
    rng: &mut R,
) -> Result<usize> {
    sampler.sample(i, n, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleKind;
    use rand_chacha::ChaCha8Rng;

    fn linear_1000() -> NoiseSchedule {
        NoiseSchedule::new(ScheduleKind::DdpmLinear, 1000).unwrap()
    }

    #[test]
    fn default_prior_is_normalized() {
        let p = PriorWeight::new(&linear_1000(), 500.0, 125.0).unwrap();
        let total: f64 = p.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!((p.tail_mass()[0] - 1.0).abs() < 1e-9);
        assert!(p.weights().iter().all(|w| *w > 0.0));
        assert!(p.tail_mass().windows(2).all(|c| c[0] > c[1]));
    }

    // Golden value from an independent full-table scan.
    #[test]
    fn default_prior_argmax() {
        let p = PriorWeight::new(&linear_1000(), 500.0, 125.0).unwrap();
        assert_eq!(p.argmax(), 597);
    }

    #[test]
    fn very_wide_prior_tracks_w_d() {
        let s = linear_1000();
        let p = PriorWeight::new(&s, 500.0, 1e9).unwrap();
        for (a, b) in [(1usize, 1000usize), (10, 700), (250, 500)] {
            let want = s.inv_sqrt_snr(a) / s.inv_sqrt_snr(b);
            let got = p.weight(a) / p.weight(b);
            assert!((got / want - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_width() {
        let s = linear_1000();
        assert!(PriorWeight::new(&s, 500.0, 0.0).is_err());
        assert!(PriorWeight::new(&s, 500.0, -3.0).is_err());
        assert!(PriorWeight::new(&s, 500.0, f64::NAN).is_err());
        // All of W_p underflows.
        assert!(PriorWeight::new(&s, 1e7, 1.0).is_err());
    }

    #[test]
    fn last_iteration_lands_on_one() {
        let s = linear_1000();
        for (m, sd) in [(500.0, 125.0), (100.0, 50.0), (900.0, 500.0)] {
            let p = PriorWeight::new(&s, m, sd).unwrap();
            for n in [1, 7, 2000] {
                assert_eq!(p.timestep(n, n).unwrap(), 1);
            }
        }
    }

    #[test]
    fn iteration_range_checked() {
        let p = PriorWeight::new(&linear_1000(), 500.0, 125.0).unwrap();
        assert!(p.timestep(0, 10).is_err());
        assert!(p.timestep(11, 10).is_err());
        assert!(p.timestep(1, 0).is_err());
    }

    #[test]
    fn skew_follows_w_d_slope() {
        for kind in [ScheduleKind::DdpmLinear, ScheduleKind::Cosine] {
            let s = NoiseSchedule::new(kind, 1000).unwrap();
            let p = PriorWeight::new(&s, 500.0, 125.0).unwrap();
            let slope = s.inv_sqrt_snr(501) - s.inv_sqrt_snr(499);
            let shift = p.argmax() as f64 - 500.0;
            assert_eq!(shift.signum(), slope.signum(), "{kind:?}");
        }
    }

    #[test]
    fn prioritized_skips_small_t_compared_to_linear() {
        let s = linear_1000();
        let tp = TimestepSampler::time_prioritized(&s, 500.0, 125.0).unwrap();
        let lin = TimestepSampler::linear(&s);
        let n = 10_000;
        let count = |smp: &TimestepSampler| {
            smp.trajectory(n)
                .unwrap()
                .unwrap()
                .iter()
                .filter(|&&t| t < 200)
                .count()
        };
        let (tp_small, lin_small) = (count(&tp), count(&lin));
        assert!(tp_small < lin_small, "tp {tp_small} vs linear {lin_small}");
    }

    #[test]
    fn sampler_endpoints() {
        let s = linear_1000();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            TimestepSampler::linear(&s)
                .sample(1, 100, &mut rng)
                .unwrap(),
            1000
        );
        assert_eq!(
            TimestepSampler::linear(&s)
                .sample(100, 100, &mut rng)
                .unwrap(),
            1
        );
        assert_eq!(
            TimestepSampler::linear(&s).sample(1, 1, &mut rng).unwrap(),
            1000
        );
        let trunc = TimestepSampler::truncated_linear(&s, 200).unwrap();
        assert_eq!(trunc.sample(100, 100, &mut rng).unwrap(), 200);
        assert_eq!(trunc.sample(1, 100, &mut rng).unwrap(), 1000);
        let pa = TimestepSampler::power_annealed(&s, 980, 20, 0.5).unwrap();
        assert_eq!(pa.sample(100, 100, &mut rng).unwrap(), 20);
        assert_eq!(
            TimestepSampler::constant(&s, 900)
                .unwrap()
                .sample(3, 5, &mut rng)
                .unwrap(),
            900
        );
    }

    #[test]
    fn malformed_ranges_rejected() {
        let s = linear_1000();
        assert!(TimestepSampler::uniform_range(&s, 10, 5).is_err());
        assert!(TimestepSampler::uniform_range(&s, 0, 5).is_err());
        assert!(TimestepSampler::uniform_range(&s, 1, 1001).is_err());
        assert!(TimestepSampler::truncated_linear(&s, 1001).is_err());
        assert!(TimestepSampler::constant(&s, 0).is_err());
        assert!(TimestepSampler::power_annealed(&s, 20, 980, 0.5).is_err());
        assert!(TimestepSampler::power_annealed(&s, 980, 20, 0.0).is_err());
        assert!(TimestepSampler::two_stage(&s, 1.0, 20..=980, 20..=500).is_err());
        #[allow(clippy::reversed_empty_ranges)]
        let reversed = 980..=20;
        assert!(TimestepSampler::two_stage(&s, 0.5, reversed, 20..=500).is_err());
    }

    #[test]
    fn two_stage_respects_boundary() {
        let s = linear_1000();
        let smp = TimestepSampler::two_stage(&s, 0.5, 600..=980, 20..=500).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 1..=100 {
            let t = smp.sample(i, 100, &mut rng).unwrap();
            if i <= 50 {
                assert!((600..=980).contains(&t));
            } else {
                assert!((20..=500).contains(&t));
            }
        }
    }

    #[test]
    fn deterministic_samplers_ignore_rng() {
        let s = linear_1000();
        let samplers = [
            TimestepSampler::time_prioritized(&s, 500.0, 125.0).unwrap(),
            TimestepSampler::linear(&s),
            TimestepSampler::wd_only(&s).unwrap(),
            TimestepSampler::power_annealed(&s, 980, 20, 0.3).unwrap(),
        ];
        for smp in &samplers {
            let mut a = ChaCha8Rng::seed_from_u64(1);
            let mut b = ChaCha8Rng::seed_from_u64(2);
            for i in (1..=500).step_by(37) {
                assert_eq!(
                    smp.sample(i, 500, &mut a).unwrap(),
                    smp.sample(i, 500, &mut b).unwrap()
                );
            }
        }
        assert!(TimestepSampler::uniform(&s).trajectory(10).is_none());
    }
}
