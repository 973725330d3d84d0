//! Measurements over finished runs and images.
//!
//! Mode coverage and first-passage statistics work on distances to the
//! mixture means, so they can be computed both from in-memory
//! [`TrajectoryRecord`]s and from trajectory CSVs read back from disk.
//!
//! The spectrum uses the unnormalized forward DFT
//! `X[k] = Σ_n x[n] e^{−2πi k·n / (H, W)}`, for which Parseval reads
//! `Σ |X|² = H·W · Σ x²`.

use std::collections::BTreeMap;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::GaussianMixture;
use crate::sds::{RunStatus, TrajectoryRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub tau: f64,
    /// Runs ending within `tau` of each mode.
    pub counts: Vec<usize>,
    /// Runs ending farther than `tau` from every mode, or diverged.
    pub unconverged: usize,
    /// `−Σ p_k ln p_k` over converged runs; 0 when none converged.
    pub entropy: f64,
    pub n_seeds: usize,
}

impl DiversityReport {
    pub fn converged(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Share of all runs that ended at mode `k`.
    pub fn fraction(&self, k: usize) -> f64 {
        self.counts[k] as f64 / self.n_seeds as f64
    }
}

/// Coverage from each run's final distance-to-mode vector (`None` for a
/// run without a finite end state).
pub fn coverage_from_final_distances(
    finals: &[Option<Vec<f64>>],
    num_modes: usize,
    tau: f64,
) -> Result<DiversityReport> {
    if finals.is_empty() {
        return Err(Error::invalid("mode coverage needs at least one run"));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::invalid(format!("tau must be > 0, got {tau}")));
    }
    let mut counts = vec![0usize; num_modes];
    let mut unconverged = 0;
    for dists in finals {
        match dists.as_deref().and_then(|d| nearest(d, num_modes)) {
            Some((k, d)) if d <= tau => counts[k] += 1,
            _ => unconverged += 1,
        }
    }
    let converged: usize = counts.iter().sum();
    let entropy = if converged == 0 {
        0.0
    } else {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / converged as f64;
                -p * p.ln()
            })
            .sum()
    };
    Ok(DiversityReport {
        tau,
        counts,
        unconverged,
        entropy,
        n_seeds: finals.len(),
    })
}

fn nearest(dists: &[f64], num_modes: usize) -> Option<(usize, f64)> {
    if dists.len() != num_modes {
        return None;
    }
    dists
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, d)| d.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

fn final_distances(record: &TrajectoryRecord, mixture: &GaussianMixture) -> Option<Vec<f64>> {
    match record.status {
        RunStatus::Completed => record.final_theta().map(|th| mixture.mode_distances(th)),
        RunStatus::Diverged { .. } => None,
    }
}

/// Assigns each run's final parameters to its nearest mode when within `tau`.
pub fn mode_coverage(
    trajectories: &[TrajectoryRecord],
    mixture: &GaussianMixture,
    tau: f64,
) -> Result<DiversityReport> {
    let finals: Vec<_> = trajectories
        .iter()
        .map(|r| final_distances(r, mixture))
        .collect();
    coverage_from_final_distances(&finals, mixture.num_components(), tau)
}

/// First iteration whose nearest-mode distance is below `tau`.
pub fn first_passage<I, D>(distance_rows: I, tau: f64) -> Option<usize>
where
    I: IntoIterator<Item = (usize, D)>,
    D: AsRef<[f64]>,
{
    distance_rows.into_iter().find_map(|(i, d)| {
        let min = d.as_ref().iter().copied().fold(f64::INFINITY, f64::min);
        (min < tau).then_some(i)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPassage {
    pub sampler: String,
    pub seed: u64,
    pub iterations: usize,
    /// Absent when the run never came within `tau` (censored).
    pub first_passage: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageSummary {
    pub n_runs: usize,
    pub censored: usize,
    /// Quartiles over uncensored runs only.
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    /// Median with censored runs counted at `N`.
    pub median_censored_at_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub tau: f64,
    pub runs: Vec<RunPassage>,
    pub by_sampler: BTreeMap<String, PassageSummary>,
}

impl ConvergenceReport {
    pub fn from_passages(runs: Vec<RunPassage>, tau: f64) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::invalid("convergence stats need at least one run"));
        }
        if tau.is_nan() || tau <= 0.0 {
            return Err(Error::invalid(format!("tau must be > 0, got {tau}")));
        }
        let mut grouped: BTreeMap<String, Vec<&RunPassage>> = BTreeMap::new();
        for run in &runs {
            grouped.entry(run.sampler.clone()).or_default().push(run);
        }
        let by_sampler = grouped
            .into_iter()
            .map(|(name, group)| (name, summarize(&group)))
            .collect();
        Ok(Self {
            tau,
            runs,
            by_sampler,
        })
    }

    pub fn summary(&self, sampler: &str) -> Option<&PassageSummary> {
        self.by_sampler.get(sampler)
    }
}

fn summarize(group: &[&RunPassage]) -> PassageSummary {
    let mut passed: Vec<f64> = group
        .iter()
        .filter_map(|r| r.first_passage.map(|i| i as f64))
        .collect();
    passed.sort_by(f64::total_cmp);
    let mut all: Vec<f64> = group
        .iter()
        .map(|r| r.first_passage.unwrap_or(r.iterations) as f64)
        .collect();
    all.sort_by(f64::total_cmp);
    PassageSummary {
        n_runs: group.len(),
        censored: group.len() - passed.len(),
        median: quantile(&passed, 0.5),
        q1: quantile(&passed, 0.25),
        q3: quantile(&passed, 0.75),
        median_censored_at_n: quantile(&all, 0.5).expect("group is non-empty"),
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Per-run first-passage iterations, summarized per sampler.
pub fn convergence_stats(
    trajectories: &[TrajectoryRecord],
    mixture: &GaussianMixture,
    tau: f64,
) -> Result<ConvergenceReport> {
    let runs = trajectories
        .iter()
        .map(|r| RunPassage {
            sampler: r.sampler.clone(),
            seed: r.seed,
            iterations: r.iterations,
            first_passage: first_passage(
                r.rows
                    .iter()
                    .map(|row| (row.i, mixture.mode_distances(&row.theta))),
                tau,
            ),
        })
        .collect();
    ConvergenceReport::from_passages(runs, tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub height: usize,
    pub width: usize,
    /// Integer radius of each annulus, `0..floor(min(H, W)/2)`.
    pub radii: Vec<usize>,
    /// Number of 2-D frequencies in each annulus.
    pub counts: Vec<usize>,
    /// Mean power per annulus.
    pub power: Vec<f64>,
    /// Power over the full 2-D spectrum, including corners past the last annulus.
    pub total_power: f64,
    /// Share of `total_power` in the lowest quarter of annuli (at least the
    /// DC bin); 0 for an all-zero image.
    pub low_frequency_fraction: f64,
}

impl SpectrumReport {
    pub fn num_bins(&self) -> usize {
        self.radii.len()
    }
}

fn check_grid(image: &Array2<f64>) -> Result<()> {
    let (h, w) = image.dim();
    if h < 4 || w < 4 {
        return Err(Error::invalid(format!(
            "spectrum needs a grid of at least 4x4, got {h}x{w}"
        )));
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("spectrum input contains non-finite values"));
    }
    Ok(())
}

/// `|DFT|²` with the DC term moved to `(H/2, W/2)`.
pub fn power_grid(image: &Array2<f64>) -> Result<Array2<f64>> {
    check_grid(image)?;
    let (h, w) = image.dim();
    let mut data: Array2<Complex64> = image.mapv(|v| Complex64::new(v, 0.0));
    let mut planner = FftPlanner::<f64>::new();

    let row_fft = planner.plan_fft_forward(w);
    for mut row in data.rows_mut() {
        let mut buf: Vec<Complex64> = row.to_vec();
        row_fft.process(&mut buf);
        row.assign(&ndarray::ArrayView1::from(&buf));
    }
    let col_fft = planner.plan_fft_forward(h);
    for mut col in data.columns_mut() {
        let mut buf: Vec<Complex64> = col.to_vec();
        col_fft.process(&mut buf);
        col.assign(&ndarray::ArrayView1::from(&buf));
    }

    let mut shifted = Array2::zeros((h, w));
    for ((y, x), v) in data.indexed_iter() {
        shifted[[(y + h / 2) % h, (x + w / 2) % w]] = v.norm_sqr();
    }
    Ok(shifted)
}

/// Radially averaged power spectrum over integer-radius annuli.
pub fn radial_power_spectrum(image: &Array2<f64>) -> Result<SpectrumReport> {
    let grid = power_grid(image)?;
    let (h, w) = grid.dim();
    let bins = h.min(w) / 2;
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for ((y, x), p) in grid.indexed_iter() {
        let r = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
        let bin = r.round() as usize;
        if bin < bins {
            sums[bin] += p;
            counts[bin] += 1;
        }
    }
    let total_power: f64 = grid.sum();
    let low_bins = bins.div_ceil(4).max(1);
    let low: f64 = sums[..low_bins].iter().sum();
    let low_frequency_fraction = if total_power > 0.0 {
        low / total_power
    } else {
        0.0
    };
    let power = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(SpectrumReport {
        height: h,
        width: w,
        radii: (0..bins).collect(),
        counts,
        power,
        total_power,
        low_frequency_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sds::TrajectoryRow;

    fn record(sampler: &str, seed: u64, path: &[[f64; 2]]) -> TrajectoryRecord {
        TrajectoryRecord {
            sampler: sampler.into(),
            seed,
            iterations: path.len(),
            rows: path
                .iter()
                .enumerate()
                .map(|(k, th)| TrajectoryRow {
                    i: k + 1,
                    t: 1,
                    grad_norm: 0.0,
                    grad_variance_est: None,
                    x0_loss: 0.0,
                    theta: th.to_vec(),
                })
                .collect(),
            status: RunStatus::Completed,
        }
    }

    #[test]
    fn full_collapse_has_zero_entropy() {
        let g = GaussianMixture::bimodal_far();
        let runs: Vec<_> = (0..10).map(|s| record("a", s, &[[4.0, 0.01]])).collect();
        let rep = mode_coverage(&runs, &g, 0.2).unwrap();
        assert_eq!(rep.counts, vec![10, 0]);
        assert_eq!(rep.entropy, 0.0);
    }

    #[test]
    fn even_split_has_log2_entropy() {
        let g = GaussianMixture::bimodal_far();
        let runs: Vec<_> = (0..50)
            .map(|s| record("a", s, &[[if s % 2 == 0 { 4.0 } else { -4.0 }, 0.0]]))
            .collect();
        let rep = mode_coverage(&runs, &g, 0.2).unwrap();
        assert_eq!(rep.counts, vec![25, 25]);
        assert!((rep.entropy - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn far_runs_are_unconverged() {
        let g = GaussianMixture::bimodal_far();
        let mut runs: Vec<_> = (0..6).map(|s| record("a", s, &[[0.0, 0.0]])).collect();
        runs[0].status = RunStatus::Diverged {
            iteration: 1,
            t: 1,
            grad_norm: f64::INFINITY,
        };
        let rep = mode_coverage(&runs, &g, 0.2).unwrap();
        assert_eq!(rep.unconverged, 6);
        assert_eq!(rep.converged(), 0);
        assert_eq!(rep.entropy, 0.0);
        assert!(mode_coverage(&[], &g, 0.2).is_err());
        assert!(mode_coverage(&runs, &g, 0.0).is_err());
    }

    #[test]
    fn first_passage_and_censoring() {
        let g = GaussianMixture::bimodal_far();
        let runs = vec![
            record("a", 0, &[[4.0, 0.0], [4.0, 0.0]]),
            record("a", 1, &[[0.0, 0.0], [3.0, 0.0], [3.9, 0.0]]),
            record("b", 0, &[[0.0, 0.0], [0.0, 0.0]]),
        ];
        let rep = convergence_stats(&runs, &g, 0.2).unwrap();
        assert_eq!(rep.runs[0].first_passage, Some(1));
        assert_eq!(rep.runs[1].first_passage, Some(3));
        assert_eq!(rep.runs[2].first_passage, None);
        let b = rep.summary("b").unwrap();
        assert_eq!(
            (b.censored, b.median, b.median_censored_at_n),
            (1, None, 2.0)
        );
        assert_eq!(rep.summary("a").unwrap().median, Some(2.0));

        // Raising tau can only move first passage earlier.
        let wider = convergence_stats(&runs, &g, 1.5).unwrap();
        for (narrow, wide) in rep.runs.iter().zip(&wider.runs) {
            match (narrow.first_passage, wide.first_passage) {
                (Some(a), Some(b)) => assert!(b <= a),
                (Some(_), None) => panic!("wider tau lost a passage"),
                _ => {}
            }
        }
    }

    #[test]
    fn quantiles_interpolate() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), Some(2.5));
        assert_eq!(quantile(&[7.0], 0.25), Some(7.0));
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn constant_image_is_all_dc() {
        let img = Array2::from_elem((8, 12), 0.5);
        let rep = radial_power_spectrum(&img).unwrap();
        assert_eq!(rep.num_bins(), 4);
        assert!((rep.low_frequency_fraction - 1.0).abs() < 1e-15);
        assert!(rep.power[1..].iter().all(|p| p.abs() < 1e-20));
    }

    #[test]
    fn rejects_tiny_grids() {
        assert!(radial_power_spectrum(&Array2::zeros((3, 8))).is_err());
        assert!(radial_power_spectrum(&Array2::from_elem((4, 4), f64::NAN)).is_err());
        assert!(radial_power_spectrum(&Array2::zeros((4, 4))).is_ok());
    }

    #[test]
    fn sinusoid_lands_in_its_annulus() {
        let (h, w) = (32, 32);
        let img = Array2::from_shape_fn((h, w), |(y, x)| {
            (2.0 * std::f64::consts::PI * (3.0 * y as f64 / h as f64 + 4.0 * x as f64 / w as f64))
                .cos()
        });
        let rep = radial_power_spectrum(&img).unwrap();
        let in_bin = rep.power[5] * rep.counts[5] as f64;
        assert!(in_bin / rep.total_power >= 0.95);
    }
}
