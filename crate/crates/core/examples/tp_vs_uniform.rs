//! Optimizing one parameter vector toward a bimodal prior with uniform and
//! time-prioritized timesteps.
//!
//! ```text
//! cargo run --release --example tp_vs_uniform
//! ```

use sds_lab::diagnostics::first_passage;
use sds_lab::{
    optimize, GaussianMixture, GmmDenoiser, NoiseSchedule, ScheduleKind, SdsConfig, TimestepSampler,
};

fn main() -> sds_lab::Result<()> {
    let schedule = NoiseSchedule::new(ScheduleKind::Cosine, 1000)?;
    let mixture = GaussianMixture::bimodal_far();
    let denoiser = GmmDenoiser::new(schedule.clone(), mixture.clone());
    let samplers = [
        TimestepSampler::uniform(&schedule),
        TimestepSampler::time_prioritized(&schedule, 500.0, 125.0)?,
    ];

    println!(
        "{:<18} {:>6} {:>22} {:>12} {:>14}",
        "sampler", "seed", "final theta", "nearest", "first < 0.2"
    );
    for sampler in &samplers {
        for seed in 0..5 {
            let config = SdsConfig {
                seed,
                ..SdsConfig::default()
            };
            let (theta, record) = optimize(&schedule, &denoiser, sampler, &[0.0, 0.0], &config)?;
            let nearest = mixture
                .mode_distances(&theta)
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            let passage = first_passage(
                record
                    .rows
                    .iter()
                    .map(|r| (r.i, mixture.mode_distances(&r.theta))),
                0.2,
            );
            println!(
                "{:<18} {:>6} {:>22} {:>12.4} {:>14}",
                sampler.kind(),
                seed,
                format!("({:.3}, {:.3})", theta[0], theta[1]),
                nearest,
                passage.map_or("never".into(), |i| i.to_string())
            );
        }
    }
    Ok(())
}
