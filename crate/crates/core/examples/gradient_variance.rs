//! Variance of the distillation gradient as a function of `t`.
//!
//! ```text
//! cargo run --release --example gradient_variance
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sds_lab::sds::gradient_variance_sweep;
use sds_lab::{Condition, GaussianMixture, GmmDenoiser, NoiseSchedule, ScheduleKind};

fn main() -> sds_lab::Result<()> {
    let schedule = NoiseSchedule::new(ScheduleKind::DdpmLinear, 1000)?;
    let denoiser = GmmDenoiser::new(
        schedule.clone(),
        GaussianMixture::single(vec![0.0, 0.0], 1.0)?,
    );
    let theta = [1.0, -0.5];
    let ts: Vec<usize> = (1..=10).map(|k| k * 100).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sweep = gradient_variance_sweep(
        &schedule,
        &denoiser,
        &theta,
        &ts,
        20_000,
        Condition(0),
        &mut rng,
    )?;

    println!("theta = {theta:?}, single unit Gaussian at the origin");
    println!(
        "{:>6} {:>14} {:>14} {:>22}",
        "t", "trace", "alpha_bar^2", "mean"
    );
    for est in sweep {
        let ab = schedule.alpha_bar(est.t);
        println!(
            "{:>6} {:>14.6} {:>14.6} {:>22}",
            est.t,
            est.trace / theta.len() as f64,
            ab * ab,
            format!("({:.4}, {:.4})", est.mean[0], est.mean[1])
        );
    }
    Ok(())
}
