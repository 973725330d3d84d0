//! Ancestral sampling of a Gaussian mixture with its exact denoiser.
//!
//! ```text
//! cargo run --release --example ancestral_sampling
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sds_lab::diffusion::ancestral_sample;
use sds_lab::{Condition, GaussianMixture, GmmDenoiser, NoiseSchedule, ScheduleKind, SigmaRule};

fn main() -> sds_lab::Result<()> {
    let schedule = NoiseSchedule::new(ScheduleKind::DdpmLinear, 1000)?;
    let mixture = GaussianMixture::quad();
    let denoiser = GmmDenoiser::new(schedule.clone(), mixture.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let n = 1000;
    let mut counts = vec![0usize; mixture.num_components()];
    for _ in 0..n {
        let x = ancestral_sample(
            &schedule,
            &denoiser,
            Condition(0),
            SigmaRule::SqrtOneMinusAlpha,
            &mut rng,
        )?;
        let d = mixture.mode_distances(&x);
        let k = (0..d.len()).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
        counts[k] += 1;
    }

    println!("{n} samples from the `quad` mixture");
    println!(
        "{:>6} {:>18} {:>8} {:>8}",
        "mode", "mean", "weight", "share"
    );
    for (k, c) in counts.iter().enumerate() {
        let m = &mixture.means()[k];
        println!(
            "{:>6} {:>18} {:>8.3} {:>8.3}",
            k + 1,
            format!("({:.1}, {:.1})", m[0], m[1]),
            mixture.weights()[k],
            *c as f64 / n as f64
        );
    }
    Ok(())
}
