//! Linear and cosine noise schedules, and forward noising of a point.
//!
//! ```text
//! cargo run --example noise_schedules
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sds_lab::diffusion::{estimate_x0, noise_sample};
use sds_lab::{NoiseSchedule, ScheduleKind};

fn main() -> sds_lab::Result<()> {
    let linear = NoiseSchedule::new(ScheduleKind::DdpmLinear, 1000)?;
    let cosine = NoiseSchedule::new(ScheduleKind::Cosine, 1000)?;

    println!(
        "{:>6} {:>12} {:>12} {:>12} {:>12}",
        "t", "ab_linear", "ab_cosine", "snr_linear", "snr_cosine"
    );
    for t in [1, 50, 100, 250, 500, 750, 900, 1000] {
        println!(
            "{:>6} {:>12.6} {:>12.6} {:>12.4e} {:>12.4e}",
            t,
            linear.alpha_bar(t),
            cosine.alpha_bar(t),
            linear.snr(t),
            cosine.snr(t)
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x0 = [2.0, -1.0];
    println!("\nnoising x0 = {x0:?} under the cosine schedule");
    for t in [10, 500, 1000] {
        let noised = noise_sample(&cosine, &x0, t, &mut rng)?;
        let back = estimate_x0(&cosine, &noised.x_t, &noised.eps, t)?;
        println!(
            "t={t:>4}  x_t = [{:>8.4}, {:>8.4}]  recovered x0 = [{:.6}, {:.6}]",
            noised.x_t[0], noised.x_t[1], back[0], back[1]
        );
    }
    Ok(())
}
