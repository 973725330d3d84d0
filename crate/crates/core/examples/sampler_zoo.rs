//! Every timestep sampler side by side over one short run.
//!
//! ```text
//! cargo run --example sampler_zoo
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sds_lab::{NoiseSchedule, ScheduleKind, TimestepSampler};

fn main() -> sds_lab::Result<()> {
    let schedule = NoiseSchedule::new(ScheduleKind::Cosine, 1000)?;
    let samplers = [
        TimestepSampler::uniform(&schedule),
        TimestepSampler::time_prioritized(&schedule, 500.0, 125.0)?,
        TimestepSampler::wp_only(&schedule, 500.0, 125.0)?,
        TimestepSampler::wd_only(&schedule)?,
        TimestepSampler::linear(&schedule),
        TimestepSampler::truncated_linear(&schedule, 200)?,
        TimestepSampler::constant(&schedule, 500)?,
        TimestepSampler::power_annealed(&schedule, 980, 20, 0.5)?,
        TimestepSampler::two_stage(&schedule, 0.5, 20..=980, 20..=500)?,
    ];

    let n = 1000;
    let checkpoints = [1, 100, 250, 500, 750, 900, 1000];
    print!("{:<18}", "sampler");
    for i in checkpoints {
        print!(" {:>6}", format!("i={i}"));
    }
    println!();
    for sampler in &samplers {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ts = Vec::with_capacity(n);
        for i in 1..=n {
            ts.push(sampler.sample(i, n, &mut rng)?);
        }
        print!("{:<18}", sampler.kind());
        for i in checkpoints {
            print!(" {:>6}", ts[i - 1]);
        }
        println!();
    }
    Ok(())
}
