//! The time-prioritized weight and the timestep trajectory it induces.
//!
//! ```text
//! cargo run --example prior_weight
//! ```

use sds_lab::{NoiseSchedule, PriorWeight, ScheduleKind};

fn main() -> sds_lab::Result<()> {
    let schedule = NoiseSchedule::new(ScheduleKind::DdpmLinear, 1000)?;
    let prior = PriorWeight::new(&schedule, 500.0, 125.0)?;
    println!("peak of W at t = {} (m = 500)", prior.argmax());

    println!(
        "\n{:>6} {:>12} {:>12} {:>12} {:>10}",
        "t", "W_d", "W_p", "W", "tail"
    );
    for t in (100..=1000).step_by(100) {
        let k = t - 1;
        println!(
            "{:>6} {:>12.4} {:>12.4e} {:>12.4e} {:>10.6}",
            t,
            prior.w_d()[k],
            prior.w_p()[k],
            prior.weights()[k],
            prior.tail_mass()[k]
        );
    }

    let n = 2000;
    println!("\ntrajectory over N = {n} iterations");
    for i in [1, 200, 500, 1000, 1500, 1800, 2000] {
        println!("  i = {i:>5}  t = {}", prior.timestep(i, n)?);
    }
    Ok(())
}
