//! Radially averaged power spectra of a smooth grid and of white noise.
//!
//! ```text
//! cargo run --example spectrum
//! ```

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sds_lab::radial_power_spectrum;

fn main() -> sds_lab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (h, w) = (32, 32);
    let grids = [
        (
            "grey",
            Array2::from_shape_fn((h, w), |_| 0.5 + 0.01 * rng.random_range(-1.0..1.0)),
        ),
        (
            "white noise",
            Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..1.0)),
        ),
        (
            "stripes",
            Array2::from_shape_fn((h, w), |(_, x)| {
                (2.0 * std::f64::consts::PI * 6.0 * x as f64 / w as f64).sin()
            }),
        ),
    ];

    for (name, grid) in &grids {
        let report = radial_power_spectrum(grid)?;
        println!(
            "{name}: low-frequency fraction {:.4}",
            report.low_frequency_fraction
        );
        let peak = (0..report.num_bins())
            .max_by(|&a, &b| report.power[a].total_cmp(&report.power[b]))
            .unwrap();
        println!("  peak annulus r = {peak}, {} bins", report.num_bins());
    }
    Ok(())
}
