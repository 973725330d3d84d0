//! Running a JSON-configured experiment and reading back its reports.
//!
//! ```text
//! cargo run --release --example experiment_sweep
//! ```

use sds_lab::experiment::{self, ExperimentConfig};

const CONFIG: &str = r#"{
    "name": "sweep-demo",
    "schedule": {"kind": "cosine", "T": 1000},
    "mixture": "bimodal-far",
    "samplers": [
        {"kind": "uniform"},
        {"kind": "tp", "label": "tp"},
        {"kind": "linear"},
        {"kind": "truncated_linear", "floor": 200}
    ],
    "sds": {"lr": 0.01, "iterations": 1000},
    "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
    "theta0": {"kind": "jittered", "amplitude": 0.01},
    "tau": 0.2
}"#;

fn main() -> sds_lab::Result<()> {
    let mut config = ExperimentConfig::from_json_str(CONFIG)?;
    config.output_dir = std::env::temp_dir().join("sds-lab-examples");
    let summary = experiment::run_experiment(&config)?;

    println!(
        "wrote {} runs to {}",
        summary.manifest.runs.len(),
        summary.run_dir.display()
    );
    println!(
        "{:<22} {:>10} {:>10} {:>9} {:>16}",
        "sampler", "converged", "modes", "entropy", "median passage"
    );
    for (label, r) in &summary.reports {
        let d = &r.diversity;
        let s = r.convergence.summary(label).unwrap();
        println!(
            "{:<22} {:>10} {:>10} {:>9.4} {:>16}",
            label,
            format!("{}/{}", d.converged(), d.n_seeds),
            format!("{:?}", d.counts),
            d.entropy,
            s.median_censored_at_n
        );
    }

    let again = experiment::report(&summary.run_dir)?;
    println!(
        "reports recomputed from disk match: {}",
        again == summary.reports
    );
    Ok(())
}
