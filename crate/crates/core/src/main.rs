use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sds_lab::experiment::{self, SamplerReport, OUTPUT_DIR_ENV};
use sds_lab::{Error, ScheduleKind};

#[derive(Parser)]
#[command(
    name = "sds-lab",
    version,
    about = "Score distillation experiments on analytic diffusion priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (sampler, seed) pair of a JSON config.
    Run {
        config: PathBuf,
        /// Parallel runs (overrides the config).
        #[arg(long)]
        workers: Option<usize>,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Validate the config and print the plan without running.
        #[arg(long)]
        dry_run: bool,
    },
    /// Write the prior-weight table and its timestep trajectory as CSV.
    ExportSchedule {
        #[arg(long = "T", default_value_t = 1000)]
        max_t: usize,
        #[arg(long, default_value_t = 500.0)]
        m: f64,
        #[arg(long, default_value_t = 125.0)]
        s: f64,
        #[arg(long = "N", default_value_t = 10000)]
        n: usize,
        /// `ddpm_linear` or `cosine`.
        #[arg(long, default_value = "ddpm_linear", value_parser = parse_schedule)]
        schedule: ScheduleKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Radially averaged power spectrum of a headerless numeric grid CSV.
    Spectrum {
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute and print the reports of a finished run directory.
    Report { run_dir: PathBuf },
}

fn parse_schedule(s: &str) -> Result<ScheduleKind, String> {
    match s {
        "ddpm_linear" => Ok(ScheduleKind::DdpmLinear),
        "cosine" => Ok(ScheduleKind::Cosine),
        other => Err(format!(
            "unknown schedule `{other}` (expected ddpm_linear or cosine)"
        )),
    }
}

fn print_reports(reports: &BTreeMap<String, SamplerReport>) {
    println!(
        "{:<28} {:>9} {:>22} {:>8} {:>14} {:>9}",
        "sampler", "converged", "per-mode", "entropy", "median_first", "censored"
    );
    for (label, r) in reports {
        let d = &r.diversity;
        let per_mode: Vec<String> = d.counts.iter().map(|c| c.to_string()).collect();
        let summary = r.convergence.summary(label);
        println!(
            "{:<28} {:>9} {:>22} {:>8.4} {:>14} {:>9}",
            label,
            format!("{}/{}", d.converged(), d.n_seeds),
            per_mode.join("/"),
            d.entropy,
            summary.map_or("-".into(), |s| s.median_censored_at_n.to_string()),
            summary.map_or(0, |s| s.censored),
        );
    }
}

fn run(cli: Cli) -> sds_lab::Result<()> {
    match cli.command {
        Command::Run {
            config,
            workers,
            seed_override,
            dry_run,
        } => {
            let mut config = experiment::load_config(&config)?;
            if let Some(w) = workers {
                config.workers = Some(w);
            }
            if let Some(seed) = seed_override {
                config.seeds = vec![seed];
            }
            if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
                config.output_dir = dir.into();
            }
            let plan = config.plan()?;
            if dry_run {
                println!("config `{}` is valid", config.name);
                println!(
                    "  schedule: {} T={}",
                    config.schedule.kind.name(),
                    config.schedule.max_t
                );
                let labels: Vec<&str> = plan.samplers.iter().map(|(l, _)| l.as_str()).collect();
                println!("  samplers: {}", labels.join(", "));
                println!("  runs:     {}", plan.num_runs(&config));
                println!("  output:   {}", config.run_dir().display());
                return Ok(());
            }
            let summary = experiment::run_experiment(&config)?;
            print_reports(&summary.reports);
            let m = &summary.manifest;
            println!(
                "{} runs ({} divergent) in {:.2}s -> {}",
                m.runs.len(),
                m.divergent_runs.len(),
                m.wall_clock_seconds,
                summary.run_dir.display()
            );
        }
        Command::ExportSchedule {
            max_t,
            m,
            s,
            n,
            schedule,
            out,
        } => {
            for path in experiment::export_schedule(schedule, max_t, m, s, n, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Spectrum { grid, out } => {
            let (report, paths) = experiment::spectrum_file(&grid, &out)?;
            println!(
                "{}x{} grid, {} bins, low-frequency fraction {:.6}",
                report.height,
                report.width,
                report.num_bins(),
                report.low_frequency_fraction
            );
            for path in paths {
                println!("{}", path.display());
            }
        }
        Command::Report { run_dir } => print_reports(&experiment::report(&run_dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
