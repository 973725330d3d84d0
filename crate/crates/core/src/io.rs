//! CSV and JSON file formats.
//!
//! Floats are written with Rust's `Display` for `f64`, the shortest decimal
//! that parses back to the same value, so tables are byte-stable across runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::diagnostics::SpectrumReport;
use crate::error::{Error, Result};
use crate::oracle::GaussianMixture;
use crate::scheduling::PriorWeight;
use crate::sds::TrajectoryRecord;

fn create(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn f(v: f64) -> String {
    v.to_string()
}

/// Serde adapter for floats that may be infinite or NaN: finite values stay
/// JSON numbers, the rest become the strings `inf`, `-inf` and `NaN`.
pub(crate) mod any_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => t
                .parse()
                .map_err(|_| serde::de::Error::custom(format!("expected a float, got `{t}`"))),
        }
    }
}

/// Writes `value` as pretty-printed JSON.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Columns `run_id, seed, sampler, i, t, grad_norm, x0_loss, dist_mode_1..K`.
pub fn write_trajectory(
    path: &Path,
    run_id: &str,
    record: &TrajectoryRecord,
    mixture: &GaussianMixture,
) -> Result<()> {
    let mut w = create(path)?;
    let mut header: Vec<String> = [
        "run_id",
        "seed",
        "sampler",
        "i",
        "t",
        "grad_norm",
        "x0_loss",
    ]
    .map(String::from)
    .to_vec();
    header.extend((1..=mixture.num_components()).map(|k| format!("dist_mode_{k}")));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for row in &record.rows {
        let mut fields = vec![
            run_id.to_string(),
            record.seed.to_string(),
            record.sampler.clone(),
            row.i.to_string(),
            row.t.to_string(),
            f(row.grad_norm),
            f(row.x0_loss),
        ];
        fields.extend(mixture.mode_distances(&row.theta).into_iter().map(f));
        w.write_record(&fields).map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)
}

/// One row of a trajectory CSV as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCsvRow {
    pub run_id: String,
    pub seed: u64,
    pub sampler: String,
    pub i: usize,
    pub t: usize,
    pub grad_norm: f64,
    pub x0_loss: f64,
    pub mode_distances: Vec<f64>,
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryCsvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let expected = [
        "run_id",
        "seed",
        "sampler",
        "i",
        "t",
        "grad_norm",
        "x0_loss",
    ];
    if headers.len() < expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::invalid(format!(
            "{}: not a trajectory CSV",
            path.display()
        )));
    }
    let bad = |what: &str, line: usize| {
        Error::invalid(format!("{}: bad {what} on row {line}", path.display()))
    };
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let num = |k: usize, what: &str| rec[k].parse::<f64>().map_err(|_| bad(what, line + 1));
        rows.push(TrajectoryCsvRow {
            run_id: rec[0].to_string(),
            seed: rec[1].parse().map_err(|_| bad("seed", line + 1))?,
            sampler: rec[2].to_string(),
            i: rec[3].parse().map_err(|_| bad("i", line + 1))?,
            t: rec[4].parse().map_err(|_| bad("t", line + 1))?,
            grad_norm: num(5, "grad_norm")?,
            x0_loss: num(6, "x0_loss")?,
            mode_distances: (7..rec.len())
                .map(|k| num(k, "dist_mode"))
                .collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Columns `t, W_d, W_p, W, cum` followed by their min-max normalized
/// copies (`*_norm`, all zero for a constant column).
pub fn write_weight_table(path: &Path, prior: &PriorWeight) -> Result<()> {
    let cols = [prior.w_d(), prior.w_p(), prior.weights(), prior.tail_mass()];
    let norms: Vec<Vec<f64>> = cols.iter().map(|c| min_max(c)).collect();
    let mut w = create(path)?;
    w.write_record([
        "t", "W_d", "W_p", "W", "cum", "W_d_norm", "W_p_norm", "W_norm", "cum_norm",
    ])
    .map_err(|e| Error::csv(path, e))?;
    for k in 0..prior.max_t() {
        let mut fields = vec![(k + 1).to_string()];
        fields.extend(cols.iter().map(|c| f(c[k])));
        fields.extend(norms.iter().map(|c| f(c[k])));
        w.write_record(&fields).map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)
}

/// Columns `i, t`.
pub fn write_timesteps(path: &Path, timesteps: &[usize]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["i", "t"])
        .map_err(|e| Error::csv(path, e))?;
    for (k, t) in timesteps.iter().enumerate() {
        w.write_record([(k + 1).to_string(), t.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)
}

/// Headerless numeric CSV, one image row per line.
pub fn read_grid(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if width.is_some_and(|w| w != rec.len()) {
            return Err(Error::invalid(format!(
                "{}: ragged row {}",
                path.display(),
                height + 1
            )));
        }
        width = Some(rec.len());
        for cell in rec.iter() {
            values.push(cell.parse::<f64>().map_err(|_| {
                Error::invalid(format!(
                    "{}: `{cell}` on row {} is not a number",
                    path.display(),
                    height + 1
                ))
            })?);
        }
        height += 1;
    }
    Array2::from_shape_vec((height, width.unwrap_or(0)), values)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

/// Columns `radius, count, power`.
pub fn write_spectrum(path: &Path, report: &SpectrumReport) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["radius", "count", "power"])
        .map_err(|e| Error::csv(path, e))?;
    for k in 0..report.num_bins() {
        w.write_record([
            report.radii[k].to_string(),
            report.counts[k].to_string(),
            f(report.power[k]),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    finish(w, path)
}

/// `{dir}/{run_set}_{report_type}.{ext}`.
pub fn report_path(dir: &Path, run_set: &str, report_type: &str, ext: &str) -> PathBuf {
    dir.join(format!("{run_set}_{report_type}.{ext}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{NoiseSchedule, ScheduleKind};
    use crate::sds::{RunStatus, TrajectoryRow};

    #[test]
    fn trajectory_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let g = GaussianMixture::bimodal_far();
        let record = TrajectoryRecord {
            sampler: "tp".into(),
            seed: 3,
            iterations: 2,
            rows: vec![
                TrajectoryRow {
                    i: 1,
                    t: 999,
                    grad_norm: 0.1,
                    grad_variance_est: None,
                    x0_loss: 1.0 / 3.0,
                    theta: vec![0.1, 0.2],
                },
                TrajectoryRow {
                    i: 2,
                    t: 998,
                    grad_norm: 1e-300,
                    grad_variance_est: None,
                    x0_loss: 2.5,
                    theta: vec![3.9, 0.0],
                },
            ],
            status: RunStatus::Completed,
        };
        write_trajectory(&path, "tp_seed3", &record, &g).unwrap();
        let rows = read_trajectory(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].x0_loss, 1.0 / 3.0);
        assert_eq!(rows[1].grad_norm, 1e-300);
        assert_eq!(rows[1].mode_distances, g.mode_distances(&[3.9, 0.0]));
    }

    #[test]
    fn normalized_columns_span_unit_interval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let s = NoiseSchedule::new(ScheduleKind::DdpmLinear, 1000).unwrap();
        write_weight_table(&path, &PriorWeight::new(&s, 500.0, 125.0).unwrap()).unwrap();
        let mut r = csv::Reader::from_path(&path).unwrap();
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 1000);
        for col in 5..9 {
            let v: Vec<f64> = rows.iter().map(|x| x[col].parse().unwrap()).collect();
            assert_eq!(v.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
            assert_eq!(v.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
        }
    }

    #[test]
    fn grid_reader_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        std::fs::write(&path, "1,2,3\n4,5\n").unwrap();
        assert!(read_grid(&path).is_err());
        std::fs::write(&path, "1, 2\n3, 4\n").unwrap();
        assert_eq!(
            read_grid(&path).unwrap(),
            ndarray::array![[1.0, 2.0], [3.0, 4.0]]
        );
    }

    #[test]
    fn non_finite_grad_norm_round_trips() {
        for g in [f64::INFINITY, f64::NEG_INFINITY, 3.5] {
            let status = RunStatus::Diverged {
                iteration: 4,
                t: 9,
                grad_norm: g,
            };
            let text = serde_json::to_string(&status).unwrap();
            assert_eq!(serde_json::from_str::<RunStatus>(&text).unwrap(), status);
        }
        let nan = RunStatus::Diverged {
            iteration: 1,
            t: 1,
            grad_norm: f64::NAN,
        };
        let back: RunStatus = serde_json::from_str(&serde_json::to_string(&nan).unwrap()).unwrap();
        assert!(matches!(back, RunStatus::Diverged { grad_norm, .. } if grad_norm.is_nan()));
    }
}
