//! CSV trajectories, dataset files and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zeroloss::dynamics::Trajectory;
use zeroloss::losses::Dataset;
use zeroloss::ParamVector;

use crate::config::ScenarioConfig;
use crate::error::{CliError, CliResult};

pub const OUTPUT_ROOT_ENV: &str = "ZEROLOSS_OUTPUT_ROOT";

/// Output directory of a scenario: `$ZEROLOSS_OUTPUT_ROOT/<output_dir>`, or
/// `output_dir` itself when the variable is unset or the path is absolute.
pub fn output_dir(cfg: &ScenarioConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if !cfg.output_dir.is_absolute() => PathBuf::from(root).join(&cfg.output_dir),
        _ => cfg.output_dir.clone(),
    }
}

/// Reads a dataset with header `x_1,..,x_d,y`.
pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read dataset {}: {e}", path.display())))?;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Config(format!("{} row {}: {e}", path.display(), i + 1)))?;
        if vals.len() < 2 {
            return Err(CliError::Config(format!(
                "{} row {}: need inputs and a label",
                path.display(),
                i + 1
            )));
        }
        let (x, y) = vals.split_at(vals.len() - 1);
        inputs.push(ParamVector::from_row_slice(x));
        labels.push(y[0]);
    }
    Ok(Dataset::new(inputs, labels)?)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = data.dim_in();
    let mut header: Vec<String> = (1..=d).map(|j| format!("x_{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for (x, y) in data.inputs.iter().zip(&data.labels) {
        let mut row: Vec<String> = x.iter().map(|v| fmt(*v)).collect();
        row.push(fmt(*y));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same f64.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// Extra per-point column written after the diagnostics.
pub enum ExtraColumn<'a> {
    None,
    /// Unwrapped polar angle, for planar losses with a circular zero set.
    Theta,
    /// Cumulative path length.
    Arclength,
    Named(&'a str, &'a [f64]),
}

/// Columns: t, step (discrete runs only), w_1..w_m, loss, grad_norm,
/// dist_gamma and the optional extra column.
pub fn write_trajectory(path: &Path, traj: &Trajectory, extra: ExtraColumn) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let m = traj.points.first().map_or(0, |p| p.len());
    let with_steps = traj.steps.len() == traj.len();
    let traj = match extra {
        ExtraColumn::Arclength => traj.clone().with_arclength(),
        _ => traj.clone(),
    };
    let extra_vals: Option<(&str, Vec<f64>)> = match &extra {
        ExtraColumn::None => None,
        ExtraColumn::Theta => Some(("theta", traj.unwrapped_angles())),
        ExtraColumn::Arclength => Some((
            "arclength",
            traj.diagnostics
                .iter()
                .map(|d| d.arclength.unwrap_or(f64::NAN))
                .collect(),
        )),
        ExtraColumn::Named(n, v) => Some((n, v.to_vec())),
    };

    let mut header = vec!["t".to_string()];
    if with_steps {
        header.push("step".into());
    }
    header.extend((1..=m).map(|j| format!("w_{j}")));
    header.extend(["loss", "grad_norm", "dist_gamma"].map(String::from));
    if let Some((name, _)) = &extra_vals {
        header.push(name.to_string());
    }
    w.write_record(&header)?;

    for i in 0..traj.len() {
        let mut row = vec![fmt(traj.times[i])];
        if with_steps {
            row.push(traj.steps[i].to_string());
        }
        row.extend(traj.points[i].iter().map(|v| fmt(*v)));
        let d = &traj.diagnostics[i];
        row.extend([fmt(d.loss), fmt(d.grad_norm), fmt(d.dist_gamma)]);
        if let Some((_, vals)) = &extra_vals {
            row.push(fmt(vals[i]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of one seed.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SeedRecord {
    pub seed: u64,
    pub file: String,
    /// "completed", "converged", "left-region" or "diverged".
    pub status: String,
    pub points: usize,
    pub final_point: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    /// SHA-256 over the canonical config JSON and the dataset bytes.
    pub config_hash: String,
    pub config: ScenarioConfig,
    pub n_steps: Option<usize>,
    pub runs: Vec<SeedRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<serde_json::Value>,
}

pub fn config_hash(cfg: &ScenarioConfig, dataset: Option<&Dataset>) -> CliResult<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg)?);
    if let Some(d) = dataset {
        for (x, y) in d.inputs.iter().zip(&d.labels) {
            for v in x.iter().chain(std::iter::once(y)) {
                h.update(v.to_le_bytes());
            }
        }
    }
    Ok(hex::encode(h.finalize()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
