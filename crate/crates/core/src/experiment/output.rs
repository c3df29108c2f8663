use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::Experiment;
use super::run::ExperimentReport;
use super::ExperimentError;

pub const LOSS_HEADER: &str = "step,total,fwd,bwd,emb_norm";
pub const FORECAST_HEADER: &str = "sample,truth,proto_a,proto_b";

fn write(path: PathBuf, contents: &str) -> Result<PathBuf, ExperimentError> {
    fs::write(&path, contents).map_err(|source| ExperimentError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes `report.json`, `loss.csv` and, for the sequence studies,
/// `forecast.csv` into `dir`.
pub fn emit_outputs(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).map_err(|source| ExperimentError::Json {
        path: json_path.clone(),
        source,
    })?;
    let mut written = vec![write(json_path, &json)?];

    let mut loss = format!("{LOSS_HEADER}\n");
    for m in &report.loss_history {
        writeln!(loss, "{},{},{},{},{}", m.step, m.total, m.fwd, m.bwd, m.mean_embedding_norm)
            .expect("string write");
    }
    written.push(write(dir.join("loss.csv"), &loss)?);

    if report.experiment != Experiment::Mnist {
        let mut fc = format!("{FORECAST_HEADER}\n");
        for r in &report.forecast {
            writeln!(fc, "{},{},{},{}", r.sample, r.truth, r.proto_a, r.proto_b).expect("string write");
        }
        written.push(write(dir.join("forecast.csv"), &fc)?);
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<ExperimentReport, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ExperimentError::Json {
        path: path.to_path_buf(),
        source,
    })
}
