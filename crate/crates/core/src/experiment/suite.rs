use std::fmt::Write as _;
use std::path::PathBuf;

use super::config::{Experiment, RunConfig, Variant};
use super::run::{run_with, ExperimentReport};
use super::ExperimentError;
use crate::jepa::StepMetrics;

pub const SUITE_HEADER: &str = "experiment,variant,seed,status,final_train_loss,protocol_a_mse,\
protocol_b_mse,accuracy,decoder_mse,diverged,bijepa_beats_classic_protoB,bijepa_beats_classic_accuracy";

/// A seeds × variants sweep sharing one base configuration.
#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub experiment: Experiment,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Template for every member run (alpha, steps, overrides, data paths).
    /// Its experiment, variant, seed and output directory are replaced.
    pub base: RunConfig,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct SuiteRow {
    pub variant: Variant,
    pub seed: u64,
    pub result: Result<ExperimentReport, String>,
    /// Against the classic run with the same seed, when both exist.
    pub beats_classic_proto_b: Option<bool>,
    pub beats_classic_accuracy: Option<bool>,
}

#[derive(Clone, Debug)]
pub struct SuiteSummary {
    pub experiment: Experiment,
    pub rows: Vec<SuiteRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn mean(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fraction(vals: impl Iterator<Item = Option<bool>>) -> Option<f64> {
    mean(vals.map(|b| b.map(|b| f64::from(u8::from(b)))))
}

impl SuiteSummary {
    pub fn rows_for(&self, variant: Variant) -> impl Iterator<Item = &SuiteRow> {
        self.rows.iter().filter(move |r| r.variant == variant)
    }

    pub fn report(&self, variant: Variant, seed: u64) -> Option<&ExperimentReport> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.seed == seed)
            .and_then(|r| r.result.as_ref().ok())
    }

    /// True when more than half of `variant`'s seeds beat classic on
    /// protocol B.
    pub fn majority_beats_classic_proto_b(&self, variant: Variant) -> bool {
        let rows: Vec<_> = self.rows_for(variant).collect();
        rows.iter().filter(|r| r.beats_classic_proto_b == Some(true)).count() * 2 > rows.len()
    }

    pub fn majority_beats_classic_accuracy(&self, variant: Variant) -> bool {
        let rows: Vec<_> = self.rows_for(variant).collect();
        rows.iter().filter(|r| r.beats_classic_accuracy == Some(true)).count() * 2 > rows.len()
    }

    /// One row per run followed by one mean row per variant.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SUITE_HEADER}\n");
        let bool_cell = |b: Option<bool>| b.map(|b| b.to_string()).unwrap_or_default();
        for r in &self.rows {
            let (status, cells) = match &r.result {
                Ok(rep) => (
                    "ok".to_string(),
                    format!(
                        "{},{},{},{},{},{}",
                        rep.final_train_loss,
                        opt(rep.protocol_a_mse),
                        opt(rep.protocol_b_mse),
                        opt(rep.accuracy),
                        opt(rep.decoder_mse),
                        rep.diverged
                    ),
                ),
                Err(e) => (format!("error: {}", e.replace([',', '\n'], ";")), ",,,,,".to_string()),
            };
            writeln!(
                out,
                "{},{},{},{status},{cells},{},{}",
                self.experiment,
                r.variant,
                r.seed,
                bool_cell(r.beats_classic_proto_b),
                bool_cell(r.beats_classic_accuracy)
            )
            .expect("string write");
        }
        let mut variants: Vec<Variant> = Vec::new();
        for r in &self.rows {
            if !variants.contains(&r.variant) {
                variants.push(r.variant);
            }
        }
        for v in variants {
            let ok: Vec<&ExperimentReport> =
                self.rows_for(v).filter_map(|r| r.result.as_ref().ok()).collect();
            let metric = |f: fn(&ExperimentReport) -> Option<f64>| opt(mean(ok.iter().map(|r| f(r))));
            writeln!(
                out,
                "{},{v},mean,n={},{},{},{},{},{},{},{},{}",
                self.experiment,
                ok.len(),
                metric(|r| Some(r.final_train_loss)),
                metric(|r| r.protocol_a_mse),
                metric(|r| r.protocol_b_mse),
                metric(|r| r.accuracy),
                metric(|r| r.decoder_mse),
                opt(fraction(ok.iter().map(|r| Some(r.diverged)))),
                opt(fraction(self.rows_for(v).map(|r| r.beats_classic_proto_b))),
                opt(fraction(self.rows_for(v).map(|r| r.beats_classic_accuracy))),
            )
            .expect("string write");
        }
        out
    }
}

/// Runs every (variant, seed) pair in order. A failing member is recorded
/// and the sweep continues; only configuration problems abort it.
pub fn run_suite(
    cfg: &SuiteConfig,
    observe: &mut dyn FnMut(Variant, u64, &StepMetrics),
) -> Result<SuiteSummary, ExperimentError> {
    if cfg.seeds.is_empty() {
        return Err(ExperimentError::Config("suite needs at least one seed".into()));
    }
    if cfg.variants.is_empty() {
        return Err(ExperimentError::Config("suite needs at least one variant".into()));
    }
    let mut rows = Vec::new();
    for &variant in &cfg.variants {
        for &seed in &cfg.seeds {
            let member = RunConfig {
                experiment: cfg.experiment,
                variant,
                seed,
                out_dir: cfg
                    .out_dir
                    .as_ref()
                    .map(|d| d.join(variant.to_string()).join(format!("seed_{seed}"))),
                ..cfg.base.clone()
            };
            let result = match run_with(&member, &mut |m| observe(variant, seed, m)) {
                Ok(r) => Ok(r),
                Err(e) if e.is_config() => return Err(e),
                Err(e) => Err(e.to_string()),
            };
            rows.push(SuiteRow {
                variant,
                seed,
                result,
                beats_classic_proto_b: None,
                beats_classic_accuracy: None,
            });
        }
    }

    let classic: Vec<(u64, Option<f64>, Option<f64>)> = rows
        .iter()
        .filter(|r| r.variant.is_classic())
        .filter_map(|r| r.result.as_ref().ok().map(|rep| (r.seed, rep.protocol_b_mse, rep.accuracy)))
        .collect();
    for r in rows.iter_mut().filter(|r| !r.variant.is_classic()) {
        let (Ok(rep), Some(&(_, c_b, c_acc))) =
            (&r.result, classic.iter().find(|(s, _, _)| *s == r.seed))
        else {
            continue;
        };
        r.beats_classic_proto_b = rep.protocol_b_mse.zip(c_b).map(|(a, c)| a < c);
        r.beats_classic_accuracy = rep.accuracy.zip(c_acc).map(|(a, c)| a > c);
    }

    let summary = SuiteSummary {
        experiment: cfg.experiment,
        rows,
    };
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
            path: dir.clone(),
            source,
        })?;
        let path = dir.join("suite.csv");
        std::fs::write(&path, summary.to_csv()).map_err(|source| ExperimentError::Io { path, source })?;
    }
    Ok(summary)
}
