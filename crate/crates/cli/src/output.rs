//! CSV reports of a batch of runs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use mpslam_core::metrics::{cdf_grid, error_cdf};
use serde::Serialize;

use crate::runner::RunRecord;

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv error on {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("no runs to report")]
    Empty,
}

#[derive(Debug, Serialize)]
pub struct EstimateRow {
    pub run: u64,
    pub step: usize,
    pub mt: usize,
    pub true_x: f64,
    pub true_y: f64,
    pub est_x: f64,
    pub est_y: f64,
    pub err: f64,
}

#[derive(Debug, Serialize)]
pub struct VaRow {
    pub run: u64,
    pub step: usize,
    pub bs: usize,
    pub va_id: u64,
    pub est_x: f64,
    pub est_y: f64,
    pub r_hat: f64,
}

#[derive(Debug, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    pub mospa: f64,
    pub rmse: f64,
    pub card_err: f64,
}

#[derive(Debug, Serialize)]
pub struct CdfRow {
    pub threshold_m: f64,
    pub cum_freq: f64,
}

#[derive(Debug, Serialize)]
pub struct DiagnosticsRow {
    pub run: u64,
    pub step: usize,
    pub mt: usize,
    pub weight_resets: u32,
    pub track_loss: bool,
    pub da_nonconverged: u32,
}

pub fn estimate_rows(record: &RunRecord) -> Vec<EstimateRow> {
    record
        .steps
        .iter()
        .flat_map(|s| {
            s.truth.iter().zip(&s.estimates).enumerate().map(move |(mt, (t, e))| EstimateRow {
                run: record.run,
                step: s.step,
                mt,
                true_x: t.position.x,
                true_y: t.position.y,
                est_x: e.position.x,
                est_y: e.position.y,
                err: (t.position - e.position).norm(),
            })
        })
        .collect()
}

pub fn va_rows(record: &RunRecord) -> Vec<VaRow> {
    record
        .steps
        .iter()
        .flat_map(|s| {
            s.confirmed.iter().map(move |v| VaRow {
                run: record.run,
                step: s.step,
                bs: v.bs,
                va_id: v.id,
                est_x: v.position.x,
                est_y: v.position.y,
                r_hat: v.existence,
            })
        })
        .collect()
}

/// Per-step mean OSPA, RMSE over runs and MTs, and mean cardinality error.
pub fn metrics_rows(records: &[RunRecord]) -> Result<Vec<MetricsRow>, OutputError> {
    let first = records.first().ok_or(OutputError::Empty)?;
    let runs = records.len() as f64;
    Ok((0..first.steps.len())
        .map(|n| {
            let steps = records.iter().map(|r| &r.steps[n]);
            let (mut ospa, mut card, mut sq, mut count) = (0.0, 0.0, 0.0, 0usize);
            for s in steps {
                ospa += s.ospa;
                card += s.card_err;
                for e in s.errors() {
                    sq += e * e;
                    count += 1;
                }
            }
            MetricsRow {
                step: first.steps[n].step,
                mospa: ospa / runs,
                rmse: (sq / count.max(1) as f64).sqrt(),
                card_err: card / runs,
            }
        })
        .collect())
}

/// Empirical CDF of the MT position error over all runs, steps and MTs.
pub fn cdf_rows(records: &[RunRecord]) -> Result<Vec<CdfRow>, OutputError> {
    let errors: Vec<f64> = records
        .iter()
        .flat_map(|r| r.steps.iter().flat_map(|s| s.errors()))
        .collect();
    let cdf = error_cdf(&errors, &cdf_grid()).map_err(|_| OutputError::Empty)?;
    Ok(cdf
        .into_iter()
        .map(|(threshold_m, cum_freq)| CdfRow { threshold_m, cum_freq })
        .collect())
}

pub fn diagnostics_rows(record: &RunRecord) -> Vec<DiagnosticsRow> {
    record
        .steps
        .iter()
        .flat_map(|s| {
            s.diagnostics.iter().enumerate().map(move |(mt, d)| DiagnosticsRow {
                run: record.run,
                step: s.step,
                mt,
                weight_resets: d.weight_resets,
                track_loss: d.track_loss,
                da_nonconverged: d.da_nonconverged,
            })
        })
        .collect()
}

/// Writes `rows` under `header`; the header is written even without rows.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), OutputError> {
    let csv_err = |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub const ESTIMATE_COLUMNS: [&str; 8] = ["run", "step", "mt", "true_x", "true_y", "est_x", "est_y", "err"];
pub const VA_COLUMNS: [&str; 7] = ["run", "step", "bs", "va_id", "est_x", "est_y", "r_hat"];
pub const METRICS_COLUMNS: [&str; 4] = ["step", "mospa", "rmse", "card_err"];
pub const CDF_COLUMNS: [&str; 2] = ["threshold_m", "cum_freq"];
pub const DIAGNOSTICS_COLUMNS: [&str; 6] = ["run", "step", "mt", "weight_resets", "track_loss", "da_nonconverged"];

pub fn estimates_path(dir: &Path, run: u64) -> PathBuf {
    dir.join(format!("estimates_run{run:03}.csv"))
}

pub fn vas_path(dir: &Path, run: u64) -> PathBuf {
    dir.join(format!("vas_run{run:03}.csv"))
}

/// Writes the per-run estimate and VA traces, the aggregate metrics, the
/// error CDF and the diagnostics into `dir`.
pub fn emit_csv(records: &[RunRecord], dir: &Path) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(|source| OutputError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut diagnostics = Vec::new();
    for r in records {
        write_csv(&estimates_path(dir, r.run), &ESTIMATE_COLUMNS, &estimate_rows(r))?;
        write_csv(&vas_path(dir, r.run), &VA_COLUMNS, &va_rows(r))?;
        diagnostics.extend(diagnostics_rows(r));
    }
    write_csv(&dir.join("metrics.csv"), &METRICS_COLUMNS, &metrics_rows(records)?)?;
    write_csv(&dir.join("cdf.csv"), &CDF_COLUMNS, &cdf_rows(records)?)?;
    write_csv(&dir.join("diagnostics.csv"), &DIAGNOSTICS_COLUMNS, &diagnostics)?;
    Ok(())
}
