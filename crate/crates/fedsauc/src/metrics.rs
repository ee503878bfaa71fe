//! Accuracy evaluation, communication accounting, and CSV emission.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::dataset::ClientDataset;
use crate::model::{predict, ModelParams};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty dataset")]
    EmptyData,
    #[error("invalid argument: {0}")]
    Arg(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One row of the per-round metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub round: u32,
    pub accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub active_count: u32,
    pub uploaded_params: u64,
    pub suppressed_params: u64,
    pub clusters_correct: u32,
    pub groups_total: u32,
}

/// Fraction of evaluation samples the model classifies correctly.
pub fn evaluate_client(params: &ModelParams, test: &ClientDataset) -> Result<f64, MetricsError> {
    if test.is_empty() {
        return Err(MetricsError::EmptyData);
    }
    let correct = test
        .samples
        .iter()
        .filter(|s| predict(params, &s.pixels) == s.label)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Expected parameter savings from suppressing uploads with probability
/// `1 - tau` in every round after `start_round`. Returns the per-client
/// figure and its sum across all clients.
pub fn expected_savings(
    params_per_update: u64,
    rounds: u32,
    start_round: u32,
    tau: f64,
    num_clients: u16,
) -> Result<(f64, f64), MetricsError> {
    if start_round > rounds {
        return Err(MetricsError::Arg(format!(
            "start round {start_round} is after the final round {rounds}"
        )));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(MetricsError::Arg(format!("tau must be in (0, 1], got {tau}")));
    }
    let per_client =
        params_per_update as f64 * f64::from(rounds - start_round) * (1.0 - tau);
    Ok((per_client, per_client * f64::from(num_clients)))
}

/// Formats a real with six significant digits, trimming trailing zeros.
pub(crate) fn format_real(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    let mut s = if (-4..6).contains(&exponent) {
        let decimals = (5 - exponent).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        return format!("{x:.5e}");
    };
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

fn csv_row(record: &MetricsRecord) -> Vec<String> {
    let mut row = Vec::with_capacity(record.accuracy.len() + 7);
    row.push(record.round.to_string());
    row.extend(record.accuracy.iter().map(|&a| format_real(a)));
    row.push(format_real(record.mean_accuracy));
    row.push(record.active_count.to_string());
    row.push(record.uploaded_params.to_string());
    row.push(record.suppressed_params.to_string());
    row.push(record.clusters_correct.to_string());
    row.push(record.groups_total.to_string());
    row
}

/// Writes the records to a CSV stream: one header plus one row per round.
pub fn write_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<(), MetricsError> {
    if let Some(unsorted) = records.windows(2).find(|w| w[0].round > w[1].round) {
        return Err(MetricsError::Arg(format!(
            "records are not sorted by round near round {}",
            unsorted[0].round
        )));
    }
    let clients = records.first().map_or(10, |r| r.accuracy.len());
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header = Vec::with_capacity(clients + 7);
    header.push("round".to_string());
    header.extend((0..clients).map(|i| format!("acc_c{i}")));
    header.extend(
        [
            "acc_mean",
            "active_count",
            "uploaded_params",
            "suppressed_params",
            "clusters_correct",
            "groups_total",
        ]
        .map(str::to_string),
    );
    writer.write_record(&header)?;
    for record in records {
        writer.write_record(csv_row(record))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[MetricsRecord], path: &Path) -> Result<(), MetricsError> {
    let file = File::create(path)?;
    write_csv(records, file)
}
