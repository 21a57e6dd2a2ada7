//! CSV artifacts. Every file has a fixed header, UTF-8, LF line endings and
//! shortest round-trip float formatting.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

pub fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    }
    let file = File::create(path).map_err(HarnessError::io(path))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

/// Write all rows (header derived from the row type) in one go.
pub fn write_all<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(HarnessError::io(path))
}

pub fn read_all<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

/// One cell of the `(T, ε)` heatmap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    #[serde(rename = "T")]
    pub sample_length: usize,
    pub epsilon: usize,
    pub seed: u64,
    pub final_metric: f64,
}

impl HeatmapRow {
    pub const COLUMNS: [&'static str; 4] = ["T", "epsilon", "seed", "final_metric"];
}

/// Seed-averaged heatmap cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSummaryRow {
    #[serde(rename = "T")]
    pub sample_length: usize,
    pub epsilon: usize,
    pub n_seeds: usize,
    pub mean_metric: f64,
    pub std_metric: f64,
}

impl HeatmapSummaryRow {
    pub const COLUMNS: [&'static str; 5] = ["T", "epsilon", "n_seeds", "mean_metric", "std_metric"];
}

pub const PROFILE_COLUMNS: [&str; 7] = ["t", "n", "mean_adv", "std_adv", "bias", "std_reward_part", "std_value_part"];

#[cfg(test)]
mod tests {
    use super::*;
    use advest_core::ppo::IterationRecord;

    #[test]
    fn floats_round_trip_with_lf() {
        let dir = std::env::temp_dir().join(format!("advest-csv-{}", std::process::id()));
        let path = dir.join("log.csv");
        let rows = vec![
            IterationRecord {
                iteration: 1,
                env_steps: 128,
                wall_clock_s: 0.1 + 0.2,
                mean_return_100: 1.0 / 3.0,
                success_rate_100: 0.0,
                policy_loss: -1e-300,
                value_loss: 12345.678,
                entropy: core::f64::consts::LN_2,
                adv_mean: f64::NAN,
                adv_std: 5e-324,
                kept_fraction: 0.5,
            };
            2
        ];
        write_all(&path, &IterationRecord::COLUMNS, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().next().unwrap(), IterationRecord::COLUMNS.join(","));
        let back: Vec<IterationRecord> = read_all(&path).unwrap();
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.policy_loss.to_bits(), b.policy_loss.to_bits());
            assert_eq!(a.mean_return_100.to_bits(), b.mean_return_100.to_bits());
            assert_eq!(a.adv_std.to_bits(), b.adv_std.to_bits());
            assert!(b.adv_mean.is_nan());
        }
        let empty: Vec<HeatmapRow> = Vec::new();
        write_all(&dir.join("h.csv"), &HeatmapRow::COLUMNS, &empty).unwrap();
        assert_eq!(std::fs::read_to_string(dir.join("h.csv")).unwrap(), "T,epsilon,seed,final_metric\n");
        std::fs::remove_dir_all(dir).ok();
    }
}
