//! `advest sweep`: train every `(T, ε, seed)` cell of a grid and summarize
//! each run by one number.

use std::path::PathBuf;

use advest_core::ppo::{pooled_std, IterationRecord, RunLog, Trainer};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{config_hash, hex, ExperimentConfig};
use crate::csvio::{self, HeatmapRow, HeatmapSummaryRow};
use crate::run::write_json;
use crate::{worker_threads, HarnessError, Result};

pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const SUMMARY_FILE: &str = "heatmap_summary.csv";
pub const FAILURES_FILE: &str = "sweep_failures.csv";
pub const LOG_FILE: &str = "sweep.log";

/// Mean of `mean_return_100` over the last 10% of iterations (at least one).
pub fn final_metric(log: &RunLog) -> f64 {
    let n = log.records.len();
    if n == 0 {
        return f64::NAN;
    }
    let tail = n.div_ceil(10);
    log.records[n - tail..].iter().map(|r| r.mean_return_100).sum::<f64>() / tail as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub sample_length: usize,
    pub epsilon: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailureRow {
    #[serde(rename = "T")]
    pub sample_length: usize,
    pub epsilon: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<HeatmapRow>,
    pub summary: Vec<HeatmapSummaryRow>,
    pub skipped: Vec<(usize, usize)>,
    pub failures: Vec<FailureRow>,
    pub out_dir: PathBuf,
}

/// Valid cells in grid order, plus the `(T, ε)` pairs skipped for `ε > T`.
pub fn plan(config: &ExperimentConfig) -> (Vec<Cell>, Vec<(usize, usize)>) {
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for &t in &config.sweep.sample_lengths {
        for &e in &config.sweep.partial_coefs {
            if e > t || e == 0 {
                skipped.push((t, e));
                continue;
            }
            for i in 0..config.sweep.n_seeds as u64 {
                cells.push(Cell {
                    sample_length: t,
                    epsilon: e,
                    seed: config.trainer.seed + i,
                });
            }
        }
    }
    (cells, skipped)
}

fn cell_log_name(cell: &Cell) -> String {
    format!("cells/T{}_eps{}_seed{}.csv", cell.sample_length, cell.epsilon, cell.seed)
}

fn run_cell(config: &ExperimentConfig, cell: &Cell) -> std::result::Result<RunLog, String> {
    let mut trainer_config = config.trainer.clone();
    trainer_config.sample_length = cell.sample_length;
    trainer_config.partial_coef = cell.epsilon;
    trainer_config.partial_gae = true;
    trainer_config.seed = cell.seed;
    let env = config.env.build(trainer_config.gamma).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(trainer_config, |_| env.clone()).map_err(|e| e.to_string())?;
    trainer.run(&mut || 0.0).map_err(|e| e.to_string())?;
    Ok(trainer.log().clone())
}

pub fn sweep(config: &ExperimentConfig) -> Result<SweepOutcome> {
    let (cells, skipped) = plan(config);
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(HarnessError::io(out))?;
    let mut log_lines = Vec::new();
    for (t, e) in &skipped {
        let line = format!("skipped T={t} epsilon={e}: epsilon must be in 1..=T");
        eprintln!("{line}");
        log_lines.push(line);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<std::result::Result<RunLog, String>> =
        pool.install(|| cells.par_iter().map(|cell| run_cell(config, cell)).collect());

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cell, result) in cells.iter().zip(results) {
        match result {
            Ok(log) => {
                csvio::write_all(&out.join(cell_log_name(cell)), &IterationRecord::COLUMNS, &log.records)?;
                rows.push(HeatmapRow {
                    sample_length: cell.sample_length,
                    epsilon: cell.epsilon,
                    seed: cell.seed,
                    final_metric: final_metric(&log),
                });
            }
            Err(error) => {
                let line = format!(
                    "failed T={} epsilon={} seed={}: {error}",
                    cell.sample_length, cell.epsilon, cell.seed
                );
                eprintln!("{line}");
                log_lines.push(line);
                failures.push(FailureRow {
                    sample_length: cell.sample_length,
                    epsilon: cell.epsilon,
                    seed: cell.seed,
                    error,
                });
            }
        }
    }
    let summary = summarize(&rows);
    csvio::write_all(&out.join(HEATMAP_FILE), &HeatmapRow::COLUMNS, &rows)?;
    csvio::write_all(&out.join(SUMMARY_FILE), &HeatmapSummaryRow::COLUMNS, &summary)?;
    if !failures.is_empty() {
        csvio::write_all(&out.join(FAILURES_FILE), &["T", "epsilon", "seed", "error"], &failures)?;
    }
    let mut text = log_lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(out.join(LOG_FILE), text).map_err(HarnessError::io(out.join(LOG_FILE)))?;
    write_json(
        &out.join("manifest.json"),
        &serde_json::json!({
            "command": "sweep",
            "config_hash": hex(&config_hash(&config.env, &config.trainer)),
            "config": config,
            "cells": rows.len(),
            "skipped": skipped.len(),
            "failed": failures.len(),
        }),
    )?;
    Ok(SweepOutcome {
        rows,
        summary,
        skipped,
        failures,
        out_dir: out.clone(),
    })
}

/// Seed average and spread per `(T, ε)`, in first-appearance order.
pub fn summarize(rows: &[HeatmapRow]) -> Vec<HeatmapSummaryRow> {
    let mut keys: Vec<(usize, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.sample_length, r.epsilon)) {
            keys.push((r.sample_length, r.epsilon));
        }
    }
    keys.into_iter()
        .map(|(t, e)| {
            let metrics: Vec<f64> = rows
                .iter()
                .filter(|r| r.sample_length == t && r.epsilon == e)
                .map(|r| r.final_metric)
                .collect();
            HeatmapSummaryRow {
                sample_length: t,
                epsilon: e,
                n_seeds: metrics.len(),
                mean_metric: metrics.iter().sum::<f64>() / metrics.len() as f64,
                std_metric: pooled_std(&[&metrics]),
            }
        })
        .collect()
}
