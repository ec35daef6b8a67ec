//! Trains one model per polishing-module setting on identical data and
//! compares them on a held-out split.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{PfpnError, Result};
use crate::metrics::MetricsReport;
use crate::train::{evaluate_model, train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSetting {
    pub num_fpms: usize,
    pub shared: bool,
}

impl AblationSetting {
    pub fn label(&self) -> String {
        if self.shared {
            format!("T={} (shared)", self.num_fpms)
        } else {
            format!("T={}", self.num_fpms)
        }
    }
}

/// Settings ordered by T, separate weights before shared. Sharing only
/// differs from separate weights when T >= 2, so it is skipped below that.
pub fn ablation_settings(t_values: &[usize], shared: &[bool]) -> Vec<AblationSetting> {
    let mut ts = t_values.to_vec();
    ts.sort_unstable();
    ts.dedup();
    let mut modes = shared.to_vec();
    modes.sort_unstable();
    modes.dedup();
    let mut out = Vec::new();
    for &t in &ts {
        for &s in &modes {
            if s && t < 2 {
                continue;
            }
            out.push(AblationSetting {
                num_fpms: t,
                shared: s,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub setting: AblationSetting,
    pub mae: f64,
    pub max_f: f64,
    pub mean_f: f64,
    pub s_measure: f64,
    /// Mean total loss over the last tenth of training.
    pub final_train_loss: f64,
    pub train_seconds: f64,
    pub num_parameters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub num_train: usize,
    pub num_test: usize,
    pub iterations: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, num_fpms: usize, shared: bool) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.setting == AblationSetting { num_fpms, shared })
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let header = [
            "Setting",
            "MAE",
            "maxF",
            "meanF",
            "S",
            "train loss",
            "params",
            "time (s)",
        ];
        let body: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.label.clone(),
                    format!("{:.4}", r.mae),
                    format!("{:.4}", r.max_f),
                    format!("{:.4}", r.mean_f),
                    format!("{:.4}", r.s_measure),
                    format!("{:.4}", r.final_train_loss),
                    r.num_parameters.to_string(),
                    format!("{:.1}", r.train_seconds),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                body.iter()
                    .map(|r| r[i].len())
                    .chain([header[i].len()])
                    .max()
                    .unwrap()
            })
            .collect();
        let line = |cells: Vec<&str>| {
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = line(header.to_vec());
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for r in &body {
            out.push_str(&line(r.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| PfpnError::io(dir, e))?;
        let json = dir.join("ablation.json");
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&json, text + "\n").map_err(|e| PfpnError::io(&json, e))?;
        let table = dir.join("ablation.txt");
        std::fs::write(&table, self.to_table()).map_err(|e| PfpnError::io(&table, e))
    }
}

/// Trains every setting from the same base config (seed, data, schedule),
/// differing only in T and weight sharing, then scores each on `test`.
/// `on_row` is called after each setting finishes.
pub fn run_ablation(
    base: &TrainConfig,
    t_values: &[usize],
    shared: &[bool],
    train_set: &[Sample],
    test_set: &[Sample],
    mut on_row: impl FnMut(&AblationRow, &MetricsReport),
) -> Result<AblationReport> {
    if t_values.is_empty() {
        return Err(PfpnError::Config(
            "ablation needs at least one T value".into(),
        ));
    }
    if test_set.is_empty() {
        return Err(PfpnError::Input("ablation test split is empty".into()));
    }
    let mut rows = Vec::new();
    for setting in ablation_settings(t_values, shared) {
        let mut cfg = base.clone();
        cfg.model.num_fpms = setting.num_fpms;
        cfg.model.share_fpm_weights = setting.shared;
        let start = Instant::now();
        let outcome = train(&cfg, train_set, None)?;
        let train_seconds = start.elapsed().as_secs_f64();
        let mut report = evaluate_model(&outcome.model, &outcome.store, test_set)?;
        report.label = Some(setting.label());
        let tail = (outcome.log.len() / 10).max(1);
        let final_train_loss = outcome.log[outcome.log.len() - tail..]
            .iter()
            .map(|e| e.total)
            .sum::<f64>()
            / tail as f64;
        let row = AblationRow {
            label: setting.label(),
            setting,
            mae: report.mae,
            max_f: report.max_f,
            mean_f: report.mean_f,
            s_measure: report.s_measure,
            final_train_loss,
            train_seconds,
            num_parameters: outcome.store.num_values(),
        };
        log::info!("{}: {}", row.label, report.headline());
        on_row(&row, &report);
        rows.push(row);
    }
    Ok(AblationReport {
        num_train: train_set.len(),
        num_test: test_set.len(),
        iterations: base.max_iterations,
        rows,
    })
}
