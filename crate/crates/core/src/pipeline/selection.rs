//! Latent-dimension selection by the score
//! `L_mod = 2·E_dec + 2·λ·ln|Ξ|`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{run_pipeline, test_reconstruction_error, TrainingConfig};
use crate::data::{split_dataset, Dataset};
use crate::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.001;

/// Selection score. A model without active terms has no complexity cost.
pub fn l_mod(e_dec: f64, active: usize, lambda: f64) -> f64 {
    let complexity = if active == 0 { 0.0 } else { (active as f64).ln() };
    2.0 * e_dec + 2.0 * lambda * complexity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub l: usize,
    pub seed: u64,
    pub e_dec: f64,
    pub active_count: usize,
    pub l_mod: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionAggregate {
    pub l: usize,
    pub runs: usize,
    pub e_dec_mean: f64,
    pub e_dec_std: f64,
    pub active_mean: f64,
    pub l_mod_mean: f64,
    pub l_mod_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub lambda: f64,
    pub rows: Vec<SelectionRow>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl SelectionReport {
    /// Sorts rows by `(l, seed)`.
    pub fn from_rows(lambda: f64, mut rows: Vec<SelectionRow>) -> Self {
        rows.sort_by_key(|r| (r.l, r.seed));
        Self { lambda, rows }
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Latent dimension with the smallest score for one seed; the smallest
    /// dimension wins ties.
    pub fn best_l(&self, seed: u64) -> Option<usize> {
        self.rows
            .iter()
            .filter(|r| r.seed == seed)
            .fold(None::<&SelectionRow>, |best, r| match best {
                Some(b) if b.l_mod <= r.l_mod => Some(b),
                _ => Some(r),
            })
            .map(|r| r.l)
    }

    /// Mean and sample standard deviation per latent dimension.
    pub fn aggregate(&self) -> Vec<SelectionAggregate> {
        let mut ls: Vec<usize> = self.rows.iter().map(|r| r.l).collect();
        ls.dedup();
        ls.into_iter()
            .map(|l| {
                let rows: Vec<&SelectionRow> = self.rows.iter().filter(|r| r.l == l).collect();
                let e: Vec<f64> = rows.iter().map(|r| r.e_dec).collect();
                let s: Vec<f64> = rows.iter().map(|r| r.l_mod).collect();
                let (e_dec_mean, e_dec_std) = mean_std(&e);
                let (l_mod_mean, l_mod_std) = mean_std(&s);
                SelectionAggregate {
                    l,
                    runs: rows.len(),
                    e_dec_mean,
                    e_dec_std,
                    active_mean: rows.iter().map(|r| r.active_count as f64).sum::<f64>() / rows.len() as f64,
                    l_mod_mean,
                    l_mod_std,
                }
            })
            .collect()
    }

    /// Delimited table with columns `l,seed,E_dec,active_count,L_mod`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("l,seed,E_dec,active_count,L_mod\n");
        for r in &self.rows {
            writeln!(out, "{},{},{:e},{},{:e}", r.l, r.seed, r.e_dec, r.active_count, r.l_mod).unwrap();
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("l,runs,E_dec_mean,E_dec_std,active_mean,L_mod_mean,L_mod_std\n");
        for a in self.aggregate() {
            writeln!(
                out,
                "{},{},{:e},{:e},{},{:e},{:e}",
                a.l, a.runs, a.e_dec_mean, a.e_dec_std, a.active_mean, a.l_mod_mean, a.l_mod_std
            )
            .unwrap();
        }
        out
    }
}

/// Trains and scores one `(l, seed)` cell. The dataset is re-split with the
/// same split sizes under `seed`.
pub fn scan_cell(dataset: &Dataset, l: usize, seed: u64, config: &TrainingConfig) -> Result<SelectionRow> {
    let resplit = split_dataset(dataset, dataset.split_counts(), seed)?;
    let cfg = TrainingConfig {
        latent_dim: l,
        seed,
        latent_reference: None,
        ..config.clone()
    };
    let out = run_pipeline(&resplit, &cfg)?;
    let e_dec = test_reconstruction_error(&out.model, &resplit)?;
    let active = out.model.count_active();
    Ok(SelectionRow {
        l,
        seed,
        e_dec,
        active_count: active,
        l_mod: l_mod(e_dec, active, config.selection_lambda),
    })
}

pub fn model_selection_scan(
    dataset: &Dataset,
    l_values: &[usize],
    seeds: &[u64],
    config: &TrainingConfig,
) -> Result<SelectionReport> {
    if l_values.is_empty() || seeds.is_empty() {
        return Err(Error::Config("scan needs at least one latent dimension and one seed".into()));
    }
    if let Some(&bad) = l_values.iter().find(|&&l| l == 0 || l > dataset.full_dim()) {
        return Err(Error::Config(format!(
            "latent dimension {bad} outside 1..={}",
            dataset.full_dim()
        )));
    }
    let mut rows = Vec::with_capacity(l_values.len() * seeds.len());
    for &l in l_values {
        for &seed in seeds {
            let row = scan_cell(dataset, l, seed, config)?;
            log::info!(
                "scan l={l} seed={seed}: E_dec={:.3e} |Ξ|={} L_mod={:.6}",
                row.e_dec,
                row.active_count,
                row.l_mod
            );
            rows.push(row);
        }
    }
    Ok(SelectionReport::from_rows(config.selection_lambda, rows))
}
