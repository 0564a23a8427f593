//! Post-hoc analysis of finished run directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::{RunSummary, METRICS_FILE, SUMMARY_FILE};
use crate::data::{read_metrics, MetricRow};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::prune::UpdateRule;

/// Mean mask-change ratio over the last third of the exploration window:
/// from the first pruning iteration up to the freeze point (or the end of
/// training when the structure never freezes).
pub fn late_change_ratio(rows: &[MetricRow], summary: &RunSummary) -> Option<f64> {
    let start = summary.prune_start_iteration as f64;
    let end = summary.exploit_iteration.min(summary.total_iterations) as f64;
    let cutoff = start + (end - start) * 2.0 / 3.0;
    let late: Vec<f64> = rows
        .iter()
        .filter(|r| r.split == "mask" && r.iteration as f64 > cutoff && r.iteration as f64 <= end)
        .filter_map(|r| r.mask_change_ratio)
        .collect();
    (!late.is_empty()).then(|| late.iter().sum::<f64>() / late.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunAnalysis {
    pub dir: PathBuf,
    pub rule: UpdateRule,
    pub z: f64,
    pub seed: u64,
    pub exploit_enabled: bool,
    pub last_acc: f64,
    pub best_acc: f64,
    /// `last_acc - best_acc`.
    pub last_minus_best: f64,
    pub late_change_ratio: Option<f64>,
    /// Differences against the first run analyzed.
    pub delta_last_to_first: f64,
    pub delta_best_to_first: f64,
}

/// Mean accuracy gain from exploitation, over seeds with both variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploitDelta {
    pub rule: UpdateRule,
    pub z: f64,
    pub pairs: usize,
    pub delta_last: f64,
    pub delta_best: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<RunAnalysis>,
    pub exploit_deltas: Vec<ExploitDelta>,
}

pub fn load_run(dir: &Path) -> Result<(Vec<MetricRow>, RunSummary)> {
    let rows = read_metrics(dir.join(METRICS_FILE))?;
    let text = std::fs::read(dir.join(SUMMARY_FILE))
        .map_err(|e| Error::Metrics(format!("{}: {e}", dir.join(SUMMARY_FILE).display())))?;
    let summary: RunSummary = serde_json::from_slice(&text)
        .map_err(|e| Error::Metrics(format!("{}: {e}", dir.join(SUMMARY_FILE).display())))?;
    Ok((rows, summary))
}

pub fn analyze_runs(runs: &[(PathBuf, Vec<MetricRow>, RunSummary)]) -> Report {
    let first = runs.first().map(|(_, _, s)| (s.last_acc, s.best_acc));
    let analyses: Vec<RunAnalysis> = runs
        .iter()
        .map(|(dir, rows, s)| {
            let (fl, fb) = first.unwrap();
            RunAnalysis {
                dir: dir.clone(),
                rule: s.rule,
                z: s.z,
                seed: s.seed,
                exploit_enabled: s.exploit_enabled,
                last_acc: s.last_acc,
                best_acc: s.best_acc,
                last_minus_best: s.last_acc - s.best_acc,
                late_change_ratio: late_change_ratio(rows, s),
                delta_last_to_first: s.last_acc - fl,
                delta_best_to_first: s.best_acc - fb,
            }
        })
        .collect();

    // (rule, z, seed) → (with exploit, without exploit)
    type Pair = (Option<(f64, f64)>, Option<(f64, f64)>);
    let mut pairs: BTreeMap<(u8, u64, u64), Pair> = BTreeMap::new();
    for (_, _, s) in runs {
        let slot = pairs.entry((s.rule.code(), s.z.to_bits(), s.seed)).or_default();
        let v = Some((s.last_acc, s.best_acc));
        if s.exploit_enabled {
            slot.0 = v;
        } else {
            slot.1 = v;
        }
    }
    let mut grouped: BTreeMap<(u8, u64), Vec<(f64, f64)>> = BTreeMap::new();
    for ((rule, z, _), pair) in pairs {
        if let (Some(on), Some(off)) = pair {
            grouped.entry((rule, z)).or_default().push((on.0 - off.0, on.1 - off.1));
        }
    }
    let exploit_deltas = grouped
        .into_iter()
        .map(|((rule, z), ds)| {
            let n = ds.len() as f64;
            ExploitDelta {
                rule: UpdateRule::from_code(rule).unwrap(),
                z: f64::from_bits(z),
                pairs: ds.len(),
                delta_last: ds.iter().map(|d| d.0).sum::<f64>() / n,
                delta_best: ds.iter().map(|d| d.1).sum::<f64>() / n,
            }
        })
        .collect();
    Report {
        runs: analyses,
        exploit_deltas,
    }
}

/// Loads every run directory, builds the report and, when `out` is given,
/// writes `report.json` plus plot-ready accuracy and mask-change series.
pub fn analyze(dirs: &[PathBuf], out: Option<&Path>) -> Result<Report> {
    if dirs.is_empty() {
        return Err(Error::Config("analyze needs at least one run directory".into()));
    }
    let runs = dirs
        .iter()
        .map(|d| load_run(d).map(|(rows, s)| (d.clone(), rows, s)))
        .collect::<Result<Vec<_>>>()?;
    let report = analyze_runs(&runs);
    if let Some(out) = out {
        let json = serde_json::to_vec_pretty(&report).map_err(|e| Error::Metrics(e.to_string()))?;
        write_atomic(&out.join("report.json"), &json)?;
        let mut acc = String::from("run,epoch,split,accuracy\n");
        let mut churn = String::from("run,epoch,iteration,mask_change_ratio\n");
        for (dir, rows, _) in &runs {
            let name = dir.display();
            for r in rows {
                match (r.split.as_str(), r.accuracy, r.mask_change_ratio) {
                    ("mask", _, Some(c)) => churn.push_str(&format!("{name},{},{},{c}\n", r.epoch, r.iteration)),
                    (split, Some(a), _) => acc.push_str(&format!("{name},{},{split},{a}\n", r.epoch)),
                    _ => {}
                }
            }
        }
        write_atomic(&out.join("accuracy_series.csv"), acc.as_bytes())?;
        write_atomic(&out.join("mask_change_series.csv"), churn.as_bytes())?;
    }
    Ok(report)
}
