//! Grids of training runs over one axis, repeated over seeds.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::analyze::late_change_ratio;
use super::config::RunConfig;
use super::train::{train, RunRecord};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::prune::UpdateRule;

pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Update rule name (`A`, `B`, `C`, `D_noFA`, `D`).
    Variant,
    /// Attention exponent.
    Z,
    /// Exploit epoch; `off` (or the epoch count) disables freezing.
    Exploit,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Variant => "variant",
            SweepAxis::Z => "z",
            SweepAxis::Exploit => "exploit",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variant" | "rule" => Ok(SweepAxis::Variant),
            "z" => Ok(SweepAxis::Z),
            "exploit" => Ok(SweepAxis::Exploit),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<String>,
    pub seeds: usize,
    /// Run every value both with the configured exploit epoch and with
    /// exploitation disabled.
    pub cross_exploit: bool,
    /// Worker threads; 0 means one per available core.
    pub jobs: usize,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub exploit: bool,
    pub n_seeds: usize,
    pub last_mean: f64,
    pub last_std: f64,
    pub best_mean: f64,
    pub best_std: f64,
    pub final_sparsity: f64,
    /// Empty when no mask refresh fell in the late exploration window.
    pub late_change: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepCell {
    pub value: String,
    pub exploit: bool,
    pub config: RunConfig,
    pub runs: Vec<RunRecord>,
}

impl SweepCell {
    pub fn aggregate(&self, axis: SweepAxis) -> SweepRow {
        let last: Vec<f64> = self.runs.iter().map(|r| r.summary.last_acc).collect();
        let best: Vec<f64> = self.runs.iter().map(|r| r.summary.best_acc).collect();
        let sparsity: Vec<f64> = self.runs.iter().map(|r| r.summary.final_sparsity).collect();
        let late: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|r| late_change_ratio(&r.rows, &r.summary))
            .collect();
        let (last_mean, last_std) = mean_std(&last);
        let (best_mean, best_std) = mean_std(&best);
        SweepRow {
            axis: axis.name().into(),
            value: self.value.clone(),
            exploit: self.exploit,
            n_seeds: self.runs.len(),
            last_mean,
            last_std,
            best_mean,
            best_std,
            final_sparsity: mean_std(&sparsity).0,
            late_change: (!late.is_empty()).then(|| mean_std(&late).0),
        }
    }
}

/// Applies one axis value to `base`.
pub fn apply_value(base: &RunConfig, axis: SweepAxis, value: &str) -> Result<RunConfig> {
    let mut cfg = base.clone();
    let bad = |what: &str| Error::Config(format!("invalid {what} value {value:?}"));
    match axis {
        SweepAxis::Variant => cfg.rule = UpdateRule::from_str(value).map_err(|_| bad("variant"))?,
        SweepAxis::Z => cfg.z = value.trim().parse().map_err(|_| bad("z"))?,
        SweepAxis::Exploit => {
            cfg.exploit_epoch = Some(match value.trim() {
                "off" | "none" => cfg.epochs,
                v => v.parse().map_err(|_| bad("exploit"))?,
            })
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cell_dir(root: &Option<PathBuf>, axis: SweepAxis, value: &str, exploit: Option<bool>, seed: u64) -> Option<PathBuf> {
    root.as_ref().map(|r| {
        let mut d = r.join(format!("{}={}", axis.name(), value));
        if let Some(on) = exploit {
            d = d.join(if on { "exploit" } else { "explore" });
        }
        d.join(format!("seed{seed}"))
    })
}

/// Runs every (value, exploit, seed) combination and, when the base config
/// names an output directory, writes per-run outputs below it plus an
/// aggregate `sweep.csv`.
pub fn sweep(base: &RunConfig, spec: &SweepSpec) -> Result<Vec<SweepCell>> {
    if spec.values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if spec.seeds == 0 {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut cells = Vec::new();
    for value in &spec.values {
        let cfg = apply_value(base, spec.axis, value)?;
        if spec.cross_exploit {
            let mut off = cfg.clone();
            off.exploit_epoch = Some(off.epochs);
            cells.push((value.clone(), cfg.exploit_enabled(), Some(true), cfg));
            cells.push((value.clone(), false, Some(false), off));
        } else {
            cells.push((value.clone(), cfg.exploit_enabled(), None, cfg));
        }
    }

    let mut jobs = Vec::new();
    for (c, (value, _, tag, cfg)) in cells.iter().enumerate() {
        for s in 0..spec.seeds {
            let mut run = cfg.clone();
            run.seed = base.seed + s as u64;
            run.out_dir = cell_dir(&base.out_dir, spec.axis, value, *tag, run.seed);
            jobs.push((c, s, run));
        }
    }

    let workers = match spec.jobs {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunRecord>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some((_, _, cfg)) = jobs.get(j) else { break };
                let r = train(cfg);
                results.lock().unwrap()[j] = Some(r);
            });
        }
    });

    let mut out: Vec<SweepCell> = cells
        .into_iter()
        .map(|(value, exploit, _, config)| SweepCell {
            value,
            exploit,
            config,
            runs: Vec::new(),
        })
        .collect();
    for ((c, _, _), r) in jobs.iter().zip(results.into_inner().unwrap()) {
        out[*c].runs.push(r.expect("every job ran")?);
    }

    if let Some(root) = &base.out_dir {
        std::fs::create_dir_all(root)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for cell in &out {
            w.serialize(cell.aggregate(spec.axis))
                .map_err(|e| Error::Metrics(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Metrics(e.to_string()))?;
        write_atomic(&root.join(SWEEP_FILE), &bytes)?;
    }
    Ok(out)
}
