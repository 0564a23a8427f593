use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DataSource, RunConfig};
use crate::data::{
    batch_indices, checkpoint, read_metrics, write_metrics, Checkpoint, Dataset, ImageSet, MetricRow, Split,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{build_mlp, ParamRegistry};
use crate::optim::{LrSchedule, Sgd};
use crate::prune::{GradualSchedule, MaskEvent, PruneState, UpdateRule};
use crate::tape::Tape;
use crate::tensor::{Precision, Scalar, Tensor};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Env var that turns on NaN/Inf checks at every op output.
pub const DEBUG_ENV: &str = "MAP_DEBUG_CHECKS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rule: UpdateRule,
    pub z: f64,
    pub seed: u64,
    pub epochs: usize,
    pub exploit_epoch: usize,
    pub exploit_enabled: bool,
    /// Last iteration at which the mask may change.
    pub exploit_iteration: u64,
    /// First iteration of the pruning ramp.
    pub prune_start_iteration: u64,
    pub total_iterations: u64,
    pub n_prunable: usize,
    pub last_acc: f64,
    pub best_acc: f64,
    pub best_epoch: usize,
    pub final_sparsity: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<MetricRow>,
    pub summary: RunSummary,
}

impl RunRecord {
    pub fn mask_events(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(|r| r.split == "mask")
    }

    pub fn test_rows(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(|r| r.split == "test")
    }
}

/// Train and test image sets for a config, before standardization.
pub fn load_images(cfg: &RunConfig) -> Result<(ImageSet, ImageSet)> {
    let (train, test) = match cfg.data {
        DataSource::Synthetic => {
            let spec = SyntheticSpec {
                classes: cfg.synthetic_classes,
                per_class: cfg.synthetic_per_class,
                dim: cfg.synthetic_dim,
                sigma: cfg.synthetic_sigma,
                seed: cfg.data_seed,
            };
            let test_spec = SyntheticSpec {
                per_class: cfg.synthetic_test_per_class,
                ..spec
            };
            (
                crate::data::gen_synthetic_split(&spec, Split::Train)?,
                crate::data::gen_synthetic_split(&test_spec, Split::Test)?,
            )
        }
        DataSource::Idx => {
            let path = |p: &Option<PathBuf>| p.clone().expect("validated");
            let train = ImageSet::load(path(&cfg.train_images), path(&cfg.train_labels), None)?;
            let test = ImageSet::load(path(&cfg.test_images), path(&cfg.test_labels), None)?;
            let classes = train.classes.max(test.classes);
            (
                ImageSet { classes, ..train },
                ImageSet { classes, ..test },
            )
        }
    };
    let train = match cfg.train_limit {
        Some(n) => train.truncate(n),
        None => train,
    };
    let test = match cfg.test_limit {
        Some(n) => test.truncate(n),
        None => test,
    };
    Ok((train, test))
}

pub fn load_data<T: Scalar>(cfg: &RunConfig) -> Result<(Dataset<T>, Dataset<T>)> {
    let (train, test) = load_images(cfg)?;
    Dataset::pair(&train, &test)
}

/// One training run: model, pruning state, optimizer and metric history.
pub struct Trainer<T> {
    cfg: RunConfig,
    train: Dataset<T>,
    test: Dataset<T>,
    pub registry: ParamRegistry<T>,
    pub prune: PruneState<T>,
    pub optimizer: Sgd<T>,
    lr: LrSchedule,
    schedule: GradualSchedule,
    rule: UpdateRule,
    pub next_epoch: usize,
    pub iteration: u64,
    pub rows: Vec<MetricRow>,
    best: Option<(f64, usize)>,
    iters_per_epoch: u64,
    debug_checks: bool,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: RunConfig, train: Dataset<T>, test: Dataset<T>) -> Result<Self> {
        cfg.validate()?;
        if cfg.precision != T::PRECISION {
            return Err(Error::Config(format!(
                "config asks for {:?} but the trainer runs in {:?}",
                cfg.precision,
                T::PRECISION
            )));
        }
        let specs = cfg.layer_specs(train.dim(), train.classes);
        let registry = build_mlp::<T>(&specs, cfg.seed)?;
        let iters_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
        let exploit_at = cfg.exploit() as u64 * iters_per_epoch;
        let mut prune = PruneState::new(&registry, cfg.z, cfg.mask_freq, exploit_at, cfg.norm_scope, cfg.norm_kind)?;
        let schedule = cfg.schedule();
        prune.set_ratio(schedule.current_ratio(0))?;
        prune.refresh(&registry)?;
        let mut optimizer = Sgd::new(&registry, cfg.momentum, cfg.weight_decay)?;
        optimizer.decay_all = cfg.decay_all;
        optimizer.nesterov = cfg.nesterov;
        Ok(Self {
            lr: cfg.lr_schedule(),
            rule: cfg.rule,
            schedule,
            registry,
            prune,
            optimizer,
            train,
            test,
            next_epoch: 0,
            iteration: 0,
            rows: Vec::new(),
            best: None,
            iters_per_epoch,
            debug_checks: debug_checks_from_env(),
            cfg,
        })
    }

    /// Continues from a checkpoint; `prior_rows` are the metrics of the
    /// epochs it covers.
    pub fn resume(
        cfg: RunConfig,
        train: Dataset<T>,
        test: Dataset<T>,
        ck: Checkpoint<T>,
        prior_rows: Vec<MetricRow>,
    ) -> Result<Self> {
        let mut t = Self::new(cfg, train, test)?;
        if ck.registry.specs() != t.registry.specs() {
            return Err(Error::Config("checkpoint architecture does not match the config".into()));
        }
        if ck.rule != t.rule || ck.seed != t.cfg.seed {
            return Err(Error::Config("checkpoint rule or seed does not match the config".into()));
        }
        t.registry = ck.registry;
        t.prune = ck.prune;
        t.optimizer = ck.optimizer;
        t.lr = ck.lr;
        t.next_epoch = ck.next_epoch as usize;
        t.iteration = ck.iteration;
        t.best = ck.best.map(|(a, e)| (a, e as usize));
        t.rows = prior_rows
            .into_iter()
            .filter(|r| r.epoch < t.next_epoch)
            .collect();
        Ok(t)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn iters_per_epoch(&self) -> u64 {
        self.iters_per_epoch
    }

    pub fn total_iterations(&self) -> u64 {
        self.iters_per_epoch * self.cfg.epochs as u64
    }

    pub fn is_done(&self) -> bool {
        self.next_epoch >= self.cfg.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            registry: self.registry.clone(),
            prune: self.prune.clone(),
            rule: self.rule,
            optimizer: self.optimizer.clone(),
            lr: self.lr.clone(),
            seed: self.cfg.seed,
            next_epoch: self.next_epoch as u64,
            iteration: self.iteration,
            best: self.best.map(|(a, e)| (a, e as u64)),
        }
    }

    /// Weights the forward pass uses, one slice per registry parameter.
    fn forward_weights(&self) -> Vec<Vec<T>> {
        let eff = self.prune.effective_weights(&self.registry, self.rule);
        self.registry
            .params()
            .iter()
            .map(|p| match eff.get(&p.name) {
                Some(t) => t.data().to_vec(),
                None => p.tensor.data().to_vec(),
            })
            .collect()
    }

    /// Mean loss and accuracy on `ds` with the current effective weights.
    pub fn evaluate(&self, ds: &Dataset<T>) -> Result<(f64, f64)> {
        let weights = self.forward_weights();
        let refs: Vec<&[T]> = weights.iter().map(Vec::as_slice).collect();
        let rows: Vec<usize> = (0..ds.len()).collect();
        let (mut loss, mut correct) = (0.0, 0usize);
        for chunk in rows.chunks(1024) {
            let (x, labels) = ds.gather(chunk);
            let logits = self.registry.logits_with(&refs, &x)?;
            let (l, c) = loss_and_correct(&logits, &labels);
            loss += l;
            correct += c;
        }
        Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
    }

    pub fn test_set(&self) -> &Dataset<T> {
        &self.test
    }

    /// One optimization step on a batch; returns the batch loss and the
    /// number of correct predictions.
    fn step(&mut self, x: Tensor<T>, labels: &[usize], lr: f64) -> Result<(f64, usize)> {
        let eff = self.prune.effective_weights(&self.registry, self.rule);
        let mut tape = Tape::new().with_finite_checks(self.debug_checks);
        let vars = self.registry.bind(&mut tape, &eff)?;
        let xv = tape.leaf(x);
        let logits = self.registry.forward(&mut tape, &vars, xv)?;
        let correct = loss_and_correct(tape.value(logits), labels).1;
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        let loss_value = tape.value(loss).data()[0].to_f64();
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.next_epoch,
                iteration: self.iteration,
            });
        }
        tape.backward(loss)?;
        let grads: Vec<Vec<T>> = vars
            .iter()
            .map(|&v| tape.take_grad(v).expect("parameters require grad"))
            .collect();
        if self.debug_checks && grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let scale = self.prune.grad_scale(self.rule);
        self.optimizer
            .step(&mut self.registry, &grads, Some((&self.prune, &scale)), lr)?;
        Ok((loss_value, correct))
    }

    /// Runs the next epoch. `observe` sees the trainer after every iteration.
    pub fn run_epoch_with(&mut self, mut observe: impl FnMut(&Self)) -> Result<()> {
        let epoch = self.next_epoch;
        let ratio = self.schedule.current_ratio(epoch);
        self.prune.set_ratio(ratio)?;
        let lr = self.lr.lr_at(epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for rows in batch_indices(self.train.len(), self.cfg.batch_size, self.cfg.seed, epoch as u64) {
            self.iteration += 1;
            if let Some(ev) = self.prune.on_iteration(self.iteration, &self.registry)? {
                self.rows.push(mask_row(epoch, &ev, ratio, lr));
            }
            let (x, labels) = self.train.gather(&rows);
            let (l, c) = self.step(x, &labels, lr)?;
            loss_sum += l * rows.len() as f64;
            correct += c;
            observe(self);
        }
        let n = self.train.len() as f64;
        let sparsity = self.prune.sparsity();
        self.rows.push(MetricRow {
            epoch,
            iteration: self.iteration,
            split: "train".into(),
            loss: Some(loss_sum / n),
            accuracy: Some(correct as f64 / n),
            ratio,
            actual_sparsity: sparsity,
            mask_change_ratio: None,
            lr,
        });
        let (test_loss, test_acc) = self.evaluate(&self.test)?;
        self.rows.push(MetricRow {
            epoch,
            iteration: self.iteration,
            split: "test".into(),
            loss: Some(test_loss),
            accuracy: Some(test_acc),
            ratio,
            actual_sparsity: sparsity,
            mask_change_ratio: None,
            lr,
        });
        if self.best.is_none_or(|(b, _)| test_acc > b) {
            self.best = Some((test_acc, epoch));
        }
        self.next_epoch += 1;
        Ok(())
    }

    pub fn run_epoch(&mut self) -> Result<()> {
        self.run_epoch_with(|_| {})
    }

    pub fn summary(&self, wall_time: f64) -> RunSummary {
        let last_acc = self
            .rows
            .iter()
            .rev()
            .find(|r| r.split == "test")
            .and_then(|r| r.accuracy)
            .unwrap_or(0.0);
        let (best_acc, best_epoch) = self.best.unwrap_or((0.0, 0));
        RunSummary {
            rule: self.rule,
            z: self.cfg.z,
            seed: self.cfg.seed,
            epochs: self.cfg.epochs,
            exploit_epoch: self.cfg.exploit(),
            exploit_enabled: self.cfg.exploit_enabled(),
            exploit_iteration: self.prune.exploit_at,
            prune_start_iteration: self.cfg.prune_start() as u64 * self.iters_per_epoch + 1,
            total_iterations: self.total_iterations(),
            n_prunable: self.prune.n_prunable(),
            last_acc,
            best_acc,
            best_epoch,
            final_sparsity: self.prune.sparsity(),
            wall_time,
        }
    }

    /// Trains the remaining epochs, writing outputs if the config names a
    /// directory.
    pub fn run(&mut self) -> Result<RunRecord> {
        let start = Instant::now();
        let out = self.cfg.out_dir.clone();
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir)?;
            write_atomic(&dir.join(CONFIG_FILE), self.cfg.to_toml().as_bytes())?;
        }
        while !self.is_done() {
            self.run_epoch()?;
            if let Some(dir) = &out {
                let every = self.cfg.checkpoint_every;
                if every > 0 && self.next_epoch % every == 0 && !self.is_done() {
                    checkpoint::save_checkpoint(dir.join(format!("epoch{}.ckpt", self.next_epoch)), &self.checkpoint())?;
                    write_metrics(dir.join(METRICS_FILE), &self.rows)?;
                }
            }
        }
        let record = RunRecord {
            rows: self.rows.clone(),
            summary: self.summary(start.elapsed().as_secs_f64()),
        };
        if let Some(dir) = &out {
            write_outputs(dir, &record)?;
            checkpoint::save_checkpoint(dir.join(FINAL_CHECKPOINT), &self.checkpoint())?;
        }
        Ok(record)
    }
}

fn mask_row(epoch: usize, ev: &MaskEvent, ratio: f64, lr: f64) -> MetricRow {
    MetricRow {
        epoch,
        iteration: ev.iteration,
        split: "mask".into(),
        loss: None,
        accuracy: None,
        ratio,
        actual_sparsity: ev.sparsity,
        mask_change_ratio: Some(ev.change_ratio),
        lr,
    }
}

fn debug_checks_from_env() -> bool {
    std::env::var(DEBUG_ENV).is_ok_and(|v| v == "1")
}

/// Summed cross-entropy and correct count, computed in f64.
fn loss_and_correct<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> (f64, usize) {
    let c = logits.shape()[1];
    let mut loss = 0.0;
    let mut correct = 0;
    for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
        let mut arg = 0;
        for j in 1..c {
            if row[j] > row[arg] {
                arg = j;
            }
        }
        correct += (arg == label) as usize;
        let max = Scalar::to_f64(row[arg]);
        let denom: f64 = row.iter().map(|v| (Scalar::to_f64(*v) - max).exp()).sum();
        loss += denom.ln() - (Scalar::to_f64(row[label]) - max);
    }
    (loss, correct)
}

pub fn write_outputs(dir: &Path, record: &RunRecord) -> Result<()> {
    write_metrics(dir.join(METRICS_FILE), &record.rows)?;
    let json = serde_json::to_vec_pretty(&record.summary).map_err(|e| Error::Metrics(e.to_string()))?;
    write_atomic(&dir.join(SUMMARY_FILE), &json)
}

fn train_typed<T: Scalar>(cfg: &RunConfig) -> Result<RunRecord> {
    let (train, test) = load_data::<T>(cfg)?;
    Trainer::new(cfg.clone(), train, test)?.run()
}

/// Runs a full training job at the configured precision.
pub fn train(cfg: &RunConfig) -> Result<RunRecord> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg),
        Precision::F64 => train_typed::<f64>(cfg),
    }
}

fn resume_typed<T: Scalar>(cfg: &RunConfig, ckpt: &Path) -> Result<RunRecord> {
    let (train, test) = load_data::<T>(cfg)?;
    let ck = checkpoint::load_checkpoint::<T>(ckpt)?;
    let prior = match &cfg.out_dir {
        Some(dir) if dir.join(METRICS_FILE).exists() => read_metrics(dir.join(METRICS_FILE))?,
        _ => Vec::new(),
    };
    Trainer::resume(cfg.clone(), train, test, ck, prior)?.run()
}

/// Continues a run from a checkpoint file. Metrics of completed epochs are
/// taken from the output directory when present.
pub fn resume(cfg: &RunConfig, ckpt: &Path) -> Result<RunRecord> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => resume_typed::<f32>(cfg, ckpt),
        Precision::F64 => resume_typed::<f64>(cfg, ckpt),
    }
}
