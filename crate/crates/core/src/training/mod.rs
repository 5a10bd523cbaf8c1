//! Optimization loop, evaluation and persistence of training state.

mod metrics;
mod optim;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::config::KeyValues;
use crate::data::{SampleSet, Splits, Standardizer};
use crate::error::{Error, Result};
use crate::losses::{hiest_objective, LossBreakdown, LossLog};
use crate::model::{forward, Checkpoint, HiestConfig, HiestParams, HierarchyGraphs};
use crate::tensor::Tensor;

pub use metrics::{MetricAccumulator, MetricReport, Metrics, ReportBuilder, REPORT_HORIZONS};
pub use optim::{AdamW, StepReport};

/// When the global adjacency is recomputed from the mapping logits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AgRefresh {
    /// Every forward pass, differentiably.
    #[default]
    Step,
    /// Once per epoch, detached.
    Epoch,
}

impl fmt::Display for AgRefresh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgRefresh::Step => "step",
            AgRefresh::Epoch => "epoch",
        })
    }
}

impl FromStr for AgRefresh {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "step" => Ok(AgRefresh::Step),
            "epoch" => Ok(AgRefresh::Epoch),
            _ => Err(format!("expected step or epoch, got `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Multipliers of `[l_pre, l_rec_ro, l_rec_gr, l_ort]`.
    pub loss_weights: [f64; 4],
    pub ag_refresh: AgRefresh,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            clip_norm: 5.0,
            batch_size: 64,
            max_epochs: 100,
            patience: 15,
            seed: 0,
            loss_weights: [1.0; 4],
            ag_refresh: AgRefresh::Step,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be finite and >= 0", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be finite and >= 0".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.loss_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("lr", self.lr);
        kv.set("weight_decay", self.weight_decay);
        kv.set("clip_norm", self.clip_norm);
        kv.set("batch_size", self.batch_size);
        kv.set("max_epochs", self.max_epochs);
        kv.set("patience", self.patience);
        kv.set("seed", self.seed);
        for (k, w) in ["w_pre", "w_rec_ro", "w_rec_gr", "w_ort"].iter().zip(self.loss_weights) {
            kv.set(k, w);
        }
        kv.set("ag_refresh", self.ag_refresh);
    }

    pub fn read_kv(&mut self, kv: &KeyValues) -> Result<()> {
        kv.read_into("lr", &mut self.lr)?;
        kv.read_into("weight_decay", &mut self.weight_decay)?;
        kv.read_into("clip_norm", &mut self.clip_norm)?;
        kv.read_into("batch_size", &mut self.batch_size)?;
        kv.read_into("max_epochs", &mut self.max_epochs)?;
        kv.read_into("patience", &mut self.patience)?;
        kv.read_into("seed", &mut self.seed)?;
        for (i, k) in ["w_pre", "w_rec_ro", "w_rec_gr", "w_ort"].iter().enumerate() {
            kv.read_into(k, &mut self.loss_weights[i])?;
        }
        kv.read_into("ag_refresh", &mut self.ag_refresh)?;
        Ok(())
    }
}

/// Everything needed to continue training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: HiestParams,
    pub optimizer: AdamW,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    pub best_val_mae: f64,
    pub best_params: HiestParams,
    pub best_epoch: usize,
    pub epochs_since_best: usize,
}

impl TrainState {
    pub fn new(params: HiestParams, cfg: &TrainConfig) -> Self {
        let shapes: Vec<Vec<usize>> = params.named().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        Self {
            optimizer: AdamW::new(&refs, cfg.weight_decay, cfg.clip_norm),
            best_params: params.clone(),
            params,
            epoch: 0,
            step: 0,
            best_val_mae: f64::INFINITY,
            best_epoch: 0,
            epochs_since_best: 0,
        }
    }
}

/// Per-epoch summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mae: f64,
    pub val: Metrics,
}

/// Writes `epoch,val_mae,val_mape,val_rmse` rows.
pub struct EpochLog {
    out: Box<dyn Write>,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch,val_mae,val_mape,val_rmse";

    pub fn create(path: &Path) -> Result<Self> {
        let mut out: Box<dyn Write> = Box::new(std::io::BufWriter::new(std::fs::File::create(path)?));
        writeln!(out, "{}", Self::HEADER)?;
        Ok(Self { out })
    }

    pub fn append(&mut self, r: &EpochRecord) -> Result<()> {
        let mape = r.val.mape.map_or_else(|| "NA".to_string(), |v| v.to_string());
        writeln!(self.out, "{},{},{mape},{}", r.epoch, r.val.mae, r.val.rmse)?;
        self.out.flush()?;
        Ok(())
    }
}

/// Optional sinks for progress.
#[derive(Default)]
pub struct TrainLogs {
    pub steps: Option<LossLog>,
    pub epochs: Option<EpochLog>,
    /// Called after every epoch with the fresh record and state.
    pub on_epoch: Option<Box<dyn FnMut(&EpochRecord, &TrainState) -> Result<()>>>,
}

/// Inputs shared by training and evaluation.
pub struct Problem<'a> {
    pub model: &'a HiestConfig,
    pub hier: &'a HierarchyGraphs,
    pub splits: &'a Splits,
    pub norm: &'a Standardizer,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<LossBreakdown>,
    pub stopped_early: bool,
}

/// Trains from `state` until `max_epochs` epochs are complete or validation
/// MAE stalls for `patience` epochs. `state.best_params` holds the
/// parameters with the lowest validation MAE seen.
pub fn train(
    problem: &Problem<'_>,
    cfg: &TrainConfig,
    mut state: TrainState,
    logs: &mut TrainLogs,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    problem.model.validate()?;
    let train_set = &problem.splits.train;
    if train_set.is_empty() {
        return Err(Error::Size("no training windows".into()));
    }
    let names = state.params.names();
    let scale = problem.norm.target_scale();
    let mut epochs = Vec::new();
    let mut steps = Vec::new();
    let mut stopped_early = false;

    while state.epoch < cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(state.epoch as u64));
        order.shuffle(&mut rng);
        let frozen_ag = match cfg.ag_refresh {
            AgRefresh::Step => None,
            AgRefresh::Epoch => Some(problem.hier.global_adjacency_of(&state.params.mrg_logits)?),
        };

        let (mut loss_sum, mut mae_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.batch(chunk, problem.norm)?;
            let tape = Tape::new();
            let bound = state.params.bind(&tape);
            let out = forward(&tape, &batch.x, problem.hier, &bound, problem.model, frozen_ag.as_ref())?;
            let obj = hiest_objective(&out, &batch.y, Some(&batch.mask), problem.hier, scale, cfg.loss_weights)?;
            if !obj.breakdown.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: state.step,
                    breakdown: obj.breakdown.to_string(),
                });
            }
            let grads = tape.backward(obj.total)?;
            state.params.accumulate(&grads, &bound)?;
            let mut tensors = state.params.tensors_mut();
            state.optimizer.step(&names, &mut tensors, cfg.lr)?;

            if let Some(log) = logs.steps.as_mut() {
                log.append(state.step, &obj.breakdown)?;
            }
            steps.push(obj.breakdown);
            state.step += 1;
            loss_sum += obj.breakdown.total;
            mae_sum += obj.breakdown.l_pre;
            batches += 1;
        }
        if let Some(log) = logs.steps.as_mut() {
            log.flush()?;
        }

        let val = evaluate(&state.params, problem, &problem.splits.val, cfg.batch_size)?.overall;
        state.epoch += 1;
        if val.mae < state.best_val_mae {
            state.best_val_mae = val.mae;
            state.best_params = state.params.clone();
            state.best_epoch = state.epoch;
            state.epochs_since_best = 0;
        } else {
            state.epochs_since_best += 1;
        }
        let record = EpochRecord {
            epoch: state.epoch,
            train_loss: loss_sum / batches as f64,
            train_mae: mae_sum / batches as f64,
            val,
        };
        if let Some(log) = logs.epochs.as_mut() {
            log.append(&record)?;
        }
        if let Some(cb) = logs.on_epoch.as_mut() {
            cb(&record, &state)?;
        }
        epochs.push(record);
        if cfg.patience > 0 && state.epochs_since_best >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        state,
        epochs,
        steps,
        stopped_early,
    })
}

/// De-standardized predictions `[B, T, N, 1]` for the given windows.
pub fn predict(
    params: &HiestParams,
    problem: &Problem<'_>,
    set: &SampleSet,
    indices: &[usize],
) -> Result<Tensor> {
    let batch = set.batch(indices, problem.norm)?;
    let tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    let out = forward(&tape, &batch.x, problem.hier, &bound, problem.model, None)?;
    let scale = problem.norm.target_scale();
    Ok(out.prediction.scale(scale.std).add_scalar(scale.mean).to_tensor())
}

/// Masked MAE / MAPE / RMSE of `params` on every window of `set`.
pub fn evaluate(
    params: &HiestParams,
    problem: &Problem<'_>,
    set: &SampleSet,
    batch_size: usize,
) -> Result<MetricReport> {
    let mut report = ReportBuilder::new(problem.model.horizon);
    let all: Vec<usize> = (0..set.len()).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let batch = set.batch(chunk, problem.norm)?;
        let pred = predict(params, problem, set, chunk)?;
        report.add(&pred, &batch.y, &batch.mask)?;
    }
    Ok(report.finish())
}

/// Repeats the last observed input reading for every future step.
pub fn persistence_report(set: &SampleSet, norm: &Standardizer, horizon: usize) -> Result<MetricReport> {
    let mut report = ReportBuilder::new(horizon);
    let all: Vec<usize> = (0..set.len()).collect();
    for chunk in all.chunks(256) {
        let batch = set.batch(chunk, norm)?;
        let s = batch.y.shape().to_vec();
        let n = s[2];
        let pred = Tensor::from_fn(&s, |k| {
            let b = k / (s[1] * n);
            batch.last_value.data()[b * n + k % n]
        });
        report.add(&pred, &batch.y, &batch.mask)?;
    }
    Ok(report.finish())
}

/// Serializes training state with the configuration and normalization.
pub fn state_checkpoint(
    model: &HiestConfig,
    train_cfg: &TrainConfig,
    norm: &Standardizer,
    state: &TrainState,
) -> Checkpoint {
    let mut header = KeyValues::new();
    model.write_kv(&mut header);
    train_cfg.write_kv(&mut header);
    norm.write_kv(&mut header);
    header.set("epoch", state.epoch);
    header.set("step", state.step);
    header.set("best_val_mae", state.best_val_mae);
    header.set("best_epoch", state.best_epoch);
    header.set("epochs_since_best", state.epochs_since_best);
    header.set("adam_step", state.optimizer.step);
    let mut ck = Checkpoint::new(header);
    ck.push_params(&state.params);
    let names = state.params.names();
    for (name, t) in names.iter().zip(&state.best_params.named()) {
        ck.push(format!("best.{name}"), t.1);
    }
    for (name, (m, v)) in names.iter().zip(state.optimizer.m.iter().zip(&state.optimizer.v)) {
        ck.push(format!("adam.m.{name}"), m);
        ck.push(format!("adam.v.{name}"), v);
    }
    ck
}

/// Inverse of [`state_checkpoint`].
pub fn restore_state(ck: &Checkpoint) -> Result<(HiestConfig, TrainConfig, Standardizer, TrainState)> {
    let model = ck.config()?;
    let mut train_cfg = TrainConfig::default();
    train_cfg.read_kv(&ck.header)?;
    let norm = Standardizer::read_kv(&ck.header)?;
    let params = ck.params()?;
    let mut state = TrainState::new(params.clone(), &train_cfg);
    let need = |k: &str| -> Result<&str> {
        ck.header
            .get(k)
            .ok_or_else(|| Error::Checkpoint(format!("header lacks {k}")))
    };
    let parse = |k: &str| -> Result<f64> {
        need(k)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("header {k} is not a number")))
    };
    state.epoch = parse("epoch")? as usize;
    state.step = parse("step")? as usize;
    state.best_val_mae = parse("best_val_mae")?;
    state.best_epoch = parse("best_epoch")? as usize;
    state.epochs_since_best = parse("epochs_since_best")? as usize;
    state.optimizer.step = parse("adam_step")? as u64;
    let names = params.names();
    for (i, name) in names.iter().enumerate() {
        let get = |prefix: &str| {
            ck.get(&format!("{prefix}{name}"))
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing {prefix}{name}")))
        };
        state.optimizer.m[i] = get("adam.m.")?;
        state.optimizer.v[i] = get("adam.v.")?;
    }
    state
        .best_params
        .assign(|name| ck.get(&format!("best.{name}")).cloned())?;
    Ok((model, train_cfg, norm, state))
}

#[cfg(test)]
mod tests;
