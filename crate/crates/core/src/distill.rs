//! Training loops: plain baselines, SR teachers, knowledge extraction and
//! distilled LR students.
//!
//! Every random draw is keyed by `(seed, epoch, sample id)` or
//! `(seed, epoch, batch)`, and training samples are put in id order before
//! shuffling, so a run depends only on the dataset contents and the config.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::error::{Error, Result};
use crate::fusion::{apply_thresholds, f1_scores, FusionConfig, ScoreMatrix};
use crate::kvfile::KvFile;
use crate::losses::{asl_loss, bce_loss, total_loss, AslParams, LossValue};
use crate::net::{backward, forward_with_masks, infer, init_model, sigmoid, Masks, MlpModel, ModelConfig};
use crate::optim::{AdamWParams, AdamWState, LrSchedule};
use crate::seed::{self, stream};
use crate::synthdata::{
    leading_frame_indices, midpoint_sample_indices, uniform_sample_indices, Dataset, LabeledSample, Tier,
};

/// Teacher probabilities for each training sample, keyed by sample id.
pub type DistillTarget = ScoreMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Bce,
    Asl,
    Total,
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bce" => Ok(Self::Bce),
            "asl" => Ok(Self::Asl),
            "total" => Ok(Self::Total),
            other => Err(format!("unknown loss `{other}` (expected bce, asl or total)")),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Bce => "bce",
            Self::Asl => "asl",
            Self::Total => "total",
        })
    }
}

/// Temporal sampling used for training features. Evaluation always uses
/// the deterministic counterpart (clip midpoints, or the same leading frames).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// One random frame per clip.
    Uniform,
    /// The first `K` frames.
    Leading,
}

impl FromStr for Sampling {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "leading" => Ok(Self::Leading),
            other => Err(format!("unknown sampling `{other}` (expected uniform or leading)")),
        }
    }
}

impl std::fmt::Display for Sampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Leading => "leading",
        })
    }
}

/// How frames are picked when building a feature vector.
pub enum FrameSelection<'a> {
    Uniform(&'a mut seed::Rng),
    Midpoint,
    Leading,
}

/// Learning-rate schedule in epochs; converted to optimizer steps once the
/// number of batches per epoch is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSchedule {
    pub base_lr: f64,
    pub warmup_epochs: u64,
    pub cycle_epochs: u64,
    pub cycle_mult: u64,
    pub eta_min: f64,
}

impl EpochSchedule {
    pub fn to_steps(&self, steps_per_epoch: u64) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            warmup_steps: self.warmup_epochs * steps_per_epoch,
            cycle_len: self.cycle_epochs * steps_per_epoch,
            cycle_mult: self.cycle_mult,
            eta_min: self.eta_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub alpha: f64,
    pub asl: AslParams,
    pub schedule: EpochSchedule,
    pub adamw: AdamWParams,
    pub hidden: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub drop_path: f64,
    /// Clips per video (`K`).
    pub clips: usize,
    pub sampling: Sampling,
    pub tier: Tier,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (the last epoch is always written).
    pub checkpoint_every: usize,
    /// Also report each epoch's loss under the pre-epoch weights.
    pub audit: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            loss: LossKind::Bce,
            alpha: 0.5,
            asl: AslParams::default(),
            schedule: EpochSchedule {
                base_lr: 1e-3,
                warmup_epochs: 1,
                cycle_epochs: 10,
                cycle_mult: 2,
                eta_min: 0.0,
            },
            adamw: AdamWParams::default(),
            hidden: 64,
            blocks: 2,
            dropout: 0.5,
            drop_path: 0.4,
            clips: 16,
            sampling: Sampling::Uniform,
            tier: Tier::Lr,
            seed: 0,
            checkpoint_every: 1,
            audit: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.clips == 0 || self.checkpoint_every == 0 {
            return Err(Error::config("epochs, batch_size, clips and checkpoint_every must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        self.asl.validate()?;
        self.adamw.validate()?;
        self.schedule.to_steps(1).validate()?;
        self.model_config(1, 1).validate()
    }

    pub fn model_config(&self, input_dim: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden: self.hidden,
            blocks: self.blocks,
            classes,
            dropout: self.dropout,
            drop_path: self.drop_path,
        }
    }

    /// Unspecified keys keep their defaults; unknown keys are rejected.
    pub fn from_kv(mut kv: KvFile) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            epochs: kv.take_or("epochs", d.epochs)?,
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            loss: kv.take_or("loss", d.loss)?,
            alpha: kv.take_or("alpha", d.alpha)?,
            asl: AslParams {
                gamma_pos: kv.take_or("asl_gamma_pos", d.asl.gamma_pos)?,
                gamma_neg: kv.take_or("asl_gamma_neg", d.asl.gamma_neg)?,
                margin: kv.take_or("asl_margin", d.asl.margin)?,
            },
            schedule: EpochSchedule {
                base_lr: kv.take_or("base_lr", d.schedule.base_lr)?,
                warmup_epochs: kv.take_or("warmup_epochs", d.schedule.warmup_epochs)?,
                cycle_epochs: kv.take_or("cycle_epochs", d.schedule.cycle_epochs)?,
                cycle_mult: kv.take_or("cycle_mult", d.schedule.cycle_mult)?,
                eta_min: kv.take_or("eta_min", d.schedule.eta_min)?,
            },
            adamw: AdamWParams {
                beta1: kv.take_or("beta1", d.adamw.beta1)?,
                beta2: kv.take_or("beta2", d.adamw.beta2)?,
                eps: kv.take_or("eps", d.adamw.eps)?,
                weight_decay: kv.take_or("weight_decay", d.adamw.weight_decay)?,
            },
            hidden: kv.take_or("hidden", d.hidden)?,
            blocks: kv.take_or("blocks", d.blocks)?,
            dropout: kv.take_or("dropout", d.dropout)?,
            drop_path: kv.take_or("drop_path", d.drop_path)?,
            clips: kv.take_or("clips", d.clips)?,
            sampling: kv.take_or("sampling", d.sampling)?,
            tier: kv.take_or("tier", d.tier)?,
            seed: kv.take_or("seed", d.seed)?,
            checkpoint_every: kv.take_or("checkpoint_every", d.checkpoint_every)?,
            audit: kv.take_or("audit", d.audit)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(KvFile::read(path)?)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| writeln!(out, "{k} = {v}").unwrap();
        put("epochs", &self.epochs);
        put("batch_size", &self.batch_size);
        put("loss", &self.loss);
        put("alpha", &self.alpha);
        put("asl_gamma_pos", &self.asl.gamma_pos);
        put("asl_gamma_neg", &self.asl.gamma_neg);
        put("asl_margin", &self.asl.margin);
        put("base_lr", &self.schedule.base_lr);
        put("warmup_epochs", &self.schedule.warmup_epochs);
        put("cycle_epochs", &self.schedule.cycle_epochs);
        put("cycle_mult", &self.schedule.cycle_mult);
        put("eta_min", &self.schedule.eta_min);
        put("beta1", &self.adamw.beta1);
        put("beta2", &self.adamw.beta2);
        put("eps", &self.adamw.eps);
        put("weight_decay", &self.adamw.weight_decay);
        put("hidden", &self.hidden);
        put("blocks", &self.blocks);
        put("dropout", &self.dropout);
        put("drop_path", &self.drop_path);
        put("clips", &self.clips);
        put("sampling", &self.sampling);
        put("tier", &self.tier);
        put("seed", &self.seed);
        put("checkpoint_every", &self.checkpoint_every);
        put("audit", &self.audit);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Index of the first epoch run here (non-zero after a resume).
    pub start_epoch: usize,
    /// Mean training loss per epoch, weighted by batch size.
    pub epoch_losses: Vec<f64>,
    /// Validation sample-F1 at threshold 0.5, per epoch.
    pub epoch_val_f1: Vec<f64>,
    /// Per-epoch loss under the weights held at the start of the epoch.
    pub audit_losses: Option<Vec<f64>>,
    pub checkpoint_paths: Vec<PathBuf>,
    pub val_scores: Option<ScoreMatrix>,
    pub test_scores: Option<ScoreMatrix>,
    /// `(completed epochs, model)` after every epoch, when requested.
    pub snapshots: Vec<(usize, MlpModel)>,
}

/// `K·h·w` features for one sample: the chosen frames flattened row-major.
pub fn featurize(sample: &LabeledSample, tier: Tier, clips: usize, selection: FrameSelection) -> Result<Vec<f64>> {
    let frames = &sample.video(tier).frames;
    let t = frames.len_of(Axis(0));
    let indices = match selection {
        FrameSelection::Uniform(rng) => uniform_sample_indices(t, clips, rng)?,
        FrameSelection::Midpoint => midpoint_sample_indices(t, clips)?,
        FrameSelection::Leading => leading_frame_indices(t, clips)?,
    };
    let mut out = Vec::with_capacity(clips * frames.len() / t.max(1));
    for i in indices {
        out.extend(frames.index_axis(Axis(0), i).iter());
    }
    Ok(out)
}

pub fn feature_dim(dataset: &Dataset, tier: Tier, clips: usize) -> usize {
    let (h, w) = dataset.geometry.tier_dims(tier);
    clips * h * w
}

fn feature_matrix<'s>(
    samples: impl ExactSizeIterator<Item = &'s LabeledSample>,
    dim: usize,
    mut row: impl FnMut(&LabeledSample) -> Result<Vec<f64>>,
) -> Result<Array2<f64>> {
    let n = samples.len();
    let mut values = Vec::with_capacity(n * dim);
    for s in samples {
        let f = row(s)?;
        if f.len() != dim {
            return Err(Error::shape(format!(
                "sample {} yields {} features, expected {dim}",
                s.id,
                f.len()
            )));
        }
        values.extend(f);
    }
    Ok(Array2::from_shape_vec((n, dim), values).expect("row lengths checked"))
}

/// Eval-mode probabilities for every sample, in dataset order.
pub fn score_dataset(model: &MlpModel, dataset: &Dataset, config: &TrainConfig) -> Result<ScoreMatrix> {
    score_with(model, dataset, config.tier, config.clips, config.sampling)
}

fn score_with(model: &MlpModel, dataset: &Dataset, tier: Tier, clips: usize, sampling: Sampling) -> Result<ScoreMatrix> {
    let dim = feature_dim(dataset, tier, clips);
    if dim != model.config.input_dim {
        return Err(Error::shape(format!(
            "model expects {} inputs, {tier} features with K={clips} have {dim}",
            model.config.input_dim
        )));
    }
    let x = feature_matrix(dataset.samples.iter(), dim, |s| {
        let sel = match sampling {
            Sampling::Uniform => FrameSelection::Midpoint,
            Sampling::Leading => FrameSelection::Leading,
        };
        featurize(s, tier, clips, sel)
    })?;
    let probs = infer(model, x.view())?.mapv(sigmoid);
    ScoreMatrix::new(dataset.ids(), probs)
}

/// Teacher probabilities on the SR tier with midpoint sampling.
pub fn extract_knowledge(teacher: &MlpModel, dataset: &Dataset, clips: usize) -> Result<DistillTarget> {
    score_with(teacher, dataset, Tier::Sr, clips, Sampling::Uniform)
}

fn sample_f1_at_half(scores: &ScoreMatrix, dataset: &Dataset) -> Result<f64> {
    let config = FusionConfig {
        thresholds: vec![0.5; scores.num_classes()],
        group_map: dataset.group_map.clone(),
        fallback_argmax: false,
    };
    let preds = apply_thresholds(scores, &config)?;
    Ok(f1_scores(preds.view(), dataset.label_matrix().view())?.sample)
}

/// Training data in canonical (id) order with labels and joined knowledge.
struct Prepared<'a> {
    samples: Vec<&'a LabeledSample>,
    labels: Array2<f64>,
    knowledge: Option<Array2<f64>>,
    input_dim: usize,
    classes: usize,
}

impl<'a> Prepared<'a> {
    fn new(train: &'a Dataset, knowledge: Option<&DistillTarget>, config: &TrainConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::config("training set is empty"));
        }
        let mut samples: Vec<&LabeledSample> = train.samples.iter().collect();
        samples.sort_by_key(|s| s.id);
        if samples.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::IdMismatch("duplicate sample id in training set".into()));
        }
        let classes = train.num_classes;
        let labels = Array2::from_shape_fn((samples.len(), classes), |(i, c)| f64::from(samples[i].labels[c]));
        let knowledge = match knowledge {
            None => None,
            Some(k) => {
                if k.num_classes() != classes {
                    return Err(Error::shape(format!(
                        "knowledge has {} classes, dataset has {classes}",
                        k.num_classes()
                    )));
                }
                if k.len() != samples.len() {
                    return Err(Error::IdMismatch(format!(
                        "knowledge has {} rows for {} training samples",
                        k.len(),
                        samples.len()
                    )));
                }
                let index: HashMap<u64, usize> = k.ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
                let mut rows = Array2::zeros((samples.len(), classes));
                for (i, s) in samples.iter().enumerate() {
                    let r = *index
                        .get(&s.id)
                        .ok_or_else(|| Error::IdMismatch(format!("no knowledge row for sample {}", s.id)))?;
                    rows.row_mut(i).assign(&k.scores.row(r));
                }
                Some(rows)
            }
        };
        Ok(Self {
            input_dim: feature_dim(train, config.tier, config.clips),
            samples,
            labels,
            knowledge,
            classes,
        })
    }

    fn epoch_order(&self, config: &TrainConfig, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut seed::rng(config.seed, stream::SHUFFLE, epoch as u64));
        order
    }

    fn batch(&self, config: &TrainConfig, model_cfg: &ModelConfig, epoch: usize, index: usize, members: &[usize]) -> Result<Batch> {
        let feat_seed = seed::derive(config.seed, stream::FEATURIZE, epoch as u64);
        let x = feature_matrix(members.iter().map(|&i| self.samples[i]), self.input_dim, |s| {
            let sel = match config.sampling {
                Sampling::Uniform => {
                    let mut rng = seed::rng(feat_seed, stream::FEATURIZE, s.id);
                    return featurize(s, config.tier, config.clips, FrameSelection::Uniform(&mut rng));
                }
                Sampling::Leading => FrameSelection::Leading,
            };
            featurize(s, config.tier, config.clips, sel)
        })?;
        let y = self.labels.select(Axis(0), members);
        let k = self.knowledge.as_ref().map(|k| k.select(Axis(0), members));
        let mut rng = seed::rng(seed::derive(config.seed, stream::MASKS, epoch as u64), stream::MASKS, index as u64);
        let masks = Masks::sample(model_cfg, members.len(), &mut rng);
        Ok(Batch { x, y, k, masks })
    }
}

struct Batch {
    x: Array2<f64>,
    y: Array2<f64>,
    k: Option<Array2<f64>>,
    masks: Masks,
}

fn batch_loss(config: &TrainConfig, logits: ArrayView2<f64>, batch: &Batch) -> Result<LossValue> {
    match config.loss {
        LossKind::Bce => bce_loss(logits, batch.y.view()),
        LossKind::Asl => asl_loss(logits, batch.y.view(), config.asl),
        LossKind::Total => {
            let k = batch
                .k
                .as_ref()
                .ok_or_else(|| Error::config("loss `total` needs distillation targets"))?;
            total_loss(logits, batch.y.view(), k.view(), config.alpha)
        }
    }
}

/// A configurable training run. [`train_model`] and [`distill_student`]
/// cover the common cases.
pub struct Trainer<'a> {
    train: &'a Dataset,
    config: TrainConfig,
    val: Option<&'a Dataset>,
    test: Option<&'a Dataset>,
    knowledge: Option<&'a DistillTarget>,
    checkpoint_dir: Option<PathBuf>,
    resume: Option<Checkpoint>,
    keep_snapshots: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(train: &'a Dataset, config: TrainConfig) -> Self {
        Self {
            train,
            config,
            val: None,
            test: None,
            knowledge: None,
            checkpoint_dir: None,
            resume: None,
            keep_snapshots: false,
        }
    }

    pub fn validation(mut self, val: &'a Dataset) -> Self {
        self.val = Some(val);
        self
    }

    pub fn test(mut self, test: &'a Dataset) -> Self {
        self.test = Some(test);
        self
    }

    pub fn knowledge(mut self, knowledge: &'a DistillTarget) -> Self {
        self.knowledge = Some(knowledge);
        self
    }

    pub fn checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn resume_from(mut self, checkpoint: Checkpoint) -> Self {
        self.resume = Some(checkpoint);
        self
    }

    pub fn keep_snapshots(mut self, keep: bool) -> Self {
        self.keep_snapshots = keep;
        self
    }

    pub fn run(self) -> Result<(MlpModel, TrainReport)> {
        let cfg = &self.config;
        cfg.validate()?;
        self.train.validate()?;
        let prep = Prepared::new(self.train, self.knowledge, cfg)?;
        let model_cfg = cfg.model_config(prep.input_dim, prep.classes);
        let steps_per_epoch = prep.samples.len().div_ceil(cfg.batch_size) as u64;
        let schedule = cfg.schedule.to_steps(steps_per_epoch);

        let (mut model, mut opt, start_epoch) = match self.resume {
            Some(ck) => {
                if ck.model.config != model_cfg || ck.seed != cfg.seed {
                    return Err(Error::config("checkpoint does not match the training configuration"));
                }
                if ck.epoch > cfg.epochs {
                    return Err(Error::config(format!(
                        "checkpoint is at epoch {}, beyond the configured {}",
                        ck.epoch, cfg.epochs
                    )));
                }
                let opt = ck
                    .optimizer
                    .ok_or_else(|| Error::config("checkpoint carries no optimizer state"))?;
                (ck.model, opt, ck.epoch)
            }
            None => {
                let model = init_model(model_cfg, cfg.seed)?;
                let sizes: Vec<usize> = model.params.tensors().iter().map(|(t, _)| t.len()).collect();
                (model, AdamWState::new(cfg.adamw, &sizes)?, 0)
            }
        };
        if opt.step != start_epoch as u64 * steps_per_epoch {
            return Err(Error::config("optimizer step count does not match the checkpoint epoch"));
        }

        let mut report = TrainReport {
            start_epoch,
            epoch_losses: Vec::new(),
            epoch_val_f1: Vec::new(),
            audit_losses: cfg.audit.then(Vec::new),
            checkpoint_paths: Vec::new(),
            val_scores: None,
            test_scores: None,
            snapshots: Vec::new(),
        };
        if let Some(dir) = &self.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }

        for epoch in start_epoch..cfg.epochs {
            let pre_epoch = cfg.audit.then(|| model.clone());
            let order = prep.epoch_order(cfg, epoch);
            let mut loss_sum = 0.0;
            let mut audit_sum = 0.0;
            for (b, members) in order.chunks(cfg.batch_size).enumerate() {
                let batch = prep.batch(cfg, &model_cfg, epoch, b, members)?;
                if let Some(pre) = &pre_epoch {
                    let (logits, _) = forward_with_masks(pre, batch.x.view(), batch.masks.clone())?;
                    audit_sum += batch_loss(cfg, logits.view(), &batch)?.value * members.len() as f64;
                }
                let (logits, cache) = forward_with_masks(&model, batch.x.view(), batch.masks.clone())?;
                if logits.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        batch: b + 1,
                        loss: f64::NAN,
                    });
                }
                let loss = batch_loss(cfg, logits.view(), &batch)?;
                if !loss.value.is_finite() {
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        batch: b + 1,
                        loss: loss.value,
                    });
                }
                loss_sum += loss.value * members.len() as f64;
                let grads = backward(&model, &cache, loss.grad.view())?;
                let lr = schedule.lr_at(opt.step)?;
                let grad_refs: Vec<&[f64]> = grads.tensors().into_iter().map(|(g, _)| g).collect();
                opt.step(&mut model.params.tensors_mut(), &grad_refs, lr)?;
            }
            if !model.params.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: order.len().div_ceil(cfg.batch_size),
                    loss: f64::NAN,
                });
            }
            let n = prep.samples.len() as f64;
            report.epoch_losses.push(loss_sum / n);
            if let Some(a) = report.audit_losses.as_mut() {
                a.push(audit_sum / n);
            }

            let done = epoch + 1;
            if let Some(val) = self.val {
                let scores = score_dataset(&model, val, cfg)?;
                report.epoch_val_f1.push(sample_f1_at_half(&scores, val)?);
                if done == cfg.epochs {
                    report.val_scores = Some(scores);
                }
            }
            log::debug!(
                "epoch {done}/{}: loss {:.6}{}",
                cfg.epochs,
                loss_sum / n,
                report
                    .epoch_val_f1
                    .last()
                    .map(|f| format!(", val sample-F1 {f:.4}"))
                    .unwrap_or_default()
            );
            if let Some(dir) = &self.checkpoint_dir {
                if done % cfg.checkpoint_every == 0 || done == cfg.epochs {
                    let path = dir.join(format!("epoch_{done}.ckpt"));
                    save_checkpoint(
                        &path,
                        &Checkpoint {
                            model: model.clone(),
                            seed: cfg.seed,
                            epoch: done,
                            optimizer: Some(opt.clone()),
                        },
                    )?;
                    report.checkpoint_paths.push(path);
                }
            }
            if self.keep_snapshots {
                report.snapshots.push((done, model.clone()));
            }
        }

        if let Some(test) = self.test {
            report.test_scores = Some(score_dataset(&model, test, cfg)?);
        }
        Ok((model, report))
    }
}

/// Recomputes an epoch's audit loss from the weights held before it.
pub fn audit_epoch_loss(
    pre_epoch: &MlpModel,
    train: &Dataset,
    knowledge: Option<&DistillTarget>,
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let prep = Prepared::new(train, knowledge, config)?;
    let order = prep.epoch_order(config, epoch);
    let mut sum = 0.0;
    for (b, members) in order.chunks(config.batch_size).enumerate() {
        let batch = prep.batch(config, &pre_epoch.config, epoch, b, members)?;
        let (logits, _) = forward_with_masks(pre_epoch, batch.x.view(), batch.masks.clone())?;
        sum += batch_loss(config, logits.view(), &batch)?.value * members.len() as f64;
    }
    Ok(sum / prep.samples.len() as f64)
}

pub fn train_model(
    train: &Dataset,
    val: Option<&Dataset>,
    test: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    let mut t = Trainer::new(train, config.clone());
    if let Some(v) = val {
        t = t.validation(v);
    }
    if let Some(s) = test {
        t = t.test(s);
    }
    t.run()
}

/// Student training against `alpha·BCE + (1-alpha)·KD`, whatever loss the
/// config names.
pub fn distill_student(
    train: &Dataset,
    val: Option<&Dataset>,
    test: Option<&Dataset>,
    knowledge: &DistillTarget,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    let config = TrainConfig {
        loss: LossKind::Total,
        ..config.clone()
    };
    let mut t = Trainer::new(train, config).knowledge(knowledge);
    if let Some(v) = val {
        t = t.validation(v);
    }
    if let Some(s) = test {
        t = t.test(s);
    }
    t.run()
}
