//! Run configuration, the training loop, evaluation, ablation and prediction.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nnsam_core::autoconfig::{plan, Fingerprint, PlanConfig};
use nnsam_core::losses::{
    seg_loss_grad, softmax as softmax64, softmax_vjp, total_loss_grad, ClassStack, LevelSetStack, LossBreakdown, LossWeights,
    OneHotMask,
};
use nnsam_core::metrics::{aggregate, asd, dice_coefficient, LabelMask, MetricReport, SampleMetrics, Summary};
use nnsam_core::Grid;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{self, CheckpointHeader};
use crate::data::{
    augment, few_shot_order, fingerprint_train, load_manifest, load_sample, make_levelset_targets, preprocess, synth_generate,
    Difficulty, LevelSetTargets, Sample, Split,
};
use crate::encoder::FrozenEncoderSpec;
use crate::error::{io_err, Error, Result};
use crate::model::{argmax, ModelOptions, NnSamModel};
use crate::nn::keyed_rng;
use crate::optim::Sgd;
use crate::report;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::n_train")]
    pub n_train: usize,
    #[serde(default = "defaults::n_val")]
    pub n_val: usize,
    #[serde(default = "defaults::n_test")]
    pub n_test: usize,
    #[serde(default = "defaults::image_size")]
    pub size: usize,
    #[serde(default = "defaults::difficulty")]
    pub difficulty: Difficulty,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: defaults::n_train(),
            n_val: defaults::n_val(),
            n_test: defaults::n_test(),
            size: defaults::image_size(),
            difficulty: defaults::difficulty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Path to a `manifest.json`.
    Manifest(PathBuf),
    Synth(SynthSpec),
}

mod defaults {
    use super::*;

    pub fn n_train() -> usize {
        20
    }
    pub fn n_val() -> usize {
        20
    }
    pub fn n_test() -> usize {
        50
    }
    pub fn image_size() -> usize {
        256
    }
    pub fn difficulty() -> Difficulty {
        Difficulty::Easy
    }
    pub fn train_size() -> usize {
        20
    }
    pub fn yes() -> bool {
        true
    }
    pub fn epochs() -> usize {
        nnsam_core::autoconfig::DEFAULT_MAX_EPOCHS
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("runs/nnsam")
    }
    pub fn encoder() -> FrozenEncoderSpec {
        FrozenEncoderSpec::surrogate(0)
    }
}

/// Everything that defines a training run. Mirrors `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    #[serde(default = "defaults::train_size")]
    pub train_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default = "defaults::yes")]
    pub frozen_encoder: bool,
    #[serde(default = "defaults::encoder")]
    pub encoder: FrozenEncoderSpec,
    #[serde(default = "defaults::yes")]
    pub reg_head: bool,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    /// Side length images are resized to before training.
    #[serde(default = "defaults::image_size")]
    pub image_size: usize,
    #[serde(default = "defaults::yes")]
    pub augment: bool,
}

impl RunConfig {
    pub fn synth(spec: SynthSpec) -> Self {
        Self {
            image_size: spec.size,
            dataset: DatasetSource::Synth(spec),
            train_size: defaults::train_size(),
            seed: 0,
            loss_weights: LossWeights::default(),
            frozen_encoder: true,
            encoder: defaults::encoder(),
            reg_head: true,
            epochs: defaults::epochs(),
            output_dir: defaults::output_dir(),
            augment: true,
        }
    }

    /// Parses `run.json`; a relative manifest path is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        if let DatasetSource::Manifest(m) = &mut cfg.dataset {
            if m.is_relative() {
                *m = path.parent().unwrap_or(Path::new("")).join(&*m);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights.validate().map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        if self.train_size == 0 || self.epochs == 0 {
            return Err(Error::ConfigInvalid("train_size and epochs must be positive".into()));
        }
        if self.image_size < nnsam_core::autoconfig::MIN_SIDE {
            return Err(Error::ConfigInvalid(format!("image_size must be at least {}", nnsam_core::autoconfig::MIN_SIDE)));
        }
        Ok(())
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            frozen_encoder: self.frozen_encoder.then(|| self.encoder.clone()),
            reg_head: self.reg_head,
        }
    }
}

/// Raw (unprocessed) splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub classes: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn load_dataset(source: &DatasetSource) -> Result<Dataset> {
    match source {
        DatasetSource::Synth(s) => {
            let all = synth_generate(s.seed, s.n_train + s.n_val + s.n_test, s.size, s.difficulty)?;
            let mut it = all.into_iter();
            Ok(Dataset {
                classes: crate::data::SYNTH_CLASSES,
                train: it.by_ref().take(s.n_train).collect(),
                val: it.by_ref().take(s.n_val).collect(),
                test: it.collect(),
            })
        }
        DatasetSource::Manifest(path) => {
            let m = load_manifest(path)?;
            let load = |split| -> Result<Vec<Sample>> {
                m.split(split)
                    .iter()
                    .map(|id| load_sample(&m, m.entry(id).expect("validated manifest")))
                    .collect()
            };
            Ok(Dataset {
                classes: m.classes,
                train: load(Split::Train)?,
                val: load(Split::Val)?,
                test: load(Split::Test)?,
            })
        }
    }
}

/// Preprocessed splits plus the fingerprint and plan derived from the
/// training subset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub fingerprint: Fingerprint,
    pub plan: PlanConfig,
    pub data: Dataset,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let raw = load_dataset(&config.dataset)?;
    prepare_from(config, raw)
}

pub fn prepare_from(config: &RunConfig, raw: Dataset) -> Result<Prepared> {
    if config.train_size > raw.train.len() {
        return Err(Error::ConfigInvalid(format!(
            "train_size {} exceeds the {} available training samples",
            config.train_size,
            raw.train.len()
        )));
    }
    let ids: Vec<String> = raw.train.iter().map(|s| s.id.clone()).collect();
    let chosen = &few_shot_order(&ids, config.seed)[..config.train_size];
    let mut by_id: BTreeMap<&str, &Sample> = raw.train.iter().map(|s| (s.id.as_str(), s)).collect();
    let train_raw: Vec<Sample> = chosen.iter().map(|id| by_id.remove(id.as_str()).expect("id from train split").clone()).collect();
    let fp = fingerprint_train(&train_raw, config.image_size)?;
    let mut plan = plan(&fp)?;
    plan.max_epochs = config.epochs;
    let pre = |v: &[Sample]| v.iter().map(|s| preprocess(s, &fp)).collect::<Result<Vec<_>>>();
    let data = Dataset {
        classes: raw.classes,
        train: pre(&train_raw)?,
        val: pre(&raw.val)?,
        test: pre(&raw.test)?,
    };
    Ok(Prepared { fingerprint: fp, plan, data })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub total: f64,
    pub s: f64,
    pub l: f64,
    pub c: f64,
    pub val_dice: Option<f64>,
}

/// Progress of a run. All randomness comes from streams keyed by
/// `(seed, purpose, sample id, epoch)`, so the counters below are the
/// complete random state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    pub best_val_dice: Option<f64>,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochLog>,
    /// Running SHA-256 over every batch consumed so far.
    pub batch_digest: String,
}

#[derive(Debug, Clone)]
struct Target {
    onehot: OneHotMask,
    levelset: LevelSetTargets,
}

fn target_of(sample: &Sample, classes: usize) -> Result<Target> {
    Ok(Target {
        onehot: OneHotMask::from_labels(sample.label.labels(), classes)?,
        levelset: make_levelset_targets(&sample.label, classes)?,
    })
}

fn stack_images(samples: &[&Sample]) -> Tensor {
    let first = &samples[0].image;
    let mut data = Vec::with_capacity(samples.len() * first.data.len());
    samples.iter().for_each(|s| data.extend_from_slice(&s.image.data));
    Tensor::from_vec(samples.len(), first.channels, first.height, first.width, data)
}

fn to_stack(values: &[f32], c: usize, h: usize, w: usize) -> ClassStack {
    ClassStack::new(c, h, w, values.iter().map(|&v| v as f64).collect()).expect("sample length matches")
}

/// Loss of one item and gradients on its logits and level-set outputs.
fn item_loss(
    logits: &[f32],
    levelset: Option<&[f32]>,
    shape: (usize, usize, usize),
    target: &Target,
    w: &LossWeights,
) -> Result<(LossBreakdown, ClassStack, Option<ClassStack>)> {
    let (c, h, wd) = shape;
    let p = softmax64(&to_stack(logits, c, h, wd));
    match levelset {
        Some(ls) => {
            let pred = LevelSetStack::new(to_stack(ls, c, h, wd))?;
            let (b, g) = total_loss_grad(&p, &target.onehot, &pred, &target.levelset.stack, w, Some(&target.levelset.active))?;
            Ok((b, softmax_vjp(&p, &g.prob)?, Some(g.levelset)))
        }
        None => {
            let (s, mut g) = seg_loss_grad(&p, &target.onehot)?;
            g.as_mut_slice().iter_mut().for_each(|v| *v *= w.lambda1);
            Ok((LossBreakdown::combine(s, 0.0, 0.0, w), softmax_vjp(&p, &g)?, None))
        }
    }
}

#[derive(Debug)]
pub struct Trainer {
    config: RunConfig,
    prepared: Prepared,
    model: NnSamModel,
    optimizer: Sgd,
    state: TrainState,
    targets: Vec<Target>,
    embeddings: BTreeMap<String, Tensor>,
}

impl Trainer {
    pub fn new(config: &RunConfig, prepared: Prepared) -> Result<Self> {
        let model = NnSamModel::build(&prepared.plan, &config.model_options(), config.seed)?;
        Self::with_model(config, prepared, model, None, TrainState::default())
    }

    fn with_model(config: &RunConfig, prepared: Prepared, model: NnSamModel, optimizer: Option<Sgd>, state: TrainState) -> Result<Self> {
        let classes = prepared.data.classes;
        let targets = prepared.data.train.iter().map(|s| target_of(s, classes)).collect::<Result<_>>()?;
        let optimizer = optimizer.unwrap_or_else(|| Sgd::new(prepared.plan.momentum, prepared.plan.weight_decay));
        Ok(Self {
            config: config.clone(),
            prepared,
            model,
            optimizer,
            state,
            targets,
            embeddings: BTreeMap::new(),
        })
    }

    /// Continues from a checkpoint written by [`Trainer::fit`].
    pub fn resume(config: &RunConfig, prepared: Prepared, checkpoint: &Path) -> Result<Self> {
        let ck = checkpoint::load(checkpoint)?;
        if ck.header.plan != prepared.plan || ck.header.options != config.model_options() || ck.header.seed != config.seed {
            return Err(Error::Checkpoint("checkpoint was written by a different run".into()));
        }
        Self::with_model(config, prepared, ck.model, Some(ck.optimizer), ck.header.state)
    }

    pub fn model(&self) -> &NnSamModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut NnSamModel {
        &mut self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn prepared(&self) -> &Prepared {
        &self.prepared
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.prepared.data.train.len().div_ceil(self.prepared.plan.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.config.epochs * self.steps_per_epoch()
    }

    /// Shuffled training indices for `epoch`, cut into batches.
    pub fn epoch_batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..self.prepared.data.train.len()).collect();
        order.shuffle(&mut keyed_rng(self.config.seed, &["epoch-order", &epoch.to_string()]));
        order.chunks(self.prepared.plan.batch_size).map(<[usize]>::to_vec).collect()
    }

    fn cached_embeddings(&mut self, samples: &[&Sample]) -> Result<Option<Tensor>> {
        if self.model.frozen_encoder().is_none() {
            return Ok(None);
        }
        let mut parts = Vec::with_capacity(samples.len());
        for s in samples {
            if !self.embeddings.contains_key(&s.id) {
                let e = self.model.embed(&stack_images(&[s]))?.expect("model has a frozen encoder");
                self.embeddings.insert(s.id.clone(), e);
            }
            parts.push(self.embeddings[&s.id].clone());
        }
        Ok(Some(Tensor::stack(&parts)))
    }

    /// One optimizer step on the given training indices of `epoch`.
    pub fn train_step(&mut self, epoch: usize, batch: &[usize]) -> Result<LossBreakdown> {
        let classes = self.prepared.data.classes;
        let train = &self.prepared.data.train;
        let (samples, targets): (Vec<Sample>, Vec<Target>) = if self.config.augment {
            let mut s = Vec::with_capacity(batch.len());
            let mut t = Vec::with_capacity(batch.len());
            for &i in batch {
                let mut rng = keyed_rng(self.config.seed, &["augment", &train[i].id, &epoch.to_string()]);
                let a = augment(&train[i], &self.prepared.plan.augmentation, &mut rng)?;
                t.push(target_of(&a, classes)?);
                s.push(a);
            }
            (s, t)
        } else {
            (batch.iter().map(|&i| train[i].clone()).collect(), batch.iter().map(|&i| self.targets[i].clone()).collect())
        };
        let refs: Vec<&Sample> = samples.iter().collect();
        let x = stack_images(&refs);

        let mut h = Sha256::new();
        h.update(self.state.batch_digest.as_bytes());
        for s in &samples {
            h.update(s.id.as_bytes());
            h.update(s.label.labels().as_slice());
        }
        x.data.iter().for_each(|v| h.update(v.to_le_bytes()));
        self.state.batch_digest = hex::encode(h.finalize());

        let emb = if self.config.augment {
            self.model.embed(&x)?
        } else {
            self.cached_embeddings(&refs)?
        };
        let out = self.model.forward_with_embedding(&x, emb.as_ref(), true)?;
        let shape = (out.logits.c, out.logits.h, out.logits.w);
        let n = x.n as f64;
        let mut d_logits = Tensor::zeros(out.logits.n, shape.0, shape.1, shape.2);
        let mut d_levelset = out.levelset.as_ref().map(|l| Tensor::zeros(l.n, l.c, l.h, l.w));
        let mut sum = LossBreakdown::default();
        for (i, target) in targets.iter().enumerate() {
            let ls = out.levelset.as_ref().map(|l| l.sample(i));
            let (b, gl, gs) = item_loss(out.logits.sample(i), ls, shape, target, &self.config.loss_weights)?;
            sum.total += b.total;
            sum.s += b.s;
            sum.l += b.l;
            sum.c += b.c;
            d_logits.sample_mut(i).iter_mut().zip(gl.as_slice()).for_each(|(d, g)| *d = (g / n) as f32);
            if let (Some(d), Some(g)) = (d_levelset.as_mut(), gs) {
                d.sample_mut(i).iter_mut().zip(g.as_slice()).for_each(|(d, g)| *d = (g / n) as f32);
            }
        }
        let mean = LossBreakdown::combine(sum.s / n, sum.l / n, sum.c / n, &self.config.loss_weights);

        self.model.zero_grad();
        self.model.backward(&d_logits, d_levelset.as_ref());
        let lr = self.prepared.plan.lr_at(self.state.step, self.total_steps());
        self.optimizer.step(&mut self.model.trainable_params_mut(), lr);
        self.state.step += 1;
        Ok(mean)
    }

    /// Argmax label maps for a batch of preprocessed samples.
    pub fn predict(&mut self, samples: &[Sample]) -> Result<Vec<Grid<u8>>> {
        let mut out = Vec::with_capacity(samples.len());
        let bs = self.prepared.plan.batch_size;
        for chunk in samples.chunks(bs) {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let x = stack_images(&refs);
            let emb = self.cached_embeddings(&refs)?;
            let o = self.model.forward_with_embedding(&x, emb.as_ref(), false)?;
            for i in 0..x.n {
                out.push(Grid::new(x.h, x.w, argmax(&o.logits, i))?);
            }
        }
        Ok(out)
    }

    /// Metrics of the current weights on a preprocessed split.
    pub fn evaluate(&mut self, split: Split) -> Result<MetricReport> {
        let samples = self.prepared.data.split(split).to_vec();
        if samples.is_empty() {
            return Err(Error::Dataset(format!("split {split:?} is empty")));
        }
        let preds = self.predict(&samples)?;
        evaluate_predictions(&preds, &samples)
    }

    fn validation_dice(&mut self) -> Result<Option<f64>> {
        if self.prepared.data.val.is_empty() {
            return Ok(None);
        }
        Ok(Some(self.evaluate(Split::Val)?.overall.mean_dice))
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.state.epoch;
        let lr = self.prepared.plan.lr_at(self.state.step, self.total_steps());
        let batches = self.epoch_batches(epoch);
        let mut sum = LossBreakdown::default();
        let mut seen = 0.0;
        for b in &batches {
            let r = self.train_step(epoch, b)?;
            let k = b.len() as f64;
            sum.s += r.s * k;
            sum.l += r.l * k;
            sum.c += r.c * k;
            seen += k;
        }
        let mean = LossBreakdown::combine(sum.s / seen, sum.l / seen, sum.c / seen, &self.config.loss_weights);
        let log = EpochLog {
            epoch,
            steps: batches.len(),
            lr,
            total: mean.total,
            s: mean.s,
            l: mean.l,
            c: mean.c,
            val_dice: self.validation_dice()?,
        };
        self.state.epoch += 1;
        self.state.history.push(log.clone());
        Ok(log)
    }

    fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            plan: self.prepared.plan.clone(),
            config: self.config.clone(),
            seed: self.config.seed,
            loss_weights: self.config.loss_weights,
            options: self.model.options().clone(),
            state: self.state.clone(),
            frozen_checksum: self.model.frozen_checksum(),
        }
    }

    /// Trains until `config.epochs` (or `stop_after` epochs, if smaller), writing
    /// `train_log.jsonl`, `best.ckpt` and `last.ckpt` into `out_dir`.
    pub fn fit(&mut self, out_dir: &Path, stop_after: Option<usize>) -> Result<TrainSummary> {
        std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        let log_path = out_dir.join("train_log.jsonl");
        let mut log = std::fs::OpenOptions::new()
            .create(true)
            .append(self.state.epoch > 0)
            .write(true)
            .truncate(self.state.epoch == 0)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        let frozen_before = self.model.frozen_checksum();
        let end = stop_after.map_or(self.config.epochs, |s| s.min(self.config.epochs));
        let best_path = out_dir.join("best.ckpt");
        while self.state.epoch < end {
            let entry = self.run_epoch()?;
            writeln!(log, "{}", serde_json::to_string(&entry)?).map_err(io_err(&log_path))?;
            let improved = match (entry.val_dice, self.state.best_val_dice) {
                (Some(v), Some(b)) => v > b,
                (Some(_), None) => true,
                (None, _) => false,
            };
            if improved {
                self.state.best_val_dice = entry.val_dice;
                self.state.best_epoch = Some(entry.epoch);
                checkpoint::save(&best_path, &self.header(), &self.model, &Sgd::new(0.0, 0.0))?;
            }
        }
        if self.model.frozen_checksum() != frozen_before {
            return Err(Error::FreezeViolated);
        }
        let last_path = out_dir.join("last.ckpt");
        checkpoint::save(&last_path, &self.header(), &self.model, &self.optimizer)?;
        if self.state.best_epoch.is_none() {
            std::fs::copy(&last_path, &best_path).map_err(io_err(&best_path))?;
        }
        Ok(TrainSummary {
            best_checkpoint: best_path,
            last_checkpoint: last_path,
            state: self.state.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub state: TrainState,
}

/// Per-sample DICE and ASD for every foreground class.
pub fn evaluate_predictions(predictions: &[Grid<u8>], truth: &[Sample]) -> Result<MetricReport> {
    if predictions.len() != truth.len() || truth.is_empty() {
        return Err(Error::Dataset("predictions and ground truth differ in count".into()));
    }
    let mut rows = Vec::new();
    for (pred, gt) in predictions.iter().zip(truth) {
        let pm = LabelMask::new(pred.clone(), gt.label.classes(), gt.label.spacing())?;
        for class in 1..gt.label.classes() {
            let c = class as u8;
            rows.push(SampleMetrics {
                sample_id: gt.id.clone(),
                class_id: c,
                dice_pct: dice_coefficient(&pm, &gt.label, c)?,
                asd_mm: asd(&pm, &gt.label, c)?.value(),
            });
        }
    }
    Ok(aggregate(rows)?)
}

/// Loads a checkpoint and evaluates it on a split of the dataset it was trained on.
pub fn evaluate_checkpoint(path: &Path, split: Split) -> Result<MetricReport> {
    let mut t = trainer_from_checkpoint(path)?;
    t.evaluate(split)
}

/// Rebuilds the trainer (data, plan, weights) recorded in a checkpoint.
pub fn trainer_from_checkpoint(path: &Path) -> Result<Trainer> {
    let ck = checkpoint::load(path)?;
    let prepared = prepare(&ck.header.config)?;
    if prepared.plan != ck.header.plan {
        return Err(Error::Checkpoint("dataset no longer reproduces the checkpoint's plan".into()));
    }
    Trainer::with_model(&ck.header.config, prepared, ck.model, Some(ck.optimizer), ck.header.state)
}

/// Trains one configuration and evaluates its best checkpoint on the test split.
pub fn train_and_test(config: &RunConfig, out_dir: &Path) -> Result<(TrainSummary, MetricReport)> {
    let prepared = prepare(config)?;
    let mut t = Trainer::new(config, prepared)?;
    let summary = t.fit(out_dir, None)?;
    let ck = checkpoint::load(&summary.best_checkpoint)?;
    let mut best = Trainer::with_model(config, t.prepared.clone(), ck.model, None, ck.header.state)?;
    best.embeddings = std::mem::take(&mut t.embeddings);
    let report = best.evaluate(Split::Test)?;
    report::write_report(&report, out_dir, "nnSAM")?;
    Ok((summary, report))
}

pub const ABLATION_NAMES: [&str; 3] = ["nnSAM", "nnSAM (w/o SAM)", "nnSAM (w/o Reg head)"];

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub rows: Vec<(String, Summary)>,
    pub table: String,
    pub batch_digests: Vec<String>,
    pub trainable_params: Vec<usize>,
}

/// Full model, without the frozen encoder, and without the regression head
/// (level-set terms off), trained on identical data and batches.
pub fn ablation_variants(config: &RunConfig) -> [RunConfig; 3] {
    let full = config.clone();
    let mut no_sam = config.clone();
    no_sam.frozen_encoder = false;
    let mut no_reg = config.clone();
    no_reg.reg_head = false;
    no_reg.loss_weights = config.loss_weights.segmentation_only();
    [full, no_sam, no_reg]
}

pub fn ablate(config: &RunConfig, out_dir: &Path) -> Result<AblationResult> {
    let mut rows = Vec::new();
    let mut digests = Vec::new();
    let mut params = Vec::new();
    for (name, (variant, dir)) in ABLATION_NAMES.iter().zip(ablation_variants(config).iter().zip(["full", "no_sam", "no_reg"])) {
        let (summary, report) = train_and_test(variant, &out_dir.join(dir))?;
        rows.push((name.to_string(), report.overall));
        digests.push(summary.state.batch_digest);
        params.push(NnSamModel::build(&prepare(variant)?.plan, &variant.model_options(), variant.seed)?.trainable_param_count());
    }
    if digests.iter().any(|d| d != &digests[0]) {
        return Err(Error::Dataset("ablation variants consumed different batches".into()));
    }
    let refs: Vec<(&str, &Summary)> = rows.iter().map(|(n, s)| (n.as_str(), s)).collect();
    let table = nnsam_core::metrics::comparison_table(&refs);
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let path = out_dir.join("ablation.txt");
    std::fs::write(&path, &table).map_err(io_err(&path))?;
    Ok(AblationResult {
        rows,
        table,
        batch_digests: digests,
        trainable_params: params,
    })
}

/// Trains once per training-set size and tabulates test metrics by size.
pub fn sample_size_study(config: &RunConfig, sizes: &[usize], out_dir: &Path) -> Result<(Vec<(usize, Summary)>, String)> {
    let mut cols = Vec::new();
    for &k in sizes {
        let mut c = config.clone();
        c.train_size = k;
        let (_, report) = train_and_test(&c, &out_dir.join(format!("n{k}")))?;
        cols.push((k, report.overall));
    }
    let refs: Vec<(usize, &Summary)> = cols.iter().map(|(k, s)| (*k, s)).collect();
    let table = nnsam_core::metrics::sample_size_table("nnSAM", &refs);
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let path = out_dir.join("sample_sizes.txt");
    std::fs::write(&path, &table).map_err(io_err(&path))?;
    Ok((cols, table))
}
