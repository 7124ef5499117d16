//! Training loop with early stopping, multi-seed runs, and the rate sweep.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{draw_pairs, mixup, one_hot, scaled_mask_width, spec_augment, AugmentConfig, AugmentError};
use crate::dsp::{frame_count, scale_config, DspError, FeatureConfig};
use crate::eval::{aggregate_runs, argmax, evaluate, predict_logits, EvalError, Metrics, ReportTable};
use crate::nn::{adam_step, cross_entropy_soft, AdamConfig, AdamState, Architecture, Model, NnError, Tensor};
use crate::pipeline::{build_dataset, stack_specs, Dataset, LabeledSet, PipelineError, Recording};
use crate::datasplit::SplitFile;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training or validation set is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub segment_seconds: f64,
    pub augment: AugmentConfig,
    pub feature: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            batch_size: 64,
            max_epochs: 100,
            patience: 50,
            seeds: vec![1, 2, 3],
            segment_seconds: 5.0,
            augment: AugmentConfig::default(),
            feature: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults with the smaller batch used for rate sweeps.
    pub fn sweep_mode() -> Self {
        Self { batch_size: 32, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive".into());
        }
        if self.patience > self.max_epochs {
            return bad(format!("patience {} exceeds max_epochs {}", self.patience, self.max_epochs));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.segment_seconds > 0.0) {
            return bad(format!("segment_seconds must be positive, got {}", self.segment_seconds));
        }
        self.augment.validate()?;
        self.feature.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Batches that went through SpecAugment or Mixup, split by phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentCounter {
    pub train_batches: usize,
    pub eval_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-indexed epoch whose parameters were restored.
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub augmented: AugmentCounter,
}

impl RunHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch - 1].val_loss
    }

    /// CSV `epoch,train_loss,val_loss,val_acc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.val_acc);
        }
        out
    }
}

/// Tracks the best validation loss; ties keep the earlier epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|b| b.0)
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        let improved = match self.best {
            None => true,
            Some((_, best)) => val_loss < best,
        };
        if improved {
            self.best = Some((epoch, val_loss));
        }
        let best_epoch = self.best.map_or(epoch, |b| b.0);
        StopDecision { improved, stop: epoch - best_epoch >= self.patience }
    }
}

/// Random stream for one epoch of one run.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Inputs and soft targets for one training batch, augmented when enabled.
pub fn training_batch(
    set: &LabeledSet,
    indices: &[usize],
    n_classes: usize,
    augment: &AugmentConfig,
    rng: &mut ChaCha8Rng,
    counter: &mut AugmentCounter,
) -> Result<(Tensor, Tensor), TrainError> {
    let masking = augment.n_time_masks + augment.n_freq_masks > 0;
    let mut xs: Vec<_> = indices
        .iter()
        .map(|&i| if masking { spec_augment(&set.features[i], augment, rng) } else { set.features[i].clone() })
        .collect();
    let mut ys: Vec<Vec<f64>> = indices.iter().map(|&i| one_hot(set.labels[i], n_classes)).collect();
    if augment.mixup {
        let pairs = draw_pairs(xs.len(), augment.mixup_alpha, rng);
        (xs, ys) = mixup(&xs, &ys, &pairs)?;
    }
    if masking || augment.mixup {
        counter.train_batches += 1;
    }
    let targets = Tensor::new(vec![ys.len(), n_classes], ys.concat())?;
    Ok((stack_specs(&xs), targets))
}

/// Mean one-hot cross-entropy and accuracy with no augmentation.
pub fn validation_metrics(model: &Model, set: &LabeledSet, batch: usize) -> Result<(f64, f64), TrainError> {
    let logits = predict_logits(model, set, batch)?;
    let c = model.n_classes;
    let mut flat = Vec::with_capacity(logits.len() * c);
    let mut targets = Vec::with_capacity(logits.len() * c);
    let mut correct = 0;
    for (l, &y) in logits.iter().zip(&set.labels) {
        flat.extend_from_slice(l);
        targets.extend(one_hot(y, c));
        correct += usize::from(argmax(l) == y);
    }
    let (loss, _) = cross_entropy_soft(&Tensor::new(vec![logits.len(), c], flat)?, &Tensor::new(vec![set.len(), c], targets)?)?;
    Ok((loss, correct as f64 / set.len() as f64))
}

/// The training loop with a pluggable validation step; see [`train`].
pub fn fit<V>(cfg: &TrainConfig, train_set: &LabeledSet, mut model: Model, seed: u64, mut validate: V) -> Result<(Model, RunHistory), TrainError>
where
    V: FnMut(&Model, &mut AugmentCounter) -> Result<(f64, f64), TrainError>,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let n_classes = model.n_classes;
    let mut adam = AdamState::new(model.params(), AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.params().to_vec();
    let mut epochs = Vec::new();
    let mut counter = AugmentCounter::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let mut rng = epoch_rng(seed, epoch);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = training_batch(train_set, chunk, n_classes, &cfg.augment, &mut rng, &mut counter)?;
            let (loss, grads) = model.loss_and_grads(&x, &y)?;
            adam_step(model.params_mut(), &grads.tensors, &mut adam)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let (val_loss, val_acc) = validate(&model, &mut counter)?;
        epochs.push(EpochRecord { epoch, train_loss: loss_sum / train_set.len() as f64, val_loss, val_acc });
        let decision = stopper.observe(epoch, val_loss);
        if decision.improved {
            best_params.clone_from_slice(model.params());
        }
        if decision.stop {
            break;
        }
    }
    model.params_mut().clone_from_slice(&best_params);
    let history = RunHistory {
        stopped_epoch: epochs.len(),
        best_epoch: stopper.best_epoch().expect("at least one epoch"),
        epochs,
        augmented: counter,
    };
    Ok((model, history))
}

/// Train with Adam, validate each epoch without augmentation, and restore
/// the parameters from the epoch with the lowest validation loss.
pub fn train(cfg: &TrainConfig, train_set: &LabeledSet, val_set: &LabeledSet, model: Model, seed: u64) -> Result<(Model, RunHistory), TrainError> {
    if val_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let batch = cfg.batch_size;
    fit(cfg, train_set, model, seed, |m, _| validation_metrics(m, val_set, batch))
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub model: Model,
    pub history: RunHistory,
    pub metrics: Metrics,
}

/// Compact per-run record, e.g. for the JSON run summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config_hash: String,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub test_accuracy: f64,
}

impl SeedRun {
    pub fn summary(&self, config_hash: &str) -> RunSummary {
        RunSummary {
            seed: self.seed,
            config_hash: config_hash.to_string(),
            best_epoch: self.history.best_epoch,
            stopped_epoch: self.history.stopped_epoch,
            test_accuracy: self.metrics.accuracy,
        }
    }
}

/// Independent runs that differ only in seed; seeds train concurrently.
/// `init` optionally loads named tensors (e.g. pretrained weights) after initialisation.
pub fn run_seeds(
    cfg: &TrainConfig,
    data: &Dataset,
    arch: &Architecture,
    init: Option<&[(String, Tensor)]>,
) -> Result<Vec<SeedRun>, TrainError> {
    cfg.validate()?;
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let mut model = Model::new(arch, data.n_classes, seed)?;
            if let Some(tensors) = init {
                crate::nn::load_into(&mut model, tensors.to_vec())?;
            }
            let (model, history) = train(cfg, &data.train, &data.val, model, seed)?;
            let metrics = evaluate(&model, &data.test)?;
            Ok(SeedRun { seed, model, history, metrics })
        })
        .collect()
}

/// Desk-scale CNN sized for a dataset's feature shape.
pub fn desk_architecture(data: &Dataset) -> Result<Architecture, TrainError> {
    let (f, m) = data.train.shape()?.ok_or(TrainError::EmptyDataset)?;
    Ok(Architecture::desk(f, m))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub data_rate: u32,
    pub model_rate: u32,
    pub feature: FeatureConfig,
    pub mask_width: usize,
    pub n_frames: usize,
    pub runs: Vec<Metrics>,
    pub histories: Vec<RunHistory>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub data_rates: Vec<u32>,
    pub model_rates: Vec<u32>,
    /// Row-major over `data_rates` then `model_rates`.
    pub cells: Vec<SweepCell>,
}

/// `8000` -> `8k`, `44100` -> `44100`.
pub fn rate_label(rate: u32) -> String {
    if rate % 1000 == 0 {
        format!("{}k", rate / 1000)
    } else {
        rate.to_string()
    }
}

impl SweepResult {
    pub fn cell(&self, data_rate: u32, model_rate: u32) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.data_rate == data_rate && c.model_rate == model_rate)
    }

    /// One row per data rate, one column per model rate, `mean±std` cells.
    pub fn table(&self) -> Result<ReportTable, TrainError> {
        let mut aggs = Vec::with_capacity(self.cells.len());
        for c in &self.cells {
            aggs.push(aggregate_runs(&c.runs)?);
        }
        let nm = self.model_rates.len();
        Ok(ReportTable::new(
            "data_rate",
            self.data_rates.iter().map(|&r| rate_label(r)).collect(),
            self.model_rates.iter().map(|&r| rate_label(r)).collect(),
            |r, c| aggs.get(r * nm + c).map(|a| (a.mean_accuracy, a.std_accuracy)),
        ))
    }
}

/// Feature config and mask width for one (data rate, model rate) cell.
pub fn cell_setup(cfg: &TrainConfig, data_rate: u32, model_rate: u32) -> Result<(FeatureConfig, AugmentConfig), TrainError> {
    let feature = scale_config(&cfg.feature, model_rate)?;
    let augment = AugmentConfig { data_rate, model_rate, ..cfg.augment.clone() };
    Ok((feature, augment))
}

/// Every (data rate, model rate) combination: resample, rescale the feature
/// config, scale the mask width, and train all seeds.
pub fn sweep(
    data_rates: &[u32],
    model_rates: &[u32],
    cfg: &TrainConfig,
    corpus: &[Recording],
    split: &SplitFile,
    n_classes: usize,
) -> Result<SweepResult, TrainError> {
    if data_rates.contains(&0) || model_rates.contains(&0) {
        return Err(TrainError::InvalidConfig("rates must be positive".into()));
    }
    let mut cells = Vec::new();
    for &data_rate in data_rates {
        for &model_rate in model_rates {
            let (feature, augment) = cell_setup(cfg, data_rate, model_rate)?;
            let cell_cfg = TrainConfig { feature: feature.clone(), augment: augment.clone(), ..cfg.clone() };
            let data = build_dataset(corpus, split, n_classes, data_rate, &feature, cfg.segment_seconds)?;
            let arch = desk_architecture(&data)?;
            let runs = run_seeds(&cell_cfg, &data, &arch, None)?;
            let seg_len = (cfg.segment_seconds * data_rate as f64).round() as usize;
            cells.push(SweepCell {
                data_rate,
                model_rate,
                mask_width: scaled_mask_width(&augment),
                n_frames: frame_count(seg_len, feature.hop_length),
                feature,
                histories: runs.iter().map(|r| r.history.clone()).collect(),
                runs: runs.into_iter().map(|r| r.metrics).collect(),
            });
        }
    }
    Ok(SweepResult { data_rates: data_rates.to_vec(), model_rates: model_rates.to_vec(), cells })
}
