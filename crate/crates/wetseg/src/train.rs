//! Training loops for autoencoder pretraining and U-Net segmentation:
//! learning-rate schedules, seeded shuffling, early stopping on validation
//! loss, and run provenance.
//!
//! Everything that touches randomness is keyed on (seed, epoch, batch)
//! through a counter-based RNG, so a run is a pure function of its config
//! and data. In deterministic mode wall time is recorded as zero, which
//! makes the serialized RunRecord byte-stable across repeats.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rascore::{read_mask, read_raster, DatasetManifest, Dtype, RasterData, Split};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tensorcore::{Graph, Tensor};

use crate::error::{Result, WetsegError};
use crate::eval::{metrics_from_confusion, SegAccumulator};
use crate::losses::{mixed_loss_node, segmentation_loss_node, MixedLossWeights, ReconLossParams};
use crate::nnmodels::{
    autoencoder_from_checkpoint, transfer_encoder, Autoencoder, AutoencoderSpec, ModelCheckpoint,
    TrainingProvenance, UNet, UNetSpec,
};

/// eta_min + 0.5 (eta_max - eta_min)(1 + cos(pi t / T)).
pub fn cosine_lr(t: u32, total: u32, eta_max: f32, eta_min: f32) -> Result<f32> {
    if total == 0 {
        return Err(WetsegError::Config("cosine schedule needs total epochs >= 1".into()));
    }
    if t > total {
        return Err(WetsegError::Config(format!("epoch {t} beyond schedule horizon {total}")));
    }
    let cos = (std::f64::consts::PI * t as f64 / total as f64).cos();
    Ok((eta_min as f64 + 0.5 * (eta_max as f64 - eta_min as f64) * (1.0 + cos)) as f32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "lowercase")]
pub enum LrSchedule {
    Fixed { lr: f32 },
    Cosine { eta_max: f32, eta_min: f32 },
}

impl LrSchedule {
    pub fn at(&self, epoch: u32, total: u32) -> Result<f32> {
        match self {
            LrSchedule::Fixed { lr } => Ok(*lr),
            LrSchedule::Cosine { eta_max, eta_min } => cosine_lr(epoch, total, *eta_max, *eta_min),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LrSchedule::Fixed { lr } => {
                if !(lr.is_finite() && *lr >= 0.0) {
                    return Err(WetsegError::Config(format!("fixed lr {lr}")));
                }
            }
            LrSchedule::Cosine { eta_max, eta_min } => {
                if !(eta_max.is_finite() && eta_min.is_finite() && *eta_min > 0.0 && eta_max >= eta_min)
                {
                    return Err(WetsegError::Config(format!(
                        "cosine schedule needs eta_max >= eta_min > 0, got {eta_max}/{eta_min}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainTask {
    Autoencoder,
    UNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "init", rename_all = "snake_case")]
pub enum InitPolicy {
    Scratch,
    FromCheckpoint { path: PathBuf, freeze: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TrainTask,
    pub epochs: u32,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub dropout_p: f32,
    pub seed: u64,
    pub mixed_weights: MixedLossWeights,
    pub recon_params: ReconLossParams,
    pub init: InitPolicy,
    /// Weight of the optional cross-entropy companion to the Dice loss
    /// (0 = Dice alone).
    #[serde(default)]
    pub ce_weight: f32,
    /// Stop after this many epochs without a val-loss improvement of at
    /// least `min_delta`.
    pub patience: u32,
    pub min_delta: f64,
    pub deterministic: bool,
    #[serde(default)]
    pub progress: bool,
}

impl TrainConfig {
    /// Medium-resolution autoencoder defaults: fixed lr 0.001, 200 epochs,
    /// dropout 0.15, batch 8.
    pub fn autoencoder_defaults() -> Self {
        TrainConfig {
            task: TrainTask::Autoencoder,
            epochs: 200,
            batch_size: 8,
            lr_schedule: LrSchedule::Fixed { lr: 0.001 },
            dropout_p: 0.15,
            seed: 0,
            mixed_weights: MixedLossWeights::default(),
            recon_params: ReconLossParams::default(),
            init: InitPolicy::Scratch,
            ce_weight: 0.0,
            patience: 25,
            min_delta: 1e-5,
            deterministic: true,
            progress: false,
        }
    }

    /// Medium-resolution U-Net defaults: cosine 0.001 -> 0.0001, 300 epochs,
    /// dropout 0.15, batch 8.
    pub fn unet_defaults() -> Self {
        TrainConfig {
            task: TrainTask::UNet,
            epochs: 300,
            lr_schedule: LrSchedule::Cosine { eta_max: 0.001, eta_min: 0.0001 },
            ..Self::autoencoder_defaults()
        }
    }

    /// High-resolution variants train with batch size 4.
    pub fn high_res(mut self) -> Self {
        self.batch_size = 4;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.batch_size == 0 {
            violations.push("batch_size must be >= 1".to_string());
        }
        if let Err(e) = self.lr_schedule.validate() {
            violations.push(e.to_string());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            violations.push(format!("dropout_p {} outside [0,1)", self.dropout_p));
        }
        if let Err(e) = self.mixed_weights.validate() {
            violations.push(e.to_string());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(WetsegError::ConfigViolations(violations))
        }
    }
}

/// sha256 over the serialized config and model spec.
pub fn config_hash<S: Serialize>(cfg: &TrainConfig, spec: &S) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(cfg).expect("config serializes"));
    hasher.update(serde_json::to_vec(spec).expect("spec serializes"));
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct Sample {
    /// (1, C, H, W) input in [0, 1].
    pub input: Tensor,
    /// Row-major per-pixel class ids for labeled samples.
    pub mask: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

/// Load a RAS1 patch as a (1, C, H, W) tensor. f32 payloads are taken as-is;
/// integer payloads are scaled by their type maximum into [0, 1].
pub fn load_patch_tensor(path: &Path) -> Result<Tensor> {
    let raster = read_raster(path)?;
    let (w, h, c) = (raster.width as usize, raster.height as usize, raster.bands() as usize);
    let data: Vec<f32> = match &raster.data {
        RasterData::U8(v) => v.iter().map(|&x| x as f32 / u8::MAX as f32).collect(),
        RasterData::U16(v) => v.iter().map(|&x| x as f32 / u16::MAX as f32).collect(),
        RasterData::F32(v) => v.clone(),
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err(WetsegError::Data(format!("{}: non-finite sample value", path.display())));
    }
    let _ = Dtype::F32;
    Ok(Tensor::new([1, c, h, w], data)?)
}

/// Load one split of a manifest as samples. With `with_labels`, unlabeled
/// entries are skipped and each sample carries its mask values.
pub fn samples_from_manifest(
    manifest: &DatasetManifest,
    base: &Path,
    split: Split,
    with_labels: bool,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for entry in manifest.entries_in(split) {
        if with_labels && entry.label_path.is_none() {
            continue;
        }
        let input = load_patch_tensor(&base.join(&entry.patch_path))?;
        let mask = match (&entry.label_path, with_labels) {
            (Some(p), true) => Some(read_mask(base.join(p))?.values),
            _ => None,
        };
        out.push(Sample { input, mask });
    }
    Ok(out)
}

impl TrainData {
    /// Load the train and val splits of a manifest. With `with_labels`, only
    /// labeled entries are used and each sample carries its mask.
    pub fn from_manifest(
        manifest: &DatasetManifest,
        base: &Path,
        with_labels: bool,
    ) -> Result<Self> {
        Ok(TrainData {
            train: samples_from_manifest(manifest, base, Split::Train, with_labels)?,
            val: samples_from_manifest(manifest, base, Split::Val, with_labels)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f32,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_macro_dice: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_macro_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValSummary {
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_dice: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: TrainTask,
    pub config_hash: String,
    pub seed: u64,
    pub epochs_run: u32,
    pub epochs: Vec<EpochRecord>,
    /// Zero in deterministic mode so repeated runs serialize identically.
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_val: Option<ValSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_path: Option<String>,
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub checkpoint: ModelCheckpoint,
}

/// Shuffled sample order for one epoch: a pure function of (seed, epoch).
pub fn epoch_order(n: usize, seed: u64, epoch: u32) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1u64 << 48) | epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn dropout_stream(epoch: u32, batch: usize) -> u64 {
    ((epoch as u64 + 1) << 24) | batch as u64
}

fn batch_tensor(samples: &[&Sample]) -> Result<Tensor> {
    let [_, c, h, w] = samples[0].input.shape();
    let mut data = Vec::with_capacity(samples.len() * c * h * w);
    for s in samples {
        if s.input.shape() != [1, c, h, w] {
            return Err(WetsegError::Data(format!(
                "batch mixes shapes {:?} and {:?}",
                samples[0].input.shape(),
                s.input.shape()
            )));
        }
        data.extend_from_slice(s.input.data());
    }
    Ok(Tensor::new([samples.len(), c, h, w], data)?)
}

fn batch_masks(samples: &[&Sample]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for s in samples {
        let mask = s
            .mask
            .as_ref()
            .ok_or_else(|| WetsegError::Data("labeled training requires masks".into()))?;
        out.extend_from_slice(mask);
    }
    Ok(out)
}

struct EarlyStopper {
    best: f64,
    best_epoch: u32,
    since_best: u32,
    patience: u32,
    min_delta: f64,
}

impl EarlyStopper {
    fn new(patience: u32, min_delta: f64) -> Self {
        EarlyStopper { best: f64::INFINITY, best_epoch: 0, since_best: 0, patience, min_delta }
    }

    /// Returns (is_new_best, should_stop).
    fn observe(&mut self, epoch: u32, loss: f64) -> (bool, bool) {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }
}

/// Pretrain the autoencoder: minimizes the mixed reconstruction loss of each
/// patch against itself. Labels in the data are ignored.
pub fn train_autoencoder(
    data: &TrainData,
    spec: &AutoencoderSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = AutoencoderSpec { dropout_p: cfg.dropout_p, ..*spec };
    spec.validate()?;
    if data.train.is_empty() {
        return Err(WetsegError::Data("training split is empty".into()));
    }
    let mut model = match &cfg.init {
        InitPolicy::Scratch => Autoencoder::build(spec, cfg.seed)?,
        InitPolicy::FromCheckpoint { path, .. } => {
            let ckpt = ModelCheckpoint::load(path)?;
            let model = autoencoder_from_checkpoint(&ckpt)?;
            if model.spec != spec {
                return Err(WetsegError::Config(
                    "checkpoint spec does not match the requested autoencoder spec".into(),
                ));
            }
            model
        }
    };
    let hash = config_hash(cfg, &spec);
    let started = Instant::now();
    let mut record = RunRecord {
        task: TrainTask::Autoencoder,
        config_hash: hash.clone(),
        seed: cfg.seed,
        epochs_run: 0,
        epochs: Vec::new(),
        wall_time_s: 0.0,
        best_epoch: None,
        final_val: None,
        checkpoint_path: None,
    };

    let val_loss_of = |model: &Autoencoder| -> Result<Option<f64>> {
        if data.val.is_empty() {
            return Ok(None);
        }
        let mut acc = 0.0f64;
        for s in &data.val {
            let mut g = Graph::eval();
            let x = g.input(s.input.clone())?;
            let y = model.forward(&mut g, x)?;
            let loss = mixed_loss_node(&mut g, y, x, &cfg.mixed_weights, &cfg.recon_params)?;
            acc += g.value(loss).scalar_value()? as f64;
        }
        Ok(Some(acc / data.val.len() as f64))
    };

    let mut best_params = model.params.clone();
    let mut stopper = EarlyStopper::new(cfg.patience, cfg.min_delta);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule.at(epoch, cfg.epochs)?;
        let order = epoch_order(data.train.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0f64;
        let mut loss_n = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let batch = batch_tensor(&samples)?;
            let mut g = Graph::train(cfg.seed, dropout_stream(epoch, bi));
            let x = g.input(batch)?;
            let y = model.forward(&mut g, x)?;
            let loss = mixed_loss_node(&mut g, y, x, &cfg.mixed_weights, &cfg.recon_params)?;
            let loss_v = g.value(loss).scalar_value()?;
            if !loss_v.is_finite() {
                return Err(WetsegError::NonFiniteLoss { epoch, batch: bi });
            }
            g.backward(loss)?;
            for (name, grad) in g.take_param_grads() {
                model.params.accumulate_grad(&name, grad)?;
            }
            model.params.adam_step(lr)?;
            loss_sum += loss_v as f64 * samples.len() as f64;
            loss_n += samples.len();
        }
        let train_loss = loss_sum / loss_n as f64;
        let val_loss = val_loss_of(&model)?;
        if cfg.progress {
            println!("epoch={} split=train loss={train_loss:.6} lr={lr:.6}", epoch + 1);
            if let Some(v) = val_loss {
                println!("epoch={} split=val loss={v:.6}", epoch + 1);
            }
        }
        record.epochs.push(EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss,
            val_loss,
            val_accuracy: None,
            val_macro_dice: None,
            val_macro_iou: None,
        });
        record.epochs_run = epoch + 1;
        let selection = val_loss.unwrap_or(train_loss);
        let (new_best, stop) = stopper.observe(epoch + 1, selection);
        if new_best {
            best_params = model.params.clone();
            record.best_epoch = Some(epoch + 1);
        }
        if stop {
            break;
        }
    }
    if record.epochs.is_empty() {
        // zero-epoch run: the checkpoint is the initialization
        best_params = model.params.clone();
    }
    model.params = best_params;
    if let Some(loss) = val_loss_of(&model)? {
        record.final_val =
            Some(ValSummary { loss, accuracy: None, macro_dice: None, macro_iou: None });
    }
    record.wall_time_s =
        if cfg.deterministic { 0.0 } else { started.elapsed().as_secs_f64() };
    let checkpoint = ModelCheckpoint::from_autoencoder(
        &model,
        TrainingProvenance { epochs: record.epochs_run, seed: cfg.seed, config_hash: hash },
    );
    Ok(TrainOutcome { record, checkpoint })
}

fn unet_val_metrics(
    model: &UNet,
    val: &[Sample],
    num_classes: usize,
    scheme: &rascore::ClassScheme,
) -> Result<Option<ValSummary>> {
    if val.is_empty() {
        return Ok(None);
    }
    let mut acc = SegAccumulator::new(num_classes);
    for s in val {
        let mask = s
            .mask
            .as_ref()
            .ok_or_else(|| WetsegError::Data("validation sample without mask".into()))?;
        let probs = model.probabilities(&s.input)?;
        acc.add_image(&probs, mask)?;
    }
    let metrics = metrics_from_confusion(acc.confusion.clone(), scheme);
    Ok(Some(ValSummary {
        loss: acc.dice_loss(),
        accuracy: Some(metrics.overall_accuracy),
        macro_dice: Some(metrics.macro_dice),
        macro_iou: Some(metrics.macro_iou),
    }))
}

/// Train the U-Net on labeled patches with the soft Dice loss. When the init
/// policy names a checkpoint, the autoencoder encoder weights are
/// transferred (optionally frozen) before the first step.
pub fn train_unet(
    data: &TrainData,
    spec: &UNetSpec,
    cfg: &TrainConfig,
    scheme: &rascore::ClassScheme,
) -> Result<TrainOutcome> {
    match &cfg.init {
        InitPolicy::Scratch => train_unet_pretrained(data, spec, cfg, scheme, None),
        InitPolicy::FromCheckpoint { path, freeze } => {
            let ckpt = ModelCheckpoint::load(path)?;
            train_unet_pretrained(data, spec, cfg, scheme, Some((&ckpt, *freeze)))
        }
    }
}

/// As [`train_unet`], but with the pretrained autoencoder checkpoint passed
/// in memory.
pub fn train_unet_pretrained(
    data: &TrainData,
    spec: &UNetSpec,
    cfg: &TrainConfig,
    scheme: &rascore::ClassScheme,
    pretrained: Option<(&ModelCheckpoint, bool)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = UNetSpec { dropout_p: cfg.dropout_p, ..*spec };
    spec.validate()?;
    if scheme.len() != spec.num_classes {
        return Err(WetsegError::Config(format!(
            "scheme has {} classes but spec declares {}",
            scheme.len(),
            spec.num_classes
        )));
    }
    if data.train.is_empty() {
        return Err(WetsegError::Data("training split is empty".into()));
    }
    for s in data.train.iter().chain(data.val.iter()) {
        if s.mask.is_none() {
            return Err(WetsegError::Data("U-Net training requires labeled entries only".into()));
        }
    }
    let mut model = UNet::build(spec, cfg.seed)?;
    if let Some((ckpt, freeze)) = pretrained {
        transfer_encoder(ckpt, &mut model, freeze)?;
    }
    let hash = config_hash(cfg, &spec);
    let started = Instant::now();
    let mut record = RunRecord {
        task: TrainTask::UNet,
        config_hash: hash.clone(),
        seed: cfg.seed,
        epochs_run: 0,
        epochs: Vec::new(),
        wall_time_s: 0.0,
        best_epoch: None,
        final_val: None,
        checkpoint_path: None,
    };
    let num_classes = spec.num_classes;
    let mut best_params = model.params.clone();
    let mut stopper = EarlyStopper::new(cfg.patience, cfg.min_delta);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_schedule.at(epoch, cfg.epochs)?;
        let order = epoch_order(data.train.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0f64;
        let mut loss_n = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let batch = batch_tensor(&samples)?;
            let masks = batch_masks(&samples)?;
            let mut g = Graph::train(cfg.seed, dropout_stream(epoch, bi));
            let x = g.input(batch)?;
            let logits = model.forward(&mut g, x)?;
            let loss = segmentation_loss_node(
                &mut g,
                logits,
                &masks,
                num_classes,
                Some(rascore::UNLABELED_ID),
                cfg.ce_weight,
            )?;
            let loss_v = g.value(loss).scalar_value()?;
            if !loss_v.is_finite() {
                return Err(WetsegError::NonFiniteLoss { epoch, batch: bi });
            }
            g.backward(loss)?;
            for (name, grad) in g.take_param_grads() {
                model.params.accumulate_grad(&name, grad)?;
            }
            model.params.adam_step(lr)?;
            loss_sum += loss_v as f64 * samples.len() as f64;
            loss_n += samples.len();
        }
        let train_loss = loss_sum / loss_n as f64;
        let val = unet_val_metrics(&model, &data.val, num_classes, scheme)?;
        if cfg.progress {
            println!("epoch={} split=train loss={train_loss:.6} lr={lr:.6}", epoch + 1);
            if let Some(v) = &val {
                println!(
                    "epoch={} split=val loss={:.6} acc={:.4} dice={:.4} iou={:.4}",
                    epoch + 1,
                    v.loss,
                    v.accuracy.unwrap_or(0.0),
                    v.macro_dice.unwrap_or(0.0),
                    v.macro_iou.unwrap_or(0.0)
                );
            }
        }
        record.epochs.push(EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss,
            val_loss: val.as_ref().map(|v| v.loss),
            val_accuracy: val.as_ref().and_then(|v| v.accuracy),
            val_macro_dice: val.as_ref().and_then(|v| v.macro_dice),
            val_macro_iou: val.as_ref().and_then(|v| v.macro_iou),
        });
        record.epochs_run = epoch + 1;
        let selection = val.as_ref().map(|v| v.loss).unwrap_or(train_loss);
        let (new_best, stop) = stopper.observe(epoch + 1, selection);
        if new_best {
            best_params = model.params.clone();
            record.best_epoch = Some(epoch + 1);
        }
        if stop {
            break;
        }
    }
    if record.epochs.is_empty() {
        best_params = model.params.clone();
    }
    model.params = best_params;
    record.final_val = unet_val_metrics(&model, &data.val, num_classes, scheme)?;
    record.wall_time_s =
        if cfg.deterministic { 0.0 } else { started.elapsed().as_secs_f64() };
    let checkpoint = ModelCheckpoint::from_unet(
        &model,
        TrainingProvenance { epochs: record.epochs_run, seed: cfg.seed, config_hash: hash },
    );
    Ok(TrainOutcome { record, checkpoint })
}

pub fn write_run_record(record: &RunRecord, path: &Path) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(record)
        .map_err(|e| WetsegError::Data(format!("run record encode failed: {e}")))?;
    json.push(b'\n');
    std::fs::write(path, json).map_err(|e| WetsegError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 0.001, 0.0001).unwrap(), 0.001);
        let end = cosine_lr(100, 100, 0.001, 0.0001).unwrap();
        assert!((end - 0.0001).abs() < 1e-9, "{end}");
        let mid = cosine_lr(50, 100, 0.001, 0.0001).unwrap();
        assert!((mid - 0.00055).abs() < 1e-9, "{mid}");
    }

    #[test]
    fn cosine_is_monotone_nonincreasing() {
        let mut prev = f32::INFINITY;
        for t in 0..=200 {
            let lr = cosine_lr(t, 200, 0.01, 0.001).unwrap();
            assert!(lr <= prev + 1e-12);
            prev = lr;
        }
    }

    #[test]
    fn cosine_rejects_t_beyond_horizon() {
        assert!(cosine_lr(101, 100, 0.001, 0.0001).is_err());
    }

    #[test]
    fn epoch_order_is_a_pure_function_of_seed_and_epoch() {
        let a = epoch_order(32, 7, 3);
        let b = epoch_order(32, 7, 3);
        assert_eq!(a, b);
        assert_ne!(epoch_order(32, 7, 4), a);
        assert_ne!(epoch_order(32, 8, 3), a);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn early_stopper_tracks_best_and_patience() {
        let mut s = EarlyStopper::new(2, 1e-5);
        assert_eq!(s.observe(1, 1.0), (true, false));
        assert_eq!(s.observe(2, 0.5), (true, false));
        assert_eq!(s.observe(3, 0.5), (false, false)); // not better by min_delta
        assert_eq!(s.observe(4, 0.499999), (false, true)); // within min_delta, patience hit
        assert_eq!(s.best_epoch, 2);
    }
}
