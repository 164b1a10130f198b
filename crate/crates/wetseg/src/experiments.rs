//! The three experiment drivers: autoencoder reconstruction quality,
//! scratch-vs-pretrained U-Net comparison, and the medium-vs-high resolution
//! comparison. Each produces a machine-readable summary whose columns match
//! the corresponding result table.

use std::path::Path;

use rascore::{ClassScheme, DatasetManifest, Split};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WetsegError};
use crate::eval::{ReconAccumulator, ReconReport, SegAccumulator, SegReport};
use crate::nnmodels::{
    autoencoder_from_checkpoint, unet_from_checkpoint, AutoencoderSpec, ModelCheckpoint, UNetSpec,
};
use crate::train::{
    samples_from_manifest, train_autoencoder, train_unet_pretrained, RunRecord, Sample,
    TrainConfig, TrainData,
};

/// Reconstruction metric columns: accuracy, PSNR, SSIM, and the loss family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconTableRow {
    pub accuracy: f64,
    pub psnr_db: Option<f64>,
    pub ssim: f64,
    pub huber_loss: f64,
    pub ssim_loss: f64,
    pub edge_loss: f64,
    pub mixed_loss: f64,
}

impl From<&ReconReport> for ReconTableRow {
    fn from(r: &ReconReport) -> Self {
        ReconTableRow {
            accuracy: r.accuracy,
            psnr_db: r.psnr_db,
            ssim: r.ssim,
            huber_loss: r.huber_loss,
            ssim_loss: r.ssim_loss,
            edge_loss: r.edge_loss,
            mixed_loss: r.mixed_loss,
        }
    }
}

/// Segmentation metric columns: accuracy, Dice, IoU, precision, recall,
/// Dice loss (plus the weighted accuracy used by the resolution comparison).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegTableRow {
    pub accuracy: f64,
    pub weighted: f64,
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub dice_loss: f64,
}

impl From<&SegReport> for SegTableRow {
    fn from(r: &SegReport) -> Self {
        SegTableRow {
            accuracy: r.overall_accuracy,
            weighted: r.weighted_accuracy,
            dice: r.macro_dice,
            iou: r.macro_iou,
            precision: r.macro_precision,
            recall: r.macro_recall,
            dice_loss: r.dice_loss,
        }
    }
}

fn eval_recon(
    ckpt: &ModelCheckpoint,
    test: &[Sample],
    eval_cfg: &crate::eval::EvalConfig,
) -> Result<ReconReport> {
    if test.is_empty() {
        return Err(WetsegError::EmptySplit(Split::Test));
    }
    let model = autoencoder_from_checkpoint(ckpt)?;
    let mut acc = ReconAccumulator::default();
    for s in test {
        let pred = model.reconstruct(&s.input)?;
        acc.add_pair(&pred, &s.input, eval_cfg.tolerance, &eval_cfg.recon_params)?;
    }
    acc.report(eval_cfg.tolerance, &eval_cfg.mixed_weights)
}

fn eval_seg(ckpt: &ModelCheckpoint, test: &[Sample], scheme: &ClassScheme) -> Result<SegReport> {
    if test.is_empty() {
        return Err(WetsegError::EmptySplit(Split::Test));
    }
    let model = unet_from_checkpoint(ckpt)?;
    let mut acc = SegAccumulator::new(scheme.len());
    for s in test {
        let mask = s
            .mask
            .as_ref()
            .ok_or_else(|| WetsegError::Data("evaluation sample without mask".into()))?;
        let probs = model.probabilities(&s.input)?;
        acc.add_image(&probs, mask)?;
    }
    Ok(acc.report(scheme))
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconstructionExperiment {
    pub metrics: ReconTableRow,
    pub run: RunRecord,
}

/// Train the autoencoder and score its reconstructions on the test samples.
pub fn experiment_reconstruction(
    data: &TrainData,
    test: &[Sample],
    spec: &AutoencoderSpec,
    cfg: &TrainConfig,
    eval_cfg: &crate::eval::EvalConfig,
) -> Result<ReconstructionExperiment> {
    let outcome = train_autoencoder(data, spec, cfg)?;
    let report = eval_recon(&outcome.checkpoint, test, eval_cfg)?;
    Ok(ReconstructionExperiment { metrics: ReconTableRow::from(&report), run: outcome.record })
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainingExperiment {
    pub scratch: SegTableRow,
    pub pretrained: SegTableRow,
    pub scratch_run: RunRecord,
    pub pretrained_run: RunRecord,
    pub autoencoder_run: RunRecord,
}

/// The pretraining comparison: one autoencoder pretrained on unlabeled
/// patches, then two U-Nets from the same seed, one from scratch and one
/// starting from the autoencoder encoder. Both score on the same test set.
#[allow(clippy::too_many_arguments)]
pub fn experiment_pretraining(
    unlabeled: &TrainData,
    labeled: &TrainData,
    test: &[Sample],
    ae_spec: &AutoencoderSpec,
    unet_spec: &UNetSpec,
    ae_cfg: &TrainConfig,
    unet_cfg: &TrainConfig,
    freeze: bool,
    scheme: &ClassScheme,
) -> Result<PretrainingExperiment> {
    let ae = train_autoencoder(unlabeled, ae_spec, ae_cfg)?;
    let scratch = train_unet_pretrained(labeled, unet_spec, unet_cfg, scheme, None)?;
    let pretrained =
        train_unet_pretrained(labeled, unet_spec, unet_cfg, scheme, Some((&ae.checkpoint, freeze)))?;
    let scratch_row = SegTableRow::from(&eval_seg(&scratch.checkpoint, test, scheme)?);
    let pretrained_row = SegTableRow::from(&eval_seg(&pretrained.checkpoint, test, scheme)?);
    Ok(PretrainingExperiment {
        scratch: scratch_row,
        pretrained: pretrained_row,
        scratch_run: scratch.record,
        pretrained_run: pretrained.record,
        autoencoder_run: ae.record,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolutionExperiment {
    pub medium: SegTableRow,
    pub high: SegTableRow,
    pub medium_run: RunRecord,
    pub high_run: RunRecord,
}

/// Train one scratch U-Net per resolution on matched datasets and compare
/// test metrics.
pub fn experiment_resolution(
    hires_manifest: &DatasetManifest,
    hires_base: &Path,
    lores_manifest: &DatasetManifest,
    lores_base: &Path,
    base_channels: usize,
    depth: usize,
    bridge_channels: usize,
    cfg: &TrainConfig,
) -> Result<ResolutionExperiment> {
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (manifest, base) in [(hires_manifest, hires_base), (lores_manifest, lores_base)] {
        let scheme = manifest.class_scheme.clone();
        let data = TrainData::from_manifest(manifest, base, true)?;
        let test = samples_from_manifest(manifest, base, Split::Test, true)?;
        let in_channels = data
            .train
            .first()
            .or(data.val.first())
            .map(|s| s.input.shape()[1])
            .ok_or_else(|| WetsegError::Data("no training samples".into()))?;
        let spec = UNetSpec {
            in_channels,
            num_classes: scheme.len(),
            base_channels,
            depth,
            bridge_channels,
            dropout_p: cfg.dropout_p,
        };
        let outcome = train_unet_pretrained(&data, &spec, cfg, &scheme, None)?;
        rows.push(SegTableRow::from(&eval_seg(&outcome.checkpoint, &test, &scheme)?));
        runs.push(outcome.record);
    }
    let high = rows.remove(0);
    let medium = rows.remove(0);
    let high_run = runs.remove(0);
    let medium_run = runs.remove(0);
    Ok(ResolutionExperiment { medium, high, medium_run, high_run })
}
