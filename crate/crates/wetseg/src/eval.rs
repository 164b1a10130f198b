//! The metric suite: reconstruction metrics (accuracy/PSNR/SSIM and the loss
//! family), segmentation metrics from one global confusion matrix, and the
//! rendered outputs (segmentation maps, error maps, reconstruction error).
//!
//! Split-level evaluation accumulates counts (confusion matrix entries,
//! element counts, class sums), never per-image metric averages, so results
//! are independent of how the split is chunked into images.

use std::path::Path;

use image::{Rgb, RgbImage};
use rascore::{
    labels_from_probabilities, read_mask, ClassScheme, DatasetManifest, LabelMask,
    Split, UNLABELED_ID,
};
use serde::{Deserialize, Serialize};
use tensorcore::{Graph, Tensor};

use crate::error::{Result, WetsegError};
use crate::losses::{
    edge_loss, huber_loss, ssim_with_window, MixedLossWeights, ReconLossParams,
    DICE_EPS,
};
use crate::nnmodels::{
    autoencoder_from_checkpoint, unet_from_checkpoint, ModelCheckpoint, ModelKind,
};
use crate::train::load_patch_tensor;

pub const DEFAULT_RECON_TOLERANCE: f32 = 0.05;

/// Fraction of elements with |pred - target| <= tol.
pub fn reconstruction_accuracy(pred: &Tensor, target: &Tensor, tol: f32) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(WetsegError::Data(format!(
            "reconstruction_accuracy: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let within = pred
        .data()
        .iter()
        .zip(target.data().iter())
        .filter(|(p, t)| (**p - **t).abs() <= tol)
        .count();
    Ok(within as f64 / pred.numel() as f64)
}

/// Peak signal-to-noise ratio in dB for unit-peak data: 10 log10(1 / MSE).
/// Identical inputs report +infinity.
pub fn psnr(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(WetsegError::Data(format!("psnr: {:?} vs {:?}", pred.shape(), target.shape())));
    }
    let mse: f64 = pred
        .data()
        .iter()
        .zip(target.data().iter())
        .map(|(p, t)| {
            let e = (*p - *t) as f64;
            e * e
        })
        .sum::<f64>()
        / pred.numel() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// Per-class entries of a [`SegMetrics`] table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub id: u8,
    pub label: String,
    pub support: u64,
    pub predicted: u64,
    pub precision: f64,
    pub recall: f64,
    pub dice: f64,
    pub iou: f64,
    /// Included in macro averages: present in truth or prediction.
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    /// confusion[i][j] counts pixels of true class i predicted as j.
    pub confusion: Vec<Vec<u64>>,
    pub total: u64,
    pub overall_accuracy: f64,
    pub weighted_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_dice: f64,
    pub macro_iou: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// Derive the full metric table from a confusion matrix.
pub fn metrics_from_confusion(confusion: Vec<Vec<u64>>, scheme: &ClassScheme) -> SegMetrics {
    let n = scheme.len();
    debug_assert_eq!(confusion.len(), n);
    let total: u64 = confusion.iter().map(|row| row.iter().sum::<u64>()).sum();
    let trace: u64 = (0..n).map(|c| confusion[c][c]).sum();
    let mut per_class = Vec::with_capacity(n);
    let (mut sp, mut sr, mut sd, mut si) = (0.0f64, 0.0, 0.0, 0.0);
    let mut included_count = 0usize;
    let mut weighted = 0.0f64;
    for c in 0..n {
        let support: u64 = confusion[c].iter().sum();
        let predicted: u64 = (0..n).map(|r| confusion[r][c]).sum();
        let tp = confusion[c][c];
        let precision = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        let dice = if support + predicted > 0 {
            2.0 * tp as f64 / (support + predicted) as f64
        } else {
            0.0
        };
        let union = support + predicted - tp;
        let iou = if union > 0 { tp as f64 / union as f64 } else { 0.0 };
        let included = support > 0 || predicted > 0;
        if included {
            sp += precision;
            sr += recall;
            sd += dice;
            si += iou;
            included_count += 1;
        }
        if total > 0 {
            weighted += (support as f64 / total as f64) * recall;
        }
        per_class.push(ClassMetrics {
            id: c as u8,
            label: scheme.classes[c].label.clone(),
            support,
            predicted,
            precision,
            recall,
            dice,
            iou,
            included,
        });
    }
    let k = included_count.max(1) as f64;
    SegMetrics {
        confusion,
        total,
        overall_accuracy: if total > 0 { trace as f64 / total as f64 } else { 0.0 },
        weighted_accuracy: weighted,
        macro_precision: sp / k,
        macro_recall: sr / k,
        macro_dice: sd / k,
        macro_iou: si / k,
        per_class,
    }
}

/// Count a predicted/true mask pair into a confusion matrix. Pixels whose
/// true label is the reserved unlabeled id are skipped.
pub fn accumulate_confusion(
    confusion: &mut [Vec<u64>],
    pred: &[u8],
    truth: &[u8],
    num_classes: usize,
) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(WetsegError::Data(format!(
            "mask length mismatch: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        if t == UNLABELED_ID {
            continue;
        }
        if t as usize >= num_classes {
            return Err(WetsegError::Data(format!("true mask id {t} outside scheme")));
        }
        if p as usize >= num_classes {
            return Err(WetsegError::Data(format!("predicted mask id {p} outside scheme")));
        }
        confusion[t as usize][p as usize] += 1;
    }
    Ok(())
}

/// Confusion matrix plus derived metrics for one mask pair.
pub fn segmentation_metrics(pred: &[u8], truth: &[u8], scheme: &ClassScheme) -> Result<SegMetrics> {
    let n = scheme.len();
    let mut confusion = vec![vec![0u64; n]; n];
    accumulate_confusion(&mut confusion, pred, truth, n)?;
    Ok(metrics_from_confusion(confusion, scheme))
}

// ---------------------------------------------------------------------------
// Renders
// ---------------------------------------------------------------------------

const DIM_FACTOR: f32 = 0.4;
const LEGEND_ROW_H: u32 = 12;
const LEGEND_SWATCH_W: u32 = 14;

/// Color a mask by its scheme palette; unlabeled pixels render mid-gray.
pub fn render_segmentation(mask: &LabelMask) -> Result<RgbImage> {
    mask.validate()?;
    let mut img = RgbImage::new(mask.width, mask.height);
    for y in 0..mask.height {
        for x in 0..mask.width {
            let v = mask.value(y, x);
            let color = if v == UNLABELED_ID {
                [128, 128, 128]
            } else {
                mask.scheme.color_of(v).ok_or_else(|| {
                    WetsegError::Data(format!("palette missing class {v}"))
                })?
            };
            img.put_pixel(x, y, Rgb(color));
        }
    }
    Ok(img)
}

/// Error map plus per-class average predicted probability (the legend data).
pub struct ErrorMapRender {
    pub image: RgbImage,
    pub class_mean_probs: Vec<f64>,
}

/// Misclassified pixels render red with intensity proportional to the
/// predicted probability of the (incorrect) argmax class; correct pixels
/// render as the dimmed truth color. A legend block is appended showing each
/// class swatch with a bar proportional to its image-average probability.
pub fn render_error_map(pred_probs: &Tensor, truth: &LabelMask) -> Result<ErrorMapRender> {
    truth.validate()?;
    let [n, c, h, w] = pred_probs.shape();
    if n != 1 || h != truth.height as usize || w != truth.width as usize {
        return Err(WetsegError::Data(format!(
            "render_error_map: probs {:?} vs mask {}x{}",
            pred_probs.shape(),
            truth.width,
            truth.height
        )));
    }
    if c != truth.scheme.len() {
        return Err(WetsegError::Data(format!(
            "render_error_map: {c} probability channels for {} classes",
            truth.scheme.len()
        )));
    }
    let plane = h * w;
    let p = pred_probs.data();
    let mut class_mean_probs = vec![0.0f64; c];
    for cls in 0..c {
        class_mean_probs[cls] =
            p[cls * plane..(cls + 1) * plane].iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
    }

    let legend_h = c as u32 * LEGEND_ROW_H;
    let mut img = RgbImage::new(truth.width, truth.height + legend_h);
    for y in 0..truth.height {
        for x in 0..truth.width {
            let pix = (y as usize) * w + x as usize;
            let mut best = 0usize;
            let mut best_p = f32::NEG_INFINITY;
            for cls in 0..c {
                let v = p[cls * plane + pix];
                if v > best_p {
                    best_p = v;
                    best = cls;
                }
            }
            let t = truth.value(y, x);
            let color = if t == UNLABELED_ID {
                [64, 64, 64]
            } else if best as u8 == t {
                let base = truth.scheme.color_of(t).unwrap();
                [
                    (base[0] as f32 * DIM_FACTOR) as u8,
                    (base[1] as f32 * DIM_FACTOR) as u8,
                    (base[2] as f32 * DIM_FACTOR) as u8,
                ]
            } else {
                [(best_p.clamp(0.0, 1.0) * 255.0).round() as u8, 0, 0]
            };
            img.put_pixel(x, y, Rgb(color));
        }
    }
    // legend rows under the map
    for cls in 0..c {
        let y0 = truth.height + cls as u32 * LEGEND_ROW_H;
        let color = truth.scheme.color_of(cls as u8).unwrap();
        for y in y0..y0 + LEGEND_ROW_H {
            for x in 0..truth.width {
                img.put_pixel(x, y, Rgb([16, 16, 16]));
            }
            for x in 0..LEGEND_SWATCH_W.min(truth.width) {
                img.put_pixel(x, y, Rgb(color));
            }
            let bar_space = truth.width.saturating_sub(LEGEND_SWATCH_W + 2);
            let bar_w = (class_mean_probs[cls] * bar_space as f64).round() as u32;
            for x in 0..bar_w {
                img.put_pixel(LEGEND_SWATCH_W + 2 + x, y, Rgb([220, 220, 220]));
            }
        }
    }
    Ok(ErrorMapRender { image: img, class_mean_probs })
}

/// Per-pixel mean absolute band error mapped through a blue-to-yellow ramp,
/// normalized to the image's own maximum error.
pub fn render_reconstruction_error(pred: &Tensor, target: &Tensor) -> Result<RgbImage> {
    if pred.shape() != target.shape() {
        return Err(WetsegError::Data(format!(
            "render_reconstruction_error: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let [n, c, h, w] = pred.shape();
    if n != 1 {
        return Err(WetsegError::Data("render_reconstruction_error expects a single image".into()));
    }
    let plane = h * w;
    let mut err = vec![0.0f64; plane];
    for pix in 0..plane {
        let mut acc = 0.0f64;
        for cls in 0..c {
            acc += (pred.data()[cls * plane + pix] - target.data()[cls * plane + pix]).abs() as f64;
        }
        err[pix] = acc / c as f64;
    }
    let max = err.iter().cloned().fold(0.0f64, f64::max);
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let t = if max > 0.0 { err[y * w + x] / max } else { 0.0 };
            let r = (t * 255.0).round() as u8;
            let b = ((1.0 - t) * 255.0).round() as u8;
            img.put_pixel(x as u32, y as u32, Rgb([r, r, b]));
        }
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// Split-level evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub accuracy: f64,
    /// None encodes an infinite PSNR (exact reconstruction).
    pub psnr_db: Option<f64>,
    pub ssim: f64,
    pub huber_loss: f64,
    pub ssim_loss: f64,
    pub edge_loss: f64,
    pub mixed_loss: f64,
    pub tolerance: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub overall_accuracy: f64,
    pub weighted_accuracy: f64,
    pub macro_dice: f64,
    pub macro_iou: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub dice_loss: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
}

/// The full result record for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub checkpoint: String,
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<ReconReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_scheme: Option<ClassScheme>,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub tolerance: f32,
    pub mixed_weights: MixedLossWeights,
    pub recon_params: ReconLossParams,
    /// Write per-entry PNG renders into this directory.
    pub render_dir: Option<std::path::PathBuf>,
    pub dataset_name: String,
    pub checkpoint_name: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tolerance: DEFAULT_RECON_TOLERANCE,
            mixed_weights: MixedLossWeights::default(),
            recon_params: ReconLossParams::default(),
            render_dir: None,
            dataset_name: String::new(),
            checkpoint_name: String::new(),
        }
    }
}

/// Accumulator for reconstruction metrics over a split.
#[derive(Debug, Default, Clone)]
pub struct ReconAccumulator {
    elems: u64,
    within_tol: u64,
    sq_err_sum: f64,
    huber_sum: f64,
    huber_elems: u64,
    ssim_map_sum: f64,
    ssim_maps: u64,
    edge_sum: f64,
    edge_elems: u64,
}

impl ReconAccumulator {
    pub fn add_pair(
        &mut self,
        pred: &Tensor,
        target: &Tensor,
        tol: f32,
        params: &ReconLossParams,
    ) -> Result<()> {
        let n = pred.numel() as u64;
        let within = pred
            .data()
            .iter()
            .zip(target.data().iter())
            .filter(|(p, t)| (**p - **t).abs() <= tol)
            .count() as u64;
        self.elems += n;
        self.within_tol += within;
        self.sq_err_sum += pred
            .data()
            .iter()
            .zip(target.data().iter())
            .map(|(p, t)| {
                let e = (*p - *t) as f64;
                e * e
            })
            .sum::<f64>();
        self.huber_sum += huber_loss(pred, target, params.huber_delta)? * n as f64;
        self.huber_elems += n;
        let maps = (pred.shape()[0] * pred.shape()[1]) as u64;
        self.ssim_map_sum +=
            ssim_with_window(pred, target, params.ssim_window, params.ssim_sigma)? * maps as f64;
        self.ssim_maps += maps;
        self.edge_sum += edge_loss(pred, target)? * n as f64;
        self.edge_elems += n;
        Ok(())
    }

    pub fn report(&self, tol: f32, weights: &MixedLossWeights) -> Result<ReconReport> {
        if self.elems == 0 {
            return Err(WetsegError::Data("no elements accumulated".into()));
        }
        let accuracy = self.within_tol as f64 / self.elems as f64;
        let mse = self.sq_err_sum / self.elems as f64;
        let psnr_db = if mse == 0.0 { None } else { Some(10.0 * (1.0 / mse).log10()) };
        let ssim = self.ssim_map_sum / self.ssim_maps as f64;
        let huber = self.huber_sum / self.huber_elems as f64;
        let ssim_loss = 1.0 - ssim;
        let edge = self.edge_sum / self.edge_elems as f64;
        let mixed = weights.alpha as f64 * huber
            + weights.beta as f64 * ssim_loss
            + weights.gamma as f64 * edge;
        Ok(ReconReport {
            accuracy,
            psnr_db,
            ssim,
            huber_loss: huber,
            ssim_loss,
            edge_loss: edge,
            mixed_loss: mixed,
            tolerance: tol,
        })
    }
}

/// Accumulator for segmentation metrics over a split: one global confusion
/// matrix plus global soft-Dice sums.
#[derive(Debug, Clone)]
pub struct SegAccumulator {
    pub confusion: Vec<Vec<u64>>,
    num_classes: usize,
    inter: Vec<f64>,
    psum: Vec<f64>,
    gsum: Vec<f64>,
    pred_support: Vec<bool>,
}

impl SegAccumulator {
    pub fn new(num_classes: usize) -> Self {
        SegAccumulator {
            confusion: vec![vec![0u64; num_classes]; num_classes],
            num_classes,
            inter: vec![0.0; num_classes],
            psum: vec![0.0; num_classes],
            gsum: vec![0.0; num_classes],
            pred_support: vec![false; num_classes],
        }
    }

    /// Add one image: softmax probabilities (1,C,H,W) plus its true mask.
    pub fn add_image(&mut self, probs: &Tensor, truth: &[u8]) -> Result<()> {
        let [n, c, h, w] = probs.shape();
        if c != self.num_classes {
            return Err(WetsegError::Data(format!(
                "probability cube has {c} classes, accumulator expects {}",
                self.num_classes
            )));
        }
        let plane = h * w;
        if truth.len() != n * plane {
            return Err(WetsegError::Data(format!(
                "mask has {} values for {} pixels",
                truth.len(),
                n * plane
            )));
        }
        let p = probs.data();
        for img in 0..n {
            for pix in 0..plane {
                let t = truth[img * plane + pix];
                if t == UNLABELED_ID {
                    continue;
                }
                if t as usize >= self.num_classes {
                    return Err(WetsegError::Data(format!("mask id {t} outside scheme")));
                }
                let mut best = 0usize;
                let mut best_p = f32::NEG_INFINITY;
                for cls in 0..c {
                    let v = p[(img * c + cls) * plane + pix];
                    if v > best_p {
                        best_p = v;
                        best = cls;
                    }
                    self.psum[cls] += v as f64;
                    if t as usize == cls {
                        self.inter[cls] += v as f64;
                    }
                }
                self.confusion[t as usize][best] += 1;
                self.pred_support[best] = true;
                self.gsum[t as usize] += 1.0;
            }
        }
        Ok(())
    }

    /// Global soft Dice loss over classes present in truth or prediction.
    pub fn dice_loss(&self) -> f64 {
        let included: Vec<usize> = (0..self.num_classes)
            .filter(|&c| self.gsum[c] > 0.0 || self.pred_support[c])
            .collect();
        if included.is_empty() {
            return 0.0;
        }
        let mut acc = 0.0;
        for &c in &included {
            acc += (2.0 * self.inter[c] + DICE_EPS) / (self.psum[c] + self.gsum[c] + DICE_EPS);
        }
        1.0 - acc / included.len() as f64
    }

    pub fn report(&self, scheme: &ClassScheme) -> SegReport {
        let metrics = metrics_from_confusion(self.confusion.clone(), scheme);
        SegReport {
            overall_accuracy: metrics.overall_accuracy,
            weighted_accuracy: metrics.weighted_accuracy,
            macro_dice: metrics.macro_dice,
            macro_iou: metrics.macro_iou,
            macro_precision: metrics.macro_precision,
            macro_recall: metrics.macro_recall,
            dice_loss: self.dice_loss(),
            per_class: metrics.per_class,
            confusion: self.confusion.clone(),
        }
    }
}

/// Evaluate a checkpoint over one manifest split, aggregating counts into a
/// single report. Renders are written when the config names a directory.
pub fn evaluate(
    ckpt: &ModelCheckpoint,
    manifest: &DatasetManifest,
    base: &Path,
    split: Split,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let entries: Vec<_> = manifest.entries_in(split).collect();
    if entries.is_empty() {
        return Err(WetsegError::EmptySplit(split));
    }
    if let Some(dir) = &cfg.render_dir {
        std::fs::create_dir_all(dir).map_err(|e| WetsegError::io(dir, e))?;
    }
    let mut report = MetricsReport {
        dataset: cfg.dataset_name.clone(),
        checkpoint: cfg.checkpoint_name.clone(),
        split: split.to_string(),
        reconstruction: None,
        segmentation: None,
        class_scheme: None,
    };
    match ckpt.kind() {
        ModelKind::Autoencoder => {
            let model = autoencoder_from_checkpoint(ckpt)?;
            let mut acc = ReconAccumulator::default();
            for entry in &entries {
                let input = load_patch_tensor(&base.join(&entry.patch_path))?;
                let pred = model.reconstruct(&input)?;
                acc.add_pair(&pred, &input, cfg.tolerance, &cfg.recon_params)?;
                if let Some(dir) = &cfg.render_dir {
                    let img = render_reconstruction_error(&pred, &input)?;
                    let name = render_name(&entry.patch_path, "recon_error");
                    img.save(dir.join(name))
                        .map_err(|e| WetsegError::Data(format!("png write failed: {e}")))?;
                }
            }
            report.reconstruction = Some(acc.report(cfg.tolerance, &cfg.mixed_weights)?);
        }
        ModelKind::UNet => {
            let model = unet_from_checkpoint(ckpt)?;
            let scheme = &manifest.class_scheme;
            if scheme.len() != model.spec.num_classes {
                return Err(WetsegError::Data(format!(
                    "scheme has {} classes but model emits {}",
                    scheme.len(),
                    model.spec.num_classes
                )));
            }
            let mut acc = SegAccumulator::new(scheme.len());
            for entry in &entries {
                let label_path = entry.label_path.as_ref().ok_or_else(|| {
                    WetsegError::Data(format!("entry {:?} has no label", entry.patch_path))
                })?;
                let input = load_patch_tensor(&base.join(&entry.patch_path))?;
                let truth = read_mask(base.join(label_path))?;
                let probs = model.probabilities(&input)?;
                acc.add_image(&probs, &truth.values)?;
                if let Some(dir) = &cfg.render_dir {
                    let [_, _, h, w] = probs.shape();
                    let pred_mask =
                        labels_from_probabilities(probs.data(), h as u32, w as u32, scheme, truth.gsd_m)?;
                    render_segmentation(&pred_mask)?
                        .save(dir.join(render_name(&entry.patch_path, "pred")))
                        .map_err(|e| WetsegError::Data(format!("png write failed: {e}")))?;
                    render_error_map(&probs, &truth)?
                        .image
                        .save(dir.join(render_name(&entry.patch_path, "error")))
                        .map_err(|e| WetsegError::Data(format!("png write failed: {e}")))?;
                }
            }
            report.segmentation = Some(acc.report(scheme));
            report.class_scheme = Some(scheme.clone());
        }
    }
    Ok(report)
}

fn render_name(patch_path: &str, suffix: &str) -> String {
    let stem = Path::new(patch_path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "patch".into());
    format!("{stem}_{suffix}.png")
}

/// Sanity check used when reading patches back for evaluation: eval-mode
/// graphs never touch dropout RNG, so two runs are bitwise identical.
pub fn eval_graph() -> Graph {
    Graph::eval()
}

pub fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(report)
        .map_err(|e| WetsegError::Data(format!("report encode failed: {e}")))?;
    json.push(b'\n');
    std::fs::write(path, json).map_err(|e| WetsegError::io(path, e))?;
    Ok(())
}
