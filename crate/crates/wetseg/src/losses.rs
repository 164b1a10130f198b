//! Differentiable reconstruction and segmentation losses.
//!
//! Every loss is built from tensorcore graph primitives (or a closed-form
//! gradient for soft Dice), so the same code path serves both training and
//! metric evaluation, and finite-difference checks exercise the real thing.

use serde::{Deserialize, Serialize};
use tensorcore::{Graph, NodeId, Tensor};

use crate::error::{Result, WetsegError};

pub const DEFAULT_HUBER_DELTA: f32 = 1.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f32 = 1.5;
const SSIM_C1: f32 = 1e-4; // (0.01)^2 for L = 1
const SSIM_C2: f32 = 9e-4; // (0.03)^2
const EDGE_EPS: f32 = 1e-12;
pub const DICE_EPS: f64 = 1e-6;

/// Weights of the mixed reconstruction loss:
/// `alpha * huber + beta * (1 - ssim) + gamma * edge`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedLossWeights {
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
}

impl Default for MixedLossWeights {
    fn default() -> Self {
        MixedLossWeights { alpha: 0.5, beta: 0.4, gamma: 0.1 }
    }
}

impl MixedLossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(WetsegError::Config("mixed-loss weights must be nonnegative".into()));
        }
        if self.alpha + self.beta + self.gamma <= 0.0 {
            return Err(WetsegError::Config("mixed-loss weights must not all be zero".into()));
        }
        Ok(())
    }
}

/// Shape parameters of the reconstruction losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconLossParams {
    pub huber_delta: f32,
    pub ssim_window: usize,
    pub ssim_sigma: f32,
}

impl Default for ReconLossParams {
    fn default() -> Self {
        ReconLossParams {
            huber_delta: DEFAULT_HUBER_DELTA,
            ssim_window: SSIM_WINDOW,
            ssim_sigma: SSIM_SIGMA,
        }
    }
}

fn same_shape(g: &Graph, pred: NodeId, target: NodeId, op: &'static str) -> Result<()> {
    if g.value(pred).shape() != g.value(target).shape() {
        return Err(WetsegError::Data(format!(
            "{op}: pred shape {:?} vs target shape {:?}",
            g.value(pred).shape(),
            g.value(target).shape()
        )));
    }
    Ok(())
}

/// Mean Huber penalty of pred - target.
pub fn huber_loss_node(g: &mut Graph, pred: NodeId, target: NodeId, delta: f32) -> Result<NodeId> {
    same_shape(g, pred, target, "huber_loss")?;
    let diff = g.sub(pred, target)?;
    let pen = g.huber_elem(diff, delta)?;
    Ok(g.mean_all(pen)?)
}

fn gaussian_kernel(window: usize, sigma: f32) -> Tensor {
    let half = (window as isize - 1) / 2;
    let mut vals = Vec::with_capacity(window * window);
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    let mut sum = 0.0f64;
    for y in 0..window as isize {
        for x in 0..window as isize {
            let dy = (y - half) as f64;
            let dx = (x - half) as f64;
            let v = (-(dx * dx + dy * dy) / s2).exp();
            vals.push(v);
            sum += v;
        }
    }
    let data: Vec<f32> = vals.into_iter().map(|v| (v / sum) as f32).collect();
    Tensor::new([1, 1, window, window], data).expect("window > 0")
}

/// Mean local SSIM over a Gaussian window, computed per band (valid windows
/// only) and averaged over bands then batch. Inputs are expected in [0, 1].
pub fn ssim_node(
    g: &mut Graph,
    pred: NodeId,
    target: NodeId,
    window: usize,
    sigma: f32,
) -> Result<NodeId> {
    same_shape(g, pred, target, "ssim")?;
    let [n, c, h, w] = g.value(pred).shape();
    if h < window || w < window {
        return Err(WetsegError::Data(format!(
            "ssim: spatial dims {h}x{w} smaller than window {window}"
        )));
    }
    if window % 2 == 0 || window == 0 {
        return Err(WetsegError::Config(format!("ssim window must be odd, got {window}")));
    }
    let x = g.reshape(pred, [n * c, 1, h, w])?;
    let y = g.reshape(target, [n * c, 1, h, w])?;
    let kern = g.input(gaussian_kernel(window, sigma))?;

    let mu_x = g.conv2d(x, kern, None, 1, 0)?;
    let mu_y = g.conv2d(y, kern, None, 1, 0)?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let e_xx = g.conv2d(xx, kern, None, 1, 0)?;
    let e_yy = g.conv2d(yy, kern, None, 1, 0)?;
    let e_xy = g.conv2d(xy, kern, None, 1, 0)?;

    let mu_x2 = g.mul(mu_x, mu_x)?;
    let mu_y2 = g.mul(mu_y, mu_y)?;
    let mu_xy = g.mul(mu_x, mu_y)?;
    let var_x = g.sub(e_xx, mu_x2)?;
    let var_y = g.sub(e_yy, mu_y2)?;
    let cov = g.sub(e_xy, mu_xy)?;

    let two_mu = g.mul_scalar(mu_xy, 2.0)?;
    let num_l = g.add_scalar(two_mu, SSIM_C1)?;
    let two_cov = g.mul_scalar(cov, 2.0)?;
    let num_c = g.add_scalar(two_cov, SSIM_C2)?;
    let num = g.mul(num_l, num_c)?;

    let mu_sum = g.add(mu_x2, mu_y2)?;
    let den_l = g.add_scalar(mu_sum, SSIM_C1)?;
    let var_sum = g.add(var_x, var_y)?;
    let den_c = g.add_scalar(var_sum, SSIM_C2)?;
    let den = g.mul(den_l, den_c)?;

    let map = g.div(num, den)?;
    Ok(g.mean_all(map)?)
}

/// 1 - ssim.
pub fn ssim_loss_node(
    g: &mut Graph,
    pred: NodeId,
    target: NodeId,
    window: usize,
    sigma: f32,
) -> Result<NodeId> {
    let s = ssim_node(g, pred, target, window, sigma)?;
    let neg = g.mul_scalar(s, -1.0)?;
    Ok(g.add_scalar(neg, 1.0)?)
}

fn sobel_x() -> Tensor {
    Tensor::new([1, 1, 3, 3], vec![-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0]).unwrap()
}

fn sobel_y() -> Tensor {
    Tensor::new([1, 1, 3, 3], vec![-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0]).unwrap()
}

fn sobel_magnitude(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let [n, c, h, w] = g.value(x).shape();
    let flat = g.reshape(x, [n * c, 1, h, w])?;
    let padded = g.replicate_pad(flat, 1)?;
    let kx = g.input(sobel_x())?;
    let ky = g.input(sobel_y())?;
    let gx = g.conv2d(padded, kx, None, 1, 0)?;
    let gy = g.conv2d(padded, ky, None, 1, 0)?;
    let gx2 = g.mul(gx, gx)?;
    let gy2 = g.mul(gy, gy)?;
    let s = g.add(gx2, gy2)?;
    Ok(g.sqrt_eps(s, EDGE_EPS)?)
}

/// Mean absolute difference of per-band Sobel gradient magnitudes
/// (3x3 kernels, replicate padding).
pub fn edge_loss_node(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId> {
    same_shape(g, pred, target, "edge_loss")?;
    let mp = sobel_magnitude(g, pred)?;
    let mt = sobel_magnitude(g, target)?;
    let diff = g.sub(mp, mt)?;
    let ad = g.abs(diff)?;
    Ok(g.mean_all(ad)?)
}

/// alpha * huber + beta * (1 - ssim) + gamma * edge.
pub fn mixed_loss_node(
    g: &mut Graph,
    pred: NodeId,
    target: NodeId,
    weights: &MixedLossWeights,
    params: &ReconLossParams,
) -> Result<NodeId> {
    weights.validate()?;
    let h = huber_loss_node(g, pred, target, params.huber_delta)?;
    let s = ssim_loss_node(g, pred, target, params.ssim_window, params.ssim_sigma)?;
    let e = edge_loss_node(g, pred, target)?;
    let th = g.mul_scalar(h, weights.alpha)?;
    let ts = g.mul_scalar(s, weights.beta)?;
    let te = g.mul_scalar(e, weights.gamma)?;
    let hs = g.add(th, ts)?;
    Ok(g.add(hs, te)?)
}

/// Soft multi-class Dice loss over softmax probabilities.
///
/// A class enters the mean when it appears in the mask or in the argmax
/// prediction; classes absent from both contribute nothing. Pixels labeled
/// `ignore_id` are excluded from every sum. The gradient w.r.t. the
/// probabilities is closed-form and flows through the softmax.
pub fn dice_loss_node(
    g: &mut Graph,
    logits: NodeId,
    mask: &[u8],
    num_classes: usize,
    ignore_id: Option<u8>,
) -> Result<NodeId> {
    let [n, c, h, w] = g.value(logits).shape();
    if c != num_classes {
        return Err(WetsegError::Data(format!(
            "dice_loss: logits have {c} channels for {num_classes} classes"
        )));
    }
    let plane = h * w;
    if mask.len() != n * plane {
        return Err(WetsegError::Data(format!(
            "dice_loss: mask has {} values for {} pixels",
            mask.len(),
            n * plane
        )));
    }
    for &m in mask {
        let ignored = ignore_id.map_or(false, |ig| m == ig);
        if !ignored && m as usize >= num_classes {
            return Err(WetsegError::Data(format!("dice_loss: invalid class id {m}")));
        }
    }

    let probs = g.softmax_channels(logits)?;
    let p = g.value(probs).data();

    // class sums in f64: intersections and totals over valid pixels
    let mut inter = vec![0.0f64; num_classes]; // sum p_c * g_c
    let mut psum = vec![0.0f64; num_classes]; // sum p_c
    let mut gsum = vec![0.0f64; num_classes]; // sum g_c
    let mut pred_support = vec![false; num_classes];
    for img in 0..n {
        for pix in 0..plane {
            let m = mask[img * plane + pix];
            if ignore_id.map_or(false, |ig| m == ig) {
                continue;
            }
            let mut best = 0usize;
            let mut best_p = f32::NEG_INFINITY;
            for cls in 0..num_classes {
                let pv = p[(img * num_classes + cls) * plane + pix];
                if pv > best_p {
                    best_p = pv;
                    best = cls;
                }
                psum[cls] += pv as f64;
                if m as usize == cls {
                    inter[cls] += pv as f64;
                }
            }
            pred_support[best] = true;
            gsum[m as usize] += 1.0;
        }
    }

    let included: Vec<usize> =
        (0..num_classes).filter(|&cls| gsum[cls] > 0.0 || pred_support[cls]).collect();
    if included.is_empty() {
        // every pixel ignored: nothing to score, zero loss, zero gradient
        return Ok(g.custom_scalar(probs, 0.0, vec![0.0; p.len()])?);
    }

    let mut dice_sum = 0.0f64;
    let mut dnum = vec![0.0f64; num_classes]; // 2*inter + eps
    let mut dden = vec![0.0f64; num_classes]; // psum + gsum + eps
    for &cls in &included {
        dnum[cls] = 2.0 * inter[cls] + DICE_EPS;
        dden[cls] = psum[cls] + gsum[cls] + DICE_EPS;
        dice_sum += dnum[cls] / dden[cls];
    }
    let k = included.len() as f64;
    let loss = 1.0 - dice_sum / k;

    // d loss / d p_c(x) = -(1/k) * (2 g_c(x) * dden_c - dnum_c) / dden_c^2
    let mut coeff = vec![0.0f32; p.len()];
    for img in 0..n {
        for pix in 0..plane {
            let m = mask[img * plane + pix];
            if ignore_id.map_or(false, |ig| m == ig) {
                continue;
            }
            for &cls in &included {
                let gc = if m as usize == cls { 1.0 } else { 0.0 };
                let d = (2.0 * gc * dden[cls] - dnum[cls]) / (dden[cls] * dden[cls]);
                coeff[(img * num_classes + cls) * plane + pix] = (-(d / k)) as f32;
            }
        }
    }
    Ok(g.custom_scalar(probs, loss as f32, coeff)?)
}

/// Mean per-pixel cross-entropy over valid pixels, -ln p_true through the
/// softmax. Available as an optional additive companion to the Dice loss.
pub fn cross_entropy_node(
    g: &mut Graph,
    logits: NodeId,
    mask: &[u8],
    num_classes: usize,
    ignore_id: Option<u8>,
) -> Result<NodeId> {
    let [n, c, h, w] = g.value(logits).shape();
    if c != num_classes {
        return Err(WetsegError::Data(format!(
            "cross_entropy: logits have {c} channels for {num_classes} classes"
        )));
    }
    let plane = h * w;
    if mask.len() != n * plane {
        return Err(WetsegError::Data(format!(
            "cross_entropy: mask has {} values for {} pixels",
            mask.len(),
            n * plane
        )));
    }
    let probs = g.softmax_channels(logits)?;
    let p = g.value(probs).data();
    let mut valid = 0u64;
    let mut loss = 0.0f64;
    for img in 0..n {
        for pix in 0..plane {
            let m = mask[img * plane + pix];
            if ignore_id.map_or(false, |ig| m == ig) {
                continue;
            }
            if m as usize >= num_classes {
                return Err(WetsegError::Data(format!("cross_entropy: invalid class id {m}")));
            }
            let pv = p[(img * num_classes + m as usize) * plane + pix] as f64;
            loss -= pv.max(1e-12).ln();
            valid += 1;
        }
    }
    if valid == 0 {
        return Ok(g.custom_scalar(probs, 0.0, vec![0.0; p.len()])?);
    }
    loss /= valid as f64;
    let mut coeff = vec![0.0f32; p.len()];
    for img in 0..n {
        for pix in 0..plane {
            let m = mask[img * plane + pix];
            if ignore_id.map_or(false, |ig| m == ig) {
                continue;
            }
            let idx = (img * num_classes + m as usize) * plane + pix;
            let pv = (p[idx] as f64).max(1e-12);
            coeff[idx] = (-1.0 / (pv * valid as f64)) as f32;
        }
    }
    Ok(g.custom_scalar(probs, loss as f32, coeff)?)
}

/// Dice loss plus an optional cross-entropy term: `dice + ce_weight * ce`.
pub fn segmentation_loss_node(
    g: &mut Graph,
    logits: NodeId,
    mask: &[u8],
    num_classes: usize,
    ignore_id: Option<u8>,
    ce_weight: f32,
) -> Result<NodeId> {
    let dice = dice_loss_node(g, logits, mask, num_classes, ignore_id)?;
    if ce_weight <= 0.0 {
        return Ok(dice);
    }
    let ce = cross_entropy_node(g, logits, mask, num_classes, ignore_id)?;
    let weighted = g.mul_scalar(ce, ce_weight)?;
    Ok(g.add(dice, weighted)?)
}

// Value-level conveniences: build a throwaway eval graph.

pub fn huber_loss(pred: &Tensor, target: &Tensor, delta: f32) -> Result<f64> {
    let mut g = Graph::eval();
    let p = g.input(pred.clone())?;
    let t = g.input(target.clone())?;
    let loss = huber_loss_node(&mut g, p, t, delta)?;
    Ok(g.value(loss).scalar_value()? as f64)
}

pub fn ssim(pred: &Tensor, target: &Tensor) -> Result<f64> {
    ssim_with_window(pred, target, SSIM_WINDOW, SSIM_SIGMA)
}

pub fn ssim_with_window(pred: &Tensor, target: &Tensor, window: usize, sigma: f32) -> Result<f64> {
    let mut g = Graph::eval();
    let p = g.input(pred.clone())?;
    let t = g.input(target.clone())?;
    let s = ssim_node(&mut g, p, t, window, sigma)?;
    Ok(g.value(s).scalar_value()? as f64)
}

pub fn ssim_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    Ok(1.0 - ssim(pred, target)?)
}

pub fn edge_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let mut g = Graph::eval();
    let p = g.input(pred.clone())?;
    let t = g.input(target.clone())?;
    let loss = edge_loss_node(&mut g, p, t)?;
    Ok(g.value(loss).scalar_value()? as f64)
}

pub fn mixed_loss(
    pred: &Tensor,
    target: &Tensor,
    weights: &MixedLossWeights,
    params: &ReconLossParams,
) -> Result<f64> {
    let mut g = Graph::eval();
    let p = g.input(pred.clone())?;
    let t = g.input(target.clone())?;
    let loss = mixed_loss_node(&mut g, p, t, weights, params)?;
    Ok(g.value(loss).scalar_value()? as f64)
}

pub fn dice_loss(
    logits: &Tensor,
    mask: &[u8],
    num_classes: usize,
    ignore_id: Option<u8>,
) -> Result<f64> {
    let mut g = Graph::eval();
    let l = g.input(logits.clone())?;
    let loss = dice_loss_node(&mut g, l, mask, num_classes, ignore_id)?;
    Ok(g.value(loss).scalar_value()? as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: [usize; 4], seed: u64, lo: f32, hi: f32) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn huber_zero_for_identical_inputs() {
        let t = random_tensor([1, 2, 4, 4], 1, 0.0, 1.0);
        assert_eq!(huber_loss(&t, &t, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn huber_closed_form_small_residual() {
        // e = 0.1 everywhere, delta 1 -> 0.5 * 0.01 = 0.005
        let pred = Tensor::full([1, 1, 4, 4], 0.6);
        let target = Tensor::full([1, 1, 4, 4], 0.5);
        let got = huber_loss(&pred, &target, 1.0).unwrap();
        assert!((got - 0.005).abs() < 1e-7, "{got}");
    }

    #[test]
    fn huber_matches_elementwise_reference() {
        let pred = random_tensor([2, 3, 5, 5], 2, -2.0, 2.0);
        let target = random_tensor([2, 3, 5, 5], 3, -2.0, 2.0);
        let delta = 0.7f32;
        let mut sum = 0.0f64;
        for (p, t) in pred.data().iter().zip(target.data().iter()) {
            let e = (p - t) as f64;
            let d = delta as f64;
            sum += if e.abs() <= d { 0.5 * e * e } else { d * (e.abs() - 0.5 * d) };
        }
        let reference = sum / pred.numel() as f64;
        let got = huber_loss(&pred, &target, delta).unwrap();
        assert!((got - reference).abs() < 1e-6, "{got} vs {reference}");
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let t = random_tensor([1, 3, 16, 16], 4, 0.0, 1.0);
        let s = ssim(&t, &t).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn ssim_negative_for_inverted_high_contrast_pattern() {
        // checkerboard vs its negative
        let mut data = vec![0.0f32; 16 * 16];
        for y in 0..16 {
            for x in 0..16 {
                data[y * 16 + x] = ((x + y) % 2) as f32;
            }
        }
        let a = Tensor::new([1, 1, 16, 16], data.clone()).unwrap();
        let b = Tensor::new([1, 1, 16, 16], data.iter().map(|v| 1.0 - v).collect()).unwrap();
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.0, "{s}");
    }

    #[test]
    fn ssim_rejects_images_smaller_than_window() {
        let t = random_tensor([1, 1, 8, 8], 5, 0.0, 1.0);
        assert!(ssim(&t, &t).is_err());
    }

    #[test]
    fn edge_loss_zero_for_identical_and_shift_invariant() {
        let t = random_tensor([1, 2, 6, 6], 6, 0.0, 1.0);
        assert!(edge_loss(&t, &t).unwrap() < 1e-6);

        let pred = random_tensor([1, 1, 8, 8], 7, 0.0, 0.5);
        let target = random_tensor([1, 1, 8, 8], 8, 0.0, 0.5);
        let base = edge_loss(&pred, &target).unwrap();
        let mut pred2 = pred.clone();
        let mut target2 = target.clone();
        for v in pred2.data_mut() {
            *v += 0.3;
        }
        for v in target2.data_mut() {
            *v += 0.3;
        }
        let shifted = edge_loss(&pred2, &target2).unwrap();
        assert!((base - shifted).abs() < 1e-5, "{base} vs {shifted}");
    }

    #[test]
    fn edge_loss_step_fixture_hand_value() {
        // constant pred vs a unit step at column 2 on 1x1x4x4:
        // Sobel-x magnitude of the step is [0,4,4,0] per row -> mean 2.0
        let pred = Tensor::full([1, 1, 4, 4], 0.25);
        let mut tdata = vec![0.0f32; 16];
        for y in 0..4 {
            for x in 2..4 {
                tdata[y * 4 + x] = 1.0;
            }
        }
        let target = Tensor::new([1, 1, 4, 4], tdata).unwrap();
        let got = edge_loss(&pred, &target).unwrap();
        assert!((got - 2.0).abs() < 1e-5, "{got}");
    }

    #[test]
    fn mixed_loss_degenerate_weights_equal_huber() {
        let pred = random_tensor([1, 2, 12, 12], 9, 0.0, 1.0);
        let target = random_tensor([1, 2, 12, 12], 10, 0.0, 1.0);
        let params = ReconLossParams { ssim_window: 11, ..Default::default() };
        let w = MixedLossWeights { alpha: 1.0, beta: 0.0, gamma: 0.0 };
        let m = mixed_loss(&pred, &target, &w, &params).unwrap();
        let h = huber_loss(&pred, &target, params.huber_delta).unwrap();
        assert!((m - h).abs() < 1e-7, "{m} vs {h}");
    }

    #[test]
    fn mixed_loss_is_weighted_sum_of_components() {
        let pred = random_tensor([1, 2, 12, 12], 11, 0.0, 1.0);
        let target = random_tensor([1, 2, 12, 12], 12, 0.0, 1.0);
        let params = ReconLossParams::default();
        let weights = MixedLossWeights::default();
        let h = huber_loss(&pred, &target, params.huber_delta).unwrap();
        let s = 1.0 - ssim_with_window(&pred, &target, params.ssim_window, params.ssim_sigma).unwrap();
        let e = edge_loss(&pred, &target).unwrap();
        let expect = 0.5 * h + 0.4 * s + 0.1 * e;
        let got = mixed_loss(&pred, &target, &weights, &params).unwrap();
        assert!((got - expect).abs() < 1e-5, "{got} vs {expect}");

        // identical images: every component zero
        assert!(mixed_loss(&target, &target, &weights, &params).unwrap() < 1e-6);
    }

    #[test]
    fn mixed_loss_is_linear_in_weights() {
        let pred = random_tensor([1, 1, 12, 12], 13, 0.0, 1.0);
        let target = random_tensor([1, 1, 12, 12], 14, 0.0, 1.0);
        let params = ReconLossParams::default();
        let w1 = MixedLossWeights::default();
        let w2 = MixedLossWeights { alpha: 1.0, beta: 0.8, gamma: 0.2 };
        let a = mixed_loss(&pred, &target, &w1, &params).unwrap();
        let b = mixed_loss(&pred, &target, &w2, &params).unwrap();
        assert!((2.0 * a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn dice_saturates_for_confident_correct_logits() {
        // strong logits favoring the correct class everywhere
        let mask = vec![0u8, 1, 2, 1];
        let mut logits = Tensor::zeros([1, 3, 2, 2]);
        for (pix, &m) in mask.iter().enumerate() {
            logits.data_mut()[m as usize * 4 + pix] = 20.0;
        }
        let loss = dice_loss(&logits, &mask, 3, None).unwrap();
        assert!(loss < 0.01, "{loss}");
    }

    #[test]
    fn dice_uniform_logits_balanced_mask_closed_form() {
        // p = 0.5 everywhere, mask half class 0 half class 1:
        // per class dice = (2*0.5*2 + eps)/(0.5*4 + 2 + eps) = 0.5 -> loss 0.5
        let logits = Tensor::zeros([1, 2, 2, 2]);
        let mask = vec![0u8, 0, 1, 1];
        let loss = dice_loss(&logits, &mask, 2, None).unwrap();
        assert!((loss - 0.5).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn dice_ignores_classes_absent_everywhere() {
        // 3 declared classes but only 0 and 1 appear in mask or prediction
        let mask = vec![0u8, 0, 1, 1];
        let mut logits = Tensor::zeros([1, 3, 2, 2]);
        for (pix, &m) in mask.iter().enumerate() {
            logits.data_mut()[m as usize * 4 + pix] = 10.0;
        }
        let loss3 = dice_loss(&logits, &mask, 3, None).unwrap();
        // identical two-class problem
        let mut logits2 = Tensor::zeros([1, 2, 2, 2]);
        for (pix, &m) in mask.iter().enumerate() {
            logits2.data_mut()[m as usize * 4 + pix] = 10.0;
        }
        let loss2 = dice_loss(&logits2, &mask, 2, None).unwrap();
        assert!((loss3 - loss2).abs() < 1e-4, "{loss3} vs {loss2}");
    }

    #[test]
    fn dice_rejects_invalid_class_id() {
        let logits = Tensor::zeros([1, 2, 2, 2]);
        let mask = vec![0u8, 1, 2, 0];
        assert!(dice_loss(&logits, &mask, 2, None).is_err());
        // but 255 passes when declared as the ignore id
        let mask = vec![0u8, 1, 255, 0];
        dice_loss(&logits, &mask, 2, Some(255)).unwrap();
    }

    #[test]
    fn dice_is_equivariant_under_class_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let logits = random_tensor([1, 3, 4, 4], 16, -1.0, 1.0);
        let mask: Vec<u8> = (0..16).map(|_| rng.gen_range(0..3u8)).collect();
        let base = dice_loss(&logits, &mask, 3, None).unwrap();

        // permutation pi: 0->2, 1->0, 2->1
        let pi = [2u8, 0, 1];
        let mut permuted = Tensor::zeros([1, 3, 4, 4]);
        for c in 0..3 {
            let dst = pi[c] as usize;
            for pix in 0..16 {
                permuted.data_mut()[dst * 16 + pix] = logits.data()[c * 16 + pix];
            }
        }
        let pmask: Vec<u8> = mask.iter().map(|&m| pi[m as usize]).collect();
        let relabeled = dice_loss(&permuted, &pmask, 3, None).unwrap();
        assert!((base - relabeled).abs() < 1e-6, "{base} vs {relabeled}");
    }

    #[test]
    fn losses_stay_in_declared_ranges() {
        for seed in 0..5u64 {
            let pred = random_tensor([1, 2, 12, 12], 100 + seed, 0.0, 1.0);
            let target = random_tensor([1, 2, 12, 12], 200 + seed, 0.0, 1.0);
            assert!(huber_loss(&pred, &target, 1.0).unwrap() >= 0.0);
            let sl = ssim_loss(&pred, &target).unwrap();
            assert!((0.0..=2.0).contains(&sl), "{sl}");
            assert!(edge_loss(&pred, &target).unwrap() >= 0.0);
            let m = mixed_loss(&pred, &target, &MixedLossWeights::default(), &ReconLossParams::default()).unwrap();
            assert!(m >= 0.0);
        }
    }
}
