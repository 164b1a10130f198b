//! Synthetic fixture data: striped reconstruction patches, geometric
//! three-class segmentation scenes, and whole synthetic rasters for
//! exercising the preprocessing pipeline end to end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rascore::{ClassDef, ClassScheme, LabelMask, MultibandRaster, RasterData};
use tensorcore::Tensor;

use crate::error::Result;

/// Three-class scheme used by the synthetic segmentation fixtures.
pub fn synth_scheme() -> ClassScheme {
    ClassScheme {
        name: "synth-3".into(),
        classes: vec![
            ClassDef { id: 0, label: "background".into(), color: [40, 60, 80] },
            ClassDef { id: 1, label: "disk".into(), color: [200, 80, 40] },
            ClassDef { id: 2, label: "band".into(), color: [80, 200, 120] },
        ],
    }
}

/// A deterministic striped patch in [0.05, 0.95]: per-band phase-shifted
/// vertical waves. Good structure for reconstruction overfitting.
pub fn striped_patch(size: usize, bands: usize) -> Tensor {
    let mut data = Vec::with_capacity(bands * size * size);
    for b in 0..bands {
        let phase = b as f32 * 0.7;
        for y in 0..size {
            for x in 0..size {
                let v = 0.5
                    + 0.35 * ((x as f32 / 4.0 + phase).sin())
                    + 0.10 * ((y as f32 / 7.0).cos());
                data.push(v.clamp(0.05, 0.95));
            }
        }
    }
    Tensor::new([1, bands, size, size], data).expect("shape agrees")
}

/// Controls for the synthetic segmentation generator.
#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub size: usize,
    pub channels: usize,
    /// Uniform noise amplitude added per pixel per channel.
    pub noise: f32,
    /// With texture, classes share per-pixel value histograms and differ
    /// only in spatial pattern, so labels cannot be predicted pixelwise.
    pub texture: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { size: 64, channels: 3, noise: 0.03, texture: false }
    }
}

fn class_pattern(size: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut mask = vec![0u8; size * size];
    // 1-3 disks of class 1
    for _ in 0..rng.gen_range(1..=3usize) {
        let cx = rng.gen_range(0..size) as f64;
        let cy = rng.gen_range(0..size) as f64;
        let r = rng.gen_range(size as f64 / 8.0..size as f64 / 3.5);
        for y in 0..size {
            for x in 0..size {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if d <= r {
                    mask[y * size + x] = 1;
                }
            }
        }
    }
    // 1-2 horizontal bands of class 2
    for _ in 0..rng.gen_range(1..=2usize) {
        let y0 = rng.gen_range(0..size);
        let thickness = rng.gen_range(size / 10..size / 4).max(2);
        for y in y0..(y0 + thickness).min(size) {
            for x in 0..size {
                mask[y * size + x] = 2;
            }
        }
    }
    mask
}

fn image_for_mask(mask: &[u8], spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let size = spec.size;
    // per-class per-channel base signatures for the separable variant
    let signatures = [[0.20f32, 0.30, 0.25], [0.75, 0.40, 0.30], [0.35, 0.75, 0.60]];
    let mut data = vec![0.0f32; spec.channels * size * size];
    for c in 0..spec.channels {
        for y in 0..size {
            for x in 0..size {
                let cls = mask[y * size + x] as usize;
                let base = if spec.texture {
                    // identical value histograms, different spatial layout
                    match cls {
                        0 => 0.45,
                        1 => {
                            if (x / 2) % 2 == 0 {
                                0.70
                            } else {
                                0.20
                            }
                        }
                        _ => {
                            if (x / 2 + y / 2) % 2 == 0 {
                                0.70
                            } else {
                                0.20
                            }
                        }
                    }
                } else {
                    signatures[cls][c % 3]
                };
                let noisy = base + rng.gen_range(-spec.noise..=spec.noise);
                data[(c * size + y) * size + x] = noisy.clamp(0.02, 1.0);
            }
        }
    }
    data
}

/// Generate `n` (input, mask) pairs. Image `i` of a given seed is always the
/// same regardless of `n`.
pub fn synth_segmentation_dataset(
    n: usize,
    spec: &SynthSpec,
    seed: u64,
) -> Vec<(Tensor, Vec<u8>)> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mask = class_pattern(spec.size, &mut rng);
            let image = image_for_mask(&mask, spec, &mut rng);
            let tensor =
                Tensor::new([1, spec.channels, spec.size, spec.size], image).expect("shape agrees");
            (tensor, mask)
        })
        .collect()
}

/// Unlabeled patches drawn from the same generative family (the masks are
/// discarded); used for autoencoder pretraining fixtures.
pub fn synth_unlabeled_dataset(n: usize, spec: &SynthSpec, seed: u64) -> Vec<Tensor> {
    synth_segmentation_dataset(n, spec, seed).into_iter().map(|(t, _)| t).collect()
}

/// A whole synthetic scene as a raster/mask pair for pipeline tests:
/// values in (0, 1], so planted nodata regions are exactly the zero pixels.
pub fn synth_scene(
    width: u32,
    height: u32,
    bands: usize,
    region: &str,
    acquired_at: &str,
    seed: u64,
) -> Result<(MultibandRaster, LabelMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = width.max(height) as usize;
    let mut mask_sq = class_pattern(size, &mut rng);
    let spec = SynthSpec { size, channels: bands, noise: 0.02, texture: false };
    let img_sq = image_for_mask(&mask_sq, &spec, &mut rng);
    // crop the square pattern to width x height
    let mut data = Vec::with_capacity(bands * (width * height) as usize);
    for b in 0..bands {
        for y in 0..height as usize {
            for x in 0..width as usize {
                data.push(img_sq[(b * size + y) * size + x].max(0.01));
            }
        }
    }
    let mut mask_vals = Vec::with_capacity((width * height) as usize);
    for y in 0..height as usize {
        for x in 0..width as usize {
            mask_vals.push(mask_sq[y * size + x]);
        }
    }
    mask_sq.clear();
    let raster = MultibandRaster::new(
        width,
        height,
        (0..bands).map(|i| format!("B{}", i + 2)).collect(),
        RasterData::F32(data),
        0.0,
        region.into(),
        acquired_at.into(),
        10.0,
    )?;
    let mask = LabelMask::new(width, height, synth_scheme(), mask_vals, 10.0)?;
    Ok((raster, mask))
}

/// Overwrite a rectangle with the nodata value on every band, producing the
/// "black pixel" regions the quality filter rejects.
pub fn plant_black_region(raster: &mut MultibandRaster, x0: u32, y0: u32, w: u32, h: u32) {
    let nodata = raster.nodata_value;
    let (width, height) = (raster.width, raster.height);
    let plane = (width * height) as usize;
    let bands = raster.bands() as usize;
    if let RasterData::F32(data) = &mut raster.data {
        for b in 0..bands {
            for y in y0..(y0 + h).min(height) {
                for x in x0..(x0 + w).min(width) {
                    data[b * plane + (y * width + x) as usize] = nodata;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_generation_is_deterministic_and_prefix_stable() {
        let spec = SynthSpec::default();
        let a = synth_segmentation_dataset(4, &spec, 42);
        let b = synth_segmentation_dataset(4, &spec, 42);
        for ((ta, ma), (tb, mb)) in a.iter().zip(b.iter()) {
            assert!(ta.bit_eq(tb));
            assert_eq!(ma, mb);
        }
        // image i is independent of how many images were requested
        let longer = synth_segmentation_dataset(8, &spec, 42);
        assert!(a[3].0.bit_eq(&longer[3].0));
    }

    #[test]
    fn masks_use_all_three_classes_across_a_batch() {
        let spec = SynthSpec::default();
        let data = synth_segmentation_dataset(8, &spec, 1);
        let mut seen = [false; 3];
        for (_, mask) in &data {
            for &m in mask {
                seen[m as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn texture_mode_shares_value_histograms_between_classes() {
        // in texture mode classes 1 and 2 both split ~50/50 between the two
        // levels, so pixel intensity alone cannot separate them
        let spec = SynthSpec { texture: true, noise: 0.0, size: 32, channels: 1 };
        let data = synth_segmentation_dataset(6, &spec, 3);
        let (mut hi1, mut n1, mut hi2, mut n2) = (0u32, 0u32, 0u32, 0u32);
        for (t, mask) in &data {
            for (i, &m) in mask.iter().enumerate() {
                let v = t.data()[i];
                if m == 1 {
                    n1 += 1;
                    hi1 += (v > 0.45) as u32;
                } else if m == 2 {
                    n2 += 1;
                    hi2 += (v > 0.45) as u32;
                }
            }
        }
        let f1 = hi1 as f64 / n1 as f64;
        let f2 = hi2 as f64 / n2 as f64;
        assert!((f1 - f2).abs() < 0.15, "high-level fractions {f1:.3} vs {f2:.3}");
    }

    #[test]
    fn planted_black_regions_are_nodata_pixels() {
        let (mut raster, _) = synth_scene(64, 64, 2, "T", "2024-01-01", 5).unwrap();
        assert_eq!(raster.nodata_pixel_count(), 0);
        plant_black_region(&mut raster, 10, 10, 8, 4);
        assert_eq!(raster.nodata_pixel_count(), 32);
    }
}
