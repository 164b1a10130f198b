//! Preprocessing chain: band selection, tiling into fixed-size patches,
//! black-pixel quality filtering, histogram equalization or min-max
//! normalization, split assignment, and manifest emission.
//!
//! Patch-level operations are pure; the pipeline processes sources in
//! parallel but always writes the manifest from entries sorted by
//! (source, tile row, tile column), so output bytes are independent of
//! thread count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rascore::{
    save_manifest, write_mask, write_raster, ClassScheme, DatasetManifest, LabelMask,
    ManifestEntry, MultibandRaster, PreprocessProvenance, RasterData, Split,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WetsegError};

pub const EQUALIZE_BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizePolicy {
    MinMax,
    None,
}

impl NormalizePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            NormalizePolicy::MinMax => "minmax",
            NormalizePolicy::None => "none",
        }
    }
}

/// How entries are assigned to train/val/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum SplitPolicy {
    /// Every region must be mapped to a split.
    ByRegion { regions: BTreeMap<String, Split> },
    /// Seeded shuffle, then floor(n * fraction) per split with the remainder
    /// going to train.
    Random { train: f64, val: f64, test: f64, seed: u64 },
}

impl SplitPolicy {
    /// The region mapping used for the medium-resolution dataset:
    /// Biesbosch is the test set, Lauwersmeer the validation set, everything
    /// else trains.
    pub fn paper_regions() -> Self {
        let mut regions = BTreeMap::new();
        regions.insert("Biesbosch".to_string(), Split::Test);
        regions.insert("Lauwersmeer".to_string(), Split::Val);
        for r in ["Gelderse Poort", "Oostvaardersplassen", "Loosdrechtse Plassen", "Land van Saeftinghe"] {
            regions.insert(r.to_string(), Split::Train);
        }
        SplitPolicy::ByRegion { regions }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SplitPolicy::ByRegion { regions } => {
                if regions.is_empty() {
                    return Err(WetsegError::Config("by-region policy with no regions".into()));
                }
            }
            SplitPolicy::Random { train, val, test, .. } => {
                for (name, f) in [("train", train), ("val", val), ("test", test)] {
                    if !(0.0..=1.0).contains(f) {
                        return Err(WetsegError::Config(format!("{name} fraction {f} outside [0,1]")));
                    }
                }
                if (train + val + test - 1.0).abs() > 1e-9 {
                    return Err(WetsegError::Config(format!(
                        "split fractions must sum to 1, got {}",
                        train + val + test
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub selected_bands: Vec<String>,
    pub patch_size: u32,
    pub max_invalid_fraction: f64,
    pub equalize: bool,
    pub normalize: NormalizePolicy,
    pub split_policy: SplitPolicy,
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if self.patch_size == 0 {
            violations.push("patch_size must be > 0".to_string());
        }
        if !(0.0..=1.0).contains(&self.max_invalid_fraction) {
            violations.push(format!(
                "max_invalid_fraction {} outside [0,1]",
                self.max_invalid_fraction
            ));
        }
        if let Err(e) = self.split_policy.validate() {
            violations.push(e.to_string());
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(WetsegError::ConfigViolations(violations))
        }
    }
}

/// Subset and reorder bands by name; pixel values are untouched.
pub fn select_bands(raster: &MultibandRaster, bands: &[String]) -> Result<MultibandRaster> {
    raster.validate()?;
    if bands.is_empty() {
        return Err(WetsegError::Config("select_bands: empty band list".into()));
    }
    let mut indices = Vec::with_capacity(bands.len());
    for name in bands {
        let idx = raster
            .band_names
            .iter()
            .position(|b| b == name)
            .ok_or_else(|| WetsegError::UnknownBand(name.clone()))?;
        indices.push(idx);
    }
    let plane = raster.width as usize * raster.height as usize;
    let data = match &raster.data {
        RasterData::U8(v) => RasterData::U8(gather_bands(v, &indices, plane)),
        RasterData::U16(v) => RasterData::U16(gather_bands(v, &indices, plane)),
        RasterData::F32(v) => RasterData::F32(gather_bands(v, &indices, plane)),
    };
    Ok(MultibandRaster {
        width: raster.width,
        height: raster.height,
        band_names: bands.to_vec(),
        data,
        nodata_value: raster.nodata_value,
        region: raster.region.clone(),
        acquired_at: raster.acquired_at.clone(),
        gsd_m: raster.gsd_m,
    })
}

fn gather_bands<T: Copy>(data: &[T], indices: &[usize], plane: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(indices.len() * plane);
    for &b in indices {
        out.extend_from_slice(&data[b * plane..(b + 1) * plane]);
    }
    out
}

/// Grid position of one tile within its source raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePos {
    pub row: u32,
    pub col: u32,
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub undersized: bool,
}

#[derive(Debug, Clone)]
pub struct TiledPatch {
    pub pos: TilePos,
    pub raster: MultibandRaster,
}

/// Non-overlapping grid anchored at (0,0). Partial edge tiles are produced
/// and flagged undersized rather than silently skipped, so rejection
/// statistics account for them.
pub fn tile(raster: &MultibandRaster, patch_size: u32) -> Result<Vec<TiledPatch>> {
    raster.validate()?;
    if patch_size == 0 {
        return Err(WetsegError::Config("patch_size must be > 0".into()));
    }
    let rows = raster.height.div_ceil(patch_size);
    let cols = raster.width.div_ceil(patch_size);
    let mut out = Vec::with_capacity((rows * cols) as usize);
    for row in 0..rows {
        for col in 0..cols {
            let y = row * patch_size;
            let x = col * patch_size;
            let height = patch_size.min(raster.height - y);
            let width = patch_size.min(raster.width - x);
            let pos = TilePos {
                row,
                col,
                x,
                y,
                width,
                height,
                undersized: width < patch_size || height < patch_size,
            };
            out.push(TiledPatch { pos, raster: crop(raster, x, y, width, height) });
        }
    }
    Ok(out)
}

pub(crate) fn crop(raster: &MultibandRaster, x: u32, y: u32, width: u32, height: u32) -> MultibandRaster {
    let bands = raster.bands() as usize;
    let (sw, sh) = (raster.width as usize, raster.height as usize);
    let (x, y, w, h) = (x as usize, y as usize, width as usize, height as usize);
    let data = match &raster.data {
        RasterData::U8(v) => RasterData::U8(crop_planes(v, bands, sw, sh, x, y, w, h)),
        RasterData::U16(v) => RasterData::U16(crop_planes(v, bands, sw, sh, x, y, w, h)),
        RasterData::F32(v) => RasterData::F32(crop_planes(v, bands, sw, sh, x, y, w, h)),
    };
    MultibandRaster {
        width,
        height,
        band_names: raster.band_names.clone(),
        data,
        nodata_value: raster.nodata_value,
        region: raster.region.clone(),
        acquired_at: raster.acquired_at.clone(),
        gsd_m: raster.gsd_m,
    }
}

fn crop_planes<T: Copy>(
    data: &[T],
    bands: usize,
    sw: usize,
    sh: usize,
    x: usize,
    y: usize,
    w: usize,
    h: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(bands * w * h);
    for b in 0..bands {
        let plane = b * sw * sh;
        for row in y..y + h {
            let start = plane + row * sw + x;
            out.extend_from_slice(&data[start..start + w]);
        }
    }
    out
}

/// Tile a label mask on the same grid as [`tile`].
pub fn tile_mask(mask: &LabelMask, patch_size: u32) -> Result<Vec<(TilePos, LabelMask)>> {
    mask.validate()?;
    if patch_size == 0 {
        return Err(WetsegError::Config("patch_size must be > 0".into()));
    }
    let rows = mask.height.div_ceil(patch_size);
    let cols = mask.width.div_ceil(patch_size);
    let mut out = Vec::with_capacity((rows * cols) as usize);
    for row in 0..rows {
        for col in 0..cols {
            let y = row * patch_size;
            let x = col * patch_size;
            let height = patch_size.min(mask.height - y);
            let width = patch_size.min(mask.width - x);
            let pos = TilePos {
                row,
                col,
                x,
                y,
                width,
                height,
                undersized: width < patch_size || height < patch_size,
            };
            let mut values = Vec::with_capacity((width * height) as usize);
            for yy in y..y + height {
                let start = (yy * mask.width + x) as usize;
                values.extend_from_slice(&mask.values[start..start + width as usize]);
            }
            out.push((
                pos,
                LabelMask {
                    width,
                    height,
                    scheme: mask.scheme.clone(),
                    values,
                    gsd_m: mask.gsd_m,
                },
            ));
        }
    }
    Ok(out)
}

/// Why a tile was rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    Undersized,
    ExcessInvalid { invalid: u64, total: u64, fraction: f64 },
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::Undersized => f.write_str("undersized"),
            RejectReason::ExcessInvalid { invalid, total, fraction } => {
                write!(f, "excess invalid pixels: {invalid}/{total} ({:.4}%)", fraction * 100.0)
            }
        }
    }
}

/// Reject undersized tiles and tiles whose invalid-pixel fraction is
/// strictly greater than the threshold. A pixel is invalid ("black") when
/// every band equals the nodata value.
pub fn quality_filter(
    patches: Vec<TiledPatch>,
    max_invalid_fraction: f64,
    patch_size: u32,
) -> (Vec<TiledPatch>, Vec<(TilePos, RejectReason)>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for patch in patches {
        if patch.pos.undersized || patch.pos.width < patch_size || patch.pos.height < patch_size {
            rejected.push((patch.pos, RejectReason::Undersized));
            continue;
        }
        let invalid = patch.raster.nodata_pixel_count() as u64;
        let total = (patch.pos.width as u64) * (patch.pos.height as u64);
        let fraction = invalid as f64 / total as f64;
        if fraction > max_invalid_fraction {
            rejected.push((patch.pos, RejectReason::ExcessInvalid { invalid, total, fraction }));
        } else {
            kept.push(patch);
        }
    }
    (kept, rejected)
}

fn valid_mask(raster: &MultibandRaster) -> Vec<bool> {
    let mut mask = Vec::with_capacity((raster.width * raster.height) as usize);
    for y in 0..raster.height {
        for x in 0..raster.width {
            mask.push(!raster.is_nodata_pixel(y, x));
        }
    }
    mask
}

/// Per-band histogram equalization over valid pixels: values map through the
/// band's empirical CDF (256 bins) onto [0, 1]. Nodata pixels stay at 0; a
/// constant band maps to 0.5 uniformly.
pub fn equalize_histogram(patch: &MultibandRaster) -> Result<MultibandRaster> {
    patch.validate()?;
    let plane = (patch.width * patch.height) as usize;
    let valid = valid_mask(patch);
    let n_valid = valid.iter().filter(|&&v| v).count();
    let bands = patch.bands() as usize;
    let mut out = vec![0.0f32; bands * plane];
    for b in 0..bands {
        let offset = b * plane;
        if n_valid == 0 {
            continue; // whole patch nodata; stays 0
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for pix in 0..plane {
            if valid[pix] {
                let v = patch.data.get_f32(offset + pix) as f64;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if hi == lo {
            for pix in 0..plane {
                if valid[pix] {
                    out[offset + pix] = 0.5;
                }
            }
            continue;
        }
        let bin_of = |v: f64| -> usize {
            let t = (v - lo) / (hi - lo) * EQUALIZE_BINS as f64;
            (t as usize).min(EQUALIZE_BINS - 1)
        };
        let mut hist = [0u64; EQUALIZE_BINS];
        for pix in 0..plane {
            if valid[pix] {
                hist[bin_of(patch.data.get_f32(offset + pix) as f64)] += 1;
            }
        }
        let mut cdf = [0.0f64; EQUALIZE_BINS];
        let mut acc = 0u64;
        for (i, &h) in hist.iter().enumerate() {
            acc += h;
            cdf[i] = acc as f64 / n_valid as f64;
        }
        for pix in 0..plane {
            if valid[pix] {
                out[offset + pix] = cdf[bin_of(patch.data.get_f32(offset + pix) as f64)] as f32;
            }
        }
    }
    Ok(MultibandRaster {
        width: patch.width,
        height: patch.height,
        band_names: patch.band_names.clone(),
        data: RasterData::F32(out),
        nodata_value: 0.0,
        region: patch.region.clone(),
        acquired_at: patch.acquired_at.clone(),
        gsd_m: patch.gsd_m,
    })
}

/// Per-band min-max normalization to [0, 1] over valid pixels. Nodata pixels
/// stay at 0; a constant band maps to 0.5 (mirroring the equalize rule).
pub fn normalize_minmax(patch: &MultibandRaster) -> Result<MultibandRaster> {
    patch.validate()?;
    let plane = (patch.width * patch.height) as usize;
    let valid = valid_mask(patch);
    let n_valid = valid.iter().filter(|&&v| v).count();
    let bands = patch.bands() as usize;
    let mut out = vec![0.0f32; bands * plane];
    for b in 0..bands {
        let offset = b * plane;
        if n_valid == 0 {
            continue;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for pix in 0..plane {
            if valid[pix] {
                let v = patch.data.get_f32(offset + pix) as f64;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        for pix in 0..plane {
            if valid[pix] {
                let v = patch.data.get_f32(offset + pix) as f64;
                out[offset + pix] =
                    if hi == lo { 0.5 } else { ((v - lo) / (hi - lo)) as f32 };
            }
        }
    }
    Ok(MultibandRaster {
        width: patch.width,
        height: patch.height,
        band_names: patch.band_names.clone(),
        data: RasterData::F32(out),
        nodata_value: 0.0,
        region: patch.region.clone(),
        acquired_at: patch.acquired_at.clone(),
        gsd_m: patch.gsd_m,
    })
}

/// Assign one split per item given its region. For the random policy the
/// regions are ignored: a seeded shuffle is cut into floor(n*fraction)
/// slices with the remainder added to train.
pub fn assign_splits(regions: &[String], policy: &SplitPolicy) -> Result<Vec<Split>> {
    policy.validate()?;
    match policy {
        SplitPolicy::ByRegion { regions: map } => regions
            .iter()
            .map(|r| {
                map.get(r)
                    .copied()
                    .ok_or_else(|| WetsegError::Data(format!("region {r:?} not mapped to a split")))
            })
            .collect(),
        SplitPolicy::Random { train, val, test, seed } => {
            let n = regions.len();
            let n_train = (n as f64 * train).floor() as usize;
            let n_val = (n as f64 * val).floor() as usize;
            let n_test = (n as f64 * test).floor() as usize;
            let n_train = n_train + (n - n_train - n_val - n_test);
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            order.shuffle(&mut rng);
            let mut out = vec![Split::Train; n];
            for (rank, &idx) in order.iter().enumerate() {
                out[idx] = if rank < n_train {
                    Split::Train
                } else if rank < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                };
            }
            Ok(out)
        }
    }
}

/// One co-registered image (and optional label) scene entering the pipeline.
#[derive(Debug, Clone)]
pub struct PipelineInput {
    pub source_id: String,
    pub raster: MultibandRaster,
    pub label: Option<LabelMask>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RejectionRecord {
    pub source_id: String,
    pub row: u32,
    pub col: u32,
    pub reason: RejectReason,
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    pub rejections: Vec<RejectionRecord>,
}

/// A processed patch ready to be written: used by this pipeline and by the
/// resolution-experiment builder.
#[derive(Debug, Clone)]
pub(crate) struct PatchRecord {
    pub source_id: String,
    pub row: u32,
    pub col: u32,
    pub raster: MultibandRaster,
    pub label: Option<LabelMask>,
    pub split: Split,
}

/// Write patch records under `<out>/<split>/<region>/<source>_<row>_<col>.ras`
/// (labels get a `_mask.ras` suffix) and return the manifest describing them.
pub(crate) fn write_patch_records(
    records: &[PatchRecord],
    scheme: ClassScheme,
    provenance: PreprocessProvenance,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let mut manifest = DatasetManifest::new(scheme);
    manifest.preprocessing = provenance;
    for rec in records {
        let rel_dir = PathBuf::from(rec.split.as_str()).join(sanitize(&rec.raster.region));
        let dir = out_dir.join(&rel_dir);
        fs::create_dir_all(&dir).map_err(|e| WetsegError::io(&dir, e))?;
        let stem = format!("{}_{}_{}", sanitize(&rec.source_id), rec.row, rec.col);
        let patch_rel = rel_dir.join(format!("{stem}.ras"));
        write_raster(&rec.raster, out_dir.join(&patch_rel))?;
        let label_rel = match &rec.label {
            Some(mask) => {
                let rel = rel_dir.join(format!("{stem}_mask.ras"));
                write_mask(mask, out_dir.join(&rel))?;
                Some(path_to_string(&rel))
            }
            None => None,
        };
        manifest.entries.push(ManifestEntry {
            patch_path: path_to_string(&patch_rel),
            label_path: label_rel,
            region: rec.raster.region.clone(),
            split: rec.split,
            acquired_at: rec.raster.acquired_at.clone(),
            gsd_m: rec.raster.gsd_m,
            cloud_cover: None,
        });
    }
    Ok(manifest)
}

fn sanitize(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if cleaned.is_empty() {
        "unnamed".to_string()
    } else {
        cleaned
    }
}

fn path_to_string(p: &Path) -> String {
    // manifests always use forward slashes
    p.iter().map(|c| c.to_string_lossy()).collect::<Vec<_>>().join("/")
}

/// Run the full preprocessing chain and write patches plus `manifest.json`
/// into `out_dir`. Image and label are tiled identically and kept or
/// rejected together.
pub fn run_pipeline(
    inputs: &[PipelineInput],
    config: &PreprocessConfig,
    scheme: ClassScheme,
    out_dir: &Path,
) -> Result<PipelineOutput> {
    config.validate()?;
    scheme.validate()?;

    struct SourceResult {
        kept: Vec<(String, TilePos, MultibandRaster, Option<LabelMask>)>,
        rejections: Vec<RejectionRecord>,
    }

    let process_one = |input: &PipelineInput| -> Result<SourceResult> {
        if let Some(label) = &input.label {
            if label.width != input.raster.width || label.height != input.raster.height {
                return Err(WetsegError::Data(format!(
                    "source {:?}: label dims {}x{} do not match image dims {}x{}",
                    input.source_id, label.width, label.height, input.raster.width, input.raster.height
                )));
            }
        }
        let selected = if config.selected_bands.is_empty() {
            input.raster.clone()
        } else {
            select_bands(&input.raster, &config.selected_bands)?
        };
        let tiles = tile(&selected, config.patch_size)?;
        let label_tiles: Option<Vec<(TilePos, LabelMask)>> = match &input.label {
            Some(mask) => Some(tile_mask(mask, config.patch_size)?),
            None => None,
        };
        let (kept, rejected) =
            quality_filter(tiles, config.max_invalid_fraction, config.patch_size);
        let mut kept_out = Vec::with_capacity(kept.len());
        for patch in kept {
            let processed = if config.equalize {
                equalize_histogram(&patch.raster)?
            } else {
                match config.normalize {
                    NormalizePolicy::MinMax => normalize_minmax(&patch.raster)?,
                    NormalizePolicy::None => patch.raster,
                }
            };
            let label_patch = label_tiles.as_ref().map(|tiles| {
                tiles
                    .iter()
                    .find(|(pos, _)| pos.row == patch.pos.row && pos.col == patch.pos.col)
                    .map(|(_, m)| m.clone())
                    .expect("image and label share one grid")
            });
            kept_out.push((input.source_id.clone(), patch.pos, processed, label_patch));
        }
        let rejections = rejected
            .into_iter()
            .map(|(pos, reason)| RejectionRecord {
                source_id: input.source_id.clone(),
                row: pos.row,
                col: pos.col,
                reason,
            })
            .collect();
        Ok(SourceResult { kept: kept_out, rejections })
    };

    let results: Vec<Result<SourceResult>> = inputs.par_iter().map(process_one).collect();
    let mut kept = Vec::new();
    let mut rejections = Vec::new();
    for r in results {
        let r = r?;
        kept.extend(r.kept);
        rejections.extend(r.rejections);
    }
    kept.sort_by(|a, b| (&a.0, a.1.row, a.1.col).cmp(&(&b.0, b.1.row, b.1.col)));
    rejections.sort_by(|a, b| {
        (&a.source_id, a.row, a.col).cmp(&(&b.source_id, b.row, b.col))
    });

    let regions: Vec<String> = kept.iter().map(|(_, _, r, _)| r.region.clone()).collect();
    let splits = assign_splits(&regions, &config.split_policy)?;

    let records: Vec<PatchRecord> = kept
        .into_iter()
        .zip(splits)
        .map(|((source_id, pos, raster, label), split)| PatchRecord {
            source_id,
            row: pos.row,
            col: pos.col,
            raster,
            label,
            split,
        })
        .collect();

    let seed = match &config.split_policy {
        SplitPolicy::Random { seed, .. } => Some(*seed),
        SplitPolicy::ByRegion { .. } => None,
    };
    let provenance = PreprocessProvenance {
        patch_size: config.patch_size,
        max_invalid_fraction: config.max_invalid_fraction as f32,
        equalized: config.equalize,
        normalize: config.normalize.as_str().to_string(),
        selected_bands: config.selected_bands.clone(),
        seed,
    };
    fs::create_dir_all(out_dir).map_err(|e| WetsegError::io(out_dir, e))?;
    let manifest = write_patch_records(&records, scheme, provenance, out_dir)?;
    let manifest_path = out_dir.join("manifest.json");
    save_manifest(&manifest, &manifest_path)?;
    Ok(PipelineOutput { manifest, manifest_path, rejections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn raster_with(
        width: u32,
        height: u32,
        bands: usize,
        fill: impl Fn(usize, u32, u32) -> f32,
    ) -> MultibandRaster {
        let mut data = Vec::with_capacity(bands * (width * height) as usize);
        for b in 0..bands {
            for y in 0..height {
                for x in 0..width {
                    data.push(fill(b, y, x));
                }
            }
        }
        MultibandRaster::new(
            width,
            height,
            (0..bands).map(|i| format!("B{}", i + 2)).collect(),
            RasterData::F32(data),
            0.0,
            "Biesbosch".into(),
            "2024-01-01".into(),
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn select_bands_identity_keeps_raster() {
        let r = raster_with(4, 3, 3, |b, y, x| (b * 100 + (y * 4 + x) as usize) as f32);
        let same = select_bands(&r, &r.band_names.clone()).unwrap();
        assert_eq!(same, r);
    }

    #[test]
    fn select_bands_permutation_matches_per_pixel() {
        let r = raster_with(5, 4, 4, |b, y, x| (b as f32) * 10.0 + (y * 5 + x) as f32 * 0.1);
        let order = vec!["B4".to_string(), "B3".to_string(), "B2".to_string()];
        let sel = select_bands(&r, &order).unwrap();
        assert_eq!(sel.band_names, order);
        // oracle: each output band matches its named source band per pixel
        for (out_b, name) in order.iter().enumerate() {
            let src_b = r.band_names.iter().position(|n| n == name).unwrap() as u32;
            for y in 0..4 {
                for x in 0..5 {
                    assert_eq!(sel.value(out_b as u32, y, x), r.value(src_b, y, x));
                }
            }
        }
    }

    #[test]
    fn select_bands_subsets_26_to_9() {
        let names: Vec<String> = (0..26).map(|i| format!("S{i}")).collect();
        let plane = 4usize;
        let r = MultibandRaster::new(
            2,
            2,
            names,
            RasterData::U16((0..26 * plane).map(|i| i as u16).collect()),
            0.0,
            String::new(),
            String::new(),
            10.0,
        )
        .unwrap();
        let pick: Vec<String> = ["S1", "S2", "S3", "S4", "S5", "S6", "S7", "S10", "S11"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let sel = select_bands(&r, &pick).unwrap();
        assert_eq!(sel.bands(), 9);
    }

    #[test]
    fn select_bands_unknown_name_errors() {
        let r = raster_with(2, 2, 2, |_, _, _| 1.0);
        assert!(matches!(
            select_bands(&r, &["B9".to_string()]),
            Err(WetsegError::UnknownBand(_))
        ));
    }

    #[test]
    fn tile_exact_grid_yields_full_patches() {
        let r = raster_with(512, 512, 2, |_, y, x| (y + x) as f32);
        let tiles = tile(&r, 256).unwrap();
        assert_eq!(tiles.len(), 4);
        assert!(tiles.iter().all(|t| !t.pos.undersized));
    }

    #[test]
    fn tile_600_square_produces_4_full_and_5_undersized() {
        let r = raster_with(600, 600, 1, |_, y, x| (y * 600 + x) as f32);
        let tiles = tile(&r, 256).unwrap();
        // counting oracle over grid arithmetic
        let full_per_axis = (0..600u32).step_by(256).filter(|&o| o + 256 <= 600).count();
        let total_per_axis = 600u32.div_ceil(256) as usize;
        let expect_full = full_per_axis * full_per_axis;
        let expect_total = total_per_axis * total_per_axis;
        assert_eq!(tiles.len(), expect_total);
        let n_full = tiles.iter().filter(|t| !t.pos.undersized).count();
        assert_eq!(n_full, expect_full);
        assert_eq!(tiles.len() - n_full, expect_total - expect_full);
        assert_eq!((n_full, tiles.len() - n_full), (4, 5));
    }

    #[test]
    fn tile_single_patch_when_sizes_match() {
        let r = raster_with(1024, 1024, 1, |_, _, _| 1.0);
        let tiles = tile(&r, 1024).unwrap();
        assert_eq!(tiles.len(), 1);
        assert!(!tiles[0].pos.undersized);
    }

    #[test]
    fn tiling_is_a_partition_of_source_pixels() {
        let r = raster_with(70, 50, 2, |b, y, x| (b as u32 * 10_000 + y * 70 + x) as f32);
        let tiles = tile(&r, 32).unwrap();
        let mut covered = vec![0u32; 70 * 50];
        for t in &tiles {
            for dy in 0..t.pos.height {
                for dx in 0..t.pos.width {
                    let (sy, sx) = (t.pos.y + dy, t.pos.x + dx);
                    covered[(sy * 70 + sx) as usize] += 1;
                    // values preserved
                    assert_eq!(t.raster.value(1, dy, dx), r.value(1, sy, sx));
                }
            }
        }
        assert!(covered.iter().all(|&c| c == 1), "every pixel in exactly one tile");
    }

    #[test]
    fn quality_filter_threshold_is_strict() {
        // 6554/65536 black pixels = 10.0002% > 10% -> rejected
        let black = 6554usize;
        let r = raster_with(256, 256, 2, |_, y, x| {
            if (y * 256 + x) < black as u32 {
                0.0
            } else {
                1.0 + (y + x) as f32
            }
        });
        let tiles = tile(&r, 256).unwrap();
        let (kept, rejected) = quality_filter(tiles, 0.10, 256);
        assert!(kept.is_empty());
        match &rejected[0].1 {
            RejectReason::ExcessInvalid { invalid, total, .. } => {
                assert_eq!((*invalid, *total), (6554, 65536));
            }
            other => panic!("unexpected reason {other:?}"),
        }

        // exactly at the threshold stays in (strictly-greater rule)
        let at = 6553usize; // 6553/65536 = 9.9991% <= 0.10
        let r2 = raster_with(256, 256, 2, |_, y, x| {
            if (y * 256 + x) < at as u32 {
                0.0
            } else {
                1.0
            }
        });
        let (kept, _) = quality_filter(tile(&r2, 256).unwrap(), 0.10, 256);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn quality_filter_keeps_clean_patches_and_flags_undersized() {
        let r = raster_with(200, 256, 1, |_, _, _| 3.0);
        let tiles = tile(&r, 256).unwrap();
        let (kept, rejected) = quality_filter(tiles, 0.10, 256);
        assert!(kept.is_empty());
        assert_eq!(rejected.len(), 1);
        assert_eq!(rejected[0].1, RejectReason::Undersized);

        let clean = raster_with(256, 256, 1, |_, _, _| 2.0);
        let (kept, rejected) = quality_filter(tile(&clean, 256).unwrap(), 0.0, 256);
        assert_eq!(kept.len(), 1);
        assert!(rejected.is_empty());
    }

    #[test]
    fn quality_filter_matches_bruteforce_decision() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..30 {
            let threshold = rng.gen_range(0.0..0.5);
            let p_black = rng.gen_range(0.0..0.6);
            let r = raster_with(16, 16, 2, |b, y, x| {
                // deterministic pseudo-random blackness per pixel
                let h = (y * 16 + x) as f32 * 0.618;
                if (h.fract() as f64) < p_black {
                    0.0
                } else {
                    (b + 1) as f32
                }
            });
            let tiles = tile(&r, 16).unwrap();
            let invalid = r.nodata_pixel_count() as f64;
            let expect_keep = invalid / 256.0 <= threshold;
            let (kept, _) = quality_filter(tiles, threshold, 16);
            assert_eq!(!kept.is_empty(), expect_keep);
        }
    }

    #[test]
    fn equalize_uniform_band_is_identity_within_bin_resolution() {
        let n = 64u32; // 4096 pixels uniformly spanning [0,1]
        let r = raster_with(n, n, 1, |_, y, x| {
            let i = y * n + x;
            // avoid exact 0.0 so no pixel is treated as nodata
            (i as f32 + 1.0) / (n * n) as f32
        });
        let eq = equalize_histogram(&r).unwrap();
        for y in 0..n {
            for x in 0..n {
                let vin = r.value(0, y, x);
                let vout = eq.value(0, y, x);
                assert!(
                    (vin - vout).abs() <= 1.5 / 256.0 + 1e-3,
                    "({x},{y}): {vin} vs {vout}"
                );
            }
        }
    }

    #[test]
    fn equalize_two_valued_band_hits_cdf_endpoints() {
        // 10% value a, 90% value b>a: a -> 0.1, b -> 1.0
        let r = raster_with(10, 10, 1, |_, y, x| if y * 10 + x < 10 { 2.0 } else { 5.0 });
        let eq = equalize_histogram(&r).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                let expect = if r.value(0, y, x) == 2.0 { 0.1 } else { 1.0 };
                assert!((eq.value(0, y, x) - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn equalize_constant_band_maps_to_half() {
        let r = raster_with(8, 8, 2, |b, _, _| if b == 0 { 7.0 } else { 3.0 });
        let eq = equalize_histogram(&r).unwrap();
        assert!(eq.data.get_f32(0) == 0.5 && eq.data.get_f32(100) == 0.5);
    }

    #[test]
    fn equalize_is_monotone_and_bounded_with_nodata_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let vals: Vec<f32> = (0..256).map(|_| rng.gen_range(1.0f32..100.0)).collect();
        let r = raster_with(16, 16, 1, |_, y, x| {
            let i = (y * 16 + x) as usize;
            if i % 7 == 0 {
                0.0 // nodata pixels
            } else {
                vals[i]
            }
        });
        let eq = equalize_histogram(&r).unwrap();
        let mut pairs: Vec<(f32, f32)> = Vec::new();
        for y in 0..16 {
            for x in 0..16 {
                if r.is_nodata_pixel(y, x) {
                    assert_eq!(eq.value(0, y, x), 0.0);
                } else {
                    let v = eq.value(0, y, x);
                    assert!((0.0..=1.0).contains(&v));
                    pairs.push((r.value(0, y, x), v));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pairs.windows(2) {
            assert!(w[1].1 >= w[0].1, "equalization must be monotone");
        }
    }

    #[test]
    fn random_split_reproduces_paper_counts() {
        let regions: Vec<String> = (0..1368).map(|_| "any".to_string()).collect();
        let policy = SplitPolicy::Random { train: 0.75, val: 0.15, test: 0.10, seed: 9 };
        let splits = assign_splits(&regions, &policy).unwrap();
        let train = splits.iter().filter(|s| **s == Split::Train).count();
        let val = splits.iter().filter(|s| **s == Split::Val).count();
        let test = splits.iter().filter(|s| **s == Split::Test).count();
        assert_eq!((train, val, test), (1027, 205, 136));
        // deterministic given the seed
        assert_eq!(splits, assign_splits(&regions, &policy).unwrap());
    }

    #[test]
    fn single_entry_all_train() {
        let policy = SplitPolicy::Random { train: 1.0, val: 0.0, test: 0.0, seed: 1 };
        let splits = assign_splits(&["x".to_string()], &policy).unwrap();
        assert_eq!(splits, vec![Split::Train]);
    }

    #[test]
    fn region_policy_maps_paper_regions() {
        let regions = vec![
            "Biesbosch".to_string(),
            "Lauwersmeer".to_string(),
            "Oostvaardersplassen".to_string(),
        ];
        let splits = assign_splits(&regions, &SplitPolicy::paper_regions()).unwrap();
        assert_eq!(splits, vec![Split::Test, Split::Val, Split::Train]);
    }

    #[test]
    fn unmapped_region_is_an_error() {
        let policy = SplitPolicy::ByRegion {
            regions: [("A".to_string(), Split::Train)].into_iter().collect(),
        };
        assert!(assign_splits(&["B".to_string()], &policy).is_err());
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let policy = SplitPolicy::Random { train: 0.5, val: 0.2, test: 0.2, seed: 0 };
        assert!(policy.validate().is_err());
    }
}
