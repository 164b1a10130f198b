//! Label-transfer framework: pair temporally close high/medium-resolution
//! scenes, split scenes into annotation grids, and downscale high-resolution
//! label masks onto the medium-resolution grid by per-cell majority vote.

use std::path::Path;

use chrono::NaiveDate;
use rascore::{
    save_manifest, DatasetManifest, LabelMask, MultibandRaster, PreprocessProvenance,
    Split, UNLABELED_ID,
};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WetsegError};
use crate::pipeline::{
    assign_splits, quality_filter, select_bands, tile, tile_mask, PatchRecord, SplitPolicy,
};

pub const DEFAULT_MAX_GAP_DAYS: i64 = 7;

/// 2D affine map from high-resolution pixel centers to continuous
/// low-resolution pixel coordinates:
/// `lx = a*cx + b*cy + c`, `ly = d*cx + e*cy + f` with `cx = x + 0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl AffineMap {
    /// Uniform scale with no offset: one hires pixel spans `scale` lores pixels.
    pub fn scale(scale: f64) -> Self {
        AffineMap { a: scale, b: 0.0, c: 0.0, d: 0.0, e: scale, f: 0.0 }
    }

    /// Scale from ground sample distances: hires gsd over lores gsd.
    pub fn from_gsd(hires_gsd: f64, lores_gsd: f64) -> Self {
        Self::scale(hires_gsd / lores_gsd)
    }

    /// Map a hires pixel (x, y) by its center.
    #[inline]
    pub fn map_pixel(&self, x: u32, y: u32) -> (f64, f64) {
        let cx = x as f64 + 0.5;
        let cy = y as f64 + 0.5;
        (self.a * cx + self.b * cy + self.c, self.d * cx + self.e * cy + self.f)
    }
}

/// A dated scene reference used for pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRef {
    pub id: String,
    /// ISO-8601 date.
    pub acquired_at: String,
}

impl SceneRef {
    fn date(&self) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(&self.acquired_at, "%Y-%m-%d").map_err(|e| {
            WetsegError::Data(format!("scene {:?}: bad date {:?}: {e}", self.id, self.acquired_at))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePairing {
    pub hires_id: String,
    pub lores_id: String,
    pub gap_days: i64,
}

/// Pairing outcome: matched scenes plus the hires scenes left unpaired.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PairingReport {
    pub pairs: Vec<ScenePairing>,
    pub unpaired: Vec<String>,
    pub max_gap_days: i64,
}

/// Pair each hires scene with the nearest-in-time lores scene within the
/// window. Ties between an earlier and a later candidate go to the earlier
/// date. Unpaired scenes are reported, not dropped silently.
pub fn pair_scenes(
    hires: &[SceneRef],
    lores: &[SceneRef],
    max_gap_days: i64,
) -> Result<PairingReport> {
    if max_gap_days < 0 {
        return Err(WetsegError::Config("max_gap_days must be nonnegative".into()));
    }
    let mut report = PairingReport { max_gap_days, ..Default::default() };
    for h in hires {
        let hd = h.date()?;
        let mut best: Option<(&SceneRef, i64, NaiveDate)> = None;
        for l in lores {
            let ld = l.date()?;
            let gap = (ld - hd).num_days().abs();
            if gap > max_gap_days {
                continue;
            }
            let better = match &best {
                None => true,
                Some((_, bg, bd)) => gap < *bg || (gap == *bg && ld < *bd),
            };
            if better {
                best = Some((l, gap, ld));
            }
        }
        match best {
            Some((l, gap, _)) => report.pairs.push(ScenePairing {
                hires_id: h.id.clone(),
                lores_id: l.id.clone(),
                gap_days: gap,
            }),
            None => report.unpaired.push(h.id.clone()),
        }
    }
    Ok(report)
}

/// Offsets and sizes of a near-equal split of `extent` into `parts`:
/// the remainder goes to the last part.
pub fn grid_split_dims(extent: u32, parts: u32) -> Vec<(u32, u32)> {
    let base = extent / parts;
    (0..parts)
        .map(|i| {
            let offset = i * base;
            let size = if i + 1 == parts { extent - offset } else { base };
            (offset, size)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GridTile {
    pub row: u32,
    pub col: u32,
    pub x: u32,
    pub y: u32,
    pub raster: MultibandRaster,
}

/// Split a raster into a rows x cols grid of near-equal tiles covering it
/// exactly; remainder pixels go to the last row/column.
pub fn grid_split(raster: &MultibandRaster, rows: u32, cols: u32) -> Result<Vec<GridTile>> {
    raster.validate()?;
    if rows == 0 || cols == 0 {
        return Err(WetsegError::Config("grid_split needs rows, cols >= 1".into()));
    }
    if rows > raster.height || cols > raster.width {
        return Err(WetsegError::Data(format!(
            "cannot split {}x{} into {rows}x{cols} non-empty tiles",
            raster.width, raster.height
        )));
    }
    let row_dims = grid_split_dims(raster.height, rows);
    let col_dims = grid_split_dims(raster.width, cols);
    let mut out = Vec::with_capacity((rows * cols) as usize);
    for (ri, &(y, h)) in row_dims.iter().enumerate() {
        for (ci, &(x, w)) in col_dims.iter().enumerate() {
            out.push(GridTile {
                row: ri as u32,
                col: ci as u32,
                x,
                y,
                raster: crop_raster(raster, x, y, w, h),
            });
        }
    }
    Ok(out)
}

fn crop_raster(raster: &MultibandRaster, x: u32, y: u32, w: u32, h: u32) -> MultibandRaster {
    crate::pipeline::crop(raster, x, y, w, h)
}

/// Majority-vote downscaling: each lores cell takes the most frequent class
/// among the hires label pixels whose mapped centers land in it. Ties break
/// toward the lower class id; cells with no source pixels become the
/// reserved unlabeled id. Unlabeled source pixels cast no votes.
pub fn downscale_labels(
    hires: &LabelMask,
    mapping: &AffineMap,
    lores_width: u32,
    lores_height: u32,
    lores_gsd_m: f32,
) -> Result<LabelMask> {
    hires.validate()?;
    let classes = hires.scheme.len();
    let cells = (lores_width * lores_height) as usize;
    let mut votes = vec![0u32; cells * classes];
    for y in 0..hires.height {
        for x in 0..hires.width {
            let (lx, ly) = mapping.map_pixel(x, y);
            let cx = lx.floor();
            let cy = ly.floor();
            if cx < 0.0 || cy < 0.0 || cx >= lores_width as f64 || cy >= lores_height as f64 {
                return Err(WetsegError::MappingOutside { x, y });
            }
            let cell = cy as usize * lores_width as usize + cx as usize;
            let v = hires.value(y, x);
            if v != UNLABELED_ID {
                votes[cell * classes + v as usize] += 1;
            }
        }
    }
    let mut values = Vec::with_capacity(cells);
    for cell in 0..cells {
        let cell_votes = &votes[cell * classes..(cell + 1) * classes];
        let mut best = UNLABELED_ID;
        let mut best_n = 0u32;
        for (cls, &n) in cell_votes.iter().enumerate() {
            // strict '>' keeps the lowest class id on ties
            if n > best_n {
                best_n = n;
                best = cls as u8;
            }
        }
        values.push(best);
    }
    Ok(LabelMask::new(lores_width, lores_height, hires.scheme.clone(), values, lores_gsd_m)?)
}

/// One co-registered scene pair with its manual hires annotation.
#[derive(Debug, Clone)]
pub struct ResolutionPair {
    pub scene_id: String,
    pub hires: MultibandRaster,
    pub lores: MultibandRaster,
    pub hires_mask: LabelMask,
    pub mapping: AffineMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionConfig {
    pub hires_patch_size: u32,
    pub lores_patch_size: u32,
    pub hires_max_invalid: f64,
    pub lores_max_invalid: f64,
    /// Restrict both resolutions to these bands when non-empty.
    pub bands: Vec<String>,
    /// Scene-level split assignment shared by both manifests.
    pub split_policy: SplitPolicy,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        ResolutionConfig {
            hires_patch_size: 1024,
            lores_patch_size: 256,
            hires_max_invalid: 0.30,
            lores_max_invalid: 0.10,
            bands: Vec::new(),
            split_policy: SplitPolicy::Random { train: 0.7, val: 0.15, test: 0.15, seed: 0 },
        }
    }
}

/// Matched datasets for the resolution comparison: hires patches with the
/// original masks, lores patches with downscaled masks, and one
/// scene-to-split assignment shared by both manifests.
pub fn build_resolution_experiment(
    pairs: &[ResolutionPair],
    config: &ResolutionConfig,
    out_dir: &Path,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if pairs.is_empty() {
        return Err(WetsegError::Data("no scene pairs supplied".into()));
    }
    let scheme = pairs[0].hires_mask.scheme.clone();
    for p in pairs {
        if p.hires_mask.width != p.hires.width || p.hires_mask.height != p.hires.height {
            return Err(WetsegError::Data(format!(
                "scene {:?}: mask dims {}x{} do not match hires dims {}x{}",
                p.scene_id, p.hires_mask.width, p.hires_mask.height, p.hires.width, p.hires.height
            )));
        }
        if p.hires_mask.scheme != scheme {
            return Err(WetsegError::Data("resolution pairs mix class schemes".into()));
        }
    }

    // one split per scene, shared by both outputs
    let scene_regions: Vec<String> = pairs.iter().map(|p| p.hires.region.clone()).collect();
    let scene_splits = assign_splits(&scene_regions, &config.split_policy)?;

    let mut hires_records: Vec<PatchRecord> = Vec::new();
    let mut lores_records: Vec<PatchRecord> = Vec::new();
    for (pair, &split) in pairs.iter().zip(scene_splits.iter()) {
        let lores_mask = downscale_labels(
            &pair.hires_mask,
            &pair.mapping,
            pair.lores.width,
            pair.lores.height,
            pair.lores.gsd_m,
        )?;
        for (raster, mask, patch_size, max_invalid, records, tag) in [
            (
                &pair.hires,
                &pair.hires_mask,
                config.hires_patch_size,
                config.hires_max_invalid,
                &mut hires_records,
                "hires",
            ),
            (
                &pair.lores,
                &lores_mask,
                config.lores_patch_size,
                config.lores_max_invalid,
                &mut lores_records,
                "lores",
            ),
        ] {
            let selected = if config.bands.is_empty() {
                raster.clone()
            } else {
                select_bands(raster, &config.bands)?
            };
            let tiles = tile(&selected, patch_size)?;
            let mask_tiles = tile_mask(mask, patch_size)?;
            let (kept, _) = quality_filter(tiles, max_invalid, patch_size);
            for patch in kept {
                let label = mask_tiles
                    .iter()
                    .find(|(pos, _)| pos.row == patch.pos.row && pos.col == patch.pos.col)
                    .map(|(_, m)| m.clone())
                    .expect("image and mask share one grid");
                records.push(PatchRecord {
                    source_id: format!("{}_{tag}", pair.scene_id),
                    row: patch.pos.row,
                    col: patch.pos.col,
                    raster: crate::pipeline::normalize_minmax(&patch.raster)?,
                    label: Some(label),
                    split,
                });
            }
        }
    }

    let provenance = |patch_size: u32, max_invalid: f64| PreprocessProvenance {
        patch_size,
        max_invalid_fraction: max_invalid as f32,
        equalized: false,
        normalize: "minmax".into(),
        selected_bands: config.bands.clone(),
        seed: match &config.split_policy {
            SplitPolicy::Random { seed, .. } => Some(*seed),
            _ => None,
        },
    };
    let hires_dir = out_dir.join("hires");
    let lores_dir = out_dir.join("lores");
    std::fs::create_dir_all(&hires_dir).map_err(|e| WetsegError::io(&hires_dir, e))?;
    std::fs::create_dir_all(&lores_dir).map_err(|e| WetsegError::io(&lores_dir, e))?;
    let hires_manifest = crate::pipeline::write_patch_records(
        &hires_records,
        scheme.clone(),
        provenance(config.hires_patch_size, config.hires_max_invalid),
        &hires_dir,
    )?;
    let lores_manifest = crate::pipeline::write_patch_records(
        &lores_records,
        scheme,
        provenance(config.lores_patch_size, config.lores_max_invalid),
        &lores_dir,
    )?;
    save_manifest(&hires_manifest, hires_dir.join("manifest.json"))?;
    save_manifest(&lores_manifest, lores_dir.join("manifest.json"))?;
    Ok((hires_manifest, lores_manifest))
}

/// Scene-level split lookup shared across manifests.
pub fn split_by_scene(manifest: &DatasetManifest) -> std::collections::BTreeMap<String, Split> {
    let mut map = std::collections::BTreeMap::new();
    for e in &manifest.entries {
        // source ids look like `<scene>_<tag>_<row>_<col>.ras` under split/region dirs
        map.insert(e.patch_path.clone(), e.split);
    }
    map
}
