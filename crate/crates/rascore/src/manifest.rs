//! Dataset manifests: the declarative record of patches, labels, regions, and splits.
//!
//! Manifests are JSON. Patch and label paths are stored relative to the
//! manifest file so a dataset directory can be moved as a unit.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{RasterError, Result};
use crate::ras1::read_header;
use crate::types::ClassScheme;

/// Dataset partition a patch belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One patch (and optionally its label mask) in a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patch_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_path: Option<String>,
    pub region: String,
    pub split: Split,
    #[serde(default)]
    pub acquired_at: String,
    pub gsd_m: f32,
    /// Declared scene cloud-cover fraction, recorded when supplied upstream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_cover: Option<f32>,
}

/// Provenance of the preprocessing run that produced the patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessProvenance {
    pub patch_size: u32,
    pub max_invalid_fraction: f32,
    pub equalized: bool,
    /// "minmax" or "none".
    pub normalize: String,
    pub selected_bands: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for PreprocessProvenance {
    fn default() -> Self {
        PreprocessProvenance {
            patch_size: 0,
            max_invalid_fraction: 0.0,
            equalized: false,
            normalize: "none".into(),
            selected_bands: Vec::new(),
            seed: None,
        }
    }
}

/// Declarative record of a prepared dataset: entries, class scheme, provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_scheme: ClassScheme,
    pub preprocessing: PreprocessProvenance,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(class_scheme: ClassScheme) -> Self {
        DatasetManifest {
            class_scheme,
            preprocessing: PreprocessProvenance::default(),
            entries: Vec::new(),
        }
    }

    /// Number of entries per (train, val, test).
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for e in &self.entries {
            match e.split {
                Split::Train => counts.0 += 1,
                Split::Val => counts.1 += 1,
                Split::Test => counts.2 += 1,
            }
        }
        counts
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Structural invariants that hold without touching the filesystem:
    /// valid scheme, and no patch path claimed by two entries.
    pub fn validate_structure(&self) -> Result<()> {
        self.class_scheme.validate()?;
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if !seen.insert(e.patch_path.as_str()) {
                return Err(RasterError::Schema(format!(
                    "entry {}: patch path {:?} appears more than once (splits must partition entries)",
                    i, e.patch_path
                )));
            }
            if !(e.gsd_m > 0.0) {
                return Err(RasterError::Schema(format!("entry {}: gsd_m must be > 0", i)));
            }
        }
        Ok(())
    }

    /// Filesystem invariants: every referenced file exists and labeled
    /// entries have matching patch/label dims. Paths resolve against `base`.
    pub fn validate_files(&self, base: &Path) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            let patch = base.join(&e.patch_path);
            if !patch.is_file() {
                return Err(RasterError::DanglingPath { index: i, path: patch });
            }
            if let Some(label) = &e.label_path {
                let label = base.join(label);
                if !label.is_file() {
                    return Err(RasterError::DanglingPath { index: i, path: label });
                }
                let ph = read_header(&patch)?;
                let lh = read_header(&label)?;
                if ph.width != lh.width || ph.height != lh.height {
                    return Err(RasterError::LabelDimsMismatch {
                        index: i,
                        patch_w: ph.width,
                        patch_h: ph.height,
                        label_w: lh.width,
                        label_h: lh.height,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Serialize a manifest as pretty JSON. Output is deterministic.
pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate_structure()?;
    let mut json = serde_json::to_vec_pretty(manifest)
        .map_err(|e| RasterError::Schema(format!("manifest encode failed: {e}")))?;
    json.push(b'\n');
    fs::write(path, json).map_err(|e| RasterError::io(path, e))?;
    Ok(())
}

/// Load and fully validate a manifest (schema, structure, referenced files).
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let manifest = load_manifest_unchecked(path)?;
    manifest.validate_structure()?;
    let base = manifest_base(path);
    manifest.validate_files(&base)?;
    Ok(manifest)
}

/// Load with schema and structural validation only; referenced files are not checked.
pub fn load_manifest_unchecked(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| RasterError::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes)
        .map_err(|e| RasterError::Schema(format!("manifest parse failed: {e}")))?;
    manifest.validate_structure()?;
    Ok(manifest)
}

/// Directory that relative entry paths resolve against.
pub fn manifest_base(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ras1::write_raster;
    use crate::types::{MultibandRaster, RasterData};
    use tempfile::tempdir;

    fn tiny_patch(dir: &Path, name: &str) -> String {
        let r = MultibandRaster::new(
            1,
            1,
            vec!["B2".into()],
            RasterData::U8(vec![7]),
            0.0,
            String::new(),
            String::new(),
            10.0,
        )
        .unwrap();
        write_raster(&r, dir.join(name)).unwrap();
        name.to_string()
    }

    fn entry(path: String, split: Split) -> ManifestEntry {
        ManifestEntry {
            patch_path: path,
            label_path: None,
            region: "Biesbosch".into(),
            split,
            acquired_at: "2023-01-01".into(),
            gsd_m: 10.0,
            cloud_cover: None,
        }
    }

    #[test]
    fn empty_manifest_roundtrips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = DatasetManifest::new(ClassScheme::dynamic_world());
        save_manifest(&m, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(m, back);
        assert_eq!(back.split_counts(), (0, 0, 0));
    }

    #[test]
    fn roundtrip_is_byte_stable() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = DatasetManifest::new(ClassScheme::biesbosch_manual());
        m.entries.push(entry(tiny_patch(dir.path(), "a.ras"), Split::Train));
        m.entries.push(entry(tiny_patch(dir.path(), "b.ras"), Split::Test));
        save_manifest(&m, &path).unwrap();
        let bytes1 = fs::read(&path).unwrap();
        let back = load_manifest(&path).unwrap();
        save_manifest(&back, &path).unwrap();
        let bytes2 = fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn unknown_split_is_a_schema_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let json = r#"{
            "class_scheme": {"name":"s","classes":[{"id":0,"label":"a","color":[0,0,0]}]},
            "preprocessing": {"patch_size":256,"max_invalid_fraction":0.1,"equalized":false,"normalize":"none","selected_bands":[]},
            "entries": [{"patch_path":"x.ras","region":"r","split":"holdout","acquired_at":"","gsd_m":10.0}]
        }"#;
        fs::write(&path, json).unwrap();
        match load_manifest(&path) {
            Err(RasterError::Schema(msg)) => assert!(msg.contains("parse"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_patch_path_violates_partition() {
        let dir = tempdir().unwrap();
        let name = tiny_patch(dir.path(), "a.ras");
        let mut m = DatasetManifest::new(ClassScheme::dynamic_world());
        m.entries.push(entry(name.clone(), Split::Train));
        m.entries.push(entry(name, Split::Val));
        assert!(matches!(m.validate_structure(), Err(RasterError::Schema(_))));
    }

    #[test]
    fn dangling_path_reports_entry_index() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = DatasetManifest::new(ClassScheme::dynamic_world());
        m.entries.push(entry(tiny_patch(dir.path(), "a.ras"), Split::Train));
        m.entries.push(entry("missing.ras".into(), Split::Val));
        save_manifest(&m, &path).unwrap();
        match load_manifest(&path) {
            Err(RasterError::DanglingPath { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected dangling path, got {other:?}"),
        }
    }

    #[test]
    fn label_dims_must_match_patch_dims() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let patch = tiny_patch(dir.path(), "p.ras");
        // 2x1 label against a 1x1 patch
        let mask = crate::types::LabelMask::new(
            2,
            1,
            ClassScheme::dynamic_world(),
            vec![0, 1],
            10.0,
        )
        .unwrap();
        crate::ras1::write_mask(&mask, dir.path().join("l.ras")).unwrap();
        let mut m = DatasetManifest::new(ClassScheme::dynamic_world());
        let mut e = entry(patch, Split::Train);
        e.label_path = Some("l.ras".into());
        m.entries.push(e);
        save_manifest(&m, &path).unwrap();
        assert!(matches!(load_manifest(&path), Err(RasterError::LabelDimsMismatch { index: 0, .. })));
    }

    #[test]
    fn paper_scale_split_counts_load_intact() {
        // 1,701 train / 948 val / 1,140 test entries, every path backed by a real file.
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = DatasetManifest::new(ClassScheme::dynamic_world());
        let mut add = |n: usize, split: Split, prefix: &str| {
            for i in 0..n {
                let name = tiny_patch(dir.path(), &format!("{prefix}_{i}.ras"));
                m.entries.push(entry(name, split));
            }
        };
        add(1701, Split::Train, "tr");
        add(948, Split::Val, "va");
        add(1140, Split::Test, "te");
        save_manifest(&m, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back.split_counts(), (1701, 948, 1140));
    }
}
