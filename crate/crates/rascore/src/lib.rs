//! Shared raster, label, and manifest handling for the wetland toolkit.
//!
//! Everything here is plain in-memory data plus a small portable binary
//! container (RAS1), so no geospatial stack is required to read or write
//! training patches. All types are immutable after construction and safe to
//! share across threads; I/O helpers are reentrant.

mod error;
#[cfg(feature = "geotiff")]
mod geotiff;
pub mod manifest;
pub mod probs;
pub mod ras1;
pub mod types;

pub use error::{RasterError, Result};
pub use manifest::{
    load_manifest, load_manifest_unchecked, manifest_base, save_manifest, DatasetManifest,
    ManifestEntry, PreprocessProvenance, Split,
};
pub use probs::labels_from_probabilities;
pub use ras1::{
    raster_from_bytes, raster_to_bytes, read_header, read_mask, read_raster, write_mask,
    write_raster, Ras1Header, Ras1Meta,
};
pub use types::{ClassDef, ClassScheme, Dtype, LabelMask, MultibandRaster, RasterData, UNLABELED_ID};
