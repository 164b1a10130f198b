//! Core domain types: multiband rasters, class schemes, and label masks.

use serde::{Deserialize, Serialize};

use crate::error::{RasterError, Result};

/// Reserved label id for pixels that received no annotation. Excluded from
/// losses and metrics downstream.
pub const UNLABELED_ID: u8 = 255;

/// Sample type of a raster payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    U8,
    U16,
    F32,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::U8 => 0,
            Dtype::U16 => 1,
            Dtype::F32 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::U8),
            1 => Ok(Dtype::U16),
            2 => Ok(Dtype::F32),
            other => Err(RasterError::UnsupportedDtype(other)),
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::F32 => 4,
        }
    }
}

/// Raster payload, band-sequential row-major: index = (band * height + y) * width + x.
#[derive(Debug, Clone, PartialEq)]
pub enum RasterData {
    U8(Vec<u8>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl RasterData {
    pub fn dtype(&self) -> Dtype {
        match self {
            RasterData::U8(_) => Dtype::U8,
            RasterData::U16(_) => Dtype::U16,
            RasterData::F32(_) => Dtype::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            RasterData::U8(v) => v.len(),
            RasterData::U16(v) => v.len(),
            RasterData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value at a flat index, widened to f32.
    pub fn get_f32(&self, idx: usize) -> f32 {
        match self {
            RasterData::U8(v) => v[idx] as f32,
            RasterData::U16(v) => v[idx] as f32,
            RasterData::F32(v) => v[idx],
        }
    }
}

/// An in-memory multiband image plus the metadata needed to trace it back to
/// its source scene. `data` is band-sequential row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MultibandRaster {
    pub width: u32,
    pub height: u32,
    pub band_names: Vec<String>,
    pub data: RasterData,
    pub nodata_value: f32,
    pub region: String,
    /// ISO-8601 date of acquisition, empty when unknown.
    pub acquired_at: String,
    /// Ground sample distance in meters per pixel.
    pub gsd_m: f32,
}

impl MultibandRaster {
    pub fn new(
        width: u32,
        height: u32,
        band_names: Vec<String>,
        data: RasterData,
        nodata_value: f32,
        region: String,
        acquired_at: String,
        gsd_m: f32,
    ) -> Result<Self> {
        let raster = MultibandRaster {
            width,
            height,
            band_names,
            data,
            nodata_value,
            region,
            acquired_at,
            gsd_m,
        };
        raster.validate()?;
        Ok(raster)
    }

    pub fn bands(&self) -> u32 {
        self.band_names.len() as u32
    }

    pub fn validate(&self) -> Result<()> {
        if self.band_names.is_empty() {
            return Err(RasterError::Invariant("raster must have at least one band".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(RasterError::Invariant("raster dims must be nonzero".into()));
        }
        if !(self.gsd_m > 0.0) {
            return Err(RasterError::Invariant(format!("gsd_m must be > 0, got {}", self.gsd_m)));
        }
        let expected = self.width as usize * self.height as usize * self.band_names.len();
        if self.data.len() != expected {
            return Err(RasterError::Invariant(format!(
                "data length {} != width*height*bands = {}",
                self.data.len(),
                expected
            )));
        }
        Ok(())
    }

    /// Flat index of (band, y, x).
    #[inline]
    pub fn index(&self, band: u32, y: u32, x: u32) -> usize {
        ((band as usize * self.height as usize) + y as usize) * self.width as usize + x as usize
    }

    /// Value at (band, y, x), widened to f32.
    #[inline]
    pub fn value(&self, band: u32, y: u32, x: u32) -> f32 {
        self.data.get_f32(self.index(band, y, x))
    }

    /// A pixel is nodata ("black") when every band equals the nodata value.
    pub fn is_nodata_pixel(&self, y: u32, x: u32) -> bool {
        (0..self.bands()).all(|b| self.value(b, y, x) == self.nodata_value)
    }

    /// Count of nodata pixels over the full extent.
    pub fn nodata_pixel_count(&self) -> usize {
        let mut n = 0;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_nodata_pixel(y, x) {
                    n += 1;
                }
            }
        }
        n
    }
}

/// One class of a [`ClassScheme`]: id, human label, and palette color.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub id: u8,
    pub label: String,
    pub color: [u8; 3],
}

/// Ordered land-cover classification scheme. Ids are contiguous from 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassScheme {
    pub name: String,
    pub classes: Vec<ClassDef>,
}

impl ClassScheme {
    pub fn new(name: impl Into<String>, classes: Vec<ClassDef>) -> Result<Self> {
        let scheme = ClassScheme { name: name.into(), classes };
        scheme.validate()?;
        Ok(scheme)
    }

    /// The 9-class near-real-time global land cover scheme with its standard palette.
    pub fn dynamic_world() -> Self {
        let defs = [
            ("water", [0x41, 0x9b, 0xdf]),
            ("trees", [0x39, 0x7d, 0x49]),
            ("grass", [0x88, 0xb0, 0x53]),
            ("flooded_vegetation", [0x7a, 0x87, 0xc6]),
            ("crops", [0xe4, 0x96, 0x35]),
            ("shrub_and_scrub", [0xdf, 0xc3, 0x5a]),
            ("built", [0xc4, 0x28, 0x1b]),
            ("bare", [0xa5, 0x9b, 0x8f]),
            ("snow_and_ice", [0xb3, 0x9f, 0xe1]),
        ];
        ClassScheme {
            name: "dynamic-world".into(),
            classes: defs
                .iter()
                .enumerate()
                .map(|(id, (label, color))| ClassDef {
                    id: id as u8,
                    label: (*label).into(),
                    color: *color,
                })
                .collect(),
        }
    }

    /// Scheme used for manual annotation of the high-resolution scenes.
    pub fn biesbosch_manual() -> Self {
        let defs = [
            ("water", [0x41, 0x9b, 0xdf]),
            ("grass", [0x88, 0xb0, 0x53]),
            ("reed", [0xdf, 0xc3, 0x5a]),
            ("forest", [0x39, 0x7d, 0x49]),
            ("built", [0xc4, 0x28, 0x1b]),
        ];
        ClassScheme {
            name: "biesbosch-manual".into(),
            classes: defs
                .iter()
                .enumerate()
                .map(|(id, (label, color))| ClassDef {
                    id: id as u8,
                    label: (*label).into(),
                    color: *color,
                })
                .collect(),
        }
    }

    /// Look up a built-in scheme by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "dynamic-world" => Some(Self::dynamic_world()),
            "biesbosch-manual" => Some(Self::biesbosch_manual()),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn color_of(&self, id: u8) -> Option<[u8; 3]> {
        self.classes.get(id as usize).map(|c| c.color)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(RasterError::Schema("class scheme has no classes".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.id as usize != i {
                return Err(RasterError::Schema(format!(
                    "class ids must be contiguous from 0: position {} has id {}",
                    i, c.id
                )));
            }
        }
        for (i, a) in self.classes.iter().enumerate() {
            if self.classes[i + 1..].iter().any(|b| b.label == a.label) {
                return Err(RasterError::Schema(format!("duplicate class label '{}'", a.label)));
            }
        }
        Ok(())
    }
}

/// Per-pixel class ids over a fixed grid, paired with the scheme that defines them.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    pub width: u32,
    pub height: u32,
    pub scheme: ClassScheme,
    pub values: Vec<u8>,
    pub gsd_m: f32,
}

impl LabelMask {
    pub fn new(width: u32, height: u32, scheme: ClassScheme, values: Vec<u8>, gsd_m: f32) -> Result<Self> {
        let mask = LabelMask { width, height, scheme, values, gsd_m };
        mask.validate()?;
        Ok(mask)
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if self.values.len() != self.width as usize * self.height as usize {
            return Err(RasterError::Invariant(format!(
                "mask length {} != width*height = {}",
                self.values.len(),
                self.width as usize * self.height as usize
            )));
        }
        let n = self.scheme.len() as u8;
        if let Some(bad) = self.values.iter().find(|&&v| v >= n && v != UNLABELED_ID) {
            return Err(RasterError::Invariant(format!(
                "mask value {} outside scheme of {} classes",
                bad, n
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn value(&self, y: u32, x: u32) -> u8 {
        self.values[y as usize * self.width as usize + x as usize]
    }
}
