//! Optional GeoTIFF ingest: converts common single-IFD TIFF rasters
//! (grayscale / RGB / RGBA, u8/u16/f32, interleaved samples) into
//! [`MultibandRaster`]. Reads the GDAL nodata tag (42113) and the
//! ModelPixelScale tag (33550) when present; everything else in this crate
//! stays format-agnostic through RAS1.
//!
//! Multiband stacks beyond four samples are out of scope here; convert those
//! to RAS1 externally.

use std::io::Cursor;

use tiff::decoder::{Decoder, DecodingResult};
use tiff::tags::Tag;
use tiff::ColorType;

use crate::error::{RasterError, Result};
use crate::types::{MultibandRaster, RasterData};

const TAG_GDAL_NODATA: u16 = 42113;
const TAG_MODEL_PIXEL_SCALE: u16 = 33550;

pub(crate) fn is_tiff(bytes: &[u8]) -> bool {
    bytes.starts_with(b"II*\0") || bytes.starts_with(b"MM\0*")
}

fn band_names_for(samples: usize, color: &ColorType) -> Vec<String> {
    match (samples, color) {
        (3, ColorType::RGB(_)) => vec!["red".into(), "green".into(), "blue".into()],
        (4, ColorType::RGBA(_)) => {
            vec!["red".into(), "green".into(), "blue".into(), "nir".into()]
        }
        _ => (1..=samples).map(|i| format!("band{i}")).collect(),
    }
}

/// Interleaved (pixel-major) to band-sequential (band-major).
fn deinterleave<T: Copy + Default>(data: &[T], samples: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::default(); samples * plane];
    for pix in 0..plane {
        for s in 0..samples {
            out[s * plane + pix] = data[pix * samples + s];
        }
    }
    out
}

pub(crate) fn raster_from_tiff_bytes(bytes: &[u8]) -> Result<MultibandRaster> {
    let mut dec = Decoder::new(Cursor::new(bytes))
        .map_err(|e| RasterError::MalformedHeader(format!("tiff: {e}")))?;
    let (width, height) = dec
        .dimensions()
        .map_err(|e| RasterError::MalformedHeader(format!("tiff dimensions: {e}")))?;
    let color = dec
        .colortype()
        .map_err(|e| RasterError::MalformedHeader(format!("tiff colortype: {e}")))?;
    let samples = match color {
        ColorType::Gray(_) => 1usize,
        ColorType::GrayA(_) => 2,
        ColorType::RGB(_) => 3,
        ColorType::RGBA(_) => 4,
        other => {
            return Err(RasterError::MalformedHeader(format!(
                "unsupported tiff color type {other:?}; convert to RAS1 instead"
            )))
        }
    };
    let nodata_value = dec
        .get_tag_ascii_string(Tag::Unknown(TAG_GDAL_NODATA))
        .ok()
        .and_then(|s| s.trim().trim_end_matches('\0').parse::<f32>().ok())
        .unwrap_or(0.0);
    let gsd_m = dec
        .get_tag_f64_vec(Tag::Unknown(TAG_MODEL_PIXEL_SCALE))
        .ok()
        .and_then(|v| v.first().copied())
        .map(|v| v as f32)
        .filter(|v| *v > 0.0)
        .unwrap_or(1.0);

    let plane = width as usize * height as usize;
    let image = dec
        .read_image()
        .map_err(|e| RasterError::MalformedHeader(format!("tiff payload: {e}")))?;
    let data = match image {
        DecodingResult::U8(v) => {
            check_len(v.len(), samples, plane)?;
            RasterData::U8(deinterleave(&v, samples, plane))
        }
        DecodingResult::U16(v) => {
            check_len(v.len(), samples, plane)?;
            RasterData::U16(deinterleave(&v, samples, plane))
        }
        DecodingResult::F32(v) => {
            check_len(v.len(), samples, plane)?;
            RasterData::F32(deinterleave(&v, samples, plane))
        }
        other => {
            return Err(RasterError::MalformedHeader(format!(
                "unsupported tiff sample format {other:?} (expected u8, u16, or f32)"
            )))
        }
    };
    MultibandRaster::new(
        width,
        height,
        band_names_for(samples, &color),
        data,
        nodata_value,
        String::new(),
        String::new(),
        gsd_m,
    )
}

fn check_len(got: usize, samples: usize, plane: usize) -> Result<()> {
    let expected = samples * plane;
    if got != expected {
        return Err(RasterError::TruncatedPayload { expected, got });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tiff::encoder::{colortype, TiffEncoder};

    fn encode_gray16(w: u32, h: u32, data: &[u16]) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        let mut enc = TiffEncoder::new(&mut buf).unwrap();
        enc.write_image::<colortype::Gray16>(w, h, data).unwrap();
        buf.into_inner()
    }

    #[test]
    fn gray16_tiff_converts_to_single_band_raster() {
        let data: Vec<u16> = (0..12).map(|i| i * 100).collect();
        let bytes = encode_gray16(4, 3, &data);
        assert!(is_tiff(&bytes));
        let raster = raster_from_tiff_bytes(&bytes).unwrap();
        assert_eq!((raster.width, raster.height, raster.bands()), (4, 3, 1));
        assert_eq!(raster.data, RasterData::U16(data));
    }

    #[test]
    fn rgb_tiff_deinterleaves_into_bands() {
        let mut buf = Cursor::new(Vec::new());
        let mut enc = TiffEncoder::new(&mut buf).unwrap();
        // 2x1 RGB: pixel0 = (1,2,3), pixel1 = (4,5,6)
        enc.write_image::<colortype::RGB8>(2, 1, &[1u8, 2, 3, 4, 5, 6]).unwrap();
        let raster = raster_from_tiff_bytes(&buf.into_inner()).unwrap();
        assert_eq!(raster.band_names, vec!["red", "green", "blue"]);
        assert_eq!(raster.data, RasterData::U8(vec![1, 4, 2, 5, 3, 6]));
    }
}
