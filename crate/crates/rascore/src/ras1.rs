//! The RAS1 portable raster container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic  "RAS1"                      4 bytes
//! width  u32, height u32, bands u32
//! dtype  u8   (0=u8, 1=u16, 2=f32)
//! flags  u8   (bit 0: metadata JSON block present)
//! reserved u16
//! nodata f32, gsd_m f32
//! name-table: u16 byte length, then band names joined by '\n' (UTF-8)
//! [flags bit 0] metadata: u16 byte length, then a JSON object (UTF-8)
//! payload: band-sequential row-major samples
//! ```
//!
//! The metadata block carries `region` and `acquired_at` for rasters and the
//! full class scheme for label masks, so a write/read round trip is
//! bit-exact for every field of the in-memory types.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{RasterError, Result};
use crate::types::{ClassScheme, Dtype, LabelMask, MultibandRaster, RasterData};

const MAGIC: &[u8; 4] = b"RAS1";
const FLAG_META: u8 = 0x01;

/// Parsed RAS1 header, available without reading the payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Ras1Header {
    pub width: u32,
    pub height: u32,
    pub bands: u32,
    pub dtype: Dtype,
    pub nodata_value: f32,
    pub gsd_m: f32,
    pub band_names: Vec<String>,
    pub meta: Ras1Meta,
}

/// Optional metadata block stored behind flags bit 0.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Ras1Meta {
    #[serde(default)]
    pub region: String,
    #[serde(default)]
    pub acquired_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<ClassScheme>,
}

impl Ras1Meta {
    fn is_default(&self) -> bool {
        self.region.is_empty() && self.acquired_at.is_empty() && self.scheme.is_none()
    }
}

fn encode_header(
    width: u32,
    height: u32,
    dtype: Dtype,
    nodata: f32,
    gsd_m: f32,
    band_names: &[String],
    meta: &Ras1Meta,
) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(width).unwrap();
    buf.write_u32::<LittleEndian>(height).unwrap();
    buf.write_u32::<LittleEndian>(band_names.len() as u32).unwrap();
    buf.write_u8(dtype.code()).unwrap();
    let flags = if meta.is_default() { 0 } else { FLAG_META };
    buf.write_u8(flags).unwrap();
    buf.write_u16::<LittleEndian>(0).unwrap(); // reserved
    buf.write_f32::<LittleEndian>(nodata).unwrap();
    buf.write_f32::<LittleEndian>(gsd_m).unwrap();

    for name in band_names {
        if name.contains('\n') {
            return Err(RasterError::Invariant(format!("band name {name:?} contains a newline")));
        }
    }
    let table = band_names.join("\n");
    let table_bytes = table.as_bytes();
    if table_bytes.len() > u16::MAX as usize {
        return Err(RasterError::Invariant("band name table exceeds 64 KiB".into()));
    }
    buf.write_u16::<LittleEndian>(table_bytes.len() as u16).unwrap();
    buf.extend_from_slice(table_bytes);

    if flags & FLAG_META != 0 {
        let json = serde_json::to_vec(meta)
            .map_err(|e| RasterError::Invariant(format!("metadata encode failed: {e}")))?;
        if json.len() > u16::MAX as usize {
            return Err(RasterError::Invariant("metadata block exceeds 64 KiB".into()));
        }
        buf.write_u16::<LittleEndian>(json.len() as u16).unwrap();
        buf.extend_from_slice(&json);
    }
    Ok(buf)
}

fn decode_header(cur: &mut Cursor<&[u8]>) -> Result<Ras1Header> {
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)
        .map_err(|_| RasterError::MalformedHeader("file shorter than magic".into()))?;
    if &magic != MAGIC {
        return Err(RasterError::MalformedHeader(format!("bad magic {magic:?}")));
    }
    let width = read_u32(cur)?;
    let height = read_u32(cur)?;
    let bands = read_u32(cur)?;
    let dtype = Dtype::from_code(read_u8(cur)?)?;
    let flags = read_u8(cur)?;
    let _reserved = read_u16(cur)?;
    let nodata_value = read_f32(cur)?;
    let gsd_m = read_f32(cur)?;

    let table_len = read_u16(cur)? as usize;
    let mut table = vec![0u8; table_len];
    cur.read_exact(&mut table)
        .map_err(|_| RasterError::MalformedHeader("band name table truncated".into()))?;
    let table = String::from_utf8(table)
        .map_err(|_| RasterError::MalformedHeader("band name table is not UTF-8".into()))?;
    let band_names: Vec<String> = if table.is_empty() {
        Vec::new()
    } else {
        table.split('\n').map(str::to_owned).collect()
    };
    if band_names.len() as u32 != bands {
        return Err(RasterError::MalformedHeader(format!(
            "band count {} does not match name table of {} names",
            bands,
            band_names.len()
        )));
    }
    if bands == 0 {
        return Err(RasterError::MalformedHeader("raster has zero bands".into()));
    }
    if width == 0 || height == 0 {
        return Err(RasterError::MalformedHeader("raster has zero extent".into()));
    }

    let meta = if flags & FLAG_META != 0 {
        let meta_len = read_u16(cur)? as usize;
        let mut json = vec![0u8; meta_len];
        cur.read_exact(&mut json)
            .map_err(|_| RasterError::MalformedHeader("metadata block truncated".into()))?;
        serde_json::from_slice(&json)
            .map_err(|e| RasterError::MalformedHeader(format!("metadata block invalid: {e}")))?
    } else {
        Ras1Meta::default()
    };

    Ok(Ras1Header { width, height, bands, dtype, nodata_value, gsd_m, band_names, meta })
}

fn read_u8(cur: &mut Cursor<&[u8]>) -> Result<u8> {
    cur.read_u8().map_err(|_| RasterError::MalformedHeader("header truncated".into()))
}
fn read_u16(cur: &mut Cursor<&[u8]>) -> Result<u16> {
    cur.read_u16::<LittleEndian>()
        .map_err(|_| RasterError::MalformedHeader("header truncated".into()))
}
fn read_u32(cur: &mut Cursor<&[u8]>) -> Result<u32> {
    cur.read_u32::<LittleEndian>()
        .map_err(|_| RasterError::MalformedHeader("header truncated".into()))
}
fn read_f32(cur: &mut Cursor<&[u8]>) -> Result<f32> {
    cur.read_f32::<LittleEndian>()
        .map_err(|_| RasterError::MalformedHeader("header truncated".into()))
}

/// Serialize a raster to RAS1 bytes.
pub fn raster_to_bytes(raster: &MultibandRaster) -> Result<Vec<u8>> {
    raster.validate()?;
    let meta = Ras1Meta {
        region: raster.region.clone(),
        acquired_at: raster.acquired_at.clone(),
        scheme: None,
    };
    let mut buf = encode_header(
        raster.width,
        raster.height,
        raster.data.dtype(),
        raster.nodata_value,
        raster.gsd_m,
        &raster.band_names,
        &meta,
    )?;
    match &raster.data {
        RasterData::U8(v) => buf.extend_from_slice(v),
        RasterData::U16(v) => {
            buf.reserve(v.len() * 2);
            for &s in v {
                buf.write_u16::<LittleEndian>(s).unwrap();
            }
        }
        RasterData::F32(v) => {
            buf.reserve(v.len() * 4);
            for &s in v {
                buf.write_f32::<LittleEndian>(s).unwrap();
            }
        }
    }
    Ok(buf)
}

/// Parse a raster from RAS1 bytes.
pub fn raster_from_bytes(bytes: &[u8]) -> Result<MultibandRaster> {
    let mut cur = Cursor::new(bytes);
    let header = decode_header(&mut cur)?;
    let start = cur.position() as usize;
    let payload = &bytes[start..];
    let n_samples = header.width as usize * header.height as usize * header.bands as usize;
    let expected = n_samples * header.dtype.byte_width();
    if payload.len() < expected {
        return Err(RasterError::TruncatedPayload { expected, got: payload.len() });
    }
    if payload.len() > expected {
        return Err(RasterError::TrailingBytes(payload.len() - expected));
    }
    let data = match header.dtype {
        Dtype::U8 => RasterData::U8(payload.to_vec()),
        Dtype::U16 => {
            let mut v = Vec::with_capacity(n_samples);
            let mut c = Cursor::new(payload);
            for _ in 0..n_samples {
                v.push(c.read_u16::<LittleEndian>().unwrap());
            }
            RasterData::U16(v)
        }
        Dtype::F32 => {
            let mut v = Vec::with_capacity(n_samples);
            let mut c = Cursor::new(payload);
            for _ in 0..n_samples {
                v.push(f32::from_bits(c.read_u32::<LittleEndian>().unwrap()));
            }
            RasterData::F32(v)
        }
    };
    MultibandRaster::new(
        header.width,
        header.height,
        header.band_names,
        data,
        header.nodata_value,
        header.meta.region,
        header.meta.acquired_at,
        header.gsd_m,
    )
}

/// Read a raster from disk: RAS1 natively, or (with the `geotiff` feature)
/// a common single-IFD GeoTIFF converted on the fly. Values are returned
/// exactly as stored, never rescaled.
pub fn read_raster(path: impl AsRef<Path>) -> Result<MultibandRaster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| RasterError::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        return raster_from_bytes(&bytes);
    }
    #[cfg(feature = "geotiff")]
    if crate::geotiff::is_tiff(&bytes) {
        return crate::geotiff::raster_from_tiff_bytes(&bytes);
    }
    raster_from_bytes(&bytes)
}

/// Write a raster to disk; `read_raster(write_raster(r))` is bit-exact.
pub fn write_raster(raster: &MultibandRaster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = raster_to_bytes(raster)?;
    let mut f = fs::File::create(path).map_err(|e| RasterError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| RasterError::io(path, e))?;
    Ok(())
}

/// Read only the header, without the payload.
pub fn read_header(path: impl AsRef<Path>) -> Result<Ras1Header> {
    let path = path.as_ref();
    // Headers are small; 64 KiB covers the max name table and metadata block.
    let mut f = fs::File::open(path).map_err(|e| RasterError::io(path, e))?;
    let mut buf = vec![0u8; 160 * 1024];
    let mut filled = 0;
    while filled < buf.len() {
        let n = f.read(&mut buf[filled..]).map_err(|e| RasterError::io(path, e))?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    buf.truncate(filled);
    let mut cur = Cursor::new(buf.as_slice());
    decode_header(&mut cur)
}

/// Write a label mask as a single-band u8 RAS1 with its scheme in the metadata block.
pub fn write_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    mask.validate()?;
    let meta = Ras1Meta {
        region: String::new(),
        acquired_at: String::new(),
        scheme: Some(mask.scheme.clone()),
    };
    let mut buf = encode_header(
        mask.width,
        mask.height,
        Dtype::U8,
        crate::types::UNLABELED_ID as f32,
        mask.gsd_m,
        &["labels".to_string()],
        &meta,
    )?;
    buf.extend_from_slice(&mask.values);
    let mut f = fs::File::create(path).map_err(|e| RasterError::io(path, e))?;
    f.write_all(&buf).map_err(|e| RasterError::io(path, e))?;
    Ok(())
}

/// Read a label mask written by [`write_mask`].
pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| RasterError::io(path, e))?;
    let mut cur = Cursor::new(bytes.as_slice());
    let header = decode_header(&mut cur)?;
    if header.dtype != Dtype::U8 || header.bands != 1 {
        return Err(RasterError::MalformedHeader(
            "label mask must be a single-band u8 raster".into(),
        ));
    }
    let scheme = header
        .meta
        .scheme
        .ok_or_else(|| RasterError::MalformedHeader("label mask missing class scheme".into()))?;
    let start = cur.position() as usize;
    let payload = &bytes[start..];
    let expected = header.width as usize * header.height as usize;
    if payload.len() < expected {
        return Err(RasterError::TruncatedPayload { expected, got: payload.len() });
    }
    if payload.len() > expected {
        return Err(RasterError::TrailingBytes(payload.len() - expected));
    }
    LabelMask::new(header.width, header.height, scheme, payload.to_vec(), header.gsd_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ClassScheme;
    use tempfile::tempdir;

    fn small_raster() -> MultibandRaster {
        // 4x4, two f32 bands
        let data: Vec<f32> = (0..32).map(|i| i as f32 * 0.5).collect();
        MultibandRaster::new(
            4,
            4,
            vec!["B2".into(), "B3".into()],
            RasterData::F32(data),
            0.0,
            "Biesbosch".into(),
            "2023-06-10".into(),
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn header_then_payload_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("r.ras");
        let r = small_raster();
        write_raster(&r, &path).unwrap();
        let back = read_raster(&path).unwrap();
        assert_eq!(r, back);

        let header = read_header(&path).unwrap();
        assert_eq!(header.width, 4);
        assert_eq!(header.bands, 2);
        assert_eq!(header.meta.region, "Biesbosch");
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let r = small_raster();
        let bytes = raster_to_bytes(&r).unwrap();
        let back = raster_from_bytes(&bytes).unwrap();
        let bytes2 = raster_to_bytes(&back).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let r = small_raster();
        let mut bytes = raster_to_bytes(&r).unwrap();
        bytes.truncate(bytes.len() - 4);
        match raster_from_bytes(&bytes) {
            Err(RasterError::TruncatedPayload { .. }) => {}
            other => panic!("expected TruncatedPayload, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_an_error() {
        let r = small_raster();
        let mut bytes = raster_to_bytes(&r).unwrap();
        bytes.push(0);
        assert!(matches!(raster_from_bytes(&bytes), Err(RasterError::TrailingBytes(1))));
    }

    #[test]
    fn bad_magic_is_an_error() {
        let r = small_raster();
        let mut bytes = raster_to_bytes(&r).unwrap();
        bytes[0] = b'X';
        assert!(matches!(raster_from_bytes(&bytes), Err(RasterError::MalformedHeader(_))));
    }

    #[test]
    fn unsupported_dtype_is_an_error() {
        let r = small_raster();
        let mut bytes = raster_to_bytes(&r).unwrap();
        bytes[16] = 9; // dtype code offset: magic(4) + w(4) + h(4) + bands(4)
        assert!(matches!(raster_from_bytes(&bytes), Err(RasterError::UnsupportedDtype(9))));
    }

    #[test]
    fn zero_band_raster_cannot_be_written() {
        let r = MultibandRaster {
            width: 2,
            height: 2,
            band_names: vec![],
            data: RasterData::U8(vec![]),
            nodata_value: 0.0,
            region: String::new(),
            acquired_at: String::new(),
            gsd_m: 10.0,
        };
        let dir = tempdir().unwrap();
        assert!(write_raster(&r, dir.path().join("z.ras")).is_err());
    }

    #[test]
    fn mask_roundtrip_preserves_scheme() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ras");
        let mask = LabelMask::new(
            3,
            2,
            ClassScheme::dynamic_world(),
            vec![0, 1, 8, 3, 255, 2],
            10.0,
        )
        .unwrap();
        write_mask(&mask, &path).unwrap();
        let back = read_mask(&path).unwrap();
        assert_eq!(mask, back);
    }

    #[test]
    fn u16_and_u8_roundtrip() {
        let dir = tempdir().unwrap();
        for data in [RasterData::U8(vec![1, 2, 3, 250]), RasterData::U16(vec![1, 700, 65535, 0])] {
            let r = MultibandRaster::new(
                2,
                2,
                vec!["B8".into()],
                data,
                0.0,
                String::new(),
                String::new(),
                0.3,
            )
            .unwrap();
            let path = dir.path().join("t.ras");
            write_raster(&r, &path).unwrap();
            assert_eq!(read_raster(&path).unwrap(), r);
        }
    }
}
