//! Self-describing raster files.
//!
//! Layout, all little-endian:
//!
//! | field        | type          |
//! |--------------|---------------|
//! | magic        | `b"DOFA"`     |
//! | version      | u16 (= 1)     |
//! | dtype        | u8 (0 = f32)  |
//! | C, H, W      | u32 each      |
//! | label        | i32, -1 = none|
//! | wavelengths  | C x f32 (µm)  |
//! | payload      | C*H*W x f32   |
//!
//! Wavelengths are stored as `f32`; decoding maps each back to the shortest
//! decimal that rounds to the same `f32`, so values with up to six
//! significant digits survive a round trip unchanged.

use std::path::Path;

use super::SpectralImage;
use crate::error::{Error, Result};
use crate::hypernet::WavelengthList;
use crate::tensor::Tensor;

pub const RASTER_MAGIC: [u8; 4] = *b"DOFA";
pub const RASTER_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;
const HEADER_LEN: usize = 4 + 2 + 1 + 12 + 4;

pub fn encode_raster(img: &SpectralImage) -> Vec<u8> {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * (c + c * h * w));
    out.extend_from_slice(&RASTER_MAGIC);
    out.extend_from_slice(&RASTER_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    for d in [c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let label = img.label.map_or(-1, |l| l as i32);
    out.extend_from_slice(&label.to_le_bytes());
    for &l in img.wavelengths.as_slice() {
        out.extend_from_slice(&(l as f32).to_le_bytes());
    }
    for &v in img.data.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn f32_to_decimal(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

/// Parses raster bytes; `modality` is recorded on the returned image.
pub fn decode_raster(bytes: &[u8], modality: &str) -> Result<SpectralImage> {
    if bytes.len() < 4 {
        return Err(Error::Truncated { needed: 4, available: bytes.len() });
    }
    if bytes[..4] != RASTER_MAGIC {
        return Err(Error::BadMagic { expected: RASTER_MAGIC, found: bytes[..4].to_vec() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { needed: HEADER_LEN, available: bytes.len() });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != RASTER_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if bytes[6] != DTYPE_F32 {
        return Err(Error::UnknownDtype(bytes[6]));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (c, h, w) = (u32_at(7), u32_at(11), u32_at(15));
    let label = i32::from_le_bytes(bytes[19..23].try_into().expect("4 bytes"));
    let count = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_add(c))
        .ok_or_else(|| Error::Malformed(format!("dimensions {c}x{h}x{w} overflow")))?;
    let needed = HEADER_LEN + 4 * count;
    if bytes.len() < needed {
        return Err(Error::Truncated { needed, available: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - needed)));
    }
    let floats: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let wavelengths = WavelengthList::new(floats[..c].iter().map(|&v| f32_to_decimal(v)).collect())?;
    let data = Tensor::new(vec![c, h, w], floats[c..].to_vec())?;
    let label = match label {
        -1 => None,
        l if l >= 0 => Some(l as u32),
        l => return Err(Error::Malformed(format!("label {l}"))),
    };
    SpectralImage::new(data, wavelengths, modality, label)
}

pub fn write_raster(path: impl AsRef<Path>, img: &SpectralImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_raster(img)).map_err(|e| Error::io(path, e))
}

pub fn read_raster(path: impl AsRef<Path>, modality: &str) -> Result<SpectralImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raster(&bytes, modality)
}
