//! Single-file, uncompressed, little-endian NIfTI-1 reading and writing.
//!
//! Only 3D volumes stored as uint8 (code 2), int16 (code 4) or float32
//! (code 16) are accepted. Anything else is rejected with an error that names
//! the offending header field and its byte offset.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use super::{Intent, Orientation, Volume};
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
pub const DEFAULT_VOX_OFFSET: usize = 352;
pub const MAGIC: &[u8; 4] = b"n+1\0";

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;

const INTENT_LABEL: i16 = 1002;
const UNITS_MM: u8 = 2;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const REGULAR: usize = 38;
    pub const DIM: usize = 40;
    pub const INTENT_CODE: usize = 68;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const INTENT_NAME: usize = 328;
    pub const MAGIC: usize = 344;
}

fn format_err(offset: usize, field: &'static str, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        field,
        message: message.into(),
    }
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_nifti(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(v)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parse a complete `.nii` file image.
pub fn decode(bytes: &[u8]) -> Result<Volume> {
    use offsets::*;

    if bytes.len() < HEADER_SIZE {
        return Err(Error::Truncated {
            expected: HEADER_SIZE,
            found: bytes.len(),
        });
    }
    let hdr = &bytes[..HEADER_SIZE];
    let le = LittleEndian::read_i32(&hdr[SIZEOF_HDR..]);
    if le != HEADER_SIZE as i32 {
        let msg = if i32::from_be_bytes(hdr[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
            "big-endian files are not supported".to_string()
        } else {
            format!("expected 348, found {le}")
        };
        return Err(format_err(SIZEOF_HDR, "sizeof_hdr", msg));
    }
    if &hdr[MAGIC..MAGIC + 4] != super::nifti::MAGIC {
        return Err(format_err(
            MAGIC,
            "magic",
            format!(
                "expected single-file magic \"n+1\\0\", found {:?}",
                &hdr[MAGIC..MAGIC + 4]
            ),
        ));
    }

    let mut dim = [0i16; 8];
    LittleEndian::read_i16_into(&hdr[DIM..DIM + 16], &mut dim);
    if !(3..=7).contains(&dim[0]) {
        return Err(format_err(DIM, "dim[0]", format!("expected 3 dimensions, found {}", dim[0])));
    }
    for d in 4..=dim[0] as usize {
        if dim[d] > 1 {
            return Err(format_err(
                DIM + 2 * d,
                "dim",
                format!("only 3D volumes are supported, dim[{d}] = {}", dim[d]),
            ));
        }
    }
    let mut dims = [0usize; 3];
    for a in 0..3 {
        if dim[a + 1] <= 0 {
            return Err(format_err(
                DIM + 2 * (a + 1),
                "dim",
                format!("dim[{}] must be positive, found {}", a + 1, dim[a + 1]),
            ));
        }
        dims[a] = dim[a + 1] as usize;
    }

    let datatype = LittleEndian::read_i16(&hdr[DATATYPE..]);
    let bytes_per_voxel = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    let bitpix = LittleEndian::read_i16(&hdr[BITPIX..]);
    if bitpix as usize != 8 * bytes_per_voxel {
        return Err(format_err(
            BITPIX,
            "bitpix",
            format!("datatype {datatype} requires bitpix {}, found {bitpix}", 8 * bytes_per_voxel),
        ));
    }

    let mut spacing = [0f64; 3];
    for a in 0..3 {
        let off = PIXDIM + 4 * (a + 1);
        let s = LittleEndian::read_f32(&hdr[off..]);
        if !(s.is_finite() && s > 0.0) {
            return Err(format_err(off, "pixdim", format!("pixdim[{}] must be positive, found {s}", a + 1)));
        }
        spacing[a] = s as f64;
    }

    let vox_offset = LittleEndian::read_f32(&hdr[VOX_OFFSET..]);
    if !(vox_offset.is_finite() && vox_offset >= DEFAULT_VOX_OFFSET as f32 && vox_offset.fract() == 0.0) {
        return Err(format_err(
            VOX_OFFSET,
            "vox_offset",
            format!("expected an integral offset >= 352, found {vox_offset}"),
        ));
    }
    let vox_offset = vox_offset as usize;

    let n = dims[0] * dims[1] * dims[2];
    let needed = vox_offset + n * bytes_per_voxel;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            expected: needed,
            found: bytes.len(),
        });
    }
    let raw = &bytes[vox_offset..needed];
    let mut data: Vec<f64> = match datatype {
        DT_UINT8 => raw.iter().map(|&b| b as f64).collect(),
        DT_INT16 => raw.chunks_exact(2).map(|c| LittleEndian::read_i16(c) as f64).collect(),
        _ => raw.chunks_exact(4).map(|c| LittleEndian::read_f32(c) as f64).collect(),
    };

    let slope = LittleEndian::read_f32(&hdr[SCL_SLOPE..]);
    let inter = LittleEndian::read_f32(&hdr[SCL_INTER..]);
    if slope != 0.0 && slope.is_finite() {
        let (slope, inter) = (slope as f64, if inter.is_finite() { inter as f64 } else { 0.0 });
        if slope != 1.0 || inter != 0.0 {
            for x in &mut data {
                *x = *x * slope + inter;
            }
        }
    }

    let name_end = hdr[INTENT_NAME..INTENT_NAME + 16]
        .iter()
        .position(|&b| b == 0)
        .unwrap_or(16);
    let intent_name = std::str::from_utf8(&hdr[INTENT_NAME..INTENT_NAME + name_end]).unwrap_or("");
    let intent = Intent::from_tag(intent_name).unwrap_or_else(|| {
        if LittleEndian::read_i16(&hdr[INTENT_CODE..]) == INTENT_LABEL {
            Intent::Label
        } else {
            Intent::Intensity
        }
    });

    let mut orientation = Orientation {
        qform_code: LittleEndian::read_i16(&hdr[QFORM_CODE..]),
        sform_code: LittleEndian::read_i16(&hdr[SFORM_CODE..]),
        ..Default::default()
    };
    LittleEndian::read_f32_into(&hdr[QUATERN_B..QUATERN_B + 12], &mut orientation.quatern);
    LittleEndian::read_f32_into(&hdr[QOFFSET_X..QOFFSET_X + 12], &mut orientation.qoffset);
    for (r, row) in orientation.srow.iter_mut().enumerate() {
        let off = SROW_X + 16 * r;
        LittleEndian::read_f32_into(&hdr[off..off + 16], row);
    }

    Ok(Volume::new(dims, spacing, data, intent)?.with_orientation(orientation))
}

/// Storage type chosen by [`encode`] for a volume.
pub fn storage_datatype(v: &Volume) -> i16 {
    if v.intent().is_label() {
        let max = v.data().iter().copied().fold(0.0, f64::max);
        if max <= u8::MAX as f64 {
            return DT_UINT8;
        }
        if max <= i16::MAX as f64 {
            return DT_INT16;
        }
    }
    DT_FLOAT32
}

/// Serialize a volume to a complete `.nii` file image.
///
/// Continuous volumes are stored as float32; label volumes use the smallest
/// integer type that holds their largest value.
pub fn encode(v: &Volume) -> Result<Vec<u8>> {
    use offsets::*;

    if let Some(idx) = v.data().iter().position(|x| !x.is_finite()) {
        return Err(Error::Validation(format!(
            "voxel {idx} is not finite ({}); refusing to write NIfTI",
            v.data()[idx]
        )));
    }
    let dims = v.dims();
    if dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Validation(format!("dims {dims:?} exceed the NIfTI-1 limit of 32767")));
    }

    let datatype = storage_datatype(v);
    let bytes_per_voxel = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        _ => 4,
    };
    let mut out = vec![0u8; DEFAULT_VOX_OFFSET + v.len() * bytes_per_voxel];
    let hdr = &mut out[..HEADER_SIZE];
    LittleEndian::write_i32(&mut hdr[SIZEOF_HDR..], HEADER_SIZE as i32);
    hdr[REGULAR] = b'r';
    let mut dim = [1i16; 8];
    dim[0] = 3;
    for a in 0..3 {
        dim[a + 1] = dims[a] as i16;
    }
    LittleEndian::write_i16_into(&dim, &mut hdr[DIM..DIM + 16]);
    if v.intent().is_label() {
        LittleEndian::write_i16(&mut hdr[INTENT_CODE..], INTENT_LABEL);
    }
    LittleEndian::write_i16(&mut hdr[DATATYPE..], datatype);
    LittleEndian::write_i16(&mut hdr[BITPIX..], 8 * bytes_per_voxel as i16);
    let spacing = v.spacing();
    let pixdim = [1.0f32, spacing[0] as f32, spacing[1] as f32, spacing[2] as f32, 0.0, 0.0, 0.0, 0.0];
    LittleEndian::write_f32_into(&pixdim, &mut hdr[PIXDIM..PIXDIM + 32]);
    LittleEndian::write_f32(&mut hdr[VOX_OFFSET..], DEFAULT_VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut hdr[SCL_SLOPE..], 1.0);
    LittleEndian::write_f32(&mut hdr[SCL_INTER..], 0.0);
    hdr[XYZT_UNITS] = UNITS_MM;

    let o = v.orientation();
    LittleEndian::write_i16(&mut hdr[QFORM_CODE..], o.qform_code);
    LittleEndian::write_i16(&mut hdr[SFORM_CODE..], o.sform_code);
    LittleEndian::write_f32_into(&o.quatern, &mut hdr[QUATERN_B..QUATERN_B + 12]);
    LittleEndian::write_f32_into(&o.qoffset, &mut hdr[QOFFSET_X..QOFFSET_X + 12]);
    for (r, row) in o.srow.iter().enumerate() {
        let off = SROW_X + 16 * r;
        LittleEndian::write_f32_into(row, &mut hdr[off..off + 16]);
    }
    let tag = v.intent().tag().as_bytes();
    hdr[INTENT_NAME..INTENT_NAME + tag.len()].copy_from_slice(tag);
    hdr[MAGIC..MAGIC + 4].copy_from_slice(super::nifti::MAGIC);

    let body = &mut out[DEFAULT_VOX_OFFSET..];
    match datatype {
        DT_UINT8 => {
            for (b, &x) in body.iter_mut().zip(v.data()) {
                *b = x as u8;
            }
        }
        DT_INT16 => {
            for (c, &x) in body.chunks_exact_mut(2).zip(v.data()) {
                LittleEndian::write_i16(c, x as i16);
            }
        }
        _ => {
            for (c, &x) in body.chunks_exact_mut(4).zip(v.data()) {
                LittleEndian::write_f32(c, x as f32);
            }
        }
    }
    Ok(out)
}
