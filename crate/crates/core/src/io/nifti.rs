//! Single-file NIfTI-1 (`.nii`, optionally gzip-compressed) for rank-3 volumes.
//!
//! Only the fields needed to recover shape, spacing, datatype and intensity
//! scaling are interpreted. Files are written little-endian with a 348-byte
//! header, an empty 4-byte extension block and data at offset 352. Both byte
//! orders are accepted on read; the order is detected from `dim[0]`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::volume::{Dims3, IntensityVolume, Mask3D, Spacing, VolumeError};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("not NIfTI-1: {0}")]
    NotNifti(String),
    #[error("unsupported rank {0}")]
    UnsupportedRank(i16),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("non-binary mask: value {value} at voxel {index}")]
    NonBinaryMask { index: usize, value: f32 },
    #[error("truncated data: need {needed} bytes after offset {offset}, file has {available}")]
    Truncated {
        needed: usize,
        offset: usize,
        available: usize,
    },
    #[error("value {value} at voxel {index} is not representable as {datatype:?}")]
    Unrepresentable {
        index: usize,
        value: f32,
        datatype: Datatype,
    },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NiftiError + '_ {
    move |source| NiftiError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Datatype {
    U8,
    I16,
    U16,
    F32,
}

impl Datatype {
    pub const ALL: [Datatype; 4] = [Datatype::U8, Datatype::I16, Datatype::U16, Datatype::F32];

    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::F32 => 16,
            Datatype::U16 => 512,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(Datatype::U8),
            4 => Some(Datatype::I16),
            16 => Some(Datatype::F32),
            512 => Some(Datatype::U16),
            _ => None,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 | Datatype::U16 => 2,
            Datatype::F32 => 4,
        }
    }

    fn represents(self, v: f32) -> bool {
        let int_in = |lo: f32, hi: f32| v.fract() == 0.0 && v >= lo && v <= hi;
        match self {
            Datatype::U8 => int_in(0.0, 255.0),
            Datatype::I16 => int_in(i16::MIN as f32, i16::MAX as f32),
            Datatype::U16 => int_in(0.0, u16::MAX as f32),
            Datatype::F32 => v.is_finite(),
        }
    }
}

/// Header fields this crate reads.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiMeta {
    pub dims: Dims3,
    pub datatype: Datatype,
    pub spacing: Spacing,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub little_endian: bool,
    pub vox_offset: usize,
}

struct Fields<'a> {
    buf: &'a [u8],
    le: bool,
}

impl Fields<'_> {
    fn i16(&self, off: usize) -> i16 {
        let b = [self.buf[off], self.buf[off + 1]];
        if self.le {
            i16::from_le_bytes(b)
        } else {
            i16::from_be_bytes(b)
        }
    }

    fn i32(&self, off: usize) -> i32 {
        let b: [u8; 4] = self.buf[off..off + 4].try_into().unwrap();
        if self.le {
            i32::from_le_bytes(b)
        } else {
            i32::from_be_bytes(b)
        }
    }

    fn f32(&self, off: usize) -> f32 {
        let b: [u8; 4] = self.buf[off..off + 4].try_into().unwrap();
        if self.le {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    }
}

/// Widens a header float using its shortest decimal form so values such as
/// `0.7` survive the f32 header field unchanged.
fn widen(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

fn parse_header(buf: &[u8]) -> Result<NiftiMeta, NiftiError> {
    if buf.len() < HEADER_SIZE {
        return Err(NiftiError::NotNifti(format!(
            "{} bytes is shorter than the header",
            buf.len()
        )));
    }
    if &buf[344..348] != MAGIC {
        return Err(NiftiError::NotNifti("magic mismatch".into()));
    }
    let le_rank = i16::from_le_bytes([buf[40], buf[41]]);
    let le = (1..=7).contains(&le_rank);
    let f = Fields { buf, le };
    if f.i32(0) != HEADER_SIZE as i32 {
        return Err(NiftiError::NotNifti(format!("sizeof_hdr is {}", f.i32(0))));
    }
    let rank = f.i16(40);
    if rank != 3 {
        return Err(NiftiError::UnsupportedRank(rank));
    }
    let dim = |i: usize| f.i16(40 + 2 * i);
    let (w, h, d) = (dim(1), dim(2), dim(3));
    if w <= 0 || h <= 0 || d <= 0 {
        return Err(NiftiError::NotNifti(format!("non-positive dims {w}×{h}×{d}")));
    }
    let code = f.i16(70);
    let datatype = Datatype::from_code(code).ok_or(NiftiError::UnsupportedDatatype(code))?;
    let pixdim = |i: usize| widen(f.f32(76 + 4 * i).abs());
    let spacing = Spacing::new(pixdim(3), pixdim(2), pixdim(1))?;
    let vox_offset = f.f32(108);
    let vox_offset = if vox_offset < VOX_OFFSET as f32 {
        VOX_OFFSET
    } else {
        vox_offset as usize
    };
    Ok(NiftiMeta {
        dims: Dims3::new(d as usize, h as usize, w as usize)?,
        datatype,
        spacing,
        scl_slope: f.f32(112),
        scl_inter: f.f32(116),
        little_endian: le,
        vox_offset,
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, NiftiError> {
    let raw = fs::read(path).map_err(io_err(path))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io_err(path))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Decodes header and voxels (after slope/intercept scaling) from raw bytes.
pub fn decode(buf: &[u8]) -> Result<(NiftiMeta, Vec<f32>), NiftiError> {
    let meta = parse_header(buf)?;
    let n = meta.dims.len();
    let needed = n * meta.datatype.bytes();
    let available = buf.len().saturating_sub(meta.vox_offset);
    if available < needed {
        return Err(NiftiError::Truncated {
            needed,
            offset: meta.vox_offset,
            available,
        });
    }
    let data = &buf[meta.vox_offset..meta.vox_offset + needed];
    let le = meta.little_endian;
    let two = |c: &[u8]| if le { [c[0], c[1]] } else { [c[1], c[0]] };
    let mut values: Vec<f32> = match meta.datatype {
        Datatype::U8 => data.iter().map(|&b| b as f32).collect(),
        Datatype::I16 => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes(two(c)) as f32)
            .collect(),
        Datatype::U16 => data
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(two(c)) as f32)
            .collect(),
        Datatype::F32 => data
            .chunks_exact(4)
            .map(|c| {
                let b: [u8; 4] = c.try_into().unwrap();
                if le {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                }
            })
            .collect(),
    };
    if meta.scl_slope != 0.0 && meta.scl_slope.is_finite() && meta.scl_inter.is_finite() {
        let (m, b) = (meta.scl_slope, meta.scl_inter);
        if m != 1.0 || b != 0.0 {
            values.iter_mut().for_each(|v| *v = *v * m + b);
        }
    }
    Ok((meta, values))
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<(NiftiMeta, Vec<f32>), NiftiError> {
    decode(&read_bytes(path.as_ref())?)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<IntensityVolume, NiftiError> {
    let (meta, values) = read_nifti(path)?;
    Ok(IntensityVolume::new(meta.dims, meta.spacing, values)?)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask3D, NiftiError> {
    let (meta, values) = read_nifti(path)?;
    mask_from_values(&meta, &values)
}

pub fn mask_from_values(meta: &NiftiMeta, values: &[f32]) -> Result<Mask3D, NiftiError> {
    let mut bits = Vec::with_capacity(values.len());
    for (index, &value) in values.iter().enumerate() {
        match value {
            v if v == 0.0 => bits.push(false),
            v if v == 1.0 => bits.push(true),
            _ => return Err(NiftiError::NonBinaryMask { index, value }),
        }
    }
    Ok(Mask3D::new(meta.dims, meta.spacing, bits)?)
}

/// Encodes a complete little-endian NIfTI-1 image.
pub fn encode(
    dims: Dims3,
    spacing: Spacing,
    values: &[f32],
    datatype: Datatype,
) -> Result<Vec<u8>, NiftiError> {
    if let Some((index, &value)) = values
        .iter()
        .enumerate()
        .find(|(_, &v)| !datatype.represents(v))
    {
        return Err(NiftiError::Unrepresentable {
            index,
            value,
            datatype,
        });
    }
    let mut buf = vec![0u8; VOX_OFFSET];
    let put_i16 = |buf: &mut [u8], off: usize, v: i16| buf[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |buf: &mut [u8], off: usize, v: f32| buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
    buf[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    buf[38] = b'r';
    let dim = [3, dims.w, dims.h, dims.d, 1, 1, 1, 1];
    for (i, &v) in dim.iter().enumerate() {
        let v = i16::try_from(v).map_err(|_| {
            NiftiError::NotNifti(format!("axis length {v} exceeds the NIfTI-1 limit"))
        })?;
        put_i16(&mut buf, 40 + 2 * i, v);
    }
    put_i16(&mut buf, 70, datatype.code());
    put_i16(&mut buf, 72, (datatype.bytes() * 8) as i16);
    let pixdim = [1.0, spacing.x, spacing.y, spacing.z, 0.0, 0.0, 0.0, 0.0];
    for (i, &v) in pixdim.iter().enumerate() {
        put_f32(&mut buf, 76 + 4 * i, v as f32);
    }
    put_f32(&mut buf, 108, VOX_OFFSET as f32);
    put_f32(&mut buf, 112, 1.0);
    put_f32(&mut buf, 116, 0.0);
    // xyzt_units: millimeters
    buf[123] = 2;
    // sform: diagonal scaling by spacing
    put_i16(&mut buf, 254, 1);
    put_f32(&mut buf, 280, spacing.x as f32);
    put_f32(&mut buf, 296 + 4, spacing.y as f32);
    put_f32(&mut buf, 312 + 8, spacing.z as f32);
    buf[344..348].copy_from_slice(MAGIC);
    buf.reserve(values.len() * datatype.bytes());
    for &v in values {
        match datatype {
            Datatype::U8 => buf.push(v as u8),
            Datatype::I16 => buf.extend_from_slice(&(v as i16).to_le_bytes()),
            Datatype::U16 => buf.extend_from_slice(&(v as u16).to_le_bytes()),
            Datatype::F32 => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(buf)
}

fn write_bytes(path: &Path, bytes: &[u8], gzip: bool) -> Result<(), NiftiError> {
    if gzip {
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes).map_err(io_err(path))?;
        enc.finish().map_err(io_err(path))?;
        Ok(())
    } else {
        fs::write(path, bytes).map_err(io_err(path))
    }
}

pub fn save_volume(
    v: &IntensityVolume,
    path: impl AsRef<Path>,
    datatype: Datatype,
    gzip: bool,
) -> Result<(), NiftiError> {
    let bytes = encode(v.dims(), v.spacing(), v.voxels(), datatype)?;
    write_bytes(path.as_ref(), &bytes, gzip)
}

/// Writes a mask as `uint8` zeros and ones.
pub fn save_mask(m: &Mask3D, path: impl AsRef<Path>, gzip: bool) -> Result<(), NiftiError> {
    let values: Vec<f32> = m.bits().iter().map(|&b| b as u8 as f32).collect();
    let bytes = encode(m.dims(), m.spacing(), &values, Datatype::U8)?;
    write_bytes(path.as_ref(), &bytes, gzip)
}
