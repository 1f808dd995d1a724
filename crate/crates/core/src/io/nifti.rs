//! NIfTI-1 single-file (`.nii`, `.nii.gz`) reading and writing.
//!
//! Only the subset needed for PET/CT/mask volumes is supported: 3-D data (a
//! trailing singleton 4th dimension is accepted), datatypes uint8, int16,
//! uint16, float32 and float64, no extensions. Voxel order on disk already
//! matches the canonical (z, y, x) layout with x fastest, so nothing is
//! permuted. The orientation fields are kept in [`NiftiMeta`] but never used
//! to reslice.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{MaskVolume, Shape, Spacing, Volume, Volume3};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDtype {
    U8,
    I16,
    U16,
    F32,
    F64,
}

impl NiftiDtype {
    pub fn code(self) -> i16 {
        match self {
            NiftiDtype::U8 => 2,
            NiftiDtype::I16 => 4,
            NiftiDtype::F32 => 16,
            NiftiDtype::F64 => 64,
            NiftiDtype::U16 => 512,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => NiftiDtype::U8,
            4 => NiftiDtype::I16,
            16 => NiftiDtype::F32,
            64 => NiftiDtype::F64,
            512 => NiftiDtype::U16,
            other => {
                return Err(Error::Unsupported(format!("NIfTI datatype code {other}")));
            }
        })
    }

    pub fn bytes(self) -> usize {
        match self {
            NiftiDtype::U8 => 1,
            NiftiDtype::I16 | NiftiDtype::U16 => 2,
            NiftiDtype::F32 => 4,
            NiftiDtype::F64 => 8,
        }
    }

    /// Integral range, or None for floating types.
    fn int_range(self) -> Option<(f64, f64)> {
        match self {
            NiftiDtype::U8 => Some((0.0, u8::MAX as f64)),
            NiftiDtype::I16 => Some((i16::MIN as f64, i16::MAX as f64)),
            NiftiDtype::U16 => Some((0.0, u16::MAX as f64)),
            NiftiDtype::F32 | NiftiDtype::F64 => None,
        }
    }
}

impl std::str::FromStr for NiftiDtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "uint8" | "u8" => NiftiDtype::U8,
            "int16" | "i16" => NiftiDtype::I16,
            "uint16" | "u16" => NiftiDtype::U16,
            "float32" | "f32" => NiftiDtype::F32,
            "float64" | "f64" => NiftiDtype::F64,
            other => return Err(Error::Unsupported(format!("datatype {other:?}"))),
        })
    }
}

/// Header fields that are recorded but not interpreted.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiMeta {
    pub datatype: NiftiDtype,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub qfac: f32,
    pub srow: [[f32; 4]; 3],
    pub xyzt_units: u8,
    pub descrip: String,
}

struct Header {
    dims: [usize; 3],
    pixdim: [f32; 3],
    vox_offset: usize,
    meta: NiftiMeta,
}

fn parse_header<B: ByteOrder>(h: &[u8]) -> Result<Header> {
    let i16_at = |o: usize| B::read_i16(&h[o..o + 2]);
    let f32_at = |o: usize| B::read_f32(&h[o..o + 4]);
    let magic = &h[344..348];
    if magic == b"ni1\0" {
        return Err(Error::Unsupported("two-file (.hdr/.img) NIfTI".into()));
    }
    if magic != b"n+1\0" {
        return Err(Error::Format(format!("bad NIfTI-1 magic {magic:?}")));
    }
    let ndim = i16_at(40);
    let dim: Vec<i16> = (0..8).map(|k| i16_at(40 + 2 * k)).collect();
    let extra_ok = ndim == 3 || (ndim == 4 && dim[4] == 1);
    if !extra_ok {
        return Err(Error::Unsupported(format!("{ndim}-D NIfTI volume (dim = {dim:?})")));
    }
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(Error::Format(format!("non-positive dimensions {dim:?}")));
    }
    let datatype = NiftiDtype::from_code(i16_at(70))?;
    let bitpix = i16_at(72);
    if bitpix as usize != datatype.bytes() * 8 {
        return Err(Error::Format(format!("bitpix {bitpix} does not match datatype {datatype:?}")));
    }
    let vox_offset = f32_at(108);
    if !(vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::Format(format!("vox_offset {vox_offset} is inside the header")));
    }
    let pixdim = [f32_at(80), f32_at(84), f32_at(88)];
    let descrip = String::from_utf8_lossy(&h[148..228]).trim_end_matches('\0').to_string();
    let row = |o: usize| [f32_at(o), f32_at(o + 4), f32_at(o + 8), f32_at(o + 12)];
    Ok(Header {
        dims: [dim[1] as usize, dim[2] as usize, dim[3] as usize],
        pixdim,
        vox_offset: vox_offset as usize,
        meta: NiftiMeta {
            datatype,
            scl_slope: f32_at(112),
            scl_inter: f32_at(116),
            qform_code: i16_at(252),
            sform_code: i16_at(254),
            quatern: [f32_at(256), f32_at(260), f32_at(264)],
            qoffset: [f32_at(268), f32_at(272), f32_at(276)],
            qfac: f32_at(76),
            srow: [row(280), row(296), row(312)],
            xyzt_units: h[123],
            descrip,
        },
    })
}

fn decode<B: ByteOrder>(raw: &[u8], dtype: NiftiDtype, n: usize, out: &mut Vec<f64>) {
    let w = dtype.bytes();
    out.extend((0..n).map(|i| {
        let b = &raw[i * w..(i + 1) * w];
        match dtype {
            NiftiDtype::U8 => b[0] as f64,
            NiftiDtype::I16 => B::read_i16(b) as f64,
            NiftiDtype::U16 => B::read_u16(b) as f64,
            NiftiDtype::F32 => B::read_f32(b) as f64,
            NiftiDtype::F64 => B::read_f64(b),
        }
    }));
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::file(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: gzip: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses a NIfTI-1 image from memory (gzip-compressed or not).
/// Header floats are float32; widening through the shortest decimal keeps
/// e.g. a 2.04 mm pixdim at 2.04 rather than 2.0399999618.
fn widen(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

pub fn parse_nifti(bytes: &[u8]) -> Result<(Volume3, NiftiMeta)> {
    let owned;
    let bytes = if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("gzip: {e}")))?;
        owned = out;
        &owned[..]
    } else {
        bytes
    };
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "truncated NIfTI header: {} bytes, need {HEADER_SIZE}",
            bytes.len()
        )));
    }
    let h = &bytes[..HEADER_SIZE];
    let big_endian = if LittleEndian::read_i32(&h[0..4]) == HEADER_SIZE as i32 {
        false
    } else if BigEndian::read_i32(&h[0..4]) == HEADER_SIZE as i32 {
        true
    } else {
        return Err(Error::Format("sizeof_hdr is not 348".into()));
    };
    let header = if big_endian {
        parse_header::<BigEndian>(h)?
    } else {
        parse_header::<LittleEndian>(h)?
    };
    let [nx, ny, nz] = header.dims;
    let n = nx * ny * nz;
    let dtype = header.meta.datatype;
    let end = header.vox_offset + n * dtype.bytes();
    if bytes.len() < end {
        return Err(Error::Format(format!(
            "truncated NIfTI data: {} bytes, need {end}",
            bytes.len()
        )));
    }
    let raw = &bytes[header.vox_offset..end];
    let mut values = Vec::with_capacity(n);
    if big_endian {
        decode::<BigEndian>(raw, dtype, n, &mut values);
    } else {
        decode::<LittleEndian>(raw, dtype, n, &mut values);
    }
    let (slope, inter) = (header.meta.scl_slope, header.meta.scl_inter);
    let scaled = slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0);
    let data: Vec<f32> = if scaled {
        values.iter().map(|&v| (v * slope as f64 + inter as f64) as f32).collect()
    } else {
        values.iter().map(|&v| v as f32).collect()
    };
    let [px, py, pz] = header.pixdim.map(|p| widen(p.abs()));
    let spacing = Spacing::new(pz, py, px)
        .map_err(|e| Error::Format(format!("pixdim: {e}")))?;
    let m = &header.meta;
    let origin = if m.sform_code > 0 {
        [m.srow[2][3], m.srow[1][3], m.srow[0][3]].map(widen)
    } else if m.qform_code > 0 {
        [m.qoffset[2], m.qoffset[1], m.qoffset[0]].map(widen)
    } else {
        [0.0; 3]
    };
    let vol = Volume::new(Shape::new(nz, ny, nx)?, spacing, data)?.with_origin(origin);
    Ok((vol, header.meta))
}

pub fn read_nifti_with_meta(path: impl AsRef<Path>) -> Result<(Volume3, NiftiMeta)> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    parse_nifti(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume3> {
    Ok(read_nifti_with_meta(path)?.0)
}

/// Reads a label image as a binary mask: every non-zero voxel is foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskVolume> {
    Ok(read_nifti(path)?.map(|v| v != 0.0))
}

/// Encodes a volume as an uncompressed single-file NIfTI-1 image.
///
/// Integer datatypes only accept integral in-range values unless `cast` is
/// set, in which case values are rounded and saturated.
pub fn encode_nifti(v: &Volume3, dtype: NiftiDtype, cast: bool) -> Result<Vec<u8>> {
    if let Some((lo, hi)) = dtype.int_range() {
        if !cast {
            if let Some(bad) = v
                .data()
                .iter()
                .find(|&&x| !(x.fract() == 0.0 && (x as f64) >= lo && (x as f64) <= hi))
            {
                return Err(Error::invalid(format!(
                    "value {bad} is not representable as {dtype:?}; pass an explicit cast to convert"
                )));
            }
        }
    }
    let [nz, ny, nx] = v.shape().as_array();
    for d in [nz, ny, nx] {
        if d > i16::MAX as usize {
            return Err(Error::Unsupported(format!("dimension {d} exceeds NIfTI-1 limit")));
        }
    }
    let sp = v.spacing();
    let o = v.origin();
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut [u8], off: usize, x: i16| LittleEndian::write_i16(&mut h[off..off + 2], x);
    let put_f32 = |h: &mut [u8], off: usize, x: f32| LittleEndian::write_f32(&mut h[off..off + 4], x);
    LittleEndian::write_i32(&mut h[0..4], HEADER_SIZE as i32);
    h[38] = b'r';
    for (k, d) in [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1].into_iter().enumerate() {
        put_i16(&mut h, 40 + 2 * k, d);
    }
    put_i16(&mut h, 70, dtype.code());
    put_i16(&mut h, 72, (dtype.bytes() * 8) as i16);
    for (k, p) in [1.0, sp.dx as f32, sp.dy as f32, sp.dz as f32, 1.0, 1.0, 1.0, 1.0].into_iter().enumerate() {
        put_f32(&mut h, 76 + 4 * k, p);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    h[123] = 2; // millimetres
    let descrip = b"lesionprompt";
    h[148..148 + descrip.len()].copy_from_slice(descrip);
    put_i16(&mut h, 252, 1);
    put_i16(&mut h, 254, 1);
    // identity rotation: quatern b = c = d = 0
    put_f32(&mut h, 268, o[2] as f32);
    put_f32(&mut h, 272, o[1] as f32);
    put_f32(&mut h, 276, o[0] as f32);
    let srow = [
        [sp.dx as f32, 0.0, 0.0, o[2] as f32],
        [0.0, sp.dy as f32, 0.0, o[1] as f32],
        [0.0, 0.0, sp.dz as f32, o[0] as f32],
    ];
    for (r, row) in srow.iter().enumerate() {
        for (c, &x) in row.iter().enumerate() {
            put_f32(&mut h, 280 + 16 * r + 4 * c, x);
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");

    let mut out = h;
    out.reserve(v.shape().len() * dtype.bytes());
    let sat = |x: f32, lo: f64, hi: f64| (x as f64).round().clamp(lo, hi);
    for &x in v.data() {
        match dtype {
            NiftiDtype::U8 => out.push(sat(x, 0.0, 255.0) as u8),
            NiftiDtype::I16 => out.write_i16::<LittleEndian>(sat(x, i16::MIN as f64, i16::MAX as f64) as i16)?,
            NiftiDtype::U16 => out.write_u16::<LittleEndian>(sat(x, 0.0, u16::MAX as f64) as u16)?,
            NiftiDtype::F32 => out.write_f32::<LittleEndian>(x)?,
            NiftiDtype::F64 => out.write_f64::<LittleEndian>(x as f64)?,
        }
    }
    Ok(out)
}

/// Writes `v` to `path`, gzip-compressing when the name ends in `.gz`.
pub fn write_nifti(v: &Volume3, path: impl AsRef<Path>, dtype: NiftiDtype, cast: bool) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(v, dtype, cast)?;
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let gz = path.extension().is_some_and(|e| e == "gz");
    let result = if gz {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(&bytes).and_then(|_| enc.finish()?.flush())
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(&bytes).and_then(|_| w.flush())
    };
    result.map_err(|e| Error::file(path, e))
}

pub fn write_mask(m: &MaskVolume, path: impl AsRef<Path>) -> Result<()> {
    write_nifti(&m.to_volume(), path, NiftiDtype::U8, false)
}
