//! NIfTI-1 single-file (`n+1`) reader and writer.
//!
//! Supported: uncompressed, `dim[0]` of 3 or 4, datatypes uint8, int16 and
//! float32, either byte order on read. Writes are always little-endian
//! float32 with the sform set from the volume affine.
//!
//! NIfTI stores `x` fastest. Volume axis `D` is mapped to `x` (`dim[1]`),
//! `H` to `y` and `W` to `z`, so the voxel-to-world affine carries over
//! unchanged and voxels are transposed on the way in and out.

use thiserror::Error;

use super::volume::Volume;

pub const HEADER_LEN: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DATA_OFFSET: usize = 352;

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_XYZT_UNITS: usize = 123;
const OFF_CAL_MAX: usize = 124;
const OFF_CAL_MIN: usize = 128;
const OFF_DESCRIP: usize = 148;
const OFF_QFORM_CODE: usize = 252;
const OFF_SFORM_CODE: usize = 254;
const OFF_SROW: usize = 280;
const OFF_MAGIC: usize = 344;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NiftiError {
    #[error("truncated header at byte {offset}: {HEADER_LEN} bytes required")]
    TruncatedHeader { offset: usize },
    #[error("bad sizeof_hdr at byte 0: {found} in either byte order")]
    SizeofHdr { found: i32 },
    #[error("bad magic at byte {OFF_MAGIC}: {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported datatype {code} at byte {OFF_DATATYPE}")]
    UnsupportedDatatype { code: i16 },
    #[error("invalid dim at byte {offset}: {reason}")]
    BadDim { offset: usize, reason: String },
    #[error("invalid vox_offset {value} at byte {OFF_VOX_OFFSET}")]
    BadVoxOffset { value: f32 },
    #[error("truncated body at byte {offset}: {needed} bytes needed, {available} available")]
    TruncatedBody {
        offset: usize,
        needed: usize,
        available: usize,
    },
}

impl NiftiError {
    /// Byte offset the error refers to.
    pub fn offset(&self) -> usize {
        match self {
            NiftiError::TruncatedHeader { offset } => *offset,
            NiftiError::SizeofHdr { .. } => 0,
            NiftiError::BadMagic { .. } => OFF_MAGIC,
            NiftiError::UnsupportedDatatype { .. } => OFF_DATATYPE,
            NiftiError::BadDim { offset, .. } => *offset,
            NiftiError::BadVoxOffset { .. } => OFF_VOX_OFFSET,
            NiftiError::TruncatedBody { offset, .. } => *offset,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn array<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.bytes[at..at + N]);
        if self.endian == Endian::Big {
            b.reverse();
        }
        b
    }

    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.array(at))
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.array(at))
    }
}

struct Writer {
    bytes: Vec<u8>,
    endian: Endian,
}

impl Writer {
    fn put<const N: usize>(&mut self, at: usize, mut b: [u8; N]) {
        if self.endian == Endian::Big {
            b.reverse();
        }
        self.bytes[at..at + b.len()].copy_from_slice(&b);
    }

    fn i16(&mut self, at: usize, v: i16) {
        self.put(at, v.to_le_bytes());
    }

    fn i32(&mut self, at: usize, v: i32) {
        self.put(at, v.to_le_bytes());
    }

    fn f32(&mut self, at: usize, v: f32) {
        self.put(at, v.to_le_bytes());
    }
}

/// Byte order given by the `sizeof_hdr` field, if it reads 348 either way.
pub fn detect_endian(bytes: &[u8]) -> Option<Endian> {
    let b: [u8; 4] = bytes.get(0..4)?.try_into().ok()?;
    if i32::from_le_bytes(b) == HEADER_LEN as i32 {
        Some(Endian::Little)
    } else if i32::from_be_bytes(b) == HEADER_LEN as i32 {
        Some(Endian::Big)
    } else {
        None
    }
}

pub fn parse_nifti(bytes: &[u8]) -> Result<Volume, NiftiError> {
    if bytes.len() < HEADER_LEN {
        return Err(NiftiError::TruncatedHeader { offset: bytes.len() });
    }
    let endian = detect_endian(bytes).ok_or_else(|| NiftiError::SizeofHdr {
        found: i32::from_le_bytes(bytes[0..4].try_into().unwrap()),
    })?;
    let r = Reader { bytes, endian };

    let magic: [u8; 4] = bytes[OFF_MAGIC..OFF_MAGIC + 4].try_into().unwrap();
    if &magic != b"n+1\0" {
        return Err(NiftiError::BadMagic { found: magic });
    }

    let datatype = r.i16(OFF_DATATYPE);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        code => return Err(NiftiError::UnsupportedDatatype { code }),
    };

    let dim: Vec<i16> = (0..8).map(|i| r.i16(OFF_DIM + 2 * i)).collect();
    if dim[0] != 3 && dim[0] != 4 {
        return Err(NiftiError::BadDim {
            offset: OFF_DIM,
            reason: format!("dim[0] = {} (expected 3 or 4)", dim[0]),
        });
    }
    for (i, &d) in dim.iter().enumerate().take(dim[0] as usize + 1).skip(1) {
        if d < 1 {
            return Err(NiftiError::BadDim {
                offset: OFF_DIM + 2 * i,
                reason: format!("dim[{i}] = {d}"),
            });
        }
    }
    let extents = [dim[1] as usize, dim[2] as usize, dim[3] as usize];
    let channels = if dim[0] == 4 { dim[4] as usize } else { 1 };
    if channels != 1 && channels != 3 {
        return Err(NiftiError::BadDim {
            offset: OFF_DIM + 8,
            reason: format!("{channels} volumes along dim[4] (expected 1 or 3)"),
        });
    }

    let vox_offset = r.f32(OFF_VOX_OFFSET);
    if !(vox_offset >= HEADER_LEN as f32) || vox_offset.fract() != 0.0 {
        return Err(NiftiError::BadVoxOffset { value: vox_offset });
    }
    let start = vox_offset as usize;
    let spatial: usize = extents.iter().product();
    let count = spatial * channels;
    let needed = count * width;
    let available = bytes.len().saturating_sub(start);
    if available < needed {
        return Err(NiftiError::TruncatedBody {
            offset: start + available,
            needed,
            available,
        });
    }

    let slope = r.f32(OFF_SCL_SLOPE);
    let inter = r.f32(OFF_SCL_INTER);
    let scaled = slope != 0.0 && slope.is_finite() && inter.is_finite();
    let body = Reader {
        bytes: &bytes[start..start + needed],
        endian,
    };
    let raw = |i: usize| -> f32 {
        match datatype {
            DT_UINT8 => body.bytes[i] as f32,
            DT_INT16 => body.i16(2 * i) as f32,
            _ => body.f32(4 * i),
        }
    };

    let [nd, nh, nw] = extents;
    let mut voxels = vec![0.0f32; count];
    let mut i = 0;
    for c in 0..channels {
        for w in 0..nw {
            for h in 0..nh {
                for d in 0..nd {
                    let v = raw(i);
                    voxels[c * spatial + (d * nh + h) * nw + w] = if scaled { v * slope + inter } else { v };
                    i += 1;
                }
            }
        }
    }

    let pixdim = |k: usize| {
        let p = r.f32(OFF_PIXDIM + 4 * k).abs();
        if p > 0.0 && p.is_finite() {
            p
        } else {
            1.0
        }
    };
    let spacing = [pixdim(1), pixdim(2), pixdim(3)];
    let affine = if r.i16(OFF_SFORM_CODE) > 0 {
        let mut a = [[0.0f32; 4]; 4];
        for (row, a_row) in a.iter_mut().take(3).enumerate() {
            for (col, v) in a_row.iter_mut().enumerate() {
                *v = r.f32(OFF_SROW + 16 * row + 4 * col);
            }
        }
        a[3][3] = 1.0;
        a
    } else {
        let mut a = [[0.0f32; 4]; 4];
        for k in 0..3 {
            a[k][k] = spacing[k];
        }
        a[3][3] = 1.0;
        a
    };
    let (cal_min, cal_max) = (r.f32(OFF_CAL_MIN), r.f32(OFF_CAL_MAX));
    let range = (cal_min != 0.0 || cal_max != 0.0).then_some([cal_min, cal_max]);

    let mut v = Volume::new(extents, channels, voxels).map_err(|e| NiftiError::BadDim {
        offset: OFF_DIM,
        reason: e.to_string(),
    })?;
    v.set_geometry(spacing, affine);
    Ok(v.with_intensity_range(range))
}

pub fn write_nifti(v: &Volume) -> Vec<u8> {
    write_nifti_with(v, Endian::Little)
}

/// Float32 writer in the requested byte order.
pub fn write_nifti_with(v: &Volume, endian: Endian) -> Vec<u8> {
    let [nd, nh, nw] = v.extents();
    let channels = v.channels();
    let spatial = v.spatial_len();
    let mut w = Writer {
        bytes: vec![0u8; DATA_OFFSET + 4 * channels * spatial],
        endian,
    };

    w.i32(0, HEADER_LEN as i32);
    let dims: [i16; 8] = [
        if channels == 1 { 3 } else { 4 },
        nd as i16,
        nh as i16,
        nw as i16,
        channels as i16,
        1,
        1,
        1,
    ];
    for (i, d) in dims.iter().enumerate() {
        w.i16(OFF_DIM + 2 * i, *d);
    }
    w.i16(OFF_DATATYPE, DT_FLOAT32);
    w.i16(OFF_BITPIX, 32);
    let spacing = v.spacing();
    let pixdim = [1.0, spacing[0], spacing[1], spacing[2], 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        w.f32(OFF_PIXDIM + 4 * i, *p);
    }
    w.f32(OFF_VOX_OFFSET, DATA_OFFSET as f32);
    w.f32(OFF_SCL_SLOPE, 1.0);
    w.f32(OFF_SCL_INTER, 0.0);
    w.bytes[OFF_XYZT_UNITS] = 2;
    if let Some([lo, hi]) = v.intensity_range() {
        w.f32(OFF_CAL_MIN, lo);
        w.f32(OFF_CAL_MAX, hi);
    }
    let descrip = b"voxcycle";
    w.bytes[OFF_DESCRIP..OFF_DESCRIP + descrip.len()].copy_from_slice(descrip);
    w.i16(OFF_QFORM_CODE, 0);
    w.i16(OFF_SFORM_CODE, 1);
    let affine = v.affine();
    for row in 0..3 {
        for col in 0..4 {
            w.f32(OFF_SROW + 16 * row + 4 * col, affine[row][col]);
        }
    }
    w.bytes[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"n+1\0");

    let vox = v.voxels();
    let mut at = DATA_OFFSET;
    for c in 0..channels {
        for k in 0..nw {
            for j in 0..nh {
                for i in 0..nd {
                    w.f32(at, vox[c * spatial + (i * nh + j) * nw + k]);
                    at += 4;
                }
            }
        }
    }
    w.bytes
}
