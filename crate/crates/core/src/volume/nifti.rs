//! Single-file NIfTI-1 (.nii) I/O, little-endian.
//!
//! Writing: always float32, sform code 1 (scanner anatomical), voxel data at
//! offset 352. Reading: int16 and float32, sform preferred, falling back to
//! an identity orientation with `pixdim` spacing when no sform is present.
//! The world affine maps voxel indices to voxel-center coordinates in mm.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Matrix3, Vector3};

use super::{GridSpec, Volume3, VolumeError};
use crate::Real;

const HEADER_SIZE: usize = 348;
const MAGIC: &[u8; 4] = b"n+1\0";
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

pub fn write_nifti<T: Real>(
    volume: &Volume3<T>,
    path: impl AsRef<Path>,
) -> Result<(), VolumeError> {
    let grid = volume.grid();
    let mut h = vec![0u8; HEADER_SIZE];
    LittleEndian::write_i32(&mut h[0..], HEADER_SIZE as i32);
    // dim[0..8] at byte 40
    let dim: [i16; 8] = [
        3,
        grid.dims[0] as i16,
        grid.dims[1] as i16,
        grid.dims[2] as i16,
        1,
        1,
        1,
        1,
    ];
    for (k, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut h[40 + 2 * k..], *d);
    }
    LittleEndian::write_i16(&mut h[70..], DT_FLOAT32); // datatype
    LittleEndian::write_i16(&mut h[72..], 32); // bitpix
    // pixdim[0..8] at byte 76; pixdim[0] is the qfac, unused here
    let pixdim: [f32; 8] = [
        1.0,
        grid.spacing[0].as_f64() as f32,
        grid.spacing[1].as_f64() as f32,
        grid.spacing[2].as_f64() as f32,
        0.0,
        0.0,
        0.0,
        0.0,
    ];
    for (k, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[76 + 4 * k..], *p);
    }
    LittleEndian::write_f32(&mut h[108..], 352.0); // vox_offset
    LittleEndian::write_f32(&mut h[112..], 1.0); // scl_slope
    LittleEndian::write_f32(&mut h[116..], 0.0); // scl_inter
    h[123] = 2; // xyzt_units: millimetres
    LittleEndian::write_i16(&mut h[252..], 0); // qform_code
    LittleEndian::write_i16(&mut h[254..], 1); // sform_code
    // srow_x/y/z at 280/296/312: rows of [direction * diag(spacing) | origin]
    for r in 0..3 {
        let base = 280 + 16 * r;
        for c in 0..3 {
            let a = (grid.direction[(r, c)] * grid.spacing[c]).as_f64() as f32;
            LittleEndian::write_f32(&mut h[base + 4 * c..], a);
        }
        LittleEndian::write_f32(&mut h[base + 12..], grid.origin[r].as_f64() as f32);
    }
    h[344..348].copy_from_slice(MAGIC);

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&h)?;
    out.write_all(&[0u8; 4])?; // no header extensions
    for &v in volume.data() {
        out.write_f32::<LittleEndian>(v.as_f64() as f32)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_nifti<T: Real>(path: impl AsRef<Path>) -> Result<Volume3<T>, VolumeError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut h = vec![0u8; HEADER_SIZE];
    reader.read_exact(&mut h).map_err(|_| VolumeError::BadMagic {
        found: [0, 0, 0, 0],
    })?;
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&h[344..348]);
    if &magic != MAGIC {
        return Err(VolumeError::BadMagic { found: magic });
    }
    let ndim = LittleEndian::read_i16(&h[40..]);
    if ndim != 3 {
        return Err(VolumeError::DimensionError { ndim });
    }
    let dims = [
        LittleEndian::read_i16(&h[42..]) as usize,
        LittleEndian::read_i16(&h[44..]) as usize,
        LittleEndian::read_i16(&h[46..]) as usize,
    ];
    let datatype = LittleEndian::read_i16(&h[70..]);
    if datatype != DT_INT16 && datatype != DT_FLOAT32 {
        return Err(VolumeError::UnsupportedDatatype { code: datatype });
    }
    let vox_offset = LittleEndian::read_f32(&h[108..]) as i64;
    if vox_offset < HEADER_SIZE as i64 {
        return Err(VolumeError::BadHeader {
            reason: format!("vox_offset {vox_offset} overlaps the header"),
        });
    }
    let scl_slope = LittleEndian::read_f32(&h[112..]);
    let scl_inter = LittleEndian::read_f32(&h[116..]);
    let sform_code = LittleEndian::read_i16(&h[254..]);

    let (spacing, origin, direction) = if sform_code > 0 {
        let mut affine = [[0f64; 4]; 3];
        for (r, row) in affine.iter_mut().enumerate() {
            let base = 280 + 16 * r;
            for (c, val) in row.iter_mut().enumerate() {
                *val = LittleEndian::read_f32(&h[base + 4 * c..]) as f64;
            }
        }
        let mut spacing = Vector3::zeros();
        let mut direction = Matrix3::identity();
        for c in 0..3 {
            let col = Vector3::new(affine[0][c], affine[1][c], affine[2][c]);
            let len = col.norm();
            if len <= 0.0 {
                return Err(VolumeError::BadHeader {
                    reason: format!("sform column {c} has zero length"),
                });
            }
            spacing[c] = T::of(len);
            for r in 0..3 {
                direction[(r, c)] = T::of(affine[r][c] / len);
            }
        }
        let origin = Vector3::new(
            T::of(affine[0][3]),
            T::of(affine[1][3]),
            T::of(affine[2][3]),
        );
        (spacing, origin, direction)
    } else {
        let spacing = Vector3::new(
            T::of(LittleEndian::read_f32(&h[80..]) as f64),
            T::of(LittleEndian::read_f32(&h[84..]) as f64),
            T::of(LittleEndian::read_f32(&h[88..]) as f64),
        );
        (spacing, Vector3::zeros(), Matrix3::identity())
    };

    reader.seek(SeekFrom::Start(vox_offset as u64))?;
    let n = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .ok_or(VolumeError::TooSmall { dims, need: 1 })?;
    let apply_scaling = scl_slope != 0.0 && (scl_slope != 1.0 || scl_inter != 0.0);
    let mut data = Vec::with_capacity(n);
    match datatype {
        DT_INT16 => {
            for _ in 0..n {
                let v = reader.read_i16::<LittleEndian>()? as f64;
                let v = if apply_scaling {
                    v * scl_slope as f64 + scl_inter as f64
                } else {
                    v
                };
                data.push(T::of(v));
            }
        }
        _ => {
            for _ in 0..n {
                let v = reader.read_f32::<LittleEndian>()? as f64;
                let v = if apply_scaling {
                    v * scl_slope as f64 + scl_inter as f64
                } else {
                    v
                };
                data.push(T::of(v));
            }
        }
    }

    Volume3::new(
        GridSpec {
            dims,
            spacing,
            origin,
            direction,
        },
        data,
    )
}
