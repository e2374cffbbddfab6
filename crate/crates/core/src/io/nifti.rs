//! Minimal single-file NIfTI-1 (`.nii`) reader. Honors dims, pixdim, datatype
//! (u8/i16/f32), scl_slope/scl_inter and vox_offset; the origin is placed at zero.

use std::path::Path;

use log::warn;

use super::raw_meta::{decode_voxels, DataType};
use super::ByteReader;
use crate::error::{Error, Result};
use crate::volume::ScalarVolume;

pub const HEADER_SIZE: usize = 348;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

pub fn read_nifti1(path: &Path) -> Result<ScalarVolume> {
    let bytes = std::fs::read(path)?;
    parse_nifti1(&bytes)
}

pub fn parse_nifti1(bytes: &[u8]) -> Result<ScalarVolume> {
    let mut r = ByteReader::new(bytes);
    let size_le = r.i32()?;
    let big_endian = if size_le == HEADER_SIZE as i32 {
        false
    } else if size_le.swap_bytes() == HEADER_SIZE as i32 {
        true
    } else {
        return Err(Error::parse(0, format!("sizeof_hdr is {size_le}, expected 348")));
    };
    let mut r = ByteReader::new(bytes).big_endian(big_endian);
    r.take(HEADER_SIZE)?;

    r.seek(344);
    let magic = r.take(4)?;
    if magic == b"ni1\0" {
        return Err(Error::parse(344, "two-file NIfTI (.hdr/.img) is not supported"));
    }
    if magic != b"n+1\0" {
        return Err(Error::parse(344, "missing NIfTI-1 magic"));
    }

    r.seek(40);
    let mut dim = [0i16; 8];
    for d in dim.iter_mut() {
        *d = r.i16()?;
    }
    let rank = dim[0];
    if !(1..=7).contains(&rank) {
        return Err(Error::parse(40, format!("dim[0] = {rank} is out of range")));
    }
    if rank > 3 && dim[4..=rank as usize].iter().any(|&d| d > 1) {
        return Err(Error::parse(40, "only single 3D volumes are supported"));
    }
    let dims: [usize; 3] = std::array::from_fn(|a| if a < rank as usize { dim[a + 1] } else { 1 } as usize);
    for (a, &d) in dim[1..=3.min(rank as usize)].iter().enumerate() {
        if d < 1 {
            return Err(Error::parse(42 + 2 * a as u64, format!("dim[{}] = {d} must be positive", a + 1)));
        }
    }

    r.seek(70);
    let datatype = r.i16()?;
    let bitpix = r.i16()?;
    let dtype = match datatype {
        DT_UINT8 => DataType::U8,
        DT_INT16 => DataType::I16,
        DT_FLOAT32 => DataType::F32,
        other => return Err(Error::parse(70, format!("unsupported datatype code {other}"))),
    };
    if bitpix as usize != dtype.size() * 8 {
        return Err(Error::parse(72, format!("bitpix {bitpix} disagrees with datatype {datatype}")));
    }

    r.seek(76);
    let mut pixdim = [0f32; 8];
    for p in pixdim.iter_mut() {
        *p = r.f32()?;
    }
    let spacing: [f64; 3] = std::array::from_fn(|a| pixdim[a + 1].abs() as f64);
    if let Some(a) = spacing.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::parse(80 + 4 * a as u64, format!("pixdim[{}] must be nonzero", a + 1)));
    }

    r.seek(108);
    let vox_offset = r.f32()?;
    let slope = r.f32()?;
    let inter = r.f32()?;
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::parse(108, format!("vox_offset {vox_offset} is invalid")));
    }
    let (slope, inter) = if slope == 0.0 || !slope.is_finite() {
        (1.0, 0.0)
    } else {
        (slope as f64, if inter.is_finite() { inter as f64 } else { 0.0 })
    };

    r.seek(123);
    let units = r.u8()?;
    if units & 7 != 0 && units & 7 != 2 {
        warn!("NIfTI spatial units code {} ignored; spacing is read as millimetres", units & 7);
    }
    r.seek(252);
    let qform = r.i16()?;
    let sform = r.i16()?;
    if qform != 0 || sform != 0 {
        warn!("NIfTI qform/sform orientation ignored; origin set to zero");
    }

    let n: usize = dims.iter().product();
    let start = vox_offset as usize;
    let needed = start + n * dtype.size();
    if bytes.len() < needed {
        return Err(Error::parse(
            bytes.len() as u64,
            format!("file holds {} bytes; header needs {needed}", bytes.len()),
        ));
    }
    let raw = decode_voxels(bytes, dtype, n, big_endian, start)?;
    let data = raw.into_iter().map(|v| v * slope + inter).collect();
    ScalarVolume::new(dims, spacing, [0.0; 3], data)
}

/// Little-endian single-file NIfTI-1 image; used to build fixtures.
pub fn encode_nifti1(vol: &ScalarVolume, dtype: DataType, slope: f32, inter: f32) -> Vec<u8> {
    let mut h = vec![0u8; HEADER_SIZE + 4];
    let put = |h: &mut Vec<u8>, at: usize, b: &[u8]| h[at..at + b.len()].copy_from_slice(b);
    put(&mut h, 0, &(HEADER_SIZE as i32).to_le_bytes());
    let dims = vol.dims();
    let dim = [3i16, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        put(&mut h, 40 + 2 * i, &d.to_le_bytes());
    }
    let code = match dtype {
        DataType::U8 => DT_UINT8,
        DataType::I16 => DT_INT16,
        DataType::F32 => DT_FLOAT32,
    };
    put(&mut h, 70, &code.to_le_bytes());
    put(&mut h, 72, &((dtype.size() * 8) as i16).to_le_bytes());
    let sp = vol.spacing();
    let pixdim = [1.0f32, sp[0] as f32, sp[1] as f32, sp[2] as f32, 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        put(&mut h, 76 + 4 * i, &p.to_le_bytes());
    }
    put(&mut h, 108, &((HEADER_SIZE + 4) as f32).to_le_bytes());
    put(&mut h, 112, &slope.to_le_bytes());
    put(&mut h, 116, &inter.to_le_bytes());
    put(&mut h, 123, &[2u8]);
    put(&mut h, 344, b"n+1\0");
    for &v in vol.data() {
        match dtype {
            DataType::U8 => h.push(v as u8),
            DataType::I16 => h.extend((v as i16).to_le_bytes()),
            DataType::F32 => h.extend((v as f32).to_le_bytes()),
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn applies_intensity_scaling() {
        let vol = ScalarVolume::constant([2, 1, 1], [1.0; 3], [0.0; 3], 3.0).unwrap();
        let bytes = encode_nifti1(&vol, DataType::I16, 2.0, 1.0);
        let back = parse_nifti1(&bytes).unwrap();
        assert_eq!(back.data(), &[7.0, 7.0]);
    }

    #[test]
    fn zero_slope_means_unscaled() {
        let vol = ScalarVolume::new([2, 2, 1], [0.5, 1.0, 2.0], [0.0; 3], vec![1.0, 2.0, 3.0, 250.0]).unwrap();
        let back = parse_nifti1(&encode_nifti1(&vol, DataType::U8, 0.0, 5.0)).unwrap();
        assert_eq!(back, vol);
    }

    #[test]
    fn rejects_truncation_and_bad_types() {
        let vol = ScalarVolume::constant([4, 4, 4], [1.0; 3], [0.0; 3], 1.0).unwrap();
        let bytes = encode_nifti1(&vol, DataType::F32, 1.0, 0.0);
        assert!(matches!(parse_nifti1(&bytes[..400]), Err(Error::Parse { .. })));
        assert!(matches!(parse_nifti1(&bytes[..100]), Err(Error::Parse { .. })));
        let mut bad = bytes.clone();
        bad[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(parse_nifti1(&bad), Err(Error::Parse { offset: 70, .. })));
    }
}
