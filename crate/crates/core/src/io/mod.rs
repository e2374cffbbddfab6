//! Volume, feature and transform files.

pub mod features;
pub mod nifti;
pub mod raw_meta;
pub mod transform_file;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::ScalarVolume;

pub use features::{read_features, write_features, FeatureFile, FeatureHeader};
pub use raw_meta::{write_volume, DataType};
pub use transform_file::{read_transform, write_transform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum VolumeFormat {
    RawMeta,
    Nifti1,
}

impl VolumeFormat {
    /// `.meta` is raw_meta, `.nii` is NIfTI-1.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("meta") => Ok(Self::RawMeta),
            Some("nii") => Ok(Self::Nifti1),
            _ => Err(Error::invalid(format!(
                "cannot infer volume format of {}; expected .meta or .nii",
                path.display()
            ))),
        }
    }
}

pub fn read_volume(path: impl AsRef<Path>, format: Option<VolumeFormat>) -> Result<ScalarVolume> {
    let path = path.as_ref();
    let format = match format {
        Some(f) => f,
        None => VolumeFormat::from_path(path)?,
    };
    match format {
        VolumeFormat::RawMeta => raw_meta::read_raw_meta(path),
        VolumeFormat::Nifti1 => nifti::read_nifti1(path),
    }
}

/// Bounds-checked little/big-endian cursor that reports failures at their byte offset.
pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
    big_endian: bool,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self {
            data,
            pos: 0,
            big_endian: false,
        }
    }

    pub fn big_endian(mut self, yes: bool) -> Self {
        self.big_endian = yes;
        self
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn seek(&mut self, pos: usize) {
        self.pos = pos;
    }

    pub fn is_at_end(&self) -> bool {
        self.pos >= self.data.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len().saturating_sub(self.pos) < n {
            return Err(Error::parse(
                self.data.len() as u64,
                format!("unexpected end of data: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a: [u8; N] = self.take(N)?.try_into().expect("length checked");
        if self.big_endian {
            a.reverse();
        }
        Ok(a)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn i8(&mut self) -> Result<i8> {
        Ok(self.take(1)?[0] as i8)
    }

    pub fn i16(&mut self) -> Result<i16> {
        Ok(i16::from_le_bytes(self.array()?))
    }

    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}
