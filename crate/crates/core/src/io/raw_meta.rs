//! `raw_meta`: a `key=value` text header next to a headerless little-endian voxel file.
//!
//! ```text
//! format=raw_meta
//! version=1
//! dims=64 64 64
//! spacing=1 1 1
//! origin=-31.5 -31.5 -31.5
//! dtype=f32
//! byte_order=little
//! data_file=phantom.raw
//! ```
//!
//! `data_file` is relative to the header's directory. Voxels are stored x-fastest.
//! Lines starting with `#` and blank lines are ignored.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ByteReader;
use crate::error::{Error, Result};
use crate::volume::ScalarVolume;

pub const RAW_META_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DataType {
    U8,
    I16,
    #[default]
    F32,
}

impl DataType {
    pub fn name(&self) -> &'static str {
        match self {
            DataType::U8 => "u8",
            DataType::I16 => "i16",
            DataType::F32 => "f32",
        }
    }

    pub fn size(&self) -> usize {
        match self {
            DataType::U8 => 1,
            DataType::I16 => 2,
            DataType::F32 => 4,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "u8" => Some(DataType::U8),
            "i16" => Some(DataType::I16),
            "f32" => Some(DataType::F32),
            _ => None,
        }
    }
}

const KEYS: [&str; 8] = ["format", "version", "dims", "spacing", "origin", "dtype", "byte_order", "data_file"];

fn parse_triple<T: std::str::FromStr>(value: &str, offset: u64, key: &str) -> Result<[T; 3]> {
    let parts: Vec<T> = value
        .split_whitespace()
        .map(|p| p.parse::<T>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(offset, format!("'{key}' must hold three numbers, got '{value}'")))?;
    parts
        .try_into()
        .map_err(|_| Error::parse(offset, format!("'{key}' must hold three numbers, got '{value}'")))
}

pub fn read_raw_meta(path: &Path) -> Result<ScalarVolume> {
    let text = std::fs::read_to_string(path)?;
    let mut fields: BTreeMap<&str, (&str, u64)> = BTreeMap::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let here = offset;
        offset += line.len() as u64;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(here, format!("expected key=value, got '{line}'")))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::parse(here, format!("unknown key '{k}'")));
        }
        if fields.insert(k, (v.trim(), here)).is_some() {
            return Err(Error::parse(here, format!("duplicate key '{k}'")));
        }
    }
    let end = offset;
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::parse(end, format!("missing key '{k}'")));

    let (format, at) = get("format")?;
    if format != "raw_meta" {
        return Err(Error::parse(at, format!("format must be raw_meta, got '{format}'")));
    }
    let (version, at) = get("version")?;
    let version: u32 = version
        .parse()
        .map_err(|_| Error::parse(at, format!("bad version '{version}'")))?;
    if version > RAW_META_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: RAW_META_VERSION,
        });
    }
    let (v, at) = get("dims")?;
    let dims: [usize; 3] = parse_triple(v, at, "dims")?;
    let (v, at) = get("spacing")?;
    let spacing: [f64; 3] = parse_triple(v, at, "spacing")?;
    let (v, at) = get("origin")?;
    let origin: [f64; 3] = parse_triple(v, at, "origin")?;
    let (v, at) = get("dtype")?;
    let dtype = DataType::parse(v).ok_or_else(|| Error::parse(at, format!("unsupported dtype '{v}'")))?;
    let (v, at) = get("byte_order")?;
    if v != "little" {
        return Err(Error::parse(at, format!("byte_order must be little, got '{v}'")));
    }
    let (data_file, _) = get("data_file")?;
    let data_path = path.parent().unwrap_or_else(|| Path::new(".")).join(data_file);
    let bytes = std::fs::read(&data_path)?;

    let n: usize = dims.iter().product();
    let expected = n * dtype.size();
    if bytes.len() != expected {
        return Err(Error::parse(
            bytes.len().min(expected) as u64,
            format!("{} holds {} bytes; dims and dtype need {expected}", data_path.display(), bytes.len()),
        ));
    }
    let data = decode_voxels(&bytes, dtype, n, false, 0)?;
    ScalarVolume::new(dims, spacing, origin, data)
}

pub(crate) fn decode_voxels(bytes: &[u8], dtype: DataType, n: usize, big_endian: bool, start: usize) -> Result<Vec<f64>> {
    let mut r = ByteReader::new(bytes).big_endian(big_endian);
    r.seek(start);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let v = match dtype {
            DataType::U8 => r.u8()? as f64,
            DataType::I16 => r.i16()? as f64,
            DataType::F32 => {
                let at = r.offset();
                let v = r.f32()?;
                if !v.is_finite() {
                    return Err(Error::parse(at, "non-finite voxel value"));
                }
                v as f64
            }
        };
        out.push(v);
    }
    Ok(out)
}

/// Writes `<meta_path>` and the voxel file beside it (same stem, `.raw`). Integer types
/// round and saturate.
pub fn write_volume(meta_path: impl AsRef<Path>, vol: &ScalarVolume, dtype: DataType) -> Result<()> {
    let meta_path = meta_path.as_ref();
    let data_path = meta_path.with_extension("raw");
    let data_name = data_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid(format!("bad output path {}", meta_path.display())))?
        .to_string();
    let mut bytes = Vec::with_capacity(vol.len() * dtype.size());
    for &v in vol.data() {
        match dtype {
            DataType::U8 => bytes.push(v.round().clamp(0.0, 255.0) as u8),
            DataType::I16 => bytes.extend((v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16).to_le_bytes()),
            DataType::F32 => bytes.extend((v as f32).to_le_bytes()),
        }
    }
    let [d, s, o] = [
        vol.dims().map(|v| v.to_string()),
        vol.spacing().map(|v| v.to_string()),
        vol.origin().map(|v| v.to_string()),
    ];
    let header = format!(
        "format=raw_meta\nversion={RAW_META_VERSION}\ndims={}\nspacing={}\norigin={}\ndtype={}\nbyte_order=little\ndata_file={data_name}\n",
        d.join(" "),
        s.join(" "),
        o.join(" "),
        dtype.name()
    );
    std::fs::write(&data_path, bytes)?;
    std::fs::write(meta_path, header)?;
    Ok(())
}
