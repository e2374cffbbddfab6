//! Versioned binary feature files.
//!
//! Layout (little-endian): magic `SPF3`, `u32` version, three length-prefixed UTF-8
//! strings (source id, extraction-config digest, estimator name), `u64` record count,
//! then per record: `x` (3 × f64), σ, Θ row-major (9 × f64), sign (i8), border (u8),
//! response (f64), and four descriptors of 64 f64 bins followed by 64 u8 ranks.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::ByteReader;
use crate::descriptor::{Descriptor, ExtractionConfig, Feature, DESCRIPTOR_LEN};
use crate::detect::Keypoint;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::transform::ROTATION_TOLERANCE;
use crate::{Mat3, Vec3};

pub const MAGIC: &[u8; 4] = b"SPF3";
pub const FEATURE_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureHeader {
    pub version: u32,
    pub source_id: String,
    pub config_digest: String,
    pub estimator: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub header: FeatureHeader,
    pub features: Vec<Feature>,
}

impl FeatureFile {
    pub fn new(source_id: &str, cfg: &ExtractionConfig, features: Vec<Feature>) -> Self {
        Self {
            header: FeatureHeader {
                version: FEATURE_FILE_VERSION,
                source_id: source_id.to_string(),
                config_digest: config_digest(cfg),
                estimator: cfg.estimator.name().to_string(),
            },
            features,
        }
    }
}

/// Hex SHA-256 of the TOML rendering of `cfg`.
pub fn config_digest(cfg: &ExtractionConfig) -> String {
    let text = toml::to_string(cfg).unwrap_or_default();
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vals: impl IntoIterator<Item = f64>) {
    for v in vals {
        out.extend(v.to_le_bytes());
    }
}

pub fn encode_features(file: &FeatureFile) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(file.header.version.to_le_bytes());
    put_str(&mut out, &file.header.source_id);
    put_str(&mut out, &file.header.config_digest);
    put_str(&mut out, &file.header.estimator);
    out.extend((file.features.len() as u64).to_le_bytes());
    for f in &file.features {
        let kp = &f.keypoint;
        put_f64s(&mut out, kp.x.iter().copied());
        put_f64s(&mut out, [kp.sigma]);
        let m = f.frame.matrix();
        put_f64s(&mut out, (0..3).flat_map(|r| (0..3).map(move |c| m[(r, c)])));
        out.push(kp.sign as u8);
        out.push(kp.border as u8);
        put_f64s(&mut out, [kp.response]);
        for d in &f.descriptors {
            put_f64s(&mut out, d.bins.iter().copied());
            out.extend(d.ranked);
        }
    }
    out
}

fn get_str(r: &mut ByteReader) -> Result<String> {
    let at = r.offset();
    let n = r.u32()? as usize;
    let bytes = r.take(n)?;
    String::from_utf8(bytes.to_vec()).map_err(|_| Error::parse(at, "header string is not UTF-8"))
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureFile> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::parse(0, "not a feature file (bad magic)"));
    }
    let version = r.u32()?;
    if version > FEATURE_FILE_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FEATURE_FILE_VERSION,
        });
    }
    if version == 0 {
        return Err(Error::parse(4, "feature file version 0 is invalid"));
    }
    let header = FeatureHeader {
        version,
        source_id: get_str(&mut r)?,
        config_digest: get_str(&mut r)?,
        estimator: get_str(&mut r)?,
    };
    let count = r.u64()?;
    let mut features = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let at = r.offset();
        let x = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
        let sigma = r.f64()?;
        let mut m = Mat3::zeros();
        for row in 0..3 {
            for col in 0..3 {
                m[(row, col)] = r.f64()?;
            }
        }
        let frame = Frame::from_matrix(m, ROTATION_TOLERANCE)
            .map_err(|_| Error::parse(at, "orientation frame is not a rotation"))?;
        let sign = r.i8()?;
        if sign != 1 && sign != -1 {
            return Err(Error::parse(at, format!("feature sign must be ±1, got {sign}")));
        }
        let border = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::parse(r.offset() - 1, format!("border flag must be 0 or 1, got {b}"))),
        };
        let response = r.f64()?;
        if !(x.iter().all(|v| v.is_finite()) && sigma > 0.0 && sigma.is_finite() && response.is_finite()) {
            return Err(Error::parse(at, "non-finite or non-positive feature geometry"));
        }
        let mut descriptors = [Descriptor::from_bins([0.0; DESCRIPTOR_LEN]); 4];
        for d in descriptors.iter_mut() {
            let dat = r.offset();
            let mut bins = [0.0; DESCRIPTOR_LEN];
            for b in bins.iter_mut() {
                *b = r.f64()?;
            }
            let ranked: [u8; DESCRIPTOR_LEN] = r.take(DESCRIPTOR_LEN)?.try_into().expect("length checked");
            *d = Descriptor { bins, ranked };
            d.validate().map_err(|e| Error::parse(dat, e.to_string()))?;
        }
        features.push(Feature {
            keypoint: Keypoint {
                x,
                sigma,
                sign,
                response,
                border,
            },
            frame,
            descriptors,
        });
    }
    if !r.is_at_end() {
        return Err(Error::parse(r.offset(), "trailing bytes after the last record"));
    }
    Ok(FeatureFile { header, features })
}

pub fn write_features(path: impl AsRef<Path>, file: &FeatureFile) -> Result<()> {
    std::fs::write(path, encode_features(file))?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureFile> {
    decode_features(&std::fs::read(path)?)
}
