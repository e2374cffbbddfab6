//! Text transform files:
//!
//! ```text
//! rotation=r00 r01 r02 r10 r11 r12 r20 r21 r22
//! scale=1
//! translation=tx ty tz
//! ```
//!
//! Numbers are written in shortest round-trip form, so files reload bit-exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::transform::SimilarityTransform;
use crate::{Mat3, Vec3};

pub fn format_transform(t: &SimilarityTransform) -> String {
    let r: Vec<String> = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| t.rotation[(i, j)].to_string())
        .collect();
    let tr: Vec<String> = t.translation.iter().map(|v| v.to_string()).collect();
    format!("rotation={}\nscale={}\ntranslation={}\n", r.join(" "), t.scale, tr.join(" "))
}

pub fn parse_transform(text: &str) -> Result<SimilarityTransform> {
    let mut rotation = None;
    let mut scale = None;
    let mut translation = None;
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
        let nums: Vec<f64> = v
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(here, format!("bad number in '{line}'")))?;
        let want = match k.trim() {
            "rotation" => 9,
            "scale" => 1,
            "translation" => 3,
            other => return Err(Error::parse(here, format!("unknown key '{other}'"))),
        };
        if nums.len() != want {
            return Err(Error::parse(here, format!("'{}' needs {want} numbers", k.trim())));
        }
        match want {
            9 => rotation = Some(Mat3::from_row_slice(&nums)),
            1 => scale = Some(nums[0]),
            _ => translation = Some(Vec3::new(nums[0], nums[1], nums[2])),
        }
    }
    let missing = |k: &str| Error::parse(offset, format!("missing key '{k}'"));
    SimilarityTransform::new(
        rotation.ok_or_else(|| missing("rotation"))?,
        scale.ok_or_else(|| missing("scale"))?,
        translation.ok_or_else(|| missing("translation"))?,
    )
}

pub fn write_transform(path: impl AsRef<Path>, t: &SimilarityTransform) -> Result<()> {
    std::fs::write(path, format_transform(t))?;
    Ok(())
}

pub fn read_transform(path: impl AsRef<Path>) -> Result<SimilarityTransform> {
    parse_transform(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let t = crate::phantom::random_similarity(11, (10.0, 30.0), (0.0, 10.0)).unwrap();
        assert_eq!(parse_transform(&format_transform(&t)).unwrap(), t);
    }

    #[test]
    fn missing_key_is_reported() {
        assert!(matches!(parse_transform("scale=1\n"), Err(Error::Parse { .. })));
    }
}
