//! Sign-aware 64-bin gradient orientation descriptors and the extraction pipeline.
//!
//! Space around the keypoint is resampled in its own frame, `Î(u) = I(σΘu + x)`,
//! on an 8×8×8 lattice over `u ∈ [-2, 2]³`. Each sample votes into the bin of its
//! octant `r` and of the direction `φ ∈ (±1, ±1, ±1)/√3` maximizing `s ∇Î·φ`,
//! adding `|∇Î·φ|` times a unit-std Gaussian weight. Negating the image together
//! with the sign `s` leaves every bin unchanged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{detect_keypoints, Keypoint, DEFAULT_MAX_COUNT};
use crate::error::{Error, Result};
use crate::frame::{Frame, OrientationEstimator, DEFAULT_WINDOW_FACTOR};
use crate::scale_space::{default_num_octaves, ScaleSpace, DEFAULT_BASE_SIGMA};
use crate::transform::Geometry;
use crate::volume::ScalarVolume;
use crate::Vec3;

pub const DESCRIPTOR_LEN: usize = 64;
pub const LATTICE: usize = 8;
/// Half-width of the sampling cube in frame units (multiples of σ).
pub const SUPPORT: f64 = 2.0;

/// Octant or direction index: bit `a` set means component `a` is negative.
pub fn sign_index(v: &Vec3) -> usize {
    (v[0] < 0.0) as usize | ((v[1] < 0.0) as usize) << 1 | ((v[2] < 0.0) as usize) << 2
}

/// Unit direction `φ_d` for direction index `d`.
pub fn direction(d: usize) -> Vec3 {
    let c = |bit: usize| if d & (1 << bit) != 0 { -1.0 } else { 1.0 };
    Vec3::new(c(0), c(1), c(2)) / 3f64.sqrt()
}

fn directions() -> [Vec3; 8] {
    [0, 1, 2, 3, 4, 5, 6, 7].map(direction)
}

/// Sample coordinates along one lattice axis.
pub fn lattice_coords() -> [f64; LATTICE] {
    let step = 2.0 * SUPPORT / LATTICE as f64;
    std::array::from_fn(|i| -SUPPORT + step * (i as f64 + 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptor {
    /// Histogram indexed `octant * 8 + direction`.
    pub bins: [f64; DESCRIPTOR_LEN],
    /// Rank-order transform of `bins`.
    pub ranked: [u8; DESCRIPTOR_LEN],
}

impl Descriptor {
    pub fn from_bins(bins: [f64; DESCRIPTOR_LEN]) -> Self {
        Self {
            ranked: rank_order(&bins),
            bins,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::invalid("descriptor bins must be finite and nonnegative"));
        }
        let mut seen = [false; DESCRIPTOR_LEN];
        for &r in &self.ranked {
            let r = r as usize;
            if r >= DESCRIPTOR_LEN || seen[r] {
                return Err(Error::invalid("ranked descriptor is not a permutation of 0..63"));
            }
            seen[r] = true;
        }
        Ok(())
    }

    /// Euclidean distance between ranked descriptors.
    pub fn rank_distance(&self, other: &Descriptor) -> f64 {
        self.ranked
            .iter()
            .zip(&other.ranked)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// `ranked[i]` = number of bins strictly smaller than `bins[i]`, plus the number of
/// equal bins at lower indices.
pub fn rank_order(bins: &[f64; DESCRIPTOR_LEN]) -> [u8; DESCRIPTOR_LEN] {
    let mut ranked = [0u8; DESCRIPTOR_LEN];
    for i in 0..DESCRIPTOR_LEN {
        let r = bins
            .iter()
            .enumerate()
            .filter(|&(j, &b)| b < bins[i] || (b == bins[i] && j < i))
            .count();
        ranked[i] = r as u8;
    }
    ranked
}

/// Recomputes `ranked` from `bins`, leaving the bins untouched.
pub fn rank_normalize(d: &Descriptor) -> Descriptor {
    Descriptor::from_bins(d.bins)
}

/// Accumulates the descriptor from a gradient field `grad(u)` given in frame coordinates.
pub fn descriptor_from_gradients(sign: i8, grad: impl Fn(&Vec3) -> Vec3) -> Descriptor {
    let s = if sign < 0 { -1.0 } else { 1.0 };
    let coords = lattice_coords();
    let dirs = directions();
    let mut bins = [0.0; DESCRIPTOR_LEN];
    for &z in &coords {
        for &y in &coords {
            for &x in &coords {
                let u = Vec3::new(x, y, z);
                let g = grad(&u);
                let sg = g * s;
                let mut best = 0;
                let mut best_v = sg.dot(&dirs[0]);
                for (d, phi) in dirs.iter().enumerate().skip(1) {
                    let v = sg.dot(phi);
                    if v > best_v {
                        best = d;
                        best_v = v;
                    }
                }
                let w = (-0.5 * u.norm_squared()).exp();
                bins[sign_index(&u) * 8 + best] += w * g.dot(&dirs[best]).abs();
            }
        }
    }
    Descriptor::from_bins(bins)
}

/// Descriptor of the keypoint neighbourhood resampled in `frame`. Samples outside the
/// volume are clamped to its edge.
pub fn compute_descriptor(ss: &ScaleSpace, kp: &Keypoint, frame: &Frame) -> Result<Descriptor> {
    let level = ss.level_for(kp.sigma)?;
    let m = frame.matrix();
    let mt = m.transpose();
    Ok(descriptor_from_gradients(kp.sign, |u| {
        let p = kp.x + (m * u) * kp.sigma;
        (mt * level.gradient_clamped(&p)) * kp.sigma
    }))
}

/// XOR masks mapping octant/direction indices of state 0 to those of state `k`:
/// the axes negated by `diag(s₁, s₂, s₁s₂)`.
pub const STATE_MASKS: [usize; 4] = [0b000, 0b110, 0b101, 0b011];

/// `perm[i]` is the state-0 bin whose value appears at bin `i` under state `k`.
pub fn state_permutation(k: usize) -> [usize; DESCRIPTOR_LEN] {
    let mask = STATE_MASKS[k];
    std::array::from_fn(|i| ((i / 8) ^ mask) * 8 + ((i % 8) ^ mask))
}

pub fn permute_bins(bins: &[f64; DESCRIPTOR_LEN], k: usize) -> [f64; DESCRIPTOR_LEN] {
    let perm = state_permutation(k);
    std::array::from_fn(|i| bins[perm[i]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub keypoint: Keypoint,
    /// Base frame (state 0).
    pub frame: Frame,
    /// One descriptor per orientation state.
    pub descriptors: [Descriptor; 4],
}

impl Feature {
    pub fn geometry(&self) -> Geometry {
        self.geometry_state(0)
    }

    pub fn geometry_state(&self, k: usize) -> Geometry {
        Geometry {
            x: self.keypoint.x,
            sigma: self.keypoint.sigma,
            frame: self.frame.state(k),
        }
    }

    pub fn border(&self) -> bool {
        self.keypoint.border
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub base_sigma: f64,
    /// `None` uses `floor(log2(min dim)) - 3`.
    pub num_octaves: Option<usize>,
    pub min_abs_response: f64,
    pub max_count: usize,
    pub estimator: OrientationEstimator,
    pub window_factor: f64,
    /// Drop keypoints whose support sphere leaves the volume.
    pub drop_border: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            base_sigma: DEFAULT_BASE_SIGMA,
            num_octaves: None,
            min_abs_response: 0.0,
            max_count: DEFAULT_MAX_COUNT,
            estimator: OrientationEstimator::MaxGradient,
            window_factor: DEFAULT_WINDOW_FACTOR,
            drop_border: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractionStats {
    pub keypoints: usize,
    pub features: usize,
    /// Keypoints dropped because no frame could be estimated.
    pub dropped_frames: usize,
    pub dropped_border: usize,
}

pub fn build_scale_space(volume: &ScalarVolume, cfg: &ExtractionConfig) -> Result<ScaleSpace> {
    let iso_dims = volume.to_isotropic()?.dims();
    let octaves = cfg.num_octaves.unwrap_or_else(|| default_num_octaves(iso_dims));
    ScaleSpace::build(volume, cfg.base_sigma, octaves)
}

/// Scale space, detection, frames, states and the four descriptors of every feature.
pub fn extract_features(volume: &ScalarVolume, cfg: &ExtractionConfig) -> Result<Vec<Feature>> {
    Ok(extract_with_stats(volume, cfg)?.0)
}

pub fn extract_with_stats(volume: &ScalarVolume, cfg: &ExtractionConfig) -> Result<(Vec<Feature>, ExtractionStats)> {
    let ss = build_scale_space(volume, cfg)?;
    features_from_scale_space(&ss, cfg)
}

pub fn features_from_scale_space(ss: &ScaleSpace, cfg: &ExtractionConfig) -> Result<(Vec<Feature>, ExtractionStats)> {
    let keypoints = detect_keypoints(ss, cfg.min_abs_response, cfg.max_count);
    let results: Vec<Result<Option<Feature>>> = keypoints
        .par_iter()
        .map(|kp| {
            if cfg.drop_border && kp.border {
                return Ok(None);
            }
            let frame = match cfg.estimator.estimate(ss, kp, cfg.window_factor) {
                Ok(f) => f,
                Err(Error::NoOrientation | Error::AmbiguousFrame(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let mut descriptors = [Descriptor::from_bins([0.0; DESCRIPTOR_LEN]); 4];
            for (k, d) in descriptors.iter_mut().enumerate() {
                *d = compute_descriptor(ss, kp, &frame.state(k))?;
            }
            Ok(Some(Feature {
                keypoint: *kp,
                frame,
                descriptors,
            }))
        })
        .collect();
    let mut stats = ExtractionStats {
        keypoints: keypoints.len(),
        ..Default::default()
    };
    let mut features = Vec::with_capacity(keypoints.len());
    for (kp, r) in keypoints.iter().zip(results) {
        match r? {
            Some(f) => features.push(f),
            None if cfg.drop_border && kp.border => stats.dropped_border += 1,
            None => stats.dropped_frames += 1,
        }
    }
    stats.features = features.len();
    Ok((features, stats))
}
