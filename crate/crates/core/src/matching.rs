//! Descriptor matching over orientation states and Hough voting for the dominant
//! similarity transform.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::Feature;
use crate::error::{Error, Result};
use crate::transform::{project_to_rotation, rotation_vector, Geometry, SimilarityTransform};
use crate::{Mat3, Vec3};

/// A fixed feature paired with its nearest moving feature over all four moving states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub fixed_index: usize,
    pub moving_index: usize,
    pub moving_state: u8,
    pub descriptor_distance: f64,
    /// Geometry of the fixed feature (state 0).
    pub fixed: Geometry,
    /// Transform taking the fixed geometry onto the moving geometry at `moving_state`.
    pub t_nm: SimilarityTransform,
}

impl Match {
    pub fn moving(&self) -> Geometry {
        self.t_nm.apply_geometry(&self.fixed)
    }
}

/// Maps `g_fixed` onto `g_moving` exactly: `b = σₘ/σₙ`, `R = ΘₘΘₙᵀ`, `t = xₘ - bRxₙ`.
pub fn transform_between(g_fixed: &Geometry, g_moving: &Geometry) -> SimilarityTransform {
    let scale = g_moving.sigma / g_fixed.sigma;
    let rotation = g_moving.frame.matrix() * g_fixed.frame.matrix().transpose();
    let translation = g_moving.x - scale * (rotation * g_fixed.x);
    SimilarityTransform {
        rotation,
        scale,
        translation,
    }
}

/// Exhaustive nearest neighbour in ranked-descriptor space. Ties keep the lowest
/// `(moving_index, state)`.
pub fn match_features(fixed: &[Feature], moving: &[Feature]) -> Result<Vec<Match>> {
    if fixed.is_empty() || moving.is_empty() {
        return Err(Error::invalid("cannot match empty feature sets"));
    }
    Ok(fixed
        .par_iter()
        .enumerate()
        .map(|(n, f)| {
            let mut best = (0usize, 0usize, f64::INFINITY);
            for (m, g) in moving.iter().enumerate() {
                for (k, d) in g.descriptors.iter().enumerate() {
                    let dist = f.descriptors[0].rank_distance(d);
                    if dist < best.2 {
                        best = (m, k, dist);
                    }
                }
            }
            let (m, k, dist) = best;
            let gf = f.geometry();
            Match {
                fixed_index: n,
                moving_index: m,
                moving_state: k as u8,
                descriptor_distance: dist,
                fixed: gf,
                t_nm: transform_between(&gf, &moving[m].geometry_state(k)),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoughThresholds {
    /// Minimum per-axis cosine between predicted and matched frame axes.
    pub eps_cos_theta: f64,
    /// Maximum `|log σ - log σₙₘ|`.
    pub eps_log_sigma: f64,
    /// Maximum `‖x - xₙₘ‖² / (σ σₙₘ)`.
    pub eps_x_over_sigma: f64,
    /// Accumulator cell size for each rotation-vector component (radians).
    pub rotation_bin: f64,
    /// Accumulator cell size in log scale.
    pub log_scale_bin: f64,
    /// Accumulator cell size for translation (mm).
    pub translation_bin: f64,
    pub min_votes: usize,
}

impl Default for HoughThresholds {
    fn default() -> Self {
        Self {
            eps_cos_theta: 0.7,
            eps_log_sigma: 1.5f64.ln(),
            eps_x_over_sigma: 0.25,
            rotation_bin: std::f64::consts::PI / 8.0,
            log_scale_bin: 1.5f64.ln(),
            translation_bin: 10.0,
            min_votes: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoughResult {
    /// Dominant fixed-to-moving transform.
    pub t_star: SimilarityTransform,
    pub inliers: Vec<Match>,
    pub vote_count: usize,
}

/// Whether `m` agrees with `t` in rotation (every axis), scale and scaled displacement.
pub fn is_inlier(t: &SimilarityTransform, m: &Match, th: &HoughThresholds) -> bool {
    let predicted = t.apply_geometry(&m.fixed);
    let observed = m.moving();
    let cos = predicted.frame.axis_cosines(&observed.frame);
    if cos.iter().any(|&c| c <= th.eps_cos_theta) {
        return false;
    }
    if (predicted.sigma.ln() - observed.sigma.ln()).abs() >= th.eps_log_sigma {
        return false;
    }
    (predicted.x - observed.x).norm_squared() / (predicted.sigma * observed.sigma) < th.eps_x_over_sigma
}

struct Vote {
    rotation: Mat3,
    log_scale: f64,
    translation: Vec3,
}

fn mean_transform(votes: &[Vote], members: &[usize]) -> (Mat3, f64, Vec3) {
    let n = members.len() as f64;
    let mut r = Mat3::zeros();
    let mut s = 0.0;
    let mut t = Vec3::zeros();
    for &i in members {
        r += votes[i].rotation;
        s += votes[i].log_scale;
        t += votes[i].translation;
    }
    (project_to_rotation(&(r / n)), s / n, t / n)
}

fn rotation_angle(a: &Mat3, b: &Mat3) -> f64 {
    let c = ((a.transpose() * b).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos()
}

/// Hashes every match transform into a coarse accumulator, runs flat-kernel mean shift
/// from the occupied cells, and keeps the mode consistent with the most matches.
pub fn hough_init(matches: &[Match], th: &HoughThresholds) -> Result<HoughResult> {
    let min_votes = th.min_votes.max(1);
    if matches.len() < min_votes.max(3) {
        return Err(Error::InitializationFailed(format!(
            "need at least 3 matches, got {}",
            matches.len()
        )));
    }
    let votes: Vec<Vote> = matches
        .iter()
        .map(|m| Vote {
            rotation: m.t_nm.rotation,
            log_scale: m.t_nm.scale.ln(),
            translation: m.t_nm.translation,
        })
        .collect();

    let mut cells: HashMap<[i64; 7], Vec<usize>> = HashMap::new();
    for (i, (m, v)) in matches.iter().zip(&votes).enumerate() {
        let w = rotation_vector(&m.t_nm.rotation);
        let q = |x: f64, step: f64| (x / step).floor() as i64;
        let key = [
            q(w[0], th.rotation_bin),
            q(w[1], th.rotation_bin),
            q(w[2], th.rotation_bin),
            q(v.log_scale, th.log_scale_bin),
            q(v.translation[0], th.translation_bin),
            q(v.translation[1], th.translation_bin),
            q(v.translation[2], th.translation_bin),
        ];
        cells.entry(key).or_default().push(i);
    }
    let mut seeds: Vec<([i64; 7], Vec<usize>)> = cells.into_iter().collect();
    seeds.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));

    let mut best: Option<(SimilarityTransform, usize)> = None;
    for (_, members) in &seeds {
        let mode = mean_shift(&votes, members, th);
        let t = SimilarityTransform {
            rotation: mode.0,
            scale: mode.1.exp(),
            translation: mode.2,
        };
        let count = matches.iter().filter(|m| is_inlier(&t, m, th)).count();
        if best.as_ref().map_or(true, |(_, c)| count > *c) {
            best = Some((t, count));
        }
    }
    let (t_star, count) = best.expect("at least one accumulator cell");
    if count < min_votes.max(3) {
        return Err(Error::InitializationFailed(format!(
            "best transform has {count} consistent matches; need at least {}",
            min_votes.max(3)
        )));
    }
    let inliers: Vec<Match> = matches.iter().filter(|m| is_inlier(&t_star, m, th)).copied().collect();
    Ok(HoughResult {
        t_star,
        vote_count: inliers.len(),
        inliers,
    })
}

fn mean_shift(votes: &[Vote], seed: &[usize], th: &HoughThresholds) -> (Mat3, f64, Vec3) {
    let mut mode = mean_transform(votes, seed);
    let mut members: Vec<usize> = seed.to_vec();
    for _ in 0..50 {
        let window: Vec<usize> = (0..votes.len())
            .filter(|&i| {
                let v = &votes[i];
                rotation_angle(&mode.0, &v.rotation) <= th.rotation_bin
                    && (v.log_scale - mode.1).abs() <= th.log_scale_bin
                    && (v.translation - mode.2).norm() <= th.translation_bin
            })
            .collect();
        if window.is_empty() || window == members {
            break;
        }
        mode = mean_transform(votes, &window);
        members = window;
    }
    mode
}
