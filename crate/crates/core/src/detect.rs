//! Scale-space extrema of `|σ²∇²I|` and their Laplacian sign.

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use std::cmp::Ordering;

use crate::scale_space::{ScaleSpace, KERNEL_RADIUS_SIGMAS};
use crate::Vec3;

/// Refinement offsets beyond this (voxels or scale intervals) reject the candidate.
pub const MAX_REFINE_OFFSET: f64 = 0.6;
pub const DEFAULT_MAX_COUNT: usize = 6000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Location in world mm.
    pub x: Vec3,
    /// Scale in mm.
    pub sigma: f64,
    /// Sign of the Laplacian at the locus: +1 for dark blobs, -1 for bright ones.
    pub sign: i8,
    /// Refined scale-normalized Laplacian value.
    pub response: f64,
    /// Support sphere of radius `3σ` leaves the volume.
    pub border: bool,
}

/// Finds strict local extrema of the absolute response over the 80-voxel
/// space-scale neighbourhood, refines each with one Newton step on the 4D
/// quadratic fit and returns them sorted by descending `|response|` (then `x`, then σ).
pub fn detect_keypoints(ss: &ScaleSpace, min_abs_response: f64, max_count: usize) -> Vec<Keypoint> {
    let (lo, hi) = ss_bounds(ss);
    let mut jobs = Vec::new();
    for (o, oct) in ss.octaves().iter().enumerate() {
        for j in 1..oct.responses.len() - 1 {
            jobs.push((o, j));
        }
    }
    let mut kps: Vec<Keypoint> = jobs
        .par_iter()
        .flat_map_iter(|&(o, j)| scan_level(ss, o, j, min_abs_response, lo, hi))
        .collect();
    kps.sort_by(compare_keypoints);
    kps.truncate(max_count);
    kps
}

/// Deterministic ordering: descending `|response|`, then lexicographic location, then σ.
pub fn compare_keypoints(a: &Keypoint, b: &Keypoint) -> Ordering {
    b.response
        .abs()
        .total_cmp(&a.response.abs())
        .then_with(|| a.x[0].total_cmp(&b.x[0]))
        .then_with(|| a.x[1].total_cmp(&b.x[1]))
        .then_with(|| a.x[2].total_cmp(&b.x[2]))
        .then_with(|| a.sigma.total_cmp(&b.sigma))
}

fn ss_bounds(ss: &ScaleSpace) -> (Vec3, Vec3) {
    ss.octaves()[0].levels[0].volume.bounds()
}

fn scan_level(ss: &ScaleSpace, o: usize, j: usize, min_abs: f64, lo: Vec3, hi: Vec3) -> Vec<Keypoint> {
    let oct = &ss.octaves()[o];
    let below = &oct.responses[j - 1].volume;
    let here = &oct.responses[j].volume;
    let above = &oct.responses[j + 1].volume;
    let [nx, ny, nz] = here.dims();
    let mut found = Vec::new();
    for k in 1..nz - 1 {
        for jj in 1..ny - 1 {
            for i in 1..nx - 1 {
                let v = here.get(i, jj, k);
                let a = v.abs();
                if a <= min_abs || a == 0.0 {
                    continue;
                }
                if !is_strict_max(a, [below, here, above], i, jj, k) {
                    continue;
                }
                if let Some(kp) = refine(ss, o, j, i, jj, k, lo, hi) {
                    if kp.response.abs() > min_abs {
                        found.push(kp);
                    }
                }
            }
        }
    }
    found
}

fn is_strict_max(a: f64, stack: [&crate::ScalarVolume; 3], i: usize, j: usize, k: usize) -> bool {
    for (s, vol) in stack.iter().enumerate() {
        for dk in 0..3 {
            for dj in 0..3 {
                for di in 0..3 {
                    if s == 1 && di == 1 && dj == 1 && dk == 1 {
                        continue;
                    }
                    if vol.get(i + di - 1, j + dj - 1, k + dk - 1).abs() >= a {
                        return false;
                    }
                }
            }
        }
    }
    true
}

#[allow(clippy::too_many_arguments)]
fn refine(ss: &ScaleSpace, o: usize, j: usize, i: usize, jj: usize, k: usize, lo: Vec3, hi: Vec3) -> Option<Keypoint> {
    let oct = &ss.octaves()[o];
    let r = |dj: isize, di: isize, djj: isize, dk: isize| {
        oct.responses[(j as isize + dj) as usize].volume.get(
            (i as isize + di) as usize,
            (jj as isize + djj) as usize,
            (k as isize + dk) as usize,
        )
    };
    // coordinates: (x, y, z, scale)
    let at = |d: [isize; 4]| r(d[3], d[0], d[1], d[2]);
    let c = at([0; 4]);
    let mut g = Vector4::zeros();
    let mut h = Matrix4::zeros();
    for a in 0..4 {
        let mut p = [0isize; 4];
        let mut m = [0isize; 4];
        p[a] = 1;
        m[a] = -1;
        g[a] = 0.5 * (at(p) - at(m));
        h[(a, a)] = at(p) + at(m) - 2.0 * c;
        for b in (a + 1)..4 {
            let mut pp = [0isize; 4];
            let mut pm = [0isize; 4];
            let mut mp = [0isize; 4];
            let mut mm = [0isize; 4];
            pp[a] = 1;
            pp[b] = 1;
            pm[a] = 1;
            pm[b] = -1;
            mp[a] = -1;
            mp[b] = 1;
            mm[a] = -1;
            mm[b] = -1;
            let v = 0.25 * (at(pp) - at(pm) - at(mp) + at(mm));
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    let offset = -(h.try_inverse()? * g);
    if offset.iter().any(|v| !v.is_finite() || v.abs() > MAX_REFINE_OFFSET) {
        return None;
    }
    let response = c + 0.5 * g.dot(&offset);
    if response == 0.0 || !response.is_finite() {
        return None;
    }
    let vol = &oct.responses[j].volume;
    let x = vol.world_of(i as f64 + offset[0], jj as f64 + offset[1], k as f64 + offset[2]);
    let sigma = oct.response_sigma(j as f64 + offset[3]);
    let reach = KERNEL_RADIUS_SIGMAS * sigma;
    let border = (0..3).any(|a| x[a] - reach < lo[a] || x[a] + reach > hi[a]);
    Some(Keypoint {
        x,
        sigma,
        sign: if response > 0.0 { 1 } else { -1 },
        response,
        border,
    })
}
