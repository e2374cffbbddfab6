//! Registration accuracy metrics.

use crate::error::{Error, Result};
use crate::matching::Match;
use crate::transform::{rotation_vector, SimilarityTransform};
use crate::volume::ScalarVolume;
use crate::Vec3;

pub type StateHistogram = [[u64; 4]; 4];

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    /// Mean point registration error over the probes (mm).
    pub pre: f64,
    /// Sum of squared differences over the overlap, when volumes were given.
    pub ssd: Option<f64>,
    pub overlap_voxels: usize,
    pub rotation_error_deg: [f64; 3],
    pub translation_error: [f64; 3],
    pub inlier_count: usize,
    pub runtime: f64,
    pub state_histogram: StateHistogram,
}

/// Mean of `‖t_est(x) - t_gt(x)‖` over the probes.
pub fn point_registration_error(t_est: &SimilarityTransform, t_gt: &SimilarityTransform, probes: &[Vec3]) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::invalid("at least one probe point is required"));
    }
    let sum: f64 = probes.iter().map(|p| (t_est.apply(p) - t_gt.apply(p)).norm()).sum();
    Ok(sum / probes.len() as f64)
}

/// Absolute components, in degrees, of the rotation vector of `R_est R_gtᵀ`.
pub fn rotation_error_deg(t_est: &SimilarityTransform, t_gt: &SimilarityTransform) -> [f64; 3] {
    let w = rotation_vector(&(t_est.rotation * t_gt.rotation.transpose()));
    [0, 1, 2].map(|i| w[i].abs().to_degrees())
}

pub fn translation_error(t_est: &SimilarityTransform, t_gt: &SimilarityTransform) -> [f64; 3] {
    let d = t_est.translation - t_gt.translation;
    [d[0].abs(), d[1].abs(), d[2].abs()]
}

/// `Σ (fixed - moving ∘ t_est⁻¹)²` over fixed voxels whose preimage lies inside `moving`.
pub fn ssd(fixed: &ScalarVolume, moving: &ScalarVolume, t_est: &SimilarityTransform) -> Result<(f64, usize)> {
    let (warped, mask) = moving.resample_onto(t_est, fixed.dims(), fixed.spacing(), fixed.origin())?;
    let mut sum = 0.0;
    let mut count = 0;
    for ((a, b), &inside) in fixed.data().iter().zip(warped.data()).zip(&mask) {
        if inside {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    Ok((sum, count))
}

/// `n³` points spanning the volume's bounding box.
pub fn grid_probes(vol: &ScalarVolume, n: usize) -> Vec<Vec3> {
    let (lo, hi) = vol.bounds();
    let n = n.max(1);
    let at = |a: usize, i: usize| {
        if n == 1 {
            0.5 * (lo[a] + hi[a])
        } else {
            lo[a] + (hi[a] - lo[a]) * i as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                out.push(Vec3::new(at(0, i), at(1, j), at(2, k)));
            }
        }
    }
    out
}

/// Transform accuracy, plus SSD when both volumes are supplied. Inlier count, runtime
/// and histogram are left for the caller to fill in.
pub fn evaluate(
    t_est: &SimilarityTransform,
    t_gt: &SimilarityTransform,
    probes: &[Vec3],
    volumes: Option<(&ScalarVolume, &ScalarVolume)>,
) -> Result<EvaluationReport> {
    t_est.validate()?;
    t_gt.validate()?;
    let pre = point_registration_error(t_est, t_gt, probes)?;
    let (ssd, overlap_voxels) = match volumes {
        Some((f, m)) => {
            let (s, n) = ssd(f, m, t_est)?;
            (Some(s), n)
        }
        None => (None, 0),
    };
    Ok(EvaluationReport {
        pre,
        ssd,
        overlap_voxels,
        rotation_error_deg: rotation_error_deg(t_est, t_gt),
        translation_error: translation_error(t_est, t_gt),
        inlier_count: 0,
        runtime: 0.0,
        state_histogram: [[0; 4]; 4],
    })
}

/// Row 0 counts inliers by the moving state they matched at (fixed side is state 0).
pub fn state_histogram(inliers: &[Match]) -> StateHistogram {
    let mut h = [[0u64; 4]; 4];
    for m in inliers {
        h[0][m.moving_state as usize] += 1;
    }
    h
}

/// Row 0 from the forward run; column 0 of row `k` from the reverse run, whose moving
/// side is the forward fixed volume.
pub fn state_histogram_symmetric(forward: &[Match], reverse: &[Match]) -> StateHistogram {
    let mut h = state_histogram(forward);
    for m in reverse {
        h[m.moving_state as usize][0] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_estimate_has_zero_error() {
        let t = crate::phantom::random_similarity(1, (10.0, 30.0), (0.0, 10.0)).unwrap();
        let r = evaluate(&t, &t, &[Vec3::new(1.0, 2.0, 3.0)], None).unwrap();
        assert_eq!(r.pre, 0.0);
        assert_eq!(r.rotation_error_deg, [0.0; 3]);
        assert_eq!(r.translation_error, [0.0; 3]);
    }

    #[test]
    fn pure_translation_error() {
        let t = SimilarityTransform::from_translation(Vec3::new(3.0, 4.0, 0.0));
        let probes = [Vec3::zeros(), Vec3::new(10.0, -5.0, 2.0)];
        let pre = point_registration_error(&t, &SimilarityTransform::identity(), &probes).unwrap();
        assert!((pre - 5.0).abs() < 1e-12);
        assert!(point_registration_error(&t, &t, &[]).is_err());
    }

    #[test]
    fn probe_grid_covers_bounds() {
        let v = ScalarVolume::constant([5, 5, 5], [2.0; 3], [-4.0; 3], 0.0).unwrap();
        let g = grid_probes(&v, 5);
        assert_eq!(g.len(), 125);
        assert_eq!(g[0], Vec3::new(-4.0, -4.0, -4.0));
        assert_eq!(g[124], Vec3::new(4.0, 4.0, 4.0));
    }
}
