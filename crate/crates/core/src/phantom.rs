//! Seeded synthetic data: Gaussian-blob phantoms and random similarity transforms.

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::transform::{rotation_from_euler, rotation_from_quaternion, SimilarityTransform};
use crate::volume::ScalarVolume;
use crate::{Mat3, Vec3};

pub const MIN_BLOB_WIDTH: f64 = 2.0;
pub const MAX_BLOB_WIDTH: f64 = 8.0;
/// Blob centers lie in a ball of this fraction of the smallest physical extent.
pub const CENTER_RADIUS_FRACTION: f64 = 0.45;
/// Centers are redrawn until they sit at least the sum of the two largest widths apart.
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub center: Vec3,
    /// Standard deviations along the blob's own axes (mm).
    pub widths: Vec3,
    /// Columns are the blob axes.
    pub rotation: Mat3,
    pub amplitude: f64,
}

impl Blob {
    pub fn value(&self, p: &Vec3) -> f64 {
        let local = self.rotation.transpose() * (p - self.center);
        let q = local.component_div(&self.widths);
        self.amplitude * (-0.5 * q.norm_squared()).exp()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_rotation(rng: &mut impl Rng) -> Mat3 {
    // Normalized 4D Gaussian is uniform on the unit quaternion sphere.
    let mut q = [0.0f64; 4];
    loop {
        for v in q.iter_mut() {
            let (u1, u2): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
            *v = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
            return rotation_from_quaternion(&uq);
        }
    }
}

/// Blob parameters drawn for `seed` inside a volume of the given physical geometry.
pub fn phantom_blobs(seed: u64, num_blobs: usize, dims: [usize; 3], spacing: [f64; 3]) -> Result<Vec<Blob>> {
    if num_blobs == 0 {
        return Err(Error::invalid("num_blobs must be at least 1"));
    }
    let extent = (0..3).map(|a| (dims[a].max(1) - 1) as f64 * spacing[a]).fold(f64::INFINITY, f64::min);
    let radius = CENTER_RADIUS_FRACTION * extent;
    let mut rng = rng(seed);
    let mut blobs: Vec<Blob> = Vec::with_capacity(num_blobs);
    for _ in 0..num_blobs {
        let widths = Vec3::from_fn(|_, _| rng.gen_range(MIN_BLOB_WIDTH..=MAX_BLOB_WIDTH));
        let rotation = random_rotation(&mut rng);
        let amplitude = rng.gen_range(0.5..=1.0);
        let mut center = Vec3::zeros();
        for _ in 0..PLACEMENT_ATTEMPTS {
            center = loop {
                let c = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                if c.norm_squared() <= 1.0 {
                    break c * radius;
                }
            };
            let clear = blobs
                .iter()
                .all(|b| (b.center - center).norm() >= b.widths.max() + widths.max());
            if clear {
                break;
            }
        }
        blobs.push(Blob {
            center,
            widths,
            rotation,
            amplitude,
        });
    }
    Ok(blobs)
}

pub fn render_blobs(blobs: &[Blob], dims: [usize; 3], spacing: [f64; 3]) -> Result<ScalarVolume> {
    let origin = ScalarVolume::centered_origin(dims, spacing);
    ScalarVolume::from_fn(dims, spacing, origin, |p| blobs.iter().map(|b| b.value(&p)).sum())
}

/// Sum of `num_blobs` anisotropic Gaussian blobs on a grid centered on the world origin.
pub fn make_phantom(seed: u64, num_blobs: usize, dims: [usize; 3], spacing: [f64; 3]) -> Result<ScalarVolume> {
    let blobs = phantom_blobs(seed, num_blobs, dims, spacing)?;
    render_blobs(&blobs, dims, spacing)
}

/// `R = Rz Ry Rx` with each angle magnitude uniform in `rot_range_deg` and a random
/// sign; each translation component has magnitude uniform in `trans_range_mm`; unit scale.
pub fn random_similarity(seed: u64, rot_range_deg: (f64, f64), trans_range_mm: (f64, f64)) -> Result<SimilarityTransform> {
    let (angles, t) = random_similarity_params(seed, rot_range_deg, trans_range_mm)?;
    SimilarityTransform::new(rotation_from_euler(angles[0], angles[1], angles[2]), 1.0, t)
}

/// The per-axis angles `(x, y, z)` in radians and translation drawn by [`random_similarity`].
pub fn random_similarity_params(
    seed: u64,
    rot_range_deg: (f64, f64),
    trans_range_mm: (f64, f64),
) -> Result<([f64; 3], Vec3)> {
    let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi;
    if !ok(rot_range_deg) || !ok(trans_range_mm) {
        return Err(Error::invalid(format!(
            "ranges must satisfy 0 <= lo <= hi, got {rot_range_deg:?} and {trans_range_mm:?}"
        )));
    }
    let mut rng = rng(seed);
    let mut draw = |(lo, hi): (f64, f64)| {
        let mag = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        if rng.gen::<bool>() {
            mag
        } else {
            -mag
        }
    };
    let angles: [f64; 3] = std::array::from_fn(|_| draw(rot_range_deg).to_radians());
    let t: [f64; 3] = std::array::from_fn(|_| draw(trans_range_mm));
    Ok((angles, Vec3::new(t[0], t[1], t[2])))
}

/// Zeroes a ball of `fraction` of the volume at a random center that keeps it inside.
pub fn occlude_sphere(vol: &ScalarVolume, seed: u64, fraction: f64) -> Result<ScalarVolume> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("occlusion fraction must lie in [0, 1), got {fraction}")));
    }
    let dims = vol.dims();
    let sp = vol.spacing();
    let total: f64 = (0..3).map(|a| dims[a] as f64 * sp[a]).product();
    let radius = (3.0 * fraction * total / (4.0 * std::f64::consts::PI)).cbrt();
    let (lo, hi) = vol.bounds();
    let mut rng = rng(seed);
    let center = Vec3::from_fn(|a, _| {
        let (a0, a1) = (lo[a] + radius, hi[a] - radius);
        if a1 > a0 {
            rng.gen_range(a0..=a1)
        } else {
            0.5 * (lo[a] + hi[a])
        }
    });
    let mut out = vol.clone();
    let [nx, ny, nz] = dims;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if (vol.world_of(i as f64, j as f64, k as f64) - center).norm() <= radius {
                    let idx = vol.index(i, j, k);
                    out.data_mut()[idx] = 0.0;
                }
            }
        }
    }
    Ok(out)
}
