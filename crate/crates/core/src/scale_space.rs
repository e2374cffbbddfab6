//! Gaussian scale-space pyramid with gradient and scale-normalized Laplacian probes.
//!
//! Each octave holds `INTERVALS + 3` blurred levels whose σ grows geometrically by
//! `2^(1/INTERVALS)`, so that level `INTERVALS` has exactly twice the octave's base σ.
//! The next octave starts from that level, subsampled by two along each axis.
//! Adjacent levels are differenced into `INTERVALS + 2` response volumes, each scaled
//! by `1 / (2^(1/INTERVALS) - 1)` so that it approximates `σ²∇²I`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::ScalarVolume;
use crate::Vec3;

/// Scale increments per octave.
pub const INTERVALS: usize = 3;
/// Blurred levels stored per octave (the intervals plus auxiliaries for extremum search).
pub const LEVELS_PER_OCTAVE: usize = INTERVALS + 3;
/// Smallest voxel count allowed along any axis of any octave.
pub const MIN_OCTAVE_DIM: usize = 8;
/// Gaussian kernels are truncated at `ceil(KERNEL_RADIUS_SIGMAS * σ)` voxels.
pub const KERNEL_RADIUS_SIGMAS: f64 = 3.0;
pub const DEFAULT_BASE_SIGMA: f64 = 1.6;

/// Ratio between successive level σ values.
pub fn level_ratio() -> f64 {
    2f64.powf(1.0 / INTERVALS as f64)
}

/// Multiplier turning a difference of adjacent levels into an estimate of `σ²∇²I`.
pub fn dog_to_log_factor() -> f64 {
    1.0 / (level_ratio() - 1.0)
}

/// `floor(log2(min dim)) - 3`, at least one.
pub fn default_num_octaves(dims: [usize; 3]) -> usize {
    let min = *dims.iter().min().unwrap_or(&1);
    let log2 = (usize::BITS - 1 - min.max(1).leading_zeros()) as usize;
    log2.saturating_sub(3).max(1)
}

/// Normalized, truncated sampled Gaussian of standard deviation `sigma` voxels.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (KERNEL_RADIUS_SIGMAS * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with clamp-to-edge boundaries; `sigma` is in voxels.
pub fn gaussian_blur(vol: &ScalarVolume, sigma: f64) -> ScalarVolume {
    if sigma <= 0.0 {
        return vol.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let mut out = vol.clone();
    for axis in 0..3 {
        out = convolve_axis(&out, &kernel, axis);
    }
    out
}

fn convolve_axis(vol: &ScalarVolume, kernel: &[f64], axis: usize) -> ScalarVolume {
    let dims = vol.dims();
    let [nx, ny, _] = dims;
    let radius = (kernel.len() / 2) as isize;
    let src = vol.data();
    let strides = [1, nx, nx * ny];
    let stride = strides[axis];
    let n_axis = dims[axis] as isize;
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            for i in 0..nx {
                let pos = [i, j, k][axis] as isize;
                let base = i + nx * j + nx * ny * k - pos as usize * stride;
                let mut acc = 0.0;
                for (t, w) in kernel.iter().enumerate() {
                    let q = (pos + t as isize - radius).clamp(0, n_axis - 1) as usize;
                    acc += w * src[base + q * stride];
                }
                slab[i + nx * j] = acc;
            }
        }
    });
    ScalarVolume::new(dims, vol.spacing(), vol.origin(), out).expect("blur preserves validity")
}

fn downsample(vol: &ScalarVolume) -> ScalarVolume {
    let d = vol.dims();
    let dims = [d[0] / 2, d[1] / 2, d[2] / 2];
    let spacing = vol.spacing().map(|s| 2.0 * s);
    let mut data = Vec::with_capacity(dims.iter().product());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                data.push(vol.get(2 * i, 2 * j, 2 * k));
            }
        }
    }
    ScalarVolume::new(dims, spacing, vol.origin(), data).expect("downsample preserves validity")
}

/// One blurred volume and its σ in world units.
#[derive(Debug, Clone)]
pub struct Level {
    pub sigma: f64,
    pub volume: ScalarVolume,
}

/// Scaled difference of two adjacent levels, approximating `σ²∇²I` at `sigma`
/// (the geometric mean of the two level σ values).
#[derive(Debug, Clone)]
pub struct ResponseLevel {
    pub sigma: f64,
    pub volume: ScalarVolume,
}

#[derive(Debug, Clone)]
pub struct Octave {
    /// Subsampling factor relative to the (isotropic) input.
    pub factor: usize,
    /// Voxel edge length in mm.
    pub voxel_size: f64,
    pub levels: Vec<Level>,
    pub responses: Vec<ResponseLevel>,
}

impl Octave {
    pub fn dims(&self) -> [usize; 3] {
        self.levels[0].volume.dims()
    }

    /// σ of response level `j` at fractional position `j + offset`.
    pub fn response_sigma(&self, position: f64) -> f64 {
        self.responses[0].sigma * level_ratio().powf(position)
    }
}

#[derive(Debug, Clone)]
pub struct ScaleSpace {
    base_sigma: f64,
    octaves: Vec<Octave>,
}

impl ScaleSpace {
    /// Builds the pyramid. Anisotropic inputs are first resampled to isotropic spacing.
    /// The input is treated as unblurred, so level 0 of octave 0 is blurred by `base_sigma`.
    pub fn build(volume: &ScalarVolume, base_sigma: f64, num_octaves: usize) -> Result<Self> {
        if !(base_sigma > 0.0 && base_sigma.is_finite()) {
            return Err(Error::invalid(format!("base sigma must be positive, got {base_sigma}")));
        }
        if num_octaves == 0 {
            return Err(Error::invalid("need at least one octave"));
        }
        let vol = volume.to_isotropic()?;
        let dims = vol.dims();
        let coarsest = dims.map(|d| d >> (num_octaves - 1));
        if coarsest.iter().any(|&d| d < MIN_OCTAVE_DIM) {
            return Err(Error::invalid(format!(
                "volume {dims:?} too small for {num_octaves} octaves (coarsest {coarsest:?}, need >= {MIN_OCTAVE_DIM} per axis)"
            )));
        }
        let h0 = vol.spacing()[0];
        let ratio = level_ratio();
        let factor = dog_to_log_factor();

        let mut octaves = Vec::with_capacity(num_octaves);
        let mut base = gaussian_blur(&vol, base_sigma / h0);
        for o in 0..num_octaves {
            let scale = (1usize << o) as f64;
            let voxel_size = h0 * scale;
            let sigma0 = base_sigma * scale;
            let mut levels = Vec::with_capacity(LEVELS_PER_OCTAVE);
            levels.push(Level {
                sigma: sigma0,
                volume: base,
            });
            for l in 1..LEVELS_PER_OCTAVE {
                let prev = &levels[l - 1];
                let sigma = sigma0 * ratio.powi(l as i32);
                let inc = (sigma * sigma - prev.sigma * prev.sigma).sqrt() / voxel_size;
                let volume = gaussian_blur(&prev.volume, inc);
                levels.push(Level { sigma, volume });
            }
            let responses = levels
                .windows(2)
                .map(|w| {
                    let data = w[1]
                        .volume
                        .data()
                        .iter()
                        .zip(w[0].volume.data())
                        .map(|(b, a)| (b - a) * factor)
                        .collect();
                    let v = &w[0].volume;
                    ResponseLevel {
                        sigma: (w[0].sigma * w[1].sigma).sqrt(),
                        volume: ScalarVolume::new(v.dims(), v.spacing(), v.origin(), data)
                            .expect("difference preserves validity"),
                    }
                })
                .collect();
            let next_base = if o + 1 < num_octaves {
                Some(downsample(&levels[INTERVALS].volume))
            } else {
                None
            };
            octaves.push(Octave {
                factor: 1 << o,
                voxel_size,
                levels,
                responses,
            });
            match next_base {
                Some(b) => base = b,
                None => break,
            }
        }
        Ok(Self { base_sigma, octaves })
    }

    pub fn base_sigma(&self) -> f64 {
        self.base_sigma
    }

    pub fn octaves(&self) -> &[Octave] {
        &self.octaves
    }

    pub fn sigma_range(&self) -> (f64, f64) {
        let lo = self.octaves[0].levels[0].sigma;
        let hi = self.octaves.last().unwrap().levels.last().unwrap().sigma;
        (lo, hi)
    }

    /// `(octave, level)` of the stored level whose σ is closest to `sigma` in log scale.
    pub fn nearest_level(&self, sigma: f64) -> Result<(usize, usize)> {
        let (lo, hi) = self.sigma_range();
        let slack = level_ratio().sqrt();
        if !(sigma >= lo / slack && sigma <= hi * slack) {
            return Err(Error::OutOfDomain(format!(
                "sigma {sigma} outside pyramid range [{lo}, {hi}]"
            )));
        }
        let target = sigma.ln();
        let mut best = (0, 0);
        let mut best_d = f64::INFINITY;
        for (o, oct) in self.octaves.iter().enumerate() {
            for (l, lev) in oct.levels.iter().enumerate() {
                let d = (lev.sigma.ln() - target).abs();
                if d < best_d - 1e-12 {
                    best_d = d;
                    best = (o, l);
                }
            }
        }
        Ok(best)
    }

    pub fn level(&self, octave: usize, level: usize) -> &Level {
        &self.octaves[octave].levels[level]
    }

    pub fn level_for(&self, sigma: f64) -> Result<&Level> {
        let (o, l) = self.nearest_level(sigma)?;
        Ok(self.level(o, l))
    }

    /// Gradient (intensity per mm) of the level nearest to `sigma`, trilinearly interpolated.
    pub fn gradient_at(&self, x: &Vec3, sigma: f64) -> Result<Vec3> {
        let level = self.level_for(sigma)?;
        level
            .gradient(x)
            .ok_or_else(|| Error::OutOfDomain(format!("point {x:?} outside the volume")))
    }

    /// Scale-normalized Laplacian `σ²∇²I(x, σ)`.
    ///
    /// When `sigma` coincides with a response level, the stored difference of Gaussians
    /// is interpolated. Otherwise a 6-neighbour stencil is applied to the nearest
    /// blurred level and scaled by that level's σ².
    pub fn laplacian_at(&self, x: &Vec3, sigma: f64) -> Result<f64> {
        let outside = || Error::OutOfDomain(format!("point {x:?} outside the volume"));
        for oct in &self.octaves {
            for r in &oct.responses {
                if ((r.sigma - sigma) / sigma).abs() < 1e-9 {
                    return r.volume.sample(x).ok_or_else(outside);
                }
            }
        }
        let level = self.level_for(sigma)?;
        level.laplacian(x).ok_or_else(outside)
    }
}

impl Level {
    fn voxel_size(&self) -> f64 {
        self.volume.spacing()[0]
    }

    /// Interpolated gradient at a world point; `None` outside the lattice.
    pub fn gradient(&self, x: &Vec3) -> Option<Vec3> {
        let c = self.volume.voxel_of(x);
        if !self.volume.contains_voxel_coord(&c) {
            return None;
        }
        Some(self.gradient_voxel(&c))
    }

    /// Interpolated gradient with the sampling point clamped into the lattice.
    pub fn gradient_clamped(&self, x: &Vec3) -> Vec3 {
        self.gradient_voxel(&self.volume.voxel_of(x))
    }

    fn gradient_voxel(&self, c: &Vec3) -> Vec3 {
        let h = self.voxel_size();
        interpolate_corners(&self.volume, c, |i, j, k| grid_gradient(&self.volume, i, j, k)) / h
    }

    /// `σ² ∇²` via the 6-neighbour stencil, trilinearly interpolated between grid points.
    pub fn laplacian(&self, x: &Vec3) -> Option<f64> {
        let c = self.volume.voxel_of(x);
        if !self.volume.contains_voxel_coord(&c) {
            return None;
        }
        let h = self.voxel_size();
        let lap = interpolate_corners(&self.volume, &c, |i, j, k| {
            Vec3::new(grid_laplacian(&self.volume, i, j, k), 0.0, 0.0)
        })[0];
        Some(lap / (h * h) * self.sigma * self.sigma)
    }
}

/// Central differences in voxel units; one-sided at the lattice edge.
pub fn grid_gradient(v: &ScalarVolume, i: usize, j: usize, k: usize) -> Vec3 {
    let dims = v.dims();
    let idx = [i, j, k];
    let mut g = Vec3::zeros();
    for a in 0..3 {
        if dims[a] == 1 {
            continue;
        }
        let mut lo = idx;
        let mut hi = idx;
        if idx[a] > 0 {
            lo[a] -= 1;
        }
        if idx[a] + 1 < dims[a] {
            hi[a] += 1;
        }
        let span = (hi[a] - lo[a]) as f64;
        g[a] = (v.get(hi[0], hi[1], hi[2]) - v.get(lo[0], lo[1], lo[2])) / span;
    }
    g
}

fn grid_laplacian(v: &ScalarVolume, i: usize, j: usize, k: usize) -> f64 {
    let (i, j, k) = (i as isize, j as isize, k as isize);
    let c = v.get_clamped(i, j, k);
    v.get_clamped(i + 1, j, k) + v.get_clamped(i - 1, j, k) + v.get_clamped(i, j + 1, k)
        + v.get_clamped(i, j - 1, k)
        + v.get_clamped(i, j, k + 1)
        + v.get_clamped(i, j, k - 1)
        - 6.0 * c
}

/// Trilinear blend of a per-grid-point vector quantity at continuous voxel coords
/// (clamped into the lattice).
fn interpolate_corners(v: &ScalarVolume, c: &Vec3, f: impl Fn(usize, usize, usize) -> Vec3) -> Vec3 {
    let dims = v.dims();
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let max = (dims[a] - 1) as f64;
        let x = c[a].clamp(0.0, max);
        let r = x.round();
        if (x - r).abs() < 1e-9 {
            base[a] = r as usize;
        } else {
            base[a] = x.floor() as usize;
            frac[a] = x - x.floor();
        }
    }
    let mut acc = Vec3::zeros();
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
        if wz == 0.0 {
            continue;
        }
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
            if wy == 0.0 {
                continue;
            }
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                if wx == 0.0 {
                    continue;
                }
                let i = (base[0] + dx).min(dims[0] - 1);
                let j = (base[1] + dy).min(dims[1] - 1);
                let k = (base[2] + dz).min(dims[2] - 1);
                acc += f(i, j, k) * (wx * wy * wz);
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_volume(n: usize, seed: u64) -> ScalarVolume {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScalarVolume::new([n; 3], [1.0; 3], [0.0; 3], data).unwrap()
    }

    #[test]
    fn kernel_is_normalized_and_truncated_at_three_sigma() {
        let k = gaussian_kernel(1.5);
        assert_eq!(k.len(), 2 * 5 + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn separable_blur_matches_dense_convolution() {
        let v = random_volume(8, 7);
        let sigma = 1.3;
        let blurred = gaussian_blur(&v, sigma);
        let k = gaussian_kernel(sigma);
        let r = (k.len() / 2) as isize;
        for kk in 0..8isize {
            for jj in 0..8isize {
                for ii in 0..8isize {
                    let mut acc = 0.0;
                    for c in -r..=r {
                        for b in -r..=r {
                            for a in -r..=r {
                                let w = k[(a + r) as usize] * k[(b + r) as usize] * k[(c + r) as usize];
                                acc += w * v.get_clamped(ii + a, jj + b, kk + c);
                            }
                        }
                    }
                    let got = blurred.get(ii as usize, jj as usize, kk as usize);
                    assert!((got - acc).abs() <= 1e-6 * acc.abs().max(1e-3), "{got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn default_octaves_follow_log2_rule() {
        assert_eq!(default_num_octaves([64, 64, 64]), 3);
        assert_eq!(default_num_octaves([128, 100, 90]), 3);
        assert_eq!(default_num_octaves([16, 16, 16]), 1);
    }

    #[test]
    fn rejects_degenerate_dims() {
        let v = ScalarVolume::constant([7, 16, 16], [1.0; 3], [0.0; 3], 1.0).unwrap();
        assert!(ScaleSpace::build(&v, 1.6, 1).is_err());
        let v = ScalarVolume::constant([32, 32, 32], [1.0; 3], [0.0; 3], 1.0).unwrap();
        assert!(ScaleSpace::build(&v, 1.6, 3).is_ok());
        assert!(ScaleSpace::build(&v, 1.6, 4).is_err());
    }

    #[test]
    fn pyramid_structure() {
        let v = random_volume(32, 3);
        let ss = ScaleSpace::build(&v, 1.6, 3).unwrap();
        assert_eq!(ss.octaves().len(), 3);
        for (o, oct) in ss.octaves().iter().enumerate() {
            assert_eq!(oct.levels.len(), LEVELS_PER_OCTAVE);
            assert_eq!(oct.responses.len(), LEVELS_PER_OCTAVE - 1);
            assert_eq!(oct.dims(), [32 >> o; 3]);
            let s0 = oct.levels[0].sigma;
            assert!((s0 - 1.6 * (1 << o) as f64).abs() < 1e-12);
            assert!((oct.levels[INTERVALS].sigma - 2.0 * s0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_outside_domain_is_an_error() {
        let v = random_volume(16, 1);
        let ss = ScaleSpace::build(&v, 1.6, 1).unwrap();
        assert!(ss.gradient_at(&Vec3::new(-1.0, 3.0, 3.0), 2.0).is_err());
        assert!(ss.gradient_at(&Vec3::new(3.0, 3.0, 3.0), 100.0).is_err());
        assert!(ss.gradient_at(&Vec3::new(3.0, 3.0, 3.0), 2.0).is_ok());
    }

    #[test]
    fn off_pyramid_laplacian_uses_stencil() {
        let v = ScalarVolume::from_fn([16; 3], [1.0; 3], [0.0; 3], |p| p[0] * p[0]).unwrap();
        let ss = ScaleSpace::build(&v, 1.6, 1).unwrap();
        let lev = ss.level(0, 0);
        let x = Vec3::new(8.0, 8.0, 8.0);
        let got = ss.laplacian_at(&x, 1.6).unwrap();
        // second difference of a blurred parabola is 2 in the interior
        assert!((got - 2.0 * lev.sigma * lev.sigma).abs() < 1e-6, "{got}");
    }
}
