//! Dense scalar volumes in world (mm) coordinates.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::transform::SimilarityTransform;
use crate::Vec3;

/// Fractional voxel coordinates closer than this to an integer are snapped,
/// so that exact grid hits return stored values untouched.
const GRID_SNAP: f64 = 1e-9;

/// A 3D intensity grid. Data are stored x-fastest: `data[i + nx * (j + ny * k)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<f64>,
}

impl ScalarVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("dims must be positive, got {dims:?}")));
        }
        let len = dims[0] * dims[1] * dims[2];
        if data.len() != len {
            return Err(Error::invalid(format!(
                "data length {} does not match dims {:?} ({len})",
                data.len(),
                dims
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("origin is not finite"));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite intensity at index {pos}")));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            data,
        })
    }

    pub fn constant(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], value: f64) -> Result<Self> {
        Self::new(dims, spacing, origin, vec![value; dims.iter().product()])
    }

    /// Samples `f` at every voxel center (world coordinates).
    pub fn from_fn<F>(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], f: F) -> Result<Self>
    where
        F: Fn(Vec3) -> f64 + Sync,
    {
        let [nx, ny, _] = dims;
        let mut data = vec![0.0; dims.iter().product()];
        data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
            for j in 0..ny {
                for i in 0..nx {
                    let p = Vec3::new(
                        origin[0] + i as f64 * spacing[0],
                        origin[1] + j as f64 * spacing[1],
                        origin[2] + k as f64 * spacing[2],
                    );
                    slab[i + nx * j] = f(p);
                }
            }
        });
        Self::new(dims, spacing, origin, data)
    }

    /// World origin placed so that the volume center sits at (0, 0, 0).
    pub fn centered_origin(dims: [usize; 3], spacing: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| -0.5 * (dims[a] - 1) as f64 * spacing[a])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    /// Value at a voxel index with each coordinate clamped into range.
    #[inline]
    pub fn get_clamped(&self, i: isize, j: isize, k: isize) -> f64 {
        let c = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        self.get(c(i, self.dims[0]), c(j, self.dims[1]), c(k, self.dims[2]))
    }

    pub fn world_of(&self, i: f64, j: f64, k: f64) -> Vec3 {
        Vec3::new(
            self.origin[0] + i * self.spacing[0],
            self.origin[1] + j * self.spacing[1],
            self.origin[2] + k * self.spacing[2],
        )
    }

    /// Continuous voxel coordinates of a world point.
    pub fn voxel_of(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        )
    }

    /// World-space corner extents `(min, max)` of the voxel-center lattice.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let lo = Vec3::from(self.origin);
        let hi = self.world_of(
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        );
        (lo, hi)
    }

    pub fn contains_voxel_coord(&self, c: &Vec3) -> bool {
        (0..3).all(|a| c[a] >= -GRID_SNAP && c[a] <= (self.dims[a] - 1) as f64 + GRID_SNAP)
    }

    /// Trilinear interpolation at a world point; `None` outside the lattice.
    pub fn sample(&self, p: &Vec3) -> Option<f64> {
        let c = self.voxel_of(p);
        if !self.contains_voxel_coord(&c) {
            return None;
        }
        Some(self.sample_voxel_clamped(&c))
    }

    /// Trilinear interpolation at continuous voxel coordinates, clamping to the edge.
    pub fn sample_voxel_clamped(&self, c: &Vec3) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let (b, f) = split_coord(c[a], self.dims[a]);
            base[a] = b;
            frac[a] = f;
        }
        let [i, j, k] = base;
        let [fx, fy, fz] = frac;
        let ni = (i + 1).min(self.dims[0] - 1);
        let nj = (j + 1).min(self.dims[1] - 1);
        let nk = (k + 1).min(self.dims[2] - 1);
        let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
        let c00 = lerp(self.get(i, j, k), self.get(ni, j, k), fx);
        let c10 = lerp(self.get(i, nj, k), self.get(ni, nj, k), fx);
        let c01 = lerp(self.get(i, j, nk), self.get(ni, j, nk), fx);
        let c11 = lerp(self.get(i, nj, nk), self.get(ni, nj, nk), fx);
        let c0 = lerp(c00, c10, fy);
        let c1 = lerp(c01, c11, fy);
        lerp(c0, c1, fz)
    }

    pub fn negated(&self) -> Self {
        self.map(|v| -v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        Self {
            data: self.data.par_iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Resamples onto this volume's own grid: output voxel `v` receives the input at `t⁻¹(v)`.
    /// Samples falling outside the input lattice are filled with 0.
    pub fn resample(&self, t: &SimilarityTransform) -> Result<Self> {
        let (vol, _) = self.resample_onto(t, self.dims, self.spacing, self.origin)?;
        Ok(vol)
    }

    /// Resamples onto an arbitrary target grid, also returning the mask of voxels
    /// whose preimage fell inside the input lattice.
    pub fn resample_onto(
        &self,
        t: &SimilarityTransform,
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
    ) -> Result<(Self, Vec<bool>)> {
        t.validate()?;
        let inv = t.inverse();
        let [nx, ny, _] = dims;
        let n = dims.iter().product::<usize>();
        let mut data = vec![0.0; n];
        let mut mask = vec![false; n];
        data.par_chunks_mut(nx * ny)
            .zip(mask.par_chunks_mut(nx * ny))
            .enumerate()
            .for_each(|(k, (slab, mslab))| {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = Vec3::new(
                            origin[0] + i as f64 * spacing[0],
                            origin[1] + j as f64 * spacing[1],
                            origin[2] + k as f64 * spacing[2],
                        );
                        if let Some(v) = self.sample(&inv.apply(&p)) {
                            slab[i + nx * j] = v;
                            mslab[i + nx * j] = true;
                        }
                    }
                }
            });
        Ok((Self::new(dims, spacing, origin, data)?, mask))
    }

    /// Resamples to isotropic spacing equal to the smallest input spacing,
    /// keeping the same world origin and covering the same extent.
    pub fn to_isotropic(&self) -> Result<Self> {
        let h = self.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
        if self.spacing.iter().all(|&s| s == h) {
            return Ok(self.clone());
        }
        let dims = [0, 1, 2].map(|a| {
            let extent = (self.dims[a] - 1) as f64 * self.spacing[a];
            (extent / h + GRID_SNAP).floor() as usize + 1
        });
        let (vol, _) = self.resample_onto(&SimilarityTransform::identity(), dims, [h; 3], self.origin)?;
        Ok(vol)
    }
}

fn split_coord(c: f64, n: usize) -> (usize, f64) {
    let max = (n - 1) as f64;
    let c = c.clamp(0.0, max);
    let r = c.round();
    if (c - r).abs() < GRID_SNAP {
        return (r as usize, 0.0);
    }
    let b = c.floor();
    (b as usize, c - b)
}
