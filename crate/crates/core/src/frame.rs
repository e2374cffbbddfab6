//! Orientation frames Θ ∈ SO(3), the two gradient-based estimators, and the four
//! discrete orientation states `{±θ̂₁, ±θ̂₂}` closed by the right-hand rule.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::detect::Keypoint;
use crate::error::{Error, Result};
use crate::scale_space::ScaleSpace;
use crate::{Mat3, Vec3};

pub const DEFAULT_WINDOW_FACTOR: f64 = 1.5;
/// Gradients weaker than this everywhere in the window carry no orientation.
pub const MIN_GRADIENT: f64 = 1e-12;
/// Eigenvalue ratios closer than this to 1 are treated as repeated.
pub const EIGEN_DEGENERACY: f64 = 1e-6;
/// Bins of the in-plane histogram used for the secondary axis.
pub const CIRCLE_BINS: usize = 32;
/// Lattice points per window standard deviation when sampling gradients.
const WINDOW_STEPS_PER_STD: f64 = 3.0;
/// Concentrations of the direction kernels (about 20° on the sphere, 15° on the circle).
const SPHERE_KAPPA: f64 = 8.0;
const CIRCLE_KAPPA: f64 = 15.0;
const MODE_ITERATIONS: usize = 50;

/// Axis reflections `(s₁, s₂)` applied to `(θ̂₁, θ̂₂)` for states 0..3.
pub const STATE_SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];

/// Orthonormal right-handed frame; the columns of the matrix are `θ̂₁, θ̂₂, θ̂₃`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame(Mat3);

impl Default for Frame {
    fn default() -> Self {
        Self::identity()
    }
}

impl Frame {
    pub fn identity() -> Self {
        Frame(Mat3::identity())
    }

    /// Orthonormalizes `(θ̂₁, θ̂₂)` by Gram-Schmidt and closes with `θ̂₃ = θ̂₁ × θ̂₂`.
    pub fn from_primary_axes(a1: &Vec3, a2: &Vec3) -> Result<Self> {
        let n1 = a1.norm();
        if !(n1 > 0.0 && n1.is_finite()) {
            return Err(Error::invalid("primary axis has zero length"));
        }
        let t1 = a1 / n1;
        let p = a2 - t1 * t1.dot(a2);
        let n2 = p.norm();
        if !(n2 > 1e-12 && n2.is_finite()) {
            return Err(Error::invalid("secondary axis is parallel to the primary axis"));
        }
        let t2 = p / n2;
        let t3 = t1.cross(&t2);
        Ok(Frame(Mat3::from_columns(&[t1, t2, t3])))
    }

    /// Wraps a matrix without checking; use [`Frame::validate`] on untrusted input.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Frame(m)
    }

    /// Wraps a matrix after checking orthonormality, handedness and the cross-product closure.
    pub fn from_matrix(m: Mat3, tol: f64) -> Result<Self> {
        let f = Frame(m);
        f.validate(tol)?;
        Ok(f)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if !self.0.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("frame has non-finite entries"));
        }
        for i in 0..3 {
            if (self.axis(i).norm() - 1.0).abs() >= tol {
                return Err(Error::invalid(format!("frame axis {i} is not unit length")));
            }
            for j in (i + 1)..3 {
                if self.axis(i).dot(&self.axis(j)).abs() >= tol {
                    return Err(Error::invalid(format!("frame axes {i} and {j} are not orthogonal")));
                }
            }
        }
        if (self.0.determinant() - 1.0).abs() >= tol {
            return Err(Error::invalid("frame is not right-handed"));
        }
        if (self.axis(0).cross(&self.axis(1)) - self.axis(2)).amax() >= tol {
            return Err(Error::invalid("third axis is not the cross product of the first two"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn axis(&self, i: usize) -> Vec3 {
        self.0.column(i).into()
    }

    /// Frame of orientation state `k` (0..3).
    pub fn state(&self, k: usize) -> Frame {
        let (s1, s2) = STATE_SIGNS[k];
        let a1 = self.axis(0) * s1;
        let a2 = self.axis(1) * s2;
        Frame(Mat3::from_columns(&[a1, a2, a1.cross(&a2)]))
    }

    /// Per-axis cosines `θ̂ᵢ(self) · θ̂ᵢ(other)`.
    pub fn axis_cosines(&self, other: &Frame) -> [f64; 3] {
        [0, 1, 2].map(|i| self.axis(i).dot(&other.axis(i)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationState {
    pub index: u8,
    pub frame: Frame,
}

/// The four states `(+,+), (+,−), (−,+), (−,−)` of `(θ̂₁, θ̂₂)`.
pub fn enumerate_states(base: &Frame) -> [OrientationState; 4] {
    [0, 1, 2, 3].map(|k| OrientationState {
        index: k as u8,
        frame: base.state(k),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum OrientationEstimator {
    /// Peaks of the spherical histogram of gradient directions.
    #[default]
    MaxGradient,
    /// Eigenvectors of the windowed gradient structure tensor.
    StructureTensor,
}

impl OrientationEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            OrientationEstimator::MaxGradient => "max_gradient",
            OrientationEstimator::StructureTensor => "structure_tensor",
        }
    }

    pub fn estimate(&self, ss: &ScaleSpace, kp: &Keypoint, window_factor: f64) -> Result<Frame> {
        match self {
            OrientationEstimator::MaxGradient => estimate_frame_max_gradient(ss, kp, window_factor),
            OrientationEstimator::StructureTensor => estimate_frame_structure_tensor(ss, kp, window_factor),
        }
    }
}

impl fmt::Display for OrientationEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrientationEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_gradient" | "max-gradient" => Ok(Self::MaxGradient),
            "structure_tensor" | "structure-tensor" => Ok(Self::StructureTensor),
            other => Err(Error::invalid(format!("unknown orientation estimator '{other}'"))),
        }
    }
}

/// A gradient sample and its window weight.
#[derive(Debug, Clone, Copy)]
pub struct WeightedGradient {
    pub gradient: Vec3,
    pub weight: f64,
}

/// Gradients on a keypoint-centred cubic lattice within `2 · window_factor · σ`,
/// weighted by a Gaussian of std `window_factor · σ`. Points outside the volume
/// are clamped to its edge.
pub fn window_gradients(ss: &ScaleSpace, kp: &Keypoint, window_factor: f64) -> Result<Vec<WeightedGradient>> {
    if !(window_factor > 0.0) {
        return Err(Error::invalid("window factor must be positive"));
    }
    let level = ss.level_for(kp.sigma)?;
    let std = window_factor * kp.sigma;
    let step = std / WINDOW_STEPS_PER_STD;
    let r = (2.0 * WINDOW_STEPS_PER_STD) as i32;
    let mut out = Vec::with_capacity(((2 * r + 1) as usize).pow(3));
    for c in -r..=r {
        for b in -r..=r {
            for a in -r..=r {
                let n2 = (a * a + b * b + c * c) as f64;
                if n2 > (r * r) as f64 {
                    continue;
                }
                let d = Vec3::new(a as f64, b as f64, c as f64) * step;
                let weight = (-d.norm_squared() / (2.0 * std * std)).exp();
                out.push(WeightedGradient {
                    gradient: level.gradient_clamped(&(kp.x + d)),
                    weight,
                });
            }
        }
    }
    Ok(out)
}

/// Face directions of an icosahedron subdivided twice (320 faces).
pub fn sphere_bins() -> &'static [Vec3] {
    static BINS: OnceLock<Vec<Vec3>> = OnceLock::new();
    BINS.get_or_init(|| icosphere_face_normals(2))
}

fn icosphere_face_normals(subdivisions: usize) -> Vec<Vec3> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts = Vec::new();
    for &s1 in &[-1.0, 1.0] {
        for &s2 in &[-1.0, 1.0] {
            verts.push(Vec3::new(0.0, s1, s2 * phi));
            verts.push(Vec3::new(s1, s2 * phi, 0.0));
            verts.push(Vec3::new(s2 * phi, 0.0, s1));
        }
    }
    let mut faces = Vec::new();
    let edge = |a: &Vec3, b: &Vec3| ((a - b).norm() - 2.0).abs() < 1e-9;
    for i in 0..12 {
        for j in (i + 1)..12 {
            for k in (j + 1)..12 {
                if edge(&verts[i], &verts[j]) && edge(&verts[j], &verts[k]) && edge(&verts[i], &verts[k]) {
                    faces.push([verts[i].normalize(), verts[j].normalize(), verts[k].normalize()]);
                }
            }
        }
    }
    for _ in 0..subdivisions {
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = (a + b).normalize();
            let bc = (b + c).normalize();
            let ca = (c + a).normalize();
            next.push([a, ab, ca]);
            next.push([ab, b, bc]);
            next.push([ca, bc, c]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    faces.iter().map(|[a, b, c]| (a + b + c).normalize()).collect()
}

fn argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Primary axis at the peak of the magnitude-weighted spherical histogram of gradient
/// directions, refined to the weighted mean direction of the peak bin's samples.
/// The secondary axis repeats this on a circular histogram of the gradient components
/// orthogonal to the primary axis. Both histograms are signed, so negating the image
/// negates both axes (orientation state 3).
pub fn estimate_frame_max_gradient(ss: &ScaleSpace, kp: &Keypoint, window_factor: f64) -> Result<Frame> {
    let samples = window_gradients(ss, kp, window_factor)?;
    frame_from_gradients_max(&samples)
}

pub fn frame_from_gradients_max(samples: &[WeightedGradient]) -> Result<Frame> {
    let dirs: Vec<(Vec3, f64)> = samples
        .iter()
        .filter_map(|s| {
            let mag = s.gradient.norm();
            (mag >= MIN_GRADIENT).then(|| (s.gradient / mag, s.weight * mag))
        })
        .collect();
    if dirs.is_empty() {
        return Err(Error::NoOrientation);
    }
    let bins = sphere_bins();
    let peak = argmax(bins.iter().map(|d| vmf_density(&dirs, d, SPHERE_KAPPA))).unwrap();
    let t1 = vmf_mode(&dirs, bins[peak], SPHERE_KAPPA);

    let (e1, e2) = plane_basis(&t1);
    let planar: Vec<(Vec3, f64)> = samples
        .iter()
        .filter_map(|s| {
            let p = s.gradient - t1 * t1.dot(&s.gradient);
            let mag = p.norm();
            (mag >= MIN_GRADIENT).then(|| (p / mag, s.weight * mag))
        })
        .collect();
    if planar.is_empty() {
        return Frame::from_primary_axes(&t1, &e1);
    }
    // start directions closed under (c, s) -> (-c, s) so that negated inputs pick the negated start
    let starts: Vec<Vec3> = circle_table().iter().map(|(c, s)| e1 * *c + e2 * *s).collect();
    let peak = argmax(starts.iter().map(|d| vmf_density(&planar, d, CIRCLE_KAPPA))).unwrap();
    let t2 = vmf_mode(&planar, starts[peak], CIRCLE_KAPPA);
    Frame::from_primary_axes(&t1, &t2)
}

fn circle_table() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let quarter = CIRCLE_BINS / 4;
        let base: Vec<(f64, f64)> = (0..quarter)
            .map(|i| {
                let a = (i as f64 + 0.5) * std::f64::consts::TAU / CIRCLE_BINS as f64;
                (a.cos(), a.sin())
            })
            .collect();
        let mut out = Vec::with_capacity(CIRCLE_BINS);
        out.extend(base.iter().copied());
        out.extend(base.iter().rev().map(|&(c, s)| (-c, s)));
        out.extend(base.iter().map(|&(c, s)| (-c, -s)));
        out.extend(base.iter().rev().map(|&(c, s)| (c, -s)));
        out
    })
}

fn vmf_density(dirs: &[(Vec3, f64)], d: &Vec3, kappa: f64) -> f64 {
    dirs.iter().map(|(u, w)| w * (kappa * (u.dot(d) - 1.0)).exp()).sum()
}

/// Mean shift of the von Mises-Fisher density of `dirs` from `start`.
fn vmf_mode(dirs: &[(Vec3, f64)], start: Vec3, kappa: f64) -> Vec3 {
    let mut t = start;
    for _ in 0..MODE_ITERATIONS {
        let acc = dirs
            .iter()
            .fold(Vec3::zeros(), |acc, (u, w)| acc + u * (w * (kappa * (u.dot(&t) - 1.0)).exp()));
        if acc.norm() == 0.0 {
            break;
        }
        let next = acc.normalize();
        let step = (next - t).norm();
        t = next;
        if step < 1e-12 {
            break;
        }
    }
    t
}

/// Deterministic orthonormal basis of the plane orthogonal to `n`.
fn plane_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n[0].abs() <= n[1].abs() && n[0].abs() <= n[2].abs() {
        Vec3::x()
    } else if n[1].abs() <= n[2].abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let e1 = (helper - n * n.dot(&helper)).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// Windowed structure tensor `Σ w ∇I ∇Iᵀ`.
pub fn structure_tensor(samples: &[WeightedGradient]) -> Mat3 {
    samples
        .iter()
        .fold(Mat3::zeros(), |acc, s| acc + s.gradient * s.gradient.transpose() * s.weight)
}

/// Eigenvector frame of the structure tensor around the keypoint.
pub fn estimate_frame_structure_tensor(ss: &ScaleSpace, kp: &Keypoint, window_factor: f64) -> Result<Frame> {
    let samples = window_gradients(ss, kp, window_factor)?;
    if samples.iter().all(|s| s.gradient.norm() < MIN_GRADIENT) {
        return Err(Error::NoOrientation);
    }
    frame_from_tensor(&structure_tensor(&samples))
}

/// Eigenvectors sorted by descending eigenvalue, each flipped so that its
/// largest-magnitude component is positive, closed with `θ̂₃ = θ̂₁ × θ̂₂`.
pub fn frame_from_tensor(t: &Mat3) -> Result<Frame> {
    let sym = (t + t.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let l = order.map(|i| eig.eigenvalues[i]);
    if !(l[0] > 0.0) || !l[0].is_finite() {
        return Err(Error::NoOrientation);
    }
    let repeated = |hi: f64, lo: f64| hi <= 0.0 || lo / hi > 1.0 - EIGEN_DEGENERACY;
    if repeated(l[0], l[1]) || l[1] <= 1e-12 * l[0] || repeated(l[1], l[2]) {
        return Err(Error::AmbiguousFrame(l));
    }
    let canon = |v: Vec3| {
        let i = (0..3).fold(0, |b, i| if v[i].abs() > v[b].abs() { i } else { b });
        if v[i] < 0.0 {
            -v
        } else {
            v
        }
    };
    let v1 = canon(eig.eigenvectors.column(order[0]).into());
    let v2 = canon(eig.eigenvectors.column(order[1]).into());
    Frame::from_primary_axes(&v1, &v2)
}
