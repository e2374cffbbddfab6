//! Global similarity transforms and the 7-parameter feature geometry they act on.

use nalgebra::{Rotation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::{Mat3, Vec3};

/// Tolerance used when validating that a matrix is a proper rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: Mat3,
    pub scale: f64,
    pub translation: Vec3,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            scale: 1.0,
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform, rejecting non-rotations and non-positive scales.
    pub fn new(rotation: Mat3, scale: f64, translation: Vec3) -> Result<Self> {
        let t = Self {
            rotation,
            scale,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            translation,
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid(format!("scale must be positive, got {}", self.scale)));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("translation is not finite"));
        }
        if !is_rotation(&self.rotation, ROTATION_TOLERANCE) {
            return Err(Error::invalid("rotation is not in SO(3)"));
        }
        Ok(())
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.scale * (self.rotation * x) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            scale: 1.0 / self.scale,
            translation: -(rt * self.translation) / self.scale,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            scale: self.scale * other.scale,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    /// Maps a feature geometry: location, scale and frame move together.
    pub fn apply_geometry(&self, g: &Geometry) -> Geometry {
        Geometry {
            x: self.apply(&g.x),
            sigma: self.scale * g.sigma,
            frame: Frame::from_matrix_unchecked(self.rotation * g.frame.matrix()),
        }
    }

    /// Rotation vector (axis times angle, radians) of the rotation part.
    pub fn rotation_vector(&self) -> Vec3 {
        rotation_vector(&self.rotation)
    }
}

/// Feature geometry `{Θ, σ, x}`: a scaled, oriented reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub x: Vec3,
    pub sigma: f64,
    pub frame: Frame,
}

pub fn is_rotation(m: &Mat3, tol: f64) -> bool {
    if !m.iter().all(|v| v.is_finite()) {
        return false;
    }
    let orth = (m * m.transpose() - Mat3::identity()).amax();
    orth < tol && (m.determinant() - 1.0).abs() < tol
}

pub fn rotation_vector(m: &Mat3) -> Vec3 {
    let r = Rotation3::from_matrix_unchecked(*m);
    r.scaled_axis()
}

/// Nearest rotation (in Frobenius norm) to an arbitrary 3×3 matrix.
pub fn project_to_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * v_t).determinant().signum();
    u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * v_t
}

/// `Rz(z) * Ry(y) * Rx(x)` with angles in radians.
pub fn rotation_from_euler(x: f64, y: f64, z: f64) -> Mat3 {
    *Rotation3::from_euler_angles(x, y, z).matrix()
}

/// Inverse of [`rotation_from_euler`], returning `(x, y, z)`.
pub fn euler_from_rotation(m: &Mat3) -> (f64, f64, f64) {
    Rotation3::from_matrix_unchecked(*m).euler_angles()
}

pub fn rotation_from_quaternion(q: &UnitQuaternion<f64>) -> Mat3 {
    *q.to_rotation_matrix().matrix()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SimilarityTransform {
        SimilarityTransform::new(
            rotation_from_euler(0.3, -0.2, 0.5),
            1.7,
            Vec3::new(1.0, -2.0, 3.5),
        )
        .unwrap()
    }

    #[test]
    fn inverse_round_trips_points() {
        let t = sample();
        let x = Vec3::new(4.0, 5.0, -6.0);
        let back = t.inverse().apply(&t.apply(&x));
        assert!((back - x).norm() < 1e-12);
    }

    #[test]
    fn compose_applies_right_first() {
        let a = sample();
        let b = SimilarityTransform::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let x = Vec3::new(0.5, 0.25, -1.0);
        let lhs = a.compose(&b).apply(&x);
        let rhs = a.apply(&b.apply(&x));
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn rejects_reflection_and_bad_scale() {
        let refl = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
        assert!(SimilarityTransform::new(refl, 1.0, Vec3::zeros()).is_err());
        assert!(SimilarityTransform::new(Mat3::identity(), 0.0, Vec3::zeros()).is_err());
    }

    #[test]
    fn euler_round_trip() {
        let m = rotation_from_euler(0.2, -0.4, 0.35);
        let (x, y, z) = euler_from_rotation(&m);
        assert!((x - 0.2).abs() < 1e-12 && (y + 0.4).abs() < 1e-12 && (z - 0.35).abs() < 1e-12);
        let rz = Rotation3::from_axis_angle(&nalgebra::Vector3::z_axis(), 0.35);
        let ry = Rotation3::from_axis_angle(&nalgebra::Vector3::y_axis(), -0.4);
        let rx = Rotation3::from_axis_angle(&nalgebra::Vector3::x_axis(), 0.2);
        let expected = (rz * ry * rx).into_inner();
        assert!((m - expected).amax() < 1e-12);
    }

    #[test]
    fn projection_yields_proper_rotation() {
        let m = Mat3::new(1.0, 0.1, 0.0, -0.2, 0.9, 0.05, 0.0, 0.0, -1.1);
        assert!(is_rotation(&project_to_rotation(&m), 1e-12));
    }
}
