//! Rigid transforms and small vector helpers.

use nalgebra::{Isometry3, Matrix3, Matrix4, Translation3, Unit, UnitQuaternion};
use rand::RngExt;
use std::ops::Mul;

use crate::Real;

pub type Point3<T> = nalgebra::Point3<T>;
pub type Vector3<T> = nalgebra::Vector3<T>;
pub type UnitVector3<T> = Unit<nalgebra::Vector3<T>>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("rotation block is not orthonormal (deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation block has determinant {0}, expected +1")]
    Reflection(f64),
    #[error("bottom row of homogeneous matrix must be [0 0 0 1]")]
    NotHomogeneous,
    #[error("matrix contains non-finite values")]
    NonFinite,
}

/// Unsigned angle between two vectors in `[0, pi]`. Neither needs to be unit.
#[inline]
pub fn angle_between<T: Real>(a: &Vector3<T>, b: &Vector3<T>) -> T {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Rotation + translation. Composition follows matrix products: `a * b`
/// applies `b` first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T: Real> {
    iso: Isometry3<T>,
}

impl<T: Real> Default for RigidTransform<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        Self {
            iso: Isometry3::identity(),
        }
    }

    pub fn new(rotation: UnitQuaternion<T>, translation: Vector3<T>) -> Self {
        Self {
            iso: Isometry3::from_parts(Translation3::from(translation), rotation),
        }
    }

    pub fn from_isometry(iso: Isometry3<T>) -> Self {
        Self { iso }
    }

    pub fn from_rotation(rotation: UnitQuaternion<T>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Rotation from a rotation vector (axis scaled by angle in radians).
    pub fn from_rotation_vector(rotvec: Vector3<T>, translation: Vector3<T>) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(rotvec), translation)
    }

    pub fn isometry(&self) -> &Isometry3<T> {
        &self.iso
    }

    pub fn rotation(&self) -> UnitQuaternion<T> {
        self.iso.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<T> {
        self.iso.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vector3<T> {
        self.iso.translation.vector
    }

    /// Rotation vector (log map of the rotation).
    pub fn rotation_vector(&self) -> Vector3<T> {
        self.iso.rotation.scaled_axis()
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self { iso: self.iso * other.iso }
    }

    pub fn inverse(&self) -> Self {
        Self { iso: self.iso.inverse() }
    }

    #[inline]
    pub fn transform_point(&self, p: &Point3<T>) -> Point3<T> {
        self.iso.transform_point(p)
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.iso.transform_vector(v)
    }

    #[inline]
    pub fn inverse_transform_point(&self, p: &Point3<T>) -> Point3<T> {
        self.iso.inverse_transform_point(p)
    }

    /// Rotation angle of this transform in `[0, pi]`.
    pub fn rotation_angle(&self) -> T {
        self.iso.rotation.angle()
    }

    /// Geodesic rotation distance to `other` in `[0, pi]`.
    pub fn rotation_distance(&self, other: &Self) -> T {
        self.iso.rotation.angle_to(&other.iso.rotation)
    }

    pub fn translation_distance(&self, other: &Self) -> T {
        (self.translation() - other.translation()).norm()
    }

    pub fn to_matrix(&self) -> Matrix4<T> {
        self.iso.to_homogeneous()
    }

    /// Builds a transform from a homogeneous matrix, checking that the
    /// rotation block is orthonormal within `tol` with determinant +1.
    pub fn from_matrix(m: &Matrix4<T>, tol: T) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let bottom_ok = m[(3, 0)].abs() <= tol && m[(3, 1)].abs() <= tol && m[(3, 2)].abs() <= tol && (m[(3, 3)] - T::one()).abs() <= tol;
        if !bottom_ok {
            return Err(GeometryError::NotHomogeneous);
        }
        let r: Matrix3<T> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
        if dev > tol {
            return Err(GeometryError::NotOrthonormal(dev.as_f64()));
        }
        let det = r.determinant();
        if det < T::zero() {
            return Err(GeometryError::Reflection(det.as_f64()));
        }
        let rot = UnitQuaternion::from_matrix_eps(&r, T::default_epsilon(), 100, UnitQuaternion::identity());
        let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
        Ok(Self::new(rot, t))
    }

    pub fn to_row_major(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix();
        let mut out = [[0.0; 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)].as_f64();
            }
        }
        out
    }

    pub fn from_row_major(rows: &[[f64; 4]; 4], tol: f64) -> Result<Self, GeometryError> {
        let m = Matrix4::from_fn(|r, c| T::of(rows[r][c]));
        Self::from_matrix(&m, T::of(tol))
    }

    pub fn cast<U: Real>(&self) -> RigidTransform<U> {
        let q = self.iso.rotation.quaternion();
        let quat = nalgebra::Quaternion::new(U::of(q.w.as_f64()), U::of(q.i.as_f64()), U::of(q.j.as_f64()), U::of(q.k.as_f64()));
        let t = self.translation();
        RigidTransform::new(
            UnitQuaternion::from_quaternion(quat),
            Vector3::new(U::of(t.x.as_f64()), U::of(t.y.as_f64()), U::of(t.z.as_f64())),
        )
    }
}

impl<T: Real> Mul for RigidTransform<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

impl<'a, T: Real> Mul<&'a RigidTransform<T>> for &'a RigidTransform<T> {
    type Output = RigidTransform<T>;
    fn mul(self, rhs: &RigidTransform<T>) -> RigidTransform<T> {
        self.compose(rhs)
    }
}

/// Uniformly distributed random rotation (normalized Gaussian quaternion).
pub fn random_rotation<T: Real, R: rand::Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<T> {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            let q = nalgebra::Quaternion::new(T::of(v[0]), T::of(v[1]), T::of(v[2]), T::of(v[3]));
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

/// Random rigid transform with uniform rotation and translation drawn
/// uniformly from `[-extent, extent]^3`.
pub fn random_transform<T: Real, R: rand::Rng + ?Sized>(rng: &mut R, extent: f64) -> RigidTransform<T> {
    let rot = random_rotation(rng);
    let t = Vector3::new(
        T::of(rng.random_range(-extent..=extent)),
        T::of(rng.random_range(-extent..=extent)),
        T::of(rng.random_range(-extent..=extent)),
    );
    RigidTransform::new(rot, t)
}
