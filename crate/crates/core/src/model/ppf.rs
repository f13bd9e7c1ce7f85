use nalgebra::UnitQuaternion;

use crate::cloud::OrientedPoint;
use crate::geometry::{angle_between, Point3, RigidTransform, Vector3};
use crate::Real;

/// Four-dimensional point pair feature with `d = p_r - p_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ppf<T: Real> {
    pub dist: T,
    pub angle_nr_d: T,
    pub angle_ns_d: T,
    pub angle_nr_ns: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("point pair feature undefined for coincident points")]
pub struct CoincidentPoints;

/// Feature of the ordered pair (`pr`, `ps`).
pub fn compute_ppf<T: Real>(pr: &OrientedPoint<T>, ps: &OrientedPoint<T>) -> Result<Ppf<T>, CoincidentPoints> {
    let d = pr.position - ps.position;
    let dist = d.norm();
    if dist == T::zero() {
        return Err(CoincidentPoints);
    }
    Ok(Ppf {
        dist,
        angle_nr_d: angle_between(&pr.normal, &d),
        angle_ns_d: angle_between(&ps.normal, &d),
        angle_nr_ns: angle_between(&pr.normal, &ps.normal),
    })
}

/// Quantization steps. `delta_dist_rel` is a fraction of the model
/// diameter; `delta_angle` is in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams<T: Real> {
    pub delta_dist_rel: T,
    pub delta_angle: T,
}

impl<T: Real> Default for QuantParams<T> {
    fn default() -> Self {
        Self {
            delta_dist_rel: T::of(0.025),
            delta_angle: T::from_degrees(5.0),
        }
    }
}

impl<T: Real> QuantParams<T> {
    pub fn angle_bins(&self) -> usize {
        (T::pi() / self.delta_angle).ceil().floor_index().max(1)
    }
}

/// Four bin indices packed 16 bits each: distance in the top word, then
/// the three angles in feature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PpfKey(pub u64);

impl PpfKey {
    pub fn from_bins(bins: [usize; 4]) -> Option<Self> {
        if bins.iter().any(|&b| b > u16::MAX as usize) {
            return None;
        }
        Some(Self(
            ((bins[0] as u64) << 48) | ((bins[1] as u64) << 32) | ((bins[2] as u64) << 16) | bins[3] as u64,
        ))
    }

    pub fn bins(&self) -> [usize; 4] {
        [
            (self.0 >> 48) as usize & 0xffff,
            (self.0 >> 32) as usize & 0xffff,
            (self.0 >> 16) as usize & 0xffff,
            self.0 as usize & 0xffff,
        ]
    }
}

/// Bin indices of a feature: `floor(value / step)`, with an exact 180 degree
/// angle clamped into the last bin.
pub fn quantize_bins<T: Real>(f: &Ppf<T>, diameter: T, q: &QuantParams<T>) -> [usize; 4] {
    let last = q.angle_bins() - 1;
    let abin = |a: T| (a / q.delta_angle).floor_index().min(last);
    [
        (f.dist / (q.delta_dist_rel * diameter)).floor_index(),
        abin(f.angle_nr_d),
        abin(f.angle_ns_d),
        abin(f.angle_nr_ns),
    ]
}

/// Hash key of a feature; `None` when the distance bin overflows 16 bits.
pub fn quantize_ppf<T: Real>(f: &Ppf<T>, diameter: T, q: &QuantParams<T>) -> Option<PpfKey> {
    PpfKey::from_bins(quantize_bins(f, diameter, q))
}

/// Rigid frame moving a reference point to the origin with its normal on +x.
#[derive(Debug, Clone, Copy)]
pub struct CanonicalFrame<T: Real> {
    rotation: UnitQuaternion<T>,
    origin: Point3<T>,
}

impl<T: Real> CanonicalFrame<T> {
    pub fn new(reference: &OrientedPoint<T>) -> Self {
        let rotation = UnitQuaternion::rotation_between(&reference.normal, &Vector3::x())
            .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::z_axis(), T::pi()));
        Self {
            rotation,
            origin: reference.position,
        }
    }

    #[inline]
    pub fn to_local(&self, p: &Point3<T>) -> Vector3<T> {
        self.rotation * (p - self.origin)
    }

    /// The frame as a transform `x -> R (x - p_r)`.
    pub fn transform(&self) -> RigidTransform<T> {
        RigidTransform::new(self.rotation, -(self.rotation * self.origin.coords))
    }

    /// Signed angle of `p`'s yz projection in this frame, measured from +y.
    #[inline]
    pub fn alpha(&self, p: &Point3<T>) -> Alpha<T> {
        let l = self.to_local(p);
        let yz = (l.y * l.y + l.z * l.z).sqrt();
        if yz <= T::default_epsilon() * T::of(16.0) * l.norm() {
            return Alpha {
                angle: T::zero(),
                degenerate: true,
            };
        }
        Alpha {
            angle: wrap_pi(l.z.atan2(l.y)),
            degenerate: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alpha<T: Real> {
    /// Angle in `(-pi, pi]`.
    pub angle: T,
    /// The other point lies on the normal axis; `angle` is 0 by convention.
    pub degenerate: bool,
}

/// Rotation angle of `other` about the normal axis of `pr`, see
/// [`CanonicalFrame::alpha`].
pub fn compute_alpha<T: Real>(pr: &OrientedPoint<T>, other: &Point3<T>) -> Alpha<T> {
    CanonicalFrame::new(pr).alpha(other)
}

/// Wraps an angle in radians into `(-pi, pi]`.
pub fn wrap_pi<T: Real>(a: T) -> T {
    let two_pi = T::two_pi();
    let mut r = a - two_pi * ((a + T::pi()) / two_pi).floor();
    // r in [-pi, pi); move the closed end to +pi
    if r <= -T::pi() {
        r += two_pi;
    }
    if r > T::pi() {
        r -= two_pi;
    }
    r
}

/// Model-to-scene pose aligning a model reference with a scene reference.
///
/// `alpha` is `alpha_m - alpha_s`; the model pair is rotated by `-alpha`
/// about the canonical x axis so its second point lands on the scene pair's
/// half-plane.
pub fn pose_from_alignment<T: Real>(model_frame: &CanonicalFrame<T>, scene_frame: &CanonicalFrame<T>, alpha: T) -> RigidTransform<T> {
    let rx = RigidTransform::from_rotation(UnitQuaternion::from_axis_angle(&Vector3::x_axis(), -alpha));
    scene_frame.transform().inverse() * rx * model_frame.transform()
}

/// Convenience wrapper building both frames.
pub fn pose_from_points<T: Real>(model_ref: &OrientedPoint<T>, scene_ref: &OrientedPoint<T>, alpha: T) -> RigidTransform<T> {
    pose_from_alignment(&CanonicalFrame::new(model_ref), &CanonicalFrame::new(scene_ref), alpha)
}
