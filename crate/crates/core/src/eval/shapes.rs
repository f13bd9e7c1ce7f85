//! Procedural solids built from boxes, cylinders and spheres, sampled on
//! their outer surface with analytic normals.

use nalgebra::UnitQuaternion;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::geometry::{Point3, Vector3};

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Cuboid {
        center: Point3<f64>,
        half: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
    },
    /// Capped cylinder around `axis` through `center`.
    Cylinder {
        center: Point3<f64>,
        axis: Vector3<f64>,
        radius: f64,
        half_length: f64,
    },
    Sphere {
        center: Point3<f64>,
        radius: f64,
    },
}

impl Primitive {
    fn frame(&self) -> (Point3<f64>, UnitQuaternion<f64>) {
        match self {
            Primitive::Cuboid { center, rotation, .. } => (*center, *rotation),
            Primitive::Cylinder { center, axis, .. } => (
                *center,
                UnitQuaternion::rotation_between(&Vector3::z(), axis)
                    .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)),
            ),
            Primitive::Sphere { center, .. } => (*center, UnitQuaternion::identity()),
        }
    }

    /// Strictly inside, at least `margin` from the boundary.
    pub fn contains(&self, p: &Point3<f64>, margin: f64) -> bool {
        let (c, r) = self.frame();
        let l = r.inverse() * (p - c);
        match self {
            Primitive::Cuboid { half, .. } => (0..3).all(|a| l[a].abs() < half[a] - margin),
            Primitive::Cylinder { radius, half_length, .. } => l.xy().norm() < radius - margin && l.z.abs() < half_length - margin,
            Primitive::Sphere { radius, .. } => l.norm() < radius - margin,
        }
    }

    /// Surface samples `(position, outward normal)` about `spacing` apart.
    pub fn sample(&self, spacing: f64, rng: &mut ChaCha8Rng) -> Vec<(Point3<f64>, Vector3<f64>)> {
        let (c, r) = self.frame();
        let mut local: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::new();
        let jitter = |rng: &mut ChaCha8Rng| 0.3 * (rng.random::<f64>() - 0.5);
        match self {
            Primitive::Cuboid { half, .. } => {
                for axis in 0..3 {
                    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                    let nu = (2.0 * half[u] / spacing).ceil().max(1.0) as usize;
                    let nv = (2.0 * half[v] / spacing).ceil().max(1.0) as usize;
                    for sign in [-1.0, 1.0] {
                        for i in 0..nu {
                            for j in 0..nv {
                                let mut p = Vector3::zeros();
                                p[axis] = sign * half[axis];
                                p[u] = -half[u] + 2.0 * half[u] * ((i as f64 + 0.5 + jitter(rng)) / nu as f64);
                                p[v] = -half[v] + 2.0 * half[v] * ((j as f64 + 0.5 + jitter(rng)) / nv as f64);
                                let mut n = Vector3::zeros();
                                n[axis] = sign;
                                local.push((p, n));
                            }
                        }
                    }
                }
            }
            Primitive::Cylinder { radius, half_length, .. } => {
                let nt = (std::f64::consts::TAU * radius / spacing).ceil().max(3.0) as usize;
                let nh = (2.0 * half_length / spacing).ceil().max(1.0) as usize;
                for i in 0..nt {
                    for j in 0..nh {
                        let a = std::f64::consts::TAU * (i as f64 + 0.5 + jitter(rng)) / nt as f64;
                        let z = -half_length + 2.0 * half_length * (j as f64 + 0.5 + jitter(rng)) / nh as f64;
                        let n = Vector3::new(a.cos(), a.sin(), 0.0);
                        local.push((n * *radius + Vector3::z() * z, n));
                    }
                }
                let rings = (radius / spacing).ceil().max(1.0) as usize;
                for sign in [-1.0, 1.0] {
                    for k in 0..rings {
                        let rr = radius * (k as f64 + 0.5) / rings as f64;
                        let count = (std::f64::consts::TAU * rr / spacing).ceil().max(1.0) as usize;
                        let phase = rng.random::<f64>();
                        for i in 0..count {
                            let a = std::f64::consts::TAU * (i as f64 + phase) / count as f64;
                            local.push((Vector3::new(rr * a.cos(), rr * a.sin(), sign * half_length), Vector3::z() * sign));
                        }
                    }
                }
            }
            Primitive::Sphere { radius, .. } => {
                let n = (4.0 * std::f64::consts::PI * radius * radius / (spacing * spacing)).ceil().max(4.0) as usize;
                let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                let offset = rng.random::<f64>() * std::f64::consts::TAU;
                for i in 0..n {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let a = golden * i as f64 + offset;
                    let u = Vector3::new(rho * a.cos(), rho * a.sin(), z);
                    local.push((u * *radius, u));
                }
            }
        }
        local.into_iter().map(|(p, n)| (c + r * p, r * n)).collect()
    }
}

/// Union of primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub parts: Vec<Primitive>,
}

impl Composite {
    /// Outer-surface samples: points of one part that fall inside another
    /// are dropped. Deterministic per `seed`.
    pub fn sample(&self, spacing: f64, seed: u64) -> PointCloud<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let margin = 1e-4 * spacing;
        let mut items = Vec::new();
        for (k, part) in self.parts.iter().enumerate() {
            for (p, n) in part.sample(spacing, &mut rng) {
                let buried = self.parts.iter().enumerate().any(|(j, other)| j != k && other.contains(&p, margin));
                if !buried {
                    items.push((p, n));
                }
            }
        }
        PointCloud::from_oriented(items).expect("analytic normals are unit")
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        self.parts.iter().any(|q| q.contains(p, 0.0))
    }
}

fn cuboid(center: [f64; 3], half: [f64; 3], tilt_x_deg: f64) -> Primitive {
    Primitive::Cuboid {
        center: Point3::from(center),
        half: Vector3::from(half),
        rotation: UnitQuaternion::from_axis_angle(&Vector3::x_axis(), tilt_x_deg.to_radians()),
    }
}

fn cylinder(center: [f64; 3], axis: [f64; 3], radius: f64, half_length: f64) -> Primitive {
    Primitive::Cylinder {
        center: Point3::from(center),
        axis: Vector3::from(axis).normalize(),
        radius,
        half_length,
    }
}

/// Asymmetric vertebra-like solid, about 0.1 m across: a cylindrical body,
/// an arch, a tilted spinous process, unequal transverse processes and a
/// knob on the body rim.
pub fn vertebra() -> Composite {
    let mut parts = symmetric_core();
    parts.push(cylinder([-0.027, -0.033, 0.006], [-1.0, -0.3, 0.1], 0.004, 0.013));
    parts.push(cylinder([0.024, -0.031, 0.008], [1.0, -0.15, 0.25], 0.0045, 0.009));
    parts.push(Primitive::Sphere {
        center: Point3::new(0.014, 0.013, 0.013),
        radius: 0.006,
    });
    Composite { parts }
}

/// Mirror-symmetric variant (about the x = 0 plane) of [`vertebra`].
pub fn vertebra_symmetric() -> Composite {
    let mut parts = symmetric_core();
    parts.push(cylinder([-0.026, -0.033, 0.006], [-1.0, -0.2, 0.1], 0.0042, 0.011));
    parts.push(cylinder([0.026, -0.033, 0.006], [1.0, -0.2, 0.1], 0.0042, 0.011));
    Composite { parts }
}

fn symmetric_core() -> Vec<Primitive> {
    vec![
        // body
        cylinder([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], 0.022, 0.014),
        // pedicles
        cuboid([-0.012, -0.025, 0.004], [0.004, 0.008, 0.006], 0.0),
        cuboid([0.012, -0.025, 0.004], [0.004, 0.008, 0.006], 0.0),
        // lamina closing the arch
        cuboid([0.0, -0.036, 0.004], [0.016, 0.004, 0.006], 0.0),
        // spinous process, tilted down
        cuboid([0.0, -0.053, -0.002], [0.003, 0.016, 0.005], -20.0),
    ]
}

/// Box-shaped clutter object with random size and orientation, centred at
/// `center`.
pub fn random_distractor(rng: &mut ChaCha8Rng, center: Point3<f64>, size: f64) -> Composite {
    let q = crate::geometry::random_rotation::<f64, _>(rng);
    let part = match rng.random_range(0..3u32) {
        0 => Primitive::Cuboid {
            center,
            half: Vector3::new(
                size * (0.3 + 0.4 * rng.random::<f64>()),
                size * (0.2 + 0.3 * rng.random::<f64>()),
                size * (0.15 + 0.3 * rng.random::<f64>()),
            ),
            rotation: q,
        },
        1 => Primitive::Cylinder {
            center,
            axis: q * Vector3::z(),
            radius: size * (0.2 + 0.2 * rng.random::<f64>()),
            half_length: size * (0.3 + 0.4 * rng.random::<f64>()),
        },
        _ => Primitive::Sphere {
            center,
            radius: size * (0.25 + 0.25 * rng.random::<f64>()),
        },
    };
    Composite { parts: vec![part] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::diameter;

    #[test]
    fn vertebra_size_and_determinism() {
        let a = vertebra().sample(0.0015, 3);
        let b = vertebra().sample(0.0015, 3);
        assert_eq!(a, b);
        let d = diameter(&crate::sampling::uniform_downsample(&a, 0.004).unwrap());
        assert!((0.08..0.13).contains(&d), "diameter {d}");
    }

    #[test]
    fn samples_lie_on_outer_surface() {
        let shape = vertebra();
        let c = shape.sample(0.002, 1);
        let mut inward = 0;
        for p in &c.points {
            assert!(!shape.parts.iter().any(|q| q.contains(&p.position, 1e-6)));
            // a small step along the normal leaves the solid, except right at creases
            if shape.contains(&(p.position + p.normal.into_inner() * 1e-4)) {
                inward += 1;
            }
        }
        assert!(inward * 100 < c.len(), "{inward} of {}", c.len());
    }

    #[test]
    fn sphere_normals_radial() {
        let s = Primitive::Sphere {
            center: Point3::new(1.0, 2.0, 3.0),
            radius: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (p, n) in s.sample(0.05, &mut rng) {
            assert!(((p - Point3::new(1.0, 2.0, 3.0)).normalize() - n).norm() < 1e-12);
        }
    }
}
