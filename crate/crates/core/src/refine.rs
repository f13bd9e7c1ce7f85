//! ICP refinement of a model-to-scene pose.
//!
//! Correspondences go from scene points to the posed model, so clutter far
//! from the object never pulls on the pose.

use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::geometry::{Point3, RigidTransform, Vector3};
use crate::spatial::KdTree;
use crate::Real;

/// Fewest correspondences that still constrain all six degrees of freedom.
pub const MIN_CORRESPONDENCES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcpVariant {
    PointToPoint,
    PointToPlane,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams<T: Real> {
    pub max_iterations: usize,
    pub correspondence_dist: T,
    pub convergence_eps: T,
    pub variant: IcpVariant,
}

impl<T: Real> IcpParams<T> {
    pub fn new(diameter: T, step: T) -> Self {
        Self {
            max_iterations: 30,
            correspondence_dist: T::of(2.5) * step,
            convergence_eps: T::of(1e-5) * diameter,
            variant: IcpVariant::PointToPlane,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations == 0 || !(self.correspondence_dist > T::zero()) || !(self.convergence_eps > T::zero()) {
            return Err("ICP parameters must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IcpStatus {
    Converged,
    MaxIterations,
    /// A step hit fewer than [`MIN_CORRESPONDENCES`] pairs or a singular
    /// system; the best pose so far is returned.
    Underdetermined,
    /// Nothing within range of the initial pose.
    NoCorrespondence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult<T: Real> {
    pub pose: RigidTransform<T>,
    /// Mean correspondence distance at `pose`.
    pub residual: T,
    /// Accepted updates.
    pub iterations: usize,
    pub status: IcpStatus,
    /// Residual before the first and after every accepted update.
    pub history: Vec<T>,
}

/// Scene point and model index in the model frame.
struct Pair<T: Real> {
    scene: Point3<T>,
    model: usize,
    dist: T,
}

/// Model cloud with its search tree, built once and reusable across
/// refinements.
pub struct IcpModel<'a, T: Real> {
    cloud: &'a PointCloud<T>,
    tree: KdTree<T>,
    centroid: Point3<T>,
    radius: T,
}

impl<'a, T: Real> IcpModel<'a, T> {
    pub fn new(cloud: &'a PointCloud<T>) -> Self {
        let centroid = cloud.centroid().unwrap_or_else(Point3::origin);
        Self {
            cloud,
            tree: cloud.kdtree(),
            centroid,
            radius: cloud
                .positions()
                .map(|q| (q - centroid).norm())
                .fold(T::zero(), |a, b| if b > a { b } else { a }),
        }
    }

    pub fn tree(&self) -> &KdTree<T> {
        &self.tree
    }

    pub fn centroid(&self) -> Point3<T> {
        self.centroid
    }

    /// Largest distance from the centroid to a model point.
    pub fn radius(&self) -> T {
        self.radius
    }

    fn correspond(&self, pose: &RigidTransform<T>, scene: &PointCloud<T>, max_dist: T) -> (Vec<Pair<T>>, T) {
        let centre = pose.transform_point(&self.centroid);
        let reach = self.radius + max_dist;
        let max_sq = max_dist * max_dist;
        let pairs: Vec<Pair<T>> = scene
            .points
            .par_iter()
            .filter_map(|s| {
                if (s.position - centre).norm_squared() > reach * reach {
                    return None;
                }
                let q = pose.inverse_transform_point(&s.position);
                let (idx, d2) = self.tree.nearest(&q)?;
                (d2 <= max_sq).then(|| Pair {
                    scene: q,
                    model: idx,
                    dist: d2.sqrt(),
                })
            })
            .collect();
        let mean = if pairs.is_empty() {
            T::zero()
        } else {
            pairs.iter().fold(T::zero(), |a, p| a + p.dist) / T::of(pairs.len() as f64)
        };
        (pairs, mean)
    }

    /// Model-frame increment `delta` with `delta * scene ~ model`.
    fn solve(&self, pairs: &[Pair<T>], variant: IcpVariant) -> Option<RigidTransform<T>> {
        match variant {
            IcpVariant::PointToPlane if self.cloud.has_normals => self.solve_plane(pairs),
            _ => self.solve_point(pairs),
        }
    }

    fn solve_plane(&self, pairs: &[Pair<T>]) -> Option<RigidTransform<T>> {
        let mut ata = Matrix6::<T>::zeros();
        let mut atb = Vector6::<T>::zeros();
        for p in pairs {
            let m = &self.cloud.points[p.model];
            let n = m.normal.into_inner();
            let c = p.scene.coords.cross(&n);
            let row = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
            let r = n.dot(&(p.scene - m.position));
            ata += row * row.transpose();
            atb -= row * r;
        }
        let x = ata.cholesky()?.solve(&atb);
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some(RigidTransform::from_rotation_vector(
            Vector3::new(x[0], x[1], x[2]),
            Vector3::new(x[3], x[4], x[5]),
        ))
    }

    fn solve_point(&self, pairs: &[Pair<T>]) -> Option<RigidTransform<T>> {
        let k = T::of(pairs.len() as f64);
        let cs = pairs.iter().fold(Vector3::zeros(), |a, p| a + p.scene.coords) / k;
        let cm = pairs
            .iter()
            .fold(Vector3::zeros(), |a, p| a + self.cloud.points[p.model].position.coords)
            / k;
        let mut h = Matrix3::<T>::zeros();
        for p in pairs {
            h += (p.scene.coords - cs) * (self.cloud.points[p.model].position.coords - cm).transpose();
        }
        let svd = h.svd(true, true);
        let (u, v_t) = (svd.u?, svd.v_t?);
        let mut v = v_t.transpose();
        if (v * u.transpose()).determinant() < T::zero() {
            v.column_mut(2).neg_mut();
        }
        let r = v * u.transpose();
        let q = UnitQuaternion::from_matrix(&r);
        Some(RigidTransform::new(q, cm - q * cs))
    }
}

fn renormalized<T: Real>(t: RigidTransform<T>) -> RigidTransform<T> {
    let mut q = t.rotation();
    q.renormalize();
    RigidTransform::new(q, t.translation())
}

/// Refines `initial` (model to scene) against `scene`.
pub fn icp_refine<T: Real>(
    initial: &RigidTransform<T>,
    model_cloud: &PointCloud<T>,
    scene: &PointCloud<T>,
    p: &IcpParams<T>,
) -> IcpResult<T> {
    IcpModel::new(model_cloud).refine(initial, scene, p)
}

impl<T: Real> IcpModel<'_, T> {
    /// Refines `initial` (model to scene) against `scene`.
    pub fn refine(&self, initial: &RigidTransform<T>, scene: &PointCloud<T>, p: &IcpParams<T>) -> IcpResult<T> {
        let model = self;
        let (mut pairs, mut residual) = model.correspond(initial, scene, p.correspondence_dist);
        let mut out = IcpResult {
            pose: *initial,
            residual,
            iterations: 0,
            status: IcpStatus::MaxIterations,
            history: vec![residual],
        };
        if pairs.len() < MIN_CORRESPONDENCES {
            out.status = if pairs.is_empty() {
                IcpStatus::NoCorrespondence
            } else {
                IcpStatus::Underdetermined
            };
            return out;
        }
        for it in 1..=p.max_iterations {
            let Some(delta) = model.solve(&pairs, p.variant) else {
                out.status = IcpStatus::Underdetermined;
                break;
            };
            let candidate = renormalized(out.pose * delta.inverse());
            let (next_pairs, next_residual) = model.correspond(&candidate, scene, p.correspondence_dist);
            if next_pairs.len() < MIN_CORRESPONDENCES {
                out.status = IcpStatus::Underdetermined;
                break;
            }
            if next_residual > residual {
                // a worse step means we are at the local optimum
                out.status = IcpStatus::Converged;
                break;
            }
            let change = residual - next_residual;
            out.pose = candidate;
            out.iterations = it;
            residual = next_residual;
            pairs = next_pairs;
            out.residual = residual;
            out.history.push(residual);
            if change < p.convergence_eps {
                out.status = IcpStatus::Converged;
                break;
            }
        }
        out
    }
}
