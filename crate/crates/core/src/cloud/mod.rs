//! Oriented point clouds: core types, PLY I/O, normals, edges and diameter.

mod edges;
mod normals;
pub mod ply;

pub use edges::{extract_edges, EdgeParams, EdgeResult};
pub use normals::{estimate_normals, NormalOrientation, NormalResult};
pub use ply::{load_cloud, save_cloud, PlyFormat};

use crate::geometry::{Point3, RigidTransform, UnitVector3, Vector3};
use crate::spatial::KdTree;
use crate::Real;

/// Clouds up to this size get an exact O(n^2) diameter.
pub const EXACT_DIAMETER_LIMIT: usize = 2000;

#[derive(Debug, thiserror::Error)]
pub enum CloudError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("PLY parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("empty output path")]
    EmptyPath,
    #[error("normal at index {0} is zero or non-finite")]
    InvalidNormal(usize),
    #[error("coordinate at index {0} is non-finite")]
    NonFinite(usize),
    #[error("operation requires {required} but the cloud lacks them")]
    MissingAttribute { required: &'static str },
    #[error("need at least {needed} points, cloud has {actual}")]
    TooFewPoints { needed: usize, actual: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedPoint<T: Real> {
    pub position: Point3<T>,
    pub normal: UnitVector3<T>,
    pub is_edge: bool,
}

impl<T: Real> OrientedPoint<T> {
    pub fn new(position: Point3<T>, normal: UnitVector3<T>) -> Self {
        Self {
            position,
            normal,
            is_edge: false,
        }
    }

    /// Point without a meaningful normal; the normal slot holds +z.
    pub fn bare(position: Point3<T>) -> Self {
        Self::new(position, Vector3::z_axis())
    }

    pub fn transformed(&self, t: &RigidTransform<T>) -> Self {
        Self {
            position: t.transform_point(&self.position),
            normal: UnitVector3::new_unchecked(t.transform_vector(&self.normal)),
            is_edge: self.is_edge,
        }
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb<T: Real> {
    pub min: Point3<T>,
    pub max: Point3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn from_points<'a, I: IntoIterator<Item = &'a Point3<T>>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut bb = Self { min: first, max: first };
        for p in it {
            bb.min = bb.min.inf(p);
            bb.max = bb.max.sup(p);
        }
        Some(bb)
    }

    pub fn center(&self) -> Point3<T> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn diagonal(&self) -> T {
        (self.max - self.min).norm()
    }

    /// Box scaled by `factor` about its center.
    pub fn scaled(&self, factor: T) -> Self {
        let c = self.center();
        let half = (self.max - self.min) * (factor * T::of(0.5));
        Self {
            min: c - half,
            max: c + half,
        }
    }

    pub fn contains(&self, p: &Point3<T>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T: Real> {
    pub points: Vec<OrientedPoint<T>>,
    pub has_normals: bool,
    pub has_edges: bool,
}

impl<T: Real> Default for PointCloud<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> PointCloud<T> {
    pub fn new() -> Self {
        Self {
            points: Vec::new(),
            has_normals: false,
            has_edges: false,
        }
    }

    pub fn from_positions(positions: impl IntoIterator<Item = Point3<T>>) -> Self {
        Self {
            points: positions.into_iter().map(OrientedPoint::bare).collect(),
            has_normals: false,
            has_edges: false,
        }
    }

    /// Builds an oriented cloud, normalizing every normal.
    pub fn from_oriented(items: impl IntoIterator<Item = (Point3<T>, Vector3<T>)>) -> Result<Self, CloudError> {
        let mut points = Vec::new();
        for (i, (p, n)) in items.into_iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(CloudError::NonFinite(i));
            }
            let normal = UnitVector3::try_new(n, T::default_epsilon())
                .filter(|u| u.iter().all(|c| c.is_finite()))
                .ok_or(CloudError::InvalidNormal(i))?;
            points.push(OrientedPoint::new(p, normal));
        }
        Ok(Self {
            points,
            has_normals: true,
            has_edges: false,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl ExactSizeIterator<Item = &Point3<T>> + Clone {
        self.points.iter().map(|p| &p.position)
    }

    pub fn kdtree(&self) -> KdTree<T> {
        KdTree::build(self.positions())
    }

    pub fn edge_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_edge).count()
    }

    pub fn edge_positions(&self) -> Vec<Point3<T>> {
        self.points.iter().filter(|p| p.is_edge).map(|p| p.position).collect()
    }

    pub fn transformed(&self, t: &RigidTransform<T>) -> Self {
        Self {
            points: self.points.iter().map(|p| p.transformed(t)).collect(),
            has_normals: self.has_normals,
            has_edges: self.has_edges,
        }
    }

    pub fn centroid(&self) -> Option<Point3<T>> {
        if self.is_empty() {
            return None;
        }
        let sum = self.positions().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / T::of(self.len() as f64)))
    }

    pub fn aabb(&self) -> Option<Aabb<T>> {
        Aabb::from_points(self.positions())
    }

    /// Keeps the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            has_normals: self.has_normals,
            has_edges: self.has_edges,
        }
    }

    /// Concatenates `other` onto `self`. Attribute flags become the
    /// conjunction of both.
    pub fn extend_from(&mut self, other: &Self) {
        if self.is_empty() {
            self.has_normals = other.has_normals;
            self.has_edges = other.has_edges;
        } else if !other.is_empty() {
            self.has_normals &= other.has_normals;
            self.has_edges &= other.has_edges;
        }
        self.points.extend_from_slice(&other.points);
    }

    /// Median nearest-neighbour spacing; `None` for fewer than two points.
    pub fn resolution(&self) -> Option<T> {
        if self.len() < 2 {
            return None;
        }
        let tree = self.kdtree();
        let mut d: Vec<T> = self.positions().map(|p| tree.knn(p, 2)[1].1.sqrt()).collect();
        let mid = d.len() / 2;
        d.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
        Some(d[mid])
    }

    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        let conv = |v: T| U::of(v.as_f64());
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| OrientedPoint {
                    position: Point3::new(conv(p.position.x), conv(p.position.y), conv(p.position.z)),
                    normal: UnitVector3::new_normalize(Vector3::new(conv(p.normal.x), conv(p.normal.y), conv(p.normal.z))),
                    is_edge: p.is_edge,
                })
                .collect(),
            has_normals: self.has_normals,
            has_edges: self.has_edges,
        }
    }
}

/// Largest pairwise distance. Exact up to [`EXACT_DIAMETER_LIMIT`] points;
/// above that, the bounding-box diagonal (an upper bound within a factor
/// of sqrt(3)).
pub fn diameter<T: Real>(cloud: &PointCloud<T>) -> T {
    if cloud.len() <= EXACT_DIAMETER_LIMIT {
        let mut best = T::zero();
        for (i, a) in cloud.points.iter().enumerate() {
            for b in &cloud.points[i + 1..] {
                let d = (a.position - b.position).norm_squared();
                if d > best {
                    best = d;
                }
            }
        }
        best.sqrt()
    } else {
        cloud.aabb().map(|bb| bb.diagonal()).unwrap_or_else(T::zero)
    }
}
