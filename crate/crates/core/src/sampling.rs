//! Voxel downsampling: a plain uniform variant and the edge-preserving,
//! normal-aware multi-resolution clustering used for scenes.

use std::collections::BTreeMap;

use crate::cloud::{CloudError, OrientedPoint, PointCloud};
use crate::geometry::{angle_between, Point3, UnitVector3, Vector3};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams<T: Real> {
    /// Finest voxel edge length.
    pub base_cell: T,
    /// Normal-merge threshold at the finest level (radians).
    pub theta0: T,
    pub levels: usize,
    /// Multiplier applied to the threshold at each coarser level.
    pub theta_decay: T,
    pub preserve_edges: bool,
}

impl<T: Real> SamplingParams<T> {
    /// Defaults relative to a model diameter: 0.05 d cells, 30 degrees,
    /// three levels, halving threshold.
    pub fn for_diameter(diameter: T) -> Self {
        Self {
            base_cell: diameter * T::of(0.05),
            theta0: T::from_degrees(30.0),
            levels: 3,
            theta_decay: T::of(0.5),
            preserve_edges: true,
        }
    }

    pub fn validate(&self) -> Result<(), CloudError> {
        let bad = |m: &str| Err(CloudError::InvalidParameter(m.to_string()));
        if !(self.base_cell > T::zero()) {
            return bad("base_cell must be positive");
        }
        if !(self.theta0 > T::zero() && self.theta0 <= T::pi()) {
            return bad("theta0 must lie in (0, 180] degrees");
        }
        if self.levels < 1 {
            return bad("levels must be at least 1");
        }
        if !(self.theta_decay > T::zero() && self.theta_decay <= T::one()) {
            return bad("theta_decay must lie in (0, 1]");
        }
        Ok(())
    }

    /// Voxel size and normal threshold of level `level` (0 = finest).
    pub fn level(&self, level: usize) -> (T, T) {
        let mut cell = self.base_cell;
        let mut theta = self.theta0;
        for _ in 0..level {
            cell *= T::of(2.0);
            theta *= self.theta_decay;
        }
        (cell, theta)
    }
}

type CellKey = (i64, i64, i64);

fn cell_of<T: Real>(p: &Point3<T>, cell: T) -> CellKey {
    ((p.x / cell).floor_i64(), (p.y / cell).floor_i64(), (p.z / cell).floor_i64())
}

fn bin_by_cell<T: Real>(points: &[OrientedPoint<T>], cell: T) -> BTreeMap<CellKey, Vec<usize>> {
    let mut cells: BTreeMap<CellKey, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        cells.entry(cell_of(&p.position, cell)).or_default().push(i);
    }
    cells
}

/// Centroid and renormalized mean normal of `members`. Falls back to the
/// first normal if the normals cancel out.
fn representative<T: Real>(points: &[OrientedPoint<T>], members: &[usize]) -> OrientedPoint<T> {
    let inv = T::one() / T::of(members.len() as f64);
    let mut pos = Vector3::zeros();
    let mut nrm = Vector3::zeros();
    let mut is_edge = false;
    for &i in members {
        pos += points[i].position.coords;
        nrm += points[i].normal.into_inner();
        is_edge |= points[i].is_edge;
    }
    let normal = UnitVector3::try_new(nrm, T::default_epsilon()).unwrap_or(points[members[0]].normal);
    OrientedPoint {
        position: Point3::from(pos * inv),
        normal,
        is_edge,
    }
}

/// Greedy clustering of one cell's points by normal direction. A point joins
/// the first cluster all of whose members lie strictly within `theta` of it,
/// so every cluster has pairwise normal spread below `theta`.
fn merge_cell<T: Real>(points: &[OrientedPoint<T>], members: &[usize], theta: T, out: &mut Vec<OrientedPoint<T>>) {
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &i in members {
        let n = &points[i].normal;
        let slot = clusters
            .iter()
            .position(|c| c.iter().all(|&j| angle_between(n, &points[j].normal) < theta));
        match slot {
            Some(k) => clusters[k].push(i),
            None => clusters.push(vec![i]),
        }
    }
    out.extend(clusters.iter().map(|c| representative(points, c)));
}

fn merge_level<T: Real>(points: &[OrientedPoint<T>], cell: T, theta: T) -> Vec<OrientedPoint<T>> {
    let mut out = Vec::new();
    for members in bin_by_cell(points, cell).values() {
        merge_cell(points, members, theta, &mut out);
    }
    out
}

/// Edge-preserving multi-resolution clustered downsampling.
///
/// Level one merges points (edge and non-edge separately when edges are
/// preserved) by normal similarity inside `base_cell` voxels. Edge
/// representatives are then frozen; the remaining representatives go
/// through coarser levels with doubled cells and a decayed threshold.
/// Output lists edge points first, then surface points.
pub fn cluster_downsample<T: Real>(cloud: &PointCloud<T>, params: &SamplingParams<T>) -> Result<PointCloud<T>, CloudError> {
    params.validate()?;
    if cloud.is_empty() {
        return Ok(cloud.clone());
    }
    if !cloud.has_normals {
        return Err(CloudError::MissingAttribute { required: "normals" });
    }
    if params.preserve_edges && !cloud.has_edges {
        return Err(CloudError::MissingAttribute { required: "edge flags" });
    }
    let (cell0, theta0) = params.level(0);
    let (edges, mut surface): (Vec<OrientedPoint<T>>, Vec<OrientedPoint<T>>) = if params.preserve_edges {
        let (e, s): (Vec<_>, Vec<_>) = cloud.points.iter().partition(|p| p.is_edge);
        (merge_level(&e, cell0, theta0), merge_level(&s, cell0, theta0))
    } else {
        (Vec::new(), merge_level(&cloud.points, cell0, theta0))
    };
    for level in 1..params.levels {
        let (cell, theta) = params.level(level);
        surface = merge_level(&surface, cell, theta);
    }
    let mut points = edges;
    points.extend(surface);
    Ok(PointCloud {
        points,
        has_normals: true,
        has_edges: cloud.has_edges,
    })
}

/// One centroid per occupied voxel of size `cell`; normals are the
/// renormalized mean when present. Output is ordered by voxel coordinate.
pub fn uniform_downsample<T: Real>(cloud: &PointCloud<T>, cell: T) -> Result<PointCloud<T>, CloudError> {
    if !(cell > T::zero()) {
        return Err(CloudError::InvalidParameter("cell must be positive".into()));
    }
    let points = bin_by_cell(&cloud.points, cell)
        .values()
        .map(|m| representative(&cloud.points, m))
        .collect();
    Ok(PointCloud {
        points,
        has_normals: cloud.has_normals,
        has_edges: cloud.has_edges,
    })
}
