use rayon::prelude::*;

use super::{CloudError, PointCloud};
use crate::geometry::{UnitVector3, Vector3};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeParams<T: Real> {
    /// Neighbourhood radius; typically twice the sampling step.
    pub radius: T,
    /// Largest tolerated angular gap between tangent-plane neighbours.
    pub gap_threshold: T,
}

impl<T: Real> EdgeParams<T> {
    pub fn new(radius: T) -> Self {
        Self {
            radius,
            gap_threshold: T::from_degrees(90.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EdgeResult<T: Real> {
    pub cloud: PointCloud<T>,
    /// Points with fewer than three usable neighbours; marked as edges.
    pub sparse: usize,
}

/// Orthonormal tangent basis `(u, v)` for a unit normal.
pub(crate) fn tangent_basis<T: Real>(n: &UnitVector3<T>) -> (Vector3<T>, Vector3<T>) {
    let a = if n.x.abs() < T::of(0.9) { Vector3::x() } else { Vector3::y() };
    let u = n.cross(&a).normalize();
    let v = n.cross(&u);
    (u, v)
}

/// Largest angular gap between consecutive sorted angles, wrap-around
/// included. Fewer than two angles yield a full turn.
pub(crate) fn largest_gap<T: Real>(angles: &mut [T]) -> T {
    if angles.len() < 2 {
        return T::two_pi();
    }
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut gap = angles[0] + T::two_pi() - angles[angles.len() - 1];
    for w in angles.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    gap
}

/// Flags boundary points: a point is an edge when the largest angular gap
/// between its radius neighbours, projected on its tangent plane, exceeds
/// `gap_threshold`.
pub fn extract_edges<T: Real>(cloud: &PointCloud<T>, params: &EdgeParams<T>) -> Result<EdgeResult<T>, CloudError> {
    if !cloud.has_normals {
        return Err(CloudError::MissingAttribute { required: "normals" });
    }
    if !(params.radius > T::zero()) {
        return Err(CloudError::InvalidParameter("edge radius must be positive".into()));
    }
    let tree = cloud.kdtree();
    let flags: Vec<(bool, bool)> = cloud
        .points
        .par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(nbrs, angles), p| {
                tree.within_radius(&p.position, params.radius, nbrs);
                let (u, v) = tangent_basis(&p.normal);
                angles.clear();
                let tiny = params.radius * T::of(1e-9);
                for &i in nbrs.iter() {
                    let d = cloud.points[i].position - p.position;
                    let (du, dv) = (d.dot(&u), d.dot(&v));
                    if du.abs() <= tiny && dv.abs() <= tiny {
                        continue;
                    }
                    angles.push(dv.atan2(du));
                }
                if angles.len() < 3 {
                    return (true, true);
                }
                (largest_gap(angles) > params.gap_threshold, false)
            },
        )
        .collect();
    let mut out = cloud.clone();
    let mut sparse = 0;
    for (p, (edge, sp)) in out.points.iter_mut().zip(flags) {
        p.is_edge = edge;
        sparse += sp as usize;
    }
    out.has_edges = true;
    Ok(EdgeResult { cloud: out, sparse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, h: f64) -> PointCloud<f64> {
        let pts: Vec<_> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (Point3::new(i as f64 * h, j as f64 * h, 0.0), Vector3::z())))
            .collect();
        PointCloud::from_oriented(pts).unwrap()
    }

    /// Independent O(n^2) oracle: neighbour scan + polar angles via acos.
    fn oracle_edges(c: &PointCloud<f64>, radius: f64, thresh: f64) -> Vec<bool> {
        c.points
            .iter()
            .map(|p| {
                let n = p.normal.into_inner();
                let helper = if n.x.abs() < 0.5 { Vector3::x() } else { Vector3::y() };
                let e1 = (helper - n * n.dot(&helper)).normalize();
                let mut ang: Vec<f64> = c
                    .points
                    .iter()
                    .filter_map(|q| {
                        let d = q.position - p.position;
                        if d.norm() > radius {
                            return None;
                        }
                        let t = d - n * n.dot(&d);
                        if t.norm() < 1e-12 {
                            return None;
                        }
                        let a = (t.normalize().dot(&e1)).clamp(-1.0, 1.0).acos();
                        Some(if n.dot(&e1.cross(&t)) < 0.0 { std::f64::consts::TAU - a } else { a })
                    })
                    .collect();
                if ang.len() < 3 {
                    return true;
                }
                ang.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut g = ang[0] + std::f64::consts::TAU - ang[ang.len() - 1];
                for w in ang.windows(2) {
                    g = g.max(w[1] - w[0]);
                }
                g > thresh
            })
            .collect()
    }

    #[test]
    fn square_grid_edges_are_outer_ring() {
        let n = 20;
        let h = 0.05;
        let c = grid(n, h);
        let params = EdgeParams::new(2.0 * h);
        let r = extract_edges(&c, &params).unwrap();
        assert!(r.cloud.has_edges);
        let got: Vec<bool> = r.cloud.points.iter().map(|p| p.is_edge).collect();
        let ring: Vec<bool> = (0..n)
            .flat_map(|i| (0..n).map(move |j| i == 0 || j == 0 || i == n - 1 || j == n - 1))
            .collect();
        assert_eq!(got, ring);
        assert_eq!(got, oracle_edges(&c, 2.0 * h, params.gap_threshold));
    }

    #[test]
    fn half_plane_boundary_and_interior() {
        let c = grid(15, 0.1);
        let r = extract_edges(&c, &EdgeParams::new(0.2)).unwrap();
        // middle of the i == 0 boundary row, and the centre point
        assert!(r.cloud.points[7].is_edge);
        assert!(!r.cloud.points[7 * 15 + 7].is_edge);
    }

    #[test]
    fn permutation_invariant() {
        let c = grid(12, 0.1);
        let mut idx: Vec<usize> = (0..c.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
        let shuffled = c.select(&idx);
        let params = EdgeParams::new(0.2);
        let a = extract_edges(&c, &params).unwrap().cloud;
        let b = extract_edges(&shuffled, &params).unwrap().cloud;
        for (k, &i) in idx.iter().enumerate() {
            assert_eq!(b.points[k].is_edge, a.points[i].is_edge);
        }
    }

    #[test]
    fn isolated_points_are_edges() {
        let c = grid(3, 1.0);
        let r = extract_edges(&c, &EdgeParams::new(0.5)).unwrap();
        assert_eq!(r.sparse, 9);
        assert!(r.cloud.points.iter().all(|p| p.is_edge));
    }

    #[test]
    fn requires_normals() {
        let c = PointCloud::<f64>::from_positions([Point3::origin()]);
        assert!(extract_edges(&c, &EdgeParams::new(1.0)).is_err());
    }
}
