use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use super::{CloudError, PointCloud};
use crate::geometry::{Point3, UnitVector3, Vector3};
use crate::Real;

/// How the sign of each estimated normal is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormalOrientation<T: Real> {
    /// Flip so that `n . (viewpoint - p) >= 0` (sensor-facing scenes).
    TowardViewpoint(Point3<T>),
    /// Flip so that `n . (p - centroid) >= 0` (closed model surfaces).
    OutwardFromCentroid,
}

#[derive(Debug, Clone)]
pub struct NormalResult<T: Real> {
    pub cloud: PointCloud<T>,
    /// Points whose neighbourhood collapsed to a single location; their
    /// normal was set to +z.
    pub degenerate: usize,
}

/// PCA normals over the `k` nearest neighbours (the point itself included).
pub fn estimate_normals<T: Real>(
    cloud: &PointCloud<T>,
    k: usize,
    orientation: NormalOrientation<T>,
) -> Result<NormalResult<T>, CloudError> {
    if k < 3 {
        return Err(CloudError::InvalidParameter(format!(
            "normal neighbourhood k={k} must be at least 3"
        )));
    }
    if cloud.len() < k {
        return Err(CloudError::TooFewPoints {
            needed: k,
            actual: cloud.len(),
        });
    }
    let tree = cloud.kdtree();
    let centroid = cloud.centroid().unwrap();
    let estimated: Vec<(UnitVector3<T>, bool)> = cloud
        .points
        .par_iter()
        .map(|p| {
            let nbrs = tree.knn(&p.position, k);
            let inv = T::one() / T::of(nbrs.len() as f64);
            let mean = nbrs
                .iter()
                .fold(Vector3::zeros(), |acc, &(i, _)| acc + cloud.points[i].position.coords)
                * inv;
            let mut cov = Matrix3::zeros();
            for &(i, _) in &nbrs {
                let d = cloud.points[i].position.coords - mean;
                cov += d * d.transpose();
            }
            cov *= inv;
            let scale = mean.norm_squared() + T::one();
            if cov.abs().max() <= T::default_epsilon() * T::default_epsilon() * scale {
                return (Vector3::z_axis(), true);
            }
            let eig = SymmetricEigen::new(cov);
            let (imin, _) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .fold((0, eig.eigenvalues[0]), |best, (i, &v)| if v < best.1 { (i, v) } else { best });
            let mut n: Vector3<T> = eig.eigenvectors.column(imin).into_owned();
            let reference = match orientation {
                NormalOrientation::TowardViewpoint(v) => v - p.position,
                NormalOrientation::OutwardFromCentroid => p.position - centroid,
            };
            if n.dot(&reference) < T::zero() {
                n = -n;
            }
            (UnitVector3::new_normalize(n), false)
        })
        .collect();
    let mut out = cloud.clone();
    let mut degenerate = 0;
    for (p, (n, degen)) in out.points.iter_mut().zip(estimated) {
        p.normal = n;
        degenerate += degen as usize;
    }
    out.has_normals = true;
    Ok(NormalResult { cloud: out, degenerate })
}
