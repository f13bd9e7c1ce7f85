//! Synthetic single-view scenes with known ground truth.
//!
//! The posed model (plus an optional clutter object) is reduced to what a
//! sensor at `viewpoint` sees via spherical-flip hidden point removal and
//! back-face culling, a contiguous patch is cut away as occlusion, clutter
//! and noise are added, and normals and edges are estimated from scratch.

use std::collections::HashMap;

use parry3d_f64::math::Vector3 as HullVec;
use parry3d_f64::transformation::try_convex_hull;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::add_gaussian_noise;
use super::shapes::random_distractor;
use crate::cloud::{estimate_normals, extract_edges, EdgeParams, NormalOrientation, OrientedPoint, PointCloud};
use crate::geometry::{Point3, RigidTransform, Vector3};
use crate::spatial::KdTree;

/// Scenes with fewer surviving object points are rejected.
pub const MIN_VISIBLE_POINTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClutterKind {
    None,
    /// A random box, cylinder or sphere next to the object.
    Object,
    /// Points uniformly spread in the object's enlarged bounding box.
    UniformBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSceneSpec {
    pub gt_pose: RigidTransform<f64>,
    /// Fraction of the visible object points removed as one patch.
    pub occlusion_fraction: f64,
    pub clutter: ClutterKind,
    pub clutter_point_count: usize,
    /// Distance of the distractor centre from the object centre, in model
    /// diameters. The distractor spans half a diameter, so below about 0.75
    /// it touches the object.
    pub clutter_offset: f64,
    /// Standard deviation of coordinate noise, in metres.
    pub noise_sigma: f64,
    pub viewpoint: Point3<f64>,
    pub seed: u64,
    /// Neighbours for the scene normal estimate.
    pub normal_k: usize,
    /// Edge radius as a multiple of the scene resolution.
    pub edge_radius_factor: f64,
    /// Spherical-flip radius exponent: `R = max |p - C| * 10^gamma`.
    pub hpr_gamma: f64,
}

impl SynthSceneSpec {
    pub fn new(gt_pose: RigidTransform<f64>, seed: u64) -> Self {
        Self {
            gt_pose,
            occlusion_fraction: 0.0,
            clutter: ClutterKind::None,
            clutter_point_count: 0,
            clutter_offset: 1.0,
            noise_sigma: 0.0,
            viewpoint: Point3::origin(),
            seed,
            normal_k: 10,
            edge_radius_factor: 2.0,
            hpr_gamma: 2.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub cloud: PointCloud<f64>,
    pub gt_pose: RigidTransform<f64>,
    /// Object points visible before the occlusion cut.
    pub view_points: usize,
    /// Object points in the final scene.
    pub object_points: usize,
    pub clutter_points: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("occlusion fraction {0} must lie in [0, 1)")]
    InvalidOcclusion(f64),
    #[error("only {0} object points remain visible, need at least {MIN_VISIBLE_POINTS}")]
    TooFewVisible(usize),
    #[error("invalid scene parameter: {0}")]
    InvalidParameter(String),
}

/// Indices of the points visible from `viewpoint`: spherical flip plus
/// convex hull, then points facing away are culled when normals are known.
pub fn hidden_point_removal(cloud: &PointCloud<f64>, viewpoint: &Point3<f64>, gamma: f64) -> Vec<usize> {
    let rel: Vec<Vector3<f64>> = cloud.positions().map(|p| p - viewpoint).collect();
    let max_norm = rel.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if rel.len() < 4 || max_norm == 0.0 {
        return (0..rel.len()).collect();
    }
    let radius = max_norm * 10f64.powf(gamma);
    let mut flipped: Vec<HullVec> = Vec::with_capacity(rel.len() + 1);
    let mut index: HashMap<[u64; 3], Vec<usize>> = HashMap::new();
    for (i, v) in rel.iter().enumerate() {
        let n = v.norm();
        let f = if n > 0.0 { v * (1.0 + 2.0 * (radius - n) / n) } else { *v };
        index.entry([f.x.to_bits(), f.y.to_bits(), f.z.to_bits()]).or_default().push(i);
        flipped.push(HullVec::new(f.x, f.y, f.z));
    }
    flipped.push(HullVec::new(0.0, 0.0, 0.0));
    let Ok((verts, _)) = try_convex_hull(&flipped) else {
        return (0..rel.len()).collect();
    };
    let mut visible: Vec<usize> = verts
        .iter()
        .filter_map(|v| index.get(&[v.x.to_bits(), v.y.to_bits(), v.z.to_bits()]))
        .flatten()
        .copied()
        .collect();
    visible.sort_unstable();
    visible.dedup();
    if cloud.has_normals {
        visible.retain(|&i| cloud.points[i].normal.dot(&-rel[i]) > 0.0);
    }
    visible
}

/// Renders one synthetic scene of `model` (dense, oriented, model frame).
pub fn synth_scene(model: &PointCloud<f64>, spec: &SynthSceneSpec) -> Result<SynthScene, SynthError> {
    if !(0.0..1.0).contains(&spec.occlusion_fraction) {
        return Err(SynthError::InvalidOcclusion(spec.occlusion_fraction));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(SynthError::InvalidParameter("noise_sigma must be non-negative".into()));
    }
    if spec.normal_k < 3 || !(spec.edge_radius_factor > 0.0) {
        return Err(SynthError::InvalidParameter(
            "normal_k >= 3 and a positive edge radius are required".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let object = model.transformed(&spec.gt_pose);
    let n_object = object.len();
    let diam = crate::cloud::diameter(model);
    let spacing = model.resolution().unwrap_or(diam * 0.01);

    // clutter object sampled before visibility so it can occlude the target
    let mut combined = object.clone();
    if spec.clutter == ClutterKind::Object && spec.clutter_point_count > 0 {
        let centre = object.centroid().unwrap();
        let view = (centre - spec.viewpoint).normalize();
        let side = view
            .cross(&Vector3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            ))
            .normalize();
        let place = centre + side * (spec.clutter_offset * diam) + view * (0.1 * diam * (rng.random::<f64>() - 0.5));
        let shape = random_distractor(&mut rng, place, 0.5 * diam);
        let mut extra = shape.sample(spacing, rng.random::<u64>());
        // no clutter inside the target
        let tree = object.kdtree();
        extra.points.retain(|p| !tree.any_within(&p.position, 2.0 * spacing));
        combined.extend_from(&extra);
    }

    let visible = hidden_point_removal(&combined, &spec.viewpoint, spec.hpr_gamma);
    let (vis_obj, vis_clutter): (Vec<usize>, Vec<usize>) = visible.into_iter().partition(|&i| i < n_object);
    let view_points = vis_obj.len();

    // occlusion: delete the nearest neighbours of a random visible seed
    let remove = (spec.occlusion_fraction * view_points as f64).round() as usize;
    let kept_obj: Vec<usize> = if remove == 0 || view_points == 0 {
        vis_obj
    } else {
        let pts: Vec<Point3<f64>> = vis_obj.iter().map(|&i| combined.points[i].position).collect();
        let tree = KdTree::build(pts.iter());
        let seed_pt = pts[rng.random_range(0..pts.len())];
        let mut gone = vec![false; pts.len()];
        for (j, _) in tree.knn(&seed_pt, remove) {
            gone[j] = true;
        }
        vis_obj.iter().zip(&gone).filter(|(_, &g)| !g).map(|(&i, _)| i).collect()
    };
    if kept_obj.len() < MIN_VISIBLE_POINTS {
        return Err(SynthError::TooFewVisible(kept_obj.len()));
    }

    let mut clutter_idx = vis_clutter;
    if clutter_idx.len() > spec.clutter_point_count {
        // random subset, kept in index order
        for i in 0..spec.clutter_point_count {
            let j = rng.random_range(i..clutter_idx.len());
            clutter_idx.swap(i, j);
        }
        clutter_idx.truncate(spec.clutter_point_count);
        clutter_idx.sort_unstable();
    }
    let mut points: Vec<OrientedPoint<f64>> = kept_obj.iter().chain(&clutter_idx).map(|&i| combined.points[i]).collect();
    if spec.clutter == ClutterKind::UniformBox && spec.clutter_point_count > 0 {
        let bb = object.aabb().unwrap().scaled(1.5);
        for _ in 0..spec.clutter_point_count {
            let t = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
            points.push(OrientedPoint::bare(bb.min + (bb.max - bb.min).component_mul(&t)));
        }
    }
    let object_points = kept_obj.len();
    let clutter_points = points.len() - object_points;
    let raw = PointCloud {
        points,
        has_normals: false,
        has_edges: false,
    };
    let noisy = add_gaussian_noise(&raw, spec.noise_sigma, rng.random::<u64>());
    let k = spec.normal_k.min(noisy.len());
    let oriented = estimate_normals(&noisy, k.max(3), NormalOrientation::TowardViewpoint(spec.viewpoint))
        .map_err(|e| SynthError::InvalidParameter(e.to_string()))?
        .cloud;
    let res = oriented.resolution().unwrap_or(spacing);
    let cloud = extract_edges(&oriented, &EdgeParams::new(spec.edge_radius_factor * res))
        .map_err(|e| SynthError::InvalidParameter(e.to_string()))?
        .cloud;
    Ok(SynthScene {
        cloud,
        gt_pose: spec.gt_pose,
        view_points,
        object_points,
        clutter_points,
    })
}

/// Random ground-truth pose: uniform rotation, object centre placed at
/// `distance` along +z from the origin with a lateral jitter.
pub fn random_gt_pose(rng: &mut ChaCha8Rng, model_centroid: &Point3<f64>, distance: f64, jitter: f64) -> RigidTransform<f64> {
    let q = crate::geometry::random_rotation::<f64, _>(rng);
    let target = Vector3::new(
        jitter * (rng.random::<f64>() - 0.5),
        jitter * (rng.random::<f64>() - 0.5),
        distance + jitter * (rng.random::<f64>() - 0.5),
    );
    RigidTransform::new(q, target - q * model_centroid.coords)
}

/// Recipe for a batch of scenes with random poses and occlusion levels.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSpec {
    pub count: usize,
    pub seed: u64,
    /// Occlusion drawn uniformly from `[occlusion_min, occlusion_max]`.
    pub occlusion_min: f64,
    pub occlusion_max: f64,
    pub clutter: ClutterKind,
    pub clutter_point_count: usize,
    /// See [`SynthSceneSpec::clutter_offset`].
    pub clutter_offset: f64,
    pub noise_sigma: f64,
    /// Distance of the object centre from the sensor.
    pub distance: f64,
    pub hpr_gamma: f64,
    pub normal_k: usize,
    pub edge_radius_factor: f64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            count: 10,
            seed: 0,
            occlusion_min: 0.0,
            occlusion_max: 0.65,
            clutter: ClutterKind::Object,
            clutter_point_count: 300,
            clutter_offset: 1.0,
            noise_sigma: 0.0005,
            distance: 0.5,
            hpr_gamma: 2.5,
            normal_k: 10,
            edge_radius_factor: 2.0,
        }
    }
}

/// Generates `spec.count` scenes named `scene_000`, `scene_001`, ...
/// Draws that leave too few points are retried with a fresh pose.
pub fn synth_suite(model: &PointCloud<f64>, spec: &SuiteSpec) -> Result<Vec<(String, SynthScene)>, SynthError> {
    if !(0.0 <= spec.occlusion_min && spec.occlusion_min <= spec.occlusion_max && spec.occlusion_max < 1.0) {
        return Err(SynthError::InvalidOcclusion(spec.occlusion_max));
    }
    let centroid = model.centroid().ok_or_else(|| SynthError::InvalidParameter("empty model".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.count);
    let mut failures = 0;
    while out.len() < spec.count {
        let gt = random_gt_pose(&mut rng, &centroid, spec.distance, 0.05 * spec.distance);
        let scene_spec = SynthSceneSpec {
            gt_pose: gt,
            occlusion_fraction: spec.occlusion_min + (spec.occlusion_max - spec.occlusion_min) * rng.random::<f64>(),
            clutter: spec.clutter,
            clutter_point_count: spec.clutter_point_count,
            clutter_offset: spec.clutter_offset,
            noise_sigma: spec.noise_sigma,
            viewpoint: Point3::origin(),
            seed: rng.random::<u64>(),
            normal_k: spec.normal_k,
            edge_radius_factor: spec.edge_radius_factor,
            hpr_gamma: spec.hpr_gamma,
        };
        match synth_scene(model, &scene_spec) {
            Ok(s) => out.push((format!("scene_{:03}", out.len()), s)),
            Err(SynthError::TooFewVisible(_)) if failures < 10 * spec.count.max(1) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
