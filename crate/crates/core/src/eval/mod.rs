//! Pose error metrics, recognition statistics, noise injection, procedural
//! test objects, synthetic 2.5D scenes and the dataset benchmark.

pub mod bench;
pub mod shapes;
pub mod synth;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::geometry::{Point3, RigidTransform};
use crate::spatial::KdTree;
use crate::Real;

/// Relative thresholds both reported by default.
pub const ZETA_TIGHT: f64 = 0.05;
pub const ZETA_LOOSE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalParams {
    pub zeta_rel: f64,
    pub symmetric_object: bool,
    /// Include the object-centre distance in ADI.
    pub adi_center_term: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            zeta_rel: ZETA_LOOSE,
            symmetric_object: false,
            adi_center_term: true,
        }
    }
}

/// Mean distance between model points under the two poses.
pub fn add_error<T: Real>(est: &RigidTransform<T>, gt: &RigidTransform<T>, model: &PointCloud<T>) -> T {
    assert!(!model.is_empty(), "ADD needs a nonempty model");
    let sum = model
        .positions()
        .fold(T::zero(), |a, p| a + (gt.transform_point(p) - est.transform_point(p)).norm());
    sum / T::of(model.len() as f64)
}

/// Mean closest-point distance from ground-truth-posed to estimate-posed
/// model points.
pub fn adi_closest_term<T: Real>(est: &RigidTransform<T>, gt: &RigidTransform<T>, model: &PointCloud<T>) -> T {
    assert!(!model.is_empty(), "ADI needs a nonempty model");
    let posed: Vec<Point3<T>> = model.positions().map(|p| est.transform_point(p)).collect();
    let tree = KdTree::build(posed.iter());
    let sum = model.positions().fold(T::zero(), |a, p| {
        let (_, d2) = tree.nearest(&gt.transform_point(p)).expect("nonempty tree");
        a + d2.sqrt()
    });
    sum / T::of(model.len() as f64)
}

/// ADI with the object-centre term: the larger of the closest-point mean
/// and the displacement of `center`.
pub fn adi_error<T: Real>(est: &RigidTransform<T>, gt: &RigidTransform<T>, model: &PointCloud<T>, center: &Point3<T>) -> T {
    let closest = adi_closest_term(est, gt, model);
    let centre = (gt.transform_point(center) - est.transform_point(center)).norm();
    if centre > closest {
        centre
    } else {
        closest
    }
}

/// Per-scene evaluation result, one JSON line each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scene_id: String,
    /// Scene class, the part of the id before the first underscore.
    pub class: String,
    pub detected: bool,
    /// Model to scene, row-major; `None` when nothing was detected.
    pub est_pose: Option<[[f64; 4]; 4]>,
    pub gt_pose: [[f64; 4]; 4],
    pub e_add: Option<f64>,
    pub e_adi: Option<f64>,
    pub symmetric: bool,
    pub diameter: f64,
    pub positive_at_005d: bool,
    pub positive_at_01d: bool,
    pub edge_score: Option<f64>,
    pub detect_time: f64,
    pub verify_time: f64,
    pub full_scorings: usize,
    pub scene_points: usize,
    pub sampled_points: usize,
}

impl EvalRecord {
    /// The error the positivity test uses.
    pub fn error(&self) -> Option<f64> {
        if self.symmetric {
            self.e_adi
        } else {
            self.e_add
        }
    }

    pub fn positive_at(&self, zeta_rel: f64) -> bool {
        self.detected && self.error().is_some_and(|e| e <= zeta_rel * self.diameter)
    }
}

/// Class of a scene id: text before the first `_`, or the whole id.
pub fn scene_class(scene_id: &str) -> String {
    scene_id.split('_').next().unwrap_or(scene_id).to_string()
}

/// Fraction of records with error at most `zeta_rel * d`. Scenes without a
/// detection count as negatives.
pub fn recognition_rate(records: &[EvalRecord], zeta_rel: f64) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.positive_at(zeta_rel)).count() as f64 / records.len() as f64
}

/// Recognition rate of each scene class.
pub fn recognition_rate_by_class(records: &[EvalRecord], zeta_rel: f64) -> BTreeMap<String, f64> {
    let mut groups: BTreeMap<String, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.class.clone()).or_default().push(r.clone());
    }
    groups.into_iter().map(|(k, v)| (k, recognition_rate(&v, zeta_rel))).collect()
}

/// Positives and ground-truth instances of one object in one scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceTally {
    pub positives: usize,
    pub ground_truth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecallError {
    #[error("object {0} has no ground-truth instances")]
    NoGroundTruth(String),
    #[error("no objects")]
    Empty,
    #[error("object {0} has more positives than ground-truth instances")]
    TooManyPositives(String),
}

/// Unweighted mean over objects of (sum of positives / sum of instances).
pub fn mean_recall(per_object: &BTreeMap<String, Vec<InstanceTally>>) -> Result<f64, RecallError> {
    if per_object.is_empty() {
        return Err(RecallError::Empty);
    }
    let mut total = 0.0;
    for (name, tallies) in per_object {
        let pos: usize = tallies.iter().map(|t| t.positives).sum();
        let gt: usize = tallies.iter().map(|t| t.ground_truth).sum();
        if gt == 0 {
            return Err(RecallError::NoGroundTruth(name.clone()));
        }
        if pos > gt {
            return Err(RecallError::TooManyPositives(name.clone()));
        }
        total += pos as f64 / gt as f64;
    }
    Ok(total / per_object.len() as f64)
}

/// Adds i.i.d. zero-mean Gaussian noise to every coordinate. Normals and
/// edge labels are left alone.
pub fn add_gaussian_noise<T: Real>(cloud: &PointCloud<T>, sigma: f64, seed: u64) -> PointCloud<T> {
    assert!(sigma >= 0.0 && sigma.is_finite(), "sigma must be a finite non-negative length");
    let mut out = cloud.clone();
    if sigma == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    for p in &mut out.points {
        for a in 0..3 {
            p.position[a] += T::of(normal.sample(&mut rng));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_transform, Vector3};
    use proptest::prelude::*;
    use rand::RngExt;

    fn random_cloud(n: usize, seed: u64) -> PointCloud<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::from_positions((0..n).map(|_| Point3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * 0.1))
    }

    fn cylinder(n_ring: usize, n_h: usize) -> PointCloud<f64> {
        let mut pts = Vec::new();
        for k in 0..n_h {
            for i in 0..n_ring {
                let a = i as f64 * std::f64::consts::TAU / n_ring as f64;
                pts.push(Point3::new(0.03 * a.cos(), 0.03 * a.sin(), k as f64 * 0.005));
            }
        }
        PointCloud::from_positions(pts)
    }

    fn record(e: f64, d: f64) -> EvalRecord {
        EvalRecord {
            scene_id: "a_0".into(),
            class: "a".into(),
            detected: true,
            est_pose: Some(RigidTransform::<f64>::identity().to_row_major()),
            gt_pose: RigidTransform::<f64>::identity().to_row_major(),
            e_add: Some(e),
            e_adi: Some(e),
            symmetric: false,
            diameter: d,
            positive_at_005d: e <= 0.05 * d,
            positive_at_01d: e <= 0.1 * d,
            edge_score: None,
            detect_time: 0.0,
            verify_time: 0.0,
            full_scorings: 0,
            scene_points: 0,
            sampled_points: 0,
        }
    }

    #[test]
    fn add_examples() {
        let c = random_cloud(200, 1);
        let gt = RigidTransform::from_rotation_vector(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.0, 0.0, 0.5));
        assert_eq!(add_error(&gt, &gt, &c), 0.0);
        let est = gt * RigidTransform::from_translation(Vector3::new(0.003, 0.0, 0.0));
        assert!((add_error(&est, &gt, &c) - 0.003).abs() < 1e-12);
        let centre = c.centroid().unwrap();
        assert_eq!(adi_error(&gt, &gt, &c, &centre), 0.0);
        let shift = RigidTransform::from_translation(Vector3::new(0.0, 0.004, 0.0));
        assert!((adi_error(&(shift * gt), &gt, &c, &centre) - 0.004).abs() < 1e-12);
    }

    #[test]
    fn add_and_adi_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_cloud(200, 3);
        let centre = c.centroid().unwrap();
        for _ in 0..50 {
            let est: RigidTransform<f64> = random_transform(&mut rng, 0.1);
            let gt: RigidTransform<f64> = random_transform(&mut rng, 0.1);
            let g: Vec<_> = c.positions().map(|p| gt.to_matrix() * p.to_homogeneous()).collect();
            let e: Vec<_> = c.positions().map(|p| est.to_matrix() * p.to_homogeneous()).collect();
            let add = g.iter().zip(&e).map(|(a, b)| (a - b).norm()).sum::<f64>() / 200.0;
            let closest = g
                .iter()
                .map(|a| e.iter().map(|b| (a - b).norm()).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / 200.0;
            let ctr = (gt.to_matrix() * centre.to_homogeneous() - est.to_matrix() * centre.to_homogeneous()).norm();
            assert!((add_error(&est, &gt, &c) - add).abs() < 1e-12);
            assert!((adi_error(&est, &gt, &c, &centre) - closest.max(ctr)).abs() < 1e-12);
            assert!(add_error(&est, &gt, &c) >= adi_closest_term(&est, &gt, &c) - 1e-15);
        }
    }

    #[test]
    fn adi_ignores_symmetry_rotation() {
        let c = cylinder(60, 10);
        let gt = RigidTransform::<f64>::identity();
        let est = RigidTransform::from_rotation_vector(Vector3::new(0.0, 0.0, 0.5), Vector3::zeros());
        let centre = Point3::new(0.0, 0.0, 0.0225);
        let adi = adi_error(&est, &gt, &c, &centre);
        let add = add_error(&est, &gt, &c);
        let step = 0.03 * std::f64::consts::TAU / 60.0;
        assert!(adi <= step);
        assert!(adi * 5.0 < add);
    }

    #[test]
    fn rr_examples() {
        let d = 1.0;
        assert_eq!(recognition_rate(&[record(0.0, d), record(0.0, d)], 0.05), 1.0);
        assert_eq!(recognition_rate(&[record(0.04, d), record(0.06, d)], 0.05), 0.5);
        let mut miss = record(0.0, d);
        miss.detected = false;
        miss.e_add = None;
        assert_eq!(recognition_rate(&[record(0.0, d), miss], 0.1), 0.5);
    }

    proptest! {
        #[test]
        fn rr_monotone_in_zeta(errs in proptest::collection::vec(0.0f64..0.3, 1..40), a in 0.0f64..0.3, b in 0.0f64..0.3) {
            let recs: Vec<_> = errs.iter().map(|&e| record(e, 1.0)).collect();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(recognition_rate(&recs, lo) <= recognition_rate(&recs, hi));
        }
    }

    #[test]
    fn mean_recall_examples() {
        let t = |p, g| InstanceTally {
            positives: p,
            ground_truth: g,
        };
        let one: BTreeMap<_, _> = [("a".to_string(), vec![t(1, 1), t(1, 1)])].into();
        assert_eq!(mean_recall(&one).unwrap(), 1.0);
        let two: BTreeMap<_, _> = [("a".to_string(), vec![t(2, 2)]), ("b".to_string(), vec![t(1, 1), t(0, 1)])].into();
        assert_eq!(mean_recall(&two).unwrap(), 0.75);
        // hand computation: a 3/4, b 1/3, c 2/2 -> (0.75 + 1/3 + 1) / 3
        let three: BTreeMap<_, _> = [
            ("a".to_string(), vec![t(1, 2), t(2, 2)]),
            ("b".to_string(), vec![t(0, 1), t(1, 1), t(0, 1)]),
            ("c".to_string(), vec![t(2, 2)]),
        ]
        .into();
        assert!((mean_recall(&three).unwrap() - (0.75 + 1.0 / 3.0 + 1.0) / 3.0).abs() < 1e-15);
        // duplicating a scene with its counts changes nothing
        let mut dup = three.clone();
        dup.get_mut("a").unwrap().push(t(1, 2));
        dup.get_mut("a").unwrap().push(t(2, 2));
        assert!((mean_recall(&dup).unwrap() - mean_recall(&three).unwrap()).abs() < 1e-15);
        let bad: BTreeMap<_, _> = [("z".to_string(), vec![t(0, 0)])].into();
        assert!(matches!(mean_recall(&bad), Err(RecallError::NoGroundTruth(_))));
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let c = random_cloud(100_000, 5);
        assert_eq!(add_gaussian_noise(&c, 0.0, 1), c);
        let sigma = 0.001;
        let n = add_gaussian_noise(&c, sigma, 9);
        assert_eq!(n, add_gaussian_noise(&c, sigma, 9));
        for a in 0..3 {
            let d: Vec<f64> = c.points.iter().zip(&n.points).map(|(p, q)| q.position[a] - p.position[a]).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let sd = (d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
            assert!((sd - sigma).abs() < 0.02 * sigma, "axis {a} sd {sd}");
        }
    }

    #[test]
    fn class_from_id() {
        assert_eq!(scene_class("occl_12"), "occl");
        assert_eq!(scene_class("plain"), "plain");
    }
}
