//! Dataset benchmark: directory loading, ground-truth pose files, one
//! [`EvalRecord`] per scene and per-class summaries.
//!
//! Layout: `model.ply`, `scenes/<id>.ply` and `gt/<id>.txt`, where a pose
//! file holds four lines of four whitespace-separated numbers (row-major
//! model-to-scene transform).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{
    add_error, adi_error, mean_recall, recognition_rate, scene_class, EvalParams, EvalRecord, InstanceTally, ZETA_LOOSE, ZETA_TIGHT,
};
use crate::cloud::{load_cloud, CloudError, PointCloud};
use crate::geometry::RigidTransform;
use crate::pipeline::{DetectError, Detection, Detector};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Pose { path: String, message: String },
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error("{0}: no scenes found")]
    NoScenes(String),
    #[error("scene {scene}: missing ground truth {path}")]
    MissingGroundTruth { scene: String, path: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parses a 4x4 row-major pose. The rotation must be orthonormal to 1e-6.
pub fn parse_pose(text: &str) -> Result<RigidTransform<f64>, String> {
    let rows: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    if rows.len() != 4 {
        return Err(format!("expected 4 rows, found {}", rows.len()));
    }
    let mut m = [[0.0; 4]; 4];
    for (r, line) in rows.iter().enumerate() {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| format!("row {}: {e}", r + 1)))
            .collect::<Result<_, _>>()?;
        if vals.len() != 4 {
            return Err(format!("row {} has {} values, expected 4", r + 1, vals.len()));
        }
        m[r].copy_from_slice(&vals);
    }
    RigidTransform::from_row_major(&m, 1e-6).map_err(|e| e.to_string())
}

/// Four lines, full precision, preceded by a convention comment.
pub fn format_pose(pose: &RigidTransform<f64>) -> String {
    let mut s = String::from("# model-to-scene transform, metres, row-major\n");
    for row in pose.to_row_major() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_pose_file(path: impl AsRef<Path>) -> Result<RigidTransform<f64>, BenchError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_pose(&text).map_err(|message| BenchError::Pose {
        path: path.display().to_string(),
        message,
    })
}

pub fn write_pose_file(path: impl AsRef<Path>, pose: &RigidTransform<f64>) -> Result<(), BenchError> {
    let path = path.as_ref();
    fs::write(path, format_pose(pose)).map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct DatasetScene {
    pub id: String,
    pub path: PathBuf,
    pub gt: RigidTransform<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub model_path: PathBuf,
    /// Sorted by id.
    pub scenes: Vec<DatasetScene>,
}

/// Indexes a dataset directory. Scene clouds are loaded lazily.
pub fn open_dataset(dir: impl AsRef<Path>) -> Result<Dataset, BenchError> {
    let dir = dir.as_ref();
    let model_path = dir.join("model.ply");
    if !model_path.is_file() {
        return Err(BenchError::Io {
            path: model_path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "model file not found"),
        });
    }
    let scene_dir = dir.join("scenes");
    let mut ids: Vec<String> = Vec::new();
    if scene_dir.is_dir() {
        for entry in fs::read_dir(&scene_dir).map_err(io_err(&scene_dir))? {
            let path = entry.map_err(io_err(&scene_dir))?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("ply") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
    }
    if ids.is_empty() {
        return Err(BenchError::NoScenes(dir.display().to_string()));
    }
    ids.sort();
    let mut scenes = Vec::with_capacity(ids.len());
    for id in ids {
        let gt_path = dir.join("gt").join(format!("{id}.txt"));
        if !gt_path.is_file() {
            return Err(BenchError::MissingGroundTruth {
                scene: id,
                path: gt_path.display().to_string(),
            });
        }
        let gt = read_pose_file(&gt_path)?;
        scenes.push(DatasetScene {
            path: scene_dir.join(format!("{id}.ply")),
            id,
            gt,
        });
    }
    Ok(Dataset { model_path, scenes })
}

/// Scores one detection outcome against its ground truth. Errors are
/// measured on the detector's model cloud.
pub fn evaluate(
    detector: &Detector<f64>,
    scene_id: &str,
    outcome: &Result<Detection<f64>, DetectError>,
    gt: &RigidTransform<f64>,
    scene_points: usize,
    params: &EvalParams,
) -> EvalRecord {
    let model = &detector.model.model_cloud;
    let d = detector.diameter();
    let centre = model.centroid().unwrap_or_else(crate::geometry::Point3::origin);
    let mut rec = EvalRecord {
        scene_id: scene_id.to_string(),
        class: scene_class(scene_id),
        detected: false,
        est_pose: None,
        gt_pose: gt.to_row_major(),
        e_add: None,
        e_adi: None,
        symmetric: params.symmetric_object,
        diameter: d,
        positive_at_005d: false,
        positive_at_01d: false,
        edge_score: None,
        detect_time: 0.0,
        verify_time: 0.0,
        full_scorings: 0,
        scene_points,
        sampled_points: 0,
    };
    if let Ok(det) = outcome {
        rec.detected = true;
        rec.est_pose = Some(det.pose.to_row_major());
        rec.e_add = Some(add_error(&det.pose, gt, model));
        rec.e_adi = Some(if params.adi_center_term {
            adi_error(&det.pose, gt, model, &centre)
        } else {
            super::adi_closest_term(&det.pose, gt, model)
        });
        rec.edge_score = Some(det.score.s);
        rec.detect_time = det.timings.total;
        rec.verify_time = det.timings.verification;
        rec.full_scorings = det.report.full_scorings;
        rec.sampled_points = det.sampled_points;
        rec.positive_at_005d = rec.positive_at(ZETA_TIGHT);
        rec.positive_at_01d = rec.positive_at(ZETA_LOOSE);
    }
    rec
}

/// Detects and scores every scene in order. Scenes run one at a time so
/// the recorded stage times are not distorted by contention.
pub fn run_dataset(detector: &Detector<f64>, dataset: &Dataset, params: &EvalParams) -> Result<Vec<EvalRecord>, BenchError> {
    let mut out = Vec::with_capacity(dataset.scenes.len());
    for s in &dataset.scenes {
        let cloud: PointCloud<f64> = load_cloud(&s.path)?;
        let outcome = detector.detect(&cloud);
        out.push(evaluate(detector, &s.id, &outcome, &s.gt, cloud.len(), params));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub class: String,
    pub scenes: usize,
    pub detected: usize,
    pub rr_005d: f64,
    pub rr_01d: f64,
    pub mean_time: f64,
    pub mean_verify_time: f64,
    pub mean_full_scorings: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub classes: Vec<ClassSummary>,
    pub overall: ClassSummary,
    /// Mean recall over objects; one object per dataset.
    pub mr_005d: f64,
    pub mr_01d: f64,
}

fn class_summary(class: &str, records: &[&EvalRecord]) -> ClassSummary {
    let n = records.len().max(1) as f64;
    let owned: Vec<EvalRecord> = records.iter().map(|r| (*r).clone()).collect();
    ClassSummary {
        class: class.to_string(),
        scenes: records.len(),
        detected: records.iter().filter(|r| r.detected).count(),
        rr_005d: recognition_rate(&owned, ZETA_TIGHT),
        rr_01d: recognition_rate(&owned, ZETA_LOOSE),
        mean_time: records.iter().map(|r| r.detect_time).sum::<f64>() / n,
        mean_verify_time: records.iter().map(|r| r.verify_time).sum::<f64>() / n,
        mean_full_scorings: records.iter().map(|r| r.full_scorings as f64).sum::<f64>() / n,
    }
}

pub fn summarize(records: &[EvalRecord]) -> Summary {
    let mut by_class: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        by_class.entry(r.class.as_str()).or_default().push(r);
    }
    let classes = by_class.iter().map(|(c, rs)| class_summary(c, rs)).collect();
    let all: Vec<&EvalRecord> = records.iter().collect();
    let mr = |zeta: f64| {
        let tallies: Vec<InstanceTally> = records
            .iter()
            .map(|r| InstanceTally {
                positives: r.positive_at(zeta) as usize,
                ground_truth: 1,
            })
            .collect();
        mean_recall(&BTreeMap::from([("model".to_string(), tallies)])).unwrap_or(0.0)
    };
    Summary {
        classes,
        overall: class_summary("all", &all),
        mr_005d: mr(ZETA_TIGHT),
        mr_01d: mr(ZETA_LOOSE),
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>6} {:>9} {:>9} {:>10} {:>9}",
            "class", "scenes", "RR@0.05d", "RR@0.1d", "time[s]", "scorings"
        )?;
        for c in self.classes.iter().chain(std::iter::once(&self.overall)) {
            writeln!(
                f,
                "{:<16} {:>6} {:>9.2} {:>9.2} {:>10.4} {:>9.2}",
                c.class,
                c.scenes,
                100.0 * c.rr_005d,
                100.0 * c.rr_01d,
                c.mean_time,
                c.mean_full_scorings
            )?;
        }
        write!(f, "MR@0.05d {:.2}  MR@0.1d {:.2}", 100.0 * self.mr_005d, 100.0 * self.mr_01d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_transform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pose_text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let t: RigidTransform<f64> = random_transform(&mut rng, 1.0);
            let back = parse_pose(&format_pose(&t)).unwrap();
            assert!((back.to_matrix() - t.to_matrix()).abs().max() < 1e-12);
        }
        assert!(parse_pose("1 0 0 0\n0 1 0 0\n0 0 1 0\n").is_err());
        assert!(parse_pose("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 x").is_err());
        assert!(parse_pose("2 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1").is_err());
    }

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(open_dataset(dir.path()), Err(BenchError::Io { .. })));
        fs::write(dir.path().join("model.ply"), "").unwrap();
        assert!(matches!(open_dataset(dir.path()), Err(BenchError::NoScenes(_))));
    }

    fn rec(id: &str, detected: bool, e: f64) -> EvalRecord {
        EvalRecord {
            scene_id: id.into(),
            class: scene_class(id),
            detected,
            est_pose: None,
            gt_pose: RigidTransform::<f64>::identity().to_row_major(),
            e_add: detected.then_some(e),
            e_adi: None,
            symmetric: false,
            diameter: 1.0,
            positive_at_005d: false,
            positive_at_01d: false,
            edge_score: None,
            detect_time: 1.0,
            verify_time: 0.5,
            full_scorings: 2,
            scene_points: 0,
            sampled_points: 0,
        }
    }

    #[test]
    fn summary_by_class() {
        let rs = vec![
            rec("a_1", true, 0.01),
            rec("a_2", true, 0.07),
            rec("b_1", false, 0.0),
            rec("b_2", true, 0.2),
        ];
        let s = summarize(&rs);
        assert_eq!(s.classes.len(), 2);
        assert_eq!(s.classes[0].rr_005d, 0.5);
        assert_eq!(s.classes[0].rr_01d, 1.0);
        assert_eq!(s.classes[1].rr_01d, 0.0);
        assert_eq!(s.classes[1].detected, 1);
        assert_eq!(s.overall.rr_01d, 0.5);
        assert_eq!(s.mr_01d, 0.5);
        assert_eq!(s.mr_005d, 0.25);
        assert!(s.to_string().contains("MR@0.1d 50.00"));
    }
}
