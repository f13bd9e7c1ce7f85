//! End-to-end detection: scene preprocessing, sampling, voting, pose
//! clustering, verification and ICP refinement, plus model preparation.
//!
//! All lengths in [`DetectorConfig`] are fractions of the model diameter and
//! all angles are degrees, so one configuration serves objects of any size.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cloud::{diameter, estimate_normals, extract_edges, CloudError, EdgeParams, NormalOrientation, PointCloud};
use crate::geometry::{Point3, RigidTransform};
use crate::matcher::{cluster_poses, vote_with_tree, MatchParams, PeakExtraction};
use crate::model::{build_model, ModelDescription, ModelError, QuantParams};
use crate::refine::{icp_refine, IcpParams, IcpStatus, IcpVariant};
use crate::sampling::{cluster_downsample, uniform_downsample, SamplingParams};
use crate::verify::{verify_candidates, EdgeScore, TierReport, VerifyContext, VerifyError, VerifyMethod, VerifyParams};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Voxel pre-filter cell; 0 keeps the scene as is.
    pub voxel_rel: f64,
    pub normal_k: usize,
    /// Re-estimate normals even when the scene has them.
    pub recompute_normals: bool,
    /// Re-detect edges even when the scene has them.
    pub recompute_edges: bool,
    pub edge_radius_rel: f64,
    pub edge_gap_deg: f64,
    /// Sensor position used to orient estimated normals.
    pub viewpoint: [f64; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            voxel_rel: 0.025,
            normal_k: 25,
            recompute_normals: true,
            recompute_edges: true,
            edge_radius_rel: 0.04,
            edge_gap_deg: 90.0,
            viewpoint: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    pub dist_step_rel: f64,
    pub angle_step_deg: f64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            dist_step_rel: 0.025,
            angle_step_deg: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Voxel cell of the cloud the feature table is built from.
    pub cell_rel: f64,
    /// Voxel cell of the denser cloud used by ICP.
    pub refine_cell_rel: f64,
    /// Neighbours for normals when the model file has none.
    pub normal_k: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            cell_rel: 0.05,
            refine_cell_rel: 0.015,
            normal_k: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Edge-preserving multi-resolution clustering.
    Edge,
    /// Plain voxel centroids, sized to give at least as many points as the
    /// edge-aware mode would.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub mode: SamplingMode,
    pub base_cell_rel: f64,
    pub theta0_deg: f64,
    pub levels: usize,
    pub theta_decay: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            mode: SamplingMode::Edge,
            base_cell_rel: 0.05,
            theta0_deg: 30.0,
            levels: 2,
            theta_decay: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub ref_fraction: f64,
    pub alpha_bins: usize,
    /// Keep accumulator peaks above this fraction of the maximum; 1 keeps
    /// only the best cell.
    pub peak_rel: f64,
    pub cluster_rot_deg: f64,
    pub cluster_trans_rel: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            ref_fraction: 0.2,
            alpha_bins: 72,
            peak_rel: 0.9,
            cluster_rot_deg: 12.0,
            cluster_trans_rel: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EarlyExit {
    /// Vote tiers with early acceptance.
    On,
    /// Vote tiers, every top candidate of both tiers scored.
    Off,
    /// One ranked list, early acceptance kept.
    NoTiers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub method: VerifyMethod,
    pub early_exit: EarlyExit,
    pub top_n: usize,
    pub aabb_scale: f64,
    pub accept_threshold: f64,
    pub fallback_threshold: f64,
    pub match_dist_rel: f64,
    pub edge_cluster_rel: f64,
    /// ICP iterations run on each candidate before its full scoring, with
    /// the `[icp]` correspondence distance and variant; 0 scores the coarse
    /// pose as voted.
    pub polish_iterations: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            method: VerifyMethod::Edge,
            early_exit: EarlyExit::On,
            top_n: 9,
            aabb_scale: 1.4,
            accept_threshold: 0.7,
            fallback_threshold: 0.6,
            match_dist_rel: 0.02,
            edge_cluster_rel: 0.1,
            polish_iterations: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub enabled: bool,
    pub variant: IcpVariant,
    pub max_iterations: usize,
    pub correspondence_rel: f64,
    pub convergence_rel: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            variant: IcpVariant::PointToPlane,
            max_iterations: 30,
            correspondence_rel: 0.05,
            convergence_rel: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub preprocess: PreprocessConfig,
    pub quant: QuantConfig,
    pub model: ModelConfig,
    pub sampling: SamplingConfig,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    pub verify: VerifyConfig,
    pub icp: IcpConfig,
}

fn positive(name: &str, v: f64) -> Result<(), String> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} must be positive, got {v}"))
    }
}

impl DetectorConfig {
    /// Checks every field; the message names the offending key.
    pub fn validate(&self) -> Result<(), String> {
        let p = &self.preprocess;
        if !(p.voxel_rel >= 0.0 && p.voxel_rel.is_finite()) {
            return Err("preprocess.voxel_rel must be non-negative".into());
        }
        if p.normal_k < 3 {
            return Err("preprocess.normal_k must be at least 3".into());
        }
        positive("preprocess.edge_radius_rel", p.edge_radius_rel)?;
        if !(p.edge_gap_deg > 0.0 && p.edge_gap_deg <= 360.0) {
            return Err("preprocess.edge_gap_deg must lie in (0, 360]".into());
        }
        positive("quant.dist_step_rel", self.quant.dist_step_rel)?;
        if !(self.quant.angle_step_deg > 0.0 && self.quant.angle_step_deg <= 180.0) {
            return Err("quant.angle_step_deg must lie in (0, 180]".into());
        }
        positive("model.cell_rel", self.model.cell_rel)?;
        positive("model.refine_cell_rel", self.model.refine_cell_rel)?;
        if self.model.normal_k < 3 {
            return Err("model.normal_k must be at least 3".into());
        }
        let d = 1.0;
        self.sampling_params(d).validate().map_err(|e| format!("sampling: {e}"))?;
        self.match_params(d).validate().map_err(|e| format!("match: {e}"))?;
        if !(self.matching.peak_rel > 0.0 && self.matching.peak_rel <= 1.0) {
            return Err("match.peak_rel must lie in (0, 1]".into());
        }
        self.verify_params(d).validate().map_err(|e| format!("verify: {e}"))?;
        positive("verify.match_dist_rel", self.verify.match_dist_rel)?;
        positive("verify.edge_cluster_rel", self.verify.edge_cluster_rel)?;
        self.icp_params(d).validate().map_err(|e| format!("icp: {e}"))?;
        Ok(())
    }

    pub fn quant_params<T: Real>(&self) -> QuantParams<T> {
        QuantParams {
            delta_dist_rel: T::of(self.quant.dist_step_rel),
            delta_angle: T::from_degrees(self.quant.angle_step_deg),
        }
    }

    pub fn sampling_params<T: Real>(&self, d: T) -> SamplingParams<T> {
        let s = &self.sampling;
        SamplingParams {
            base_cell: T::of(s.base_cell_rel) * d,
            theta0: T::from_degrees(s.theta0_deg),
            levels: s.levels,
            theta_decay: T::of(s.theta_decay),
            preserve_edges: true,
        }
    }

    pub fn match_params<T: Real>(&self, d: T) -> MatchParams<T> {
        let m = &self.matching;
        MatchParams {
            ref_fraction: T::of(m.ref_fraction),
            alpha_bins: m.alpha_bins,
            peak_extraction: if m.peak_rel >= 1.0 {
                PeakExtraction::BestOnly
            } else {
                PeakExtraction::AboveRelative(T::of(m.peak_rel))
            },
            cluster_rot_thresh: T::from_degrees(m.cluster_rot_deg),
            cluster_trans_thresh: T::of(m.cluster_trans_rel) * d,
        }
    }

    pub fn verify_params<T: Real>(&self, d: T) -> VerifyParams<T> {
        let v = &self.verify;
        VerifyParams {
            top_n: v.top_n,
            aabb_scale: T::of(v.aabb_scale),
            accept_threshold: T::of(v.accept_threshold),
            fallback_threshold: T::of(v.fallback_threshold),
            match_dist: T::of(v.match_dist_rel) * d,
            edge_cluster_dist: T::of(v.edge_cluster_rel) * d,
            method: v.method,
            early_exit: v.early_exit != EarlyExit::Off,
            tiers: v.early_exit != EarlyExit::NoTiers,
            polish: (v.polish_iterations > 0).then(|| IcpParams {
                max_iterations: v.polish_iterations,
                ..self.icp_params(d)
            }),
        }
    }

    pub fn icp_params<T: Real>(&self, d: T) -> IcpParams<T> {
        IcpParams {
            max_iterations: self.icp.max_iterations,
            correspondence_dist: T::of(self.icp.correspondence_rel) * d,
            convergence_eps: T::of(self.icp.convergence_rel) * d,
            variant: self.icp.variant,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scene is empty")]
    EmptyScene,
    #[error("no pose hypothesis found")]
    NoHypothesis,
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl DetectError {
    /// True for outcomes that mean "nothing found" rather than a failure.
    pub fn is_no_detection(&self) -> bool {
        matches!(self, DetectError::EmptyScene | DetectError::NoHypothesis)
    }
}

/// Samples and describes a raw model cloud. Normals are estimated outward
/// from the centroid when missing.
pub fn prepare_model<T: Real>(raw: &PointCloud<T>, cfg: &DetectorConfig) -> Result<ModelDescription<T>, DetectError> {
    cfg.validate().map_err(DetectError::Config)?;
    if raw.len() < 3 {
        return Err(ModelError::TooFewPoints(raw.len()).into());
    }
    let oriented = if raw.has_normals {
        raw.clone()
    } else {
        estimate_normals(raw, cfg.model.normal_k.min(raw.len()), NormalOrientation::OutwardFromCentroid)?.cloud
    };
    // coarse size estimate to pick cells; the table uses the exact diameter
    // of the sampled cloud
    let diag = oriented.aabb().map(|b| b.diagonal()).unwrap_or_else(T::zero);
    if !(diag > T::zero()) {
        return Err(ModelError::InvalidQuant("model has zero extent".into()).into());
    }
    let d_est = diameter(&uniform_downsample(&oriented, diag / T::of(25.0))?);
    let sampled = uniform_downsample(&oriented, T::of(cfg.model.cell_rel) * d_est)?;
    let mut model = build_model(&sampled, cfg.quant_params())?;
    model.refine_cloud = uniform_downsample(&oriented, T::of(cfg.model.refine_cell_rel) * model.diameter)?;
    model.refine_cloud.has_edges = false;
    for p in &mut model.refine_cloud.points {
        p.is_edge = false;
    }
    Ok(model)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub preprocess: f64,
    pub sampling: f64,
    pub voting: f64,
    pub clustering: f64,
    pub verification: f64,
    pub refinement: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IcpSummary {
    pub status: IcpStatus,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct Detection<T: Real> {
    /// Final model-to-scene pose.
    pub pose: RigidTransform<T>,
    /// Pose chosen by verification (polished if configured), before the
    /// final ICP.
    pub coarse_pose: RigidTransform<T>,
    pub votes: u64,
    pub cluster_index: usize,
    pub score: EdgeScore,
    pub report: TierReport,
    pub icp: Option<IcpSummary>,
    pub timings: StageTimings,
    pub scene_points: usize,
    pub preprocessed_points: usize,
    pub sampled_points: usize,
    pub hypotheses: usize,
    pub clusters: usize,
}

/// A prepared model with its detection settings.
#[derive(Debug, Clone)]
pub struct Detector<T: Real> {
    pub model: ModelDescription<T>,
    pub config: DetectorConfig,
}

impl<T: Real> Detector<T> {
    pub fn new(model: ModelDescription<T>, config: DetectorConfig) -> Result<Self, DetectError> {
        config.validate().map_err(DetectError::Config)?;
        Ok(Self { model, config })
    }

    pub fn diameter(&self) -> T {
        self.model.diameter
    }

    /// Voxel filter, then normals and edges as configured.
    pub fn preprocess(&self, scene: &PointCloud<T>) -> Result<PointCloud<T>, DetectError> {
        let p = &self.config.preprocess;
        let d = self.model.diameter;
        let mut cloud = if p.voxel_rel > 0.0 {
            uniform_downsample(scene, T::of(p.voxel_rel) * d)?
        } else {
            scene.clone()
        };
        if p.recompute_normals || !cloud.has_normals {
            let k = p.normal_k.min(cloud.len());
            if k < 3 {
                return Err(DetectError::EmptyScene);
            }
            let vp = Point3::new(T::of(p.viewpoint[0]), T::of(p.viewpoint[1]), T::of(p.viewpoint[2]));
            cloud = estimate_normals(&cloud, k, NormalOrientation::TowardViewpoint(vp))?.cloud;
        }
        if p.recompute_edges || !cloud.has_edges {
            let params = EdgeParams {
                radius: T::of(p.edge_radius_rel) * d,
                gap_threshold: T::from_degrees(p.edge_gap_deg),
            };
            cloud = extract_edges(&cloud, &params)?.cloud;
        }
        Ok(cloud)
    }

    /// Reference cloud for voting.
    pub fn sample(&self, pre: &PointCloud<T>) -> Result<PointCloud<T>, DetectError> {
        let params = self.config.sampling_params(self.model.diameter);
        let edge = cluster_downsample(pre, &params)?;
        match self.config.sampling.mode {
            SamplingMode::Edge => Ok(edge),
            SamplingMode::Uniform => Ok(uniform_at_least(pre, params.base_cell, edge.len())?),
        }
    }

    pub fn detect(&self, scene: &PointCloud<T>) -> Result<Detection<T>, DetectError> {
        let start = Instant::now();
        if scene.is_empty() {
            return Err(DetectError::EmptyScene);
        }
        let d = self.model.diameter;
        let mut timings = StageTimings::default();

        let t = Instant::now();
        let pre = self.preprocess(scene)?;
        timings.preprocess = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let sampled = self.sample(&pre)?;
        timings.sampling = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mp = self.config.match_params(d);
        let tree = sampled.kdtree();
        let hyps = vote_with_tree(&sampled, &tree, &self.model, &mp);
        timings.voting = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let clusters = cluster_poses(&hyps, &mp);
        timings.clustering = t.elapsed().as_secs_f64();
        if clusters.is_empty() {
            return Err(DetectError::NoHypothesis);
        }

        let t = Instant::now();
        let vp = self.config.verify_params(d);
        let ctx = VerifyContext::new(&self.model, &pre).map_err(|e| match e {
            VerifyError::MissingEdges => DetectError::Cloud(CloudError::MissingAttribute { required: "edge flags" }),
            VerifyError::NoCandidates => DetectError::NoHypothesis,
        })?;
        let verdict = verify_candidates(&clusters, &ctx, &vp).map_err(|_| DetectError::NoHypothesis)?;
        timings.verification = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let (pose, icp) = if self.config.icp.enabled {
            let r = icp_refine(&verdict.pose, &self.model.refine_cloud, &pre, &self.config.icp_params(d));
            let summary = IcpSummary {
                status: r.status,
                iterations: r.iterations,
                residual: r.residual.as_f64(),
            };
            (r.pose, Some(summary))
        } else {
            (verdict.pose, None)
        };
        timings.refinement = t.elapsed().as_secs_f64();
        timings.total = start.elapsed().as_secs_f64();

        Ok(Detection {
            pose,
            coarse_pose: verdict.pose,
            votes: clusters[verdict.cluster_index].total_votes,
            cluster_index: verdict.cluster_index,
            score: verdict.score,
            report: verdict.report,
            icp,
            timings,
            scene_points: scene.len(),
            preprocessed_points: pre.len(),
            sampled_points: sampled.len(),
            hypotheses: hyps.len(),
            clusters: clusters.len(),
        })
    }
}

/// Uniform voxel sampling with the largest cell (shrinking from `start`
/// in 5% steps) that yields at least `target` points.
pub fn uniform_at_least<T: Real>(cloud: &PointCloud<T>, start: T, target: usize) -> Result<PointCloud<T>, CloudError> {
    let target = target.min(cloud.len());
    let mut cell = start;
    loop {
        let out = uniform_downsample(cloud, cell)?;
        if out.len() >= target {
            return Ok(out);
        }
        cell *= T::of(0.95);
    }
}
