//! Pose verification by edge matching inside the posed model's box, with
//! vote tiers, cheap pre-scoring and early exit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{Aabb, PointCloud};
use crate::geometry::{Point3, RigidTransform};
use crate::matcher::PoseCluster;
use crate::model::ModelDescription;
use crate::refine::{IcpModel, IcpParams};
use crate::spatial::KdTree;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyMethod {
    /// Edge matching degree inside the region of interest.
    Edge,
    /// Fraction of posed model points near any scene point.
    SurfaceOverlap,
    /// Take the most voted cluster unchanged.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyParams<T: Real> {
    pub top_n: usize,
    pub aabb_scale: T,
    pub accept_threshold: T,
    pub fallback_threshold: T,
    pub match_dist: T,
    pub edge_cluster_dist: T,
    pub method: VerifyMethod,
    pub early_exit: bool,
    pub tiers: bool,
    /// Short ICP run on each candidate right before its full scoring; the
    /// refined pose is the one scored and returned.
    pub polish: Option<IcpParams<T>>,
}

impl<T: Real> VerifyParams<T> {
    /// Defaults for a model of diameter `d` and a scene sampled at `step`.
    pub fn new(diameter: T, step: T) -> Self {
        Self {
            top_n: 9,
            aabb_scale: T::of(1.4),
            accept_threshold: T::of(0.7),
            fallback_threshold: T::of(0.6),
            match_dist: T::of(2.0) * step,
            edge_cluster_dist: T::of(0.1) * diameter,
            method: VerifyMethod::Edge,
            early_exit: true,
            tiers: true,
            polish: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.top_n < 1 {
            return Err("top_n must be at least 1".into());
        }
        if !(self.aabb_scale >= T::one()) {
            return Err("aabb_scale must be at least 1".into());
        }
        if !(T::zero() < self.fallback_threshold && self.fallback_threshold < self.accept_threshold && self.accept_threshold <= T::one()) {
            return Err("thresholds must satisfy 0 < fallback < accept <= 1".into());
        }
        if !(self.match_dist > T::zero() && self.edge_cluster_dist > T::zero()) {
            return Err("match_dist and edge_cluster_dist must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgeScore {
    pub s: f64,
    pub n_roi: usize,
    pub n_matching: usize,
    /// Nothing to score against (empty region).
    pub degenerate: bool,
}

impl EdgeScore {
    pub fn from_counts(n_matching: usize, n_roi: usize) -> Self {
        debug_assert!(n_matching <= n_roi);
        if n_roi == 0 {
            return Self {
                s: 0.0,
                n_roi,
                n_matching,
                degenerate: true,
            };
        }
        Self {
            s: n_matching as f64 / n_roi as f64,
            n_roi,
            n_matching,
            degenerate: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    EarlyAccept,
    TierFallback,
    Argmax,
    TopVotes,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisitedCandidate {
    pub cluster_index: usize,
    pub tier: u8,
    pub votes: u64,
    pub pre_score: f64,
    pub score: EdgeScore,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierReport {
    pub tier1_size: usize,
    pub tier2_size: usize,
    pub full_scorings: usize,
    pub visited: Vec<VisitedCandidate>,
    pub rule: SelectionRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification<T: Real> {
    pub pose: RigidTransform<T>,
    pub score: EdgeScore,
    pub cluster_index: usize,
    pub report: TierReport,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VerifyError {
    #[error("no candidate poses to verify")]
    NoCandidates,
    #[error("scene has no edge labels")]
    MissingEdges,
}

/// Precomputed search structures shared by all candidates of one scene.
/// Model geometry comes from the dense refinement cloud.
pub struct VerifyContext<'a, T: Real> {
    model: &'a ModelDescription<T>,
    surface: IcpModel<'a, T>,
    scene: &'a PointCloud<T>,
    scene_edges: Vec<Point3<T>>,
    edge_tree: KdTree<T>,
    scene_tree: KdTree<T>,
}

impl<'a, T: Real> VerifyContext<'a, T> {
    pub fn new(model: &'a ModelDescription<T>, scene: &'a PointCloud<T>) -> Result<Self, VerifyError> {
        if !scene.has_edges {
            return Err(VerifyError::MissingEdges);
        }
        let scene_edges = scene.edge_positions();
        Ok(Self {
            model,
            surface: IcpModel::new(&model.refine_cloud),
            scene,
            edge_tree: KdTree::build(scene_edges.iter()),
            scene_edges,
            scene_tree: scene.kdtree(),
        })
    }

    pub fn scene_edge_count(&self) -> usize {
        self.scene_edges.len()
    }

    fn posed_aabb(&self, pose: &RigidTransform<T>) -> Option<Aabb<T>> {
        let posed: Vec<Point3<T>> = self.model.refine_cloud.positions().map(|p| pose.transform_point(p)).collect();
        Aabb::from_points(posed.iter())
    }

    fn near_model(&self, pose: &RigidTransform<T>, p: &Point3<T>, dist: T) -> bool {
        self.surface.tree().any_within(&pose.inverse_transform_point(p), dist)
    }

    /// Edge matching degree of `pose`.
    pub fn score_edges(&self, pose: &RigidTransform<T>, p: &VerifyParams<T>) -> EdgeScore {
        let Some(roi) = self.posed_aabb(pose).map(|b| b.scaled(p.aabb_scale)) else {
            return EdgeScore::from_counts(0, 0);
        };
        let in_roi: Vec<Point3<T>> = self.scene_edges.iter().filter(|e| roi.contains(e)).copied().collect();
        let centre = pose.transform_point(&self.surface.centroid());
        let cutoff = T::of(0.5) * p.aabb_scale * self.model.diameter;
        let kept = single_linkage(&in_roi, p.edge_cluster_dist)
            .into_iter()
            .filter(|members| {
                let c = members.iter().fold(nalgebra::Vector3::zeros(), |a, &i| a + in_roi[i].coords) / T::of(members.len() as f64);
                (c - centre.coords).norm() <= cutoff
            })
            .flatten();
        let (mut n_roi, mut n_matching) = (0, 0);
        for i in kept {
            n_roi += 1;
            if self.near_model(pose, &in_roi[i], p.match_dist) {
                n_matching += 1;
            }
        }
        EdgeScore::from_counts(n_matching, n_roi)
    }

    /// Whole-scene fraction of edge points within `match_dist` of the posed
    /// model.
    pub fn pre_score(&self, pose: &RigidTransform<T>, p: &VerifyParams<T>) -> f64 {
        if self.scene_edges.is_empty() {
            return 0.0;
        }
        let mut candidates = Vec::new();
        self.edge_tree.within_radius(
            &pose.transform_point(&self.surface.centroid()),
            self.surface.radius() + p.match_dist,
            &mut candidates,
        );
        let hits = candidates
            .iter()
            .filter(|&&i| self.near_model(pose, &self.scene_edges[i], p.match_dist))
            .count();
        hits as f64 / self.scene_edges.len() as f64
    }

    /// Baseline: fraction of posed model points close to any scene point.
    pub fn score_surface(&self, pose: &RigidTransform<T>, p: &VerifyParams<T>) -> EdgeScore {
        let pts = &self.model.refine_cloud.points;
        let hits = pts
            .iter()
            .filter(|m| self.scene_tree.any_within(&pose.transform_point(&m.position), p.match_dist))
            .count();
        EdgeScore::from_counts(hits, pts.len())
    }

    /// Polishes `pose` when asked to, then scores it.
    fn full_score(&self, pose: &RigidTransform<T>, p: &VerifyParams<T>) -> (RigidTransform<T>, EdgeScore) {
        let pose = match &p.polish {
            Some(icp) => self.surface.refine(pose, self.scene, icp).pose,
            None => *pose,
        };
        let score = match p.method {
            VerifyMethod::SurfaceOverlap => self.score_surface(&pose, p),
            _ => self.score_edges(&pose, p),
        };
        (pose, score)
    }

    fn cheap_score(&self, pose: &RigidTransform<T>, p: &VerifyParams<T>) -> f64 {
        match p.method {
            VerifyMethod::SurfaceOverlap => self.score_surface(pose, p).s,
            _ => self.pre_score(pose, p),
        }
    }
}

/// Connected components under the "within `link` of each other" relation,
/// each listed in ascending index order, components ordered by first index.
pub fn single_linkage<T: Real>(points: &[Point3<T>], link: T) -> Vec<Vec<usize>> {
    let tree = KdTree::build(points.iter());
    let mut label = vec![usize::MAX; points.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    let mut nb = Vec::new();
    for seed in 0..points.len() {
        if label[seed] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![seed];
        label[seed] = id;
        stack.push(seed);
        while let Some(i) = stack.pop() {
            tree.within_radius(&points[i], link, &mut nb);
            for &j in &nb {
                if label[j] == usize::MAX {
                    label[j] = id;
                    members.push(j);
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

/// Edge matching degree of a single pose, building the search structures
/// on the fly.
pub fn score_pose_edges<T: Real>(
    pose: &RigidTransform<T>,
    model: &ModelDescription<T>,
    scene: &PointCloud<T>,
    p: &VerifyParams<T>,
) -> Result<EdgeScore, VerifyError> {
    Ok(VerifyContext::new(model, scene)?.score_edges(pose, p))
}

/// Picks one pose out of `clusters` (sorted by votes, descending).
pub fn verify_candidates<T: Real>(
    clusters: &[PoseCluster<T>],
    ctx: &VerifyContext<'_, T>,
    p: &VerifyParams<T>,
) -> Result<Verification<T>, VerifyError> {
    if clusters.is_empty() {
        return Err(VerifyError::NoCandidates);
    }
    let vmax = clusters.iter().map(|c| c.total_votes).max().unwrap_or(0);
    let (tier1, tier2): (Vec<usize>, Vec<usize>) = (0..clusters.len()).partition(|&i| 2 * clusters[i].total_votes > vmax);
    let mut report = TierReport {
        tier1_size: tier1.len(),
        tier2_size: tier2.len(),
        full_scorings: 0,
        visited: Vec::new(),
        rule: SelectionRule::Argmax,
    };

    if p.method == VerifyMethod::None {
        let best = (0..clusters.len())
            .max_by(|&a, &b| clusters[a].total_votes.cmp(&clusters[b].total_votes).then(b.cmp(&a)))
            .unwrap();
        report.rule = SelectionRule::TopVotes;
        return Ok(Verification {
            pose: clusters[best].pose,
            score: EdgeScore::from_counts(0, 0),
            cluster_index: best,
            report,
        });
    }

    // pre-score order: higher pre-score, then more votes, then lower index
    let ranked = |members: &[usize], take: usize| -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = members.par_iter().map(|&i| (i, ctx.cheap_score(&clusters[i].pose, p))).collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then(clusters[b.0].total_votes.cmp(&clusters[a.0].total_votes))
                .then(a.0.cmp(&b.0))
        });
        scored.truncate(take);
        scored
    };

    // a tier is only pre-scored once the run reaches it
    let passes: Vec<(u8, Vec<usize>, usize)> = if p.tiers {
        vec![(1, tier1, p.top_n), (2, tier2, p.top_n)]
    } else {
        vec![(0, (0..clusters.len()).collect(), 2 * p.top_n)]
    };

    let accept = p.accept_threshold.as_f64();
    let fallback = p.fallback_threshold.as_f64();
    let mut poses = Vec::new();
    for (tier, members, take) in passes {
        let list = ranked(&members, take);
        let start = report.visited.len();
        for (i, pre) in list {
            let (pose, score) = ctx.full_score(&clusters[i].pose, p);
            poses.push(pose);
            report.full_scorings += 1;
            report.visited.push(VisitedCandidate {
                cluster_index: i,
                tier,
                votes: clusters[i].total_votes,
                pre_score: pre,
                score,
            });
            if p.early_exit && score.s > accept {
                report.rule = SelectionRule::EarlyAccept;
                return Ok(finish(&poses, report.visited.len() - 1, report));
            }
        }
        if p.early_exit && p.tiers {
            if let Some(k) = argmax(&report.visited[start..]) {
                if report.visited[start + k].score.s > fallback {
                    report.rule = SelectionRule::TierFallback;
                    return Ok(finish(&poses, start + k, report));
                }
            }
        }
    }
    let k = argmax(&report.visited).expect("at least one candidate is scored");
    report.rule = SelectionRule::Argmax;
    Ok(finish(&poses, k, report))
}

/// First visited candidate with the highest score.
fn argmax(visited: &[VisitedCandidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, v) in visited.iter().enumerate() {
        if best.is_none_or(|b| v.score.s > visited[b].score.s) {
            best = Some(k);
        }
    }
    best
}

/// `poses[k]` is the (possibly polished) pose of `report.visited[k]`.
fn finish<T: Real>(poses: &[RigidTransform<T>], visited: usize, report: TierReport) -> Verification<T> {
    let v = &report.visited[visited];
    Verification {
        pose: poses[visited],
        score: v.score,
        cluster_index: v.cluster_index,
        report,
    }
}
