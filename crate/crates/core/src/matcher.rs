//! Online voting over (model reference, alpha) and pose clustering.

use nalgebra::{UnitQuaternion, Vector4};
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::geometry::{angle_between, RigidTransform, Vector3};
use crate::model::{compute_ppf, keeps_normal_angle, pose_from_alignment, quantize_ppf, wrap_pi, CanonicalFrame, ModelDescription};
use crate::spatial::KdTree;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PeakExtraction<T: Real> {
    /// Only the single best cell (lowest index on ties).
    BestOnly,
    /// Every cell with at least `rho` times the maximum count.
    AboveRelative(T),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams<T: Real> {
    pub ref_fraction: T,
    pub alpha_bins: usize,
    pub peak_extraction: PeakExtraction<T>,
    /// Radians.
    pub cluster_rot_thresh: T,
    /// Absolute length.
    pub cluster_trans_thresh: T,
}

impl<T: Real> MatchParams<T> {
    pub fn for_diameter(diameter: T) -> Self {
        Self {
            ref_fraction: T::of(0.2),
            alpha_bins: 72,
            peak_extraction: PeakExtraction::AboveRelative(T::of(0.9)),
            cluster_rot_thresh: T::from_degrees(12.0),
            cluster_trans_thresh: T::of(0.05) * diameter,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.ref_fraction > T::zero() && self.ref_fraction <= T::one()) {
            return Err("ref_fraction must be in (0, 1]".into());
        }
        if self.alpha_bins < 4 {
            return Err("alpha_bins must be at least 4".into());
        }
        if !(self.cluster_rot_thresh > T::zero() && self.cluster_trans_thresh > T::zero()) {
            return Err("cluster thresholds must be positive".into());
        }
        if let PeakExtraction::AboveRelative(rho) = self.peak_extraction {
            if !(rho > T::zero() && rho <= T::one()) {
                return Err("peak threshold must be in (0, 1]".into());
            }
        }
        Ok(())
    }

    /// Distance between consecutive reference indices.
    pub fn reference_step(&self) -> usize {
        (T::one() / self.ref_fraction).ceil().floor_index().max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseHypothesis<T: Real> {
    /// Model to scene.
    pub pose: RigidTransform<T>,
    pub votes: u32,
    pub scene_ref_index: usize,
    pub model_ref_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseCluster<T: Real> {
    pub pose: RigidTransform<T>,
    pub total_votes: u64,
    pub members: usize,
}

/// Wraps degrees into `(-180, 180]`.
pub fn wrap_angle<T: Real>(degrees: T) -> T {
    let full = T::of(360.0);
    let half = T::of(180.0);
    let mut r = degrees - full * ((degrees + half) / full).floor();
    if r <= -half {
        r += full;
    }
    if r > half {
        r -= full;
    }
    r
}

/// Per-reference counters, for diagnostics and tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VoteStats {
    pub pairs: usize,
    pub lookups_hit: usize,
    pub votes: usize,
}

#[inline]
fn alpha_bin<T: Real>(alpha: T, bins: usize) -> usize {
    ((alpha + T::pi()) / T::two_pi() * T::of(bins as f64)).floor_index().min(bins - 1)
}

/// Casts every vote of scene reference `r` into `acc` (length
/// `|model| * alpha_bins`, cleared by the caller) and appends the raw
/// `(cell, alpha)` votes to `raw`.
pub fn accumulate_reference<T: Real>(
    scene: &PointCloud<T>,
    tree: &KdTree<T>,
    model: &ModelDescription<T>,
    r: usize,
    alpha_bins: usize,
    acc: &mut [u32],
    raw: &mut Vec<(u32, T)>,
    neighbors: &mut Vec<usize>,
) -> VoteStats {
    let mut stats = VoteStats::default();
    let sr = &scene.points[r];
    let frame = CanonicalFrame::new(sr);
    tree.within_radius(&sr.position, model.diameter, neighbors);
    for &j in neighbors.iter() {
        if j == r {
            continue;
        }
        let sj = &scene.points[j];
        stats.pairs += 1;
        if !keeps_normal_angle(angle_between(&sr.normal, &sj.normal)) {
            continue;
        }
        let Ok(f) = compute_ppf(sr, sj) else { continue };
        let Some(key) = quantize_ppf(&f, model.diameter, &model.quant) else {
            continue;
        };
        let entries = model.table.lookup(key);
        if entries.is_empty() {
            continue;
        }
        stats.lookups_hit += 1;
        let alpha_s = frame.alpha(&sj.position).angle;
        for e in entries {
            let alpha = wrap_pi(e.alpha - alpha_s);
            let cell = e.reference as usize * alpha_bins + alpha_bin(alpha, alpha_bins);
            acc[cell] += 1;
            raw.push((cell as u32, alpha));
            stats.votes += 1;
        }
    }
    stats
}

fn peak_cells<T: Real>(acc: &[u32], extraction: PeakExtraction<T>) -> Vec<usize> {
    let Some((best, &max)) = acc.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))) else {
        return Vec::new();
    };
    if max == 0 {
        return Vec::new();
    }
    match extraction {
        PeakExtraction::BestOnly => vec![best],
        PeakExtraction::AboveRelative(rho) => {
            let floor = rho * T::of(max as f64);
            (0..acc.len()).filter(|&c| T::of(acc[c] as f64) >= floor).collect()
        }
    }
}

/// Median alpha among the raw votes of `cell`; the cell never straddles the
/// wrap point, so a plain median is well defined.
fn cell_alpha<T: Real>(raw: &[(u32, T)], cell: usize, scratch: &mut Vec<T>) -> T {
    scratch.clear();
    scratch.extend(raw.iter().filter(|v| v.0 as usize == cell).map(|v| v.1));
    let mid = (scratch.len() - 1) / 2;
    scratch.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    scratch[mid]
}

struct Workspace<T: Real> {
    acc: Vec<u32>,
    raw: Vec<(u32, T)>,
    neighbors: Vec<usize>,
    scratch: Vec<T>,
}

/// Votes with every reference of `scene` and returns the per-reference
/// peaks as hypotheses, ordered by scene reference index.
pub fn vote<T: Real>(scene: &PointCloud<T>, model: &ModelDescription<T>, params: &MatchParams<T>) -> Vec<PoseHypothesis<T>> {
    if scene.is_empty() || model.model_cloud.is_empty() {
        return Vec::new();
    }
    let tree = scene.kdtree();
    vote_with_tree(scene, &tree, model, params)
}

pub fn vote_with_tree<T: Real>(
    scene: &PointCloud<T>,
    tree: &KdTree<T>,
    model: &ModelDescription<T>,
    params: &MatchParams<T>,
) -> Vec<PoseHypothesis<T>> {
    let bins = params.alpha_bins;
    let cells = model.model_cloud.len() * bins;
    let refs: Vec<usize> = (0..scene.len()).step_by(params.reference_step()).collect();
    let model_frames: Vec<CanonicalFrame<T>> = model.model_cloud.points.iter().map(CanonicalFrame::new).collect();
    let per_ref: Vec<Vec<PoseHypothesis<T>>> = refs
        .par_iter()
        .map_init(
            || Workspace {
                acc: vec![0u32; cells],
                raw: Vec::new(),
                neighbors: Vec::new(),
                scratch: Vec::new(),
            },
            |ws, &r| {
                ws.raw.clear();
                accumulate_reference(scene, tree, model, r, bins, &mut ws.acc, &mut ws.raw, &mut ws.neighbors);
                let peaks = peak_cells(&ws.acc, params.peak_extraction);
                let scene_frame = CanonicalFrame::new(&scene.points[r]);
                let out = peaks
                    .into_iter()
                    .map(|cell| {
                        let m = cell / bins;
                        let alpha = cell_alpha(&ws.raw, cell, &mut ws.scratch);
                        PoseHypothesis {
                            pose: pose_from_alignment(&model_frames[m], &scene_frame, alpha),
                            votes: ws.acc[cell],
                            scene_ref_index: r,
                            model_ref_index: m,
                        }
                    })
                    .collect();
                // reset only the touched cells
                for &(c, _) in &ws.raw {
                    ws.acc[c as usize] = 0;
                }
                out
            },
        )
        .collect();
    per_ref.into_iter().flatten().collect()
}

#[derive(Debug, Clone)]
struct Agg<T: Real> {
    anchor: UnitQuaternion<T>,
    qsum: Vector4<T>,
    tsum: Vector3<T>,
    count: usize,
    votes: u64,
    pose: RigidTransform<T>,
}

impl<T: Real> Agg<T> {
    fn new(pose: &RigidTransform<T>, votes: u64) -> Self {
        let q = pose.rotation();
        Self {
            anchor: q,
            qsum: q.into_inner().coords,
            tsum: pose.translation(),
            count: 1,
            votes,
            pose: *pose,
        }
    }

    fn aligned(&self, q: &UnitQuaternion<T>) -> Vector4<T> {
        let c = q.into_inner().coords;
        if c.dot(&self.anchor.into_inner().coords) < T::zero() {
            -c
        } else {
            c
        }
    }

    fn refresh(&mut self) {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(self.qsum));
        self.pose = RigidTransform::new(q, self.tsum / T::of(self.count as f64));
    }

    fn add(&mut self, pose: &RigidTransform<T>, votes: u64) {
        self.qsum += self.aligned(&pose.rotation());
        self.tsum += pose.translation();
        self.count += 1;
        self.votes += votes;
        self.refresh();
    }

    fn absorb(&mut self, other: &Self) {
        let flip = other.anchor.into_inner().coords.dot(&self.anchor.into_inner().coords) < T::zero();
        self.qsum += if flip { -other.qsum } else { other.qsum };
        self.tsum += other.tsum;
        self.count += other.count;
        self.votes += other.votes;
        self.refresh();
    }

    fn near(&self, pose: &RigidTransform<T>, params: &MatchParams<T>) -> bool {
        self.pose.rotation_distance(pose) <= params.cluster_rot_thresh
            && self.pose.translation_distance(pose) <= params.cluster_trans_thresh
    }
}

/// Greedy agglomeration in descending vote order, followed by merging any
/// clusters whose averages ended up within the thresholds of each other.
/// Output is sorted by total votes, descending.
pub fn cluster_poses<T: Real>(hyps: &[PoseHypothesis<T>], params: &MatchParams<T>) -> Vec<PoseCluster<T>> {
    let mut order: Vec<usize> = (0..hyps.len()).collect();
    order.sort_by(|&a, &b| hyps[b].votes.cmp(&hyps[a].votes));
    let mut clusters: Vec<Agg<T>> = Vec::new();
    for i in order {
        let h = &hyps[i];
        match clusters.iter_mut().find(|c| c.near(&h.pose, params)) {
            Some(c) => c.add(&h.pose, h.votes as u64),
            None => clusters.push(Agg::new(&h.pose, h.votes as u64)),
        }
    }
    loop {
        let mut merged = false;
        'outer: for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                if clusters[a].near(&clusters[b].pose, params) {
                    let other = clusters.remove(b);
                    clusters[a].absorb(&other);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    let mut out: Vec<PoseCluster<T>> = clusters
        .into_iter()
        .map(|c| PoseCluster {
            pose: c.pose,
            total_votes: c.votes,
            members: c.count,
        })
        .collect();
    out.sort_by(|a, b| b.total_votes.cmp(&a.total_votes));
    out
}
