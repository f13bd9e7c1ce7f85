//! Point pair features and the offline model description.
//!
//! The description is a hash table from quantized features to
//! `(reference index, alpha_m)` entries over every ordered model pair,
//! except pairs whose normals are nearly parallel (below 5 degrees, common on
//! flat patches) or nearly opposite (above 175 degrees, rarely co-visible).

mod io;
mod ppf;

pub use io::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use ppf::{
    compute_alpha, compute_ppf, pose_from_alignment, pose_from_points, quantize_bins, quantize_ppf, wrap_pi, Alpha, CanonicalFrame,
    CoincidentPoints, Ppf, PpfKey, QuantParams,
};

use rayon::prelude::*;

use crate::cloud::{diameter, PointCloud};
use crate::geometry::angle_between;
use crate::Real;

/// Pairs with a normal angle below this are not stored (degrees).
pub const MIN_NORMAL_ANGLE_DEG: f64 = 5.0;
/// Pairs with a normal angle above this are not stored (degrees).
pub const MAX_NORMAL_ANGLE_DEG: f64 = 175.0;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model cloud needs at least 2 points, has {0}")]
    TooFewPoints(usize),
    #[error("model cloud has no normals")]
    MissingNormals,
    #[error("invalid quantization: {0}")]
    InvalidQuant(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableEntry<T: Real> {
    pub reference: u32,
    pub alpha: T,
}

/// Counters from the pair filter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct FilterStats {
    pub stored: u64,
    pub low_angle: u64,
    pub high_angle: u64,
    pub coincident: u64,
}

impl FilterStats {
    pub fn total_pairs(&self) -> u64 {
        self.stored + self.low_angle + self.high_angle + self.coincident
    }
}

/// Sorted-key table: `keys[k]` owns `entries[offsets[k]..offsets[k + 1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PpfTable<T: Real> {
    keys: Vec<u64>,
    offsets: Vec<u32>,
    entries: Vec<TableEntry<T>>,
}

impl<T: Real> PpfTable<T> {
    /// Groups `(key, entry)` pairs already sorted by key.
    fn from_sorted(items: Vec<(u64, TableEntry<T>)>) -> Self {
        let mut keys = Vec::new();
        let mut offsets = Vec::new();
        let mut entries = Vec::with_capacity(items.len());
        for (key, e) in items {
            if keys.last() != Some(&key) {
                keys.push(key);
                offsets.push(entries.len() as u32);
            }
            entries.push(e);
        }
        offsets.push(entries.len() as u32);
        Self { keys, offsets, entries }
    }

    pub(crate) fn from_parts(keys: Vec<u64>, offsets: Vec<u32>, entries: Vec<TableEntry<T>>) -> Self {
        Self { keys, offsets, entries }
    }

    #[inline]
    pub fn lookup(&self, key: PpfKey) -> &[TableEntry<T>] {
        match self.keys.binary_search(&key.0) {
            Ok(k) => &self.entries[self.offsets[k] as usize..self.offsets[k + 1] as usize],
            Err(_) => &[],
        }
    }

    pub fn key_count(&self) -> usize {
        self.keys.len()
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    /// `(key, entries)` runs in ascending key order.
    pub fn iter(&self) -> impl Iterator<Item = (PpfKey, &[TableEntry<T>])> {
        self.keys
            .iter()
            .enumerate()
            .map(move |(k, &key)| (PpfKey(key), &self.entries[self.offsets[k] as usize..self.offsets[k + 1] as usize]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDescription<T: Real> {
    pub table: PpfTable<T>,
    pub model_cloud: PointCloud<T>,
    /// Denser copy of the model surface used only for ICP; defaults to
    /// `model_cloud`.
    pub refine_cloud: PointCloud<T>,
    pub diameter: T,
    pub quant: QuantParams<T>,
    pub filter_stats: FilterStats,
}

/// Whether a pair with normal angle `angle` (radians) is kept.
#[inline]
pub fn keeps_normal_angle<T: Real>(angle: T) -> bool {
    angle >= T::from_degrees(MIN_NORMAL_ANGLE_DEG) && angle <= T::from_degrees(MAX_NORMAL_ANGLE_DEG)
}

enum PairOutcome<T: Real> {
    Stored(u64, TableEntry<T>),
    Low,
    High,
    Coincident,
}

/// Builds the model description from an already downsampled, oriented
/// cloud. Entries within a key are ordered by (reference, partner) index.
pub fn build_model<T: Real>(model_cloud: &PointCloud<T>, quant: QuantParams<T>) -> Result<ModelDescription<T>, ModelError> {
    if model_cloud.len() < 2 {
        return Err(ModelError::TooFewPoints(model_cloud.len()));
    }
    if !model_cloud.has_normals {
        return Err(ModelError::MissingNormals);
    }
    if !(quant.delta_angle > T::zero() && quant.delta_dist_rel > T::zero()) {
        return Err(ModelError::InvalidQuant("steps must be positive".into()));
    }
    let diam = diameter(model_cloud);
    if !(diam > T::zero()) {
        return Err(ModelError::InvalidQuant("model diameter is zero".into()));
    }
    let max_dist_bin = (T::one() / quant.delta_dist_rel).floor_index();
    if max_dist_bin > u16::MAX as usize {
        return Err(ModelError::InvalidQuant("distance step too small for 16-bit bins".into()));
    }
    let lo = T::from_degrees(MIN_NORMAL_ANGLE_DEG);
    let hi = T::from_degrees(MAX_NORMAL_ANGLE_DEG);
    let pts = &model_cloud.points;
    let per_ref: Vec<Vec<PairOutcome<T>>> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let frame = CanonicalFrame::new(&pts[i]);
            pts.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, pj)| {
                    let normal_angle = angle_between(&pts[i].normal, &pj.normal);
                    if normal_angle < lo {
                        return PairOutcome::Low;
                    }
                    if normal_angle > hi {
                        return PairOutcome::High;
                    }
                    let Ok(f) = compute_ppf(&pts[i], pj) else {
                        return PairOutcome::Coincident;
                    };
                    let key = quantize_ppf(&f, diam, &quant).expect("distance bins fit in 16 bits");
                    let alpha = frame.alpha(&pj.position).angle;
                    PairOutcome::Stored(
                        key.0,
                        TableEntry {
                            reference: i as u32,
                            alpha,
                        },
                    )
                })
                .collect()
        })
        .collect();

    let mut stats = FilterStats::default();
    let mut items = Vec::new();
    for outcome in per_ref.into_iter().flatten() {
        match outcome {
            PairOutcome::Stored(k, e) => {
                stats.stored += 1;
                items.push((k, e));
            }
            PairOutcome::Low => stats.low_angle += 1,
            PairOutcome::High => stats.high_angle += 1,
            PairOutcome::Coincident => stats.coincident += 1,
        }
    }
    items.par_sort_by_key(|(k, _)| *k);
    Ok(ModelDescription {
        table: PpfTable::from_sorted(items),
        model_cloud: model_cloud.clone(),
        refine_cloud: model_cloud.clone(),
        diameter: diam,
        quant,
        filter_stats: stats,
    })
}
