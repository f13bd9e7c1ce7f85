//! Binary model file, little-endian throughout:
//!
//! ```text
//! "PPFM" | u32 version | f64 delta_dist_rel | f64 delta_angle | f64 diameter
//! u64 stored | u64 low_angle | u64 high_angle | u64 coincident
//! model cloud: u8 has_normals | u8 has_edges | u64 n | n x (3 f64 position, 3 f64 normal, u8 edge)
//! u64 keys | keys x (u64 key | u32 count | count x (u32 reference, f64 alpha))
//! refine cloud, encoded like the model cloud
//! ```
//!
//! Scalars are stored as f64 regardless of the in-memory type.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{FilterStats, ModelDescription, ModelError, PpfTable, QuantParams, TableEntry};
use crate::cloud::{OrientedPoint, PointCloud};
use crate::geometry::{Point3, UnitVector3, Vector3};
use crate::Real;

pub const MODEL_MAGIC: [u8; 4] = *b"PPFM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

struct Out<W: Write>(W);

impl<W: Write> Out<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.0.write_all(b)
    }
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.bytes(&[v])
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn real<T: Real>(&mut self, v: T) -> std::io::Result<()> {
        self.bytes(&v.as_f64().to_le_bytes())
    }
    fn cloud<T: Real>(&mut self, c: &PointCloud<T>) -> std::io::Result<()> {
        self.u8(c.has_normals as u8)?;
        self.u8(c.has_edges as u8)?;
        self.u64(c.len() as u64)?;
        for p in &c.points {
            for v in p.position.iter().chain(p.normal.iter()) {
                self.real(*v)?;
            }
            self.u8(p.is_edge as u8)?;
        }
        Ok(())
    }
}

pub fn write_model<T: Real, W: Write>(model: &ModelDescription<T>, w: W) -> std::io::Result<()> {
    let mut o = Out(w);
    o.bytes(&MODEL_MAGIC)?;
    o.u32(MODEL_FORMAT_VERSION)?;
    o.real(model.quant.delta_dist_rel)?;
    o.real(model.quant.delta_angle)?;
    o.real(model.diameter)?;
    let s = &model.filter_stats;
    for v in [s.stored, s.low_angle, s.high_angle, s.coincident] {
        o.u64(v)?;
    }
    o.cloud(&model.model_cloud)?;
    o.u64(model.table.key_count() as u64)?;
    for (key, entries) in model.table.iter() {
        o.u64(key.0)?;
        o.u32(entries.len() as u32)?;
        for e in entries {
            o.u32(e.reference)?;
            o.real(e.alpha)?;
        }
    }
    o.cloud(&model.refine_cloud)?;
    o.0.flush()
}

struct In<R: Read>(R);

impl<R: Read> In<R> {
    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], ModelError> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|e| ModelError::Format(format!("truncated while reading {what}: {e}")))?;
        Ok(b)
    }
    fn u8(&mut self, what: &str) -> Result<u8, ModelError> {
        Ok(self.array::<1>(what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
    fn u64(&mut self, what: &str) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
    fn real<T: Real>(&mut self, what: &str) -> Result<T, ModelError> {
        let v = f64::from_le_bytes(self.array(what)?);
        if !v.is_finite() {
            return Err(ModelError::Format(format!("non-finite {what}")));
        }
        Ok(T::of(v))
    }
    fn flag(&mut self, what: &str) -> Result<bool, ModelError> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(ModelError::Format(format!("{what} flag is {v}"))),
        }
    }
    fn cloud<T: Real>(&mut self) -> Result<PointCloud<T>, ModelError> {
        let has_normals = self.flag("has_normals")?;
        let has_edges = self.flag("has_edges")?;
        let n = self.u64("point count")? as usize;
        let mut points = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let position = Point3::new(self.real("point")?, self.real("point")?, self.real("point")?);
            let normal: Vector3<T> = Vector3::new(self.real("normal")?, self.real("normal")?, self.real("normal")?);
            if (normal.norm() - T::one()).abs() > T::of(1e-4) {
                return Err(ModelError::Format("cloud normal is not unit length".into()));
            }
            points.push(OrientedPoint {
                position,
                normal: UnitVector3::new_unchecked(normal),
                is_edge: self.flag("edge")?,
            });
        }
        Ok(PointCloud {
            points,
            has_normals,
            has_edges,
        })
    }
}

pub fn read_model<T: Real, R: Read>(r: R) -> Result<ModelDescription<T>, ModelError> {
    let mut i = In(r);
    if i.array::<4>("magic")? != MODEL_MAGIC {
        return Err(ModelError::Format("bad magic, not a PPFM file".into()));
    }
    let version = i.u32("version")?;
    if version != MODEL_FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let quant = QuantParams {
        delta_dist_rel: i.real("delta_dist_rel")?,
        delta_angle: i.real("delta_angle")?,
    };
    let diameter = i.real("diameter")?;
    let filter_stats = FilterStats {
        stored: i.u64("stats")?,
        low_angle: i.u64("stats")?,
        high_angle: i.u64("stats")?,
        coincident: i.u64("stats")?,
    };
    let model_cloud = i.cloud::<T>()?;
    let n = model_cloud.len();
    let key_count = i.u64("key count")? as usize;
    let mut keys = Vec::with_capacity(key_count.min(1 << 24));
    let mut offsets = Vec::with_capacity(key_count.min(1 << 24) + 1);
    let mut entries = Vec::new();
    for _ in 0..key_count {
        let key = i.u64("key")?;
        if keys.last().is_some_and(|&prev| prev >= key) {
            return Err(ModelError::Format("table keys are not strictly ascending".into()));
        }
        keys.push(key);
        offsets.push(entries.len() as u32);
        let count = i.u32("entry count")?;
        for _ in 0..count {
            let reference = i.u32("reference")?;
            if reference as usize >= n {
                return Err(ModelError::Format(format!("reference {reference} out of range")));
            }
            entries.push(TableEntry {
                reference,
                alpha: i.real("alpha")?,
            });
        }
    }
    offsets.push(entries.len() as u32);
    let refine_cloud = i.cloud::<T>()?;
    let mut rest = [0u8; 1];
    if i.0.read(&mut rest).map_err(|e| ModelError::Format(e.to_string()))? != 0 {
        return Err(ModelError::Format("trailing bytes after table".into()));
    }
    Ok(ModelDescription {
        table: PpfTable::from_parts(keys, offsets, entries),
        model_cloud,
        refine_cloud,
        diameter,
        quant,
        filter_stats,
    })
}

pub fn save_model<T: Real>(model: &ModelDescription<T>, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let io_err = |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    };
    let f = File::create(path).map_err(io_err)?;
    write_model(model, BufWriter::new(f)).map_err(io_err)
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<ModelDescription<T>, ModelError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_model(BufReader::new(f))
}
