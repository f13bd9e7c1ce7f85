//! PLY reading and writing for vertex clouds.
//!
//! Supported: `ascii` and `binary_little_endian` bodies, vertex properties
//! `x y z` (any scalar type), optional `nx ny nz` and an optional `edge`
//! flag. Any other property or element is parsed and skipped.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{CloudError, OrientedPoint, PointCloud};
use crate::geometry::{Point3, UnitVector3, Vector3};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List { count_ty: ScalarType, item_ty: ScalarType },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
    body_line: usize,
}

#[derive(Debug, Default, Clone, Copy)]
struct VertexLayout {
    xyz: [usize; 3],
    normal: Option<[usize; 3]>,
    edge: Option<usize>,
}

fn parse_err(location: String, message: impl Into<String>) -> CloudError {
    CloudError::Parse {
        location,
        message: message.into(),
    }
}

fn line_loc(line: usize) -> String {
    format!("line {line}")
}

fn parse_header(bytes: &[u8]) -> Result<Header, CloudError> {
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(parse_err(format!("byte {}", bytes.len()), "header not terminated by end_header"));
        };
        line_no += 1;
        let raw = std::str::from_utf8(&rest[..nl]).map_err(|_| parse_err(line_loc(line_no), "header is not valid UTF-8"))?;
        offset += nl + 1;
        let line = raw.trim_end_matches('\r').trim();
        let mut tok = line.split_whitespace();
        let head = tok.next().unwrap_or("");
        if line_no == 1 {
            if line != "ply" {
                return Err(parse_err(line_loc(1), "missing 'ply' magic"));
            }
            continue;
        }
        match head {
            "" | "comment" | "obj_info" => {}
            "format" => {
                format = Some(match tok.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => return Err(parse_err(line_loc(line_no), format!("unsupported format '{other}'"))),
                    None => return Err(parse_err(line_loc(line_no), "format line without a format")),
                });
            }
            "element" => {
                let name = tok.next().ok_or_else(|| parse_err(line_loc(line_no), "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(line_loc(line_no), "element count is not a non-negative integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(line_loc(line_no), "property before any element"))?;
                let ty = tok.next().ok_or_else(|| parse_err(line_loc(line_no), "property without type"))?;
                let prop = if ty == "list" {
                    let count_ty = tok.next().and_then(ScalarType::parse);
                    let item_ty = tok.next().and_then(ScalarType::parse);
                    let name = tok.next();
                    match (count_ty, item_ty, name) {
                        (Some(count_ty), Some(item_ty), Some(_)) => Property::List { count_ty, item_ty },
                        _ => return Err(parse_err(line_loc(line_no), "malformed list property")),
                    }
                } else {
                    let ty = ScalarType::parse(ty).ok_or_else(|| parse_err(line_loc(line_no), format!("unknown property type '{ty}'")))?;
                    let name = tok.next().ok_or_else(|| parse_err(line_loc(line_no), "property without name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                el.properties.push(prop);
            }
            "end_header" => break,
            other => return Err(parse_err(line_loc(line_no), format!("unexpected header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| parse_err(line_loc(line_no), "header has no format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
        body_line: line_no,
    })
}

fn vertex_layout(el: &Element) -> Result<VertexLayout, CloudError> {
    let find = |n: &str| {
        el.properties
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == n))
    };
    let (Some(x), Some(y), Some(z)) = (find("x"), find("y"), find("z")) else {
        return Err(parse_err("header".into(), "vertex element lacks x, y, z properties"));
    };
    let normal = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    Ok(VertexLayout {
        xyz: [x, y, z],
        normal,
        edge: find("edge"),
    })
}

/// Parses an in-memory PLY file.
pub fn parse_ply<T: Real>(bytes: &[u8]) -> Result<PointCloud<T>, CloudError> {
    let header = parse_header(bytes)?;
    let vertex_idx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err("header".into(), "no vertex element"))?;
    let layout = vertex_layout(&header.elements[vertex_idx])?;
    let mut rows: Vec<(Vec<f64>, String)> = Vec::new();
    match header.format {
        PlyFormat::Ascii => read_ascii(bytes, &header, vertex_idx, &mut rows)?,
        PlyFormat::BinaryLittleEndian => read_binary(bytes, &header, vertex_idx, &mut rows)?,
    }
    build_cloud(rows, layout)
}

fn build_cloud<T: Real>(rows: Vec<(Vec<f64>, String)>, layout: VertexLayout) -> Result<PointCloud<T>, CloudError> {
    let mut points = Vec::with_capacity(rows.len());
    for (vals, loc) in rows {
        let [xi, yi, zi] = layout.xyz;
        let (x, y, z) = (vals[xi], vals[yi], vals[zi]);
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(parse_err(loc, "non-finite coordinate"));
        }
        let position = Point3::new(T::of(x), T::of(y), T::of(z));
        let normal = match layout.normal {
            Some([a, b, c]) => {
                let n = Vector3::new(T::of(vals[a]), T::of(vals[b]), T::of(vals[c]));
                UnitVector3::try_new(n, T::default_epsilon())
                    .filter(|u| u.iter().all(|v| v.is_finite()))
                    .ok_or_else(|| parse_err(loc.clone(), "zero or non-finite normal"))?
            }
            None => Vector3::z_axis(),
        };
        let is_edge = layout.edge.is_some_and(|e| vals[e] != 0.0);
        points.push(OrientedPoint { position, normal, is_edge });
    }
    Ok(PointCloud {
        points,
        has_normals: layout.normal.is_some(),
        has_edges: layout.edge.is_some(),
    })
}

fn read_ascii(bytes: &[u8], header: &Header, vertex_idx: usize, rows: &mut Vec<(Vec<f64>, String)>) -> Result<(), CloudError> {
    let body = std::str::from_utf8(&bytes[header.body_offset..])
        .map_err(|_| parse_err(line_loc(header.body_line + 1), "ASCII body is not valid UTF-8"))?;
    let mut lines = body
        .lines()
        .enumerate()
        .map(|(i, l)| (header.body_line + 1 + i, l))
        .filter(|(_, l)| !l.trim().is_empty());
    for (ei, el) in header.elements.iter().enumerate() {
        for k in 0..el.count {
            let Some((line_no, line)) = lines.next() else {
                return Err(parse_err(
                    format!("end of file (line {})", header.body_line + body.lines().count()),
                    format!("element '{}' declares {} entries but only {} present", el.name, el.count, k),
                ));
            };
            let mut tok = line.split_whitespace();
            let mut next_num = |what: &str| -> Result<f64, CloudError> {
                let t = tok
                    .next()
                    .ok_or_else(|| parse_err(line_loc(line_no), format!("missing value for {what}")))?;
                t.parse::<f64>()
                    .map_err(|_| parse_err(line_loc(line_no), format!("'{t}' is not a number")))
            };
            let mut vals = Vec::with_capacity(el.properties.len());
            for p in &el.properties {
                match p {
                    Property::Scalar { name, .. } => vals.push(next_num(name)?),
                    Property::List { .. } => {
                        let n = next_num("list count")?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return Err(parse_err(line_loc(line_no), "invalid list count"));
                        }
                        for _ in 0..n as usize {
                            next_num("list item")?;
                        }
                        vals.push(n);
                    }
                }
            }
            if ei == vertex_idx {
                rows.push((vals, line_loc(line_no)));
            }
        }
    }
    Ok(())
}

fn read_binary(bytes: &[u8], header: &Header, vertex_idx: usize, rows: &mut Vec<(Vec<f64>, String)>) -> Result<(), CloudError> {
    let mut pos = header.body_offset;
    let take = |pos: &mut usize, n: usize, el: &Element, k: usize| -> Result<&[u8], CloudError> {
        if *pos + n > bytes.len() {
            return Err(parse_err(
                format!("byte {}", *pos),
                format!("truncated payload in element '{}' entry {} of {}", el.name, k, el.count),
            ));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    for (ei, el) in header.elements.iter().enumerate() {
        for k in 0..el.count {
            let start = pos;
            let mut vals = Vec::with_capacity(el.properties.len());
            for p in &el.properties {
                match p {
                    Property::Scalar { ty, .. } => {
                        let b = take(&mut pos, ty.size(), el, k)?;
                        vals.push(ty.read_le(b));
                    }
                    Property::List { count_ty, item_ty } => {
                        let b = take(&mut pos, count_ty.size(), el, k)?;
                        let n = count_ty.read_le(b);
                        if n < 0.0 {
                            return Err(parse_err(format!("byte {}", pos - count_ty.size()), "negative list count"));
                        }
                        take(&mut pos, n as usize * item_ty.size(), el, k)?;
                        vals.push(n);
                    }
                }
            }
            if ei == vertex_idx {
                rows.push((vals, format!("byte {start}")));
            }
        }
    }
    Ok(())
}

pub fn load_cloud<T: Real>(path: impl AsRef<Path>) -> Result<PointCloud<T>, CloudError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CloudError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_ply(&bytes).map_err(|e| match e {
        CloudError::Parse { location, message } => CloudError::Parse {
            location: format!("{}: {}", path.display(), location),
            message,
        },
        other => other,
    })
}

/// Serializes `cloud` as PLY. Coordinates and normals are written as
/// `double`, so binary output reproduces `f32` and `f64` clouds exactly.
pub fn write_ply<T: Real, W: Write>(cloud: &PointCloud<T>, mut w: W, format: PlyFormat) -> std::io::Result<()> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {fmt} 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property double {p}")?;
    }
    if cloud.has_normals {
        for p in ["nx", "ny", "nz"] {
            writeln!(w, "property double {p}")?;
        }
    }
    if cloud.has_edges {
        writeln!(w, "property uchar edge")?;
    }
    writeln!(w, "end_header")?;
    for p in &cloud.points {
        let mut vals = vec![p.position.x.as_f64(), p.position.y.as_f64(), p.position.z.as_f64()];
        if cloud.has_normals {
            vals.extend([p.normal.x.as_f64(), p.normal.y.as_f64(), p.normal.z.as_f64()]);
        }
        match format {
            PlyFormat::Ascii => {
                let mut line = vals.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ");
                if cloud.has_edges {
                    line.push_str(if p.is_edge { " 1" } else { " 0" });
                }
                writeln!(w, "{line}")?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in vals {
                    w.write_all(&v.to_le_bytes())?;
                }
                if cloud.has_edges {
                    w.write_all(&[p.is_edge as u8])?;
                }
            }
        }
    }
    w.flush()
}

pub fn save_cloud<T: Real>(cloud: &PointCloud<T>, path: impl AsRef<Path>, format: PlyFormat) -> Result<(), CloudError> {
    let path = path.as_ref();
    if path.as_os_str().is_empty() {
        return Err(CloudError::EmptyPath);
    }
    let io_err = |source| CloudError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    write_ply(cloud, BufWriter::new(file), format).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const THREE: &str = "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0.5\n";

    #[test]
    fn ascii_positions_only() {
        let c: PointCloud<f64> = parse_ply(THREE.as_bytes()).unwrap();
        assert_eq!(c.len(), 3);
        assert!(!c.has_normals && !c.has_edges);
        assert_eq!(c.points[2].position, Point3::new(0.0, 1.0, 0.5));
    }

    #[test]
    fn ascii_missing_vertex_is_error() {
        let text = THREE.replace("element vertex 3", "element vertex 4");
        let err = parse_ply::<f64>(text.as_bytes()).unwrap_err();
        assert!(matches!(err, CloudError::Parse { .. }), "{err}");
    }

    #[test]
    fn declared_ten_but_nine_present() {
        let mut text =
            String::from("ply\nformat ascii 1.0\nelement vertex 10\nproperty double x\nproperty double y\nproperty double z\nend_header\n");
        for i in 0..9 {
            text.push_str(&format!("{i} 0 0\n"));
        }
        let err = parse_ply::<f64>(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("only 9"), "{err}");
    }

    #[test]
    fn non_finite_coordinate_names_line() {
        let text = THREE.replace("1 0 0", "nan 0 0");
        let err = parse_ply::<f64>(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 10"), "{err}");
    }

    #[test]
    fn binary_truncation_names_byte_offset() {
        let cloud = PointCloud::<f64>::from_positions([Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)]);
        let mut buf = Vec::new();
        write_ply(&cloud, &mut buf, PlyFormat::BinaryLittleEndian).unwrap();
        buf.truncate(buf.len() - 3);
        let err = parse_ply::<f64>(&buf).unwrap_err();
        assert!(err.to_string().contains("byte"), "{err}");
    }

    #[test]
    fn skips_unknown_properties_and_elements() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty uchar red\nproperty float y\nproperty list uchar int idx\nproperty float z\nproperty float nx\nproperty float ny\nproperty float nz\nproperty uchar edge\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n1 255 2 2 7 8 3 0 0 2 1\n4 0 5 0 6 1 0 0 0\n3 0 1 1\n";
        let c: PointCloud<f64> = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.has_normals && c.has_edges);
        assert_eq!(c.points[0].position, Point3::new(1.0, 2.0, 3.0));
        assert_eq!(c.points[0].normal.into_inner(), Vector3::new(0.0, 0.0, 1.0));
        assert!(c.points[0].is_edge && !c.points[1].is_edge);
        assert_eq!(c.points[1].position, Point3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn binary_float32_fields() {
        let mut buf =
            b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
                .to_vec();
        for v in [0.5f32, -1.25, 3.0] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let c: PointCloud<f32> = parse_ply(&buf).unwrap();
        assert_eq!(c.points[0].position, Point3::new(0.5f32, -1.25, 3.0));
    }

    #[test]
    fn round_trip_random_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cloud = PointCloud::<f64>::from_oriented((0..1000).map(|_| {
            (
                Point3::new(rng.random::<f64>(), rng.random::<f64>() * 10.0, -rng.random::<f64>()),
                Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() + 0.1),
            )
        }))
        .unwrap();
        cloud.has_edges = true;
        for (i, p) in cloud.points.iter_mut().enumerate() {
            p.is_edge = i % 3 == 0;
        }
        let dir = tempfile::tempdir().unwrap();
        for format in [PlyFormat::BinaryLittleEndian, PlyFormat::Ascii] {
            let path = dir.path().join("c.ply");
            save_cloud(&cloud, &path, format).unwrap();
            let back: PointCloud<f64> = load_cloud(&path).unwrap();
            assert_eq!(back.len(), cloud.len());
            let max_delta = cloud
                .points
                .iter()
                .zip(&back.points)
                .map(|(a, b)| (a.position - b.position).amax())
                .fold(0.0, f64::max);
            match format {
                PlyFormat::BinaryLittleEndian => assert_eq!(max_delta, 0.0),
                PlyFormat::Ascii => assert!(max_delta <= 1e-6),
            }
            assert!(back.has_normals && back.has_edges);
            assert!(back.points.iter().all(|p| (p.normal.norm() - 1.0).abs() < 1e-9));
            assert_eq!(
                back.points.iter().map(|p| p.is_edge).collect::<Vec<_>>(),
                cloud.points.iter().map(|p| p.is_edge).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn one_point_cloud_writes_one_vertex() {
        let cloud = PointCloud::<f64>::from_positions([Point3::new(1.0, 2.0, 3.0)]);
        let mut buf = Vec::new();
        write_ply(&cloud, &mut buf, PlyFormat::Ascii).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("element vertex 1\n"));
    }

    #[test]
    fn empty_path_is_error() {
        let cloud = PointCloud::<f64>::new();
        assert!(matches!(save_cloud(&cloud, "", PlyFormat::Ascii), Err(CloudError::EmptyPath)));
    }
}
