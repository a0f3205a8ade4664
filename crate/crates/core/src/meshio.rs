//! Mesh and point-cloud file I/O, normalization, and seeded surface sampling.
//!
//! Supported mesh formats: ASCII OBJ (`v`/`f` records, polygon faces
//! fan-triangulated, `v/vt/vn` index forms accepted, negative indices
//! resolved relative to the vertices seen so far) and binary little-endian
//! PLY (vertex `x y z` as float or double, face lists with any integer count
//! and index types). Writers emit deterministic bytes: re-saving a mesh
//! reproduces the file exactly.
//!
//! Point clouds use a plain text table, one sample per line: `x y z` or
//! `x y z nx ny nz`, with `#` comment lines ignored.

use std::fmt::Write as _;
use std::io::{BufRead, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flexicubes::TriangleMesh;
use crate::grid::PointCloud;
use crate::math::{Aabb, Vec3};

/// Parses a mesh by extension: `.obj` or `.ply`.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => load_obj(path),
        Some("ply") => load_ply(path),
        other => Err(Error::invalid(format!(
            "unsupported mesh extension {other:?} (expected .obj or .ply)"
        ))),
    }
}

/// Writes a mesh by extension: `.obj` or `.ply`.
pub fn save_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => save_obj(mesh, path),
        Some("ply") => save_ply(mesh, path),
        other => Err(Error::invalid(format!(
            "unsupported mesh extension {other:?} (expected .obj or .ply)"
        ))),
    }
}

pub fn load_obj(path: &Path) -> Result<TriangleMesh> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let loc = || format!("line {}", lineno + 1);
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| Error::parse(path, loc(), "vertex needs 3 coordinates"))?;
                    *c = tok
                        .parse()
                        .map_err(|_| Error::parse(path, loc(), format!("bad coordinate `{tok}`")))?;
                }
                vertices.push(Vec3::from(coords));
            }
            Some("f") => {
                let mut ids: Vec<u32> = Vec::new();
                for tok in tokens {
                    let first = tok.split('/').next().unwrap_or("");
                    let raw: i64 = first
                        .parse()
                        .map_err(|_| Error::parse(path, loc(), format!("bad face index `{tok}`")))?;
                    let idx = if raw > 0 {
                        raw - 1
                    } else if raw < 0 {
                        vertices.len() as i64 + raw
                    } else {
                        return Err(Error::parse(path, loc(), "face index 0 is invalid"));
                    };
                    if idx < 0 || idx as usize >= vertices.len() {
                        return Err(Error::parse(
                            path,
                            loc(),
                            format!("face index {raw} out of range ({} vertices)", vertices.len()),
                        ));
                    }
                    ids.push(idx as u32);
                }
                if ids.len() < 3 {
                    return Err(Error::parse(path, loc(), "face needs at least 3 vertices"));
                }
                for i in 1..ids.len() - 1 {
                    triangles.push([ids[0], ids[i], ids[i + 1]]);
                }
            }
            _ => {} // comments, normals, groups, materials
        }
    }
    Ok(TriangleMesh::new(vertices, triangles))
}

pub fn save_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut out = String::new();
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).expect("write to string");
    }
    for t in &mesh.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("write to string");
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyType {
    F32,
    F64,
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
}

impl PlyType {
    fn parse(tok: &str) -> Option<Self> {
        Some(match tok {
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }

    fn read_f64(self, buf: &[u8]) -> f64 {
        match self {
            PlyType::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            PlyType::F64 => f64::from_le_bytes(buf[..8].try_into().unwrap()),
            _ => self.read_i64(buf) as f64,
        }
    }

    fn read_i64(self, buf: &[u8]) -> i64 {
        match self {
            PlyType::I8 => buf[0] as i8 as i64,
            PlyType::U8 => buf[0] as i64,
            PlyType::I16 => i16::from_le_bytes(buf[..2].try_into().unwrap()) as i64,
            PlyType::U16 => u16::from_le_bytes(buf[..2].try_into().unwrap()) as i64,
            PlyType::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as i64,
            PlyType::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as i64,
            PlyType::F32 | PlyType::F64 => self.read_f64(buf) as i64,
        }
    }
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<(String, PlyProp)>,
}

enum PlyProp {
    Scalar(PlyType),
    List(PlyType, PlyType),
}

pub fn load_ply(path: &Path) -> Result<TriangleMesh> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = Vec::new();
    // Header is ASCII lines terminated by "end_header".
    let mut line = String::new();
    let mut offset = 0usize;
    loop {
        line.clear();
        let n = file.read_line(&mut line)?;
        if n == 0 {
            return Err(Error::parse(path, format!("offset {offset}"), "unexpected end of header"));
        }
        offset += n;
        let trimmed = line.trim_end();
        header.push(trimmed.to_string());
        if trimmed == "end_header" {
            break;
        }
        if header.len() > 1000 {
            return Err(Error::parse(path, "header", "header too large"));
        }
    }
    if header.first().map(String::as_str) != Some("ply") {
        return Err(Error::parse(path, "offset 0", "missing `ply` magic"));
    }
    if !header.iter().any(|l| l == "format binary_little_endian 1.0") {
        return Err(Error::parse(
            path,
            "header",
            "only `format binary_little_endian 1.0` is supported",
        ));
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    for l in &header {
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::parse(path, "header", format!("bad element count `{count}`")))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", ct, it, name] => {
                let (Some(ct), Some(it)) = (PlyType::parse(ct), PlyType::parse(it)) else {
                    return Err(Error::parse(path, "header", format!("bad list types in `{l}`")));
                };
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, "header", "property before any element"))?;
                el.properties.push((name.to_string(), PlyProp::List(ct, it)));
            }
            ["property", ty, name] => {
                let Some(ty) = PlyType::parse(ty) else {
                    return Err(Error::parse(path, "header", format!("bad property type in `{l}`")));
                };
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, "header", "property before any element"))?;
                el.properties.push((name.to_string(), PlyProp::Scalar(ty)));
            }
            _ => {}
        }
    }

    let mut body = Vec::new();
    file.read_to_end(&mut body)?;
    let mut cursor = 0usize;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    let take = |n: usize, cursor: &mut usize| -> Result<&[u8]> {
        if *cursor + n > body.len() {
            return Err(Error::parse(
                path,
                format!("offset {}", offset + *cursor),
                "unexpected end of binary payload",
            ));
        }
        let s = &body[*cursor..*cursor + n];
        *cursor += n;
        Ok(s)
    };

    for el in &elements {
        if el.name == "vertex" {
            for _ in 0..el.count {
                let mut pos = [f64::NAN; 3];
                for (name, prop) in &el.properties {
                    match prop {
                        PlyProp::Scalar(ty) => {
                            let raw = take(ty.size(), &mut cursor)?;
                            let val = ty.read_f64(raw);
                            match name.as_str() {
                                "x" => pos[0] = val,
                                "y" => pos[1] = val,
                                "z" => pos[2] = val,
                                _ => {}
                            }
                        }
                        PlyProp::List(ct, it) => {
                            let n = ct.read_i64(take(ct.size(), &mut cursor)?) as usize;
                            take(it.size() * n, &mut cursor)?;
                        }
                    }
                }
                if pos.iter().any(|v| v.is_nan()) {
                    return Err(Error::parse(path, "vertex element", "missing x/y/z property"));
                }
                vertices.push(Vec3::from(pos));
            }
        } else if el.name == "face" {
            for f in 0..el.count {
                for (_name, prop) in &el.properties {
                    match prop {
                        PlyProp::Scalar(ty) => {
                            take(ty.size(), &mut cursor)?;
                        }
                        PlyProp::List(ct, it) => {
                            let n = ct.read_i64(take(ct.size(), &mut cursor)?) as usize;
                            let mut ids = Vec::with_capacity(n);
                            for _ in 0..n {
                                let idx = it.read_i64(take(it.size(), &mut cursor)?);
                                if idx < 0 || idx as usize >= vertices.len() {
                                    return Err(Error::parse(
                                        path,
                                        format!("face {f}"),
                                        format!("vertex index {idx} out of range"),
                                    ));
                                }
                                ids.push(idx as u32);
                            }
                            if ids.len() < 3 {
                                return Err(Error::parse(path, format!("face {f}"), "face needs >= 3 indices"));
                            }
                            for i in 1..ids.len() - 1 {
                                triangles.push([ids[0], ids[i], ids[i + 1]]);
                            }
                        }
                    }
                }
            }
        } else {
            // Skip unknown elements.
            for _ in 0..el.count {
                for (_, prop) in &el.properties {
                    match prop {
                        PlyProp::Scalar(ty) => {
                            take(ty.size(), &mut cursor)?;
                        }
                        PlyProp::List(ct, it) => {
                            let n = ct.read_i64(take(ct.size(), &mut cursor)?) as usize;
                            take(it.size() * n, &mut cursor)?;
                        }
                    }
                }
            }
        }
    }

    Ok(TriangleMesh::new(vertices, triangles))
}

pub fn save_ply(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )?;
    for v in &mesh.vertices {
        for a in 0..3 {
            out.write_all(&(v[a] as f32).to_le_bytes())?;
        }
    }
    for t in &mesh.triangles {
        out.write_all(&[3u8])?;
        for &i in t {
            out.write_all(&(i as i32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Record of the rigid+scale map applied by [`normalize_mesh`]:
/// `p' = (p - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalizeTransform {
    pub center: [f64; 3],
    pub scale: f64,
}

impl NormalizeTransform {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - Vec3::from(self.center)) * self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale + Vec3::from(self.center)
    }
}

/// Margin used by normalization: the largest half-extent maps to this value,
/// leaving headroom inside the `[-1, 1]^3` grid domain.
pub const NORMALIZE_HALF_EXTENT: f64 = 0.95;

/// Centers the bounding box at the origin and uniformly scales so the largest
/// half-extent becomes [`NORMALIZE_HALF_EXTENT`].
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<(TriangleMesh, NormalizeTransform)> {
    let bbox = Aabb::from_points(mesh.vertices.iter())
        .ok_or_else(|| Error::invalid("cannot normalize an empty mesh"))?;
    let half = bbox.extent() * 0.5;
    let max_half = half.x.max(half.y).max(half.z);
    if max_half <= 0.0 {
        return Err(Error::invalid("cannot normalize a zero-extent mesh"));
    }
    let transform = NormalizeTransform {
        center: bbox.center().into(),
        scale: NORMALIZE_HALF_EXTENT / max_half,
    };
    let mut out = mesh.clone();
    for v in &mut out.vertices {
        *v = transform.apply(v);
    }
    Ok((out, transform))
}

pub fn face_area_and_normal(mesh: &TriangleMesh, face: usize) -> (f64, Vec3) {
    let t = mesh.triangles[face];
    let (a, b, c) = (
        mesh.vertices[t[0] as usize],
        mesh.vertices[t[1] as usize],
        mesh.vertices[t[2] as usize],
    );
    let cross = (b - a).cross(&(c - a));
    let norm = cross.norm();
    if norm > 0.0 {
        (0.5 * norm, cross / norm)
    } else {
        (0.0, Vec3::zeros())
    }
}

/// Signed volume enclosed by a mesh (divergence theorem over triangles).
/// Positive for consistently outward-oriented closed meshes.
pub fn signed_volume(mesh: &TriangleMesh) -> f64 {
    mesh.triangles
        .iter()
        .map(|t| {
            let (a, b, c) = (
                mesh.vertices[t[0] as usize],
                mesh.vertices[t[1] as usize],
                mesh.vertices[t[2] as usize],
            );
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum()
}

/// Provenance of one surface sample: generating face and barycentric weights.
#[derive(Debug, Clone, Copy)]
pub struct SampleOrigin {
    pub face: u32,
    pub bary: [f64; 3],
}

/// Area-weighted uniform surface sampling with flat face normals,
/// deterministic for a given seed.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    Ok(sample_surface_detailed(mesh, n, seed)?.0)
}

/// As [`sample_surface`], additionally reporting each sample's generating
/// face and barycentric coordinates.
pub fn sample_surface_detailed(
    mesh: &TriangleMesh,
    n: usize,
    seed: u64,
) -> Result<(PointCloud, Vec<SampleOrigin>)> {
    if n < 1 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut normals_by_face = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for f in 0..mesh.triangles.len() {
        let (area, normal) = face_area_and_normal(mesh, f);
        total += area;
        cumulative.push(total);
        normals_by_face.push(normal);
    }
    if !(total > 0.0) {
        return Err(Error::invalid("mesh has zero total surface area"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut origins = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.gen::<f64>() * total;
        let face = cumulative.partition_point(|&c| c <= r).min(mesh.triangles.len() - 1);
        let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let w = 1.0 - u - v;
        let t = mesh.triangles[face];
        let p = mesh.vertices[t[0] as usize] * w
            + mesh.vertices[t[1] as usize] * u
            + mesh.vertices[t[2] as usize] * v;
        points.push(p);
        normals.push(normals_by_face[face]);
        origins.push(SampleOrigin {
            face: face as u32,
            bary: [w, u, v],
        });
    }
    Ok((PointCloud::with_normals(points, normals)?, origins))
}

pub fn save_points(pc: &PointCloud, path: &Path) -> Result<()> {
    let mut out = String::from("# x y z [nx ny nz]\n");
    match pc.normals() {
        Some(normals) => {
            for (p, n) in pc.points().iter().zip(normals) {
                writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)
                    .expect("write to string");
            }
        }
        None => {
            for p in pc.points() {
                writeln!(out, "{} {} {}", p.x, p.y, p.z).expect("write to string");
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_points(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(path, format!("line {}", lineno + 1), format!("bad number `{t}`")))
            })
            .collect::<Result<_>>()?;
        match vals.len() {
            3 => points.push(Vec3::new(vals[0], vals[1], vals[2])),
            6 => {
                points.push(Vec3::new(vals[0], vals[1], vals[2]));
                normals.push(Vec3::new(vals[3], vals[4], vals[5]));
            }
            n => {
                return Err(Error::parse(
                    path,
                    format!("line {}", lineno + 1),
                    format!("expected 3 or 6 columns, found {n}"),
                ))
            }
        }
    }
    if normals.is_empty() {
        Ok(PointCloud::new(points))
    } else if normals.len() == points.len() {
        PointCloud::with_normals(points, normals)
    } else {
        Err(Error::parse(path, "file", "mixed rows with and without normals"))
    }
}
