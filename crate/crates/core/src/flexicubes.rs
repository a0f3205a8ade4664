//! Differentiable dual-marching-cubes extraction on the sparse grid.
//!
//! Each cell with mixed corner signs gets one dual vertex: the weighted mean
//! of its edge crossing points, where per-voxel `alpha` weights skew each
//! crossing along its edge and `beta` weights skew the averaging. Each lattice
//! edge with a sign change whose four surrounding cells are all present and
//! active emits one quad over the surrounding dual vertices. Edges missing a
//! surrounding cell emit nothing, which is how open boundaries and sectional
//! meshes arise.
//!
//! `extract_backward` is the exact reverse-mode adjoint of `extract`'s vertex
//! arithmetic.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{
    edge_adjacent_cells, edge_axis, EdgeKey, SparseGrid, VoxelSet, EDGE_CORNERS,
};
use crate::math::Vec3;

const PARAMS_MAGIC: &[u8; 4] = b"SFPX";
const PARAMS_VERSION: u32 = 1;

/// Smallest value the interpolation/averaging weights may take; parameter
/// updates clamp here to preserve strict positivity.
pub const MIN_WEIGHT: f64 = 1e-3;

/// Per-corner signed distances and deformations plus per-voxel interpolation
/// weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexParams {
    /// Signed distance per corner (world units). Zero is treated as positive.
    pub s: Vec<f64>,
    /// Deformation per corner (world units), clamped to half a cell per axis.
    pub delta: Vec<Vec3>,
    /// Per-voxel crossing-interpolation weights, one per local corner.
    pub alpha: Vec<[f64; 8]>,
    /// Per-voxel vertex-averaging weights, one per local edge.
    pub beta: Vec<[f64; 12]>,
}

impl FlexParams {
    /// Uniform parameters: every corner at `s0`, no deformation, unit weights.
    pub fn constant(grid: &SparseGrid, s0: f64) -> Self {
        Self {
            s: vec![s0; grid.corner_count()],
            delta: vec![Vec3::zeros(); grid.corner_count()],
            alpha: vec![[1.0; 8]; grid.voxel_count()],
            beta: vec![[1.0; 12]; grid.voxel_count()],
        }
    }

    pub fn shapes_match(&self, grid: &SparseGrid) -> bool {
        self.s.len() == grid.corner_count()
            && self.delta.len() == grid.corner_count()
            && self.alpha.len() == grid.voxel_count()
            && self.beta.len() == grid.voxel_count()
    }

    fn check_shapes(&self, grid: &SparseGrid) -> Result<()> {
        if !self.shapes_match(grid) {
            return Err(Error::shape(format!(
                "params ({} corners, {} voxels) vs grid ({}, {})",
                self.s.len(),
                self.alpha.len(),
                grid.corner_count(),
                grid.voxel_count()
            )));
        }
        Ok(())
    }

    /// Full invariant check: shapes, finiteness, weight positivity, and the
    /// deformation clamp.
    pub fn validate(&self, grid: &SparseGrid) -> Result<()> {
        self.check_shapes(grid)?;
        if self.s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sdf values".to_string()));
        }
        let half = grid.cell_size() * 0.5;
        for d in &self.delta {
            if !(d.x.is_finite() && d.y.is_finite() && d.z.is_finite()) {
                return Err(Error::NonFinite("deformation".to_string()));
            }
            if d.x.abs() > half.x + 1e-12 || d.y.abs() > half.y + 1e-12 || d.z.abs() > half.z + 1e-12
            {
                return Err(Error::invalid("deformation exceeds half cell"));
            }
        }
        let pos = |w: f64| w.is_finite() && w > 0.0;
        if self.alpha.iter().any(|a| a.iter().any(|&w| !pos(w)))
            || self.beta.iter().any(|b| b.iter().any(|&w| !pos(w)))
        {
            return Err(Error::invalid("alpha/beta weights must be positive and finite"));
        }
        Ok(())
    }

    /// Hard componentwise clamp of deformations to half the cell size, and of
    /// weights to [`MIN_WEIGHT`]. Applied after parameter updates.
    pub fn clamp(&mut self, grid: &SparseGrid) {
        let half = grid.cell_size() * 0.5;
        for d in &mut self.delta {
            d.x = d.x.clamp(-half.x, half.x);
            d.y = d.y.clamp(-half.y, half.y);
            d.z = d.z.clamp(-half.z, half.z);
        }
        for a in &mut self.alpha {
            for w in a {
                *w = w.max(MIN_WEIGHT);
            }
        }
        for b in &mut self.beta {
            for w in b {
                *w = w.max(MIN_WEIGHT);
            }
        }
    }

    /// Serializes into a little-endian binary container (magic `SFPX`,
    /// version, counts, then s / delta / alpha / beta arrays).
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PARAMS_MAGIC)?;
        w.write_all(&PARAMS_VERSION.to_le_bytes())?;
        w.write_all(&(self.s.len() as u64).to_le_bytes())?;
        w.write_all(&(self.alpha.len() as u64).to_le_bytes())?;
        for v in &self.s {
            w.write_all(&v.to_le_bytes())?;
        }
        for d in &self.delta {
            for a in 0..3 {
                w.write_all(&d[a].to_le_bytes())?;
            }
        }
        for a in &self.alpha {
            for v in a {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for b in &self.beta {
            for v in b {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R, path: &Path) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|e| Error::parse(path, "offset 0", e.to_string()))?;
        if &magic != PARAMS_MAGIC {
            return Err(Error::parse(path, "offset 0", "bad magic, not a params file"));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)
            .map_err(|e| Error::parse(path, "offset 4", e.to_string()))?;
        let version = u32::from_le_bytes(u32buf);
        if version != PARAMS_VERSION {
            return Err(Error::parse(path, "offset 4", format!("unsupported version {version}")));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)
            .map_err(|e| Error::parse(path, "offset 8", e.to_string()))?;
        let nc = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u64buf)
            .map_err(|e| Error::parse(path, "offset 16", e.to_string()))?;
        let nv = u64::from_le_bytes(u64buf) as usize;
        let mut f64buf = [0u8; 8];
        let mut read_f64 = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut f64buf)
                .map_err(|e| Error::parse(path, "payload", e.to_string()))?;
            Ok(f64::from_le_bytes(f64buf))
        };
        let mut s = Vec::with_capacity(nc);
        for _ in 0..nc {
            s.push(read_f64(&mut r)?);
        }
        let mut delta = Vec::with_capacity(nc);
        for _ in 0..nc {
            delta.push(Vec3::new(read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?));
        }
        let mut alpha = Vec::with_capacity(nv);
        for _ in 0..nv {
            let mut a = [0.0; 8];
            for v in &mut a {
                *v = read_f64(&mut r)?;
            }
            alpha.push(a);
        }
        let mut beta = Vec::with_capacity(nv);
        for _ in 0..nv {
            let mut b = [0.0; 12];
            for v in &mut b {
                *v = read_f64(&mut r)?;
            }
            beta.push(b);
        }
        Ok(Self { s, delta, alpha, beta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(f, path)
    }
}

/// Reverse-mode gradients with the same shapes as [`FlexParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub d_s: Vec<f64>,
    pub d_delta: Vec<Vec3>,
    pub d_alpha: Vec<[f64; 8]>,
    pub d_beta: Vec<[f64; 12]>,
}

impl ParamGradients {
    pub fn zeros(grid: &SparseGrid) -> Self {
        Self {
            d_s: vec![0.0; grid.corner_count()],
            d_delta: vec![Vec3::zeros(); grid.corner_count()],
            d_alpha: vec![[0.0; 8]; grid.voxel_count()],
            d_beta: vec![[0.0; 12]; grid.voxel_count()],
        }
    }

    pub fn add_scaled(&mut self, other: &ParamGradients, factor: f64) {
        for (a, b) in self.d_s.iter_mut().zip(&other.d_s) {
            *a += factor * b;
        }
        for (a, b) in self.d_delta.iter_mut().zip(&other.d_delta) {
            *a += factor * b;
        }
        for (a, b) in self.d_alpha.iter_mut().zip(&other.d_alpha) {
            for i in 0..8 {
                a[i] += factor * b[i];
            }
        }
        for (a, b) in self.d_beta.iter_mut().zip(&other.d_beta) {
            for i in 0..12 {
                a[i] += factor * b[i];
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.d_s {
            *v *= factor;
        }
        for v in &mut self.d_delta {
            *v *= factor;
        }
        for a in &mut self.d_alpha {
            for v in a {
                *v *= factor;
            }
        }
        for b in &mut self.d_beta {
            for v in b {
                *v *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_s.iter().all(|v| v.is_finite())
            && self.d_delta.iter().all(|d| d.iter().all(|v| v.is_finite()))
            && self.d_alpha.iter().all(|a| a.iter().all(|v| v.is_finite()))
            && self.d_beta.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Indexed triangle mesh with extraction provenance. Meshes from file
/// loaders carry empty provenance vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Generating lattice edge of each triangle (two triangles per quad share
    /// one edge). Empty when the mesh was not produced by extraction.
    pub face_provenance: Vec<EdgeKey>,
    /// Generating voxel id of each vertex. Empty when not from extraction.
    pub vertex_provenance: Vec<u32>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Self {
        Self {
            vertices,
            triangles,
            face_provenance: Vec::new(),
            vertex_provenance: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn has_provenance(&self) -> bool {
        self.face_provenance.len() == self.triangles.len()
            && self.vertex_provenance.len() == self.vertices.len()
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len() as u32;
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::invalid(format!("triangle {i} references vertex out of range")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::invalid(format!("triangle {i} is degenerate (repeated vertex id)")));
            }
        }
        if !self.face_provenance.is_empty() && self.face_provenance.len() != self.triangles.len() {
            return Err(Error::shape("face provenance length"));
        }
        if !self.vertex_provenance.is_empty() && self.vertex_provenance.len() != self.vertices.len()
        {
            return Err(Error::shape("vertex provenance length"));
        }
        Ok(())
    }
}

#[inline]
fn is_negative(s: f64) -> bool {
    // Zero counts as positive.
    s < 0.0
}

/// Crossing point on an edge between deformed corner positions, skewed by the
/// per-corner interpolation weights:
/// `x = (1-t) p_a + t p_b`, `t = (alpha_a s_a) / (alpha_a s_a - alpha_b s_b)`.
/// With equal weights this reduces to standard linear interpolation.
pub fn edge_crossing(
    p_a: Vec3,
    p_b: Vec3,
    s_a: f64,
    s_b: f64,
    alpha_a: f64,
    alpha_b: f64,
) -> Result<Vec3> {
    if is_negative(s_a) == is_negative(s_b) {
        return Err(Error::contract(format!(
            "edge corners have the same sign (s_a = {s_a}, s_b = {s_b})"
        )));
    }
    if alpha_a <= 0.0 || alpha_b <= 0.0 {
        return Err(Error::invalid("interpolation weights must be positive"));
    }
    let t = crossing_t(s_a, s_b, alpha_a, alpha_b);
    Ok(p_a + t * (p_b - p_a))
}

#[inline]
fn crossing_t(s_a: f64, s_b: f64, alpha_a: f64, alpha_b: f64) -> f64 {
    let a = alpha_a * s_a;
    let b = alpha_b * s_b;
    a / (a - b)
}

#[derive(Debug, Clone, Copy)]
struct Crossing {
    local_edge: usize,
    t: f64,
    x: Vec3,
    p_a: Vec3,
    p_b: Vec3,
}

#[derive(Debug, Clone)]
struct DualVertex {
    pos: Vec3,
    beta_sum: f64,
    crossings: Vec<Crossing>,
}

fn dual_vertex(
    grid: &SparseGrid,
    params: &FlexParams,
    voxel_id: u32,
    neg: &[bool],
) -> Option<DualVertex> {
    let ids = grid.voxel_corner_ids(voxel_id);
    let any_neg = ids.iter().any(|&c| neg[c as usize]);
    let any_pos = ids.iter().any(|&c| !neg[c as usize]);
    if !(any_neg && any_pos) {
        return None;
    }
    let alpha = &params.alpha[voxel_id as usize];
    let beta = &params.beta[voxel_id as usize];
    let mut num = Vec3::zeros();
    let mut den = 0.0;
    let mut crossings = Vec::new();
    for (e, &(la, lb)) in EDGE_CORNERS.iter().enumerate() {
        let (ca, cb) = (ids[la], ids[lb]);
        if neg[ca as usize] == neg[cb as usize] {
            continue;
        }
        let p_a = grid.corner_position(ca) + params.delta[ca as usize];
        let p_b = grid.corner_position(cb) + params.delta[cb as usize];
        let t = crossing_t(params.s[ca as usize], params.s[cb as usize], alpha[la], alpha[lb]);
        let x = p_a + t * (p_b - p_a);
        num += beta[e] * x;
        den += beta[e];
        crossings.push(Crossing {
            local_edge: e,
            t,
            x,
            p_a,
            p_b,
        });
    }
    if den <= 0.0 {
        return None;
    }
    Some(DualVertex {
        pos: num / den,
        beta_sum: den,
        crossings,
    })
}

/// Differentiable sparse dual-marching-cubes extraction. `active` restricts
/// face emission to edges whose four surrounding voxels are all in the set;
/// `None` activates every voxel. Output is canonically ordered by generating
/// edge and bit-identical across runs and thread counts.
pub fn extract(
    grid: &SparseGrid,
    params: &FlexParams,
    active: Option<&VoxelSet>,
) -> Result<TriangleMesh> {
    params.check_shapes(grid)?;
    let n_vox = grid.voxel_count();
    let mask = match active {
        Some(set) => set.mask(n_vox)?,
        None => vec![true; n_vox],
    };

    let neg: Vec<bool> = params.s.iter().map(|&v| is_negative(v)).collect();

    let duals: Vec<Option<DualVertex>> = (0..n_vox as u32)
        .into_par_iter()
        .map(|v| {
            if mask[v as usize] {
                dual_vertex(grid, params, v, &neg)
            } else {
                None
            }
        })
        .collect();

    // Candidate edges from every active sign-mixed voxel, canonically ordered.
    let mut edges: Vec<EdgeKey> = Vec::new();
    for (v, dual) in duals.iter().enumerate() {
        let Some(dual) = dual else { continue };
        let ids = grid.voxel_corner_ids(v as u32);
        for c in &dual.crossings {
            let base_local = EDGE_CORNERS[c.local_edge].0;
            let base = grid.corner_coord(ids[base_local]);
            edges.push(EdgeKey::new(base, edge_axis(c.local_edge)));
        }
    }
    edges.sort_unstable();
    edges.dedup();

    // Quads over the dual vertices of fully-present, fully-active edge rings.
    let mut quads: Vec<(EdgeKey, [u32; 4])> = Vec::new();
    let resolution = grid.resolution();
    'edge: for &key in &edges {
        let cells = edge_adjacent_cells(resolution, key)?;
        let mut ring = [0u32; 4];
        for (slot, cell) in cells.iter().enumerate() {
            let Some(cell) = cell else { continue 'edge };
            let Some(id) = grid.voxel_id(*cell) else { continue 'edge };
            if !mask[id as usize] || duals[id as usize].is_none() {
                continue 'edge;
            }
            ring[slot] = id;
        }
        // Winding: counterclockwise around the positive edge axis when the
        // lower corner is inside (negative), so normals run negative->positive.
        let base = key.base();
        let anchor = ring[2]; // the cell whose lower corner is the edge base
        let v = grid.voxel(anchor);
        let off = [base[0] - v.i, base[1] - v.j, base[2] - v.k];
        let local = (off[0] + 2 * off[1] + 4 * off[2]) as usize;
        let base_corner = grid.voxel_corner_ids(anchor)[local];
        if !neg[base_corner as usize] {
            ring.swap(1, 3);
        }
        quads.push((key, ring));
    }

    // Compact to referenced voxels only, in voxel-id (Morton) order.
    let mut referenced: Vec<u32> = quads.iter().flat_map(|(_, r)| r.iter().copied()).collect();
    referenced.sort_unstable();
    referenced.dedup();
    let mut vertex_of = vec![u32::MAX; n_vox];
    for (i, &v) in referenced.iter().enumerate() {
        vertex_of[v as usize] = i as u32;
    }

    let vertices: Vec<Vec3> = referenced
        .iter()
        .map(|&v| duals[v as usize].as_ref().unwrap().pos)
        .collect();
    let mut triangles = Vec::with_capacity(quads.len() * 2);
    let mut face_provenance = Vec::with_capacity(quads.len() * 2);
    for (key, ring) in &quads {
        let q = [
            vertex_of[ring[0] as usize],
            vertex_of[ring[1] as usize],
            vertex_of[ring[2] as usize],
            vertex_of[ring[3] as usize],
        ];
        // Fixed diagonal through the first and third ring vertices.
        triangles.push([q[0], q[1], q[2]]);
        triangles.push([q[0], q[2], q[3]]);
        face_provenance.push(*key);
        face_provenance.push(*key);
    }

    Ok(TriangleMesh {
        vertices,
        triangles,
        face_provenance,
        vertex_provenance: referenced,
    })
}

/// Exact reverse-mode gradients of extracted vertex positions with respect to
/// all four parameter groups. `mesh` must come from [`extract`] on the same
/// grid and parameters (verified through the stored provenance).
pub fn extract_backward(
    grid: &SparseGrid,
    params: &FlexParams,
    mesh: &TriangleMesh,
    d_vertices: &[Vec3],
) -> Result<ParamGradients> {
    params.check_shapes(grid)?;
    if d_vertices.len() != mesh.vertices.len() {
        return Err(Error::shape(format!(
            "{} vertex gradients for {} vertices",
            d_vertices.len(),
            mesh.vertices.len()
        )));
    }
    if mesh.vertex_provenance.len() != mesh.vertices.len() {
        return Err(Error::contract("mesh carries no vertex provenance"));
    }

    let neg: Vec<bool> = params.s.iter().map(|&v| is_negative(v)).collect();
    let mut grads = ParamGradients::zeros(grid);

    for (idx, &voxel_id) in mesh.vertex_provenance.iter().enumerate() {
        if voxel_id as usize >= grid.voxel_count() {
            return Err(Error::contract(format!("vertex {idx} references voxel {voxel_id} out of range")));
        }
        let dual = dual_vertex(grid, params, voxel_id, &neg).ok_or_else(|| {
            Error::contract(format!("voxel {voxel_id} has no dual vertex under these params"))
        })?;
        let scale = mesh.vertices[idx].norm().max(1.0);
        if (dual.pos - mesh.vertices[idx]).norm() > 1e-9 * scale {
            return Err(Error::contract(format!(
                "vertex {idx} does not match its provenance voxel {voxel_id}"
            )));
        }

        let g = d_vertices[idx];
        if g == Vec3::zeros() {
            continue;
        }
        let ids = grid.voxel_corner_ids(voxel_id);
        let alpha = &params.alpha[voxel_id as usize];
        let beta = &params.beta[voxel_id as usize];
        let inv_sum = 1.0 / dual.beta_sum;
        for c in &dual.crossings {
            let e = c.local_edge;
            let (la, lb) = EDGE_CORNERS[e];
            let (ca, cb) = (ids[la] as usize, ids[lb] as usize);

            // v = sum(beta_e x_e) / sum(beta_e)
            grads.d_beta[voxel_id as usize][e] += g.dot(&(c.x - dual.pos)) * inv_sum;
            let gx = g * (beta[e] * inv_sum);

            // x = p_a + t (p_b - p_a)
            let d_t = gx.dot(&(c.p_b - c.p_a));
            grads.d_delta[ca] += gx * (1.0 - c.t);
            grads.d_delta[cb] += gx * c.t;

            // t = A / (A - B), A = alpha_a s_a, B = alpha_b s_b
            let a = alpha[la] * params.s[ca];
            let b = alpha[lb] * params.s[cb];
            let denom = a - b;
            let d_a = d_t * (-b / (denom * denom));
            let d_b = d_t * (a / (denom * denom));
            grads.d_s[ca] += d_a * alpha[la];
            grads.d_alpha[voxel_id as usize][la] += d_a * params.s[ca];
            grads.d_s[cb] += d_b * alpha[lb];
            grads.d_alpha[voxel_id as usize][lb] += d_b * params.s[cb];
        }
    }

    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, VoxelCoord};
    use crate::math::Aabb;
    use crate::sdf::{corner_world, sign_change_grid, AnalyticSdf};
    use approx::assert_relative_eq;

    #[test]
    fn crossing_symmetric_case() {
        let x = edge_crossing(
            Vec3::zeros(),
            Vec3::new(1.0, 0.0, 0.0),
            1.0,
            -1.0,
            1.0,
            1.0,
        )
        .unwrap();
        assert_relative_eq!(x.x, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn crossing_standard_lerp() {
        let x = edge_crossing(
            Vec3::zeros(),
            Vec3::new(1.0, 0.0, 0.0),
            3.0,
            -1.0,
            1.0,
            1.0,
        )
        .unwrap();
        assert_relative_eq!(x.x, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn crossing_weighted() {
        // t = (2*1) / (2*1 - 1*(-1)) = 2/3; cross-checked by scalar evaluation.
        let (s_a, s_b, aa, ab) = (1.0, -1.0, 2.0, 1.0);
        let t_scalar = (aa * s_a) / (aa * s_a - ab * s_b);
        let x = edge_crossing(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), s_a, s_b, aa, ab).unwrap();
        assert_relative_eq!(x.x, 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(x.x, t_scalar, epsilon = 1e-15);
    }

    #[test]
    fn crossing_rejects_same_sign() {
        assert!(edge_crossing(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), 1.0, 2.0, 1.0, 1.0).is_err());
        // Zero is positive, so (0, 1) is same-sign.
        assert!(edge_crossing(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), 0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn crossing_derivative_wrt_s_a() {
        // d(x.x)/d(s_a) = -s_b / (s_a - s_b)^2 * (p_b - p_a).x = 0.25 for
        // s = (1, -1), alpha = 1, unit edge; confirmed by central differences.
        let f = |s_a: f64| {
            edge_crossing(Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), s_a, -1.0, 1.0, 1.0)
                .unwrap()
                .x
        };
        let h = 1e-5;
        let fd = (f(1.0 + h) - f(1.0 - h)) / (2.0 * h);
        let analytic = -(-1.0) / ((1.0 - (-1.0)) * (1.0 - (-1.0)));
        assert_relative_eq!(analytic, 0.25, epsilon = 1e-15);
        assert_relative_eq!(fd, 0.25, epsilon = 1e-9);
    }

    #[test]
    fn all_positive_is_empty_mesh() {
        let grid = build_grid(&[VoxelCoord::new(0, 0, 0)], 2, Aabb::unit()).unwrap();
        let params = FlexParams::constant(&grid, 0.5);
        let mesh = extract(&grid, &params, None).unwrap();
        assert!(mesh.is_empty());
        assert!(mesh.vertices.is_empty());
    }

    fn full_grid(res: u32) -> Vec<VoxelCoord> {
        let mut coords = Vec::new();
        for k in 0..res {
            for j in 0..res {
                for i in 0..res {
                    coords.push(VoxelCoord::new(i, j, k));
                }
            }
        }
        coords
    }

    #[test]
    fn planar_sdf_gives_flat_sheet() {
        let res = 4;
        let grid = build_grid(&full_grid(res), res, Aabb::unit()).unwrap();
        let mut params = FlexParams::constant(&grid, 0.0);
        for c in 0..grid.corner_count() {
            let p = grid.corner_position(c as u32);
            params.s[c] = p.z - 0.25;
        }
        let mesh = extract(&grid, &params, None).unwrap();
        assert!(!mesh.is_empty());
        for v in &mesh.vertices {
            assert!((v.z - 0.25).abs() < 1e-12, "vertex z = {}", v.z);
        }
        // Interior vertical edges only: (res+1-2)^2 quads, each 2 triangles.
        assert_eq!(mesh.triangles.len(), 9 * 2);
        mesh.validate().unwrap();
    }

    #[test]
    fn normals_point_outward_for_sphere() {
        let sdf = AnalyticSdf::sphere(0.6);
        let grid = sign_change_grid(&sdf, 8, Aabb::unit()).unwrap();
        let mut params = FlexParams::constant(&grid, 0.0);
        for c in 0..grid.corner_count() {
            params.s[c] = sdf.eval(&grid.corner_position(c as u32));
        }
        let mesh = extract(&grid, &params, None).unwrap();
        assert!(!mesh.is_empty());
        for t in &mesh.triangles {
            let (a, b, c) = (
                mesh.vertices[t[0] as usize],
                mesh.vertices[t[1] as usize],
                mesh.vertices[t[2] as usize],
            );
            let n = (b - a).cross(&(c - a));
            let centroid = (a + b + c) / 3.0;
            assert!(
                n.dot(&centroid) > 0.0,
                "face normal should point away from the sphere center"
            );
        }
    }

    #[test]
    fn sectional_faces_subset_of_full() {
        let sdf = AnalyticSdf::sphere(0.6);
        let grid = sign_change_grid(&sdf, 8, Aabb::unit()).unwrap();
        let mut params = FlexParams::constant(&grid, 0.0);
        for c in 0..grid.corner_count() {
            params.s[c] = sdf.eval(&grid.corner_position(c as u32));
        }
        let full = extract(&grid, &params, None).unwrap();
        // Active subset: voxels with center x < 0.
        let subset: VoxelSet = (0..grid.voxel_count() as u32)
            .filter(|&v| grid.voxel_center(v).x < 0.0)
            .collect();
        let section = extract(&grid, &params, Some(&subset)).unwrap();
        assert!(!section.is_empty());
        assert!(section.triangles.len() < full.triangles.len());

        use std::collections::HashSet;
        let full_edges: HashSet<EdgeKey> = full.face_provenance.iter().copied().collect();
        let sec_edges: HashSet<EdgeKey> = section.face_provenance.iter().copied().collect();
        assert!(sec_edges.is_subset(&full_edges));
        // Exactly the full faces whose 4 ring voxels are all in the subset.
        let expected: HashSet<EdgeKey> = full_edges
            .iter()
            .copied()
            .filter(|&key| {
                crate::grid::edge_adjacent_voxels(&grid, key)
                    .unwrap()
                    .iter()
                    .all(|&v| subset.contains(v))
            })
            .collect();
        assert_eq!(sec_edges, expected);
    }

    #[test]
    fn extract_rejects_shape_mismatch() {
        let grid = build_grid(&[VoxelCoord::new(0, 0, 0)], 2, Aabb::unit()).unwrap();
        let other = build_grid(&[VoxelCoord::new(0, 0, 0), VoxelCoord::new(1, 1, 1)], 2, Aabb::unit()).unwrap();
        let params = FlexParams::constant(&other, 0.5);
        assert!(matches!(extract(&grid, &params, None), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn backward_zero_cotangent_gives_zero_gradients() {
        let sdf = AnalyticSdf::sphere(0.6);
        let grid = sign_change_grid(&sdf, 4, Aabb::unit()).unwrap();
        let mut params = FlexParams::constant(&grid, 0.0);
        for c in 0..grid.corner_count() {
            params.s[c] = sdf.eval(&grid.corner_position(c as u32));
        }
        let mesh = extract(&grid, &params, None).unwrap();
        let grads =
            extract_backward(&grid, &params, &mesh, &vec![Vec3::zeros(); mesh.vertices.len()])
                .unwrap();
        assert!(grads.d_s.iter().all(|&v| v == 0.0));
        assert!(grads.d_delta.iter().all(|d| *d == Vec3::zeros()));
        assert!(grads.is_finite());
    }

    #[test]
    fn backward_rejects_provenance_mismatch() {
        let sdf = AnalyticSdf::sphere(0.6);
        let grid = sign_change_grid(&sdf, 4, Aabb::unit()).unwrap();
        let mut params = FlexParams::constant(&grid, 0.0);
        for c in 0..grid.corner_count() {
            params.s[c] = sdf.eval(&grid.corner_position(c as u32));
        }
        let mut mesh = extract(&grid, &params, None).unwrap();
        mesh.vertices[0].x += 0.5;
        let d = vec![Vec3::zeros(); mesh.vertices.len()];
        assert!(matches!(
            extract_backward(&grid, &params, &mesh, &d),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn scale_equivariance() {
        let sdf = AnalyticSdf::sphere(0.6);
        let grid = sign_change_grid(&sdf, 6, Aabb::unit()).unwrap();
        let mut params = FlexParams::constant(&grid, 0.0);
        for c in 0..grid.corner_count() {
            params.s[c] = sdf.eval(&grid.corner_position(c as u32));
            params.delta[c] = Vec3::new(0.01, -0.02, 0.005);
        }
        let mesh = extract(&grid, &params, None).unwrap();

        let factor = 2.5;
        let scaled_domain = Aabb::new(
            Aabb::unit().min_v() * factor,
            Aabb::unit().max_v() * factor,
        );
        let scaled_grid = build_grid(grid.voxels(), 6, scaled_domain).unwrap();
        let mut scaled_params = params.clone();
        for d in &mut scaled_params.delta {
            *d *= factor;
        }
        let scaled_mesh = extract(&scaled_grid, &scaled_params, None).unwrap();
        assert_eq!(mesh.triangles, scaled_mesh.triangles);
        for (a, b) in mesh.vertices.iter().zip(&scaled_mesh.vertices) {
            assert_relative_eq!((a * factor - b).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn params_roundtrip() {
        let grid = build_grid(
            &[VoxelCoord::new(0, 0, 0), VoxelCoord::new(1, 0, 1)],
            2,
            Aabb::unit(),
        )
        .unwrap();
        let mut params = FlexParams::constant(&grid, 0.25);
        params.s[3] = -0.75;
        params.delta[2] = Vec3::new(0.1, -0.05, 0.2);
        params.alpha[1][5] = 1.5;
        params.beta[0][11] = 0.7;
        let mut buf = Vec::new();
        params.write(&mut buf).unwrap();
        let back = FlexParams::read(&buf[..], Path::new("<mem>")).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn corner_world_matches_grid_positions() {
        let grid = build_grid(&[VoxelCoord::new(1, 2, 3)], 8, Aabb::unit()).unwrap();
        for c in 0..grid.corner_count() as u32 {
            let coord = grid.corner_coord(c);
            assert_eq!(grid.corner_position(c), corner_world(coord, 8, &Aabb::unit()));
        }
    }
}
