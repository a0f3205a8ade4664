//! Sparse voxel grid with a shared, deduplicated corner table.
//!
//! A [`SparseGrid`] stores the occupied cells of an `N_r^3` lattice over a
//! world-space domain box. Voxels are kept in Morton (Z-order) so every
//! construction path yields the same canonical structure; corner grid points
//! shared between adjacent voxels get exactly one id, assigned in first-touch
//! order during the Morton-ordered sweep.
//!
//! # Serialized grid format
//!
//! [`SparseGrid::write`] emits a little-endian binary container:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SFGR"
//! 4       4     format version, u32 (currently 1)
//! 8       4     resolution N_r, u32
//! 12      48    domain box, 6 x f64 (min xyz, max xyz)
//! 60      8     voxel count N_v, u64
//! 68      12*N_v voxel coordinates, N_v x (i, j, k) as u32, Morton order
//! ```
//!
//! The layout is byte-exact: re-serializing a loaded grid reproduces the
//! input bit for bit.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};

/// Largest supported lattice resolution. Corner coordinates go up to
/// `N_r`, and both must fit the 20-bit-per-axis Morton packing used by
/// [`EdgeKey`].
pub const MAX_RESOLUTION: u32 = (1 << 20) - 1;

const GRID_MAGIC: &[u8; 4] = b"SFGR";
const GRID_VERSION: u32 = 1;

/// Lattice coordinates of one voxel cell, each in `[0, N_r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelCoord {
    pub i: u32,
    pub j: u32,
    pub k: u32,
}

impl VoxelCoord {
    pub const fn new(i: u32, j: u32, k: u32) -> Self {
        Self { i, j, k }
    }

    pub fn morton(&self) -> u64 {
        morton3(self.i, self.j, self.k)
    }

    fn as_array(&self) -> [u32; 3] {
        [self.i, self.j, self.k]
    }
}

fn spread21(mut w: u64) -> u64 {
    w &= 0x001f_ffff;
    w = (w | w << 32) & 0x001f_0000_0000_ffff;
    w = (w | w << 16) & 0x001f_0000_ff00_00ff;
    w = (w | w << 8) & 0x100f_00f0_0f00_f00f;
    w = (w | w << 4) & 0x10c3_0c30_c30c_30c3;
    w = (w | w << 2) & 0x1249_2492_4924_9249;
    w
}

/// Interleaves three 21-bit coordinates into a Z-order code.
pub fn morton3(x: u32, y: u32, z: u32) -> u64 {
    spread21(x as u64) | spread21(y as u64) << 1 | spread21(z as u64) << 2
}

/// Local corner offsets within a cell; corner `c` sits at
/// `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
pub const CORNER_OFFSETS: [[u32; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// The 12 cell edges as (lower corner, upper corner) pairs of local corner
/// indices. Edges 0-3 run along x, 4-7 along y, 8-11 along z; within each
/// axis the four edges are ordered by the offsets of the two perpendicular
/// axes: (0,0), (1,0), (0,1), (1,1).
pub const EDGE_CORNERS: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Axis of each local edge: `edge / 4`.
pub const fn edge_axis(local_edge: usize) -> usize {
    local_edge / 4
}

/// Identifier of one lattice edge: the Morton code of its lower corner
/// packed with the axis it runs along. Ordering is (corner Morton, axis),
/// which is the canonical face-emission order of the extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeKey(u64);

impl EdgeKey {
    pub fn new(base: [u32; 3], axis: usize) -> Self {
        debug_assert!(axis < 3);
        debug_assert!(base.iter().all(|&c| c <= MAX_RESOLUTION));
        Self(morton3(base[0], base[1], base[2]) << 2 | axis as u64)
    }

    pub fn axis(&self) -> usize {
        (self.0 & 3) as usize
    }

    pub fn base(&self) -> [u32; 3] {
        let code = self.0 >> 2;
        [
            compact21(code),
            compact21(code >> 1),
            compact21(code >> 2),
        ]
    }

    pub fn raw(&self) -> u64 {
        self.0
    }
}

fn compact21(mut w: u64) -> u32 {
    w &= 0x1249_2492_4924_9249;
    w = (w ^ (w >> 2)) & 0x10c3_0c30_c30c_30c3;
    w = (w ^ (w >> 4)) & 0x100f_00f0_0f00_f00f;
    w = (w ^ (w >> 8)) & 0x001f_0000_ff00_00ff;
    w = (w ^ (w >> 16)) & 0x001f_0000_0000_ffff;
    w = (w ^ (w >> 32)) & 0x001f_ffff;
    w as u32
}

/// Sorted, deduplicated set of voxel ids. The canonical carrier for frustum
/// activation and sectional extraction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VoxelSet {
    ids: Vec<u32>,
}

impl VoxelSet {
    pub fn from_ids(mut ids: Vec<u32>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Self { ids }
    }

    /// All voxels of a grid.
    pub fn full(grid: &SparseGrid) -> Self {
        Self {
            ids: (0..grid.voxel_count() as u32).collect(),
        }
    }

    pub fn contains(&self, id: u32) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.ids.iter().copied()
    }

    pub fn union(&self, other: &VoxelSet) -> VoxelSet {
        let mut ids = Vec::with_capacity(self.ids.len() + other.ids.len());
        ids.extend_from_slice(&self.ids);
        ids.extend_from_slice(&other.ids);
        VoxelSet::from_ids(ids)
    }

    /// Membership mask over `[0, n)`. Errors if any id is out of range.
    pub fn mask(&self, n: usize) -> Result<Vec<bool>> {
        let mut mask = vec![false; n];
        for &id in &self.ids {
            *mask
                .get_mut(id as usize)
                .ok_or_else(|| Error::range(format!("voxel id {id} out of range (N_v = {n})")))? = true;
        }
        Ok(mask)
    }
}

impl FromIterator<u32> for VoxelSet {
    fn from_iter<T: IntoIterator<Item = u32>>(iter: T) -> Self {
        Self::from_ids(iter.into_iter().collect())
    }
}

/// Point samples in world units, optionally with unit normals.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != points.len() {
            return Err(Error::shape(format!(
                "{} normals for {} points",
                normals.len(),
                points.len()
            )));
        }
        for (i, n) in normals.iter().enumerate() {
            if (n.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "normal {i} has length {:.9}, expected unit",
                    n.norm()
                )));
            }
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sparse voxel structure: Morton-ordered voxel list plus the deduplicated
/// corner table shared by all cells. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrid {
    resolution: u32,
    domain: Aabb,
    voxels: Vec<VoxelCoord>,
    voxel_corners: Vec<[u32; 8]>,
    corner_coords: Vec<[u32; 3]>,
}

impl SparseGrid {
    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn domain(&self) -> &Aabb {
        &self.domain
    }

    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }

    pub fn corner_count(&self) -> usize {
        self.corner_coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn voxels(&self) -> &[VoxelCoord] {
        &self.voxels
    }

    pub fn voxel(&self, id: u32) -> VoxelCoord {
        self.voxels[id as usize]
    }

    /// The 8 corner ids of a voxel, in [`CORNER_OFFSETS`] order.
    pub fn voxel_corner_ids(&self, id: u32) -> [u32; 8] {
        self.voxel_corners[id as usize]
    }

    pub fn corner_coord(&self, corner_id: u32) -> [u32; 3] {
        self.corner_coords[corner_id as usize]
    }

    pub fn cell_size(&self) -> Vec3 {
        self.domain.cell_size(self.resolution)
    }

    /// World position of a corner lattice point.
    pub fn corner_position(&self, corner_id: u32) -> Vec3 {
        let c = self.corner_coords[corner_id as usize];
        let cell = self.cell_size();
        self.domain.min_v()
            + Vec3::new(
                c[0] as f64 * cell.x,
                c[1] as f64 * cell.y,
                c[2] as f64 * cell.z,
            )
    }

    /// World position of a voxel center.
    pub fn voxel_center(&self, id: u32) -> Vec3 {
        let v = self.voxels[id as usize];
        let cell = self.cell_size();
        self.domain.min_v()
            + Vec3::new(
                (v.i as f64 + 0.5) * cell.x,
                (v.j as f64 + 0.5) * cell.y,
                (v.k as f64 + 0.5) * cell.z,
            )
    }

    /// Looks a voxel up by lattice coordinate via binary search on the
    /// Morton-ordered voxel list.
    pub fn voxel_id(&self, coord: VoxelCoord) -> Option<u32> {
        let code = coord.morton();
        self.voxels
            .binary_search_by_key(&code, |v| v.morton())
            .ok()
            .map(|i| i as u32)
    }

    /// Grid with every voxel within Chebyshev distance `rings` of an
    /// existing voxel (clipped to the lattice). `rings = 0` is a copy.
    pub fn dilate(&self, rings: u32) -> SparseGrid {
        if rings == 0 || self.is_empty() {
            return self.clone();
        }
        let r = rings as i64;
        let n = self.resolution as i64;
        let mut coords = Vec::with_capacity(self.voxels.len() * 27);
        for v in &self.voxels {
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (x, y, z) = (v.i as i64 + dx, v.j as i64 + dy, v.k as i64 + dz);
                        if x >= 0 && y >= 0 && z >= 0 && x < n && y < n && z < n {
                            coords.push(VoxelCoord::new(x as u32, y as u32, z as u32));
                        }
                    }
                }
            }
        }
        build_grid(&coords, self.resolution, self.domain).expect("dilation stays in range")
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(GRID_MAGIC)?;
        w.write_all(&GRID_VERSION.to_le_bytes())?;
        w.write_all(&self.resolution.to_le_bytes())?;
        for v in self.domain.min.iter().chain(self.domain.max.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.voxels.len() as u64).to_le_bytes())?;
        for v in &self.voxels {
            for c in v.as_array() {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R, path: &Path) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|e| Error::parse(path, "offset 0", format!("short header: {e}")))?;
        if &magic != GRID_MAGIC {
            return Err(Error::parse(path, "offset 0", "bad magic, not a grid file"));
        }
        let version = read_u32(&mut r, path, 4)?;
        if version != GRID_VERSION {
            return Err(Error::parse(
                path,
                "offset 4",
                format!("unsupported version {version}"),
            ));
        }
        let resolution = read_u32(&mut r, path, 8)?;
        let mut dom = [0f64; 6];
        for (i, d) in dom.iter_mut().enumerate() {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)
                .map_err(|e| Error::parse(path, format!("offset {}", 12 + 8 * i), e.to_string()))?;
            *d = f64::from_le_bytes(buf);
        }
        let domain = Aabb {
            min: [dom[0], dom[1], dom[2]],
            max: [dom[3], dom[4], dom[5]],
        };
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)
            .map_err(|e| Error::parse(path, "offset 60", e.to_string()))?;
        let count = u64::from_le_bytes(buf) as usize;
        let mut coords = Vec::with_capacity(count);
        for i in 0..count {
            let off = 68 + 12 * i;
            let mut c = [0u32; 3];
            for (a, v) in c.iter_mut().enumerate() {
                *v = read_u32(&mut r, path, off + 4 * a)?;
            }
            coords.push(VoxelCoord::new(c[0], c[1], c[2]));
        }
        build_grid(&coords, resolution, domain)
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

fn read_u32<R: Read>(r: &mut R, path: &Path, offset: usize) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::parse(path, format!("offset {offset}"), e.to_string()))?;
    Ok(u32::from_le_bytes(buf))
}

/// Builds the canonical sparse grid from a voxel coordinate list: removes
/// duplicates, Morton-sorts, and assigns shared corner ids in first-touch
/// order.
pub fn build_grid(coords: &[VoxelCoord], resolution: u32, domain: Aabb) -> Result<SparseGrid> {
    if resolution < 1 {
        return Err(Error::invalid("resolution must be >= 1"));
    }
    if resolution > MAX_RESOLUTION {
        return Err(Error::invalid(format!(
            "resolution {resolution} exceeds maximum {MAX_RESOLUTION}"
        )));
    }
    if !domain.is_valid() {
        return Err(Error::invalid("domain box must be finite with min < max"));
    }
    for c in coords {
        if c.i >= resolution || c.j >= resolution || c.k >= resolution {
            return Err(Error::range(format!(
                "voxel ({}, {}, {}) outside [0, {resolution})^3",
                c.i, c.j, c.k
            )));
        }
    }

    let mut voxels: Vec<VoxelCoord> = coords.to_vec();
    voxels.sort_unstable_by_key(|v| v.morton());
    voxels.dedup();

    let mut corner_index: HashMap<u64, u32> = HashMap::with_capacity(voxels.len() * 2);
    let mut corner_coords: Vec<[u32; 3]> = Vec::with_capacity(voxels.len() * 2);
    let mut voxel_corners: Vec<[u32; 8]> = Vec::with_capacity(voxels.len());

    for v in &voxels {
        let mut ids = [0u32; 8];
        for (local, off) in CORNER_OFFSETS.iter().enumerate() {
            let corner = [v.i + off[0], v.j + off[1], v.k + off[2]];
            let code = morton3(corner[0], corner[1], corner[2]);
            let next = corner_coords.len() as u32;
            let id = *corner_index.entry(code).or_insert_with(|| {
                corner_coords.push(corner);
                next
            });
            ids[local] = id;
        }
        voxel_corners.push(ids);
    }

    Ok(SparseGrid {
        resolution,
        domain,
        voxels,
        voxel_corners,
        corner_coords,
    })
}

/// Cell index of a point under the half-open convention: cell
/// `[min + idx*cell, min + (idx+1)*cell)`, with points exactly on the domain
/// max face clamped into the last cell.
pub fn cell_of_point(p: &Vec3, resolution: u32, domain: &Aabb) -> Result<VoxelCoord> {
    let cell = domain.cell_size(resolution);
    let mut idx = [0u32; 3];
    for a in 0..3 {
        if !(p[a] >= domain.min[a] && p[a] <= domain.max[a]) {
            return Err(Error::range(format!(
                "point component {a} = {} outside domain [{}, {}]",
                p[a], domain.min[a], domain.max[a]
            )));
        }
        let t = ((p[a] - domain.min[a]) / cell[a]).floor() as i64;
        idx[a] = t.min(resolution as i64 - 1).max(0) as u32;
    }
    Ok(VoxelCoord::new(idx[0], idx[1], idx[2]))
}

/// Voxelizes a point cloud: a cell is present iff at least one point falls
/// inside it. An empty cloud yields an empty grid.
pub fn voxelize_points(pc: &PointCloud, resolution: u32, domain: Aabb) -> Result<SparseGrid> {
    let mut coords = Vec::with_capacity(pc.len());
    for p in pc.points() {
        coords.push(cell_of_point(p, resolution, &domain)?);
    }
    build_grid(&coords, resolution, domain)
}

/// The voxels of `grid` among the <= 4 cells around a lattice edge, in
/// canonical rotational order (counterclockwise around the positive edge
/// axis). Cells outside the lattice contribute nothing.
pub fn edge_adjacent_voxels(grid: &SparseGrid, edge: EdgeKey) -> Result<Vec<u32>> {
    Ok(edge_adjacent_cells(grid.resolution, edge)?
        .into_iter()
        .flatten()
        .filter_map(|c| grid.voxel_id(c))
        .collect())
}

/// The 4 rotationally-ordered cell slots around the edge; `None` marks slots
/// outside the lattice.
pub fn edge_adjacent_cells(resolution: u32, edge: EdgeKey) -> Result<[Option<VoxelCoord>; 4]> {
    let axis = edge.axis();
    let base = edge.base();
    if axis > 2
        || base.iter().any(|&c| c > resolution)
        || base[axis] >= resolution
    {
        return Err(Error::invalid(format!(
            "edge base {base:?} axis {axis} is not a lattice edge at resolution {resolution}"
        )));
    }
    // Perpendicular axes in right-handed cyclic order, so the four cells wind
    // counterclockwise when viewed from the positive edge axis.
    let u = (axis + 1) % 3;
    let v = (axis + 2) % 3;
    const ROT: [(i64, i64); 4] = [(-1, -1), (0, -1), (0, 0), (-1, 0)];
    let mut out = [None; 4];
    for (slot, (du, dv)) in ROT.iter().enumerate() {
        let mut c = [base[0] as i64, base[1] as i64, base[2] as i64];
        c[u] += du;
        c[v] += dv;
        if c.iter().all(|&x| x >= 0) && c.iter().all(|&x| x < resolution as i64) {
            out[slot] = Some(VoxelCoord::new(c[0] as u32, c[1] as u32, c[2] as u32));
        }
    }
    Ok(out)
}
