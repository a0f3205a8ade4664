//! Extraction benchmark: time and accounted working-set of dense,
//! full-sparse, and frustum-sectional extraction across resolutions.
//!
//! Timing covers isosurface extraction plus a fixed 256x256 depth/normal
//! render (a feed-forward proxy); grid construction, parameter allocation,
//! and frustum adaptation are setup. Memory is accounted from explicit size
//! formulas over the live structures rather than allocator introspection:
//!
//! ```text
//! grid_bytes  = N_v * (12 + 32) + N_c * 12      (coords, corner ids, corner coords)
//! param_bytes = N_c * (8 + 24) + N_v * (64 + 96) (s, delta, alpha, beta)
//! mesh_bytes  = V * 24 + T * 12 + T * 8 + V * 4  (vertices, triangles, provenance)
//! peak_bytes  = grid_bytes + param_bytes + mesh_bytes
//! ```
//!
//! Dense configurations whose estimate exceeds the memory budget are emitted
//! as skipped rows (no timing; byte estimate retained).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flexicubes::{extract, FlexParams, TriangleMesh};
use crate::frustum::{adapt_frustum, Camera};
use crate::grid::{build_grid, SparseGrid, VoxelCoord, VoxelSet};
use crate::math::{Aabb, Vec3};
use crate::optimize::{sample_cameras, CameraMode};
use crate::render::rasterize;
use crate::sdf::{sign_change_grid, AnalyticSdf};

/// Default memory budget for dense rows: conservative for desk-scale boxes.
pub const DEFAULT_MEM_BUDGET: u64 = 3 * 1024 * 1024 * 1024;

const RENDER_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Dense,
    Sparse,
    Sectional,
}

impl std::fmt::Display for BenchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BenchMode::Dense => write!(f, "dense"),
            BenchMode::Sparse => write!(f, "sparse"),
            BenchMode::Sectional => write!(f, "sectional"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub resolution: u32,
    pub mode: BenchMode,
    /// Visibility ratio target for sectional rows.
    pub alpha: Option<f64>,
    /// Median wall-clock of extraction + render; `None` when skipped.
    pub wall_ms: Option<f64>,
    pub peak_bytes: u64,
    pub grid_bytes: u64,
    pub param_bytes: u64,
    pub mesh_bytes: u64,
    pub voxels_total: u64,
    pub voxels_active: u64,
    pub faces: u64,
    pub skipped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub shape: String,
    pub repeats: u32,
    pub seed: u64,
    pub threads: usize,
    pub mem_budget: u64,
    pub rows: Vec<BenchRow>,
}

pub fn grid_bytes(n_voxels: u64, n_corners: u64) -> u64 {
    n_voxels * (12 + 32) + n_corners * 12
}

pub fn param_bytes(n_voxels: u64, n_corners: u64) -> u64 {
    n_corners * (8 + 24) + n_voxels * (64 + 96)
}

pub fn mesh_bytes(mesh: &TriangleMesh) -> u64 {
    mesh.vertices.len() as u64 * 24
        + mesh.triangles.len() as u64 * 12
        + mesh.face_provenance.len() as u64 * 8
        + mesh.vertex_provenance.len() as u64 * 4
}

fn dense_corner_count(res: u64) -> u64 {
    (res + 1).pow(3)
}

/// Estimated live bytes of a dense run before building anything.
pub fn dense_estimate(res: u32) -> u64 {
    let nv = (res as u64).pow(3);
    let nc = dense_corner_count(res as u64);
    grid_bytes(nv, nc) + param_bytes(nv, nc)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn sdf_params(grid: &SparseGrid, sdf: &AnalyticSdf) -> FlexParams {
    let mut params = FlexParams::constant(grid, 0.5);
    for c in 0..grid.corner_count() {
        params.s[c] = sdf.eval(&grid.corner_position(c as u32));
    }
    params
}

fn timed_row(
    grid: &SparseGrid,
    params: &FlexParams,
    active: Option<&VoxelSet>,
    cam: &Camera,
    repeats: u32,
    resolution: u32,
    mode: BenchMode,
    alpha: Option<f64>,
) -> Result<BenchRow> {
    let mut times = Vec::with_capacity(repeats as usize);
    let mut mesh = TriangleMesh::default();
    for _ in 0..repeats {
        let t0 = Instant::now();
        mesh = extract(grid, params, active)?;
        let _ = rasterize(&mesh, cam, RENDER_SIZE, RENDER_SIZE)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let nv = grid.voxel_count() as u64;
    let nc = grid.corner_count() as u64;
    let gb = grid_bytes(nv, nc);
    let pb = param_bytes(nv, nc);
    let mb = mesh_bytes(&mesh);
    Ok(BenchRow {
        resolution,
        mode,
        alpha,
        wall_ms: Some(median(times)),
        peak_bytes: gb + pb + mb,
        grid_bytes: gb,
        param_bytes: pb,
        mesh_bytes: mb,
        voxels_total: nv,
        voxels_active: active.map_or(nv, |a| a.len() as u64),
        faces: mesh.triangles.len() as u64,
        skipped: false,
    })
}

/// Runs the benchmark matrix: per resolution one sectional row per visibility
/// ratio, one full-sparse row, and one dense row (skipped with a marker when
/// its estimate exceeds `mem_budget`).
pub fn run_bench(
    sdf: &AnalyticSdf,
    resolutions: &[u32],
    alphas: &[f64],
    repeats: u32,
    seed: u64,
    mem_budget: u64,
) -> Result<BenchReport> {
    if repeats < 1 {
        return Err(Error::invalid("repeats must be >= 1"));
    }
    if resolutions.is_empty() {
        return Err(Error::invalid("need at least one resolution"));
    }
    for &a in alphas {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::invalid(format!("visibility ratio {a} outside (0, 1]")));
        }
    }
    let domain = Aabb::unit();
    let cam = sample_cameras(seed, 1, CameraMode::Orbit, &domain)
        .into_iter()
        .next()
        .expect("one camera");

    let mut rows = Vec::new();
    for &res in resolutions {
        let sparse = sign_change_grid(sdf, res, domain)?;
        let params = sdf_params(&sparse, sdf);

        let mut sorted_alphas: Vec<f64> = alphas.to_vec();
        sorted_alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &alpha in &sorted_alphas {
            let fr = adapt_frustum(&sparse, &cam, alpha, 0.02, 32)?;
            let active_cam = cam.with_planes(fr.near, fr.far)?;
            rows.push(timed_row(
                &sparse,
                &params,
                Some(&fr.active),
                &active_cam,
                repeats,
                res,
                BenchMode::Sectional,
                Some(alpha),
            )?);
        }

        rows.push(timed_row(
            &sparse,
            &params,
            None,
            &cam,
            repeats,
            res,
            BenchMode::Sparse,
            None,
        )?);

        let estimate = dense_estimate(res);
        if estimate > mem_budget {
            let nv = (res as u64).pow(3);
            let nc = dense_corner_count(res as u64);
            rows.push(BenchRow {
                resolution: res,
                mode: BenchMode::Dense,
                alpha: None,
                wall_ms: None,
                peak_bytes: grid_bytes(nv, nc) + param_bytes(nv, nc),
                grid_bytes: grid_bytes(nv, nc),
                param_bytes: param_bytes(nv, nc),
                mesh_bytes: 0,
                voxels_total: nv,
                voxels_active: nv,
                faces: 0,
                skipped: true,
            });
        } else {
            let mut coords = Vec::with_capacity((res as usize).pow(3));
            for k in 0..res {
                for j in 0..res {
                    for i in 0..res {
                        coords.push(VoxelCoord::new(i, j, k));
                    }
                }
            }
            let dense = build_grid(&coords, res, domain)?;
            drop(coords);
            let dense_params = sdf_params(&dense, sdf);
            rows.push(timed_row(
                &dense,
                &dense_params,
                None,
                &cam,
                repeats,
                res,
                BenchMode::Dense,
                None,
            )?);
        }
    }

    Ok(BenchReport {
        shape: sdf.to_string(),
        repeats,
        seed,
        threads: rayon::current_num_threads(),
        mem_budget,
        rows,
    })
}

impl BenchReport {
    /// CSV with a commented header. The `wall_ms` column is measured time and
    /// is excluded from byte-identical reproducibility comparisons; `skip`
    /// marks configurations over the memory budget.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# extraction benchmark: shape={} repeats={} seed={} threads={} mem_budget={}\n",
            self.shape, self.repeats, self.seed, self.threads, self.mem_budget
        ));
        out.push_str("# timing = extraction + 256x256 render; bytes = accounted live grid+param+mesh state\n");
        out.push_str(
            "resolution,mode,alpha,wall_ms,peak_bytes,grid_bytes,param_bytes,mesh_bytes,voxels_total,voxels_active,faces,skipped\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.resolution,
                r.mode,
                r.alpha.map_or(String::new(), |a| a.to_string()),
                r.wall_ms.map_or(String::new(), |t| format!("{t:.3}")),
                r.peak_bytes,
                r.grid_bytes,
                r.param_bytes,
                r.mesh_bytes,
                r.voxels_total,
                r.voxels_active,
                r.faces,
                r.skipped,
            ));
        }
        out
    }

    /// The CSV with the measured-time column blanked: the deterministic
    /// portion compared by reproducibility checks.
    pub fn to_csv_deterministic(&self) -> String {
        let mut copy = self.clone();
        for r in &mut copy.rows {
            if r.wall_ms.is_some() {
                r.wall_ms = Some(0.0);
            }
        }
        copy.to_csv()
    }

    /// Space-separated table of the same rows for plotting tools.
    pub fn to_dat(&self) -> String {
        let mut out = String::from("# resolution mode alpha wall_ms peak_bytes voxels_total voxels_active faces\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {}\n",
                r.resolution,
                r.mode,
                r.alpha.unwrap_or(f64::NAN),
                r.wall_ms.unwrap_or(f64::NAN),
                r.peak_bytes,
                r.voxels_total,
                r.voxels_active,
                r.faces,
            ));
        }
        out
    }
}

/// Recount of the accounted bytes from the live structures, used to verify
/// the report's arithmetic.
pub fn recount_bytes(grid: &SparseGrid, params: &FlexParams, mesh: &TriangleMesh) -> u64 {
    let voxels = grid.voxels().len() as u64 * std::mem::size_of::<VoxelCoord>() as u64;
    let corners_per_voxel = grid.voxel_count() as u64 * std::mem::size_of::<[u32; 8]>() as u64;
    let corner_coords = grid.corner_count() as u64 * std::mem::size_of::<[u32; 3]>() as u64;
    let s = params.s.len() as u64 * 8;
    let delta = params.delta.len() as u64 * std::mem::size_of::<Vec3>() as u64;
    let alpha = params.alpha.len() as u64 * 64;
    let beta = params.beta.len() as u64 * 96;
    voxels + corners_per_voxel + corner_coords + s + delta + alpha + beta + mesh_bytes(mesh)
}
