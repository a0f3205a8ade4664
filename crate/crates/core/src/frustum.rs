//! Perspective cameras, MVP construction, voxel-center frustum containment,
//! and adaptive near/far control targeting a visibility ratio.
//!
//! # Conventions
//!
//! Camera space is right-handed with the camera looking along `-z` and `y`
//! up. The projection maps the frustum to the clip cube with NDC
//! `z in [-1, 1]`:
//!
//! ```text
//!     [ f/aspect  0   0                0              ]      f = 1 / tan(fov_y / 2)
//! P = [ 0         f   0                0              ]
//!     [ 0         0  -(far+n)/(far-n) -2 far n/(far-n)]
//!     [ 0         0  -1                0              ]
//! ```
//!
//! `mvp(camera) = P * world_to_cam`. A point with clip coordinates
//! `(x, y, z, w)` is inside the frustum iff `w > 0` and
//! `-w <= x, y, z <= w` (boundaries inclusive).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SparseGrid, VoxelSet};
use crate::math::{Mat3, Mat4, Vec3, Vec4};

const ROT_TOL: f64 = 1e-9;
/// Lower bound for bisected near planes.
const MIN_NEAR: f64 = 1e-6;

/// Perspective camera: rigid world-to-camera transform plus intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    world_to_cam: Mat4,
    fov_y: f64,
    aspect: f64,
    near: f64,
    far: f64,
}

impl Camera {
    pub fn new(world_to_cam: Mat4, fov_y: f64, aspect: f64, near: f64, far: f64) -> Result<Self> {
        let rot = world_to_cam.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho_err = (rot.transpose() * rot - Mat3::identity()).norm();
        if ortho_err > ROT_TOL {
            return Err(Error::invalid(format!(
                "extrinsics rotation not orthonormal (error {ortho_err:.3e})"
            )));
        }
        if (rot.determinant() - 1.0).abs() > ROT_TOL {
            return Err(Error::invalid("extrinsics rotation must have determinant +1"));
        }
        let bottom = world_to_cam.row(3);
        if (bottom[0], bottom[1], bottom[2], bottom[3]) != (0.0, 0.0, 0.0, 1.0) {
            return Err(Error::invalid("extrinsics last row must be (0, 0, 0, 1)"));
        }
        if !(near > 0.0 && far > near) {
            return Err(Error::invalid(format!(
                "clipping planes must satisfy 0 < near < far (got {near}, {far})"
            )));
        }
        if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
            return Err(Error::invalid("field of view must be in (0, pi)"));
        }
        if !(aspect > 0.0) {
            return Err(Error::invalid("aspect ratio must be positive"));
        }
        Ok(Self {
            world_to_cam,
            fov_y,
            aspect,
            near,
            far,
        })
    }

    /// Standard look-at constructor (camera looks along `-z` toward `target`).
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y: f64,
        aspect: f64,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("eye and target coincide"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("up vector parallel to view direction"))?;
        let true_up = right.cross(&forward);
        let mut m = Mat4::identity();
        for a in 0..3 {
            m[(0, a)] = right[a];
            m[(1, a)] = true_up[a];
            m[(2, a)] = -forward[a];
        }
        m[(0, 3)] = -right.dot(&eye);
        m[(1, 3)] = -true_up.dot(&eye);
        m[(2, 3)] = forward.dot(&eye);
        Self::new(m, fov_y, aspect, near, far)
    }

    pub fn world_to_cam(&self) -> &Mat4 {
        &self.world_to_cam
    }

    /// Rotation block of the extrinsics.
    pub fn rotation(&self) -> Mat3 {
        self.world_to_cam.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn position(&self) -> Vec3 {
        let rot = self.rotation();
        let t = Vec3::new(
            self.world_to_cam[(0, 3)],
            self.world_to_cam[(1, 3)],
            self.world_to_cam[(2, 3)],
        );
        -(rot.transpose() * t)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        let q = self.world_to_cam * Vec4::new(p.x, p.y, p.z, 1.0);
        Vec3::new(q.x, q.y, q.z)
    }

    pub fn fov_y(&self) -> f64 {
        self.fov_y
    }

    pub fn aspect(&self) -> f64 {
        self.aspect
    }

    pub fn near(&self) -> f64 {
        self.near
    }

    pub fn far(&self) -> f64 {
        self.far
    }

    /// Same pose and intrinsics with replaced clipping planes.
    pub fn with_planes(&self, near: f64, far: f64) -> Result<Self> {
        Self::new(self.world_to_cam, self.fov_y, self.aspect, near, far)
    }

    pub fn projection(&self) -> Mat4 {
        let f = 1.0 / (self.fov_y * 0.5).tan();
        let (n, fr) = (self.near, self.far);
        let mut p = Mat4::zeros();
        p[(0, 0)] = f / self.aspect;
        p[(1, 1)] = f;
        p[(2, 2)] = -(fr + n) / (fr - n);
        p[(2, 3)] = -2.0 * fr * n / (fr - n);
        p[(3, 2)] = -1.0;
        p
    }
}

/// Model-view-projection matrix of a camera (model transform is identity:
/// meshes live in world space).
pub fn mvp(cam: &Camera) -> Mat4 {
    cam.projection() * cam.world_to_cam
}

/// Clip-cube containment of a world point under an MVP matrix.
pub fn contains_point(m: &Mat4, p: &Vec3) -> bool {
    let clip = m * Vec4::new(p.x, p.y, p.z, 1.0);
    let w = clip.w;
    if w <= 0.0 {
        return false;
    }
    (-w <= clip.x && clip.x <= w) && (-w <= clip.y && clip.y <= w) && (-w <= clip.z && clip.z <= w)
}

/// Which points of a voxel must lie inside the frustum for it to activate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContainmentMode {
    /// Voxel center only (the activation rule used for training).
    #[default]
    Center,
    /// Center or any of the 8 cell corners: admits boundary-straddling
    /// voxels, useful for stitching experiments.
    Conservative,
}

/// Voxels whose center lies within the frustum of `m`.
pub fn active_voxels(grid: &SparseGrid, m: &Mat4) -> VoxelSet {
    active_voxels_mode(grid, m, ContainmentMode::Center)
}

pub fn active_voxels_mode(grid: &SparseGrid, m: &Mat4, mode: ContainmentMode) -> VoxelSet {
    let cell = grid.cell_size();
    let ids: Vec<u32> = (0..grid.voxel_count() as u32)
        .into_par_iter()
        .filter(|&v| {
            let center = grid.voxel_center(v);
            if contains_point(m, &center) {
                return true;
            }
            match mode {
                ContainmentMode::Center => false,
                ContainmentMode::Conservative => {
                    crate::grid::CORNER_OFFSETS.iter().any(|off| {
                        let corner = center
                            + Vec3::new(
                                (off[0] as f64 - 0.5) * cell.x,
                                (off[1] as f64 - 0.5) * cell.y,
                                (off[2] as f64 - 0.5) * cell.z,
                            );
                        contains_point(m, &corner)
                    })
                }
            }
        })
        .collect();
    VoxelSet::from_ids(ids)
}

/// Outcome of the adaptive near/far search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrustumResult {
    #[serde(skip)]
    pub active: VoxelSet,
    pub achieved_ratio: f64,
    pub near: f64,
    pub far: f64,
    pub iterations: u32,
    /// False when no plane setting reached the target band within the
    /// iteration budget; `active` then holds the closest iterate.
    pub converged: bool,
}

/// Adjusts the clipping planes so that approximately `target * N_v` voxels
/// are active. Holds the near plane and bisects the far plane first (the
/// active count is monotone in `far`); if even the largest far plane leaves
/// the count short, bisects the near plane downward. Unreachable targets
/// return the best iterate after `max_iter` evaluations.
pub fn adapt_frustum(
    grid: &SparseGrid,
    cam: &Camera,
    target: f64,
    tol: f64,
    max_iter: u32,
) -> Result<FrustumResult> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::invalid(format!("visibility ratio must be in (0, 1], got {target}")));
    }
    if tol < 0.0 {
        return Err(Error::invalid("tolerance must be nonnegative"));
    }
    let n_vox = grid.voxel_count();
    if n_vox == 0 {
        return Ok(FrustumResult {
            active: VoxelSet::default(),
            achieved_ratio: 0.0,
            near: cam.near(),
            far: cam.far(),
            iterations: 0,
            converged: true,
        });
    }
    let want = target * n_vox as f64;
    let lo_band = (target - tol) * n_vox as f64 - 1e-9;
    let hi_band = (target + tol) * n_vox as f64 + 1e-9;

    // Largest useful far plane: view-axis depth of the farthest domain corner.
    let f_max = grid
        .domain()
        .corners()
        .iter()
        .map(|c| -cam.to_camera(c).z)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(cam.near() + 1e-6)
        * (1.0 + 1e-9);

    struct Best {
        dist: f64,
        active: VoxelSet,
        near: f64,
        far: f64,
    }
    let mut best: Option<Best> = None;
    let mut iterations = 0u32;

    let eval = |near: f64, far: f64, iterations: &mut u32| -> Result<(usize, VoxelSet)> {
        *iterations += 1;
        let cam = cam.with_planes(near, far)?;
        let active = active_voxels(grid, &mvp(&cam));
        Ok((active.len(), active))
    };
    let consider =
        |best: &mut Option<Best>, count: usize, active: VoxelSet, near: f64, far: f64| {
            let dist = (count as f64 - want).abs();
            if best.as_ref().map_or(true, |b| dist < b.dist) {
                *best = Some(Best {
                    dist,
                    active,
                    near,
                    far,
                });
            }
        };
    let result = |active: VoxelSet, near: f64, far: f64, iterations: u32, converged: bool| {
        let achieved_ratio = active.len() as f64 / n_vox as f64;
        FrustumResult {
            active,
            achieved_ratio,
            near,
            far,
            iterations,
            converged,
        }
    };

    // Probe the widest far plane first: it bounds what far-plane growth can
    // reach and itself answers full-visibility targets.
    let (c0, a0) = eval(cam.near(), f_max, &mut iterations)?;
    if (c0 as f64) >= lo_band && (c0 as f64) <= hi_band {
        return Ok(result(a0, cam.near(), f_max, iterations, true));
    }
    consider(&mut best, c0, a0, cam.near(), f_max);

    if (c0 as f64) < lo_band {
        // Even the widest far plane is short: open the near plane downward.
        let (mut lo, mut hi) = (MIN_NEAR, cam.near());
        while iterations < max_iter {
            let mid = 0.5 * (lo + hi);
            let (c, a) = eval(mid, f_max, &mut iterations)?;
            if (c as f64) >= lo_band && (c as f64) <= hi_band {
                return Ok(result(a, mid, f_max, iterations, true));
            }
            consider(&mut best, c, a, mid, f_max);
            if (c as f64) < lo_band {
                hi = mid; // too few voxels: shrink near further
            } else {
                lo = mid;
            }
        }
    } else {
        // Bisect the far plane over [near + eps, f_max].
        let (mut lo, mut hi) = (cam.near() + 1e-9, f_max);
        while iterations < max_iter {
            let mid = 0.5 * (lo + hi);
            let (c, a) = eval(cam.near(), mid, &mut iterations)?;
            if (c as f64) >= lo_band && (c as f64) <= hi_band {
                return Ok(result(a, cam.near(), mid, iterations, true));
            }
            consider(&mut best, c, a, cam.near(), mid);
            if (c as f64) < lo_band {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }

    let b = best.expect("at least one evaluation recorded");
    Ok(result(b.active, b.near, b.far, iterations, false))
}

/// On-disk camera description (pose as position/look-at/up, vertical fov in
/// degrees). Loaded from a TOML document with these exact keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    pub fov_deg: f64,
    pub aspect: f64,
    pub near: f64,
    pub far: f64,
}

impl CameraSpec {
    pub fn to_camera(&self) -> Result<Camera> {
        Camera::look_at(
            Vec3::from(self.position),
            Vec3::from(self.look_at),
            Vec3::from(self.up),
            self.fov_deg.to_radians(),
            self.aspect,
            self.near,
            self.far,
        )
    }

    pub fn from_toml_str(text: &str, path: &std::path::Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(path, "camera file", e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, VoxelCoord};
    use crate::math::Aabb;
    use approx::assert_relative_eq;

    fn identity_cam(near: f64, far: f64) -> Camera {
        Camera::new(Mat4::identity(), std::f64::consts::FRAC_PI_2, 1.0, near, far).unwrap()
    }

    #[test]
    fn projection_maps_near_far_to_ndc_bounds() {
        let cam = identity_cam(1.0, 3.0);
        let m = mvp(&cam);
        let near_pt = m * Vec4::new(0.0, 0.0, -1.0, 1.0);
        assert_relative_eq!(near_pt.z / near_pt.w, -1.0, epsilon = 1e-12);
        let far_pt = m * Vec4::new(0.0, 0.0, -3.0, 1.0);
        assert_relative_eq!(far_pt.z / far_pt.w, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_matches_hand_computed_matrix() {
        // fov = pi/2 -> f = 1; aspect 1; n = 1, far = 3:
        // diag(1, 1, -2, .) with [2][3] = -3, [3][2] = -1.
        let cam = identity_cam(1.0, 3.0);
        let p = cam.projection();
        let mut expect = Mat4::zeros();
        expect[(0, 0)] = 1.0;
        expect[(1, 1)] = 1.0;
        expect[(2, 2)] = -2.0;
        expect[(2, 3)] = -3.0;
        expect[(3, 2)] = -1.0;
        assert_relative_eq!((p - expect).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn optical_axis_maps_to_ndc_center() {
        let cam = identity_cam(1.0, 3.0);
        let m = mvp(&cam);
        let p = m * Vec4::new(0.0, 0.0, -2.0, 1.0);
        assert_relative_eq!(p.x / p.w, 0.0, epsilon = 1e-15);
        assert_relative_eq!(p.y / p.w, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn point_behind_camera_fails_containment() {
        let cam = identity_cam(1.0, 3.0);
        let m = mvp(&cam);
        assert!(!contains_point(&m, &Vec3::new(0.0, 0.0, 1.0)));
        assert!(contains_point(&m, &Vec3::new(0.0, 0.0, -2.0)));
    }

    #[test]
    fn camera_validation_rejects_bad_inputs() {
        let mut skewed = Mat4::identity();
        skewed[(0, 1)] = 0.1;
        assert!(Camera::new(skewed, 1.0, 1.0, 0.1, 10.0).is_err());
        assert!(Camera::new(Mat4::identity(), 1.0, 1.0, -0.1, 10.0).is_err());
        assert!(Camera::new(Mat4::identity(), 1.0, 1.0, 5.0, 1.0).is_err());
        assert!(Camera::new(Mat4::identity(), 0.0, 1.0, 0.1, 10.0).is_err());
    }

    #[test]
    fn look_at_places_target_on_axis() {
        let cam = Camera::look_at(
            Vec3::new(3.0, 1.0, 2.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            1.0,
            1.0,
            0.1,
            10.0,
        )
        .unwrap();
        let q = cam.to_camera(&Vec3::zeros());
        assert_relative_eq!(q.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(q.y, 0.0, epsilon = 1e-12);
        assert!(q.z < 0.0);
        assert_relative_eq!((cam.position() - Vec3::new(3.0, 1.0, 2.0)).norm(), 0.0, epsilon = 1e-12);
    }

    fn small_grid() -> SparseGrid {
        let mut coords = Vec::new();
        for k in 0..4 {
            for j in 0..4 {
                for i in 0..4 {
                    coords.push(VoxelCoord::new(i, j, k));
                }
            }
        }
        build_grid(&coords, 4, Aabb::unit()).unwrap()
    }

    #[test]
    fn voxel_in_front_is_active_behind_is_not() {
        let grid = build_grid(&[VoxelCoord::new(0, 0, 0)], 1, Aabb::new(
            Vec3::new(-0.5, -0.5, -1.5),
            Vec3::new(0.5, 0.5, -0.5),
        ))
        .unwrap();
        // Camera at origin looking -z: voxel centered at (0,0,-1).
        let cam = identity_cam(0.1, 10.0);
        assert_eq!(active_voxels(&grid, &mvp(&cam)).len(), 1);

        let behind = build_grid(&[VoxelCoord::new(0, 0, 0)], 1, Aabb::new(
            Vec3::new(-0.5, -0.5, 0.5),
            Vec3::new(0.5, 0.5, 1.5),
        ))
        .unwrap();
        assert_eq!(active_voxels(&behind, &mvp(&cam)).len(), 0);
    }

    #[test]
    fn enclosing_camera_activates_everything_in_one_iteration() {
        let grid = small_grid();
        let cam = Camera::look_at(
            Vec3::new(0.0, 0.0, 6.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            1.2,
            1.0,
            0.5,
            20.0,
        )
        .unwrap();
        let r = adapt_frustum(&grid, &cam, 1.0, 0.02, 32).unwrap();
        assert_eq!(r.active.len(), grid.voxel_count());
        assert!(r.iterations <= 1);
        assert!(r.converged);
        assert_relative_eq!(r.achieved_ratio, 1.0);
    }

    #[test]
    fn unreachable_target_returns_best_effort() {
        let grid = small_grid();
        let cam = Camera::look_at(
            Vec3::new(0.0, 0.0, 6.0),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            1.2,
            1.0,
            0.5,
            20.0,
        )
        .unwrap();
        // Fractional-voxel target with zero tolerance is unreachable.
        let target = 0.5 / grid.voxel_count() as f64;
        let r = adapt_frustum(&grid, &cam, target, 0.0, 16).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 16);
        assert!(r.active.len() <= 1);
    }

    #[test]
    fn far_plane_monotonicity() {
        let grid = small_grid();
        let eye = Vec3::new(2.5, 1.0, 2.0);
        let mut prev: Option<VoxelSet> = None;
        for far in [1.0, 2.0, 3.0, 4.5, 8.0] {
            let cam = Camera::look_at(
                eye,
                Vec3::zeros(),
                Vec3::new(0.0, 1.0, 0.0),
                1.1,
                1.0,
                0.05,
                far,
            )
            .unwrap();
            let act = active_voxels(&grid, &mvp(&cam));
            if let Some(p) = &prev {
                assert!(p.ids().iter().all(|id| act.contains(*id)), "shrunk at far {far}");
            }
            prev = Some(act);
        }
    }

    #[test]
    fn conservative_mode_is_superset() {
        let grid = small_grid();
        let cam = Camera::look_at(
            Vec3::new(1.8, 0.3, 1.4),
            Vec3::zeros(),
            Vec3::new(0.0, 1.0, 0.0),
            0.9,
            1.0,
            0.2,
            2.5,
        )
        .unwrap();
        let m = mvp(&cam);
        let center = active_voxels(&grid, &m);
        let cons = active_voxels_mode(&grid, &m, ContainmentMode::Conservative);
        assert!(center.ids().iter().all(|id| cons.contains(*id)));
        assert!(cons.len() >= center.len());
    }

    #[test]
    fn camera_spec_roundtrip() {
        let text = r#"
position = [0.0, 0.0, 2.0]
look_at = [0.0, 0.0, 0.0]
up = [0.0, 1.0, 0.0]
fov_deg = 60.0
aspect = 1.0
near = 0.1
far = 10.0
"#;
        let spec = CameraSpec::from_toml_str(text, std::path::Path::new("<mem>")).unwrap();
        let cam = spec.to_camera().unwrap();
        assert_relative_eq!(cam.fov_y(), 60f64.to_radians());
        let bad = "position = [0, 0, 0]\nbogus = 1";
        assert!(CameraSpec::from_toml_str(bad, std::path::Path::new("<mem>")).is_err());
    }
}
