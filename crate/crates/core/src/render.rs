//! Deterministic software rasterizer producing depth / normal / mask /
//! face-id buffers, with analytic gradients to mesh vertices under frozen
//! pixel coverage.
//!
//! Conventions: pixel centers sample at `(px + 0.5, py + 0.5)`; row 0 is the
//! top of the image. Depth is camera-space distance along the view axis
//! (`-z`), interpolated perspective-correctly by intersecting the pixel ray
//! with the triangle plane. Fragments keep the nearest depth inside
//! `[near, far]`; equal depths resolve to the lower face id. Normals are flat
//! per-face camera-space normals flipped to face the camera; the background
//! holds depth `+inf`, normal `0`, face id `-1`.

use crate::error::{Error, Result};
use crate::flexicubes::TriangleMesh;
use crate::frustum::Camera;
use crate::math::{Mat3, Vec3};

/// Background marker in the depth buffer.
pub const BACKGROUND_DEPTH: f64 = f64::INFINITY;

/// Fragments closer than this to the camera plane are discarded outright
/// (they cannot satisfy `depth >= near` anyway).
const CAMERA_PLANE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderBuffers {
    width: usize,
    height: usize,
    /// Row-major `height x width` camera-space depths; background = +inf.
    pub depth: Vec<f64>,
    /// Flat per-face normals in camera space; background = zero vector.
    pub normal: Vec<Vec3>,
    /// Coverage mask.
    pub mask: Vec<bool>,
    /// Covering triangle index; background = -1.
    pub face_id: Vec<i64>,
}

impl RenderBuffers {
    pub fn background(height: usize, width: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![BACKGROUND_DEPTH; width * height],
            normal: vec![Vec3::zeros(); width * height],
            mask: vec![false; width * height],
            face_id: vec![-1; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    /// Checks the coherence invariants: mask set iff face id valid iff depth
    /// finite; unit normals under the mask, zero normals outside.
    pub fn validate(&self) -> Result<()> {
        let n = self.pixel_count();
        if self.depth.len() != n || self.normal.len() != n || self.mask.len() != n || self.face_id.len() != n
        {
            return Err(Error::shape("buffer lengths do not match resolution"));
        }
        for i in 0..n {
            let covered = self.mask[i];
            if covered != (self.face_id[i] >= 0) || covered != self.depth[i].is_finite() {
                return Err(Error::contract(format!("pixel {i} has incoherent mask/face/depth")));
            }
            if covered {
                if (self.normal[i].norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::contract(format!("pixel {i} normal is not unit length")));
                }
            } else if self.normal[i] != Vec3::zeros() {
                return Err(Error::contract(format!("pixel {i} background normal must be zero")));
            }
        }
        Ok(())
    }
}

/// Camera-space ray direction through a pixel center (unnormalized,
/// `z = -1`).
fn pixel_ray(cam: &Camera, width: usize, height: usize, px: usize, py: usize) -> Vec3 {
    let tan = (cam.fov_y() * 0.5).tan();
    let x_ndc = (px as f64 + 0.5) / width as f64 * 2.0 - 1.0;
    let y_ndc = 1.0 - (py as f64 + 0.5) / height as f64 * 2.0;
    Vec3::new(x_ndc * tan * cam.aspect(), y_ndc * tan, -1.0)
}

/// Face normal in camera space, flipped toward the camera, with the flip
/// sign. Returns `None` for degenerate faces.
fn face_normal_cam(q: &[Vec3; 3]) -> Option<(Vec3, f64)> {
    let m = (q[1] - q[0]).cross(&(q[2] - q[0]));
    let len = m.norm();
    if len < 1e-300 {
        return None;
    }
    let n = m / len;
    let centroid = (q[0] + q[1] + q[2]) / 3.0;
    let sigma = if n.dot(&centroid) > 0.0 { -1.0 } else { 1.0 };
    Some((n * sigma, sigma))
}

/// Clips a camera-space polygon to the region in front of the camera plane
/// (`z <= -eps`).
fn clip_front(poly: &[Vec3]) -> Vec<Vec3> {
    let inside = |p: &Vec3| p.z <= -CAMERA_PLANE_EPS;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (ia, ib) = (inside(&a), inside(&b));
        if ia {
            out.push(a);
        }
        if ia != ib {
            let t = (-CAMERA_PLANE_EPS - a.z) / (b.z - a.z);
            out.push(a + t * (b - a));
        }
    }
    out
}

fn to_screen(cam: &Camera, width: usize, height: usize, q: &Vec3) -> [f64; 2] {
    let tan = (cam.fov_y() * 0.5).tan();
    let inv_z = 1.0 / (-q.z);
    let x_ndc = q.x * inv_z / (tan * cam.aspect());
    let y_ndc = q.y * inv_z / tan;
    [
        (x_ndc + 1.0) * 0.5 * width as f64,
        (1.0 - y_ndc) * 0.5 * height as f64,
    ]
}

/// Rasterizes a mesh into depth / normal / mask / face-id buffers.
pub fn rasterize(mesh: &TriangleMesh, cam: &Camera, height: usize, width: usize) -> Result<RenderBuffers> {
    if height < 1 || width < 1 {
        return Err(Error::invalid("image must be at least 1x1"));
    }
    let mut buf = RenderBuffers::background(height, width);
    let rot = cam.rotation();
    let cam_verts: Vec<Vec3> = mesh.vertices.iter().map(|v| cam.to_camera(v)).collect();

    for (fid, tri) in mesh.triangles.iter().enumerate() {
        let q = [
            cam_verts[tri[0] as usize],
            cam_verts[tri[1] as usize],
            cam_verts[tri[2] as usize],
        ];
        let Some((_, _)) = face_normal_cam(&q) else { continue };
        let poly = clip_front(&q);
        if poly.len() < 3 {
            continue;
        }
        // Plane of the original triangle: depth at a pixel is the ray-plane
        // intersection, identical for every clipped sub-triangle.
        let m = (q[1] - q[0]).cross(&(q[2] - q[0]));
        let plane_n = q[0].dot(&m);

        let screen: Vec<[f64; 2]> = poly.iter().map(|p| to_screen(cam, width, height, p)).collect();
        for f in 1..poly.len() - 1 {
            let (s0, s1, s2) = (screen[0], screen[f], screen[f + 1]);
            let min_x = s0[0].min(s1[0]).min(s2[0]);
            let max_x = s0[0].max(s1[0]).max(s2[0]);
            let min_y = s0[1].min(s1[1]).min(s2[1]);
            let max_y = s0[1].max(s1[1]).max(s2[1]);
            let px0 = ((min_x - 0.5).ceil().max(0.0)) as usize;
            let px1 = ((max_x - 0.5).floor()).min(width as f64 - 1.0);
            let py0 = ((min_y - 0.5).ceil().max(0.0)) as usize;
            let py1 = ((max_y - 0.5).floor()).min(height as f64 - 1.0);
            if px1 < 0.0 || py1 < 0.0 {
                continue;
            }
            let (px1, py1) = (px1 as usize, py1 as usize);

            let edge = |a: [f64; 2], b: [f64; 2], px: f64, py: f64| {
                (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
            };
            let area = edge(s0, s1, s2[0], s2[1]);
            if area == 0.0 {
                continue;
            }
            for py in py0..=py1 {
                for px in px0..=px1 {
                    let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                    let e0 = edge(s0, s1, cx, cy);
                    let e1 = edge(s1, s2, cx, cy);
                    let e2 = edge(s2, s0, cx, cy);
                    let inside = if area > 0.0 {
                        e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0
                    } else {
                        e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0
                    };
                    if !inside {
                        continue;
                    }
                    let d = pixel_ray(cam, width, height, px, py);
                    let denom = d.dot(&m);
                    if denom.abs() < 1e-300 {
                        continue;
                    }
                    let depth = plane_n / denom;
                    if !(depth >= cam.near() && depth <= cam.far()) {
                        continue;
                    }
                    let idx = buf.index(px, py);
                    let better = depth < buf.depth[idx]
                        || (depth == buf.depth[idx] && (fid as i64) < buf.face_id[idx]);
                    if better {
                        buf.depth[idx] = depth;
                        buf.face_id[idx] = fid as i64;
                    }
                }
            }
        }
    }

    // Resolve normals and mask from the winning faces.
    let mut face_normals: Vec<Option<Vec3>> = vec![None; mesh.triangles.len()];
    for i in 0..buf.pixel_count() {
        let fid = buf.face_id[i];
        if fid < 0 {
            continue;
        }
        buf.mask[i] = true;
        let f = fid as usize;
        if face_normals[f].is_none() {
            let tri = mesh.triangles[f];
            let q = [
                cam_verts[tri[0] as usize],
                cam_verts[tri[1] as usize],
                cam_verts[tri[2] as usize],
            ];
            face_normals[f] = face_normal_cam(&q).map(|(n, _)| n);
        }
        buf.normal[i] = face_normals[f].expect("winning face is non-degenerate");
    }
    let _ = rot;
    Ok(buf)
}

/// Reverse-mode gradients of the rendered depth and normal values with
/// respect to world-space vertex positions, holding pixel-to-face coverage
/// fixed. The mask carries no gradient.
pub fn rasterize_backward(
    mesh: &TriangleMesh,
    cam: &Camera,
    buffers: &RenderBuffers,
    d_depth: &[f64],
    d_normal: &[Vec3],
) -> Result<Vec<Vec3>> {
    let n = buffers.pixel_count();
    if d_depth.len() != n || d_normal.len() != n {
        return Err(Error::shape("pixel gradient buffers do not match resolution"));
    }
    let n_faces = mesh.triangles.len() as i64;
    let rot: Mat3 = cam.rotation();
    let rot_t = rot.transpose();
    let cam_verts: Vec<Vec3> = mesh.vertices.iter().map(|v| cam.to_camera(v)).collect();
    let mut grads = vec![Vec3::zeros(); mesh.vertices.len()];

    for py in 0..buffers.height() {
        for px in 0..buffers.width() {
            let idx = py * buffers.width() + px;
            let fid = buffers.face_id[idx];
            if fid < 0 {
                continue;
            }
            if fid >= n_faces {
                return Err(Error::contract(format!(
                    "buffer references face {fid}, mesh has {n_faces}"
                )));
            }
            let gd = d_depth[idx];
            let gn = d_normal[idx];
            if gd == 0.0 && gn == Vec3::zeros() {
                continue;
            }
            let tri = mesh.triangles[fid as usize];
            let q = [
                cam_verts[tri[0] as usize],
                cam_verts[tri[1] as usize],
                cam_verts[tri[2] as usize],
            ];
            let m = (q[1] - q[0]).cross(&(q[2] - q[0]));
            let mut grad_q = [Vec3::zeros(); 3];

            if gd != 0.0 {
                // depth = N / T with N = q0 . (q1 x q2), T = d . m.
                let d = pixel_ray(cam, buffers.width(), buffers.height(), px, py);
                let t = d.dot(&m);
                let nn = q[0].dot(&(q[1].cross(&q[2])));
                if t.abs() > 1e-300 {
                    let dn = [
                        q[1].cross(&q[2]),
                        q[2].cross(&q[0]),
                        q[0].cross(&q[1]),
                    ];
                    let dt = [
                        q[1].cross(&d) + d.cross(&q[2]),
                        q[2].cross(&d) + d.cross(&q[0]),
                        q[0].cross(&d) + d.cross(&q[1]),
                    ];
                    let inv_t2 = 1.0 / (t * t);
                    for i in 0..3 {
                        grad_q[i] += gd * (dn[i] * t - dt[i] * nn) * inv_t2;
                    }
                }
            }

            if gn != Vec3::zeros() {
                if let Some((unit, sigma)) = face_normal_cam(&q) {
                    // n = sigma * m / |m| with the flip sign frozen.
                    let len = m.norm();
                    let g_m = (gn - unit * gn.dot(&unit)) * (sigma / len);
                    grad_q[0] += (q[1] - q[2]).cross(&g_m);
                    grad_q[1] += (q[2] - q[0]).cross(&g_m);
                    grad_q[2] += (q[0] - q[1]).cross(&g_m);
                }
            }

            for i in 0..3 {
                grads[tri[i] as usize] += rot_t * grad_q[i];
            }
        }
    }
    Ok(grads)
}

/// Writes a depth buffer as PFM (grayscale, little-endian, bottom-up rows).
pub fn write_depth_pfm(buf: &RenderBuffers, path: &std::path::Path) -> Result<()> {
    use std::io::Write as _;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "Pf\n{} {}\n-1.0\n", buf.width(), buf.height())?;
    for py in (0..buf.height()).rev() {
        for px in 0..buf.width() {
            let v = buf.depth[py * buf.width() + px] as f32;
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Writes the normal buffer as an 8-bit RGB PNG (components mapped from
/// [-1, 1] to [0, 255]; background maps to mid-gray).
pub fn write_normal_png(buf: &RenderBuffers, path: &std::path::Path) -> Result<()> {
    let mut img = image::RgbImage::new(buf.width() as u32, buf.height() as u32);
    for py in 0..buf.height() {
        for px in 0..buf.width() {
            let n = buf.normal[py * buf.width() + px];
            let to_byte = |v: f64| (((v + 1.0) * 0.5).clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(px as u32, py as u32, image::Rgb([to_byte(n.x), to_byte(n.y), to_byte(n.z)]));
        }
    }
    img.save(path).map_err(|e| Error::invalid(format!("png write failed: {e}")))
}

/// Writes the coverage mask as an 8-bit grayscale PNG (0 or 255).
pub fn write_mask_png(buf: &RenderBuffers, path: &std::path::Path) -> Result<()> {
    let mut img = image::GrayImage::new(buf.width() as u32, buf.height() as u32);
    for py in 0..buf.height() {
        for px in 0..buf.width() {
            let v = if buf.mask[py * buf.width() + px] { 255 } else { 0 };
            img.put_pixel(px as u32, py as u32, image::Luma([v]));
        }
    }
    img.save(path).map_err(|e| Error::invalid(format!("png write failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat4;
    use approx::assert_relative_eq;

    fn identity_cam(near: f64, far: f64) -> Camera {
        Camera::new(Mat4::identity(), std::f64::consts::FRAC_PI_2, 1.0, near, far).unwrap()
    }

    /// Triangle at depth `z` large enough to cover the whole image plane.
    fn fullscreen_tri(depth: f64) -> TriangleMesh {
        let s = depth * 10.0;
        TriangleMesh::new(
            vec![
                Vec3::new(-s, -s, -depth),
                Vec3::new(3.0 * s, -s, -depth),
                Vec3::new(-s, 3.0 * s, -depth),
            ],
            vec![[0, 1, 2]],
        )
    }

    #[test]
    fn empty_mesh_renders_background() {
        let cam = identity_cam(0.1, 10.0);
        let buf = rasterize(&TriangleMesh::default(), &cam, 8, 8).unwrap();
        assert!(buf.mask.iter().all(|&m| !m));
        assert!(buf.face_id.iter().all(|&f| f == -1));
        assert!(buf.depth.iter().all(|&d| d == BACKGROUND_DEPTH));
        buf.validate().unwrap();
    }

    #[test]
    fn fullscreen_triangle_constant_depth() {
        let cam = identity_cam(0.5, 10.0);
        let buf = rasterize(&fullscreen_tri(2.0), &cam, 16, 16).unwrap();
        assert!(buf.mask.iter().all(|&m| m), "full coverage expected");
        for &d in &buf.depth {
            assert_relative_eq!(d, 2.0, epsilon = 1e-9);
        }
        for n in &buf.normal {
            // Flat face normal facing the camera: +z.
            assert_relative_eq!((n - Vec3::new(0.0, 0.0, 1.0)).norm(), 0.0, epsilon = 1e-12);
        }
        buf.validate().unwrap();
    }

    #[test]
    fn z_test_keeps_nearest() {
        let mut mesh = fullscreen_tri(2.0);
        let near_tri = fullscreen_tri(1.0);
        let off = mesh.vertices.len() as u32;
        mesh.vertices.extend(near_tri.vertices);
        for t in near_tri.triangles {
            mesh.triangles.push([t[0] + off, t[1] + off, t[2] + off]);
        }
        let cam = identity_cam(0.5, 10.0);
        let buf = rasterize(&mesh, &cam, 8, 8).unwrap();
        assert!(buf.face_id.iter().all(|&f| f == 1), "nearer triangle must win");
        for &d in &buf.depth {
            assert_relative_eq!(d, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn equal_depth_tie_breaks_to_lower_face_id() {
        let mut mesh = fullscreen_tri(2.0);
        let dup = fullscreen_tri(2.0);
        let off = mesh.vertices.len() as u32;
        mesh.vertices.extend(dup.vertices);
        for t in dup.triangles {
            mesh.triangles.push([t[0] + off, t[1] + off, t[2] + off]);
        }
        let cam = identity_cam(0.5, 10.0);
        let buf = rasterize(&mesh, &cam, 8, 8).unwrap();
        assert!(buf.face_id.iter().all(|&f| f == 0));
    }

    #[test]
    fn depth_window_culls_fragments() {
        let cam = identity_cam(0.5, 1.5);
        let buf = rasterize(&fullscreen_tri(2.0), &cam, 8, 8).unwrap();
        assert!(buf.mask.iter().all(|&m| !m), "beyond far plane: background");
        let cam = identity_cam(2.5, 10.0);
        let buf = rasterize(&fullscreen_tri(2.0), &cam, 8, 8).unwrap();
        assert!(buf.mask.iter().all(|&m| !m), "in front of near plane: background");
    }

    #[test]
    fn zero_gradients_in_means_zero_out() {
        let cam = identity_cam(0.5, 10.0);
        let mesh = fullscreen_tri(2.0);
        let buf = rasterize(&mesh, &cam, 8, 8).unwrap();
        let g = rasterize_backward(
            &mesh,
            &cam,
            &buf,
            &vec![0.0; buf.pixel_count()],
            &vec![Vec3::zeros(); buf.pixel_count()],
        )
        .unwrap();
        assert!(g.iter().all(|v| *v == Vec3::zeros()));
    }

    #[test]
    fn uniform_depth_gradient_matches_axial_translation() {
        // Moving the triangle along -z by eps increases every covered depth
        // by eps: d(sum gd * depth)/d(translation) = sum(gd). The z component
        // of the total vertex gradient must match -sum(gd) (camera looks -z).
        let cam = identity_cam(0.5, 10.0);
        let mesh = fullscreen_tri(2.0);
        let buf = rasterize(&mesh, &cam, 12, 12).unwrap();
        let d_depth = vec![0.7; buf.pixel_count()];
        let d_normal = vec![Vec3::zeros(); buf.pixel_count()];
        let g = rasterize_backward(&mesh, &cam, &buf, &d_depth, &d_normal).unwrap();
        let total_z: f64 = g.iter().map(|v| v.z).sum();
        let expect = -0.7 * buf.pixel_count() as f64;
        assert_relative_eq!(total_z, expect, epsilon = 1e-6 * expect.abs());
        // Translations parallel to the image plane leave depths unchanged.
        let total_x: f64 = g.iter().map(|v| v.x).sum();
        assert!(total_x.abs() < 1e-9 * expect.abs());
    }

    #[test]
    fn buffers_are_deterministic() {
        let cam = identity_cam(0.5, 10.0);
        let mesh = fullscreen_tri(2.0);
        let a = rasterize(&mesh, &cam, 32, 32).unwrap();
        let b = rasterize(&mesh, &cam, 32, 32).unwrap();
        assert_eq!(a, b);
    }
}
