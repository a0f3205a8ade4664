//! Procedural triangle meshes: spheres, open hemisphere shells, and hollow
//! (two-wall) spheres. All faces wind so normals point out of the material.

use crate::flexicubes::TriangleMesh;
use crate::math::Vec3;

/// Closed UV sphere centered at the origin. `rings >= 2` polar divisions,
/// `segments >= 3` azimuthal divisions.
pub fn uv_sphere(radius: f64, rings: u32, segments: u32) -> TriangleMesh {
    assert!(rings >= 2 && segments >= 3);
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    build_sphere_zone(
        radius,
        0.0,
        std::f64::consts::PI,
        rings,
        segments,
        &mut vertices,
        &mut triangles,
        false,
    );
    TriangleMesh::new(vertices, triangles)
}

/// Open upper hemisphere (z >= 0) with a single boundary loop at the equator.
pub fn hemisphere_shell(radius: f64, rings: u32, segments: u32) -> TriangleMesh {
    assert!(rings >= 1 && segments >= 3);
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    build_sphere_zone(
        radius,
        0.0,
        std::f64::consts::FRAC_PI_2,
        rings,
        segments,
        &mut vertices,
        &mut triangles,
        true,
    );
    TriangleMesh::new(vertices, triangles)
}

/// Two concentric spherical walls. The inner wall's winding is flipped so its
/// normals point into the cavity, i.e. out of the solid shell material.
pub fn hollow_sphere(outer: f64, inner: f64, rings: u32, segments: u32) -> TriangleMesh {
    assert!(outer > inner && inner > 0.0);
    let outer_mesh = uv_sphere(outer, rings, segments);
    let inner_mesh = uv_sphere(inner, rings, segments);
    let mut vertices = outer_mesh.vertices;
    let mut triangles = outer_mesh.triangles;
    let offset = vertices.len() as u32;
    vertices.extend(inner_mesh.vertices);
    for t in inner_mesh.triangles {
        triangles.push([t[0] + offset, t[2] + offset, t[1] + offset]);
    }
    TriangleMesh::new(vertices, triangles)
}

/// Latitude zone of a sphere from `theta_min` (pole if 0) down to
/// `theta_max`. `open_end = true` leaves the far boundary ring open instead
/// of capping it with a pole fan (only valid when `theta_max < pi`).
#[allow(clippy::too_many_arguments)]
fn build_sphere_zone(
    radius: f64,
    theta_min: f64,
    theta_max: f64,
    rings: u32,
    segments: u32,
    vertices: &mut Vec<Vec3>,
    triangles: &mut Vec<[u32; 3]>,
    open_end: bool,
) {
    let seg = segments as usize;
    let at = |theta: f64, phi: f64| {
        Vec3::new(
            radius * theta.sin() * phi.cos(),
            radius * theta.sin() * phi.sin(),
            radius * theta.cos(),
        )
    };

    let top_pole = vertices.len() as u32;
    vertices.push(at(theta_min, 0.0));
    let mut ring_starts = Vec::new();
    let last_ring = if open_end { rings } else { rings - 1 };
    for i in 1..=last_ring {
        let theta = theta_min + (theta_max - theta_min) * i as f64 / rings as f64;
        ring_starts.push(vertices.len() as u32);
        for j in 0..seg {
            let phi = std::f64::consts::TAU * j as f64 / seg as f64;
            vertices.push(at(theta, phi));
        }
    }

    // Top fan.
    let first = ring_starts[0];
    for j in 0..seg as u32 {
        let a = first + j;
        let b = first + (j + 1) % segments;
        triangles.push([top_pole, a, b]);
    }
    // Quads between consecutive rings, diagonal through (upper j, lower j+1).
    for r in 1..ring_starts.len() {
        let (up, lo) = (ring_starts[r - 1], ring_starts[r]);
        for j in 0..seg as u32 {
            let j1 = (j + 1) % segments;
            let (a, b) = (up + j, up + j1);
            let (d, c) = (lo + j, lo + j1);
            triangles.push([a, d, c]);
            triangles.push([a, c, b]);
        }
    }
    // Bottom cap.
    if !open_end {
        let bottom_pole = vertices.len() as u32;
        vertices.push(at(theta_max, 0.0));
        let last = *ring_starts.last().unwrap();
        for j in 0..seg as u32 {
            let a = last + j;
            let b = last + (j + 1) % segments;
            triangles.push([bottom_pole, b, a]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshio::signed_volume;
    use approx::assert_relative_eq;

    #[test]
    fn sphere_is_closed_and_outward() {
        let m = uv_sphere(0.6, 16, 24);
        m.validate().unwrap();
        for v in &m.vertices {
            assert_relative_eq!(v.norm(), 0.6, epsilon = 1e-12);
        }
        // Volume approaches 4/3 pi r^3 from below.
        let vol = signed_volume(&m);
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.6f64.powi(3);
        assert!(vol > 0.9 * exact && vol < exact, "volume {vol} vs {exact}");
    }

    #[test]
    fn hemisphere_stays_above_equator() {
        let m = hemisphere_shell(0.6, 8, 24);
        m.validate().unwrap();
        for v in &m.vertices {
            assert!(v.z >= -1e-12);
        }
    }

    #[test]
    fn hollow_sphere_volume_is_shell_volume() {
        let m = hollow_sphere(0.6, 0.4, 24, 32);
        m.validate().unwrap();
        let vol = signed_volume(&m);
        let exact = 4.0 / 3.0 * std::f64::consts::PI * (0.6f64.powi(3) - 0.4f64.powi(3));
        assert!((vol - exact).abs() / exact < 0.05, "volume {vol} vs {exact}");
    }
}
