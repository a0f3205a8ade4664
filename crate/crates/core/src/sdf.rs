//! Analytic signed distance fields used for initialization, fixtures, and
//! benchmarks. Negative inside the solid, positive outside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_grid, SparseGrid, VoxelCoord, CORNER_OFFSETS};
use crate::math::{Aabb, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AnalyticSdf {
    /// Sphere of the given radius, centered at the origin.
    Sphere { radius: f64 },
    /// Half-space below the plane `z = offset` (solid where z < offset).
    Plane { offset: f64 },
    /// Spherical shell: solid between `inner` and `outer` radii.
    HollowSphere { outer: f64, inner: f64 },
}

impl AnalyticSdf {
    pub fn sphere(radius: f64) -> Self {
        AnalyticSdf::Sphere { radius }
    }

    pub fn plane(offset: f64) -> Self {
        AnalyticSdf::Plane { offset }
    }

    pub fn hollow_sphere(outer: f64, inner: f64) -> Self {
        AnalyticSdf::HollowSphere { outer, inner }
    }

    pub fn eval(&self, p: &Vec3) -> f64 {
        match *self {
            AnalyticSdf::Sphere { radius } => p.norm() - radius,
            AnalyticSdf::Plane { offset } => p.z - offset,
            AnalyticSdf::HollowSphere { outer, inner } => {
                let r = p.norm();
                (r - outer).max(inner - r)
            }
        }
    }

    /// Parses shape ids of the form `sphere[:r]`, `plane[:z]`,
    /// `hollow[:outer:inner]`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut parts = spec.split(':');
        let name = parts.next().unwrap_or("");
        let nums: Vec<f64> = parts
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad number `{t}` in sdf spec `{spec}`")))
            })
            .collect::<Result<_>>()?;
        match (name, nums.as_slice()) {
            ("sphere", []) => Ok(Self::sphere(0.6)),
            ("sphere", [r]) => Ok(Self::sphere(*r)),
            ("plane", []) => Ok(Self::plane(0.25)),
            ("plane", [z]) => Ok(Self::plane(*z)),
            ("hollow", []) => Ok(Self::hollow_sphere(0.6, 0.4)),
            ("hollow", [o, i]) => Ok(Self::hollow_sphere(*o, *i)),
            _ => Err(Error::invalid(format!(
                "unknown sdf spec `{spec}` (expected sphere[:r] | plane[:z] | hollow[:o:i])"
            ))),
        }
    }
}

impl std::fmt::Display for AnalyticSdf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnalyticSdf::Sphere { radius } => write!(f, "sphere:{radius}"),
            AnalyticSdf::Plane { offset } => write!(f, "plane:{offset}"),
            AnalyticSdf::HollowSphere { outer, inner } => write!(f, "hollow:{outer}:{inner}"),
        }
    }
}

/// World position of corner lattice point (i, j, k) at the given resolution.
pub fn corner_world(coord: [u32; 3], resolution: u32, domain: &Aabb) -> Vec3 {
    let cell = domain.cell_size(resolution);
    domain.min_v()
        + Vec3::new(
            coord[0] as f64 * cell.x,
            coord[1] as f64 * cell.y,
            coord[2] as f64 * cell.z,
        )
}

/// All cells whose 8 corner samples of `sdf` have mixed signs (zero counts
/// as positive). A dense scan, intended for fixture construction.
pub fn sign_change_cells(sdf: &AnalyticSdf, resolution: u32, domain: &Aabb) -> Vec<VoxelCoord> {
    let n = resolution as usize;
    let ng = n + 1;
    // Corner sign table: negative = true.
    let mut neg = vec![false; ng * ng * ng];
    for k in 0..ng {
        for j in 0..ng {
            for i in 0..ng {
                let p = corner_world([i as u32, j as u32, k as u32], resolution, domain);
                neg[(k * ng + j) * ng + i] = sdf.eval(&p) < 0.0;
            }
        }
    }
    let mut cells = Vec::new();
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let mut any_neg = false;
                let mut any_pos = false;
                for off in CORNER_OFFSETS {
                    let idx = ((k + off[2] as usize) * ng + (j + off[1] as usize)) * ng
                        + (i + off[0] as usize);
                    if neg[idx] {
                        any_neg = true;
                    } else {
                        any_pos = true;
                    }
                }
                if any_neg && any_pos {
                    cells.push(VoxelCoord::new(i as u32, j as u32, k as u32));
                }
            }
        }
    }
    cells
}

/// Sparse grid holding exactly the sign-change cells of an analytic SDF.
pub fn sign_change_grid(sdf: &AnalyticSdf, resolution: u32, domain: Aabb) -> Result<SparseGrid> {
    build_grid(&sign_change_cells(sdf, resolution, &domain), resolution, domain)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_signs() {
        let s = AnalyticSdf::sphere(0.6);
        assert!(s.eval(&Vec3::zeros()) < 0.0);
        assert!(s.eval(&Vec3::new(1.0, 0.0, 0.0)) > 0.0);
        assert!((s.eval(&Vec3::new(0.6, 0.0, 0.0))).abs() < 1e-15);
    }

    #[test]
    fn hollow_sphere_cavity_is_outside() {
        let s = AnalyticSdf::hollow_sphere(0.6, 0.4);
        assert!(s.eval(&Vec3::zeros()) > 0.0, "cavity center is outside the material");
        assert!(s.eval(&Vec3::new(0.5, 0.0, 0.0)) < 0.0, "mid-shell is inside");
        assert!(s.eval(&Vec3::new(0.9, 0.0, 0.0)) > 0.0);
    }

    #[test]
    fn parse_specs() {
        assert_eq!(AnalyticSdf::parse("sphere").unwrap(), AnalyticSdf::sphere(0.6));
        assert_eq!(AnalyticSdf::parse("sphere:0.3").unwrap(), AnalyticSdf::sphere(0.3));
        assert_eq!(AnalyticSdf::parse("plane:0.1").unwrap(), AnalyticSdf::plane(0.1));
        assert_eq!(
            AnalyticSdf::parse("hollow:0.7:0.5").unwrap(),
            AnalyticSdf::hollow_sphere(0.7, 0.5)
        );
        assert!(AnalyticSdf::parse("torus").is_err());
        assert!(AnalyticSdf::parse("sphere:abc").is_err());
    }

    #[test]
    fn sign_change_cells_of_plane() {
        // Plane z = 0 at resolution 2 cuts through the lower layer's top
        // corners: every cell has corners on both sides only in... compute
        // directly: corners at z in {-1, 0, 1}; zero counts positive, so the
        // lower layer (corners at z = -1 and z = 0) has mixed signs.
        let cells = sign_change_cells(&AnalyticSdf::plane(0.0), 2, &Aabb::unit());
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|c| c.k == 0));
    }
}
