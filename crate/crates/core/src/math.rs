//! Shared scalar/vector aliases and the axis-aligned domain box.

use serde::{Deserialize, Serialize};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Mat4 = nalgebra::Matrix4<f64>;
pub type Vec4 = nalgebra::Vector4<f64>;

/// Axis-aligned box in world units. Grids interpret it as the volume covered
/// by the voxel lattice; cell size is `extent / resolution` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self {
            min: min.into(),
            max: max.into(),
        }
    }

    /// The default normalized-shape domain `[-1, 1]^3`.
    pub fn unit() -> Self {
        Self {
            min: [-1.0; 3],
            max: [1.0; 3],
        }
    }

    pub fn min_v(&self) -> Vec3 {
        Vec3::from(self.min)
    }

    pub fn max_v(&self) -> Vec3 {
        Vec3::from(self.max)
    }

    pub fn extent(&self) -> Vec3 {
        self.max_v() - self.min_v()
    }

    pub fn center(&self) -> Vec3 {
        (self.min_v() + self.max_v()) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    /// Half the diagonal: radius of the bounding sphere around the center.
    pub fn bounding_radius(&self) -> f64 {
        0.5 * self.diagonal()
    }

    pub fn cell_size(&self, resolution: u32) -> Vec3 {
        self.extent() / resolution as f64
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (lo, hi) = (self.min_v(), self.max_v());
        let mut out = [Vec3::zeros(); 8];
        for (c, v) in out.iter_mut().enumerate() {
            *v = Vec3::new(
                if c & 1 == 0 { lo.x } else { hi.x },
                if c & 2 == 0 { lo.y } else { hi.y },
                if c & 4 == 0 { lo.z } else { hi.z },
            );
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|a| self.min[a].is_finite() && self.max[a].is_finite() && self.min[a] < self.max[a])
    }

    /// Smallest box containing the given points. Returns `None` for an empty set.
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = iter.next()?;
        let mut lo = *first;
        let mut hi = *first;
        for p in iter {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Some(Self::new(lo, hi))
    }
}

impl Default for Aabb {
    fn default() -> Self {
        Self::unit()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_box_geometry() {
        let b = Aabb::unit();
        assert_eq!(b.extent(), Vec3::new(2.0, 2.0, 2.0));
        assert_eq!(b.center(), Vec3::zeros());
        assert_eq!(b.cell_size(4), Vec3::new(0.5, 0.5, 0.5));
        assert!(b.contains(&Vec3::new(1.0, -1.0, 0.3)));
        assert!(!b.contains(&Vec3::new(1.0 + 1e-12, 0.0, 0.0)));
    }

    #[test]
    fn from_points_covers_inputs() {
        let pts = [Vec3::new(0.5, -0.25, 0.0), Vec3::new(-0.5, 1.0, 2.0)];
        let b = Aabb::from_points(pts.iter()).unwrap();
        assert_eq!(b.min, [-0.5, -0.25, 0.0]);
        assert_eq!(b.max, [0.5, 1.0, 2.0]);
    }
}
