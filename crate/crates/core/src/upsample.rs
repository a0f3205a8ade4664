//! Self-pruning voxel upsampling: geometric subdivision, point-cloud
//! occupancy targets, and pruning of unoccupied children.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grid::{build_grid, cell_of_point, PointCloud, SparseGrid, VoxelCoord, MAX_RESOLUTION};

/// Parent-child bookkeeping of one subdivision step. Children of one parent
/// are addressed as a contiguous range into `child_indices`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubdivisionMap {
    factor: u32,
    /// Parent voxel id of each child (indexed by fine-grid voxel id).
    child_parent: Vec<u32>,
    /// CSR offsets: children of parent `p` are
    /// `child_indices[parent_offsets[p]..parent_offsets[p + 1]]`.
    parent_offsets: Vec<u32>,
    child_indices: Vec<u32>,
}

impl SubdivisionMap {
    pub fn factor(&self) -> u32 {
        self.factor
    }

    pub fn parent_of(&self, child: u32) -> u32 {
        self.child_parent[child as usize]
    }

    pub fn children_of(&self, parent: u32) -> &[u32] {
        let lo = self.parent_offsets[parent as usize] as usize;
        let hi = self.parent_offsets[parent as usize + 1] as usize;
        &self.child_indices[lo..hi]
    }

    pub fn parent_count(&self) -> usize {
        self.parent_offsets.len() - 1
    }

    pub fn child_count(&self) -> usize {
        self.child_parent.len()
    }
}

/// Splits every voxel into `k^3` children at resolution `k * N_r` over the
/// same domain. Corner table is rebuilt; Morton order is preserved.
pub fn subdivide(grid: &SparseGrid, k: u32) -> Result<(SparseGrid, SubdivisionMap)> {
    if k < 2 {
        return Err(Error::invalid("subdivision factor must be >= 2"));
    }
    let fine_res = grid
        .resolution()
        .checked_mul(k)
        .filter(|&r| r <= MAX_RESOLUTION)
        .ok_or_else(|| {
            Error::range(format!(
                "fine resolution {} * {k} exceeds maximum {MAX_RESOLUTION}",
                grid.resolution()
            ))
        })?;

    let mut children = Vec::with_capacity(grid.voxel_count() * (k * k * k) as usize);
    for v in grid.voxels() {
        for dz in 0..k {
            for dy in 0..k {
                for dx in 0..k {
                    children.push(VoxelCoord::new(v.i * k + dx, v.j * k + dy, v.k * k + dz));
                }
            }
        }
    }
    let fine = build_grid(&children, fine_res, *grid.domain())?;

    let mut child_parent = vec![0u32; fine.voxel_count()];
    let mut counts = vec![0u32; grid.voxel_count()];
    for (child_id, c) in fine.voxels().iter().enumerate() {
        let parent_coord = VoxelCoord::new(c.i / k, c.j / k, c.k / k);
        let parent = grid
            .voxel_id(parent_coord)
            .expect("every child coordinate descends from a parent voxel");
        child_parent[child_id] = parent;
        counts[parent as usize] += 1;
    }
    debug_assert!(counts.iter().all(|&c| c == k * k * k));

    let mut parent_offsets = vec![0u32; grid.voxel_count() + 1];
    for p in 0..grid.voxel_count() {
        parent_offsets[p + 1] = parent_offsets[p] + counts[p];
    }
    let mut cursor = parent_offsets.clone();
    let mut child_indices = vec![0u32; fine.voxel_count()];
    for (child_id, &parent) in child_parent.iter().enumerate() {
        child_indices[cursor[parent as usize] as usize] = child_id as u32;
        cursor[parent as usize] += 1;
    }

    Ok((
        fine,
        SubdivisionMap {
            factor: k,
            child_parent,
            parent_offsets,
            child_indices,
        },
    ))
}

/// Ground-truth occupancy: a child is occupied iff at least one input point
/// falls in its half-open cell (same convention as voxelization).
pub fn gt_occupancy(children: &SparseGrid, pc: &PointCloud) -> Result<Vec<bool>> {
    let mut occ = vec![false; children.voxel_count()];
    if pc.is_empty() {
        return Ok(occ);
    }
    let lookup: HashMap<VoxelCoord, u32> = children
        .voxels()
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i as u32))
        .collect();
    for p in pc.points() {
        let coord = cell_of_point(p, children.resolution(), children.domain())?;
        if let Some(&id) = lookup.get(&coord) {
            occ[id as usize] = true;
        }
    }
    Ok(occ)
}

/// Keeps exactly the occupied children, rebuilding the corner table.
pub fn self_prune(children: &SparseGrid, occ: &[bool]) -> Result<SparseGrid> {
    if occ.len() != children.voxel_count() {
        return Err(Error::invalid(format!(
            "{} occupancy flags for {} voxels",
            occ.len(),
            children.voxel_count()
        )));
    }
    let kept: Vec<VoxelCoord> = children
        .voxels()
        .iter()
        .zip(occ)
        .filter_map(|(&c, &keep)| keep.then_some(c))
        .collect();
    build_grid(&kept, children.resolution(), *children.domain())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::voxelize_points;
    use crate::math::{Aabb, Vec3};
    use crate::meshio::sample_surface;
    use crate::sdf::{sign_change_grid, AnalyticSdf};
    use crate::shapes::uv_sphere;

    #[test]
    fn single_voxel_factor_two() {
        let grid = build_grid(&[VoxelCoord::new(0, 0, 0)], 1, Aabb::unit()).unwrap();
        let (fine, map) = subdivide(&grid, 2).unwrap();
        assert_eq!(fine.voxel_count(), 8);
        assert_eq!(fine.resolution(), 2);
        assert_eq!(map.children_of(0).len(), 8);
        assert_eq!(map.factor(), 2);
    }

    #[test]
    fn single_voxel_factor_four() {
        let grid = build_grid(&[VoxelCoord::new(0, 0, 0)], 1, Aabb::unit()).unwrap();
        let (fine, map) = subdivide(&grid, 4).unwrap();
        assert_eq!(fine.voxel_count(), 64);
        assert_eq!(map.children_of(0).len(), 64);
    }

    #[test]
    fn children_lie_inside_parents() {
        let grid = sign_change_grid(&AnalyticSdf::sphere(0.6), 8, Aabb::unit()).unwrap();
        let (fine, map) = subdivide(&grid, 2).unwrap();
        assert_eq!(fine.voxel_count(), 8 * grid.voxel_count());
        for child in 0..fine.voxel_count() as u32 {
            let parent = map.parent_of(child);
            let c = fine.voxels()[child as usize];
            let p = grid.voxels()[parent as usize];
            assert_eq!(VoxelCoord::new(c.i / 2, c.j / 2, c.k / 2), p);
            assert!(map.children_of(parent).contains(&child));
        }
    }

    #[test]
    fn dense_child_enumeration_oracle() {
        // Brute-force oracle: the fine voxel set must equal the direct
        // enumeration of every parent's k^3 children.
        let grid = sign_change_grid(&AnalyticSdf::sphere(0.6), 16, Aabb::unit()).unwrap();
        let (fine, _) = subdivide(&grid, 2).unwrap();
        let mut expected: Vec<VoxelCoord> = Vec::new();
        for p in grid.voxels() {
            for dz in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        expected.push(VoxelCoord::new(2 * p.i + dx, 2 * p.j + dy, 2 * p.k + dz));
                    }
                }
            }
        }
        expected.sort_unstable_by_key(|v| v.morton());
        assert_eq!(fine.voxels(), expected.as_slice());
    }

    #[test]
    fn subdivide_rejects_overflow() {
        let grid = build_grid(&[VoxelCoord::new(0, 0, 0)], 1 << 19, Aabb::unit()).unwrap();
        assert!(matches!(subdivide(&grid, 4), Err(Error::OutOfRange(_))));
        let small = build_grid(&[VoxelCoord::new(0, 0, 0)], 2, Aabb::unit()).unwrap();
        assert!(subdivide(&small, 1).is_err());
    }

    #[test]
    fn occupancy_empty_cloud_all_false() {
        let grid = build_grid(&[VoxelCoord::new(0, 0, 0)], 1, Aabb::unit()).unwrap();
        let (fine, _) = subdivide(&grid, 2).unwrap();
        let occ = gt_occupancy(&fine, &PointCloud::default()).unwrap();
        assert!(occ.iter().all(|&o| !o));
    }

    #[test]
    fn occupancy_single_point_single_child() {
        let grid = build_grid(&[VoxelCoord::new(0, 0, 0)], 1, Aabb::unit()).unwrap();
        let (fine, _) = subdivide(&grid, 2).unwrap();
        let pc = PointCloud::new(vec![Vec3::new(0.5, 0.5, 0.5)]);
        let occ = gt_occupancy(&fine, &pc).unwrap();
        assert_eq!(occ.iter().filter(|&&o| o).count(), 1);
        let hit = occ.iter().position(|&o| o).unwrap();
        assert_eq!(fine.voxels()[hit], VoxelCoord::new(1, 1, 1));
    }

    #[test]
    fn occupancy_cross_checks_voxelize() {
        let mesh = uv_sphere(0.6, 24, 32);
        let pc = sample_surface(&mesh, 30_000, 5).unwrap();
        let coarse = voxelize_points(&pc, 16, Aabb::unit()).unwrap();
        let (fine, _) = subdivide(&coarse, 2).unwrap();
        let occ = gt_occupancy(&fine, &pc).unwrap();
        // Oracle: voxelize at the fine resolution, intersect with the child set.
        let fine_direct = voxelize_points(&pc, 32, Aabb::unit()).unwrap();
        for (i, &c) in fine.voxels().iter().enumerate() {
            assert_eq!(occ[i], fine_direct.voxel_id(c).is_some(), "child {c:?}");
        }
    }

    #[test]
    fn prune_identity_and_empty() {
        let grid = sign_change_grid(&AnalyticSdf::sphere(0.6), 8, Aabb::unit()).unwrap();
        let (fine, _) = subdivide(&grid, 2).unwrap();
        let all = self_prune(&fine, &vec![true; fine.voxel_count()]).unwrap();
        assert_eq!(all, fine);
        let none = self_prune(&fine, &vec![false; fine.voxel_count()]).unwrap();
        assert!(none.is_empty());
        assert!(self_prune(&fine, &[true]).is_err());
    }

    #[test]
    fn prune_with_gt_occupancy_equals_fine_voxelization() {
        let mesh = uv_sphere(0.55, 20, 28);
        let pc = sample_surface(&mesh, 40_000, 8).unwrap();
        let coarse = voxelize_points(&pc, 16, Aabb::unit()).unwrap();
        let (fine, _) = subdivide(&coarse, 2).unwrap();
        let occ = gt_occupancy(&fine, &pc).unwrap();
        let pruned = self_prune(&fine, &occ).unwrap();
        // Every fine cell containing a point is a child of an occupied coarse
        // cell, so pruning reproduces the fine voxelization exactly.
        let direct = voxelize_points(&pc, 32, Aabb::unit()).unwrap();
        assert_eq!(pruned, direct);
        // Pruning never creates voxels.
        for v in pruned.voxels() {
            assert!(fine.voxel_id(*v).is_some());
        }
    }
}
