//! Anatomical positional embedding: per-voxel normalized atlas coordinates.
//!
//! Every phantom lives in one canonical frame, so the "average patient"
//! position of a voxel is available in closed form. Channel `c` of a voxel is
//! `2 * (world[c] - atlas_min[c]) / atlas_extent[c] - 1`, which lies in
//! `[-1, 1]` for any voxel inside the atlas.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Geometry, PointPrompt, Volume};

const EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ApeError {
    #[error("volume extent {lo:?}..{hi:?} lies outside the atlas")]
    OutsideAtlas { lo: [f64; 3], hi: [f64; 3] },
    #[error("voxel {0:?} out of bounds")]
    OutOfBounds([usize; 3]),
    #[error("grid dims {grid:?} do not divide map dims {map:?}")]
    IndivisibleDims { map: [usize; 3], grid: [usize; 3] },
    #[error("APE value {0} outside [-1, 1]")]
    OutOfRange(f64),
}

/// Axis-aligned atlas box in world millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtlasBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl AtlasBounds {
    /// The box covered by a full atlas grid.
    pub fn of(geom: &Geometry) -> Self {
        AtlasBounds {
            min: geom.origin,
            max: std::array::from_fn(|a| geom.origin[a] + geom.dims[a] as f64 * geom.spacing[a]),
        }
    }

    pub fn extent(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.max[a] - self.min[a])
    }

    pub fn midpoint(&self) -> [f64; 3] {
        std::array::from_fn(|a| 0.5 * (self.min[a] + self.max[a]))
    }

    #[inline]
    pub fn normalize(&self, world: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| 2.0 * (world[a] - self.min[a]) / (self.max[a] - self.min[a]) - 1.0)
    }

    pub fn contains_geometry(&self, g: &Geometry) -> bool {
        (0..3).all(|a| {
            let lo = g.origin[a];
            let hi = g.origin[a] + g.dims[a] as f64 * g.spacing[a];
            lo >= self.min[a] - EPS && hi <= self.max[a] + EPS
        })
    }
}

/// APE values sampled at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ApePoint {
    pub values: [f64; 3],
}

impl ApePoint {
    pub fn new(values: [f64; 3]) -> Result<Self, ApeError> {
        for &v in &values {
            if !v.is_finite() || v.abs() > 1.0 + EPS {
                return Err(ApeError::OutOfRange(v));
            }
        }
        Ok(ApePoint { values })
    }
}

/// Three channels per voxel, stored interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ApeMap {
    dims: [usize; 3],
    values: Vec<[f64; 3]>,
}

impl ApeMap {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    #[inline]
    pub fn at(&self, voxel: [usize; 3]) -> [f64; 3] {
        self.values[voxel[0] + self.dims[0] * (voxel[1] + self.dims[1] * voxel[2])]
    }
}

pub fn build_ape_map(v: &Volume, atlas: &AtlasBounds) -> Result<ApeMap, ApeError> {
    build_ape_map_for(v.geometry(), atlas)
}

pub fn build_ape_map_for(geom: &Geometry, atlas: &AtlasBounds) -> Result<ApeMap, ApeError> {
    if !atlas.contains_geometry(geom) {
        return Err(ApeError::OutsideAtlas {
            lo: geom.origin,
            hi: std::array::from_fn(|a| geom.origin[a] + geom.dims[a] as f64 * geom.spacing[a]),
        });
    }
    let values = (0..geom.len())
        .map(|i| atlas.normalize(geom.world_unchecked(geom.unflat(i))))
        .collect();
    Ok(ApeMap { dims: geom.dims, values })
}

/// APE of one voxel without materializing a map.
pub fn ape_at(geom: &Geometry, atlas: &AtlasBounds, p: PointPrompt) -> Result<ApePoint, ApeError> {
    if !geom.contains(p.voxel) {
        return Err(ApeError::OutOfBounds(p.voxel));
    }
    if !atlas.contains_geometry(geom) {
        return Err(ApeError::OutsideAtlas { lo: geom.origin, hi: geom.origin });
    }
    Ok(ApePoint { values: atlas.normalize(geom.world_unchecked(p.voxel)) })
}

pub fn sample_ape(map: &ApeMap, p: PointPrompt) -> Result<ApePoint, ApeError> {
    if p.voxel.iter().zip(map.dims.iter()).any(|(v, d)| v >= d) {
        return Err(ApeError::OutOfBounds(p.voxel));
    }
    Ok(ApePoint { values: map.at(p.voxel) })
}

/// Block-average pooling of each channel down to `grid_dims`.
pub fn pool_ape_to_grid(map: &ApeMap, grid_dims: [usize; 3]) -> Result<ApeMap, ApeError> {
    if (0..3).any(|a| grid_dims[a] == 0 || map.dims[a] % grid_dims[a] != 0) {
        return Err(ApeError::IndivisibleDims { map: map.dims, grid: grid_dims });
    }
    let block: [usize; 3] = std::array::from_fn(|a| map.dims[a] / grid_dims[a]);
    let n = (block[0] * block[1] * block[2]) as f64;
    let mut out = vec![[0.0; 3]; grid_dims.iter().product()];
    for z in 0..map.dims[2] {
        for y in 0..map.dims[1] {
            for x in 0..map.dims[0] {
                let cell = x / block[0] + grid_dims[0] * (y / block[1] + grid_dims[1] * (z / block[2]));
                let v = map.at([x, y, z]);
                for c in 0..3 {
                    out[cell][c] += v[c];
                }
            }
        }
    }
    for cell in &mut out {
        for c in cell.iter_mut() {
            *c /= n;
        }
    }
    Ok(ApeMap { dims: grid_dims, values: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atlas64() -> (Geometry, AtlasBounds) {
        let g = Geometry::unit([64, 64, 64]);
        (g, AtlasBounds::of(&g))
    }

    #[test]
    fn center_voxel_of_odd_atlas_is_zero() {
        let g = Geometry::unit([3, 3, 3]);
        let map = build_ape_map_for(&g, &AtlasBounds::of(&g)).unwrap();
        assert_eq!(sample_ape(&map, PointPrompt::new(1, 1, 1)).unwrap().values, [0.0; 3]);
    }

    #[test]
    fn corner_voxels_follow_voxel_center_formula() {
        let (g, atlas) = atlas64();
        let map = build_ape_map_for(&g, &atlas).unwrap();
        let lo = sample_ape(&map, PointPrompt::new(0, 0, 0)).unwrap().values;
        let expect = -1.0 + 1.0 / 64.0;
        for c in lo {
            assert!((c - expect).abs() < 1e-12);
        }
        let hi = sample_ape(&map, PointPrompt::new(63, 63, 63)).unwrap().values;
        for c in hi {
            assert!((c - (1.0 - 1.0 / 64.0)).abs() < 1e-12);
        }
        assert!(sample_ape(&map, PointPrompt::new(64, 0, 0)).is_err());
    }

    #[test]
    fn unit_step_changes_channel_by_two_over_extent() {
        let (g, atlas) = atlas64();
        let map = build_ape_map_for(&g, &atlas).unwrap();
        let a = map.at([10, 5, 5]);
        let b = map.at([11, 5, 5]);
        assert!((b[0] - a[0] - 2.0 / 64.0).abs() < 1e-12);
        assert_eq!(a[1], b[1]);
    }

    #[test]
    fn shifted_crop_samples_shift_with_origin() {
        let (g, atlas) = atlas64();
        let v = Volume::zeros(g);
        let crop = v.crop([8, 4, 0], [16, 16, 16]).unwrap();
        let map = build_ape_map(&crop, &atlas).unwrap();
        let s = sample_ape(&map, PointPrompt::new(0, 0, 0)).unwrap().values;
        let full = build_ape_map(&v, &atlas).unwrap();
        let f = sample_ape(&full, PointPrompt::new(0, 0, 0)).unwrap().values;
        assert!((s[0] - f[0] - 2.0 * 8.0 / 64.0).abs() < 1e-12);
        assert!((s[1] - f[1] - 2.0 * 4.0 / 64.0).abs() < 1e-12);
        assert!((s[2] - f[2]).abs() < 1e-12);
    }

    #[test]
    fn volume_outside_atlas_is_rejected() {
        let g = Geometry::new([4, 4, 4], [1.0; 3], [62.0, 0.0, 0.0]).unwrap();
        let atlas = AtlasBounds::of(&Geometry::unit([64, 64, 64]));
        assert!(matches!(build_ape_map_for(&g, &atlas), Err(ApeError::OutsideAtlas { .. })));
    }

    #[test]
    fn sampling_matches_closed_form_everywhere() {
        let g = Geometry::new([8, 8, 8], [1.5, 2.0, 0.5], [3.0, -4.0, 1.0]).unwrap();
        let atlas = AtlasBounds { min: [0.0, -10.0, 0.0], max: [20.0, 20.0, 10.0] };
        let map = build_ape_map_for(&g, &atlas).unwrap();
        for i in 0..g.len() {
            let v = g.unflat(i);
            let got = sample_ape(&map, PointPrompt { voxel: v }).unwrap().values;
            let w = g.world_unchecked(v);
            for c in 0..3 {
                let want = 2.0 * (w[c] - atlas.min[c]) / (atlas.max[c] - atlas.min[c]) - 1.0;
                assert_eq!(got[c], want);
            }
            assert_eq!(ape_at(&g, &atlas, PointPrompt { voxel: v }).unwrap().values, got);
        }
    }

    #[test]
    fn pooling_constant_and_identity() {
        let map = ApeMap { dims: [4, 4, 4], values: vec![[0.25, -0.5, 1.0]; 64] };
        let p = pool_ape_to_grid(&map, [2, 2, 2]).unwrap();
        assert!(p.values().iter().all(|v| *v == [0.25, -0.5, 1.0]));
        let (g, atlas) = atlas64();
        let full = build_ape_map_for(&g, &atlas).unwrap();
        assert_eq!(pool_ape_to_grid(&full, [64, 64, 64]).unwrap(), full);
        assert!(matches!(
            pool_ape_to_grid(&full, [5, 8, 8]),
            Err(ApeError::IndivisibleDims { .. })
        ));
    }

    #[test]
    fn pooling_matches_block_mean_oracle() {
        let (g, atlas) = atlas64();
        let full = build_ape_map_for(&g, &atlas).unwrap();
        let pooled = pool_ape_to_grid(&full, [8, 8, 8]).unwrap();
        for cz in 0..8 {
            for cy in 0..8 {
                for cx in 0..8 {
                    let mut sum = [0.0; 3];
                    for dz in 0..8 {
                        for dy in 0..8 {
                            for dx in 0..8 {
                                let w = g.world_unchecked([cx * 8 + dx, cy * 8 + dy, cz * 8 + dz]);
                                let n = atlas.normalize(w);
                                for c in 0..3 {
                                    sum[c] += n[c];
                                }
                            }
                        }
                    }
                    let got = pooled.at([cx, cy, cz]);
                    for c in 0..3 {
                        assert!((got[c] - sum[c] / 512.0).abs() < 1e-12);
                    }
                }
            }
        }
        for cx in 1..8 {
            assert!(pooled.at([cx, 3, 3])[0] >= pooled.at([cx - 1, 3, 3])[0]);
        }
    }

    #[test]
    fn ape_point_range_is_checked() {
        assert!(ApePoint::new([0.0, 1.0, -1.0]).is_ok());
        assert!(ApePoint::new([0.0, 1.5, 0.0]).is_err());
        assert!(ApePoint::new([f64::NAN, 0.0, 0.0]).is_err());
    }
}
