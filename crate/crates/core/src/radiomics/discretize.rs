use crate::volume::{RoiMask, Volume};

use super::{check_inputs, RadiomicsError};

/// Fixed number of gray levels used by every texture family.
pub const GRAY_LEVELS: usize = 32;

/// ROI gray levels on the mask bounding box; 0 marks voxels outside the ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedRoi {
    pub dims: [usize; 3],
    pub levels: Vec<u8>,
    pub voxel_count: usize,
}

impl DiscretizedRoi {
    #[inline]
    pub fn level(&self, v: [i64; 3]) -> u8 {
        if v.iter().zip(self.dims.iter()).any(|(&c, &d)| c < 0 || c >= d as i64) {
            return 0;
        }
        self.levels[v[0] as usize + self.dims[0] * (v[1] as usize + self.dims[1] * v[2] as usize)]
    }
}

/// Maps `x` in `[lo, hi]` to a level in `1..=GRAY_LEVELS`; a constant range maps to 1.
#[inline]
pub(crate) fn bin(x: f64, lo: f64, hi: f64) -> u8 {
    if hi <= lo {
        return 1;
    }
    let b = ((x - lo) / (hi - lo) * GRAY_LEVELS as f64).floor() as usize + 1;
    b.min(GRAY_LEVELS) as u8
}

pub fn discretize(v: &Volume, m: &RoiMask) -> Result<DiscretizedRoi, RadiomicsError> {
    check_inputs(v, m)?;
    let (lo, hi) = m.bbox().expect("non-empty mask");
    let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in m.foreground() {
        let x = v.get(p[0], p[1], p[2]) as f64;
        vmin = vmin.min(x);
        vmax = vmax.max(x);
    }
    let dims: [usize; 3] = std::array::from_fn(|a| hi[a] - lo[a] + 1);
    let mut levels = vec![0u8; dims.iter().product()];
    let mut voxel_count = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let (gx, gy, gz) = (x + lo[0], y + lo[1], z + lo[2]);
                if m.contains(gx, gy, gz) {
                    levels[x + dims[0] * (y + dims[1] * z)] = bin(v.get(gx, gy, gz) as f64, vmin, vmax);
                    voxel_count += 1;
                }
            }
        }
    }
    Ok(DiscretizedRoi { dims, levels, voxel_count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    #[test]
    fn levels_span_full_range() {
        let g = Geometry::unit([4, 1, 1]);
        let v = Volume::new(g, vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let m = RoiMask::from_fn(g, |_| true);
        let d = discretize(&v, &m).unwrap();
        assert_eq!(d.levels, vec![1, 9, 17, 32]);
    }

    #[test]
    fn constant_roi_maps_to_one() {
        let g = Geometry::unit([3, 3, 1]);
        let v = Volume::new(g, vec![5.0; 9]).unwrap();
        let m = RoiMask::from_fn(g, |p| p[0] > 0);
        let d = discretize(&v, &m).unwrap();
        assert_eq!(d.dims, [2, 3, 1]);
        assert!(d.levels.iter().all(|&l| l == 1));
        assert_eq!(d.voxel_count, 6);
    }
}
