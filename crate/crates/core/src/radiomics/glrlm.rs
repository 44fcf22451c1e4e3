use crate::volume::{RoiMask, Volume};

use super::discretize::{discretize, DiscretizedRoi, GRAY_LEVELS};
use super::{plog2, RadiomicsError, DIRECTIONS};

/// Run-length counts for one direction: `runs[level - 1][length - 1]`.
pub(crate) fn run_matrix(roi: &DiscretizedRoi, d: [i64; 3]) -> Vec<Vec<f64>> {
    let max_len = *roi.dims.iter().max().unwrap();
    let mut runs = vec![vec![0.0; max_len]; GRAY_LEVELS];
    let [nx, ny, nz] = roi.dims;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let level = roi.levels[x + nx * (y + ny * z)];
                if level == 0 {
                    continue;
                }
                let v = [x as i64, y as i64, z as i64];
                // Only count from the first voxel of each run.
                if roi.level([v[0] - d[0], v[1] - d[1], v[2] - d[2]]) == level {
                    continue;
                }
                let mut len = 1;
                while roi.level([v[0] + len * d[0], v[1] + len * d[1], v[2] + len * d[2]]) == level {
                    len += 1;
                }
                runs[level as usize - 1][len as usize - 1] += 1.0;
            }
        }
    }
    runs
}

/// The 16 GLRLM features of one run-length matrix over an ROI of `voxels` voxels.
pub fn glrlm_single_direction(runs: &[Vec<f64>], voxels: usize) -> [f64; 16] {
    let nr: f64 = runs.iter().flatten().sum();
    let mut f = [0.0; 16];
    if nr == 0.0 {
        return f;
    }
    let mut gl_sums = vec![0.0; runs.len()];
    let mut len_sums = vec![0.0; runs.first().map_or(0, Vec::len)];
    let (mut mu_i, mut mu_j) = (0.0, 0.0);
    for (i, row) in runs.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let (gi, lj) = ((i + 1) as f64, (j + 1) as f64);
            let (i2, j2) = (gi * gi, lj * lj);
            f[0] += c / j2;
            f[1] += c * j2;
            f[10] += c / i2;
            f[11] += c * i2;
            f[12] += c / (i2 * j2);
            f[13] += c * i2 / j2;
            f[14] += c * j2 / i2;
            f[15] += c * i2 * j2;
            gl_sums[i] += c;
            len_sums[j] += c;
            mu_i += c / nr * gi;
            mu_j += c / nr * lj;
            f[9] += plog2(c / nr);
        }
    }
    let gln: f64 = gl_sums.iter().map(|s| s * s).sum();
    let rln: f64 = len_sums.iter().map(|s| s * s).sum();
    for (i, row) in runs.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0.0 {
                f[7] += c / nr * ((i + 1) as f64 - mu_i).powi(2);
                f[8] += c / nr * ((j + 1) as f64 - mu_j).powi(2);
            }
        }
    }
    for k in [0, 1, 10, 11, 12, 13, 14, 15] {
        f[k] /= nr;
    }
    f[2] = gln / nr;
    f[3] = gln / (nr * nr);
    f[4] = rln / nr;
    f[5] = rln / (nr * nr);
    f[6] = nr / voxels as f64;
    f
}

/// Per-direction features averaged over the 13 directions.
pub fn glrlm_features(v: &Volume, m: &RoiMask) -> Result<[f64; 16], RadiomicsError> {
    let roi = discretize(v, m)?;
    let mut acc = [0.0; 16];
    for d in DIRECTIONS {
        let f = glrlm_single_direction(&run_matrix(&roi, d), roi.voxel_count);
        for (a, x) in acc.iter_mut().zip(f) {
            *a += x;
        }
    }
    Ok(acc.map(|a| a / DIRECTIONS.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiomics::GLRLM_NAMES;
    use crate::volume::Geometry;

    fn idx(name: &str) -> usize {
        GLRLM_NAMES.iter().position(|&n| n == name).unwrap()
    }

    #[test]
    fn constant_row_is_one_long_run() {
        let g = Geometry::unit([4, 1, 1]);
        let v = Volume::new(g, vec![3.0; 4]).unwrap();
        let m = RoiMask::from_fn(g, |_| true);
        let roi = discretize(&v, &m).unwrap();
        let runs = run_matrix(&roi, [1, 0, 0]);
        assert_eq!(runs[0][3], 1.0);
        let f = glrlm_single_direction(&runs, roi.voxel_count);
        assert_eq!(f[idx("LongRunEmphasis")], 16.0);
        assert_eq!(f[idx("RunPercentage")], 0.25);
    }

    #[test]
    fn distinct_levels_each_form_a_run() {
        let g = Geometry::unit([5, 1, 1]);
        let v = Volume::new(g, vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = RoiMask::from_fn(g, |_| true);
        let roi = discretize(&v, &m).unwrap();
        let f = glrlm_single_direction(&run_matrix(&roi, [1, 0, 0]), roi.voxel_count);
        assert_eq!(f[idx("RunPercentage")], 1.0);
        assert_eq!(f[idx("ShortRunEmphasis")], 1.0);
    }

    #[test]
    fn runs_cover_every_voxel_in_each_direction() {
        let g = Geometry::unit([6, 5, 4]);
        let v = Volume::new(g, (0..g.len()).map(|i| ((i * 13) % 5) as f32).collect()).unwrap();
        let m = RoiMask::from_fn(g, |p| p[0] != 2 || p[1] == 1);
        let roi = discretize(&v, &m).unwrap();
        for d in DIRECTIONS {
            let runs = run_matrix(&roi, d);
            let covered: f64 = runs
                .iter()
                .flat_map(|row| row.iter().enumerate().map(|(j, c)| c * (j + 1) as f64))
                .sum();
            assert_eq!(covered as usize, roi.voxel_count);
        }
    }
}
