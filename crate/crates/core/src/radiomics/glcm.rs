use nalgebra::DMatrix;

use crate::volume::{RoiMask, Volume};

use super::discretize::{discretize, DiscretizedRoi, GRAY_LEVELS};
use super::{plog2, RadiomicsError, DIRECTIONS};

const G: usize = GRAY_LEVELS;
const MAX_PROB: usize = 19;

/// Symmetric co-occurrence counts for one direction, `G x G` row-major
/// (row/column `i` holds gray level `i + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct GlcmMatrix {
    pub counts: Vec<f64>,
    pub total: f64,
}

impl GlcmMatrix {
    pub fn probabilities(&self) -> Option<Vec<f64>> {
        (self.total > 0.0).then(|| self.counts.iter().map(|c| c / self.total).collect())
    }
}

/// One symmetric matrix per entry of [`DIRECTIONS`]; only pairs with both
/// voxels inside the ROI are counted.
pub fn glcm_matrices(roi: &DiscretizedRoi) -> Vec<GlcmMatrix> {
    let [nx, ny, nz] = roi.dims;
    DIRECTIONS
        .iter()
        .map(|d| {
            let mut counts = vec![0.0; G * G];
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let a = roi.levels[x + nx * (y + ny * z)];
                        if a == 0 {
                            continue;
                        }
                        let b = roi.level([x as i64 + d[0], y as i64 + d[1], z as i64 + d[2]]);
                        if b == 0 {
                            continue;
                        }
                        let (i, j) = (a as usize - 1, b as usize - 1);
                        counts[i * G + j] += 1.0;
                        counts[j * G + i] += 1.0;
                    }
                }
            }
            let total = counts.iter().sum();
            GlcmMatrix { counts, total }
        })
        .collect()
}

/// The 24 GLCM features of one normalized matrix `p` (`G x G`).
pub fn glcm_single_direction(p: &[f64]) -> [f64; 24] {
    let ng = G as f64;
    let lvl = |i: usize| (i + 1) as f64;

    let mut px = [0.0; G];
    let mut py = [0.0; G];
    let mut sum = vec![0.0; 2 * G + 1];
    let mut diff = [0.0; G];
    for i in 0..G {
        for j in 0..G {
            let v = p[i * G + j];
            px[i] += v;
            py[j] += v;
            sum[i + j + 2] += v;
            diff[i.abs_diff(j)] += v;
        }
    }
    let mu_x: f64 = (0..G).map(|i| lvl(i) * px[i]).sum();
    let mu_y: f64 = (0..G).map(|j| lvl(j) * py[j]).sum();
    let var_x: f64 = (0..G).map(|i| (lvl(i) - mu_x).powi(2) * px[i]).sum();
    let var_y: f64 = (0..G).map(|j| (lvl(j) - mu_y).powi(2) * py[j]).sum();

    let (mut autocorr, mut prom, mut shade, mut tend, mut contrast) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut energy, mut entropy, mut hxy1, mut hxy2) = (0.0, 0.0, 0.0, 0.0);
    let (mut idm, mut idmn, mut id, mut idn, mut sum_squares) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut max_p: f64 = 0.0;
    for i in 0..G {
        for j in 0..G {
            let v = p[i * G + j];
            let (li, lj) = (lvl(i), lvl(j));
            let s = li + lj - mu_x - mu_y;
            let d = li - lj;
            autocorr += v * li * lj;
            prom += v * s.powi(4);
            shade += v * s.powi(3);
            tend += v * s * s;
            contrast += v * d * d;
            energy += v * v;
            entropy += plog2(v);
            let pp = px[i] * py[j];
            if pp > 0.0 {
                hxy1 -= v * pp.log2();
                hxy2 += plog2(pp);
            }
            idm += v / (1.0 + d * d);
            idmn += v / (1.0 + d * d / (ng * ng));
            id += v / (1.0 + d.abs());
            idn += v / (1.0 + d.abs() / ng);
            sum_squares += v * (li - mu_x).powi(2);
            max_p = max_p.max(v);
        }
    }

    let correlation = if var_x * var_y > 0.0 {
        (autocorr - mu_x * mu_y) / (var_x.sqrt() * var_y.sqrt())
    } else {
        1.0
    };
    let diff_avg: f64 = (0..G).map(|k| k as f64 * diff[k]).sum();
    let diff_entropy: f64 = diff.iter().map(|&v| plog2(v)).sum();
    let diff_var: f64 = (0..G).map(|k| (k as f64 - diff_avg).powi(2) * diff[k]).sum();
    let inv_var: f64 = (1..G).map(|k| diff[k] / (k * k) as f64).sum();
    let sum_avg: f64 = (2..=2 * G).map(|k| k as f64 * sum[k]).sum();
    let sum_entropy: f64 = sum.iter().map(|&v| plog2(v)).sum();

    let hx: f64 = px.iter().map(|&v| plog2(v)).sum();
    let hy: f64 = py.iter().map(|&v| plog2(v)).sum();
    let imc1 = if hx.max(hy) > 0.0 { (entropy - hxy1) / hx.max(hy) } else { 0.0 };
    let imc2 = if hxy2 > entropy { (1.0 - (-2.0 * (hxy2 - entropy)).exp()).sqrt() } else { 0.0 };

    [
        autocorr,
        mu_x,
        prom,
        shade,
        tend,
        contrast,
        correlation,
        diff_avg,
        diff_entropy,
        diff_var,
        energy,
        entropy,
        imc1,
        imc2,
        idm,
        idmn,
        id,
        idn,
        inv_var,
        max_p,
        sum_avg,
        sum_entropy,
        sum_squares,
        mcc(p, &px, &py),
    ]
}

/// Square root of the second largest eigenvalue of
/// `Q(i, j) = sum_k p(i, k) p(j, k) / (px(i) py(k))`, computed through the
/// symmetric matrix `A A^T` with `A = Dx^-1/2 P Dy^-1/2`, which is similar to `Q`.
fn mcc(p: &[f64], px: &[f64; G], py: &[f64; G]) -> f64 {
    let rows: Vec<usize> = (0..G).filter(|&i| px[i] > 0.0).collect();
    let cols: Vec<usize> = (0..G).filter(|&j| py[j] > 0.0).collect();
    if rows.len() < 2 || cols.len() < 2 {
        return 1.0;
    }
    let a = DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
        let (i, j) = (rows[r], cols[c]);
        p[i * G + j] / (px[i] * py[j]).sqrt()
    });
    let aat = &a * a.transpose();
    let mut eig: Vec<f64> = aat.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig[1].max(0.0).sqrt()
}

/// Features of each direction with at least one pair, averaged with equal
/// weights. An ROI without any adjacent pair yields zeros except
/// MaximumProbability = 1.
pub fn glcm_features(v: &Volume, m: &RoiMask) -> Result<[f64; 24], RadiomicsError> {
    let roi = discretize(v, m)?;
    Ok(aggregate(&glcm_matrices(&roi)))
}

pub(crate) fn aggregate(mats: &[GlcmMatrix]) -> [f64; 24] {
    let mut acc = [0.0; 24];
    let mut n = 0usize;
    for p in mats.iter().filter_map(GlcmMatrix::probabilities) {
        let f = glcm_single_direction(&p);
        for (a, v) in acc.iter_mut().zip(f) {
            *a += v;
        }
        n += 1;
    }
    if n == 0 {
        let mut out = [0.0; 24];
        out[MAX_PROB] = 1.0;
        return out;
    }
    acc.map(|a| a / n as f64)
}
