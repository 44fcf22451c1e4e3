//! Brute-force reference implementations of the texture and histogram
//! features, written directly from the formulas over the full volume.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use tumor_retrieval::volume::{RoiMask, Volume};

pub const LEVELS: usize = 32;

const OFFSETS: [[i64; 3]; 13] = [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 1, 0],
    [1, -1, 0],
    [1, 0, 1],
    [1, 0, -1],
    [0, 1, 1],
    [0, 1, -1],
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
];

fn ent(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

fn roi_values(v: &Volume, m: &RoiMask) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, &b) in m.data().iter().enumerate() {
        if b == 1 {
            out.push(v.data()[i] as f64);
        }
    }
    out
}

/// Gray level per voxel of the full grid (0 outside the ROI).
pub fn level_grid(v: &Volume, m: &RoiMask) -> Vec<usize> {
    let vals = roi_values(v, m);
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v.data()
        .iter()
        .zip(m.data())
        .map(|(&x, &b)| {
            if b == 0 {
                0
            } else if hi == lo {
                1
            } else {
                let k = ((x as f64 - lo) * LEVELS as f64 / (hi - lo)).floor() as usize + 1;
                k.min(LEVELS)
            }
        })
        .collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() as f64 - 1.0) * q;
    let below = sorted[h.floor() as usize];
    let above = sorted[h.ceil() as usize];
    below + (h - h.floor()) * (above - below)
}

pub fn firstorder(v: &Volume, m: &RoiMask) -> [f64; 18] {
    let mut x = roi_values(v, m);
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = x.len() as f64;
    let voxel = v.spacing().iter().product::<f64>();
    let mean = x.iter().sum::<f64>() / n;
    let energy = x.iter().map(|a| a * a).sum::<f64>();
    let central = |k: i32| x.iter().map(|a| (a - mean).powi(k)).sum::<f64>() / n;
    let var = central(2);
    let (skew, kurt) = if var == 0.0 { (0.0, 0.0) } else { (central(3) / var.powf(1.5), central(4) / (var * var)) };

    let levels: Vec<usize> = level_grid(v, m).into_iter().filter(|&l| l > 0).collect();
    let mut hist = [0.0; LEVELS];
    for l in levels {
        hist[l - 1] += 1.0 / n;
    }

    let p10 = quantile(&x, 0.1);
    let p90 = quantile(&x, 0.9);
    let inner: Vec<f64> = x.iter().cloned().filter(|a| *a >= p10 && *a <= p90).collect();
    let inner_mean = inner.iter().sum::<f64>() / inner.len() as f64;

    [
        energy,
        energy * voxel,
        hist.iter().map(|&p| ent(p)).sum(),
        x[0],
        p10,
        p90,
        x[x.len() - 1],
        mean,
        quantile(&x, 0.5),
        quantile(&x, 0.75) - quantile(&x, 0.25),
        x[x.len() - 1] - x[0],
        x.iter().map(|a| (a - mean).abs()).sum::<f64>() / n,
        inner.iter().map(|a| (a - inner_mean).abs()).sum::<f64>() / inner.len() as f64,
        (energy / n).sqrt(),
        skew,
        kurt,
        var,
        hist.iter().map(|p| p * p).sum(),
    ]
}

fn neighbor(dims: [usize; 3], x: usize, y: usize, z: usize, d: [i64; 3], step: i64) -> Option<usize> {
    let c = [x as i64 + d[0] * step, y as i64 + d[1] * step, z as i64 + d[2] * step];
    for a in 0..3 {
        if c[a] < 0 || c[a] >= dims[a] as i64 {
            return None;
        }
    }
    Some(c[0] as usize + dims[0] * (c[1] as usize + dims[1] * c[2] as usize))
}

/// Normalized symmetric co-occurrence matrix per direction (`None` without pairs).
pub fn cooccurrence(v: &Volume, m: &RoiMask) -> Vec<Option<DMatrix<f64>>> {
    let lv = level_grid(v, m);
    let dims = v.dims();
    OFFSETS
        .iter()
        .map(|&d| {
            let mut c = DMatrix::<f64>::zeros(LEVELS, LEVELS);
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        let a = lv[x + dims[0] * (y + dims[1] * z)];
                        // Both orderings of each pair.
                        for step in [-1, 1] {
                            if let Some(j) = neighbor(dims, x, y, z, d, step) {
                                let b = lv[j];
                                if a > 0 && b > 0 {
                                    c[(a - 1, b - 1)] += 1.0;
                                }
                            }
                        }
                    }
                }
            }
            let total = c.sum();
            (total > 0.0).then(|| c / total)
        })
        .collect()
}

pub fn glcm_one(p: &DMatrix<f64>) -> [f64; 24] {
    let g = LEVELS;
    let l = |i: usize| (i + 1) as f64;
    let px: Vec<f64> = (0..g).map(|i| p.row(i).sum()).collect();
    let py: Vec<f64> = (0..g).map(|j| p.column(j).sum()).collect();
    let mut mx = 0.0;
    let mut my = 0.0;
    for i in 0..g {
        for j in 0..g {
            mx += l(i) * p[(i, j)];
            my += l(j) * p[(i, j)];
        }
    }
    let mut sx = 0.0;
    let mut sy = 0.0;
    for i in 0..g {
        for j in 0..g {
            sx += (l(i) - mx).powi(2) * p[(i, j)];
            sy += (l(j) - my).powi(2) * p[(i, j)];
        }
    }
    let sum_ij = |f: &dyn Fn(usize, usize, f64) -> f64| {
        let mut s = 0.0;
        for i in 0..g {
            for j in 0..g {
                s += f(i, j, p[(i, j)]);
            }
        }
        s
    };
    let autocorr = sum_ij(&|i, j, v| l(i) * l(j) * v);
    let cov = sum_ij(&|i, j, v| (l(i) - mx) * (l(j) - my) * v);
    let correlation = if sx * sy == 0.0 { 1.0 } else { cov / (sx * sy).sqrt() };

    // Marginals of |i - j| and i + j, indexed by value.
    let mut pd = vec![0.0; g];
    let mut ps = vec![0.0; 2 * g + 1];
    for i in 0..g {
        for j in 0..g {
            pd[(i as i64 - j as i64).unsigned_abs() as usize] += p[(i, j)];
            ps[i + j + 2] += p[(i, j)];
        }
    }
    let da: f64 = pd.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
    let dvar: f64 = pd.iter().enumerate().map(|(k, v)| (k as f64 - da).powi(2) * v).sum();
    let hxy = sum_ij(&|_, _, v| ent(v));
    let hx: f64 = px.iter().map(|&v| ent(v)).sum();
    let hy: f64 = py.iter().map(|&v| ent(v)).sum();
    let hxy1 = sum_ij(&|i, j, v| if px[i] * py[j] > 0.0 { -v * (px[i] * py[j]).log2() } else { 0.0 });
    let hxy2 = sum_ij(&|i, j, _| ent(px[i] * py[j]));
    let denom = hx.max(hy);
    let imc1 = if denom == 0.0 { 0.0 } else { (hxy - hxy1) / denom };
    let imc2 = if hxy2 - hxy <= 0.0 { 0.0 } else { (1.0 - (-2.0 * (hxy2 - hxy)).exp()).sqrt() };
    let gf = g as f64;

    [
        autocorr,
        mx,
        sum_ij(&|i, j, v| (l(i) + l(j) - mx - my).powi(4) * v),
        sum_ij(&|i, j, v| (l(i) + l(j) - mx - my).powi(3) * v),
        sum_ij(&|i, j, v| (l(i) + l(j) - mx - my).powi(2) * v),
        sum_ij(&|i, j, v| (l(i) - l(j)).powi(2) * v),
        correlation,
        da,
        pd.iter().map(|&v| ent(v)).sum(),
        dvar,
        sum_ij(&|_, _, v| v * v),
        hxy,
        imc1,
        imc2,
        sum_ij(&|i, j, v| v / (1.0 + (l(i) - l(j)).powi(2))),
        sum_ij(&|i, j, v| v / (1.0 + (l(i) - l(j)).powi(2) / (gf * gf))),
        sum_ij(&|i, j, v| v / (1.0 + (l(i) - l(j)).abs())),
        sum_ij(&|i, j, v| v / (1.0 + (l(i) - l(j)).abs() / gf)),
        sum_ij(&|i, j, v| if i != j { v / (l(i) - l(j)).powi(2) } else { 0.0 }),
        p.max(),
        ps.iter().enumerate().map(|(k, v)| k as f64 * v).sum(),
        ps.iter().map(|&v| ent(v)).sum(),
        sum_ij(&|i, _, v| (l(i) - mx).powi(2) * v),
        mcc(p, &px, &py),
    ]
}

/// Square root of the second largest eigenvalue of
/// `Q(i, j) = sum_k p(i, k) p(j, k) / (px(i) py(k))` over active levels. Q is
/// similar to `A A^T` with `A = Dx^-1/2 P Dy^-1/2`, so its eigenvalues are the
/// squared singular values of A.
fn mcc(p: &DMatrix<f64>, px: &[f64], py: &[f64]) -> f64 {
    let rows: Vec<usize> = (0..LEVELS).filter(|&i| px[i] > 0.0).collect();
    let cols: Vec<usize> = (0..LEVELS).filter(|&k| py[k] > 0.0).collect();
    if rows.len() < 2 || cols.len() < 2 {
        return 1.0;
    }
    let a = DMatrix::from_fn(rows.len(), cols.len(), |r, c| p[(rows[r], cols[c])] / (px[rows[r]] * py[cols[c]]).sqrt());
    let mut sv: Vec<f64> = a.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sv[1]
}

pub fn glcm(v: &Volume, m: &RoiMask) -> [f64; 24] {
    let feats: Vec<[f64; 24]> = cooccurrence(v, m).iter().flatten().map(glcm_one).collect();
    let mut out = [0.0; 24];
    if feats.is_empty() {
        out[19] = 1.0;
        return out;
    }
    for k in 0..24 {
        out[k] = feats.iter().map(|f| f[k]).sum::<f64>() / feats.len() as f64;
    }
    out
}

/// (level, run length) -> count, gathered by walking every line of the grid
/// parallel to `d` from its entry point.
pub fn runs(v: &Volume, m: &RoiMask, d: [i64; 3]) -> BTreeMap<(usize, usize), f64> {
    let lv = level_grid(v, m);
    let dims = v.dims();
    let mut out = BTreeMap::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if neighbor(dims, x, y, z, d, -1).is_some() {
                    continue;
                }
                let mut line = Vec::new();
                let mut step = 0;
                while let Some(i) = neighbor(dims, x, y, z, d, step) {
                    line.push(lv[i]);
                    step += 1;
                }
                let mut k = 0;
                while k < line.len() {
                    let mut e = k;
                    while e < line.len() && line[e] == line[k] {
                        e += 1;
                    }
                    if line[k] > 0 {
                        *out.entry((line[k], e - k)).or_insert(0.0) += 1.0;
                    }
                    k = e;
                }
            }
        }
    }
    out
}

pub fn glrlm_one(r: &BTreeMap<(usize, usize), f64>, voxels: f64) -> [f64; 16] {
    let nr: f64 = r.values().sum();
    if nr == 0.0 {
        return [0.0; 16];
    }
    let mean = |f: &dyn Fn(f64, f64) -> f64| r.iter().map(|(&(i, j), &c)| c * f(i as f64, j as f64)).sum::<f64>() / nr;
    let mut by_level: BTreeMap<usize, f64> = BTreeMap::new();
    let mut by_len: BTreeMap<usize, f64> = BTreeMap::new();
    for (&(i, j), &c) in r {
        *by_level.entry(i).or_default() += c;
        *by_len.entry(j).or_default() += c;
    }
    let gln = by_level.values().map(|s| s * s).sum::<f64>();
    let rln = by_len.values().map(|s| s * s).sum::<f64>();
    let mi = mean(&|i, _| i);
    let mj = mean(&|_, j| j);
    [
        mean(&|_, j| 1.0 / (j * j)),
        mean(&|_, j| j * j),
        gln / nr,
        gln / (nr * nr),
        rln / nr,
        rln / (nr * nr),
        nr / voxels,
        mean(&|i, _| (i - mi).powi(2)),
        mean(&|_, j| (j - mj).powi(2)),
        r.values().map(|&c| ent(c / nr)).sum(),
        mean(&|i, _| 1.0 / (i * i)),
        mean(&|i, _| i * i),
        mean(&|i, j| 1.0 / (i * i * j * j)),
        mean(&|i, j| i * i / (j * j)),
        mean(&|i, j| j * j / (i * i)),
        mean(&|i, j| i * i * j * j),
    ]
}

pub fn glrlm(v: &Volume, m: &RoiMask) -> [f64; 16] {
    let voxels = m.data().iter().filter(|&&b| b == 1).count() as f64;
    let mut out = [0.0; 16];
    for d in OFFSETS {
        let f = glrlm_one(&runs(v, m, d), voxels);
        for k in 0..16 {
            out[k] += f[k] / OFFSETS.len() as f64;
        }
    }
    out
}

/// `|a - b| <= tol * max(|a|, |b|)`, with an absolute floor of 1e-12 for
/// values that are zero up to rounding.
pub fn close_rel(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) || (a - b).abs() <= 1e-12
}
