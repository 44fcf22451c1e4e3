use crate::volume::{RoiMask, Volume};

use super::discretize::{bin, GRAY_LEVELS};
use super::{check_inputs, plog2, RadiomicsError};

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// The 18 intensity-histogram features, in canonical order.
///
/// Entropy and Uniformity use the 32-level discretized histogram. Kurtosis is
/// not excess-corrected. A constant ROI has Skewness and Kurtosis 0.
pub fn firstorder_features(v: &Volume, m: &RoiMask) -> Result<[f64; 18], RadiomicsError> {
    check_inputs(v, m)?;
    let mut x: Vec<f64> = m.foreground().map(|p| v.get(p[0], p[1], p[2]) as f64).collect();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let min = x[0];
    let max = x[x.len() - 1];

    let energy: f64 = x.iter().map(|v| v * v).sum();
    let total_energy = energy * m.geometry().voxel_volume();
    let mean = x.iter().sum::<f64>() / n;

    let mut hist = [0usize; GRAY_LEVELS];
    for &xi in &x {
        hist[bin(xi, min, max) as usize - 1] += 1;
    }
    let entropy: f64 = hist.iter().map(|&c| plog2(c as f64 / n)).sum();
    let uniformity: f64 = hist.iter().map(|&c| (c as f64 / n).powi(2)).sum();

    let p10 = percentile(&x, 0.10);
    let p90 = percentile(&x, 0.90);
    let median = percentile(&x, 0.5);
    let iqr = percentile(&x, 0.75) - percentile(&x, 0.25);

    let mad = x.iter().map(|v| (v - mean).abs()).sum::<f64>() / n;
    let robust: Vec<f64> = x.iter().copied().filter(|&v| v >= p10 && v <= p90).collect();
    let rmean = robust.iter().sum::<f64>() / robust.len() as f64;
    let rmad = robust.iter().map(|v| (v - rmean).abs()).sum::<f64>() / robust.len() as f64;

    let rms = (energy / n).sqrt();
    let (variance, skewness, kurtosis) = if max > min {
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &xi in &x {
            let d = xi - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
        (m2, m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (0.0, 0.0, 0.0)
    };

    Ok([
        energy,
        total_energy,
        entropy,
        min,
        p10,
        p90,
        max,
        mean,
        median,
        iqr,
        max - min,
        mad,
        rmad,
        rms,
        skewness,
        kurtosis,
        variance,
        uniformity,
    ])
}
