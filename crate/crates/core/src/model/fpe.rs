use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Random Fourier features of points in [0, 1]³:
/// `[sin(2π B p); cos(2π B p)]` with a fixed Gaussian `B` (σ = 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fpe {
    bands: Vec<[f64; 3]>,
}

impl Fpe {
    pub fn new(bands: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bands = (0..bands).map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng))).collect();
        Fpe { bands }
    }

    pub fn dim(&self) -> usize {
        2 * self.bands.len()
    }

    pub fn encode(&self, p: [f64; 3]) -> Vec<f64> {
        let phase: Vec<f64> = self.bands.iter().map(|b| 2.0 * PI * (b[0] * p[0] + b[1] * p[1] + b[2] * p[2])).collect();
        phase.iter().map(|t| t.sin()).chain(phase.iter().map(|t| t.cos())).collect()
    }

    /// Encodings of the cell centers of an `n³` grid over the unit cube, rows
    /// in x-fastest order.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * n * n * self.dim());
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let c = |i: usize| (i as f64 + 0.5) / n as f64;
                    out.extend(self.encode([c(x), c(y), c(z)]));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_lie_on_unit_circle() {
        let f = Fpe::new(8, 3);
        let e = f.encode([0.3, 0.9, 0.1]);
        assert_eq!(e.len(), 16);
        for k in 0..8 {
            assert!((e[k].powi(2) + e[k + 8].powi(2) - 1.0).abs() < 1e-12);
        }
        assert_eq!(e, f.encode([0.3, 0.9, 0.1]));
    }

    #[test]
    fn distance_grows_with_small_offsets() {
        let f = Fpe::new(8, 1);
        let base = f.encode([0.5; 3]);
        let dist = |d: f64| {
            let e = f.encode([0.5 + d, 0.5, 0.5 - d]);
            e.iter().zip(&base).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let sweep: Vec<f64> = [1e-4, 1e-3, 5e-3, 1e-2, 2e-2].iter().map(|&d| dist(d)).collect();
        assert!(sweep.windows(2).all(|w| w[0] < w[1]), "{sweep:?}");
    }

    #[test]
    fn grid_rows_match_points() {
        let f = Fpe::new(4, 2);
        let g = f.grid(2);
        assert_eq!(g.len(), 8 * 8);
        assert_eq!(&g[8 * 5..8 * 6], f.encode([0.75, 0.25, 0.75]).as_slice());
    }
}
