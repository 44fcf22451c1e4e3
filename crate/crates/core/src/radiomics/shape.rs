use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen};

use crate::volume::RoiMask;

use super::mc_tables::TRI_TABLE;
use super::RadiomicsError;

/// Corner offsets of a marching-cubes cell.
const CORNERS: [[i64; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs of the 12 cell edges.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Taubin smoothing passes applied to the marching-cubes surface.
pub const SMOOTHING_ITERATIONS: usize = 10;
const TAUBIN_LAMBDA: f64 = 0.5;
const TAUBIN_MU: f64 = -0.53;

/// Iso-surface of a binary mask at level 0.5.
///
/// `keys` are the doubled voxel indices of the edge midpoints each vertex was
/// created on; `points` are the (possibly smoothed) positions in voxel units.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub keys: Vec<[i64; 3]>,
    pub points: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn position(&self, i: usize, spacing: [f64; 3]) -> [f64; 3] {
        let p = self.points[i];
        std::array::from_fn(|a| p[a] * spacing[a])
    }

    pub fn positions(&self, spacing: [f64; 3]) -> Vec<[f64; 3]> {
        (0..self.points.len()).map(|i| self.position(i, spacing)).collect()
    }

    /// Enclosed volume from signed tetrahedra against the origin.
    pub fn volume(&self, spacing: [f64; 3]) -> f64 {
        let p = self.positions(spacing);
        let signed: f64 = self
            .triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (p[t[0] as usize], p[t[1] as usize], p[t[2] as usize]);
                dot(a, cross(b, c))
            })
            .sum();
        (signed / 6.0).abs()
    }

    pub fn area(&self, spacing: [f64; 3]) -> f64 {
        let p = self.positions(spacing);
        self.triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (p[t[0] as usize], p[t[1] as usize], p[t[2] as usize]);
                norm(cross(sub(b, a), sub(c, a))) * 0.5
            })
            .sum()
    }

    /// Sorted vertex neighbourhoods.
    pub fn neighbours(&self) -> Vec<Vec<u32>> {
        let mut nb = vec![Vec::new(); self.points.len()];
        for t in &self.triangles {
            for k in 0..3 {
                nb[t[k] as usize].push(t[(k + 1) % 3]);
                nb[t[k] as usize].push(t[(k + 2) % 3]);
            }
        }
        for n in &mut nb {
            n.sort_unstable();
            n.dedup();
        }
        nb
    }

    /// Taubin lambda/mu smoothing; removes voxel staircase without the
    /// shrinkage of plain Laplacian smoothing.
    pub fn smoothed(mut self, iterations: usize) -> Mesh {
        let nb = self.neighbours();
        for _ in 0..iterations {
            for factor in [TAUBIN_LAMBDA, TAUBIN_MU] {
                let old = self.points.clone();
                for (i, p) in self.points.iter_mut().enumerate() {
                    let w = 1.0 / nb[i].len() as f64;
                    for a in 0..3 {
                        let avg: f64 = nb[i].iter().map(|&j| old[j as usize][a]).sum::<f64>() * w;
                        p[a] = old[i][a] + factor * (avg - old[i][a]);
                    }
                }
            }
        }
        self
    }
}

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Marching cubes over the mask's bounding box padded by one voxel, with
/// vertices on edge midpoints. No smoothing is applied.
pub fn surface_mesh(m: &RoiMask) -> Option<Mesh> {
    let (lo, hi) = m.bbox()?;
    let mut index: HashMap<[i64; 3], u32> = HashMap::new();
    let mut keys = Vec::new();
    let mut triangles = Vec::new();
    for cz in lo[2] as i64 - 1..=hi[2] as i64 {
        for cy in lo[1] as i64 - 1..=hi[1] as i64 {
            for cx in lo[0] as i64 - 1..=hi[0] as i64 {
                let base = [cx, cy, cz];
                let corner = |c: usize| [base[0] + CORNERS[c][0], base[1] + CORNERS[c][1], base[2] + CORNERS[c][2]];
                let mut case = 0usize;
                for c in 0..8 {
                    if !m.contains_signed(corner(c)) {
                        case |= 1 << c;
                    }
                }
                let row = &TRI_TABLE[case];
                for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                    let mut ids = [0u32; 3];
                    for (slot, &e) in ids.iter_mut().zip(tri) {
                        let [a, b] = EDGES[e as usize];
                        let (pa, pb) = (corner(a), corner(b));
                        let key = [pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]];
                        *slot = *index.entry(key).or_insert_with(|| {
                            keys.push(key);
                            (keys.len() - 1) as u32
                        });
                    }
                    triangles.push(ids);
                }
            }
        }
    }
    let points = keys.iter().map(|k: &[i64; 3]| k.map(|c| c as f64 * 0.5)).collect();
    Some(Mesh { keys, points, triangles })
}

fn max_distance(points: &[[f64; 3]]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max(dot(sub(*a, *b), sub(*a, *b)));
        }
    }
    best.sqrt()
}

/// Largest vertex distance among vertices created in the same plane on `axis`.
fn max_planar_distance(mesh: &Mesh, spacing: [f64; 3], axis: usize) -> f64 {
    let mut groups: HashMap<i64, Vec<[f64; 3]>> = HashMap::new();
    for (i, k) in mesh.keys.iter().enumerate() {
        groups.entry(k[axis]).or_default().push(mesh.position(i, spacing));
    }
    groups.values().map(|g| max_distance(g)).fold(0.0, f64::max)
}

/// Eigenvalues (descending) of the population covariance of voxel centers in mm.
fn principal_moments(m: &RoiMask, spacing: [f64; 3]) -> [f64; 3] {
    let pts: Vec<[f64; 3]> = m.foreground().map(|v| std::array::from_fn(|a| v[a] as f64 * spacing[a])).collect();
    let n = pts.len() as f64;
    let mean: [f64; 3] = std::array::from_fn(|a| pts.iter().map(|p| p[a]).sum::<f64>() / n);
    let mut cov: Matrix3<f64> = Matrix3::zeros();
    for p in &pts {
        let d = sub(*p, mean);
        for r in 0..3 {
            for c in 0..3 {
                cov[(r, c)] += d[r] * d[c] / n;
            }
        }
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().map(|&e: &f64| e.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

/// The 14 shape features, in canonical order.
///
/// A degenerate ROI whose principal moments are all zero (one voxel) reports
/// Elongation and Flatness as 1.
pub fn shape_features(m: &RoiMask, spacing: [f64; 3]) -> Result<[f64; 14], RadiomicsError> {
    let mesh = surface_mesh(m).ok_or(RadiomicsError::EmptyMask)?.smoothed(SMOOTHING_ITERATIONS);
    let voxel_volume = m.count() as f64 * spacing.iter().product::<f64>();
    let mesh_volume = mesh.volume(spacing);
    let area = mesh.area(spacing);
    let sphericity = std::f64::consts::PI.cbrt() * (6.0 * mesh_volume).powf(2.0 / 3.0) / area;

    let positions = mesh.positions(spacing);
    let d3 = max_distance(&positions);
    let d_slice = max_planar_distance(&mesh, spacing, 2);
    let d_column = max_planar_distance(&mesh, spacing, 1);
    let d_row = max_planar_distance(&mesh, spacing, 0);

    let [l1, l2, l3] = principal_moments(m, spacing);
    let (elongation, flatness) = if l1 > 0.0 { ((l2 / l1).sqrt(), (l3 / l1).sqrt()) } else { (1.0, 1.0) };

    Ok([
        mesh_volume,
        voxel_volume,
        area,
        area / mesh_volume,
        sphericity,
        d3,
        d_slice,
        d_column,
        d_row,
        4.0 * l1.sqrt(),
        4.0 * l2.sqrt(),
        4.0 * l3.sqrt(),
        elongation,
        flatness,
    ])
}
