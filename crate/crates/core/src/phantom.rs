//! Deterministic synthetic tumor phantoms in a 64³ octant atlas.
//!
//! A phantom is a rotated superellipsoid tumor embedded in a smooth quadratic
//! background. Inside the tumor the intensity carries an offset plus a
//! correlated Gaussian texture whose strength and correlation length depend on
//! the tumor class. The background is quadratic with distinct curvature per
//! axis, so its local level and slope identify position in the atlas.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ape::AtlasBounds;
use crate::volume::{self, Geometry, PointPrompt, RoiMask, Volume, VolumeError};

pub const MAX_PROMPTS: usize = 10;
const TUMOR_OFFSET: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("tumor does not fit inside the atlas: {0}")]
    TumorOutOfBounds(String),
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("mask has no foreground voxels")]
    EmptyMask,
    #[error("requested {k} prompts but mask has {available} foreground voxels")]
    KTooLarge { k: usize, available: usize },
    #[error("prompt count {0} outside 1..=10")]
    InvalidPromptCount(usize),
    #[error("dataset size must be at least 1")]
    EmptyDataset,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TumorClass {
    A,
    B,
}

impl TumorClass {
    pub fn index(self) -> usize {
        match self {
            TumorClass::A => 0,
            TumorClass::B => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(TumorClass::A),
            1 => Some(TumorClass::B),
            _ => None,
        }
    }
}

/// Atlas octant; bit `a` of `id` is set when the tumor sits on the positive
/// side of the atlas midpoint along axis `a`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegionLabel {
    pub id: u8,
    pub name: String,
}

impl RegionLabel {
    pub fn from_id(id: u8) -> Self {
        let sign = |bit: u8| if id & bit != 0 { '+' } else { '-' };
        RegionLabel { id, name: format!("x{}y{}z{}", sign(1), sign(2), sign(4)) }
    }

    pub fn of_point(p: [f64; 3], atlas: &AtlasBounds) -> Self {
        let mid = atlas.midpoint();
        let id = (0..3).fold(0u8, |acc, a| acc | (((p[a] > mid[a]) as u8) << a));
        RegionLabel::from_id(id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub atlas_dims: [usize; 3],
    pub tumor_class: TumorClass,
    /// Semi-axes in mm, each in [3, 12].
    pub semiaxes: [f64; 3],
    /// Superellipsoid exponent in [1.5, 4]; 2 gives an ellipsoid.
    pub exponent: f64,
    /// Euler angles (roll, pitch, yaw) in radians.
    pub rotation: [f64; 3],
    /// Tumor center in mm.
    pub center: [f64; 3],
    pub texture_sigma: f64,
    /// Correlation length of the texture in mm.
    pub texture_corr_len: f64,
}

impl PhantomSpec {
    /// A sphere of radius `r` at the atlas midpoint with faint texture.
    pub fn sphere(r: f64, seed: u64) -> Self {
        PhantomSpec {
            seed,
            atlas_dims: [64; 3],
            tumor_class: TumorClass::A,
            semiaxes: [r; 3],
            exponent: 2.0,
            rotation: [0.0; 3],
            center: [32.0; 3],
            texture_sigma: 0.05,
            texture_corr_len: 1.0,
        }
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::unit(self.atlas_dims)
    }

    /// Radius of a ball guaranteed to contain the tumor at any rotation.
    pub fn bounding_radius(&self) -> f64 {
        let [a, b, c] = self.semiaxes;
        if self.exponent <= 2.0 {
            a.max(b).max(c)
        } else {
            (a * a + b * b + c * c).sqrt()
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.atlas_dims.iter().any(|&d| d < 4) {
            return Err(PhantomError::InvalidSpec(format!("atlas dims {:?}", self.atlas_dims)));
        }
        if self.semiaxes.iter().any(|s| !(3.0..=12.0).contains(s)) {
            return Err(PhantomError::InvalidSpec(format!("semiaxes {:?} outside [3, 12]", self.semiaxes)));
        }
        if !(1.5..=4.0).contains(&self.exponent) {
            return Err(PhantomError::InvalidSpec(format!("exponent {} outside [1.5, 4]", self.exponent)));
        }
        if !(self.texture_sigma >= 0.0 && self.texture_corr_len >= 0.0) {
            return Err(PhantomError::InvalidSpec("negative texture parameters".into()));
        }
        let atlas = AtlasBounds::of(&self.geometry());
        let r = self.bounding_radius();
        for a in 0..3 {
            if self.center[a] - r < atlas.min[a] || self.center[a] + r > atlas.max[a] {
                return Err(PhantomError::TumorOutOfBounds(format!(
                    "center {:?} with bounding radius {r:.2}",
                    self.center
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub spec: PhantomSpec,
    pub volume: Volume,
    pub mask: RoiMask,
    pub region: RegionLabel,
    pub class: TumorClass,
}

/// Smooth background level at normalized atlas coordinates `u` in [-1, 1]³.
pub fn background(u: [f64; 3]) -> f64 {
    0.2 + 0.10 * (u[0] + 1.0).powi(2) + 0.07 * (u[1] + 1.0).powi(2) + 0.05 * (u[2] + 1.0).powi(2)
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    spec.validate()?;
    let geom = spec.geometry();
    let atlas = AtlasBounds::of(&geom);
    let rot = Rotation3::from_euler_angles(spec.rotation[0], spec.rotation[1], spec.rotation[2]);
    let inv = rot.inverse();
    let center = Vector3::from(spec.center);
    let r = spec.bounding_radius();

    // Voxel index range that can intersect the bounding ball.
    let lo: [usize; 3] = std::array::from_fn(|a| ((spec.center[a] - r - 1.0).floor().max(0.0)) as usize);
    let hi: [usize; 3] =
        std::array::from_fn(|a| ((spec.center[a] + r + 1.0).ceil() as usize).min(geom.dims[a] - 1));

    let mut mask = vec![0u8; geom.len()];
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let w = Vector3::from(geom.world_unchecked([x, y, z]));
                let local = inv * (w - center);
                let f: f64 = (0..3).map(|a| (local[a] / spec.semiaxes[a]).abs().powf(spec.exponent)).sum();
                if f <= 1.0 {
                    mask[geom.flat(x, y, z)] = 1;
                }
            }
        }
    }
    let mask = RoiMask::new(geom, mask)?;
    let (blo, bhi) = mask.bbox().ok_or(PhantomError::EmptyMask)?;

    let texture = correlated_texture(spec, blo, bhi);
    let bdims: [usize; 3] = std::array::from_fn(|a| bhi[a] - blo[a] + 1);
    let mut data = Vec::with_capacity(geom.len());
    for i in 0..geom.len() {
        let v = geom.unflat(i);
        let mut value = background(atlas.normalize(geom.world_unchecked(v)));
        if mask.data()[i] != 0 {
            let t = (v[0] - blo[0]) + bdims[0] * ((v[1] - blo[1]) + bdims[1] * (v[2] - blo[2]));
            value += TUMOR_OFFSET + spec.texture_sigma * texture[t];
        }
        data.push(value as f32);
    }
    let volume = Volume::new(geom, data)?;

    let c = mask.centroid_index().expect("non-empty mask");
    let centroid = std::array::from_fn(|a| geom.origin[a] + (c[a] + 0.5) * geom.spacing[a]);
    Ok(Phantom {
        region: RegionLabel::of_point(centroid, &atlas),
        class: spec.tumor_class,
        spec: spec.clone(),
        volume,
        mask,
    })
}

/// Unit-variance white noise smoothed by a separable Gaussian over the tumor
/// bounding box, returned on that box.
fn correlated_texture(spec: &PhantomSpec, lo: [usize; 3], hi: [usize; 3]) -> Vec<f64> {
    let sigma = spec.texture_corr_len;
    let radius = if sigma > 0.25 { (3.0 * sigma).ceil() as usize } else { 0 };
    let dims: [usize; 3] = std::array::from_fn(|a| hi[a] - lo[a] + 1 + 2 * radius);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut field: Vec<f64> = (0..dims.iter().product::<usize>()).map(|_| rng.sample(StandardNormal)).collect();

    if radius > 0 {
        let kernel: Vec<f64> = {
            let k: Vec<f64> = (0..=2 * radius)
                .map(|i| {
                    let d = i as f64 - radius as f64;
                    (-0.5 * d * d / (sigma * sigma)).exp()
                })
                .collect();
            let s: f64 = k.iter().sum();
            k.into_iter().map(|v| v / s).collect()
        };
        for axis in 0..3 {
            field = convolve_axis(&field, dims, axis, &kernel);
        }
    }

    // Keep the interior (the margin absorbs the smoothing boundary).
    let out_dims: [usize; 3] = std::array::from_fn(|a| hi[a] - lo[a] + 1);
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for z in 0..out_dims[2] {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[0] {
                out.push(field[(x + radius) + dims[0] * ((y + radius) + dims[1] * (z + radius))]);
            }
        }
    }
    let n = out.len() as f64;
    let mean = out.iter().sum::<f64>() / n;
    let std = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std > 0.0 {
        out.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
    out
}

fn convolve_axis(field: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let n = dims[axis] as i64;
    let mut out = vec![0.0; field.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let pos = ((i / stride) % dims[axis]) as i64;
        let mut acc = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            // Clamp at the border.
            let p = (pos + k as i64 - r).clamp(0, n - 1);
            acc += w * field[(i as i64 + (p - pos) * stride as i64) as usize];
        }
        *o = acc;
    }
    out
}

/// SplitMix64 mix of a base seed with a stream index.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Minimum distance (mm) between a tumor center and each octant boundary plane.
pub const REGION_GAP_MM: f64 = 4.0;

/// Draws the spec of phantom `index` in a dataset.
///
/// Ranges: semi-axes U[3, 8] mm, exponent U[1.5, 4], Euler angles U[0, 2π),
/// center offset from the midpoint U[4, 32 - r - 1] mm per axis on the side
/// given by the octant. Class alternates A/B with the index; the octant cycles
/// every two phantoms so any 16 consecutive phantoms cover all octants with
/// both classes. Class A: texture sigma U[0.03, 0.06], correlation length
/// U[0.6, 1.2] mm. Class B: sigma U[0.09, 0.15], length U[1.5, 2.5] mm.
pub fn dataset_spec(seed: u64, index: usize) -> PhantomSpec {
    let stream = derive_seed(seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let class = if index % 2 == 0 { TumorClass::A } else { TumorClass::B };
    let octant = (index / 2) % 8;
    let semiaxes = [0; 3].map(|_| rng.random_range(3.0..8.0));
    let exponent = rng.random_range(1.5..4.0);
    let rotation = [0; 3].map(|_| rng.random_range(0.0..2.0 * PI));
    let mut spec = PhantomSpec {
        seed: rng.random(),
        atlas_dims: [64; 3],
        tumor_class: class,
        semiaxes,
        exponent,
        rotation,
        center: [0.0; 3],
        texture_sigma: 0.0,
        texture_corr_len: 0.0,
    };
    let half = 32.0;
    let max_offset = half - spec.bounding_radius() - 1.0;
    for a in 0..3 {
        let off = rng.random_range(REGION_GAP_MM..max_offset);
        spec.center[a] = if octant & (1 << a) != 0 { half + off } else { half - off };
    }
    let (sigma, corr) = match class {
        TumorClass::A => (0.03..0.06, 0.6..1.2),
        TumorClass::B => (0.09..0.15, 1.5..2.5),
    };
    spec.texture_sigma = rng.random_range(sigma);
    spec.texture_corr_len = rng.random_range(corr);
    spec
}

pub fn sample_dataset(n: usize, seed: u64) -> Result<Vec<Phantom>, PhantomError> {
    if n == 0 {
        return Err(PhantomError::EmptyDataset);
    }
    (0..n).into_par_iter().map(|i| generate_phantom(&dataset_spec(seed, i))).collect()
}

/// `k` distinct foreground voxels drawn uniformly.
pub fn sample_point_prompts(mask: &RoiMask, k: usize, seed: u64) -> Result<Vec<PointPrompt>, PhantomError> {
    if !(1..=MAX_PROMPTS).contains(&k) {
        return Err(PhantomError::InvalidPromptCount(k));
    }
    let fg: Vec<[usize; 3]> = mask.foreground().collect();
    if fg.is_empty() {
        return Err(PhantomError::EmptyMask);
    }
    if k > fg.len() {
        return Err(PhantomError::KTooLarge { k, available: fg.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, fg.len(), k).into_iter().map(|i| PointPrompt { voxel: fg[i] }).collect())
}

/// Foreground voxel nearest the mask centroid (ties: lowest flat index).
pub fn center_prompt(mask: &RoiMask) -> Result<PointPrompt, PhantomError> {
    let c = mask.centroid_index().ok_or(PhantomError::EmptyMask)?;
    let s = mask.geometry().spacing;
    let mut best: Option<([usize; 3], f64)> = None;
    for v in mask.foreground() {
        let d: f64 = (0..3).map(|a| ((v[a] as f64 - c[a]) * s[a]).powi(2)).sum();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((v, d));
        }
    }
    Ok(PointPrompt { voxel: best.unwrap().0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub volume_path: String,
    pub mask_path: String,
    pub region_id: u8,
    pub class: TumorClass,
}

pub const MANIFEST: &str = "manifest.json";

pub fn phantom_id(seed: u64, index: usize) -> String {
    format!("s{seed}-{index:04}")
}

/// Writes `RRV1` volume/mask pairs plus `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, items: &[(String, Phantom)]) -> Result<Vec<ManifestEntry>, PhantomError> {
    fs::create_dir_all(dir)?;
    let mut manifest = Vec::with_capacity(items.len());
    for (id, p) in items {
        let volume_path = format!("{id}_vol.rrv");
        let mask_path = format!("{id}_mask.rrv");
        volume::write_volume(&p.volume, dir.join(&volume_path))?;
        volume::write_mask(&p.mask, dir.join(&mask_path))?;
        manifest.push(ManifestEntry {
            id: id.clone(),
            volume_path,
            mask_path,
            region_id: p.region.id,
            class: p.class,
        });
    }
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| PhantomError::Manifest(e.to_string()))?;
    fs::write(dir.join(MANIFEST), json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, PhantomError> {
    let bytes = fs::read(dir.join(MANIFEST))?;
    serde_json::from_slice(&bytes).map_err(|e| PhantomError::Manifest(e.to_string()))
}

/// Resolves a manifest-relative path.
pub fn resolve(dir: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_volume_matches_ball() {
        let p = generate_phantom(&PhantomSpec::sphere(6.0, 3)).unwrap();
        let expected = 4.0 / 3.0 * PI * 216.0;
        let n = p.mask.count() as f64;
        assert!((n - expected).abs() / expected < 0.05, "{n} vs {expected}");
        assert_eq!(p.mask.components(), 1);
    }

    #[test]
    fn octant_of_positive_center_is_seven() {
        let mut spec = PhantomSpec::sphere(4.0, 1);
        spec.center = [45.0, 40.0, 50.0];
        assert_eq!(generate_phantom(&spec).unwrap().region.id, 7);
        spec.center = [45.0, 20.0, 50.0];
        let r = generate_phantom(&spec).unwrap().region;
        assert_eq!(r.id, 5);
        assert_eq!(r.name, "x+y-z+");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = dataset_spec(42, 3);
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a.volume.to_bytes(), b.volume.to_bytes());
        assert_eq!(a.mask.to_bytes(), b.mask.to_bytes());
    }

    #[test]
    fn out_of_bounds_and_bad_specs_are_rejected() {
        let mut spec = PhantomSpec::sphere(6.0, 1);
        spec.center = [3.0, 32.0, 32.0];
        assert!(matches!(generate_phantom(&spec), Err(PhantomError::TumorOutOfBounds(_))));
        let mut spec = PhantomSpec::sphere(6.0, 1);
        spec.semiaxes[1] = 20.0;
        assert!(matches!(generate_phantom(&spec), Err(PhantomError::InvalidSpec(_))));
    }

    #[test]
    fn balanced_classes_and_octants() {
        let ds = sample_dataset(16, 5).unwrap();
        let a = ds.iter().filter(|p| p.class == TumorClass::A).count();
        assert_eq!(a, 8);
        let mut seen = [false; 8];
        for p in &ds {
            seen[p.region.id as usize] = true;
            assert_eq!(p.mask.components(), 1);
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn dataset_is_reproducible() {
        let a = sample_dataset(4, 9).unwrap();
        let b = sample_dataset(4, 9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.volume, y.volume);
            assert_eq!(x.mask, y.mask);
            assert_eq!(x.spec, y.spec);
        }
        let c = sample_dataset(4, 10).unwrap();
        assert_ne!(a[0].volume, c[0].volume);
    }

    #[test]
    fn single_voxel_prompt() {
        let m = RoiMask::from_fn(Geometry::unit([5, 5, 5]), |v| v == [2, 3, 1]);
        assert_eq!(sample_point_prompts(&m, 1, 0).unwrap(), vec![PointPrompt::new(2, 3, 1)]);
        assert_eq!(center_prompt(&m).unwrap(), PointPrompt::new(2, 3, 1));
        assert!(matches!(sample_point_prompts(&m, 2, 0), Err(PhantomError::KTooLarge { .. })));
        assert!(matches!(sample_point_prompts(&m, 11, 0), Err(PhantomError::InvalidPromptCount(11))));
        let empty = RoiMask::from_fn(Geometry::unit([2, 2, 2]), |_| false);
        assert!(matches!(center_prompt(&empty), Err(PhantomError::EmptyMask)));
    }

    #[test]
    fn ball_center_prompt_is_ball_center() {
        let g = Geometry::unit([21, 21, 21]);
        let m = RoiMask::from_fn(g, |v| {
            v.iter().map(|&c| (c as f64 - 10.0).powi(2)).sum::<f64>() <= 36.0
        });
        assert_eq!(center_prompt(&m).unwrap(), PointPrompt::new(10, 10, 10));
    }

    #[test]
    fn random_prompts_are_distinct_members() {
        let g = Geometry::unit([10, 10, 10]);
        let m = RoiMask::from_fn(g, |v| v[2] == 4);
        assert_eq!(m.count(), 100);
        for seed in 0..50 {
            let ps = sample_point_prompts(&m, 5, seed).unwrap();
            assert_eq!(ps.len(), 5);
            let mut sorted = ps.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), 5);
            assert!(ps.iter().all(|p| m.contains(p.voxel[0], p.voxel[1], p.voxel[2])));
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let items: Vec<_> = sample_dataset(2, 1)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, p)| (phantom_id(1, i), p))
            .collect();
        let written = write_dataset(dir.path(), &items).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), written);
        let v = volume::read_volume(resolve(dir.path(), &written[1].volume_path)).unwrap();
        assert_eq!(v, items[1].1.volume);
    }
}
