//! Volume and mask grids, voxel coordinate conventions and the `RRV1` container.
//!
//! Layout of an `RRV1` file:
//!
//! ```text
//! "RRV1" | u32 LE header length | UTF-8 JSON header | raw LE payload
//! ```
//!
//! The header carries `dims`, `spacing`, `origin` and `dtype` (`"f32"` for
//! intensities, `"u8"` for masks). Voxels are stored with x varying fastest,
//! so the flat index of `(ix, iy, iz)` is `ix + nx * (iy + ny * iz)`.
//!
//! World coordinates use the voxel-center convention:
//! `origin + (index + 0.5) * spacing` on every axis.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"RRV1";

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("bad magic: expected RRV1")]
    BadMagic,
    #[error("truncated payload: header declares {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("non-finite voxel at flat index {0}")]
    NonFiniteVoxel(usize),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("voxel {voxel:?} out of bounds for dims {dims:?}")]
    OutOfBounds { voxel: [i64; 3], dims: [usize; 3] },
    #[error("dims mismatch: {0:?} vs {1:?}")]
    DimMismatch([usize; 3], [usize; 3]),
    #[error("mask voxel {index} has value {value}, expected 0 or 1")]
    InvalidMaskValue { index: usize, value: u8 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Grid shape and placement shared by a volume and its masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, VolumeError> {
        let g = Geometry { dims, spacing, origin };
        g.validate()?;
        Ok(g)
    }

    /// Unit spacing, zero origin.
    pub fn unit(dims: [usize; 3]) -> Self {
        Geometry { dims, spacing: [1.0; 3], origin: [0.0; 3] }
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(VolumeError::InvalidGeometry(format!("zero dimension in {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VolumeError::InvalidGeometry(format!("non-positive spacing {:?}", self.spacing)));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(VolumeError::InvalidGeometry(format!("non-finite origin {:?}", self.origin)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn flat(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    #[inline]
    pub fn unflat(&self, i: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub fn contains(&self, voxel: [usize; 3]) -> bool {
        voxel.iter().zip(self.dims.iter()).all(|(v, d)| v < d)
    }

    /// World position (mm) of a voxel center.
    pub fn world(&self, voxel: [usize; 3]) -> Result<[f64; 3], VolumeError> {
        if !self.contains(voxel) {
            return Err(VolumeError::OutOfBounds { voxel: voxel.map(|v| v as i64), dims: self.dims });
        }
        Ok(self.world_unchecked(voxel))
    }

    #[inline]
    pub fn world_unchecked(&self, voxel: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + (voxel[a] as f64 + 0.5) * self.spacing[a])
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Geometry of a sub-block starting at `offset`; the origin moves with it.
    pub fn sub(&self, offset: [usize; 3], dims: [usize; 3]) -> Result<Geometry, VolumeError> {
        for a in 0..3 {
            if dims[a] == 0 || offset[a] + dims[a] > self.dims[a] {
                return Err(VolumeError::OutOfBounds {
                    voxel: std::array::from_fn(|b| (offset[b] + dims[b]) as i64),
                    dims: self.dims,
                });
            }
        }
        Ok(Geometry {
            dims,
            spacing: self.spacing,
            origin: std::array::from_fn(|a| self.origin[a] + offset[a] as f64 * self.spacing[a]),
        })
    }
}

/// A 3D scalar intensity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geom: Geometry,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(geom: Geometry, data: Vec<f32>) -> Result<Self, VolumeError> {
        geom.validate()?;
        if data.len() != geom.len() {
            return Err(VolumeError::TruncatedPayload { expected: geom.len(), actual: data.len() });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFiniteVoxel(i));
        }
        Ok(Volume { geom, data })
    }

    pub fn zeros(geom: Geometry) -> Self {
        Volume { data: vec![0.0; geom.len()], geom }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geom.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f32 {
        self.data[self.geom.flat(ix, iy, iz)]
    }

    pub fn crop(&self, offset: [usize; 3], dims: [usize; 3]) -> Result<Volume, VolumeError> {
        let geom = self.geom.sub(offset, dims)?;
        Ok(Volume { data: copy_block(&self.data, &self.geom, offset, dims), geom })
    }

    /// Applies `f` voxelwise; fails if the result is not finite.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Volume, VolumeError> {
        Volume::new(self.geom, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Binary occupancy grid paired with a [`Volume`].
#[derive(Debug, Clone, PartialEq)]
pub struct RoiMask {
    geom: Geometry,
    data: Vec<u8>,
}

impl RoiMask {
    pub fn new(geom: Geometry, data: Vec<u8>) -> Result<Self, VolumeError> {
        geom.validate()?;
        if data.len() != geom.len() {
            return Err(VolumeError::TruncatedPayload { expected: geom.len(), actual: data.len() });
        }
        if let Some(index) = data.iter().position(|&v| v > 1) {
            return Err(VolumeError::InvalidMaskValue { index, value: data[index] });
        }
        Ok(RoiMask { geom, data })
    }

    pub fn from_fn(geom: Geometry, f: impl Fn([usize; 3]) -> bool) -> Self {
        let data = (0..geom.len()).map(|i| f(geom.unflat(i)) as u8).collect();
        RoiMask { geom, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn contains(&self, ix: usize, iy: usize, iz: usize) -> bool {
        self.data[self.geom.flat(ix, iy, iz)] != 0
    }

    /// Like [`RoiMask::contains`] but false outside the grid.
    #[inline]
    pub fn contains_signed(&self, v: [i64; 3]) -> bool {
        if v.iter().zip(self.geom.dims.iter()).any(|(&c, &d)| c < 0 || c >= d as i64) {
            return false;
        }
        self.contains(v[0] as usize, v[1] as usize, v[2] as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn foreground(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| self.geom.unflat(i))
    }

    /// Inclusive bounding box `(min, max)` of the foreground, if any.
    pub fn bbox(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut it = self.foreground();
        let first = it.next()?;
        let (mut lo, mut hi) = (first, first);
        for v in it {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        Some((lo, hi))
    }

    /// Mean voxel index of the foreground.
    pub fn centroid_index(&self) -> Option<[f64; 3]> {
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for v in self.foreground() {
            for a in 0..3 {
                sum[a] += v[a] as f64;
            }
            n += 1;
        }
        (n > 0).then(|| sum.map(|s| s / n as f64))
    }

    pub fn crop(&self, offset: [usize; 3], dims: [usize; 3]) -> Result<RoiMask, VolumeError> {
        let geom = self.geom.sub(offset, dims)?;
        Ok(RoiMask { data: copy_block(&self.data, &self.geom, offset, dims), geom })
    }

    /// Number of 6-connected foreground components.
    pub fn components(&self) -> usize {
        let mut seen = vec![false; self.data.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.data.len() {
            if self.data[start] == 0 || seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let v = self.geom.unflat(i).map(|c| c as i64);
                for (a, d) in [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)] {
                    let mut n = v;
                    n[a] += d;
                    if self.contains_signed(n) {
                        let j = self.geom.flat(n[0] as usize, n[1] as usize, n[2] as usize);
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        count
    }
}

fn copy_block<T: Copy>(src: &[T], geom: &Geometry, offset: [usize; 3], dims: [usize; 3]) -> Vec<T> {
    let mut out = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            let start = geom.flat(offset[0], offset[1] + y, offset[2] + z);
            out.extend_from_slice(&src[start..start + dims[0]]);
        }
    }
    out
}

/// A single voxel prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointPrompt {
    pub voxel: [usize; 3],
}

impl PointPrompt {
    pub fn new(ix: usize, iy: usize, iz: usize) -> Self {
        PointPrompt { voxel: [ix, iy, iz] }
    }
}

/// World position (mm) of the prompted voxel center.
pub fn world_coords(v: &Volume, p: PointPrompt) -> Result<[f64; 3], VolumeError> {
    v.geometry().world(p.voxel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: Dtype,
}

fn encode(geom: &Geometry, dtype: Dtype, payload: &[u8]) -> Vec<u8> {
    let header = Header { dims: geom.dims, spacing: geom.spacing, origin: geom.origin, dtype };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    out
}

fn decode(bytes: &[u8]) -> Result<(Geometry, Dtype, &[u8]), VolumeError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(VolumeError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(VolumeError::BadHeader("missing header length".into()));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() < hlen {
        return Err(VolumeError::BadHeader(format!("header length {hlen} exceeds file")));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| VolumeError::BadHeader(e.to_string()))?;
    let geom = Geometry::new(header.dims, header.spacing, header.origin)?;
    let payload = &body[hlen..];
    let expected = geom.len() * header.dtype.width();
    if payload.len() != expected {
        return Err(VolumeError::TruncatedPayload { expected, actual: payload.len() });
    }
    Ok((geom, header.dtype, payload))
}

impl Volume {
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        encode(&self.geom, Dtype::F32, &payload)
    }

    /// Decodes either dtype; `u8` payloads are widened to intensities.
    pub fn from_bytes(bytes: &[u8]) -> Result<Volume, VolumeError> {
        let (geom, dtype, payload) = decode(bytes)?;
        let data = match dtype {
            Dtype::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            Dtype::U8 => payload.iter().map(|&b| b as f32).collect(),
        };
        Volume::new(geom, data)
    }
}

impl RoiMask {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(&self.geom, Dtype::U8, &self.data)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<RoiMask, VolumeError> {
        let (geom, dtype, payload) = decode(bytes)?;
        if dtype != Dtype::U8 {
            return Err(VolumeError::BadHeader("mask payload must be u8".into()));
        }
        RoiMask::new(geom, payload.to_vec())
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume, VolumeError> {
    Volume::from_bytes(&fs::read(path)?)
}

pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    fs::write(path, v.to_bytes())?;
    Ok(())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<RoiMask, VolumeError> {
    RoiMask::from_bytes(&fs::read(path)?)
}

pub fn write_mask(m: &RoiMask, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    fs::write(path, m.to_bytes())?;
    Ok(())
}
