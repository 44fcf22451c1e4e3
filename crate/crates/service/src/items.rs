use serde::{Deserialize, Serialize};
use tumor_retrieval::ape::ApePoint;
use tumor_retrieval::phantom::TumorClass;
use tumor_retrieval::radiomics::feature_names;
use tumor_retrieval::volume::Volume;

use crate::error::ApiError;
use crate::query::{record_volume, unknown_id, Snapshot};

/// One 8-bit plane through the tumor center, min-max scaled over the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    /// Axis normal to the plane: "x", "y", or "z".
    pub axis: String,
    pub index: usize,
    /// `[width, height]`; pixels are row-major.
    pub dims: [usize; 2],
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRadiomics {
    pub names: Vec<String>,
    pub raw: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub id: String,
    pub region: String,
    pub region_id: u8,
    pub class: Option<TumorClass>,
    pub radiomics: ItemRadiomics,
    pub centroid_ape: ApePoint,
    pub center_voxel: [usize; 3],
    pub slices: Vec<Slice>,
}

/// Scales `values` to 0..=255 by their own min and max; a constant plane is all zeros.
pub fn to_gray(values: &[f32]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    let span = (hi - lo) as f64;
    values.iter().map(|&v| (((v - lo) as f64 / span) * 255.0).round() as u8).collect()
}

/// The three orthogonal planes through `c`.
pub fn orthogonal_slices(v: &Volume, c: [usize; 3]) -> Vec<Slice> {
    let [nx, ny, nz] = v.dims();
    let plane = |axis: &str, index: usize, w: usize, h: usize, at: &dyn Fn(usize, usize) -> f32| {
        let vals: Vec<f32> = (0..h).flat_map(|r| (0..w).map(move |col| (r, col))).map(|(r, col)| at(col, r)).collect();
        Slice { axis: axis.into(), index, dims: [w, h], pixels: to_gray(&vals) }
    };
    vec![
        plane("x", c[0], ny, nz, &|a, b| v.get(c[0], a, b)),
        plane("y", c[1], nx, nz, &|a, b| v.get(a, c[1], b)),
        plane("z", c[2], nx, ny, &|a, b| v.get(a, b, c[2])),
    ]
}

pub fn item_view(snap: &Snapshot, id: &str) -> Result<ItemView, ApiError> {
    let rec = snap.index.get(id).ok_or_else(|| unknown_id(id))?;
    let z = rec.radiomics();
    let raw = snap.index.stats().destandardize(&z);
    let slices = match record_volume(snap, rec) {
        Ok(v) => orthogonal_slices(&v, rec.meta.center_voxel),
        Err(e) => {
            log::warn!("{id}: {e}");
            Vec::new()
        }
    };
    Ok(ItemView {
        id: rec.id.clone(),
        region: rec.meta.region.name.clone(),
        region_id: rec.meta.region.id,
        class: rec.meta.class,
        radiomics: ItemRadiomics {
            names: feature_names().into_iter().map(String::from).collect(),
            raw: raw.values,
            z: z.values,
        },
        centroid_ape: rec.meta.centroid_ape,
        center_voxel: rec.meta.center_voxel,
        slices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_scaling_spans_full_range() {
        assert_eq!(to_gray(&[1.0, 2.0, 3.0]), vec![0, 128, 255]);
        assert_eq!(to_gray(&[4.0; 3]), vec![0; 3]);
    }
}
