//! Tumors with their volumes, labels, and radiomics, ready for training,
//! indexing, and evaluation.

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::ape::AtlasBounds;
use crate::phantom::{phantom_id, read_manifest, resolve, Phantom, PhantomError, RegionLabel, TumorClass};
use crate::radiomics::{extract_all, feature_names, standardize, FeatureStats, RadiomicsError, RadiomicsVector};
use crate::volume::{read_mask, read_volume, RoiMask, Volume, VolumeError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{id}: {source}")]
    Radiomics { id: String, source: RadiomicsError },
    #[error("dataset is empty")]
    Empty,
}

#[derive(Debug, Clone)]
pub struct TumorItem {
    pub id: String,
    pub volume: Volume,
    pub mask: RoiMask,
    pub region: RegionLabel,
    pub class: Option<TumorClass>,
    pub atlas: AtlasBounds,
    pub raw_radiomics: RadiomicsVector,
    /// `raw_radiomics` z-scored with the dataset's stats.
    pub radiomics: RadiomicsVector,
    pub volume_path: Option<String>,
    pub mask_path: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<TumorItem>,
    pub stats: FeatureStats,
}

impl Dataset {
    /// Extracts radiomics for every phantom and standardizes with `stats`, or
    /// with stats fitted on these phantoms when `stats` is `None`.
    pub fn from_phantoms(phantoms: Vec<Phantom>, seed: u64, stats: Option<&FeatureStats>) -> Result<Self, DatasetError> {
        let ids = (0..phantoms.len()).map(|i| phantom_id(seed, i)).collect();
        Self::from_parts(
            phantoms.into_iter().map(|p| (p.volume, p.mask, p.region, Some(p.class))).collect(),
            ids,
            Vec::new(),
            stats,
        )
    }

    fn from_parts(
        parts: Vec<(Volume, RoiMask, RegionLabel, Option<TumorClass>)>,
        ids: Vec<String>,
        paths: Vec<Option<(String, String)>>,
        stats: Option<&FeatureStats>,
    ) -> Result<Self, DatasetError> {
        if parts.is_empty() {
            return Err(DatasetError::Empty);
        }
        let raw: Vec<RadiomicsVector> = parts
            .par_iter()
            .zip(&ids)
            .map(|((v, m, _, _), id)| extract_all(v, m).map_err(|source| DatasetError::Radiomics { id: id.clone(), source }))
            .collect::<Result<_, _>>()?;
        let stats = stats.cloned().unwrap_or_else(|| FeatureStats::fit(&raw));
        let items = parts
            .into_iter()
            .zip(ids)
            .zip(raw)
            .enumerate()
            .map(|(i, (((volume, mask, region, class), id), raw))| {
                let atlas = AtlasBounds::of(volume.geometry());
                let (volume_path, mask_path) = match paths.get(i).cloned().flatten() {
                    Some((v, m)) => (Some(v), Some(m)),
                    None => (None, None),
                };
                TumorItem {
                    radiomics: standardize(&raw, &stats),
                    raw_radiomics: raw,
                    id,
                    volume,
                    mask,
                    region,
                    class,
                    atlas,
                    volume_path,
                    mask_path,
                }
            })
            .collect();
        Ok(Dataset { items, stats })
    }

    /// Loads a directory written by [`crate::phantom::write_dataset`].
    pub fn load(dir: &Path, stats: Option<&FeatureStats>) -> Result<Self, DatasetError> {
        let manifest = read_manifest(dir)?;
        let mut parts = Vec::with_capacity(manifest.len());
        let mut ids = Vec::with_capacity(manifest.len());
        let mut paths = Vec::with_capacity(manifest.len());
        for e in manifest {
            let v = read_volume(resolve(dir, &e.volume_path))?;
            let m = read_mask(resolve(dir, &e.mask_path))?;
            parts.push((v, m, RegionLabel::from_id(e.region_id), Some(e.class)));
            ids.push(e.id);
            paths.push(Some((e.volume_path, e.mask_path)));
        }
        Self::from_parts(parts, ids, paths, stats)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `id` followed by the 72 raw feature values per row.
    pub fn write_radiomics_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(std::iter::once("id").chain(feature_names()))?;
        for item in &self.items {
            w.write_record(std::iter::once(item.id.clone()).chain(item.raw_radiomics.values.iter().map(|v| v.to_string())))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{sample_dataset, write_dataset};

    #[test]
    fn loaded_and_generated_datasets_agree() {
        let ph = sample_dataset(4, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let items: Vec<_> = ph.iter().enumerate().map(|(i, p)| (phantom_id(3, i), p.clone())).collect();
        write_dataset(dir.path(), &items).unwrap();
        let a = Dataset::from_phantoms(ph, 3, None).unwrap();
        let b = Dataset::load(dir.path(), None).unwrap();
        assert_eq!(a.stats, b.stats);
        for (x, y) in a.items.iter().zip(&b.items) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.radiomics, y.radiomics);
            assert!(y.volume_path.is_some());
        }
    }

    #[test]
    fn radiomics_csv_has_header_and_rows() {
        let d = Dataset::from_phantoms(sample_dataset(2, 4).unwrap(), 4, None).unwrap();
        let mut buf = Vec::new();
        d.write_radiomics_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("id,MeshVolume,VoxelVolume,"));
        assert_eq!(lines[1].split(',').count(), 73);
    }

    #[test]
    fn held_out_items_use_given_stats() {
        let train = Dataset::from_phantoms(sample_dataset(6, 1).unwrap(), 1, None).unwrap();
        let test = Dataset::from_phantoms(sample_dataset(2, 2).unwrap(), 2, Some(&train.stats)).unwrap();
        assert_eq!(test.stats, train.stats);
    }
}
