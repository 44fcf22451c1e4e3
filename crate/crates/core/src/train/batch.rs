use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::ape::ApePoint;
use crate::dataset::Dataset;
use crate::model::{ImageEncoderConfig, ImageInput, RadiomicsInput, Setting};
use crate::phantom::{derive_seed, sample_point_prompts, MAX_PROMPTS};
use crate::radiomics::{RadiomicsVector, NUM_FEATURES};

pub const CROPS_PER_TUMOR: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RadiomicsVariant {
    Full,
    /// Sorted feature indices, 1 to 71 of them.
    Subset(Vec<usize>),
    ApeOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropPlan {
    /// Index into the dataset.
    pub tumor: usize,
    pub offset: [usize; 3],
    /// Prompt voxels in volume coordinates.
    pub prompts: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiomicsPlan {
    pub tumor: usize,
    /// Index into [`BatchPlan::crops`] whose first prompt supplies the APE.
    pub crop: usize,
    pub variant: RadiomicsVariant,
    pub with_ape: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub tumors: Vec<usize>,
    pub crops: Vec<CropPlan>,
    pub radiomics: Vec<RadiomicsPlan>,
}

/// Offset range per axis for a crop that fully contains `[lo, hi]`.
pub fn crop_offset_range(lo: [usize; 3], hi: [usize; 3], dims: [usize; 3], crop: usize) -> Option<[(usize, usize); 3]> {
    let mut out = [(0, 0); 3];
    for a in 0..3 {
        if crop > dims[a] || hi[a] - lo[a] + 1 > crop {
            return None;
        }
        out[a] = ((hi[a] + 1).saturating_sub(crop), lo[a].min(dims[a] - crop));
    }
    Some(out)
}

/// Random crops, prompts, and radiomics variants for `tumors`; each tumor
/// draws from its own stream so plans do not depend on batch composition.
pub fn build_batch(
    data: &Dataset,
    tumors: &[usize],
    setting: Setting,
    crop: usize,
    seed: u64,
) -> Result<BatchPlan, TrainError> {
    let mut plan = BatchPlan { tumors: tumors.to_vec(), crops: Vec::new(), radiomics: Vec::new() };
    for &t in tumors {
        let item = &data.items[t];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
        let (lo, hi) = item.mask.bbox().ok_or_else(|| TrainError::EmptyMask(item.id.clone()))?;
        let range = crop_offset_range(lo, hi, item.volume.dims(), crop)
            .ok_or_else(|| TrainError::TumorLargerThanCrop { id: item.id.clone(), crop })?;
        for _ in 0..CROPS_PER_TUMOR {
            let offset = range.map(|(a, b)| rng.random_range(a..=b));
            let k = rng.random_range(1..=MAX_PROMPTS).min(item.mask.count());
            let prompts = sample_point_prompts(&item.mask, k, rng.random())
?
                .into_iter()
                .map(|p| p.voxel)
                .collect();
            let c = plan.crops.len();
            plan.crops.push(CropPlan { tumor: t, offset, prompts });
            if !setting.uses_radiomics() {
                continue;
            }
            let u = rng.random_range(1..NUM_FEATURES);
            let mut subset = index::sample(&mut rng, NUM_FEATURES, u).into_vec();
            subset.sort_unstable();
            for variant in [RadiomicsVariant::Full, RadiomicsVariant::Subset(subset)] {
                let with_ape = setting.uses_ape() && rng.random_bool(0.5);
                plan.radiomics.push(RadiomicsPlan { tumor: t, crop: c, variant, with_ape });
            }
            if setting.uses_ape() {
                plan.radiomics.push(RadiomicsPlan { tumor: t, crop: c, variant: RadiomicsVariant::ApeOnly, with_ape: true });
            }
        }
    }
    Ok(plan)
}

/// Encoder input and binary target of one planned crop.
pub fn crop_input(data: &Dataset, c: &CropPlan, cfg: &ImageEncoderConfig) -> Result<(ImageInput, Vec<u8>), TrainError> {
    let item = &data.items[c.tumor];
    let input = ImageInput::new(&item.volume, &item.atlas, &c.prompts, c.offset, cfg)?;
    let target = item.mask.crop(c.offset, [cfg.crop; 3])?;
    Ok((input, target.data().to_vec()))
}

pub fn radiomics_input(data: &Dataset, r: &RadiomicsPlan, ape_of_crop: &[[f64; 3]]) -> RadiomicsInput {
    let item = &data.items[r.tumor];
    let features = match &r.variant {
        RadiomicsVariant::Full => item.radiomics.clone(),
        RadiomicsVariant::Subset(idx) => item.radiomics.subset(idx),
        RadiomicsVariant::ApeOnly => RadiomicsVector::empty(),
    };
    let ape = r.with_ape.then(|| ApePoint { values: ape_of_crop[r.crop] });
    RadiomicsInput { features, ape }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::sample_dataset;

    #[test]
    fn offset_range_contains_box() {
        assert_eq!(crop_offset_range([10; 3], [20; 3], [64; 3], 32), Some([(0, 10); 3]));
        assert_eq!(crop_offset_range([50; 3], [60; 3], [64; 3], 32), Some([(29, 32); 3]));
        assert_eq!(crop_offset_range([0; 3], [40; 3], [64; 3], 32), None);
    }

    #[test]
    fn plans_are_seeded_and_contain_masks() {
        let data = Dataset::from_phantoms(sample_dataset(4, 5).unwrap(), 5, None).unwrap();
        let a = build_batch(&data, &[0, 1, 2, 3], Setting::ImageRadiomicsFpeApe, 32, 9).unwrap();
        assert_eq!(a, build_batch(&data, &[0, 1, 2, 3], Setting::ImageRadiomicsFpeApe, 32, 9).unwrap());
        assert_eq!(a.crops.len(), 8);
        assert_eq!(a.radiomics.len(), 24);
        let cfg = ImageEncoderConfig::default();
        for c in &a.crops {
            let (input, target) = crop_input(&data, c, &cfg).unwrap();
            let count = target.iter().filter(|&&t| t == 1).count();
            assert_eq!(count, data.items[c.tumor].mask.count());
            assert!((1..=10).contains(&input.prompts.len()));
        }
        let fpe = build_batch(&data, &[0, 1], Setting::ImageRadiomicsFpe, 32, 9).unwrap();
        assert!(fpe.radiomics.iter().all(|r| !r.with_ape && r.variant != RadiomicsVariant::ApeOnly));
        assert_eq!(fpe.radiomics.len(), 8);
        assert!(build_batch(&data, &[0], Setting::ImageFpe, 32, 9).unwrap().radiomics.is_empty());
    }
}
