//! Handcrafted tumor descriptors: 14 shape, 18 first-order and 40 texture
//! features (24 GLCM + 16 GLRLM), in one fixed canonical order.
//!
//! Texture features use a fixed bin count of [`GRAY_LEVELS`] over the ROI's
//! min..max intensity range, the 13 unique distance-1 directions of the 3D
//! neighbourhood, and equal-weight averaging of per-direction values.

mod discretize;
mod firstorder;
mod glcm;
mod glrlm;
mod mc_tables;
mod shape;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{RoiMask, Volume};

pub use discretize::{discretize, DiscretizedRoi, GRAY_LEVELS};
pub use firstorder::firstorder_features;
pub use glcm::{glcm_features, glcm_matrices, glcm_single_direction, GlcmMatrix};
pub use glrlm::{glrlm_features, glrlm_single_direction};
pub use shape::{shape_features, surface_mesh, Mesh};

pub const NUM_FEATURES: usize = 72;

pub const SHAPE_RANGE: std::ops::Range<usize> = 0..14;
pub const FIRSTORDER_RANGE: std::ops::Range<usize> = 14..32;
pub const GLCM_RANGE: std::ops::Range<usize> = 32..56;
pub const GLRLM_RANGE: std::ops::Range<usize> = 56..72;

pub const SHAPE_NAMES: [&str; 14] = [
    "MeshVolume",
    "VoxelVolume",
    "SurfaceArea",
    "SurfaceVolumeRatio",
    "Sphericity",
    "Maximum3DDiameter",
    "Maximum2DDiameterSlice",
    "Maximum2DDiameterColumn",
    "Maximum2DDiameterRow",
    "MajorAxisLength",
    "MinorAxisLength",
    "LeastAxisLength",
    "Elongation",
    "Flatness",
];

pub const FIRSTORDER_NAMES: [&str; 18] = [
    "Energy",
    "TotalEnergy",
    "Entropy",
    "Minimum",
    "10Percentile",
    "90Percentile",
    "Maximum",
    "Mean",
    "Median",
    "InterquartileRange",
    "Range",
    "MeanAbsoluteDeviation",
    "RobustMeanAbsoluteDeviation",
    "RootMeanSquared",
    "Skewness",
    "Kurtosis",
    "Variance",
    "Uniformity",
];

pub const GLCM_NAMES: [&str; 24] = [
    "Autocorrelation",
    "JointAverage",
    "ClusterProminence",
    "ClusterShade",
    "ClusterTendency",
    "Contrast",
    "Correlation",
    "DifferenceAverage",
    "DifferenceEntropy",
    "DifferenceVariance",
    "JointEnergy",
    "JointEntropy",
    "Imc1",
    "Imc2",
    "Idm",
    "Idmn",
    "Id",
    "Idn",
    "InverseVariance",
    "MaximumProbability",
    "SumAverage",
    "SumEntropy",
    "SumSquares",
    "MCC",
];

pub const GLRLM_NAMES: [&str; 16] = [
    "ShortRunEmphasis",
    "LongRunEmphasis",
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "RunLengthNonUniformity",
    "RunLengthNonUniformityNormalized",
    "RunPercentage",
    "GrayLevelVariance",
    "RunVariance",
    "RunEntropy",
    "LowGrayLevelRunEmphasis",
    "HighGrayLevelRunEmphasis",
    "ShortRunLowGrayLevelEmphasis",
    "ShortRunHighGrayLevelEmphasis",
    "LongRunLowGrayLevelEmphasis",
    "LongRunHighGrayLevelEmphasis",
];

/// All 72 names in canonical order.
pub fn feature_names() -> Vec<&'static str> {
    SHAPE_NAMES
        .iter()
        .chain(&FIRSTORDER_NAMES)
        .chain(&GLCM_NAMES)
        .chain(&GLRLM_NAMES)
        .copied()
        .collect()
}

/// The canonical name list as a JSON array.
pub fn feature_names_json() -> String {
    serde_json::to_string(&feature_names()).expect("names serialize")
}

pub fn feature_index(name: &str) -> Option<usize> {
    feature_names().iter().position(|&n| n == name)
}

/// Valid names closest to `name` by edit distance, best first.
pub fn nearest_feature_names(name: &str, n: usize) -> Vec<&'static str> {
    let lower = name.to_ascii_lowercase();
    let mut scored: Vec<(usize, &'static str)> = feature_names()
        .into_iter()
        .map(|cand| {
            let c = cand.to_ascii_lowercase();
            let mut d = strsim::levenshtein(&lower, &c);
            if c.contains(&lower) || lower.contains(&c) {
                d = d.min(c.len().abs_diff(lower.len()) / 4);
            }
            (d, cand)
        })
        .collect();
    scored.sort();
    scored.into_iter().take(n).map(|(_, c)| c).collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum RadiomicsError {
    #[error("mask has no foreground voxels")]
    EmptyMask,
    #[error("volume dims {volume:?} do not match mask dims {mask:?}")]
    DimMismatch { volume: [usize; 3], mask: [usize; 3] },
    #[error("unknown feature name {0:?}")]
    UnknownFeature(String),
    #[error("feature {name} has non-finite value")]
    NonFinite { name: String },
    #[error("expected {expected} values, got {got}")]
    WrongLength { expected: usize, got: usize },
}

/// 72 feature values with presence flags for partial queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiomicsVector {
    pub values: Vec<f64>,
    pub present: Vec<bool>,
}

impl RadiomicsVector {
    pub fn full(values: Vec<f64>) -> Result<Self, RadiomicsError> {
        if values.len() != NUM_FEATURES {
            return Err(RadiomicsError::WrongLength { expected: NUM_FEATURES, got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RadiomicsError::NonFinite { name: feature_names()[i].to_string() });
        }
        Ok(RadiomicsVector { values, present: vec![true; NUM_FEATURES] })
    }

    /// No features present (the position-only case).
    pub fn empty() -> Self {
        RadiomicsVector { values: vec![0.0; NUM_FEATURES], present: vec![false; NUM_FEATURES] }
    }

    /// Builds a partial vector from `(name, value)` pairs.
    pub fn from_named<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self, RadiomicsError> {
        let mut r = Self::empty();
        for (name, value) in pairs {
            let i = feature_index(name).ok_or_else(|| RadiomicsError::UnknownFeature(name.to_string()))?;
            if !value.is_finite() {
                return Err(RadiomicsError::NonFinite { name: name.to_string() });
            }
            r.values[i] = value;
            r.present[i] = true;
        }
        Ok(r)
    }

    /// Keeps only the features at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut r = Self::empty();
        for &i in indices {
            if self.present[i] {
                r.values[i] = self.values[i];
                r.present[i] = true;
            }
        }
        r
    }

    pub fn present_count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn is_full(&self) -> bool {
        self.present.iter().all(|&p| p)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).filter(|&i| self.present[i]).map(|i| self.values[i])
    }

    /// Present features as `(index, value)` in canonical order.
    pub fn present_entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().zip(&self.present).enumerate().filter(|(_, (_, &p))| p).map(|(i, (&v, _))| (i, v))
    }
}

/// Computes all 72 features.
pub fn extract_all(v: &Volume, m: &RoiMask) -> Result<RadiomicsVector, RadiomicsError> {
    check_inputs(v, m)?;
    let mut values = Vec::with_capacity(NUM_FEATURES);
    values.extend(shape_features(m, m.geometry().spacing)?);
    values.extend(firstorder_features(v, m)?);
    values.extend(glcm_features(v, m)?);
    values.extend(glrlm_features(v, m)?);
    RadiomicsVector::full(values)
}

pub(crate) fn check_inputs(v: &Volume, m: &RoiMask) -> Result<(), RadiomicsError> {
    if v.dims() != m.dims() {
        return Err(RadiomicsError::DimMismatch { volume: v.dims(), mask: m.dims() });
    }
    if m.count() == 0 {
        return Err(RadiomicsError::EmptyMask);
    }
    Ok(())
}

/// Per-feature mean and standard deviation of a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Population moments per feature over full vectors.
    pub fn fit(rows: &[RadiomicsVector]) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; NUM_FEATURES];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(&r.values) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; NUM_FEATURES];
        for r in rows {
            for (i, v) in r.values.iter().enumerate() {
                var[i] += (v - mean[i]).powi(2);
            }
        }
        FeatureStats { mean, std: var.into_iter().map(|s| (s / n).sqrt()).collect() }
    }

    fn scale(&self, i: usize) -> f64 {
        if self.std[i] > 0.0 {
            self.std[i]
        } else {
            1.0
        }
    }

    /// Inverse of [`standardize`] for present entries.
    pub fn destandardize(&self, r: &RadiomicsVector) -> RadiomicsVector {
        let mut out = r.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            if r.present[i] {
                *v = *v * self.scale(i) + self.mean[i];
            }
        }
        out
    }
}

/// Z-scores present values; a zero std is treated as 1.
pub fn standardize(r: &RadiomicsVector, stats: &FeatureStats) -> RadiomicsVector {
    let mut out = r.clone();
    for (i, v) in out.values.iter_mut().enumerate() {
        if r.present[i] {
            *v = (*v - stats.mean[i]) / stats.scale(i);
        }
    }
    out
}

/// The 13 unique unit offsets of the 26-neighbourhood, fixed order.
pub const DIRECTIONS: [[i64; 3]; 13] = [
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

/// `-p log2 p` with `0 log 0 = 0`.
#[inline]
pub(crate) fn plog2(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}
