//! Query resolution shared by the HTTP handlers and the CLI.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use tumor_retrieval::ape::{ApePoint, AtlasBounds};
use tumor_retrieval::index::{Index, TumorRecord};
use tumor_retrieval::model::{ImageInput, Model, ModelError, RadiomicsInput};
use tumor_retrieval::phantom::{resolve, TumorClass, MAX_PROMPTS};
use tumor_retrieval::radiomics::{feature_index, nearest_feature_names, standardize, RadiomicsVector};
use tumor_retrieval::volume::{read_volume, Geometry, Volume};

use crate::error::ApiError;

pub const DEFAULT_K: usize = 10;

fn default_k() -> usize {
    DEFAULT_K
}

/// Everything a request is answered from.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub index: Index,
    pub model: Model,
    /// Directory that record volume paths are relative to.
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlineVolume {
    pub dims: [usize; 3],
    #[serde(default = "unit_spacing")]
    pub spacing: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    /// Intensities, x fastest.
    pub data: Vec<f32>,
}

fn unit_spacing() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    /// Values already z-scored with the index statistics.
    #[default]
    Z,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QuerySpec {
    Image {
        /// An indexed tumor whose stored volume is the query image.
        #[serde(default)]
        volume_id: Option<String>,
        #[serde(default)]
        volume: Option<InlineVolume>,
        prompts: Vec<[usize; 3]>,
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default)]
        checkpoint: Option<String>,
    },
    Radiomics {
        #[serde(default)]
        features: BTreeMap<String, f64>,
        #[serde(default)]
        ape: Option<[f64; 3]>,
        #[serde(default)]
        units: Units,
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default)]
        checkpoint: Option<String>,
    },
    Ape {
        ape: [f64; 3],
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default)]
        checkpoint: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultItem {
    pub id: String,
    pub similarity: f64,
    pub rank: usize,
    pub region: String,
    pub region_id: u8,
    pub class: Option<TumorClass>,
    pub thumbnail_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub setting: String,
    pub k: usize,
    pub embedding_norm: f64,
    pub results: Vec<ResultItem>,
}

fn model_error(e: ModelError) -> ApiError {
    match e {
        ModelError::TooManyPrompts(_) | ModelError::NoPrompts => ApiError::bad_request("BadPromptCount", e.to_string()),
        ModelError::PromptOutOfCrop(_) => ApiError::bad_request("BadPrompt", e.to_string()),
        ModelError::EmptyQuery => ApiError::bad_request("EmptyQuery", e.to_string()),
        ModelError::Unsupported(..) => ApiError::bad_request("Unsupported", e.to_string()),
        ModelError::InvalidConfig(_) => ApiError::bad_request("BadPrompt", e.to_string()),
        _ => ApiError::internal(e.to_string()),
    }
}

fn ape_point(v: [f64; 3]) -> Result<ApePoint, ApiError> {
    ApePoint::new(v).map_err(|e| ApiError::bad_request("BadApe", e.to_string()))
}

/// The stored volume of an indexed record.
pub fn record_volume(snap: &Snapshot, rec: &TumorRecord) -> Result<Volume, ApiError> {
    let unavailable = || ApiError::new(422, "VolumeParseError", format!("no stored volume for {}", rec.id));
    let rel = rec.meta.volume_path.as_deref().ok_or_else(unavailable)?;
    let path = match &snap.data_dir {
        Some(d) => resolve(d, rel),
        None => Path::new(rel).to_path_buf(),
    };
    read_volume(&path).map_err(|e| ApiError::new(422, "VolumeParseError", e.to_string()).with_detail(json!({ "id": rec.id })))
}

fn inline_volume(v: &InlineVolume) -> Result<Volume, ApiError> {
    let parse = |e: tumor_retrieval::volume::VolumeError| ApiError::new(422, "VolumeParseError", e.to_string());
    let geom = Geometry::new(v.dims, v.spacing, v.origin).map_err(parse)?;
    Volume::new(geom, v.data.clone()).map_err(parse)
}

/// Parses a name → value map into a radiomics vector, suggesting valid names
/// for unknown ones.
pub fn parse_features(features: &BTreeMap<String, f64>) -> Result<RadiomicsVector, ApiError> {
    for (name, v) in features {
        if feature_index(name).is_none() {
            return Err(ApiError::bad_request("UnknownFeatureName", format!("unknown feature name {name:?}"))
                .with_detail(json!({ "name": name, "suggestions": nearest_feature_names(name, 3) })));
        }
        if !v.is_finite() {
            return Err(ApiError::bad_request("BadFeatureValue", format!("{name} is not finite")));
        }
    }
    RadiomicsVector::from_named(features.iter().map(|(n, v)| (n.as_str(), *v)))
        .map_err(|e| ApiError::bad_request("UnknownFeatureName", e.to_string()))
}

/// Encodes the query on the snapshot's model and searches its index.
pub fn execute(snap: &Snapshot, spec: &QuerySpec) -> Result<QueryResponse, ApiError> {
    let (k, checkpoint) = match spec {
        QuerySpec::Image { k, checkpoint, .. } | QuerySpec::Radiomics { k, checkpoint, .. } | QuerySpec::Ape { k, checkpoint, .. } => {
            (*k, checkpoint)
        }
    };
    if k == 0 {
        return Err(ApiError::bad_request("BadK", "k must be at least 1"));
    }
    let model = &snap.model;
    if let Some(c) = checkpoint {
        if c != model.setting.name() {
            return Err(ApiError::bad_request("UnknownCheckpoint", format!("loaded checkpoint is {}", model.setting))
                .with_detail(json!({ "requested": c, "loaded": model.setting.name() })));
        }
    }
    let z = match spec {
        QuerySpec::Image { volume_id, volume, prompts, .. } => {
            if prompts.is_empty() || prompts.len() > MAX_PROMPTS {
                return Err(ApiError::bad_request("BadPromptCount", format!("{} prompts given; 1 to 10 are allowed", prompts.len())));
            }
            let vol = match (volume_id, volume) {
                (Some(id), None) => {
                    let rec = snap.index.get(id).ok_or_else(|| unknown_id(id))?;
                    record_volume(snap, rec)?
                }
                (None, Some(v)) => inline_volume(v)?,
                _ => return Err(ApiError::bad_request("BadVolume", "give exactly one of volume_id and volume")),
            };
            if let Some(p) = prompts.iter().find(|p| !vol.geometry().contains(**p)) {
                return Err(ApiError::bad_request("BadPrompt", format!("prompt {p:?} lies outside the volume")));
            }
            let atlas = AtlasBounds::of(vol.geometry());
            let input = ImageInput::centered(&vol, &atlas, prompts, &model.config.image).map_err(model_error)?;
            model.encode_image(&input).map_err(model_error)?.embedding
        }
        QuerySpec::Radiomics { features, ape, units, .. } => {
            let mut r = parse_features(features)?;
            if *units == Units::Raw {
                r = standardize(&r, snap.index.stats());
            }
            let ape = ape.map(ape_point).transpose()?;
            if r.present_count() == 0 && ape.is_none() {
                return Err(ApiError::bad_request("EmptyQuery", "query has neither features nor an APE point"));
            }
            model.encode_radiomics(&RadiomicsInput { features: r, ape }).map_err(model_error)?
        }
        QuerySpec::Ape { ape, .. } => {
            let ape = ape_point(*ape)?;
            model.encode_radiomics(&RadiomicsInput { features: RadiomicsVector::empty(), ape: Some(ape) }).map_err(model_error)?
        }
    };
    let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    let hits = snap.index.search(&z, k).map_err(|e| ApiError::internal(e.to_string()))?;
    let results = hits
        .into_iter()
        .map(|h| {
            let rec = &snap.index.records()[h.index];
            ResultItem {
                id: rec.id.clone(),
                similarity: h.similarity,
                rank: h.rank,
                region: rec.meta.region.name.clone(),
                region_id: rec.meta.region.id,
                class: rec.meta.class,
                thumbnail_ref: format!("/items/{}", rec.id),
            }
        })
        .collect();
    Ok(QueryResponse { setting: model.setting.name().to_string(), k, embedding_norm: norm, results })
}

pub fn unknown_id(id: &str) -> ApiError {
    ApiError::new(404, "UnknownId", format!("no item {id:?} in the index"))
}
