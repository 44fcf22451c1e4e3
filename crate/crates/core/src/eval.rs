//! Location precision@k, radiomics correlation@k with its upper bound and
//! random baseline, and the five-setting ablation harness.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ape::{ape_at, ApeError};
use crate::dataset::Dataset;
use crate::index::{build_index, encode_reference, Index, IndexError};
use crate::model::{ImageInput, Model, ModelError, RadiomicsInput, Setting};
use crate::phantom::{center_prompt, derive_seed, PhantomError};
use crate::radiomics::{feature_index, RadiomicsVector};

/// Clinical-scale reference location precision, kept in report footers as context only.
pub const REFERENCE_P_AT_5: f64 = 0.9531;
pub const REFERENCE_NOTE: &str =
    "external reference P@5 = 0.9531 (<Image,FPE>, NSCLC); not reproducible at phantom scale";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query {query} has {got} results, {k} needed")]
    InsufficientResults { query: usize, got: usize, k: usize },
    #[error("no trained model for {0}")]
    MissingCheckpoint(Setting),
    #[error("{0} queries but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Ape(#[from] ApeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryType {
    #[serde(rename = "image+1pt")]
    ImageOnePoint,
    #[serde(rename = "ape_1pt")]
    ApeOnePoint,
    #[serde(rename = "radiomics")]
    Radiomics,
    #[serde(rename = "single_feature")]
    SingleFeature,
}

impl QueryType {
    pub const ALL: [QueryType; 4] = [QueryType::ImageOnePoint, QueryType::ApeOnePoint, QueryType::Radiomics, QueryType::SingleFeature];

    pub fn name(self) -> &'static str {
        match self {
            QueryType::ImageOnePoint => "image+1pt",
            QueryType::ApeOnePoint => "ape_1pt",
            QueryType::Radiomics => "radiomics",
            QueryType::SingleFeature => "single_feature",
        }
    }

    /// APE-only queries go through the radiomics encoder's APE token, so they
    /// need a multimodal APE setting.
    pub fn applies_to(self, s: Setting) -> bool {
        match self {
            QueryType::ImageOnePoint => true,
            QueryType::ApeOnePoint => s.uses_radiomics() && s.uses_ape(),
            QueryType::Radiomics | QueryType::SingleFeature => s.uses_radiomics(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correlation {
    Pearson,
    Spearman,
}

/// Pearson correlation; 0 when either vector is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        log::debug!("zero-variance radiomics vector; pair correlation set to 0");
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Average ranks, ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

pub fn correlate(a: &[f64], b: &[f64], c: Correlation) -> f64 {
    match c {
        Correlation::Pearson => pearson(a, b),
        Correlation::Spearman => spearman(a, b),
    }
}

/// Mean over queries of the fraction of the first `k` retrieved regions
/// equal to the query's region.
pub fn precision_at_k(retrieved: &[Vec<u8>], query_regions: &[u8], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    if retrieved.len() != query_regions.len() {
        return Err(EvalError::LengthMismatch(retrieved.len(), query_regions.len()));
    }
    let mut sum = 0.0;
    for (q, (r, &region)) in retrieved.iter().zip(query_regions).enumerate() {
        if r.len() < k {
            return Err(EvalError::InsufficientResults { query: q, got: r.len(), k });
        }
        sum += r[..k].iter().filter(|&&x| x == region).count() as f64 / k as f64;
    }
    Ok(sum / retrieved.len().max(1) as f64)
}

/// Pair correlations between each query vector and each reference vector.
pub fn correlation_table(queries: &[Vec<f64>], reference: &[Vec<f64>], c: Correlation) -> Vec<Vec<f64>> {
    queries.par_iter().map(|q| reference.iter().map(|r| correlate(q, r, c)).collect()).collect()
}

/// Mean over queries of the mean correlation with the first `k` retrieved
/// reference rows.
pub fn radiomics_corr_at_k(retrieved: &[Vec<usize>], table: &[Vec<f64>], k: usize) -> Result<f64, EvalError> {
    Ok(mean(&per_query_corr(retrieved, table, k)?))
}

fn per_query_corr(retrieved: &[Vec<usize>], table: &[Vec<f64>], k: usize) -> Result<Vec<f64>, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    if retrieved.len() != table.len() {
        return Err(EvalError::LengthMismatch(retrieved.len(), table.len()));
    }
    retrieved
        .iter()
        .zip(table)
        .enumerate()
        .map(|(q, (r, row))| {
            if r.len() < k {
                return Err(EvalError::InsufficientResults { query: q, got: r.len(), k });
            }
            Ok(r[..k].iter().map(|&i| row[i]).sum::<f64>() / k as f64)
        })
        .collect()
}

/// Best achievable correlation@k: each query takes its `k` most correlated
/// reference rows.
pub fn upper_bound_at_k(table: &[Vec<f64>], k: usize) -> Result<f64, EvalError> {
    let top: Vec<Vec<usize>> = table
        .iter()
        .map(|row| {
            let mut o: Vec<usize> = (0..row.len()).collect();
            o.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            o
        })
        .collect();
    radiomics_corr_at_k(&top, table, k)
}

/// Mean correlation over uniformly drawn `k`-subsets, `repeats` draws per
/// query; query `q` uses its own stream of `seed`.
pub fn random_baseline_at_k(table: &[Vec<f64>], k: usize, repeats: usize, seed: u64) -> Result<f64, EvalError> {
    if k == 0 || repeats == 0 {
        return Err(EvalError::InvalidK);
    }
    let per: Vec<f64> = table
        .iter()
        .enumerate()
        .map(|(q, row)| {
            if row.len() < k {
                return Err(EvalError::InsufficientResults { query: q, got: row.len(), k });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, q as u64));
            let mut s = 0.0;
            for _ in 0..repeats {
                s += index::sample(&mut rng, row.len(), k).iter().map(|i| row[i]).sum::<f64>() / k as f64;
            }
            Ok(s / repeats as f64)
        })
        .collect::<Result<_, _>>()?;
    Ok(mean(&per))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn stderr(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub correlation: Correlation,
    pub single_feature: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { ks: vec![5, 10], repeats: 100, seed: 0, correlation: Correlation::Pearson, single_feature: "VoxelVolume".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: Setting,
    pub query_type: QueryType,
    pub p_at: BTreeMap<usize, f64>,
    pub corr_at: BTreeMap<usize, f64>,
    pub corr_stderr: BTreeMap<usize, f64>,
    pub upper_bound: BTreeMap<usize, f64>,
    pub random_baseline: BTreeMap<usize, f64>,
    pub n_queries: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDetail {
    pub setting: Setting,
    pub query_type: QueryType,
    pub query_id: String,
    pub retrieved: Vec<String>,
    pub similarities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub reports: Vec<EvalReport>,
    pub details: Vec<QueryDetail>,
    pub note: String,
}

impl SuiteReport {
    pub fn find(&self, setting: Setting, query_type: QueryType) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.setting == setting && r.query_type == query_type)
    }
}

/// Query-side embedding of one held-out tumor.
pub fn query_embedding(model: &Model, queries: &Dataset, q: usize, qt: QueryType, single_feature: &str) -> Result<Vec<f64>, EvalError> {
    let item = &queries.items[q];
    let c = center_prompt(&item.mask)?;
    let features = match qt {
        QueryType::ImageOnePoint => {
            let input = ImageInput::centered(&item.volume, &item.atlas, &[c.voxel], &model.config.image)?;
            return Ok(model.encode_image(&input)?.embedding);
        }
        QueryType::ApeOnePoint => {
            let ape = ape_at(item.volume.geometry(), &item.atlas, c)?;
            return Ok(model.encode_radiomics(&RadiomicsInput { features: RadiomicsVector::empty(), ape: Some(ape) })?);
        }
        QueryType::Radiomics => item.radiomics.clone(),
        QueryType::SingleFeature => {
            let i = feature_index(single_feature).ok_or_else(|| EvalError::UnknownFeature(single_feature.into()))?;
            item.radiomics.subset(&[i])
        }
    };
    Ok(model.encode_radiomics(&RadiomicsInput { features, ape: None })?)
}

/// Reports for one trained setting against its reference index.
pub fn evaluate_setting(
    model: &Model,
    index: &Index,
    queries: &Dataset,
    cfg: &EvalConfig,
    table: &[Vec<f64>],
) -> Result<(Vec<EvalReport>, Vec<QueryDetail>), EvalError> {
    let kmax = cfg.ks.iter().copied().max().ok_or(EvalError::InvalidK)?;
    let query_regions: Vec<u8> = queries.items.iter().map(|i| i.region.id).collect();
    let mut reports = Vec::new();
    let mut details = Vec::new();
    for qt in QueryType::ALL.into_iter().filter(|q| q.applies_to(model.setting)) {
        let hits: Vec<_> = (0..queries.len())
            .into_par_iter()
            .map(|q| {
                let z = query_embedding(model, queries, q, qt, &cfg.single_feature)?;
                Ok(index.search(&z, kmax)?)
            })
            .collect::<Result<_, EvalError>>()?;
        let idx: Vec<Vec<usize>> = hits.iter().map(|h| h.iter().map(|r| r.index).collect()).collect();
        let regions: Vec<Vec<u8>> = idx.iter().map(|h| h.iter().map(|&i| index.records()[i].meta.region.id).collect()).collect();
        let mut rep = EvalReport {
            setting: model.setting,
            query_type: qt,
            p_at: BTreeMap::new(),
            corr_at: BTreeMap::new(),
            corr_stderr: BTreeMap::new(),
            upper_bound: BTreeMap::new(),
            random_baseline: BTreeMap::new(),
            n_queries: queries.len(),
            seed: cfg.seed,
        };
        for &k in &cfg.ks {
            rep.p_at.insert(k, precision_at_k(&regions, &query_regions, k)?);
            let per = per_query_corr(&idx, table, k)?;
            rep.corr_at.insert(k, mean(&per));
            rep.corr_stderr.insert(k, stderr(&per));
            rep.upper_bound.insert(k, upper_bound_at_k(table, k)?);
            rep.random_baseline.insert(k, random_baseline_at_k(table, k, cfg.repeats, cfg.seed)?);
        }
        reports.push(rep);
        for (q, h) in hits.iter().enumerate() {
            details.push(QueryDetail {
                setting: model.setting,
                query_type: qt,
                query_id: queries.items[q].id.clone(),
                retrieved: h.iter().map(|r| index.records()[r.index].id.clone()).collect(),
                similarities: h.iter().map(|r| r.similarity).collect(),
            });
        }
    }
    Ok((reports, details))
}

/// Builds each setting's reference index from `reference` with center
/// prompts and evaluates every applicable query type. `models` must hold one
/// model per setting in `settings`.
pub fn run_ablation_suite(
    models: &BTreeMap<Setting, Model>,
    settings: &[Setting],
    reference: &Dataset,
    queries: &Dataset,
    cfg: &EvalConfig,
) -> Result<SuiteReport, EvalError> {
    let ref_rad: Vec<Vec<f64>> = reference.items.iter().map(|i| i.radiomics.values.clone()).collect();
    let q_rad: Vec<Vec<f64>> = queries.items.iter().map(|i| i.radiomics.values.clone()).collect();
    let table = correlation_table(&q_rad, &ref_rad, cfg.correlation);
    let mut out = SuiteReport { reports: Vec::new(), details: Vec::new(), note: REFERENCE_NOTE.into() };
    for &s in settings {
        let model = models.get(&s).ok_or(EvalError::MissingCheckpoint(s))?;
        let index = build_index(encode_reference(model, reference)?, reference.stats.clone())?;
        let (r, d) = evaluate_setting(model, &index, queries, cfg, &table)?;
        out.reports.extend(r);
        out.details.extend(d);
    }
    Ok(out)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    setting: &'a str,
    query_type: &'a str,
    k: usize,
    p_at_k: f64,
    corr_at_k: f64,
    corr_stderr: f64,
    upper_bound: f64,
    random_baseline: f64,
    n_queries: usize,
    seed: u64,
}

/// One row per report and k, then a `#` footer line with the reference note.
pub fn write_csv<W: Write>(reports: &[EvalReport], mut out: W) -> Result<(), EvalError> {
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for r in reports {
            for (&k, &p) in &r.p_at {
                w.serialize(CsvRow {
                    setting: r.setting.name(),
                    query_type: r.query_type.name(),
                    k,
                    p_at_k: p,
                    corr_at_k: r.corr_at[&k],
                    corr_stderr: r.corr_stderr[&k],
                    upper_bound: r.upper_bound[&k],
                    random_baseline: r.random_baseline[&k],
                    n_queries: r.n_queries,
                    seed: r.seed,
                })?;
            }
        }
        w.flush()?;
    }
    writeln!(out, "# {REFERENCE_NOTE}")?;
    Ok(())
}

pub fn write_json<W: Write>(report: &SuiteReport, out: W) -> Result<(), EvalError> {
    serde_json::to_writer_pretty(out, report)?;
    Ok(())
}
