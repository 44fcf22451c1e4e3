//! Exact cosine top-k search over unit-norm tumor embeddings, with the RRIX
//! file format.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ape::ApePoint;
use crate::dataset::Dataset;
use crate::model::{ImageInput, Model, ModelError};
use crate::phantom::{center_prompt, PhantomError, RegionLabel, TumorClass};
use crate::radiomics::{feature_names, FeatureStats, RadiomicsVector, NUM_FEATURES};

pub const INDEX_MAGIC: &[u8; 4] = b"RRIX";
pub const INDEX_VERSION: u32 = 1;
const NORM_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("embedding of {id} has norm {norm}")]
    UnnormalizedEmbedding { id: String, norm: f64 },
    #[error("query has norm {0}")]
    UnnormalizedQuery(f64),
    #[error("dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0} lacks a full radiomics vector")]
    IncompleteRadiomics(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("not an RRIX file")]
    BadMagic,
    #[error("RRIX version {0} unsupported")]
    VersionMismatch(u32),
    #[error("corrupt record: {0}")]
    CorruptRecord(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub region: RegionLabel,
    pub class: Option<TumorClass>,
    /// Full standardized radiomics.
    pub radiomics: Vec<f64>,
    pub centroid_ape: ApePoint,
    pub center_voxel: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TumorRecord {
    pub id: String,
    pub embedding: Vec<f32>,
    pub meta: RecordMeta,
}

impl TumorRecord {
    pub fn radiomics(&self) -> RadiomicsVector {
        RadiomicsVector::full(self.meta.radiomics.clone()).expect("validated at build")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Position in the index.
    pub index: usize,
    pub similarity: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    d: usize,
    count: usize,
    feature_names: Vec<String>,
    stats: FeatureStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    dim: usize,
    stats: FeatureStats,
    records: Vec<TumorRecord>,
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Checks ids, norms, dimensions, and radiomics completeness.
pub fn build_index(records: Vec<TumorRecord>, stats: FeatureStats) -> Result<Index, IndexError> {
    let dim = records.first().map_or(0, |r| r.embedding.len());
    let mut seen = HashSet::new();
    for r in &records {
        if !seen.insert(r.id.as_str()) {
            return Err(IndexError::DuplicateId(r.id.clone()));
        }
        if r.embedding.len() != dim {
            return Err(IndexError::DimensionMismatch { expected: dim, got: r.embedding.len() });
        }
        let n = norm(r.embedding.iter().map(|&x| x as f64));
        if (n - 1.0).abs() > NORM_TOL {
            return Err(IndexError::UnnormalizedEmbedding { id: r.id.clone(), norm: n });
        }
        if r.meta.radiomics.len() != NUM_FEATURES || r.meta.radiomics.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::IncompleteRadiomics(r.id.clone()));
        }
    }
    if stats.mean.len() != NUM_FEATURES || stats.std.len() != NUM_FEATURES {
        return Err(IndexError::CorruptRecord("standardization stats need 72 entries".into()));
    }
    Ok(Index { dim, stats, records })
}

impl Index {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stats(&self) -> &FeatureStats {
        &self.stats
    }

    pub fn records(&self) -> &[TumorRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&TumorRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Similarity of `query` to every record, in index order.
    pub fn scores(&self, query: &[f64]) -> Result<Vec<f64>, IndexError> {
        if !self.records.is_empty() && query.len() != self.dim {
            return Err(IndexError::DimensionMismatch { expected: self.dim, got: query.len() });
        }
        let n = norm(query.iter().copied());
        if (n - 1.0).abs() > NORM_TOL {
            return Err(IndexError::UnnormalizedQuery(n));
        }
        Ok(self
            .records
            .iter()
            .map(|r| r.embedding.iter().zip(query).map(|(&a, &b)| a as f64 * b).sum())
            .collect())
    }

    /// Exact top-k by similarity; ties go to the smaller id.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<RetrievalResult>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        let scores = self.scores(query)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        let cmp = |&a: &usize, &b: &usize| -> Ordering {
            scores[b].total_cmp(&scores[a]).then_with(|| self.records[a].id.cmp(&self.records[b].id))
        };
        let k = k.min(order.len());
        if k < order.len() {
            order.select_nth_unstable_by(k, cmp);
            order.truncate(k);
        }
        order.sort_by(cmp);
        Ok(order.into_iter().enumerate().map(|(r, i)| RetrievalResult { index: i, similarity: scores[i], rank: r + 1 }).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: INDEX_VERSION,
            d: self.dim,
            count: self.records.len(),
            feature_names: feature_names().iter().map(|s| s.to_string()).collect(),
            stats: self.stats.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for r in &self.records {
            out.extend_from_slice(&(r.id.len() as u32).to_le_bytes());
            out.extend_from_slice(r.id.as_bytes());
            for v in &r.embedding {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let meta = serde_json::to_vec(&r.meta).expect("metadata serializes");
            out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
            out.extend_from_slice(&meta);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Index, IndexError> {
        if bytes.len() < 4 || &bytes[..4] != INDEX_MAGIC {
            return Err(IndexError::BadMagic);
        }
        let mut cur = Cursor { bytes, pos: 4 };
        let hlen = cur.u32()? as usize;
        let header: Header =
            serde_json::from_slice(cur.take(hlen)?).map_err(|e| IndexError::CorruptRecord(format!("header: {e}")))?;
        if header.version != INDEX_VERSION {
            return Err(IndexError::VersionMismatch(header.version));
        }
        if header.feature_names.iter().map(String::as_str).ne(feature_names().iter().copied()) {
            return Err(IndexError::CorruptRecord("feature names differ from this build".into()));
        }
        let mut records = Vec::with_capacity(header.count.min(1 << 20));
        while cur.pos < bytes.len() {
            let n = cur.u32()? as usize;
            let id = String::from_utf8(cur.take(n)?.to_vec()).map_err(|_| IndexError::CorruptRecord("id is not UTF-8".into()))?;
            let embedding = cur
                .take(4 * header.d)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let m = cur.u32()? as usize;
            let meta = serde_json::from_slice(cur.take(m)?).map_err(|e| IndexError::CorruptRecord(format!("{id}: {e}")))?;
            records.push(TumorRecord { id, embedding, meta });
        }
        if records.len() != header.count {
            return Err(IndexError::CorruptRecord(format!("header count {} but {} records", header.count, records.len())));
        }
        let index = build_index(records, header.stats)?;
        if !index.is_empty() && index.dim != header.d {
            return Err(IndexError::CorruptRecord("dimension differs from header".into()));
        }
        Ok(Index { dim: header.d, ..index })
    }

    /// One `{id, region, class}` object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), IndexError> {
        for r in &self.records {
            let line = serde_json::json!({ "id": r.id, "region": r.meta.region, "class": r.meta.class });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| IndexError::CorruptRecord(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn save_index(index: &Index, path: impl AsRef<Path>) -> Result<(), IndexError> {
    std::fs::write(path, index.to_bytes())?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<Index, IndexError> {
    Index::from_bytes(&std::fs::read(path)?)
}

/// Reference records: each tumor encoded from a crop centered on its
/// center prompt.
pub fn encode_reference(model: &Model, data: &Dataset) -> Result<Vec<TumorRecord>, IndexError> {
    data.items
        .par_iter()
        .map(|item| {
            let c = center_prompt(&item.mask)?.voxel;
            let input = ImageInput::centered(&item.volume, &item.atlas, &[c], &model.config.image)?;
            let out = model.encode_image(&input)?;
            Ok(TumorRecord {
                id: item.id.clone(),
                embedding: out.embedding.iter().map(|&v| v as f32).collect(),
                meta: RecordMeta {
                    region: item.region.clone(),
                    class: item.class,
                    radiomics: item.radiomics.values.clone(),
                    centroid_ape: ApePoint { values: input.prompt_ape[0] },
                    center_voxel: c,
                    volume_path: item.volume_path.clone(),
                    mask_path: item.mask_path.clone(),
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_records(n: usize, d: usize, seed: u64) -> Vec<TumorRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = norm(v.iter().copied());
                TumorRecord {
                    id: format!("r{i:05}"),
                    embedding: v.iter().map(|x| (x / n) as f32).collect(),
                    meta: RecordMeta {
                        region: RegionLabel::from_id((i % 8) as u8),
                        class: TumorClass::from_index(i % 2),
                        radiomics: vec![0.5; NUM_FEATURES],
                        centroid_ape: ApePoint { values: [0.0; 3] },
                        center_voxel: [1, 2, 3],
                        volume_path: None,
                        mask_path: None,
                    },
                }
            })
            .collect()
    }

    fn stats() -> FeatureStats {
        FeatureStats { mean: vec![0.0; NUM_FEATURES], std: vec![1.0; NUM_FEATURES] }
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = build_index(Vec::new(), stats()).unwrap();
        assert!(idx.search(&[1.0, 0.0], 5).unwrap().is_empty());
        assert_eq!(Index::from_bytes(&idx.to_bytes()).unwrap(), idx);
    }

    #[test]
    fn duplicate_and_unnormalized_rejected() {
        let mut r = random_records(2, 4, 1);
        r[1].id = r[0].id.clone();
        assert!(matches!(build_index(r, stats()), Err(IndexError::DuplicateId(_))));
        let mut r = random_records(2, 4, 1);
        r[0].embedding[0] += 0.5;
        assert!(matches!(build_index(r, stats()), Err(IndexError::UnnormalizedEmbedding { .. })));
    }

    #[test]
    fn self_query_ranks_first_and_k_truncates() {
        let idx = build_index(random_records(20, 8, 2), stats()).unwrap();
        let q: Vec<f64> = idx.records()[7].embedding.iter().map(|&x| x as f64).collect();
        let q: Vec<f64> = q.iter().map(|x| x / norm(q.iter().copied())).collect();
        let hits = idx.search(&q, 50).unwrap();
        assert_eq!(hits.len(), 20);
        assert_eq!(hits[0].index, 7);
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
        assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
        assert!(matches!(idx.search(&[2.0; 8], 3), Err(IndexError::UnnormalizedQuery(_))));
        assert!(matches!(idx.search(&q, 0), Err(IndexError::InvalidK)));
    }

    #[test]
    fn ties_break_by_id() {
        let mut r = random_records(3, 4, 3);
        r[2].embedding = r[0].embedding.clone();
        r.swap(0, 2);
        let idx = build_index(r, stats()).unwrap();
        let q: Vec<f64> = idx.records()[0].embedding.iter().map(|&x| x as f64).collect();
        let q: Vec<f64> = q.iter().map(|x| x / norm(q.iter().copied())).collect();
        let hits = idx.search(&q, 2).unwrap();
        assert_eq!(idx.records()[hits[0].index].id, "r00000");
        assert_eq!(idx.records()[hits[1].index].id, "r00002");
    }

    #[test]
    fn corrupt_files_rejected() {
        let idx = build_index(random_records(5, 4, 4), stats()).unwrap();
        let bytes = idx.to_bytes();
        assert!(matches!(Index::from_bytes(b"RRNNxxxx"), Err(IndexError::BadMagic)));
        assert!(matches!(Index::from_bytes(&bytes[..bytes.len() - 3]), Err(IndexError::CorruptRecord(_))));
        let other = build_index(random_records(4, 4, 4), stats()).unwrap().to_bytes();
        let hlen = u32::from_le_bytes(other[4..8].try_into().unwrap()) as usize;
        let mut spliced = other[..8 + hlen].to_vec();
        spliced.extend_from_slice(&bytes[8 + u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize..]);
        assert!(matches!(Index::from_bytes(&spliced), Err(IndexError::CorruptRecord(_))));
        let h = Header {
            version: 9,
            d: 4,
            count: 0,
            feature_names: feature_names().iter().map(|s| s.to_string()).collect(),
            stats: stats(),
        };
        let h = serde_json::to_vec(&h).unwrap();
        let mut bumped = INDEX_MAGIC.to_vec();
        bumped.extend_from_slice(&(h.len() as u32).to_le_bytes());
        bumped.extend_from_slice(&h);
        assert!(matches!(Index::from_bytes(&bumped), Err(IndexError::VersionMismatch(9))));
    }

    #[test]
    fn jsonl_has_one_line_per_record() {
        let idx = build_index(random_records(3, 4, 5), stats()).unwrap();
        let mut buf = Vec::new();
        idx.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("{\"class\":\"A\",\"id\":\"r00000\""));
    }
}
