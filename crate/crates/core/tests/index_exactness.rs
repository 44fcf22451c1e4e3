use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tumor_retrieval::ape::ApePoint;
use tumor_retrieval::dataset::Dataset;
use tumor_retrieval::index::{
    build_index, encode_reference, load_index, save_index, Index, IndexError, RecordMeta, TumorRecord,
};
use tumor_retrieval::model::{Model, ModelConfig, Setting};
use tumor_retrieval::phantom::{sample_dataset, RegionLabel, TumorClass};
use tumor_retrieval::radiomics::{FeatureStats, NUM_FEATURES};

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn records(n: usize, d: usize, seed: u64) -> Vec<TumorRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| TumorRecord {
            id: format!("t{:06}", (i * 7919) % 1_000_003),
            embedding: unit(&mut rng, d).into_iter().map(|x| x as f32).collect(),
            meta: RecordMeta {
                region: RegionLabel::from_id(rng.random_range(0..8)),
                class: Some(if rng.random_bool(0.5) { TumorClass::A } else { TumorClass::B }),
                radiomics: (0..NUM_FEATURES).map(|_| rng.random_range(-2.0..2.0)).collect(),
                centroid_ape: ApePoint::new([rng.random_range(-1.0..1.0), 0.0, 0.5]).unwrap(),
                center_voxel: [i % 64, 3, 4],
                volume_path: None,
                mask_path: None,
            },
        })
        .collect()
}

fn stats() -> FeatureStats {
    FeatureStats { mean: vec![0.25; NUM_FEATURES], std: vec![1.5; NUM_FEATURES] }
}

/// Full scan, full sort by (similarity desc, id asc), first k.
fn argsort_oracle(idx: &Index, q: &[f64], k: usize) -> Vec<(usize, f64)> {
    let recs = idx.records();
    let mut all: Vec<(usize, f64)> = recs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut s = 0.0;
            for j in 0..q.len() {
                s += r.embedding[j] as f64 * q[j];
            }
            (i, s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| recs[a.0].id.cmp(&recs[b.0].id)));
    all.truncate(k);
    all
}

#[test]
fn thousand_records_match_full_scan() {
    let idx = build_index(records(1000, 64, 1), stats()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let q = unit(&mut rng, 64);
        for k in [1, 5, 10, 100, 1000] {
            let got: Vec<(usize, f64)> = idx.search(&q, k).unwrap().iter().map(|r| (r.index, r.similarity)).collect();
            assert_eq!(got, argsort_oracle(&idx, &q, k));
        }
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let idx = build_index(records(1000, 64, 3), stats()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.rrix"), dir.path().join("b.rrix"));
    save_index(&idx, &a).unwrap();
    let back = load_index(&a).unwrap();
    assert_eq!(back, idx);
    save_index(&back, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn header_count_mismatch_is_corrupt() {
    let bytes = build_index(records(5, 8, 4), stats()).unwrap().to_bytes();
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header = String::from_utf8(bytes[8..8 + hlen].to_vec()).unwrap().replace("\"count\":5", "\"count\":6");
    let mut forged = b"RRIX".to_vec();
    forged.extend_from_slice(&(header.len() as u32).to_le_bytes());
    forged.extend_from_slice(header.as_bytes());
    forged.extend_from_slice(&bytes[8 + hlen..]);
    assert!(matches!(Index::from_bytes(&forged), Err(IndexError::CorruptRecord(_))));
}

#[test]
fn phantom_reference_round_trips_with_identical_results() {
    let data = Dataset::from_phantoms(sample_dataset(200, 31).unwrap(), 31, None).unwrap();
    let model = Model::new(Setting::ImageRadiomicsApe, ModelConfig { seed: 5, ..Default::default() }).unwrap();
    let idx = build_index(encode_reference(&model, &data).unwrap(), data.stats.clone()).unwrap();
    assert_eq!(idx.len(), 200);
    let back = Index::from_bytes(&idx.to_bytes()).unwrap();
    assert_eq!(back.to_bytes(), idx.to_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let q = unit(&mut rng, 64);
        assert_eq!(idx.search(&q, 10).unwrap(), back.search(&q, 10).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shorter_k_is_a_prefix(seed in 0u64..1000, k1 in 1usize..40, extra in 0usize..40) {
        let idx = build_index(records(60, 16, seed), stats()).unwrap();
        let q = unit(&mut ChaCha8Rng::seed_from_u64(seed + 1), 16);
        let a = idx.search(&q, k1).unwrap();
        let b = idx.search(&q, k1 + extra).unwrap();
        prop_assert_eq!(&b[..a.len()], &a[..]);
        prop_assert!(b.iter().all(|r| r.similarity.abs() <= 1.0 + 1e-6));
    }
}
