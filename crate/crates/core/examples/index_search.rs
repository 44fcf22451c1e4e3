//! Encodes a reference set, builds the exact cosine index, round-trips it
//! through RRIX, and searches it with a held-out tumor.
//!
//!     cargo run --release --example index_search -- [checkpoint.rrnn]

use tumor_retrieval::dataset::Dataset;
use tumor_retrieval::index::{build_index, encode_reference, load_index, save_index};
use tumor_retrieval::model::{read_checkpoint, Model, ModelConfig, Setting};
use tumor_retrieval::phantom::sample_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = match std::env::args().nth(1) {
        Some(path) => read_checkpoint(path)?,
        None => Model::new(Setting::ImageRadiomicsApe, ModelConfig::default())?,
    };
    let reference = Dataset::from_phantoms(sample_dataset(60, 11)?, 11, None)?;
    let index = build_index(encode_reference(&model, &reference)?, reference.stats.clone())?;

    let path = std::env::temp_dir().join("example.rrix");
    save_index(&index, &path)?;
    let loaded = load_index(&path)?;
    assert_eq!(loaded.to_bytes(), index.to_bytes());
    println!("{} records of dim {} saved to {}", loaded.len(), loaded.dim(), path.display());

    let held = Dataset::from_phantoms(sample_dataset(1, 99)?, 99, Some(&reference.stats))?;
    let query = encode_reference(&model, &held)?.remove(0);
    let z: Vec<f64> = query.embedding.iter().map(|&v| v as f64).collect();
    println!("query {} in region {}", query.id, query.meta.region.name);
    for hit in loaded.search(&z, 5)? {
        let rec = &loaded.records()[hit.index];
        println!("  #{} {:<10} cos {:+.4}  region {}", hit.rank, rec.id, hit.similarity, rec.meta.region.name);
    }
    Ok(())
}
