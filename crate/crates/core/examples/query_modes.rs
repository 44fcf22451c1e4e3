//! The three query modes against one index: an image with a single point
//! prompt, a lone APE point, and a single radiomics feature.
//!
//!     cargo run --release --example query_modes -- [checkpoint.rrnn]

use tumor_retrieval::dataset::Dataset;
use tumor_retrieval::eval::{query_embedding, QueryType};
use tumor_retrieval::index::{build_index, encode_reference, Index};
use tumor_retrieval::model::{read_checkpoint, Model, ModelConfig, Setting};
use tumor_retrieval::phantom::sample_dataset;

fn show(index: &Index, label: &str, z: &[f64]) -> Result<(), Box<dyn std::error::Error>> {
    println!("{label}");
    for hit in index.search(z, 5)? {
        let rec = &index.records()[hit.index];
        println!("  #{} {:<10} cos {:+.4}  region {}", hit.rank, rec.id, hit.similarity, rec.meta.region.name);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = match std::env::args().nth(1) {
        Some(path) => read_checkpoint(path)?,
        None => Model::new(Setting::ImageRadiomicsApe, ModelConfig::default())?,
    };
    let reference = Dataset::from_phantoms(sample_dataset(60, 11)?, 11, None)?;
    let index = build_index(encode_reference(&model, &reference)?, reference.stats.clone())?;
    let queries = Dataset::from_phantoms(sample_dataset(1, 42)?, 42, Some(&reference.stats))?;
    println!("query tumor in region {}, setting {}\n", queries.items[0].region.name, model.setting.name());

    for qt in QueryType::ALL {
        if !qt.applies_to(model.setting) {
            println!("{}: not available for {}", qt.name(), model.setting.name());
            continue;
        }
        let z = query_embedding(&model, &queries, 0, qt, "VoxelVolume")?;
        show(&index, qt.name(), &z)?;
    }
    Ok(())
}
