//! Trains every ablation setting briefly and prints the evaluation suite:
//! precision@k by region, radiomics correlation@k, upper bound, and random
//! baseline.
//!
//!     cargo run --release --example ablation -- [epochs] [n-train] [n-query]

use std::collections::BTreeMap;

use tumor_retrieval::dataset::Dataset;
use tumor_retrieval::eval::{run_ablation_suite, write_csv, EvalConfig};
use tumor_retrieval::model::Setting;
use tumor_retrieval::phantom::sample_dataset;
use tumor_retrieval::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let n_train: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(80);
    let n_query: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);

    let reference = Dataset::from_phantoms(sample_dataset(n_train, 11)?, 11, None)?;
    let queries = Dataset::from_phantoms(sample_dataset(n_query, 12)?, 12, Some(&reference.stats))?;

    let mut models = BTreeMap::new();
    for s in Setting::ALL {
        let mut cfg = TrainConfig::new(s, 1);
        cfg.epochs = epochs;
        eprintln!("training {}", s.label());
        models.insert(s, train(&reference, &cfg)?.model);
    }
    let suite = run_ablation_suite(&models, &Setting::ALL, &reference, &queries, &EvalConfig::default())?;
    write_csv(&suite.reports, std::io::stdout())?;
    Ok(())
}
