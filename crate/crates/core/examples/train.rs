//! Trains one ablation setting on in-memory phantoms, then writes the
//! checkpoint and the per-epoch loss trace.
//!
//!     cargo run --release --example train -- [setting] [epochs] [n] [out.rrnn]

use std::fs::File;

use tumor_retrieval::dataset::Dataset;
use tumor_retrieval::model::{write_checkpoint, Setting};
use tumor_retrieval::phantom::sample_dataset;
use tumor_retrieval::train::{train_with, write_loss_trace, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let setting = match args.next() {
        Some(s) => Setting::from_name(&s).ok_or(format!("unknown setting {s}"))?,
        None => Setting::ImageRadiomicsApe,
    };
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(80);
    let out = args.next().unwrap_or_else(|| format!("{}.rrnn", setting.name()));

    let data = Dataset::from_phantoms(sample_dataset(n, 11)?, 11, None)?;
    let mut cfg = TrainConfig::new(setting, 1);
    cfg.epochs = epochs;
    println!("training {} ({}) on {n} tumors for {epochs} epochs", setting.name(), setting.label());
    let run = train_with(&data, &cfg, |e| {
        println!("epoch {:>3}  seg {:.4}  con {:.4}  cls {:.4}  total {:.4}", e.epoch, e.seg, e.con, e.cls, e.total);
    })?;

    write_checkpoint(&run.model, &out)?;
    write_loss_trace(&run.trace, File::create(format!("{out}.losses.csv"))?)?;
    println!("checkpoint: {out}");
    Ok(())
}
