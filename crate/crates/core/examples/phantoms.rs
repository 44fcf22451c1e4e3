//! Generates a seeded phantom dataset and writes it as RRV1 files.
//!
//!     cargo run --release --example phantoms -- [n] [seed] [out-dir]

use std::path::PathBuf;

use tumor_retrieval::phantom::{phantom_id, sample_dataset, write_dataset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "phantoms".into()));

    let phantoms = sample_dataset(n, seed)?;
    println!("{:<10} {:>7} {:>6} {:>8} {:>22}", "id", "region", "class", "voxels", "semiaxes (mm)");
    for (i, p) in phantoms.iter().enumerate() {
        let a = p.spec.semiaxes;
        println!(
            "{:<10} {:>7} {:>6} {:>8} {:>6.1} {:>6.1} {:>6.1}",
            phantom_id(seed, i),
            p.region.name,
            format!("{:?}", p.class),
            p.mask.count(),
            a[0],
            a[1],
            a[2]
        );
    }
    let items: Vec<_> = phantoms.into_iter().enumerate().map(|(i, p)| (phantom_id(seed, i), p)).collect();
    let manifest = write_dataset(&out, &items)?;
    println!("wrote {} volume/mask pairs to {}", manifest.len(), out.display());
    Ok(())
}
