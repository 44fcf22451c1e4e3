//! Extracts the 72-feature radiomics vector from one phantom and from a
//! digital ball.
//!
//!     cargo run --release --example radiomics -- [seed]

use tumor_retrieval::phantom::{dataset_spec, generate_phantom};
use tumor_retrieval::radiomics::{extract_all, feature_names, shape_features, SHAPE_NAMES};
use tumor_retrieval::volume::{Geometry, RoiMask};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let p = generate_phantom(&dataset_spec(seed, 0))?;
    let r = extract_all(&p.volume, &p.mask)?;

    println!("phantom seed {seed}: {} tumor voxels in region {}", p.mask.count(), p.region.name);
    for (name, v) in feature_names().into_iter().zip(&r.values) {
        println!("  {name:<36} {v:>14.6}");
    }

    let r0 = 8.0;
    let n = 2 * r0 as usize + 6;
    let c = (n / 2) as f64;
    let ball = RoiMask::from_fn(Geometry::unit([n; 3]), |v| v.iter().map(|&x| (x as f64 - c).powi(2)).sum::<f64>() <= r0 * r0);
    let shape = shape_features(&ball, [1.0; 3])?;
    println!("\ndigital ball r = {r0} (analytic volume {:.1})", 4.0 / 3.0 * std::f64::consts::PI * r0.powi(3));
    for (name, v) in SHAPE_NAMES.iter().zip(shape) {
        println!("  {name:<36} {v:>14.6}");
    }
    Ok(())
}
