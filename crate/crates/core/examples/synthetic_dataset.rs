//! Generates the default synthetic dataset, writes it to a directory, splits
//! it 6:2:2 per class and reloads the normalized validation split.
//!
//! ```text
//! cargo run --example synthetic_dataset -- [output-dir] [seed]
//! ```

use std::path::PathBuf;

use dscenet::data::{generate_synthetic, write_dataset, DatasetManifest, GenConfig, Split, MANIFEST_FILE};

fn main() -> dscenet::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().map_or_else(|| std::env::temp_dir().join("dscenet-synthetic"), PathBuf::from);
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed must be an integer"));

    let gen = GenConfig::default();
    let (bags, mut manifest) = generate_synthetic(&gen, seed)?;
    let table = manifest.assign_splits(&bags, seed, false)?;
    std::fs::create_dir_all(&dir).map_err(|e| dscenet::Error::Io { path: dir.clone(), source: e })?;
    write_dataset(&dir, &bags, &manifest)?;
    println!("{} bags written to {}", bags.len(), dir.display());
    print!("{table}");

    let reloaded = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
    println!("manifest sha256 {}", reloaded.hash()?);
    let val = reloaded.load_split(&dir, Split::Val)?;
    let first = &val[0];
    println!(
        "first validation case {} ({}): {} patches x {} features",
        first.case_id,
        first.label,
        first.n_patches(),
        first.feature_dim()
    );
    for (ind, v) in reloaded.indicators.iter().zip(&first.clinical) {
        println!("  {:<18} {v:.3}", ind.name);
    }
    Ok(())
}
