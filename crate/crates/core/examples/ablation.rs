//! Trains the four ablation arms (with and without dynamic screening and
//! clinical fusion) on fresh synthetic data for several seeds and prints
//! the table for each seed plus a win count per arm.
//!
//! ```text
//! cargo run --release --example ablation -- [epochs] [seeds] [feature_dim]
//! ```

use std::time::Instant;

use dscenet::data::{generate_synthetic, GenConfig};
use dscenet::model::Variant;
use dscenet::training::{ablate, ablation_table, TrainConfig};

fn main() -> dscenet::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(Ok(40), |a| a.parse()).expect("epochs must be an integer");
    let seeds: u64 = args.next().map_or(Ok(5), |a| a.parse()).expect("seeds must be an integer");
    let feature_dim = args.next().map_or(Ok(16), |a| a.parse()).expect("feature_dim must be an integer");

    let gen = GenConfig {
        feature_dim,
        ..GenConfig::default()
    };
    let start = Instant::now();
    let mut top = [0usize; 4];
    let mut bottom = [0usize; 4];
    let mut mean = [0.0f64; 4];
    for seed in 0..seeds {
        let (bags, mut manifest) = generate_synthetic(&gen, seed)?;
        manifest.assign_splits(&bags, seed, false)?;
        let data = manifest.partition(&bags)?;
        let base = TrainConfig {
            epochs,
            seed,
            ..TrainConfig::default()
        };
        let rows = ablate(&data, &base, false, |_| {})?;
        println!("seed {seed}\n{}", ablation_table(&rows));

        let aucs: Vec<f64> = rows.iter().map(|r| r.test.macro_auc()).collect();
        let best = aucs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let worst = aucs.iter().cloned().fold(f64::INFINITY, f64::min);
        for (i, &a) in aucs.iter().enumerate() {
            top[i] += usize::from(a == best);
            bottom[i] += usize::from(a == worst && aucs.iter().filter(|&&b| b == worst).count() == 1);
            mean[i] += a / seeds as f64;
        }
    }

    println!("{:<18}{:>10}{:>10}{:>14}", "arm", "top AUC", "lowest", "mean AUC");
    for (i, v) in Variant::ALL.iter().enumerate() {
        println!("{:<18}{:>10}{:>10}{:>13.2}%", v.label(), top[i], bottom[i], mean[i] * 100.0);
    }
    println!("{seeds} seeds, {epochs} epochs, L={feature_dim}, {:.1?}", start.elapsed());
    Ok(())
}
