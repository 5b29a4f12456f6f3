//! Trains the full model on the default synthetic dataset and reports
//! test-set metrics.
//!
//! ```text
//! cargo run --release --example train_full -- [epochs] [seed]
//! ```

use std::time::Instant;

use dscenet::data::{generate_synthetic, GenConfig};
use dscenet::metrics::percent;
use dscenet::model::{ModelConfig, ModelParams, Variant};
use dscenet::training::{evaluate, train_with_progress, TrainConfig};

fn main() -> dscenet::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(Ok(200), |a| a.parse()).expect("epochs must be an integer");
    let seed = args.next().map_or(Ok(0), |a| a.parse()).expect("seed must be an integer");

    let start = Instant::now();
    let gen = GenConfig::default();
    let (bags, mut manifest) = generate_synthetic(&gen, seed)?;
    print!("{}", manifest.assign_splits(&bags, seed, false)?);
    let data = manifest.partition(&bags)?;

    let model_cfg = ModelConfig::new(gen.feature_dim, gen.clinical_dim, Variant::FULL);
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let params = ModelParams::init(&model_cfg, seed)?;
    let outcome = train_with_progress(&data.train, &data.val, params, &model_cfg, &cfg, |r| {
        if r.epoch % 10 == 0 || r.epoch == 1 {
            println!(
                "epoch {:>3}  train loss {:.4}  val loss {:.4}  val acc {}  val auc {}",
                r.epoch,
                r.train_loss,
                r.val_loss,
                percent(r.val_accuracy),
                percent(r.val_macro_auc)
            );
        }
    })?;
    println!("selected epoch {} (val macro-AUC {})", outcome.best_epoch, percent(outcome.best_val_macro_auc));

    let test = evaluate(&outcome.best, &data.test, &model_cfg)?;
    println!("test accuracy {}  macro-AUC {}", percent(test.accuracy), percent(test.macro_auc()));
    for c in &test.per_class {
        println!(
            "  {:<7} precision {}  recall {}  f1 {}  auc {}",
            c.label.name(),
            percent(c.precision),
            percent(c.recall),
            percent(c.f1),
            c.auc.map_or("n/a".into(), percent)
        );
    }
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
