//! Builds a metrics report from labels and class probabilities and prints
//! the confusion matrix, per-class scores and one ROC curve.

use dscenet::metrics::{percent, report, roc_csv};

fn main() -> dscenet::Result<()> {
    let labels = [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3];
    let probs = [
        [0.70, 0.10, 0.10, 0.10],
        [0.40, 0.30, 0.20, 0.10],
        [0.20, 0.50, 0.20, 0.10],
        [0.10, 0.80, 0.05, 0.05],
        [0.25, 0.25, 0.25, 0.25],
        [0.10, 0.60, 0.20, 0.10],
        [0.05, 0.05, 0.60, 0.30],
        [0.10, 0.10, 0.40, 0.40],
        [0.20, 0.10, 0.30, 0.40],
        [0.10, 0.10, 0.20, 0.60],
        [0.05, 0.05, 0.10, 0.80],
        [0.30, 0.10, 0.10, 0.50],
    ];
    let r = report(&labels, &probs)?;
    println!("accuracy {}  macro-AUC {}", percent(r.accuracy), percent(r.macro_auc()));
    println!(
        "macro precision {}  recall {}  F1 {}",
        percent(r.macro_avg.precision),
        percent(r.macro_avg.recall),
        percent(r.macro_avg.f1)
    );
    print!("\n{}", r.confusion_csv());
    for c in &r.per_class {
        println!(
            "{:<7} P {:>7}  R {:>7}  F1 {:>7}  AUC {:>7}",
            c.label.name(),
            percent(c.precision),
            percent(c.recall),
            percent(c.f1),
            c.auc.map_or("n/a".into(), percent)
        );
    }
    if let Some(curve) = &r.roc[0] {
        print!("\nROC for PV\n{}", roc_csv(curve));
    }
    println!("\n{}", r.to_json()?);
    Ok(())
}
