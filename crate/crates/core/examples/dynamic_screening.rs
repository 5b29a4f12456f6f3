//! Runs the screening gate on one bag: a random patch grid is encoded, each
//! patch receives a gate value in (0, 1) and the screened features are
//! `x * gate + x`.

use dscenet::rng::stream;
use dscenet::screening::{encode_grid, select, GridPolicy, ScreeningParams};
use dscenet::numerics::Matrix;

fn main() -> dscenet::Result<()> {
    let (n, l) = (6, 8);
    let mut rng = stream(1, "example", &[]);
    let params = ScreeningParams::init(l, &mut rng);
    let x = Matrix::new(n, l, (0..n * l).map(|i| ((i * 37 % 17) as f64 - 8.0) / 4.0).collect())?;

    let train_enc = encode_grid(n, &params, GridPolicy::Random(&mut rng))?;
    let eval_enc = encode_grid(n, &params, GridPolicy::Identity)?;
    println!("training grid {:?}", train_enc.grid);
    println!("eval grid     {:?}", eval_enc.grid);

    let sel = select(&x, &eval_enc, &params)?;
    for i in 0..n {
        let gate = sel.xi.get(i, 0);
        let ratio = sel.s.get(i, 0) / x.get(i, 0);
        println!("patch {i}: gate {gate:.4}  s/x {ratio:.4}");
    }
    let amplified = sel
        .s
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .filter(|(_, &xv)| xv != 0.0)
        .all(|(s, xv)| s.abs() > xv.abs() && s.abs() < 2.0 * xv.abs());
    println!("every nonzero feature amplified into (|x|, 2|x|): {amplified}");
    Ok(())
}
