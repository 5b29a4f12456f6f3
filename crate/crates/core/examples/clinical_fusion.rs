//! Clinical-enhanced fusion step by step: clinical query tokens, attention
//! of the tokens over the patches, and attention of the patches back over
//! the tokens.

use dscenet::fusion::{build_clinical_query, clinical_query_attention, clinical_shared_attention, fuse, ClinicalVector, FusionParams};
use dscenet::numerics::Matrix;
use dscenet::rng::stream;

fn main() -> dscenet::Result<()> {
    let (n, l, m) = (5, 8, 4);
    let mut rng = stream(2, "example", &[]);
    let params = FusionParams::init(l, m, &mut rng);
    let x = Matrix::new(n, l, (0..n * l).map(|i| ((i * 13 % 11) as f64 - 5.0) / 5.0).collect())?;
    let clinical = ClinicalVector::new(vec![1.0, 0.35, 0.8, 0.0])?;

    let c = build_clinical_query(&clinical, &x, &params, true)?;
    let q = x.matmul(&params.w_q)?;
    let k = x.matmul(&params.w_k)?;
    let v = x.matmul(&params.w_v)?;
    let v_c = clinical_query_attention(&c, &k, &v)?;
    let h = clinical_shared_attention(&q, &c, &v_c)?;
    let fused = fuse(&x, &h)?;

    println!("clinical query tokens C: {:?}", c.shape());
    println!("token values V_c:        {:?}", v_c.shape());
    println!("fused patch features h:  {:?}", h.shape());
    println!("concatenated output:     {:?}", fused.shape());

    let weights = c.matmul(&k.transpose())?.scale(1.0 / (l as f64).sqrt()).softmax_rows();
    for r in 0..m {
        let row: Vec<String> = weights.row(r).iter().map(|w| format!("{w:.3}")).collect();
        println!("token {r} attends to patches [{}]", row.join(", "));
    }
    Ok(())
}
