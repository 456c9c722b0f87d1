//! Build a small expression on the tape, backpropagate, and compare every
//! parameter gradient with central finite differences.

use rsssm::gradcheck::check_params;
use rsssm::{ParamStore, Tensor};

fn main() -> rsssm::Result<()> {
    let mut store = ParamStore::new();
    let w = store.add("mlp.w", Tensor::<f64>::from_f64([3, 2], &[0.3, -0.2, 0.5, 0.1, -0.4, 0.7])?, true);
    let b = store.add("mlp.b", Tensor::from_vec(vec![0.05, -0.1]), false);
    let x = Tensor::<f64>::from_f64([4, 3], &[0.1, 0.2, 0.3, -0.5, 0.4, 0.0, 1.0, -1.0, 0.5, 0.2, 0.2, 0.2])?;

    let report = check_params(&store, 1e-5, 1e-6, |tape, bound| {
        let h = tape.constant(x.clone()).linear(&bound.var(w), Some(&bound.var(b)))?;
        h.gelu()?.softmax(1)?.log()?.mean_all()?.neg()
    })?;
    for leaf in &report.leaves {
        println!(
            "{:<6} worst rel err {:.2e} (analytic {:+.6}, numeric {:+.6})",
            leaf.name, leaf.worst_rel_err, leaf.analytic, leaf.numeric
        );
    }
    println!("passed: {}", report.passed());
    Ok(())
}
