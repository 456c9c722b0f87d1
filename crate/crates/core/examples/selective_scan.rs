//! Discretize a small diagonal SSM, run the linear-time scan, and compare it
//! with a direct loop over the recurrence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsssm::ssm::{discretize, scan, SsmParams};
use rsssm::Tensor;

fn main() -> rsssm::Result<()> {
    let (d, ds, len) = (3, 4, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = SsmParams {
        a: Tensor::from_fn([d, ds], |_| -rng.gen_range(0.5..4.0)),
        b: Tensor::from_fn([d, ds], |_| rng.gen_range(-1.0..1.0)),
        c: Tensor::from_fn([d, ds], |_| rng.gen_range(-1.0..1.0)),
        delta: Tensor::from_fn([d], |_| rng.gen_range(0.01..0.5)),
    };
    let gates = discretize(&params, None)?;
    let x = Tensor::<f64>::from_fn([len, d], |_| rng.gen_range(-1.0..1.0));
    let (y, state) = scan(&gates, &params.c, &x, None)?;

    let mut h = vec![0.0; d * ds];
    let mut worst: f64 = 0.0;
    for t in 0..len {
        for ch in 0..d {
            let mut out = 0.0;
            for s in 0..ds {
                let i = ch * ds + s;
                h[i] = gates.a_bar.data()[i] * h[i] + gates.b_bar.data()[i] * x.at(&[t, ch]);
                out += params.c.data()[i] * h[i];
            }
            worst = worst.max((out - y.at(&[t, ch])).abs());
        }
    }
    println!(
        "forgetting gate range: {:.4} .. {:.4}",
        min(gates.a_bar.data()),
        max(gates.a_bar.data())
    );
    println!("scanned {len} steps, final position {}", state.position);
    println!("max |scan − loop| = {worst:.3e}");
    Ok(())
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
