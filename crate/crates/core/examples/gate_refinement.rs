//! Refine a forgetting gate: invert its channel range, weight channels by
//! spectrum features, and blend.

use rsssm::fgir::{refine, FgirConfig};
use rsssm::Tensor;

fn main() -> rsssm::Result<()> {
    // four channels, two states; channel 0 forgets fastest
    let a = Tensor::<f64>::from_f64([4, 2], &[-6.0, -5.0, -2.0, -1.5, -1.0, -0.8, -0.5, -0.6])?;
    // spectrum features for two images; channel 3 carries the most high-frequency energy
    let f = Tensor::<f64>::from_f64([2, 4], &[0.1, 0.2, 0.3, 0.9, 0.2, 0.1, 0.4, 0.8])?;
    let r = refine(&a, &f, &FgirConfig::default())?;
    println!("channel  beta    alpha   A            A^I          A^R");
    for c in 0..4 {
        println!(
            "{c:>7}  {:.4}  {:.4}  {:>5.2} {:>5.2}  {:>5.2} {:>5.2}  {:>5.2} {:>5.2}",
            r.beta.data()[c],
            r.alpha.data()[c],
            a.at(&[c, 0]),
            a.at(&[c, 1]),
            r.a_i.at(&[c, 0]),
            r.a_i.at(&[c, 1]),
            r.a_r.at(&[c, 0]),
            r.a_r.at(&[c, 1]),
        );
    }
    Ok(())
}
