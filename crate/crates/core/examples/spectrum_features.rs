//! Radial band energies of diagonal sinusoidal gratings: finer gratings move
//! their energy into higher bands.

use rsssm::spectral::{fft2d, magnitude, spectrum_features, SpectralConfig};
use rsssm::Tensor;

fn main() -> rsssm::Result<()> {
    let n = 32;
    let freqs = [1.0, 6.0, 15.0];
    let maps = Tensor::<f64>::from_fn([freqs.len(), n, n], |i| {
        let phase = 2.0 * std::f64::consts::PI * freqs[i[0]] * (i[1] + i[2]) as f64 / n as f64;
        1.0 + phase.cos()
    });
    let cfg = SpectralConfig::default();
    let feats = spectrum_features(&maps, &cfg)?;
    for (c, f) in freqs.iter().enumerate() {
        let row: Vec<String> = (0..cfg.bands).map(|k| format!("{:.3}", feats.distribution.at(&[c, k]))).collect();
        println!("grating f={f:>4}: bands [{}]  F = {:.4}", row.join(" "), feats.features.data()[c]);
    }

    let plane = fft2d(&maps.narrow(0, 0, 1)?)?;
    let energy: f64 = magnitude(&plane).data().iter().map(|m| m * m).sum();
    let pixels: f64 = maps.narrow(0, 0, 1)?.data().iter().map(|v| v * v).sum();
    println!("Parseval: Σ|X|²/N = {:.6}, Σx² = {:.6}", energy / (n * n) as f64, pixels);
    Ok(())
}
