//! Time the scan and its adjoint at doubling sequence lengths.

use rsssm::harness::{bench_scan, doubling_ratios};

fn main() -> rsssm::Result<()> {
    let rows = bench_scan::<f64>(&[1024, 2048, 4096, 8192], 32, 8, 5, 0)?;
    for r in &rows {
        println!(
            "L={:>5}  forward {:.3} ms  backward {:.3} ms",
            r.len,
            r.forward * 1e3,
            r.backward * 1e3
        );
    }
    for ratio in doubling_ratios(&rows) {
        println!("doubling ratio {ratio:.2}");
    }
    Ok(())
}
