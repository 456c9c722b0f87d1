//! Save a model's parameters, reload them into a fresh model, and confirm
//! predictions match bit for bit.

use rsssm::checkpoint;
use rsssm::model::{ModelConfig, RsssmModel};
use rsssm::Tensor;

fn main() -> rsssm::Result<()> {
    let cfg = ModelConfig {
        embed_dim: 8,
        state_dim: 4,
        ..ModelConfig::default()
    };
    let model = RsssmModel::<f64>::new(cfg.clone(), 3)?;
    let path = std::env::temp_dir().join("rsssm-example.ckpt");
    checkpoint::save(&path, &model.params)?;

    let mut fresh = RsssmModel::<f64>::new(cfg, 99)?;
    checkpoint::load_into(&path, &mut fresh.params)?;
    let x = Tensor::<f64>::from_fn([1, 2, 3, 16, 16], |i| ((i[3] * 7 + i[4] * 3 + i[1]) % 11) as f64 / 10.0);
    let (a, _) = model.predict(&x)?;
    let (b, _) = fresh.predict(&x)?;
    println!(
        "{} tensors, {} bytes",
        model.params.len(),
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0)
    );
    println!("predictions identical: {}", a == b);
    Ok(())
}
