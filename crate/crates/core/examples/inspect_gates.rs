//! Run one clip through a fresh model and print the gate statistics of each layer.

use rsssm::model::{ModelConfig, RsssmModel, Variant};
use rsssm::synth::{generate_split, DataConfig, Split};

fn main() -> rsssm::Result<()> {
    let data = DataConfig {
        eval_clips: 1,
        ..DataConfig::default()
    };
    let clip = &generate_split(&data, 5, Split::Eval)?[0];
    let x = clip.frames_tensor::<f64>().reshape([1, clip.frames, 3, clip.height, clip.width])?;
    for variant in Variant::ALL {
        let cfg = ModelConfig {
            variant,
            embed_dim: 16,
            state_dim: 4,
            ..ModelConfig::default()
        };
        let (_, traces) = RsssmModel::<f64>::new(cfg, 5)?.predict(&x)?;
        for (l, t) in traces.iter().enumerate() {
            let alpha = t
                .refined
                .as_ref()
                .map(|r| r.alpha.data().iter().sum::<f64>() / r.alpha.numel() as f64);
            let ab = t.gates_theta1.as_ref().unwrap_or(&t.gates_theta2).a_bar.data();
            println!(
                "{:<9} layer {l}: L_ci {:.4}  mean alpha {}  mean forgetting gate {:.4}",
                variant.tag(),
                t.channel_info_loss,
                alpha.map_or("-".into(), |a| format!("{a:.4}")),
                ab.iter().sum::<f64>() / ab.len() as f64,
            );
        }
    }
    Ok(())
}
