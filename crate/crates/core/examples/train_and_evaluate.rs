//! Train a small RS-SSM segmenter on synthetic clips and report mIoU and
//! boundary F-score on held-out clips.

use rsssm::model::{ModelConfig, RsssmModel};
use rsssm::synth::{generate_split, DataConfig, Split};
use rsssm::training::{evaluate, train, OptimConfig, TrainConfig};

fn main() -> rsssm::Result<()> {
    let data = DataConfig {
        height: 32,
        width: 32,
        train_clips: 20,
        eval_clips: 5,
        radius_min: 4.0,
        radius_max: 8.0,
        ..DataConfig::default()
    };
    let train_set = generate_split(&data, 1, Split::Train)?;
    let eval_set = generate_split(&data, 1, Split::Eval)?;
    let cfg = ModelConfig {
        embed_dim: 16,
        state_dim: 4,
        ..ModelConfig::default()
    };
    let mut model = RsssmModel::<f32>::new(cfg, 1)?;
    println!("{} parameters", model.parameter_count());
    let before = evaluate(&model, &eval_set, 255)?;
    let tc = TrainConfig {
        steps: 150,
        optim: OptimConfig {
            lr: 2e-3,
            ..OptimConfig::default()
        },
        ..TrainConfig::default()
    };
    train(&mut model, &train_set, &tc, 1, |l| {
        if l.step % 25 == 0 {
            println!("step {:>3}  loss {:.4}  L_ci {:.4}", l.step, l.loss_total, l.loss_ci);
        }
    })?;
    let after = evaluate(&model, &eval_set, 255)?;
    println!("mIoU {:.3} -> {:.3}", before.miou, after.miou);
    println!("boundary F {:.3} -> {:.3}", before.boundary_f, after.boundary_f);
    Ok(())
}
