use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rsssm::pnm::Image;
use rsssm::synth::{generate_split, Split};

const TINY: &str = r#"
seed = 3

[model]
layers = 1
embed_dim = 8
state_dim = 4

[model.spectral]
bands = 4
high_bands = 2

[train]
steps = 3

[train.optim]
lr = 1e-3

[data]
height = 16
width = 16
frames = 2
train_clips = 3
eval_clips = 2
shapes = 2
radius_min = 3.0
radius_max = 5.0
"#;

fn rsssm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsssm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path.to_string_lossy().into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&rsssm(&[])), 1);
    assert_eq!(code(&rsssm(&["fly"])), 1);
    assert_eq!(code(&rsssm(&["train", "--precision", "f16"])), 1);
    assert_eq!(code(&rsssm(&["train", "--variant", "Tri-V-SSM"])), 1);
    assert_eq!(code(&rsssm(&["--help"])), 0);
}

#[test]
fn config_errors_name_line_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "seed = 1\n\n[train]\nstepz = 4\n").unwrap();
    let out = rsssm(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4") && err.contains("stepz"), "{err}");
}

#[test]
fn zero_step_training_saves_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = rsssm(&["train", "--config", &cfg, "--steps", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let run = rsssm::config::RunConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(run.train.steps, 0);
    let fresh = rsssm::model::RsssmModel::<f64>::new(run.model, run.seed).unwrap();
    let saved = rsssm::checkpoint::load_any(&out.join("model.ckpt")).unwrap();
    let expected = fresh.params.named_tensors();
    assert_eq!(saved.len(), expected.len());
    for ((n, t), (m, e)) in saved.iter().zip(&expected) {
        assert_eq!(n, m);
        assert_eq!(&t.to::<f64>(), e);
    }
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log, "step,loss_total,loss_ce_last,loss_ce_sum,loss_ci,lr\n");
}

#[test]
fn eval_is_deterministic_and_matches_independent_recount() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    assert_eq!(code(&rsssm(&["train", "--config", &cfg, "--out", out_s])), 0);
    assert_eq!(code(&rsssm(&["eval", "--config", &cfg, "--out", out_s])), 0);
    let first = fs::read(out.join("metrics.txt")).unwrap();
    let first_csv = fs::read(out.join("metrics.csv")).unwrap();
    assert_eq!(code(&rsssm(&["eval", "--config", &cfg, "--out", out_s])), 0);
    assert_eq!(first, fs::read(out.join("metrics.txt")).unwrap());
    assert_eq!(first_csv, fs::read(out.join("metrics.csv")).unwrap());

    // recount IoU from the written prediction masks and regenerated labels
    let run = rsssm::config::RunConfig::load(&out.join("config.toml")).unwrap();
    let clips = generate_split(&run.data, run.seed, Split::Eval).unwrap();
    let k = run.model.classes;
    let (mut inter, mut union) = (vec![0u64; k], vec![0u64; k]);
    for (i, clip) in clips.iter().enumerate() {
        for t in 0..clip.frames {
            let pred = Image::read(&out.join(format!("predictions/clip_{i:04}_frame_{t}.pgm"))).unwrap();
            for (&p, &l) in pred.data.iter().zip(clip.mask(t)) {
                for c in 0..k as u8 {
                    let (in_p, in_l) = (p == c, l == c);
                    inter[c as usize] += (in_p && in_l) as u64;
                    union[c as usize] += (in_p || in_l) as u64;
                }
            }
        }
    }
    let ious: Vec<f64> = (0..k)
        .filter(|&c| union[c] > 0)
        .map(|c| inter[c] as f64 / union[c] as f64)
        .collect();
    let miou = ious.iter().sum::<f64>() / ious.len() as f64;
    let text = String::from_utf8(first).unwrap();
    let reported: f64 = text.lines().find_map(|l| l.strip_prefix("miou ")).unwrap().parse().unwrap();
    assert!((reported - miou).abs() < 1e-6, "{reported} vs {miou}");
}

#[test]
fn gradcheck_passes_and_reports_modules() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc");
    let o = rsssm(&["gradcheck", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("gradcheck.txt")).unwrap();
    for m in ["encoder", "layer0", "layer1", "decoder"] {
        assert!(report.contains(&format!("module {m} worst_rel_err")), "{m}");
    }
    assert!(report.ends_with("result pass\n"));
}

#[test]
fn gradcheck_detached_spectrum_has_no_channel_info_gradient() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc");
    let o = rsssm(&["gradcheck", "--detach-spectrum", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("gradcheck.txt")).unwrap();
    let norms: Vec<&str> = report.lines().filter(|l| l.starts_with("channel_info_grad ")).collect();
    assert!(!norms.is_empty());
    assert!(norms.iter().all(|l| l.ends_with(" 0.000e0")), "{norms:?}");
}

#[test]
fn numerical_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("strict.toml");
    fs::write(&path, "[gradcheck]\ntolerance = 1e-30\n").unwrap();
    let out = dir.path().join("gc");
    let o = rsssm(&["gradcheck", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gradient check failed for `"));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.toml");
    fs::write(
        &path,
        "[model]\nembed_dim = 4\nstate_dim = 2\n[bench]\nlengths = [128, 256]\nrepeats = 3\n",
    )
    .unwrap();
    let out = dir.path().join("b");
    let o = rsssm(&["bench", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "L_seq,D,Ds,seconds_forward,seconds_backward");
    assert!(lines[1].starts_with("128,4,2,") && lines[2].starts_with("256,4,2,"));
}

#[test]
fn missing_dataset_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.toml");
    let missing = dir.path().join("nowhere");
    fs::write(&cfg_path, format!("{TINY}dir = {:?}\n", missing.to_str().unwrap())).unwrap();
    let o = rsssm(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dataset not found"));
}
