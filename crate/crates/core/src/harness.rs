//! Subcommand implementations behind the command-line tool. Each writes its
//! artifacts under the run's output directory and returns a short summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::checkpoint;
use crate::config::{Precision, RunConfig};
use crate::error::{Error, Result};
use crate::fgir;
use crate::gradcheck::{self, GradReport};
use crate::model::{ModelConfig, RsssmModel, Variant};
use crate::params::Bound;
use crate::pnm::{self, Image, PnmKind};
use crate::scalar::Scalar;
use crate::spectral::{BandPartition, SpectralConfig};
use crate::ssm::{self, DiscreteGates};
use crate::synth::{load_split, Split, VideoClip};
use crate::tensor::Tensor;
use crate::training::{self, cross_entropy_var, total_loss, EvalReport, StepLog};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_model<T: Scalar>(cfg: &RunConfig, ckpt: &Path) -> Result<RsssmModel<T>> {
    let mut model = RsssmModel::<T>::new(cfg.model.clone(), cfg.seed)?;
    checkpoint::load_into(ckpt, &mut model.params)?;
    Ok(model)
}

// ---- train ----

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub first: Option<StepLog>,
    pub last: Option<StepLog>,
}

/// Trains `model` on the configured data, writing the step log to `log_path`.
pub fn train_model<T: Scalar>(
    cfg: &RunConfig,
    model: &mut RsssmModel<T>,
    data: &[VideoClip],
    log_path: Option<&Path>,
) -> Result<(Option<StepLog>, Option<StepLog>)> {
    let mut csv = String::from(StepLog::CSV_HEADER);
    csv.push('\n');
    let (mut first, mut last) = (None, None);
    let every = (cfg.train.steps / 10).max(1);
    training::train(model, data, &cfg.train, cfg.seed, |l| {
        csv.push_str(&l.csv_row());
        csv.push('\n');
        if first.is_none() {
            first = Some(*l);
        }
        last = Some(*l);
        if l.step % every == 0 || l.step + 1 == cfg.train.steps {
            log::info!(
                "step {:>5}  loss {:.4}  ce_last {:.4}  l_ci {:.4}  lr {:.2e}",
                l.step,
                l.loss_total,
                l.loss_ce_last,
                l.loss_ci,
                l.lr
            );
        }
    })?;
    if let Some(p) = log_path {
        write_text(p, &csv)?;
    }
    Ok((first, last))
}

fn train_typed<T: Scalar>(cfg: &RunConfig) -> Result<TrainSummary> {
    let data = load_split(&cfg.data, cfg.seed, Split::Train)?;
    let mut model = RsssmModel::<T>::new(cfg.model.clone(), cfg.seed)?;
    let log = cfg.out.join(TRAIN_LOG_FILE);
    let (first, last) = train_model(cfg, &mut model, &data, Some(&log))?;
    let ckpt = cfg.out.join(CHECKPOINT_FILE);
    checkpoint::save(&ckpt, &model.params)?;
    Ok(TrainSummary {
        checkpoint: ckpt,
        log,
        first,
        last,
    })
}

/// `train`: config copy, step log and final checkpoint in `cfg.out`.
pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    cfg.save_to(&cfg.out)?;
    let s = match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg)?,
        Precision::F64 => train_typed::<f64>(cfg)?,
    };
    let mut msg = format!(
        "trained {} for {} steps\ncheckpoint {}\nlog {}\n",
        cfg.model.variant,
        cfg.train.steps,
        s.checkpoint.display(),
        s.log.display()
    );
    if let (Some(a), Some(b)) = (s.first, s.last) {
        let _ = writeln!(
            msg,
            "loss {:.4} -> {:.4}, channel info loss {:.4} -> {:.4}",
            a.loss_total, b.loss_total, a.loss_ci, b.loss_ci
        );
    }
    Ok(msg)
}

// ---- eval ----

fn eval_typed<T: Scalar>(cfg: &RunConfig, ckpt: &Path) -> Result<EvalReport> {
    let model = load_model::<T>(cfg, ckpt)?;
    let clips = load_split(&cfg.data, cfg.seed, Split::Eval)?;
    let report = training::evaluate(&model, &clips, cfg.train.loss.ignore_index)?;
    let pred_dir = cfg.out.join("predictions");
    create_dir(&pred_dir)?;
    for (i, clip) in clips.iter().enumerate() {
        let (pred, _) = training::predict_masks(&model, clip)?;
        let hw = clip.height * clip.width;
        for t in 0..clip.frames {
            let img = Image::new(PnmKind::Gray, clip.width, clip.height, pred[t * hw..(t + 1) * hw].to_vec())?;
            img.write(&pred_dir.join(format!("clip_{i:04}_frame_{t}.pgm")))?;
        }
    }
    Ok(report)
}

/// `eval`: metrics (text and CSV) and predicted masks for the eval split.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<String> {
    let ckpt = checkpoint.map_or_else(|| cfg.out.join(CHECKPOINT_FILE), Path::to_path_buf);
    create_dir(&cfg.out)?;
    let report = match cfg.precision {
        Precision::F32 => eval_typed::<f32>(cfg, &ckpt)?,
        Precision::F64 => eval_typed::<f64>(cfg, &ckpt)?,
    };
    write_text(&cfg.out.join("metrics.txt"), &report.to_text())?;
    write_text(&cfg.out.join("metrics.csv"), &report.to_csv())?;
    Ok(format!(
        "miou {:.4}  boundary_f {:.4}  pixel_accuracy {:.4}\nmetrics {}\n",
        report.miou,
        report.boundary_f,
        report.pixel_accuracy,
        cfg.out.join("metrics.txt").display()
    ))
}

// ---- gradcheck ----

/// Tiny model plus a fixed input batch for the gradient check.
pub fn gradcheck_setup(cfg: &RunConfig) -> Result<(RsssmModel<f64>, Tensor<f64>, Vec<u8>)> {
    let g = &cfg.gradcheck;
    let model_cfg = ModelConfig {
        layers: g.layers,
        embed_dim: g.embed_dim,
        state_dim: g.state_dim,
        classes: g.classes,
        patch: g.patch,
        spectral: SpectralConfig {
            bands: g.bands,
            high_bands: g.high_bands,
            detach: cfg.model.spectral.detach,
        },
        ..cfg.model.clone()
    };
    let model = RsssmModel::new(model_cfg, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6772_6164);
    let clips = Tensor::from_fn([1, g.frames, 3, g.image, g.image], |_| rng.gen_range(0.0..1.0));
    let labels = (0..g.frames * g.image * g.image)
        .map(|_| rng.gen_range(0..g.classes as u8))
        .collect();
    Ok((model, clips, labels))
}

fn gradcheck_loss<'t>(
    cfg: &RunConfig,
    model: &RsssmModel<f64>,
    bound: &Bound<'t, f64>,
    tape: &'t Tape<f64>,
    clips: &Tensor<f64>,
    labels: &[u8],
) -> Result<Var<'t, f64>> {
    let out = model.forward(bound, &tape.constant(clips.clone()))?;
    let ce = cross_entropy_var(&out.logits, labels, cfg.train.loss.ignore_index)?;
    let frames = clips.dim(1);
    Ok(total_loss(
        &ce,
        frames,
        &out.channel_info_loss,
        &cfg.train.loss,
        model.config.variant.uses_spectrum(),
    )?
    .total)
}

/// Per-leaf gradient norms of the channel information loss alone.
pub fn channel_info_grad_norms(model: &RsssmModel<f64>, clips: &Tensor<f64>) -> Result<Vec<(String, f64)>> {
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let out = model.forward(&bound, &tape.constant(clips.clone()))?;
    let parts: Vec<Var<f64>> = out.channel_info_loss.iter().map(|v| v.reshape([1])).collect::<Result<_>>()?;
    let root = Var::concat(&parts, 0)?.mean_all()?;
    if root.requires_grad() {
        root.backward()?;
    }
    Ok(model
        .params
        .iter()
        .zip(bound.grads())
        .map(|(p, g)| (p.name.clone(), g.data().iter().map(|v| v * v).sum::<f64>().sqrt()))
        .collect())
}

#[derive(Debug, Clone)]
pub struct GradcheckOutcome {
    pub report: GradReport,
    /// Gradient norms of the channel information loss; all zero is expected
    /// when the spectrum is detached.
    pub spectrum_grads: Vec<(String, f64)>,
    pub detached: bool,
}

impl GradcheckOutcome {
    pub fn detach_ok(&self) -> bool {
        !self.detached || self.spectrum_grads.iter().all(|(_, n)| *n == 0.0)
    }

    pub fn passed(&self) -> bool {
        self.report.passed() && self.detach_ok()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("tolerance {:e}\n", self.report.tolerance);
        for (module, err) in self.report.by_module() {
            let _ = writeln!(s, "module {module} worst_rel_err {err:.3e}");
        }
        for l in &self.report.leaves {
            let _ = writeln!(
                s,
                "leaf {} worst_rel_err {:.3e} index {} analytic {:.6e} numeric {:.6e} grad_norm {:.3e}",
                l.name, l.worst_rel_err, l.worst_index, l.analytic, l.numeric, l.grad_norm
            );
        }
        let _ = writeln!(s, "spectrum_detached {}", self.detached);
        for (name, n) in &self.spectrum_grads {
            let _ = writeln!(s, "channel_info_grad {name} {n:.3e}");
        }
        let _ = writeln!(s, "result {}", if self.passed() { "pass" } else { "fail" });
        s
    }
}

/// Checks every trainable leaf of a tiny model at 64-bit.
pub fn run_gradcheck(cfg: &RunConfig) -> Result<GradcheckOutcome> {
    if cfg.precision != Precision::F64 {
        log::warn!("gradcheck always runs at f64");
    }
    // Finite differences see the true derivative, so the comparison runs with
    // the spectrum attached; detaching is checked through the L_ci gradients.
    let mut attached = cfg.clone();
    attached.model.spectral.detach = false;
    let (model, clips, labels) = gradcheck_setup(&attached)?;
    let report = gradcheck::check_params(&model.params, cfg.gradcheck.step, cfg.gradcheck.tolerance, |tape, bound| {
        gradcheck_loss(cfg, &model, bound, tape, &clips, &labels)
    })?;
    let (probe, clips, _) = gradcheck_setup(cfg)?;
    Ok(GradcheckOutcome {
        report,
        spectrum_grads: channel_info_grad_norms(&probe, &clips)?,
        detached: probe.config.spectral.detach,
    })
}

/// `gradcheck`: writes `gradcheck.txt`; a failing leaf becomes an error.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<String> {
    create_dir(&cfg.out)?;
    let outcome = run_gradcheck(cfg)?;
    let text = outcome.to_text();
    write_text(&cfg.out.join("gradcheck.txt"), &text)?;
    if !outcome.report.passed() {
        let w = outcome.report.worst().expect("a failing report has leaves");
        return Err(Error::GradCheck {
            leaf: w.name.clone(),
            rel_err: w.worst_rel_err,
        });
    }
    if let Some((name, n)) = outcome.spectrum_grads.iter().find(|(_, n)| outcome.detached && *n != 0.0) {
        return Err(Error::GradCheck {
            leaf: format!("{name} (channel info loss with detached spectrum, gradient norm {n:.3e})"),
            rel_err: f64::INFINITY,
        });
    }
    let mut msg = String::new();
    for (module, err) in outcome.report.by_module() {
        let _ = writeln!(msg, "{module:<10} worst rel err {err:.3e}");
    }
    let _ = writeln!(
        msg,
        "all {} leaves within {:e}",
        outcome.report.leaves.len(),
        outcome.report.tolerance
    );
    Ok(msg)
}

// ---- bench ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub len: usize,
    pub channels: usize,
    pub state: usize,
    pub forward: f64,
    pub backward: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall time of one scan and its backward pass at each length.
pub fn bench_scan<T: Scalar>(lengths: &[usize], channels: usize, state: usize, repeats: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |lo: f64, hi: f64| T::of(rng.gen_range(lo..hi));
    let gates = DiscreteGates {
        a_bar: Tensor::from_fn([channels, state], |_| uniform(0.5, 0.99)),
        b_bar: Tensor::from_fn([channels, state], |_| uniform(-0.1, 0.1)),
    };
    let c = Tensor::from_fn([channels, state], |_| uniform(-1.0, 1.0));
    let mut rows = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let x = Tensor::from_fn([len, channels], |_| uniform(-1.0, 1.0));
        let dy = Tensor::from_fn([len, channels], |_| uniform(-1.0, 1.0));
        // warm-up
        ssm::scan(&gates, &c, &x, None)?;
        let mut fwd = Vec::with_capacity(repeats);
        let mut bwd = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t0 = Instant::now();
            std::hint::black_box(ssm::scan(&gates, &c, &x, None)?);
            fwd.push(t0.elapsed().as_secs_f64());
            let t0 = Instant::now();
            std::hint::black_box(ssm::scan_backward(&gates, &c, &x, None, &dy)?);
            bwd.push(t0.elapsed().as_secs_f64());
        }
        rows.push(BenchRow {
            len,
            channels,
            state,
            forward: median(fwd),
            backward: median(bwd),
        });
    }
    Ok(rows)
}

/// Ratio of forward times between consecutive lengths.
pub fn doubling_ratios(rows: &[BenchRow]) -> Vec<f64> {
    rows.windows(2).map(|w| w[1].forward / w[0].forward).collect()
}

pub const BENCH_HEADER: &str = "L_seq,D,Ds,seconds_forward,seconds_backward";

/// `bench`: `bench.csv` of scan timings.
pub fn cmd_bench(cfg: &RunConfig) -> Result<String> {
    create_dir(&cfg.out)?;
    let (d, ds, b) = (cfg.model.embed_dim, cfg.model.state_dim, &cfg.bench);
    let rows = match cfg.precision {
        Precision::F32 => bench_scan::<f32>(&b.lengths, d, ds, b.repeats, cfg.seed)?,
        Precision::F64 => bench_scan::<f64>(&b.lengths, d, ds, b.repeats, cfg.seed)?,
    };
    let mut csv = format!("{BENCH_HEADER}\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{:e},{:e}", r.len, r.channels, r.state, r.forward, r.backward);
    }
    write_text(&cfg.out.join("bench.csv"), &csv)?;
    let mut msg = csv.clone();
    for (w, ratio) in rows.windows(2).zip(doubling_ratios(&rows)) {
        let _ = writeln!(msg, "L {} -> {}: forward time ratio {ratio:.2}", w[0].len, w[1].len);
    }
    Ok(msg)
}

// ---- ablate ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub miou: f64,
    pub boundary_f: f64,
}

pub const ABLATE_HEADER: &str = "variant,seed,miou,boundary_f";

fn ablate_typed<T: Scalar>(cfg: &RunConfig, mut on_row: impl FnMut(&AblationRow)) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &seed in &cfg.ablate.seeds {
        let train = load_split(&cfg.data, seed, Split::Train)?;
        let eval = load_split(&cfg.data, seed, Split::Eval)?;
        for &variant in &cfg.ablate.variants {
            let mut run = cfg.clone();
            run.seed = seed;
            run.model.variant = variant;
            let mut model = RsssmModel::<T>::new(run.model.clone(), seed)?;
            log::info!("ablate {variant} seed {seed}: training {} steps", run.train.steps);
            train_model(&run, &mut model, &train, None)?;
            let report = training::evaluate(&model, &eval, run.train.loss.ignore_index)?;
            let row = AblationRow {
                variant,
                seed,
                miou: report.miou,
                boundary_f: report.boundary_f,
            };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Trains and evaluates every configured variant on every configured seed.
pub fn run_ablation(cfg: &RunConfig, on_row: impl FnMut(&AblationRow)) -> Result<Vec<AblationRow>> {
    match cfg.precision {
        Precision::F32 => ablate_typed::<f32>(cfg, on_row),
        Precision::F64 => ablate_typed::<f64>(cfg, on_row),
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut csv = format!("{ABLATE_HEADER}\n");
    for r in rows {
        let _ = writeln!(csv, "{},{},{:e},{:e}", r.variant, r.seed, r.miou, r.boundary_f);
    }
    csv
}

/// Mean mIoU and boundary F-score of one variant.
pub fn variant_means(rows: &[AblationRow], variant: Variant) -> Option<(f64, f64)> {
    let v: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == variant).collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    Some((
        v.iter().map(|r| r.miou).sum::<f64>() / n,
        v.iter().map(|r| r.boundary_f).sum::<f64>() / n,
    ))
}

/// `ablate`: `ablate.csv` with one row per (variant, seed).
pub fn cmd_ablate(cfg: &RunConfig) -> Result<String> {
    cfg.save_to(&cfg.out)?;
    let path = cfg.out.join("ablate.csv");
    let mut partial = Vec::new();
    let rows = run_ablation(cfg, |r| {
        partial.push(*r);
        if let Err(e) = write_text(&path, &ablation_csv(&partial)) {
            log::warn!("could not update {}: {e}", path.display());
        }
    })?;
    write_text(&path, &ablation_csv(&rows))?;
    let mut msg = String::new();
    for v in &cfg.ablate.variants {
        if let Some((m, f)) = variant_means(&rows, *v) {
            let _ = writeln!(msg, "{:<9} mean miou {m:.4}  mean boundary_f {f:.4}", v.tag());
        }
    }
    let _ = writeln!(msg, "rows {} written to {}", rows.len(), path.display());
    Ok(msg)
}

// ---- inspect-gates ----

fn inspect_typed<T: Scalar>(cfg: &RunConfig, ckpt: &Path, dir: &Path) -> Result<usize> {
    let model = load_model::<T>(cfg, ckpt)?;
    let clip = load_split(&cfg.data, cfg.seed, Split::Eval)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::invalid("eval split is empty"))?;
    let x = clip.frames_tensor::<T>().reshape([1, clip.frames, 3, clip.height, clip.width])?;
    let (_, traces) = model.predict(&x)?;
    let mut files = 0;
    let mut heat = |name: String, t: &Tensor<T>| -> Result<()> {
        files += 1;
        pnm::write_heatmap(&dir.join(name), t)
    };
    for (l, tr) in traces.iter().enumerate() {
        heat(format!("layer{l}_a.pgm"), &tr.a)?;
        let a_i = match &tr.refined {
            Some(r) => r.a_i.clone(),
            None => fgir::invert_gate(&tr.a, cfg.model.fgir.axis)?,
        };
        heat(format!("layer{l}_a_inv.pgm"), &a_i)?;
        if let Some(r) = &tr.refined {
            heat(format!("layer{l}_a_refined.pgm"), &r.a_r)?;
        }
        heat(format!("layer{l}_theta2_a_bar.pgm"), &tr.gates_theta2.a_bar)?;
        heat(format!("layer{l}_theta2_b_bar.pgm"), &tr.gates_theta2.b_bar)?;
        if let Some(g) = &tr.gates_theta1 {
            heat(format!("layer{l}_theta1_a_bar.pgm"), &g.a_bar)?;
            heat(format!("layer{l}_theta1_b_bar.pgm"), &g.b_bar)?;
        }
        let (n, d) = (tr.features.dim(0), tr.features.dim(1));
        let mut spectrum = String::from("frame,channel,F\n");
        for f in 0..n {
            for c in 0..d {
                let _ = writeln!(spectrum, "{f},{c},{:e}", tr.features.at(&[f, c]).f64());
            }
        }
        write_text(&dir.join(format!("layer{l}_spectrum.csv")), &spectrum)?;
    }
    let p = cfg.model.patch;
    let bands = BandPartition::new(
        crate::spectral::next_pow2(clip.height / p),
        crate::spectral::next_pow2(clip.width / p),
        cfg.model.spectral.bands,
    )?;
    for k in 0..cfg.model.spectral.bands {
        heat(format!("band_{k}.pgm"), &bands.mask::<T>(k))?;
    }
    Ok(files)
}

/// `inspect-gates`: per-layer heatmaps of the forgetting and updating gates,
/// spectrum features of the first eval clip, and the band masks.
pub fn cmd_inspect_gates(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<String> {
    let ckpt = checkpoint.map_or_else(|| cfg.out.join(CHECKPOINT_FILE), Path::to_path_buf);
    let dir = cfg.out.join("gates");
    create_dir(&dir)?;
    let files = match cfg.precision {
        Precision::F32 => inspect_typed::<f32>(cfg, &ckpt, &dir)?,
        Precision::F64 => inspect_typed::<f64>(cfg, &ckpt, &dir)?,
    };
    Ok(format!(
        "{files} heatmaps and per-layer spectrum CSVs written to {}\n",
        dir.display()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::DataConfig;

    fn tiny(out: &Path) -> RunConfig {
        let mut cfg = RunConfig {
            out: out.to_path_buf(),
            ..RunConfig::default()
        };
        cfg.data = DataConfig {
            height: 16,
            width: 16,
            frames: 2,
            train_clips: 2,
            eval_clips: 2,
            shapes: 2,
            radius_min: 3.0,
            radius_max: 5.0,
            ..DataConfig::default()
        };
        cfg.model.embed_dim = 8;
        cfg.model.state_dim = 4;
        cfg.model.layers = 1;
        cfg.model.spectral.bands = 4;
        cfg.model.spectral.high_bands = 2;
        cfg.train.steps = 2;
        cfg
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn train_eval_inspect_produce_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        cmd_train(&cfg).unwrap();
        for f in [CHECKPOINT_FILE, TRAIN_LOG_FILE, crate::config::CONFIG_FILE] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let log = fs::read_to_string(dir.path().join(TRAIN_LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 3);
        cmd_eval(&cfg, None).unwrap();
        assert!(dir.path().join("predictions/clip_0001_frame_1.pgm").exists());
        cmd_inspect_gates(&cfg, None).unwrap();
        assert!(dir.path().join("gates/layer0_a_refined.pgm").exists());
        let csv = fs::read_to_string(dir.path().join("gates/layer0_spectrum.csv")).unwrap();
        assert!(csv.starts_with("frame,channel,F\n"));
        assert_eq!(csv.lines().count(), 1 + 2 * 8);
    }

    #[test]
    fn no_cwap_refined_heatmap_equals_inverted() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.model.variant = Variant::NoCwap;
        cmd_train(&cfg).unwrap();
        cmd_inspect_gates(&cfg, None).unwrap();
        let read = |n: &str| fs::read(dir.path().join("gates").join(n)).unwrap();
        assert_eq!(read("layer0_a_refined.pgm"), read("layer0_a_inv.pgm"));
        assert_eq!(read("layer0_a_refined.txt"), read("layer0_a_inv.txt"));
    }

    #[test]
    fn bench_rows_cover_lengths() {
        let rows = bench_scan::<f64>(&[64, 128], 4, 2, 3, 0).unwrap();
        assert_eq!(rows.iter().map(|r| r.len).collect::<Vec<_>>(), vec![64, 128]);
        assert!(rows.iter().all(|r| r.forward > 0.0 && r.backward > 0.0));
        assert_eq!(doubling_ratios(&rows).len(), 1);
    }

    #[test]
    fn ablation_csv_shape() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.train.steps = 1;
        cfg.ablate.seeds = vec![0, 1, 2];
        cfg.data.train_clips = 1;
        cfg.data.eval_clips = 1;
        cmd_ablate(&cfg).unwrap();
        let csv = fs::read_to_string(dir.path().join("ablate.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], ABLATE_HEADER);
        assert_eq!(lines.len(), 13);
        for v in Variant::ALL {
            assert_eq!(lines.iter().filter(|l| l.starts_with(&format!("{},", v.tag()))).count(), 3);
        }
    }

    #[test]
    fn missing_checkpoint_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        assert!(matches!(cmd_eval(&cfg, None), Err(Error::Io { .. })));
    }
}
