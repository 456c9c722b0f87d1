//! Losses, the AdamW optimizer with a poly schedule, and the train/eval loops.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::metrics::{BoundaryStats, ConfusionMatrix};
use crate::model::{argmax_classes, RsssmModel};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::synth::VideoClip;
use crate::tensor::Tensor;

pub const IGNORE_INDEX: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight on the sum of per-frame cross-entropies.
    pub lambda: f64,
    /// Weight on the channel information loss.
    pub lambda_i: f64,
    pub ignore_index: u8,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.5,
            lambda_i: 0.1,
            ignore_index: IGNORE_INDEX,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda_i >= 0.0) {
            return Err(Error::invalid(format!(
                "loss weights must be non-negative (lambda = {}, lambda_i = {})",
                self.lambda, self.lambda_i
            )));
        }
        Ok(())
    }
}

fn check_labels(labels: &[u8], classes: usize, ignore: u8) -> Result<()> {
    match labels.iter().find(|&&l| l != ignore && l as usize >= classes) {
        Some(l) => Err(Error::invalid(format!("label {l} outside 0..{classes} (ignore index {ignore})"))),
        None => Ok(()),
    }
}

/// Mean over non-ignored pixels of `−log softmax(logits)[label]` for one
/// `[K×H×W]` image. Zero when every pixel is ignored.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[u8], ignore: u8) -> Result<f64> {
    let k = logits.dim(0);
    let hw = logits.numel() / k.max(1);
    if logits.rank() != 3 || labels.len() != hw {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    check_labels(labels, k, ignore)?;
    let (ce, _) = image_ce(&logits.to_f64_vec(), labels, k, hw, ignore, false);
    Ok(ce)
}

/// Cross-entropy of one image, optionally returning `∂/∂logits`.
fn image_ce(x: &[f64], labels: &[u8], k: usize, hw: usize, ignore: u8, grad: bool) -> (f64, Vec<f64>) {
    let counted = labels.iter().filter(|&&l| l != ignore).count();
    let mut g = if grad { vec![0.0; k * hw] } else { Vec::new() };
    if counted == 0 {
        return (0.0, g);
    }
    let mut total = 0.0;
    for (p, &label) in labels.iter().enumerate() {
        if label == ignore {
            continue;
        }
        let top = (0..k).map(|c| x[c * hw + p]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..k).map(|c| (x[c * hw + p] - top).exp()).sum();
        total += z.ln() + top - x[label as usize * hw + p];
        if grad {
            for c in 0..k {
                let soft = (x[c * hw + p] - top).exp() / z;
                g[c * hw + p] = (soft - (c == label as usize) as u8 as f64) / counted as f64;
            }
        }
    }
    (total / counted as f64, g)
}

/// Per-image cross-entropy of `[N×K×H×W]` logits against `N·H·W` labels → `[N]`.
pub fn cross_entropy_var<'t, T: Scalar>(logits: &Var<'t, T>, labels: &[u8], ignore: u8) -> Result<Var<'t, T>> {
    let value = logits.value();
    let s = value.shape().to_vec();
    if s.len() != 4 || labels.len() != s[0] * s[2] * s[3] {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: s,
            rhs: vec![labels.len()],
        });
    }
    let (n, k, hw) = (s[0], s[1], s[2] * s[3]);
    check_labels(labels, k, ignore)?;
    let x = value.to_f64_vec();
    let mut out = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n * k * hw);
    for i in 0..n {
        let (ce, g) = image_ce(&x[i * k * hw..(i + 1) * k * hw], &labels[i * hw..(i + 1) * hw], k, hw, ignore, true);
        out.push(T::of(ce));
        grads.extend(g.into_iter().map(T::of));
    }
    logits
        .tape()
        .custom(&[*logits], Tensor::from_parts(vec![n], out), "cross_entropy", move |g| {
            let data = grads.iter().enumerate().map(|(j, &d)| d * g.data()[j / (k * hw)]).collect();
            vec![Some(Tensor::from_parts(vec![n, k, s[2], s[3]], data))]
        })
}

/// The objective terms of one batch.
pub struct LossTerms<'t, T: Scalar> {
    pub total: Var<'t, T>,
    pub ce_last: Var<'t, T>,
    pub ce_sum: Var<'t, T>,
    pub ci: Var<'t, T>,
}

/// `CE(last frame) + λ·Σ_t CE(frame t) + λ_i·L_ci`, averaged over clips.
///
/// `frame_ce` holds `[B·T]` per-frame losses, clip-major. The last frame is
/// counted both on its own and inside the sum. `layer_ci` is averaged over
/// layers; it only enters the total when `optimize_ci` is set.
pub fn total_loss<'t, T: Scalar>(
    frame_ce: &Var<'t, T>,
    frames: usize,
    layer_ci: &[Var<'t, T>],
    cfg: &LossConfig,
    optimize_ci: bool,
) -> Result<LossTerms<'t, T>> {
    let n = frame_ce.shape()[0];
    if frames == 0 || n % frames != 0 {
        return Err(Error::invalid(format!("{n} frame losses do not split into clips of {frames}")));
    }
    let per_clip = frame_ce.reshape([n / frames, frames])?;
    let ce_last = per_clip.narrow(1, frames - 1, 1)?.mean_all()?;
    let ce_sum = per_clip.sum(1, false)?.mean_all()?;
    let tape = frame_ce.tape();
    let ci = if layer_ci.is_empty() {
        tape.constant(Tensor::scalar(T::zero()))
    } else {
        let stacked: Vec<Var<'t, T>> = layer_ci.iter().map(|v| v.reshape([1])).collect::<Result<_>>()?;
        Var::concat(&stacked, 0)?.mean_all()?
    };
    let mut total = ce_last.add(&ce_sum.mul_scalar(T::of(cfg.lambda))?)?;
    if optimize_ci {
        total = total.add(&ci.mul_scalar(T::of(cfg.lambda_i))?)?;
    }
    Ok(LossTerms {
        total,
        ce_last,
        ce_sum,
        ci,
    })
}

// ---- optimizer ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Exponent of the poly schedule.
    pub power: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 6e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            power: 1.0,
        }
    }
}

/// `lr0 · (1 − t/t_max)^power`, zero from `t_max` on.
pub fn poly_lr(lr0: f64, step: usize, total: usize, power: f64) -> f64 {
    if total == 0 || step >= total {
        return 0.0;
    }
    lr0 * (1.0 - step as f64 / total as f64).powf(power)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Applied { lr: f64 },
    Skipped,
}

/// AdamW with decoupled weight decay on parameters flagged `decay`.
#[derive(Debug, Clone)]
pub struct AdamW<T: Scalar> {
    pub config: OptimConfig,
    pub total_steps: usize,
    /// Applied steps so far.
    pub step: usize,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, config: OptimConfig, total_steps: usize) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        AdamW {
            config,
            total_steps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn current_lr(&self) -> f64 {
        poly_lr(self.config.lr, self.step, self.total_steps, self.config.power)
    }

    /// One update; a non-finite gradient skips the step and leaves all state untouched.
    pub fn apply(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<StepOutcome> {
        if grads.len() != store.len() {
            return Err(Error::invalid(format!("{} gradients for {} parameters", grads.len(), store.len())));
        }
        if let Some((p, _)) = store.iter().zip(grads).find(|(_, g)| !g.all_finite()) {
            log::warn!("non-finite gradient for `{}`; optimizer step skipped", p.name);
            return Ok(StepOutcome::Skipped);
        }
        let c = self.config;
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        for (i, param) in store.iter_mut().enumerate() {
            let decay = if param.decay { T::of(1.0 - lr * c.weight_decay) } else { T::one() };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (p, &g)) in param.value.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let m_hat = m[j].f64() / bc1;
                let v_hat = v[j].f64() / bc2;
                *p = *p * decay - T::of(lr * m_hat / (v_hat.sqrt() + c.eps));
            }
        }
        Ok(StepOutcome::Applied { lr })
    }
}

// ---- loops ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    /// Clips per step.
    pub batch: usize,
    pub optim: OptimConfig,
    pub loss: LossConfig,
    /// Train on the first `batch` clips every step instead of sampling.
    pub fixed_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 1,
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
            fixed_batch: false,
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss_total: f64,
    pub loss_ce_last: f64,
    pub loss_ce_sum: f64,
    pub loss_ci: f64,
    pub lr: f64,
}

impl StepLog {
    pub const CSV_HEADER: &'static str = "step,loss_total,loss_ce_last,loss_ce_sum,loss_ci,lr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e}",
            self.step, self.loss_total, self.loss_ce_last, self.loss_ce_sum, self.loss_ci, self.lr
        )
    }
}

/// Stacks clips into a `[B×T×3×H×W]` batch and flattened labels.
pub fn batch_tensors<T: Scalar>(clips: &[&VideoClip]) -> Result<(Tensor<T>, Vec<u8>)> {
    let first = clips.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (t, h, w) = (first.frames, first.height, first.width);
    if clips.iter().any(|c| (c.frames, c.height, c.width) != (t, h, w)) {
        return Err(Error::invalid("clips in a batch must share frame count and size"));
    }
    let mut data = Vec::with_capacity(clips.len() * t * 3 * h * w);
    let mut labels = Vec::with_capacity(clips.len() * t * h * w);
    for c in clips {
        data.extend(c.pixels.iter().map(|&p| T::of(p as f64 / 255.0)));
        labels.extend_from_slice(&c.masks);
    }
    Ok((Tensor::from_parts(vec![clips.len(), t, 3, h, w], data), labels))
}

/// Forward + loss for one batch on `tape`.
pub fn batch_loss<'t, T: Scalar>(
    model: &RsssmModel<T>,
    bound: &crate::params::Bound<'t, T>,
    clips: &[&VideoClip],
    loss: &LossConfig,
) -> Result<LossTerms<'t, T>> {
    let (x, labels) = batch_tensors::<T>(clips)?;
    let tape = bound
        .vars()
        .first()
        .map(|v| v.tape())
        .ok_or_else(|| Error::invalid("model has no parameters"))?;
    let out = model.forward(bound, &tape.constant(x))?;
    let ce = cross_entropy_var(&out.logits, &labels, loss.ignore_index)?;
    total_loss(
        &ce,
        clips[0].frames,
        &out.channel_info_loss,
        loss,
        model.config.variant.uses_spectrum(),
    )
}

/// Runs `cfg.steps` optimizer steps, calling `log` after each one.
pub fn train<T: Scalar>(
    model: &mut RsssmModel<T>,
    data: &[VideoClip],
    cfg: &TrainConfig,
    seed: u64,
    mut log: impl FnMut(&StepLog),
) -> Result<AdamW<T>> {
    cfg.loss.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let batch = cfg.batch.clamp(1, data.len());
    let mut opt = AdamW::new(&model.params, cfg.optim, cfg.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();
    for step in 0..cfg.steps {
        let picked: Vec<&VideoClip> = if cfg.fixed_batch {
            data[..batch].iter().collect()
        } else {
            (0..batch)
                .map(|_| {
                    if cursor == order.len() {
                        order.shuffle(&mut rng);
                        cursor = 0;
                    }
                    cursor += 1;
                    &data[order[cursor - 1]]
                })
                .collect()
        };
        let tape = Tape::new();
        let bound = model.params.bind(&tape);
        let terms = batch_loss(model, &bound, &picked, &cfg.loss)?;
        terms.total.backward()?;
        let grads = bound.grads();
        let lr = match opt.apply(&mut model.params, &grads)? {
            StepOutcome::Applied { lr } => lr,
            StepOutcome::Skipped => 0.0,
        };
        log(&StepLog {
            step,
            loss_total: terms.total.item().f64(),
            loss_ce_last: terms.ce_last.item().f64(),
            loss_ce_sum: terms.ce_sum.item().f64(),
            loss_ci: terms.ci.item().f64(),
            lr,
        });
    }
    Ok(opt)
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub boundary: BoundaryStats,
    pub miou: f64,
    pub boundary_f: f64,
    pub pixel_accuracy: f64,
    /// Mean channel information loss over clips and layers.
    pub channel_info_loss: f64,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "miou {:.6}\nboundary_f {:.6}\npixel_accuracy {:.6}\nchannel_info_loss {:.6}\n",
            self.miou, self.boundary_f, self.pixel_accuracy, self.channel_info_loss
        );
        for (c, iou) in self.confusion.iou().iter().enumerate() {
            match iou {
                Some(v) => s.push_str(&format!("iou_class_{c} {v:.6}\n")),
                None => s.push_str(&format!("iou_class_{c} absent\n")),
            }
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        s.push_str(&format!(
            "miou,{:e}\nboundary_f,{:e}\npixel_accuracy,{:e}\n",
            self.miou, self.boundary_f, self.pixel_accuracy
        ));
        s.push_str(&format!("channel_info_loss,{:e}\n", self.channel_info_loss));
        for (c, iou) in self.confusion.iou().iter().enumerate() {
            s.push_str(&format!("iou_class_{c},{}\n", iou.map_or("nan".to_string(), |v| format!("{v:e}"))));
        }
        s
    }
}

/// Predicted masks `[T×H×W]` for one clip.
pub fn predict_masks<T: Scalar>(model: &RsssmModel<T>, clip: &VideoClip) -> Result<(Vec<u8>, f64)> {
    let (x, _) = batch_tensors::<T>(&[clip])?;
    let (logits, traces) = model.predict(&x)?;
    let ci = traces.iter().map(|t| t.channel_info_loss.f64()).sum::<f64>() / traces.len().max(1) as f64;
    Ok((argmax_classes(&logits)?, ci))
}

pub fn evaluate<T: Scalar>(model: &RsssmModel<T>, clips: &[VideoClip], ignore: u8) -> Result<EvalReport> {
    let mut confusion = ConfusionMatrix::new(model.config.classes);
    let mut boundary = BoundaryStats::default();
    let mut ci = 0.0;
    for clip in clips {
        let (pred, c) = predict_masks(model, clip)?;
        ci += c;
        confusion.add(&pred, &clip.masks, ignore);
        let hw = clip.height * clip.width;
        for t in 0..clip.frames {
            boundary.add(&pred[t * hw..(t + 1) * hw], clip.mask(t), clip.height, clip.width);
        }
    }
    Ok(EvalReport {
        miou: confusion.miou(),
        boundary_f: boundary.f_score(),
        pixel_accuracy: confusion.pixel_accuracy(),
        channel_info_loss: ci / clips.len().max(1) as f64,
        confusion,
        boundary,
    })
}
