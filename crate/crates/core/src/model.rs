//! Patch encoder, stacked dual-path SSM layers and the per-pixel decoder.
//!
//! Features travel between stages as a token matrix `[B·T·Hs·Ws × D]`, ordered
//! by clip, then frame, then raster position. The scan sees each clip as one
//! sequence of `T·Hs·Ws` tokens.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::fgir::{self, FgirConfig, RefinedGate};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::spectral::{self, SpectralConfig};
use crate::ssm::{self, DiscreteGates, SsmInit, SsmLeaves};
use crate::tensor::Tensor;

/// Ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Variant {
    /// One vanilla SSM path.
    #[serde(rename = "V-SSM")]
    VSsm,
    /// Two independent vanilla paths.
    #[serde(rename = "Bi-V-SSM")]
    BiVSsm,
    /// Dual path where the second path runs on the plain inverted gate.
    #[serde(rename = "No-CwAP")]
    NoCwap,
    /// Dual path with spectrum-weighted gate refinement.
    #[default]
    #[serde(rename = "RS-SSM")]
    RsSsm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::VSsm, Variant::BiVSsm, Variant::NoCwap, Variant::RsSsm];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::VSsm => "V-SSM",
            Variant::BiVSsm => "Bi-V-SSM",
            Variant::NoCwap => "No-CwAP",
            Variant::RsSsm => "RS-SSM",
        }
    }

    pub fn dual_path(self) -> bool {
        self != Variant::VSsm
    }

    /// Whether the first path's gate is derived from the second path's.
    pub fn refines(self) -> bool {
        matches!(self, Variant::NoCwap | Variant::RsSsm)
    }

    /// Whether the channel-information loss is optimized (otherwise it is only logged).
    pub fn uses_spectrum(self) -> bool {
        self == Variant::RsSsm
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}` (expected one of V-SSM, Bi-V-SSM, No-CwAP, RS-SSM)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub layers: usize,
    pub embed_dim: usize,
    pub state_dim: usize,
    pub in_channels: usize,
    pub classes: usize,
    /// Patch size of the encoder; image sides must be multiples of it.
    pub patch: usize,
    pub layer_norm_eps: f64,
    pub spectral: SpectralConfig,
    pub fgir: FgirConfig,
    pub ssm_init: SsmInit,
    /// Pins the inverting weight to a constant instead of the learned one.
    pub alpha_override: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::RsSsm,
            layers: 2,
            embed_dim: 64,
            state_dim: 16,
            in_channels: 3,
            classes: 4,
            patch: 4,
            layer_norm_eps: 1e-5,
            spectral: SpectralConfig::default(),
            fgir: FgirConfig::default(),
            ssm_init: SsmInit::default(),
            alpha_override: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.spectral.validate()?;
        let positive = [
            ("layers", self.layers),
            ("embed_dim", self.embed_dim),
            ("state_dim", self.state_dim),
            ("in_channels", self.in_channels),
            ("classes", self.classes),
            ("patch", self.patch),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model.{name} must be positive")));
        }
        if let Some(a) = self.alpha_override {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::invalid(format!("model.alpha_override must lie in [0, 1], got {a}")));
            }
        }
        Ok(())
    }

    /// Constant inverting weight in effect, if any.
    pub fn fixed_alpha(&self) -> Option<f64> {
        match (self.alpha_override, self.variant) {
            (Some(a), _) => Some(a),
            (None, Variant::NoCwap) => Some(1.0),
            _ => None,
        }
    }
}

/// Batch layout of a token matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub clips: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub fn images(&self) -> usize {
        self.clips * self.frames
    }

    pub fn tokens_per_clip(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn tokens(&self) -> usize {
        self.clips * self.tokens_per_clip()
    }
}

#[derive(Debug, Clone, Copy)]
struct LinearIds {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Debug, Clone, Copy)]
struct NormIds {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
struct LayerIds {
    norm: NormIds,
    proj: LinearIds,
    theta1: Option<SsmLeaves>,
    theta2: SsmLeaves,
    fuse_in: LinearIds,
    fuse_out: LinearIds,
}

/// Values recorded during one layer's forward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace<T> {
    /// Spectrum features of the projected maps, `[B·T × D]`.
    pub features: Tensor<T>,
    pub channel_info_loss: T,
    /// Continuous forgetting parameter of the second path.
    pub a: Tensor<T>,
    pub refined: Option<RefinedGate<T>>,
    pub gates_theta1: Option<DiscreteGates<T>>,
    pub gates_theta2: DiscreteGates<T>,
    /// Pre-fusion path outputs `[B × L × D]`.
    pub path_theta1: Option<Tensor<T>>,
    pub path_theta2: Tensor<T>,
}

pub struct ForwardOutput<'t, T: Scalar> {
    /// `[B·T × N_cls × H × W]`.
    pub logits: Var<'t, T>,
    /// Per-layer channel information loss; detached for variants that only log it.
    pub channel_info_loss: Vec<Var<'t, T>>,
    pub traces: Vec<LayerTrace<T>>,
}

/// Parameters and wiring of the full segmentation model.
#[derive(Debug, Clone)]
pub struct RsssmModel<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    embed: LinearIds,
    embed_norm: NormIds,
    layers: Vec<LayerIds>,
    head: LinearIds,
}

fn linear<T: Scalar>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut ChaCha8Rng) -> LinearIds {
    let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
    let w = Tensor::from_fn([fan_in, fan_out], |_| T::of(normal.sample(rng)));
    LinearIds {
        w: store.add(format!("{name}.w"), w, true),
        b: bias.then(|| store.add(format!("{name}.b"), Tensor::zeros([fan_out]), false)),
    }
}

fn norm<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> NormIds {
    NormIds {
        gamma: store.add(format!("{name}.gamma"), Tensor::ones([dim]), false),
        beta: store.add(format!("{name}.beta"), Tensor::zeros([dim]), false),
    }
}

fn apply_linear<'t, T: Scalar>(x: &Var<'t, T>, ids: LinearIds, bound: &Bound<'t, T>) -> Result<Var<'t, T>> {
    let b = ids.b.map(|b| bound.var(b));
    x.linear(&bound.var(ids.w), b.as_ref())
}

/// Bilinear interpolation matrix `[out × in]` with half-pixel centers.
pub fn bilinear_matrix<T: Scalar>(out: usize, input: usize) -> Tensor<T> {
    let mut m = vec![T::zero(); out * input];
    let scale = input as f64 / out as f64;
    for i in 0..out {
        let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(input - 1);
        let frac = src - i0 as f64;
        m[i * input + i0] += T::of(1.0 - frac);
        m[i * input + i1] += T::of(frac);
    }
    Tensor::from_parts(vec![out, input], m)
}

/// `[N × C × H × W]` maps as `[N·H·W × C]` tokens.
pub fn maps_to_tokens<'t, T: Scalar>(maps: &Var<'t, T>) -> Result<Var<'t, T>> {
    let s = maps.shape();
    maps.permute(&[0, 2, 3, 1])?.reshape([s[0] * s[2] * s[3], s[1]])
}

pub fn tokens_to_maps<'t, T: Scalar>(tokens: &Var<'t, T>, images: usize, height: usize, width: usize) -> Result<Var<'t, T>> {
    let c = tokens.shape()[1];
    tokens.reshape([images, height, width, c])?.permute(&[0, 3, 1, 2])
}

impl<T: Scalar> RsssmModel<T> {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.embed_dim;
        let patch_len = config.in_channels * config.patch * config.patch;
        let embed = linear(&mut store, "encoder.embed", patch_len, d, true, &mut rng);
        let embed_norm = norm(&mut store, "encoder.norm", d);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("layer{l}");
            let norm_ids = norm(&mut store, &format!("{p}.norm"), d);
            let proj = linear(&mut store, &format!("{p}.proj"), d, d, false, &mut rng);
            let theta1 = config
                .variant
                .dual_path()
                .then(|| SsmLeaves::init(&mut store, &format!("{p}.theta1"), d, config.state_dim, &config.ssm_init, &mut rng));
            let theta2 = SsmLeaves::init(&mut store, &format!("{p}.theta2"), d, config.state_dim, &config.ssm_init, &mut rng);
            let paths = if config.variant.dual_path() { 2 } else { 1 };
            let fuse_in = linear(&mut store, &format!("{p}.fuse.hidden"), paths * d, 2 * d, true, &mut rng);
            let fuse_out = linear(&mut store, &format!("{p}.fuse.out"), 2 * d, d, true, &mut rng);
            layers.push(LayerIds {
                norm: norm_ids,
                proj,
                theta1,
                theta2,
                fuse_in,
                fuse_out,
            });
        }
        let head = linear(&mut store, "decoder.classifier", d, config.classes, true, &mut rng);
        log::debug!("{} model: {} parameters", config.variant, store.count());
        Ok(RsssmModel {
            config,
            params: store,
            embed,
            embed_norm,
            layers,
            head,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Handles of one path's SSM parameters (`path` 1 or 2).
    pub fn ssm_leaves(&self, layer: usize, path: usize) -> Option<SsmLeaves> {
        let ids = self.layers.get(layer)?;
        match path {
            1 => ids.theta1,
            2 => Some(ids.theta2),
            _ => None,
        }
    }

    pub fn projection(&self, layer: usize) -> Option<ParamId> {
        self.layers.get(layer).map(|l| l.proj.w)
    }

    fn check_clips(&self, clips: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        let s = clips.shape();
        let p = self.config.patch;
        match s {
            [b, t, c, h, w] if *c == self.config.in_channels => {
                if h % p != 0 || w % p != 0 || *h == 0 || *w == 0 {
                    return Err(Error::InvalidShape {
                        op: "model_forward",
                        shape: s.to_vec(),
                        reason: format!("image sides must be positive multiples of the patch size {p}"),
                    });
                }
                Ok((*b, *t, *h, *w))
            }
            _ => Err(Error::InvalidShape {
                op: "model_forward",
                shape: s.to_vec(),
                reason: format!("expected [B×T×{}×H×W]", self.config.in_channels),
            }),
        }
    }

    /// Patchify and embed: `[B×T×C×H×W]` → tokens `[B·T·Hs·Ws × D]`.
    pub fn encode<'t>(&self, bound: &Bound<'t, T>, clips: &Var<'t, T>) -> Result<(Var<'t, T>, Geometry)> {
        let (b, t, h, w) = self.check_clips(&clips.value())?;
        let (p, c) = (self.config.patch, self.config.in_channels);
        let (hs, ws) = (h / p, w / p);
        let patches = clips
            .reshape([b * t, c, hs, p, ws, p])?
            .permute(&[0, 2, 4, 1, 3, 5])?
            .reshape([b * t * hs * ws, c * p * p])?;
        let x = apply_linear(&patches, self.embed, bound)?;
        let x = x.layer_norm(
            &bound.var(self.embed_norm.gamma),
            &bound.var(self.embed_norm.beta),
            self.config.layer_norm_eps,
        )?;
        Ok((
            x,
            Geometry {
                clips: b,
                frames: t,
                height: hs,
                width: ws,
            },
        ))
    }

    /// One dual-path layer on tokens `[B·T·Hs·Ws × D]`.
    pub fn layer_forward<'t>(
        &self,
        bound: &Bound<'t, T>,
        index: usize,
        x: &Var<'t, T>,
        geom: Geometry,
    ) -> Result<(Var<'t, T>, Var<'t, T>, LayerTrace<T>)> {
        let cfg = &self.config;
        let ids = self.layers.get(index).ok_or_else(|| Error::invalid(format!("no layer {index}")))?;
        let d = cfg.embed_dim;
        let tape = x.tape();

        let xn = x.layer_norm(&bound.var(ids.norm.gamma), &bound.var(ids.norm.beta), cfg.layer_norm_eps)?;
        let h = apply_linear(&xn, ids.proj, bound)?;

        let maps = tokens_to_maps(&h, geom.images(), geom.height, geom.width)?;
        let mut spec_cfg = cfg.spectral;
        spec_cfg.detach |= !cfg.variant.uses_spectrum();
        let features = spectral::spectrum_features_var(&maps, &spec_cfg)?;
        let l_ci = spectral::channel_info_loss_var(&features)?;

        let seq = h.reshape([geom.clips, geom.tokens_per_clip(), d])?;
        let a2 = ids.theta2.a(bound)?;
        let (a2_bar, b2_bar) = ssm::discretize_var(&a2, &ids.theta2.delta(bound)?, &bound.var(ids.theta2.b))?;
        let (y2, _) = ssm::scan_var(&a2_bar, &b2_bar, &bound.var(ids.theta2.c), &seq, None)?;

        let mut refined = None;
        let mut gates1 = None;
        let mut y1 = None;
        if let Some(theta1) = ids.theta1 {
            let a1 = if cfg.variant.refines() {
                let r = fgir::refine_var(&a2, &features, &cfg.fgir)?;
                let a_r = match cfg.fixed_alpha() {
                    Some(alpha) => {
                        let al = tape.constant(Tensor::full([d], T::of(alpha)));
                        fgir::refine_gate_var(&a2, &r.a_i, &al)?
                    }
                    None => r.a_r,
                };
                let mut values = r.values();
                if let Some(alpha) = cfg.fixed_alpha() {
                    values.alpha = Tensor::full([d], T::of(alpha));
                    values.a_r = (*a_r.value()).clone();
                }
                refined = Some(values);
                a_r
            } else {
                theta1.a(bound)?
            };
            let (a1_bar, b1_bar) = ssm::discretize_var(&a1, &theta1.delta(bound)?, &bound.var(theta1.b))?;
            let (y, _) = ssm::scan_var(&a1_bar, &b1_bar, &bound.var(theta1.c), &seq, None)?;
            gates1 = Some(DiscreteGates {
                a_bar: (*a1_bar.value()).clone(),
                b_bar: (*b1_bar.value()).clone(),
            });
            y1 = Some(y);
        }

        let joined = match y1 {
            Some(y1) => Var::concat(&[y1, y2], 2)?,
            None => y2,
        };
        let paths = joined.shape()[2];
        let hidden = apply_linear(&joined.reshape([geom.tokens(), paths])?, ids.fuse_in, bound)?.gelu()?;
        let fused = apply_linear(&hidden, ids.fuse_out, bound)?;
        let out = x.add(&fused)?;

        let trace = LayerTrace {
            features: (*features.value()).clone(),
            channel_info_loss: l_ci.item(),
            a: (*a2.value()).clone(),
            refined,
            gates_theta1: gates1,
            gates_theta2: DiscreteGates {
                a_bar: (*a2_bar.value()).clone(),
                b_bar: (*b2_bar.value()).clone(),
            },
            path_theta1: y1.map(|y| (*y.value()).clone()),
            path_theta2: (*y2.value()).clone(),
        };
        let l_ci = if cfg.variant.uses_spectrum() { l_ci } else { l_ci.detach() };
        Ok((out, l_ci, trace))
    }

    /// Per-pixel classifier and bilinear upsampling back to `[B·T × N_cls × H × W]`.
    pub fn decode<'t>(&self, bound: &Bound<'t, T>, x: &Var<'t, T>, geom: Geometry) -> Result<Var<'t, T>> {
        let tape = x.tape();
        let k = self.config.classes;
        let (hs, ws) = (geom.height, geom.width);
        let (h, w) = (hs * self.config.patch, ws * self.config.patch);
        let n = geom.images();
        let logits = apply_linear(x, self.head, bound)?;
        let maps = logits.reshape([n, hs, ws, k])?.permute(&[0, 3, 1, 2])?;
        let ux = tape.constant(bilinear_matrix::<T>(w, ws).transpose()?);
        let uy = tape.constant(bilinear_matrix::<T>(h, hs));
        let wide = maps.reshape([n * k * hs, ws])?.matmul(&ux)?;
        let cols = wide.reshape([n * k, hs, w])?.permute(&[1, 0, 2])?.reshape([hs, n * k * w])?;
        uy.matmul(&cols)?.reshape([h, n, k, w])?.permute(&[1, 2, 0, 3])
    }

    /// Full forward pass of `[B×T×C×H×W]` clips.
    pub fn forward<'t>(&self, bound: &Bound<'t, T>, clips: &Var<'t, T>) -> Result<ForwardOutput<'t, T>> {
        let (mut x, geom) = self.encode(bound, clips)?;
        let mut losses = Vec::with_capacity(self.layers.len());
        let mut traces = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let (next, l_ci, trace) = self.layer_forward(bound, l, &x, geom)?;
            x = next;
            losses.push(l_ci);
            traces.push(trace);
        }
        let logits = self.decode(bound, &x, geom)?;
        Ok(ForwardOutput {
            logits,
            channel_info_loss: losses,
            traces,
        })
    }

    /// Inference: logits `[B·T × N_cls × H × W]` and layer traces, without gradients.
    pub fn predict(&self, clips: &Tensor<T>) -> Result<(Tensor<T>, Vec<LayerTrace<T>>)> {
        let tape = Tape::new();
        let bound = self.params.bind_frozen(&tape);
        let out = self.forward(&bound, &tape.constant(clips.clone()))?;
        let logits = (*out.logits.value()).clone();
        Ok((logits, out.traces))
    }
}

/// Class index of the largest logit per pixel (first wins ties): `[N×K×H×W]` → `[N×H×W]`.
pub fn argmax_classes<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<u8>> {
    let s = logits.shape();
    if s.len() != 4 {
        return Err(Error::InvalidShape {
            op: "argmax_classes",
            shape: s.to_vec(),
            reason: "expected [N×K×H×W]".into(),
        });
    }
    let (n, k, hw) = (s[0], s[1], s[2] * s[3]);
    let data = logits.data();
    let mut out = Vec::with_capacity(n * hw);
    for i in 0..n {
        for p in 0..hw {
            let mut best = 0;
            for c in 1..k {
                if data[(i * k + c) * hw + p] > data[(i * k + best) * hw + p] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    Ok(out)
}
