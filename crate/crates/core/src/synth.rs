//! Synthetic video segmentation clips.
//!
//! Each clip shows textured shapes drifting and breathing over a textured
//! background. Every class has a similar mean color but its own sinusoidal
//! grating frequency, so boundaries and textures carry the class signal.
//! Frames are sampled every `stride` steps of an underlying trajectory and
//! quantized to 8 bits.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pnm::{Image, PnmKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
}

/// One moving shape; positions in pixels, time in trajectory steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub class: u8,
    pub kind: ShapeKind,
    pub center: (f64, f64),
    /// Half extents along x and y.
    pub radius: (f64, f64),
    /// Pixels per trajectory step along x and y.
    pub velocity: (f64, f64),
    /// Relative amplitude of the periodic squash/stretch.
    pub deformation: f64,
    /// Texture orientation in radians.
    pub orientation: f64,
}

impl ShapeSpec {
    fn at(&self, time: f64) -> ((f64, f64), (f64, f64)) {
        let wobble = self.deformation * (2.0 * PI * time / 10.0).sin();
        let c = (self.center.0 + self.velocity.0 * time, self.center.1 + self.velocity.1 * time);
        (c, (self.radius.0 * (1.0 + wobble), self.radius.1 * (1.0 - wobble)))
    }

    fn contains(&self, time: f64, x: f64, y: f64) -> bool {
        let ((cx, cy), (rx, ry)) = self.at(time);
        let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
        match self.kind {
            ShapeKind::Ellipse => dx * dx + dy * dy <= 1.0,
            ShapeKind::Rectangle => dx.abs() <= 1.0 && dy.abs() <= 1.0,
        }
    }

    /// Largest extent over the clip, used for the canvas margin check.
    fn reach(&self) -> (f64, f64) {
        (self.radius.0 * (1.0 + self.deformation), self.radius.1 * (1.0 + self.deformation))
    }
}

/// Complete description of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Number of sampled frames `T`.
    pub frames: usize,
    /// Trajectory steps between sampled frames.
    pub stride: usize,
    pub classes: usize,
    pub shapes: Vec<ShapeSpec>,
    /// Grating frequency (cycles per pixel) per class, background first.
    pub texture_freq: Vec<f64>,
    /// Later shapes may overlap and hide earlier ones.
    pub occlusion: bool,
    pub noise: f64,
}

impl SceneSpec {
    pub fn times(&self) -> Vec<f64> {
        (0..self.frames).map(|k| (k * self.stride) as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("scene spec: {m}")));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.texture_freq.len() != self.classes {
            return bad(format!(
                "{} texture frequencies for {} classes",
                self.texture_freq.len(),
                self.classes
            ));
        }
        if self.height < 4 || self.width < 4 || self.frames == 0 {
            return bad("canvas and frame count must be non-trivial".into());
        }
        let last = ((self.frames - 1) * self.stride) as f64;
        for (i, s) in self.shapes.iter().enumerate() {
            if s.class == 0 || s.class as usize >= self.classes {
                return bad(format!("shape {i} has class {} outside 1..{}", s.class, self.classes));
            }
            let (rx, ry) = s.reach();
            for t in [0.0, last] {
                let ((cx, cy), _) = s.at(t);
                if cx - rx < 1.0 || cy - ry < 1.0 || cx + rx > self.width as f64 - 1.0 || cy + ry > self.height as f64 - 1.0 {
                    return bad(format!("shape {i} leaves the 1-pixel margin at time {t}"));
                }
            }
        }
        Ok(())
    }
}

/// Generator settings for a whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub stride: usize,
    pub classes: usize,
    pub shapes: usize,
    pub train_clips: usize,
    pub eval_clips: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub speed_max: f64,
    pub deformation_max: f64,
    pub occlusion: bool,
    pub noise: f64,
    /// Smallest fraction of pixels next to a different label in each frame.
    pub min_boundary_density: f64,
    /// Read clips from this directory instead of generating them.
    pub dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            height: 64,
            width: 64,
            frames: 4,
            stride: 3,
            classes: 4,
            shapes: 3,
            train_clips: 200,
            eval_clips: 50,
            radius_min: 6.0,
            radius_max: 14.0,
            speed_max: 1.0,
            deformation_max: 0.15,
            occlusion: true,
            noise: 0.03,
            min_boundary_density: 0.02,
            dir: None,
        }
    }
}

impl DataConfig {
    pub fn texture_freq(&self) -> Vec<f64> {
        // background is smooth, object classes get progressively finer gratings
        (0..self.classes)
            .map(|c| {
                if c == 0 {
                    0.02
                } else {
                    0.06 + 0.3 * (c - 1) as f64 / (self.classes - 1).max(1) as f64
                }
            })
            .collect()
    }

    /// Draws a valid scene from `seed`.
    pub fn scene(&self, seed: u64) -> Result<SceneSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = ((self.frames.max(1) - 1) * self.stride) as f64;
        let mut shapes = Vec::with_capacity(self.shapes);
        for _ in 0..self.shapes {
            for _attempt in 0..200 {
                let r = (
                    rng.gen_range(self.radius_min..=self.radius_max),
                    rng.gen_range(self.radius_min..=self.radius_max),
                );
                let speed = (
                    rng.gen_range(-self.speed_max..=self.speed_max),
                    rng.gen_range(-self.speed_max..=self.speed_max),
                );
                let def = rng.gen_range(0.0..=self.deformation_max);
                let reach = (r.0 * (1.0 + def), r.1 * (1.0 + def));
                let mut span = |lo: f64, hi: f64| if lo < hi { Some(rng.gen_range(lo..hi)) } else { None };
                // the start must keep both endpoints of the linear path inside the margin
                let x_lo = (1.0 + reach.0).max(1.0 + reach.0 - speed.0 * last);
                let x_hi = (self.width as f64 - 1.0 - reach.0).min(self.width as f64 - 1.0 - reach.0 - speed.0 * last);
                let y_lo = (1.0 + reach.1).max(1.0 + reach.1 - speed.1 * last);
                let y_hi = (self.height as f64 - 1.0 - reach.1).min(self.height as f64 - 1.0 - reach.1 - speed.1 * last);
                let (Some(cx), Some(cy)) = (span(x_lo, x_hi), span(y_lo, y_hi)) else {
                    continue;
                };
                let shape = ShapeSpec {
                    class: rng.gen_range(1..self.classes) as u8,
                    kind: if rng.gen_bool(0.5) {
                        ShapeKind::Ellipse
                    } else {
                        ShapeKind::Rectangle
                    },
                    center: (cx, cy),
                    radius: r,
                    velocity: speed,
                    deformation: def,
                    orientation: rng.gen_range(0.0..PI),
                };
                if !self.occlusion && shapes.iter().any(|s: &ShapeSpec| overlaps(s, &shape, last)) {
                    continue;
                }
                shapes.push(shape);
                break;
            }
        }
        if shapes.is_empty() {
            return Err(Error::invalid(
                "scene spec: no shape fits on the canvas; lower radius_max".to_string(),
            ));
        }
        let spec = SceneSpec {
            seed,
            height: self.height,
            width: self.width,
            frames: self.frames,
            stride: self.stride,
            classes: self.classes,
            shapes,
            texture_freq: self.texture_freq(),
            occlusion: self.occlusion,
            noise: self.noise,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn overlaps(a: &ShapeSpec, b: &ShapeSpec, last: f64) -> bool {
    let steps = last.ceil().max(1.0) as usize;
    (0..=steps).any(|k| {
        let t = k as f64;
        let ((ax, ay), _) = a.at(t);
        let ((bx, by), _) = b.at(t);
        let (ra, rb) = (a.reach(), b.reach());
        let gap = 2.0;
        (ax - bx).abs() < ra.0 + rb.0 + gap && (ay - by).abs() < ra.1 + rb.1 + gap
    })
}

/// `T` frames of planar RGB plus per-pixel labels, all 8-bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoClip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub seed: u64,
    /// `[T×3×H×W]`.
    pub pixels: Vec<u8>,
    /// `[T×H×W]` class ids.
    pub masks: Vec<u8>,
}

impl VideoClip {
    /// Frames as `[T×3×H×W]` in `[0, 1]`.
    pub fn frames_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.pixels.iter().map(|&p| T::of(p as f64 / 255.0)).collect();
        Tensor::from_parts(vec![self.frames, 3, self.height, self.width], data)
    }

    pub fn mask(&self, t: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.masks[t * n..(t + 1) * n]
    }

    pub fn labels(&self) -> Vec<u8> {
        let mut l = self.masks.clone();
        l.sort_unstable();
        l.dedup();
        l
    }
}

/// Fraction of pixels with a 4-neighbour of a different label.
pub fn boundary_density(mask: &[u8], height: usize, width: usize) -> f64 {
    let mut count = 0;
    for y in 0..height {
        for x in 0..width {
            let v = mask[y * width + x];
            let differs = (x > 0 && mask[y * width + x - 1] != v)
                || (x + 1 < width && mask[y * width + x + 1] != v)
                || (y > 0 && mask[(y - 1) * width + x] != v)
                || (y + 1 < height && mask[(y + 1) * width + x] != v);
            count += differs as usize;
        }
    }
    count as f64 / (height * width) as f64
}

fn class_color(class: usize) -> [f64; 3] {
    // near-gray means so that color alone is a weak cue
    let tint = [[0.0, 0.0, 0.0], [0.06, -0.03, 0.0], [-0.03, 0.05, -0.02], [0.0, -0.04, 0.06]];
    let t = tint[class % tint.len()];
    [0.5 + t[0], 0.5 + t[1], 0.5 + t[2]]
}

/// Rasterizes a scene. Masks mark pixels whose center lies inside a shape;
/// later shapes are drawn on top.
pub fn generate_clip(spec: &SceneSpec) -> Result<VideoClip> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_f1e1d);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::invalid(format!("scene spec: {e}")))?;
    let mut pixels = vec![0u8; spec.frames * 3 * h * w];
    let mut masks = vec![0u8; spec.frames * h * w];
    let bg_angle = rng.gen_range(0.0..PI);
    for (k, &time) in spec.times().iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut class = 0usize;
                let mut local = (px, py);
                let mut angle = bg_angle;
                for s in &spec.shapes {
                    if s.contains(time, px, py) {
                        let ((cx, cy), _) = s.at(time);
                        class = s.class as usize;
                        local = (px - cx, py - cy);
                        angle = s.orientation;
                    }
                }
                masks[k * h * w + y * w + x] = class as u8;
                let phase = 2.0 * PI * spec.texture_freq[class] * (local.0 * angle.cos() + local.1 * angle.sin());
                let grating = 0.22 * phase.sin();
                let base = class_color(class);
                for (c, b) in base.iter().enumerate() {
                    let v = b + grating + if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    pixels[((k * 3 + c) * h + y) * w + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
    }
    Ok(VideoClip {
        frames: spec.frames,
        height: h,
        width: w,
        classes: spec.classes,
        seed: spec.seed,
        pixels,
        masks,
    })
}

/// Seed of clip `index` in a split, decorrelated from neighbours.
pub fn clip_seed(seed: u64, split: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ split.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Eval => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

/// Generates one split; clips failing the boundary-density floor are redrawn
/// with the next seed in a deterministic sequence.
pub fn generate_split(cfg: &DataConfig, seed: u64, split: Split) -> Result<Vec<VideoClip>> {
    let count = match split {
        Split::Train => cfg.train_clips,
        Split::Eval => cfg.eval_clips,
    };
    let mut clips = Vec::with_capacity(count);
    for i in 0..count {
        let mut found = None;
        for attempt in 0..32u64 {
            let s = clip_seed(seed, split.tag(), (i as u64) << 8 | attempt);
            let clip = generate_clip(&cfg.scene(s)?)?;
            let dense = (0..clip.frames).all(|t| boundary_density(clip.mask(t), clip.height, clip.width) >= cfg.min_boundary_density);
            if dense && clip.labels().len() >= 2 {
                found = Some(clip);
                break;
            }
        }
        clips.push(found.ok_or_else(|| {
            Error::invalid(format!(
                "could not draw clip {i} with boundary density >= {}; lower min_boundary_density",
                cfg.min_boundary_density
            ))
        })?);
    }
    Ok(clips)
}

// ---- on-disk layout ----

const MANIFEST: &str = "manifest.txt";

/// Writes `frame_k.ppm`, `mask_k.pgm` and a manifest into `dir`.
pub fn write_clip(dir: &Path, clip: &VideoClip) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (clip.height, clip.width);
    let mut manifest = format!(
        "frames {}\nheight {}\nwidth {}\nclasses {}\nseed {}\n",
        clip.frames, h, w, clip.classes, clip.seed
    );
    for t in 0..clip.frames {
        let mut rgb = Vec::with_capacity(3 * h * w);
        for p in 0..h * w {
            for c in 0..3 {
                rgb.push(clip.pixels[(t * 3 + c) * h * w + p]);
            }
        }
        let (fname, mname) = (format!("frame_{t}.ppm"), format!("mask_{t}.pgm"));
        Image::new(PnmKind::Rgb, w, h, rgb)?.write(&dir.join(&fname))?;
        Image::new(PnmKind::Gray, w, h, clip.mask(t).to_vec())?.write(&dir.join(&mname))?;
        manifest.push_str(&format!("frame {fname} {mname}\n"));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn read_clip(dir: &Path) -> Result<VideoClip> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    if !text.ends_with('\n') {
        return Err(Error::Format {
            path: path.clone(),
            offset: text.len(),
            reason: "manifest is truncated (missing final newline)".into(),
        });
    }
    let mut fields = std::collections::HashMap::new();
    let mut files = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let fail = |reason: String| Error::Format {
            path: path.clone(),
            offset,
            reason,
        };
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            [] => {}
            ["frame", f, m] => files.push((f.to_string(), m.to_string())),
            [key @ ("frames" | "height" | "width" | "classes" | "seed"), value] => {
                let v: u64 = value
                    .parse()
                    .map_err(|_| fail(format!("`{key}` expects an integer, got `{value}`")))?;
                fields.insert(*key, v);
            }
            _ => return Err(fail(format!("unrecognized manifest line `{}`", line.trim_end()))),
        }
        offset += line.len();
    }
    let get = |k: &str| {
        fields.get(k).copied().ok_or_else(|| Error::Format {
            path: path.clone(),
            offset: text.len(),
            reason: format!("manifest lacks `{k}`"),
        })
    };
    let (frames, h, w) = (get("frames")? as usize, get("height")? as usize, get("width")? as usize);
    let (classes, seed) = (get("classes")? as usize, get("seed")?);
    if files.len() != frames {
        return Err(Error::Format {
            path: path.clone(),
            offset: text.len(),
            reason: format!("manifest lists {} frames but declares {frames}", files.len()),
        });
    }
    let mut pixels = vec![0u8; frames * 3 * h * w];
    let mut masks = Vec::with_capacity(frames * h * w);
    for (t, (f, m)) in files.iter().enumerate() {
        let (fp, mp) = (dir.join(f), dir.join(m));
        let img = Image::read(&fp)?;
        let mask = Image::read(&mp)?;
        for (p, im, kind) in [(&fp, &img, PnmKind::Rgb), (&mp, &mask, PnmKind::Gray)] {
            if im.width != w || im.height != h || im.kind != kind {
                return Err(Error::Format {
                    path: p.clone(),
                    offset: 0,
                    reason: format!("expected a {w}×{h} {kind:?} image"),
                });
            }
        }
        for p in 0..h * w {
            for c in 0..3 {
                pixels[(t * 3 + c) * h * w + p] = img.data[p * 3 + c];
            }
        }
        if let Some(bad) = mask.data.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Format {
                path: mp,
                offset: 0,
                reason: format!("label {bad} outside 0..{classes}"),
            });
        }
        masks.extend_from_slice(&mask.data);
    }
    Ok(VideoClip {
        frames,
        height: h,
        width: w,
        classes,
        seed,
        pixels,
        masks,
    })
}

/// Writes a split as `root/<split>/clip_NNNN/`.
pub fn write_split(root: &Path, split: Split, clips: &[VideoClip]) -> Result<()> {
    for (i, c) in clips.iter().enumerate() {
        write_clip(&root.join(split.name()).join(format!("clip_{i:04}")), c)?;
    }
    Ok(())
}

/// Reads every `clip_*` directory of a split in name order.
pub fn read_split(root: &Path, split: Split) -> Result<Vec<VideoClip>> {
    let dir = root.join(split.name());
    if !dir.is_dir() {
        return Err(Error::MissingDataset(dir));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("clip_")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::MissingDataset(dir));
    }
    dirs.iter().map(|d| read_clip(d)).collect()
}

/// Loads a split from `cfg.dir` when set, otherwise generates it from `seed`.
pub fn load_split(cfg: &DataConfig, seed: u64, split: Split) -> Result<Vec<VideoClip>> {
    match &cfg.dir {
        Some(root) => read_split(root, split),
        None => generate_split(cfg, seed, split),
    }
}
