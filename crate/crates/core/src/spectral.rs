//! Channel-wise amplitude perception: how much high-frequency ("specific")
//! energy each feature channel carries, and the batch alignment loss on it.
//!
//! Pipeline per frame and channel: zero-pad to a power of two, unnormalized
//! 2D FFT (rows then columns, radix-2), shift zero frequency to `(H/2, W/2)`,
//! take magnitudes, sum them inside `K` radial bands, normalize the band
//! energies to a distribution, and add up the top `k_h` bands.
//!
//! The normalized radius `sqrt(((h-H/2)/H)^2 + ((w-W/2)/W)^2)` never exceeds
//! `sqrt(0.5)`, so bands starting at or above ~0.7072 are always empty.

use std::f64::consts::PI;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, EPS};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    /// Number of radial bands `K`.
    pub bands: usize,
    /// Number of top bands `k_h` summed into the feature.
    pub high_bands: usize,
    /// Treat spectrum features as constants (no gradient into the FFT path).
    pub detach: bool,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            bands: 8,
            high_bands: 3,
            detach: false,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bands < 2 {
            return Err(Error::invalid(format!("band count K must be at least 2, got {}", self.bands)));
        }
        if self.high_bands < 1 || self.high_bands >= self.bands {
            return Err(Error::invalid(format!(
                "high-band count k_h must satisfy 1 <= k_h < K (K = {}, k_h = {})",
                self.bands, self.high_bands
            )));
        }
        Ok(())
    }
}

/// Precomputed bit reversal and twiddles for one power-of-two length.
struct Radix2 {
    n: usize,
    rev: Vec<usize>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Radix2 {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let bits = n.trailing_zeros();
        let rev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let (cos, sin) = (0..n / 2)
            .map(|j| {
                let a = -2.0 * PI * j as f64 / n as f64;
                (a.cos(), a.sin())
            })
            .unzip();
        Radix2 { n, rev, cos, sin }
    }

    /// In-place forward transform `X_k = Σ x_j e^{-2πi jk/n}`.
    fn run<T: Scalar>(&self, re: &mut [T], im: &mut [T]) {
        let n = self.n;
        for i in 0..n {
            let j = self.rev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for j in 0..half {
                    let (wr, wi) = (T::of(self.cos[j * step]), T::of(self.sin[j * step]));
                    let (a, b) = (start + j, start + j + half);
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len *= 2;
        }
    }
}

/// Real and imaginary planes of a centered spectrum, each `[N×H×W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPlane<T> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

fn check_planes(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    if shape.len() != 3 {
        return Err(Error::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "expected [N×H×W]".into(),
        });
    }
    for &d in &shape[1..] {
        if !d.is_power_of_two() {
            return Err(Error::NotPowerOfTwo { dim: d });
        }
    }
    Ok((shape[0], shape[1], shape[2]))
}

/// Raw 2D transform of complex planes, uncentered. `re`/`im` are `n·h·w` long.
fn fft2d_raw<T: Scalar>(re: &mut [T], im: &mut [T], n: usize, h: usize, w: usize) {
    let rows = Radix2::new(w);
    let cols = Radix2::new(h);
    let mut cr = vec![T::zero(); h];
    let mut ci = vec![T::zero(); h];
    for p in 0..n {
        let plane = p * h * w;
        for r in 0..h {
            let s = plane + r * w;
            rows.run(&mut re[s..s + w], &mut im[s..s + w]);
        }
        for c in 0..w {
            for r in 0..h {
                cr[r] = re[plane + r * w + c];
                ci[r] = im[plane + r * w + c];
            }
            cols.run(&mut cr, &mut ci);
            for r in 0..h {
                re[plane + r * w + c] = cr[r];
                im[plane + r * w + c] = ci[r];
            }
        }
    }
}

/// Moves zero frequency from `(0,0)` to `(H/2, W/2)`; `inverse` undoes it.
fn shift<T: Scalar>(src: &[T], n: usize, h: usize, w: usize, inverse: bool) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    let (sh, sw) = if inverse { (h - h / 2, w - w / 2) } else { (h / 2, w / 2) };
    for p in 0..n {
        for u in 0..h {
            let from_r = (u + sh) % h;
            for v in 0..w {
                let from_c = (v + sw) % w;
                out[p * h * w + u * w + v] = src[p * h * w + from_r * w + from_c];
            }
        }
    }
    out
}

/// Unnormalized, centered 2D DFT of each `[H×W]` plane of a real `[N×H×W]` input.
pub fn fft2d<T: Scalar>(x: &Tensor<T>) -> Result<ComplexPlane<T>> {
    let (n, h, w) = check_planes(x.shape(), "fft2d")?;
    let mut re = x.data().to_vec();
    let mut im = vec![T::zero(); re.len()];
    fft2d_raw(&mut re, &mut im, n, h, w);
    let shape = x.shape().to_vec();
    Ok(ComplexPlane {
        re: Tensor::from_parts(shape.clone(), shift(&re, n, h, w, false)),
        im: Tensor::from_parts(shape, shift(&im, n, h, w, false)),
    })
}

/// `sqrt(re² + im²)` elementwise.
pub fn magnitude<T: Scalar>(f: &ComplexPlane<T>) -> Tensor<T> {
    f.re.zip_with(&f.im, "magnitude", |a, b| (a * a + b * b).sqrt())
        .expect("re/im shapes agree")
}

/// Smallest power of two `>= n`.
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Zero-pads the last two axes of `[N×H×W]` at the bottom/right to powers of two.
pub fn pad_to_pow2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::InvalidShape {
            op: "pad_to_pow2",
            shape: s.to_vec(),
            reason: "expected [N×H×W]".into(),
        });
    }
    let (n, h, w) = (s[0], s[1], s[2]);
    let (ph, pw) = (next_pow2(h), next_pow2(w));
    if (ph, pw) == (h, w) {
        return Ok(x.clone());
    }
    let mut out = vec![T::zero(); n * ph * pw];
    for p in 0..n {
        for r in 0..h {
            let src = &x.data()[(p * h + r) * w..(p * h + r + 1) * w];
            out[(p * ph + r) * pw..(p * ph + r) * pw + w].copy_from_slice(src);
        }
    }
    Ok(Tensor::from_parts(vec![n, ph, pw], out))
}

/// Radial partition of an `H×W` centered spectrum into `K` half-open bands.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPartition {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    /// Normalized radius per pixel, `[H×W]`.
    pub radius: Tensor<f64>,
    /// Band index per pixel (row-major).
    pub assignment: Vec<usize>,
}

/// Normalized distance of `(h, w)` from the spectrum center.
pub fn normalized_radius(h: usize, w: usize, height: usize, width: usize) -> f64 {
    let dh = (h as f64 - (height / 2) as f64) / height as f64;
    let dw = (w as f64 - (width / 2) as f64) / width as f64;
    (dh * dh + dw * dw).sqrt()
}

impl BandPartition {
    pub fn new(height: usize, width: usize, bands: usize) -> Result<Self> {
        if bands < 2 {
            return Err(Error::invalid(format!("band count K must be at least 2, got {bands}")));
        }
        let radius = Tensor::from_fn([height, width], |i| normalized_radius(i[0], i[1], height, width));
        let k = bands as f64;
        let assignment = radius
            .data()
            .iter()
            .map(|&r| {
                let mut b = ((r * k).floor() as usize).min(bands - 1);
                // pin the half-open comparisons exactly
                while b > 0 && r < b as f64 / k {
                    b -= 1;
                }
                while b + 1 < bands && r >= (b + 1) as f64 / k {
                    b += 1;
                }
                b
            })
            .collect();
        Ok(BandPartition {
            bands,
            height,
            width,
            radius,
            assignment,
        })
    }

    /// Binary mask of band `k` as `[H×W]`.
    pub fn mask<T: Scalar>(&self, k: usize) -> Tensor<T> {
        let data = self.assignment.iter().map(|&b| if b == k { T::one() } else { T::zero() }).collect();
        Tensor::from_parts(vec![self.height, self.width], data)
    }

    /// All masks as one `[(H·W)×K]` selection matrix.
    pub fn mask_matrix<T: Scalar>(&self) -> Tensor<T> {
        let mut data = vec![T::zero(); self.assignment.len() * self.bands];
        for (p, &b) in self.assignment.iter().enumerate() {
            data[p * self.bands + b] = T::one();
        }
        Tensor::from_parts(vec![self.assignment.len(), self.bands], data)
    }

    pub fn occupancy(&self) -> Vec<usize> {
        let mut counts = vec![0; self.bands];
        self.assignment.iter().for_each(|&b| counts[b] += 1);
        counts
    }
}

/// Per-channel spectrum features with their band distributions.
#[derive(Debug, Clone)]
pub struct SpectrumFeatures<T> {
    /// `F`, one entry per channel, each in `[0, 1]`.
    pub features: Tensor<T>,
    /// Normalized band energies `Ẽ`, `[D×K]`.
    pub distribution: Tensor<T>,
    pub bands: usize,
    pub high_bands: usize,
}

/// Spectrum features of one `[D×H×W]` feature map (padded to powers of two as needed).
pub fn spectrum_features<T: Scalar>(x: &Tensor<T>, cfg: &SpectralConfig) -> Result<SpectrumFeatures<T>> {
    cfg.validate()?;
    let x = pad_to_pow2(x)?;
    let (d, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    let part = BandPartition::new(h, w, cfg.bands)?;
    let mag = magnitude(&fft2d(&x)?);
    let k = cfg.bands;
    let mut dist = vec![T::zero(); d * k];
    let mut feats = vec![T::zero(); d];
    for c in 0..d {
        let e = &mut dist[c * k..(c + 1) * k];
        for (p, &b) in part.assignment.iter().enumerate() {
            e[b] += mag.data()[c * h * w + p];
        }
        let total = e.iter().copied().sum::<T>() + T::of(EPS);
        e.iter_mut().for_each(|v| *v /= total);
        feats[c] = e[k - cfg.high_bands..].iter().copied().sum();
    }
    Ok(SpectrumFeatures {
        features: Tensor::from_parts(vec![d], feats),
        distribution: Tensor::from_parts(vec![d, k], dist),
        bands: k,
        high_bands: cfg.high_bands,
    })
}

/// Cosine-similarity matrix of the rows of `f` (`[M×D]`), rows scaled by `1/max(‖row‖, ε)`.
pub fn similarity_matrix<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, d) = (f.dim(0), f.dim(1));
    let mut hat = f.data().to_vec();
    for r in 0..m {
        let row = &mut hat[r * d..(r + 1) * d];
        let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(T::of(EPS));
        row.iter_mut().for_each(|v| *v /= n);
    }
    let hat = Tensor::from_parts(vec![m, d], hat);
    hat.matmul(&hat.transpose()?)
}

/// `1 − mean(S)` over all ordered pairs, diagonal included.
pub fn channel_info_loss<T: Scalar>(f: &Tensor<T>) -> Result<T> {
    let s = similarity_matrix(f)?;
    // rounding can push the mean similarity a hair above one
    Ok((T::one() - s.sum_all() / T::of(s.numel() as f64)).max(T::zero()))
}

// ---- differentiable versions ----

/// Centered FFT of `[N×H×W]` on the tape; output `[2×N×H×W]` (real block, then imaginary).
///
/// Backward: shift the cotangent back, then `dx = Re(FFT(g_re − i·g_im))`.
pub fn fft2d_var<'t, T: Scalar>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let xv = x.value();
    let (n, h, w) = check_planes(xv.shape(), "fft2d")?;
    let plane = fft2d(&xv)?;
    let mut data = plane.re.into_data();
    data.extend_from_slice(plane.im.data());
    let y = Tensor::from_parts(vec![2, n, h, w], data);
    x.tape().custom(&[*x], y, "fft2d", move |g| {
        let len = n * h * w;
        let mut re = shift(&g.data()[..len], n, h, w, true);
        let mut im: Vec<T> = shift(&g.data()[len..], n, h, w, true).into_iter().map(|v| -v).collect();
        fft2d_raw(&mut re, &mut im, n, h, w);
        vec![Some(Tensor::from_parts(vec![n, h, w], re))]
    })
}

/// `|z|` from stacked `[2×…]` planes; backward `re/(|z|+ε)`, `im/(|z|+ε)`.
pub fn magnitude_var<'t, T: Scalar>(z: &Var<'t, T>) -> Result<Var<'t, T>> {
    let zv = z.value();
    let shape = zv.shape().to_vec();
    if shape.first() != Some(&2) {
        return Err(Error::InvalidShape {
            op: "magnitude",
            shape,
            reason: "expected leading axis of 2 (re, im)".into(),
        });
    }
    let len = zv.numel() / 2;
    let (re, im) = zv.data().split_at(len);
    let mag: Vec<T> = re.iter().zip(im).map(|(&a, &b)| (a * a + b * b).sqrt()).collect();
    let out_shape = shape[1..].to_vec();
    let m2 = mag.clone();
    z.tape().custom(&[*z], Tensor::from_parts(out_shape, mag), "magnitude", move |g| {
        let eps = T::of(EPS);
        let (re, im) = zv.data().split_at(len);
        let mut out = vec![T::zero(); 2 * len];
        for i in 0..len {
            let s = g.data()[i] / (m2[i] + eps);
            out[i] = s * re[i];
            out[len + i] = s * im[i];
        }
        vec![Some(Tensor::from_parts(shape.clone(), out))]
    })
}

/// Zero-pad `[N×H×W]` to powers of two on the tape (backward crops).
pub fn pad_to_pow2_var<'t, T: Scalar>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let xv = x.value();
    let padded = pad_to_pow2(&xv)?;
    if padded.shape() == xv.shape() {
        return Ok(*x);
    }
    let (n, h, w) = (xv.dim(0), xv.dim(1), xv.dim(2));
    let pw = padded.dim(2);
    let ph = padded.dim(1);
    x.tape().custom(&[*x], padded, "pad_to_pow2", move |g| {
        let mut out = Vec::with_capacity(n * h * w);
        for p in 0..n {
            for r in 0..h {
                let s = (p * ph + r) * pw;
                out.extend_from_slice(&g.data()[s..s + w]);
            }
        }
        vec![Some(Tensor::from_parts(vec![n, h, w], out))]
    })
}

/// Spectrum features for a batch of feature maps `[M×D×H×W]` → `[M×D]`.
pub fn spectrum_features_var<'t, T: Scalar>(x: &Var<'t, T>, cfg: &SpectralConfig) -> Result<Var<'t, T>> {
    cfg.validate()?;
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(Error::InvalidShape {
            op: "spectrum_features",
            shape,
            reason: "expected [M×D×H×W]".into(),
        });
    }
    let (m, d, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let x = if cfg.detach { x.detach() } else { *x };
    let padded = pad_to_pow2_var(&x.reshape([m * d, h, w])?)?;
    let (ph, pw) = (next_pow2(h), next_pow2(w));
    let part = BandPartition::new(ph, pw, cfg.bands)?;
    let mag = magnitude_var(&fft2d_var(&padded)?)?;
    let masks = x.tape().constant(part.mask_matrix::<T>());
    let energy = mag.reshape([m * d, ph * pw])?.matmul(&masks)?;
    let total = energy.sum(1, true)?.add_scalar(T::of(EPS))?;
    let dist = energy.div(&total)?;
    dist.narrow(1, cfg.bands - cfg.high_bands, cfg.high_bands)?
        .sum(1, false)?
        .reshape([m, d])
}

/// Differentiable channel information loss of `[M×D]` spectrum features.
pub fn channel_info_loss_var<'t, T: Scalar>(f: &Var<'t, T>) -> Result<Var<'t, T>> {
    let norm = f.l2_norm(1, true)?.clamp_min(T::of(EPS))?;
    let hat = f.div(&norm)?;
    let s = hat.matmul(&hat.transpose()?)?;
    s.mean_all()?.rsub_scalar(T::one())?.clamp_min(T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::gradcheck::{central_difference, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(N²) DFT per plane, centered the same way.
    fn naive_dft(x: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
        let (n, h, w) = (x.dim(0), x.dim(1), x.dim(2));
        let mut re = vec![0.0; n * h * w];
        let mut im = vec![0.0; n * h * w];
        for p in 0..n {
            for u in 0..h {
                for v in 0..w {
                    let (ku, kv) = ((u + h / 2) % h, (v + w / 2) % w);
                    let (mut sr, mut si) = (0.0, 0.0);
                    for a in 0..h {
                        for b in 0..w {
                            let ang = -2.0 * PI * ((ku * a) as f64 / h as f64 + (kv * b) as f64 / w as f64);
                            let val = x.data()[p * h * w + a * w + b];
                            sr += val * ang.cos();
                            si += val * ang.sin();
                        }
                    }
                    re[p * h * w + u * w + v] = sr;
                    im[p * h * w + u * w + v] = si;
                }
            }
        }
        (re, im)
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn constant_image_has_single_center_bin() {
        let x = Tensor::full([1, 8, 8], 0.75f64);
        let mag = magnitude(&fft2d(&x).unwrap());
        for u in 0..8 {
            for v in 0..8 {
                let expect = if (u, v) == (4, 4) { 64.0 * 0.75 } else { 0.0 };
                assert!((mag.at(&[0, u, v]) - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut x = Tensor::<f64>::zeros([1, 8, 8]);
        x.data_mut()[0] = 1.0;
        let mag = magnitude(&fft2d(&x).unwrap());
        assert!(mag.data().iter().all(|m| (m - 1.0).abs() < 1e-9));
    }

    #[test]
    fn matches_naive_dft_on_16x16() {
        let x = random(&[2, 16, 16], 7);
        let f = fft2d(&x).unwrap();
        let (re, im) = naive_dft(&x);
        let diff =
            f.re.data()
                .iter()
                .zip(&re)
                .chain(f.im.data().iter().zip(&im))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
        // non-square
        let y = random(&[1, 4, 16], 8);
        let f = fft2d(&y).unwrap();
        let (re, _) = naive_dft(&y);
        assert!(f.re.data().iter().zip(&re).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn parseval_and_linearity() {
        let x = random(&[3, 16, 8], 11);
        let y = random(&[3, 16, 8], 12);
        let mag = magnitude(&fft2d(&x).unwrap());
        let lhs: f64 = mag.data().iter().map(|m| m * m).sum();
        let rhs = 128.0 * x.data().iter().map(|v| v * v).sum::<f64>();
        assert!((lhs - rhs).abs() / rhs < 1e-9);

        let (a, b) = (0.7, -1.9);
        let combo = x.scale(a).add(&y.scale(b)).unwrap();
        let fc = fft2d(&combo).unwrap();
        let (fx, fy) = (fft2d(&x).unwrap(), fft2d(&y).unwrap());
        let expect_re = fx.re.scale(a).add(&fy.re.scale(b)).unwrap();
        let expect_im = fx.im.scale(a).add(&fy.im.scale(b)).unwrap();
        assert!(fc.re.max_abs_diff(&expect_re) < 1e-9);
        assert!(fc.im.max_abs_diff(&expect_im) < 1e-9);
    }

    #[test]
    fn non_power_of_two_rejected_with_hint() {
        let err = fft2d(&Tensor::<f64>::zeros([1, 6, 8])).unwrap_err();
        assert!(matches!(err, Error::NotPowerOfTwo { dim: 6 }));
        assert!(err.to_string().contains("pad"));
    }

    #[test]
    fn magnitude_cases() {
        let z = ComplexPlane {
            re: Tensor::<f64>::from_f64([1, 1, 2], &[3.0, 0.0]).unwrap(),
            im: Tensor::<f64>::from_f64([1, 1, 2], &[4.0, 0.0]).unwrap(),
        };
        assert_eq!(magnitude(&z).data(), &[5.0, 0.0]);
        let tape = Tape::<f64>::new();
        let zv = tape.leaf(Tensor::<f64>::from_f64([2, 1], &[0.0, 0.0]).unwrap());
        magnitude_var(&zv).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(zv.grad().unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn band_partition_geometry() {
        let p = BandPartition::new(8, 8, 4).unwrap();
        assert_eq!(p.radius.at(&[4, 4]), 0.0);
        assert_eq!(p.assignment[4 * 8 + 4], 0);
        assert!((p.radius.at(&[0, 0]) - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(p.assignment[0], 2);
        assert!(BandPartition::new(8, 8, 1).is_err());
        // the top band above sqrt(0.5) is empty
        assert_eq!(p.occupancy()[3], 0);
        assert_eq!(p.occupancy().iter().sum::<usize>(), 64);
    }

    #[test]
    fn band_occupancy_matches_brute_force() {
        let (h, w, k) = (32, 32, 8);
        let p = BandPartition::new(h, w, k).unwrap();
        let mut brute = vec![0usize; k];
        for a in 0..h {
            for b in 0..w {
                let r = (((a as f64 - 16.0) / 32.0).powi(2) + ((b as f64 - 16.0) / 32.0).powi(2)).sqrt();
                let hits: Vec<usize> = (0..k)
                    .filter(|&j| j as f64 / k as f64 <= r && r < (j + 1) as f64 / k as f64)
                    .collect();
                assert_eq!(hits.len(), 1, "pixel ({a},{b}) in exactly one band");
                brute[hits[0]] += 1;
            }
        }
        assert_eq!(p.occupancy(), brute);
        // masks are disjoint and cover the plane
        let sum = (0..k).fold(Tensor::<f64>::zeros([h, w]), |acc, j| acc.add(&p.mask(j)).unwrap());
        assert!(sum.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_image_features_are_zero() {
        let x = Tensor::full([3, 8, 8], 2.0f64);
        let f = spectrum_features(&x, &SpectralConfig::default()).unwrap();
        assert!(f.features.data().iter().all(|&v| v.abs() < 1e-12));
        let zero = spectrum_features(&Tensor::<f64>::zeros([2, 8, 8]), &SpectralConfig::default()).unwrap();
        assert!(zero.features.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkerboard_lands_in_top_bands() {
        let x = Tensor::<f64>::from_fn([1, 8, 8], |i| if (i[1] + i[2]) % 2 == 0 { 1.0 } else { -1.0 });
        // the naive DFT puts all energy in one bin; classify it independently
        let (re, im) = naive_dft(&x);
        let nonzero: Vec<usize> = (0..64).filter(|&i| re[i].hypot(im[i]) > 1e-9).collect();
        assert_eq!(nonzero.len(), 1);
        let (u, v) = (nonzero[0] / 8, nonzero[0] % 8);
        let r = normalized_radius(u, v, 8, 8);
        assert!((0.5..0.75).contains(&r), "Nyquist bin radius {r} is in band 2 of 4");
        let cfg = SpectralConfig {
            bands: 4,
            high_bands: 2,
            detach: false,
        };
        let f = spectrum_features(&x, &cfg).unwrap();
        assert!((f.features.item() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn features_match_pixel_loop_oracle() {
        let x = random(&[4, 16, 16], 3);
        let cfg = SpectralConfig {
            bands: 6,
            high_bands: 2,
            detach: false,
        };
        let f = spectrum_features(&x, &cfg).unwrap();
        let (re, im) = naive_dft(&x);
        for c in 0..4 {
            let mut e = [0.0; 6];
            for a in 0..16 {
                for b in 0..16 {
                    let r = (((a as f64 - 8.0) / 16.0).powi(2) + ((b as f64 - 8.0) / 16.0).powi(2)).sqrt();
                    let band = (0..6).find(|&k| k as f64 / 6.0 <= r && r < (k + 1) as f64 / 6.0).unwrap();
                    let i = c * 256 + a * 16 + b;
                    e[band] += re[i].hypot(im[i]);
                }
            }
            let total: f64 = e.iter().sum::<f64>() + 1e-8;
            let expect = (e[4] + e[5]) / total;
            assert!((f.features.data()[c] - expect).abs() < 1e-9);
            let dist_sum: f64 = (0..6).map(|k| f.distribution.at(&[c, k])).sum();
            assert!((dist_sum - 1.0).abs() < 1e-6);
        }
        // monotone in k_h
        let mut prev = vec![0.0; 4];
        for kh in 1..6 {
            let f = spectrum_features(&x, &SpectralConfig { high_bands: kh, ..cfg }).unwrap();
            for c in 0..4 {
                assert!(f.features.data()[c] >= prev[c]);
                assert!((0.0..=1.0).contains(&f.features.data()[c]));
                prev[c] = f.features.data()[c];
            }
        }
    }

    #[test]
    fn padding_enables_odd_sizes() {
        let x = random(&[2, 6, 5], 9);
        let padded = pad_to_pow2(&x).unwrap();
        assert_eq!(padded.shape(), &[2, 8, 8]);
        assert_eq!(padded.at(&[1, 5, 4]), x.at(&[1, 5, 4]));
        assert_eq!(padded.at(&[1, 7, 7]), 0.0);
        assert!(spectrum_features(&x, &SpectralConfig::default()).is_ok());
    }

    #[test]
    fn tape_features_match_plain_features() {
        let x = random(&[2, 3, 8, 8], 21);
        let cfg = SpectralConfig::default();
        let tape = Tape::new();
        let v = spectrum_features_var(&tape.leaf(x.clone()), &cfg).unwrap();
        for m in 0..2 {
            let frame = x.narrow(0, m, 1).unwrap().reshape([3, 8, 8]).unwrap();
            let plain = spectrum_features(&frame, &cfg).unwrap();
            for c in 0..3 {
                assert!((v.value().at(&[m, c]) - plain.features.data()[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fft_adjoint_matches_finite_differences() {
        let x = random(&[2, 4, 8], 5);
        let weights = random(&[4, 8], 6);
        fn weighted<'t>(tape: &'t Tape<f64>, xv: Var<'t, f64>, w: &Tensor<f64>) -> Var<'t, f64> {
            let mag = magnitude_var(&fft2d_var(&xv).unwrap()).unwrap();
            mag.mul(&tape.constant(w.clone())).unwrap().sum_all().unwrap()
        }
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        weighted(&tape, xv, &weights).backward().unwrap();
        let ad = xv.grad().unwrap();
        let fd = central_difference(&x, 1e-5, |p| {
            let t = Tape::new();
            let v = t.leaf(p.clone());
            weighted(&t, v, &weights).item()
        });
        for (a, n) in ad.data().iter().zip(fd.data()) {
            assert!(relative_error(*a, *n) < 1e-4, "{a} vs {n}");
        }
    }

    #[test]
    fn spectrum_features_gradient() {
        let x = random(&[2, 2, 6, 4], 31);
        let cfg = SpectralConfig {
            bands: 4,
            high_bands: 2,
            detach: false,
        };
        let w = random(&[2, 2], 32);
        fn weighted<'t>(t: &'t Tape<f64>, v: Var<'t, f64>, cfg: &SpectralConfig, w: &Tensor<f64>) -> Var<'t, f64> {
            spectrum_features_var(&v, cfg)
                .unwrap()
                .mul(&t.constant(w.clone()))
                .unwrap()
                .sum_all()
                .unwrap()
        }
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        weighted(&tape, xv, &cfg, &w).backward().unwrap();
        let ad = xv.grad().unwrap();
        let fd = central_difference(&x, 1e-5, |p| {
            let t = Tape::new();
            let v = t.leaf(p.clone());
            weighted(&t, v, &cfg, &w).item()
        });
        for (a, n) in ad.data().iter().zip(fd.data()) {
            assert!(relative_error(*a, *n) < 1e-4, "{a} vs {n}");
        }
        // detached: no gradient reaches the input
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let dcfg = SpectralConfig { detach: true, ..cfg };
        let l = spectrum_features_var(&xv, &dcfg).unwrap().sum_all().unwrap();
        l.backward().unwrap();
        assert!(xv.grad().is_none());
    }

    #[test]
    fn channel_info_loss_cases() {
        let same = Tensor::<f64>::from_f64([3, 2], &[0.2, 0.5, 0.2, 0.5, 0.2, 0.5]).unwrap();
        assert!(channel_info_loss(&same).unwrap().abs() < 1e-12);
        let ortho = Tensor::<f64>::from_f64([2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((channel_info_loss(&ortho).unwrap() - 0.5).abs() < 1e-12);
        let with_zero = Tensor::<f64>::from_f64([2, 2], &[0.0, 0.0, 0.3, 0.1]).unwrap();
        let s = similarity_matrix(&with_zero).unwrap();
        assert_eq!(s.data()[..3], [0.0, 0.0, 0.0]);
        assert!((channel_info_loss(&with_zero).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn channel_info_loss_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let m = rng.gen_range(1..7);
            let d = rng.gen_range(1..9);
            let f = Tensor::<f64>::from_fn([m, d], |_| rng.gen_range(0.0..1.0));
            let rows: Vec<Vec<f64>> = (0..m).map(|i| f.data()[i * d..(i + 1) * d].to_vec()).collect();
            let mut total = 0.0;
            for a in &rows {
                for b in &rows {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                    total += dot / (na * nb);
                }
            }
            let oracle = 1.0 - total / (m * m) as f64;
            let got = channel_info_loss(&f).unwrap();
            assert!((got - oracle).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&got));

            let s = similarity_matrix(&f).unwrap();
            for i in 0..m {
                assert!((s.at(&[i, i]) - 1.0).abs() < 1e-12);
                for j in 0..m {
                    assert_eq!(s.at(&[i, j]), s.at(&[j, i]));
                }
            }
            // diagonal convention: including the m unit self-similarities
            if m > 1 {
                let off: f64 = total - m as f64;
                let excluded = 1.0 - off / (m * (m - 1)) as f64;
                let included = 1.0 - (off + m as f64) / (m * m) as f64;
                assert!((got - included).abs() < 1e-9);
                assert!((included - excluded * (m - 1) as f64 / m as f64).abs() < 1e-9);
            }

            let tape = Tape::new();
            let v = channel_info_loss_var(&tape.leaf(f.clone())).unwrap();
            assert!((v.item() - got).abs() < 1e-12);
        }
    }
}
