//! Per-channel diagonal state space machinery.
//!
//! Every channel `d` owns an `Ds`-dimensional state that evolves as
//! `h_t = Ā_d ⊙ h_{t-1} + B̄_d x_t`, read out as `y_t = C_dᵀ h_t`, with
//! zero-order-hold gates `Ā = exp(ΔA)` and `B̄ = (ΔA)⁻¹(exp(ΔA) − 1)ΔB`.
//! Parameters are time-invariant within a layer.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{phi1, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Materialized continuous parameters: `a`, `b`, `c` are `[D×Ds]`, `delta` is `[D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams<T> {
    pub a: Tensor<T>,
    pub b: Tensor<T>,
    pub c: Tensor<T>,
    pub delta: Tensor<T>,
}

impl<T: Scalar> SsmParams<T> {
    pub fn channels(&self) -> usize {
        self.a.dim(0)
    }

    pub fn state_dim(&self) -> usize {
        self.a.dim(1)
    }
}

/// Discrete forgetting gate `Ā` and updating gate `B̄`, both `[D×Ds]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteGates<T> {
    pub a_bar: Tensor<T>,
    pub b_bar: Tensor<T>,
}

/// Hidden state after some prefix of a sequence: `[D×Ds]` (or `[B×D×Ds]` batched).
#[derive(Debug, Clone, PartialEq)]
pub struct ScanState<T> {
    pub h: Tensor<T>,
    pub position: usize,
}

fn check_negative<T: Scalar>(a: &Tensor<T>) -> Result<()> {
    if let Some(v) = a.data().iter().find(|v| !(**v < T::zero())) {
        return Err(Error::invalid(format!(
            "discretize: forgetting parameter A must be strictly negative, found {v}"
        )));
    }
    Ok(())
}

fn check_positive<T: Scalar>(delta: &Tensor<T>) -> Result<()> {
    if let Some(v) = delta.data().iter().find(|v| !(**v > T::zero())) {
        return Err(Error::invalid(format!(
            "discretize: time step must be strictly positive, found {v}"
        )));
    }
    Ok(())
}

/// Zero-order-hold discretization; `gate_override` replaces `A` when given.
pub fn discretize<T: Scalar>(p: &SsmParams<T>, gate_override: Option<&Tensor<T>>) -> Result<DiscreteGates<T>> {
    let a = gate_override.unwrap_or(&p.a);
    if a.shape() != p.b.shape() || p.delta.shape() != [a.dim(0)] {
        return Err(Error::ShapeMismatch {
            op: "discretize",
            lhs: a.shape().to_vec(),
            rhs: p.delta.shape().to_vec(),
        });
    }
    check_negative(a)?;
    check_positive(&p.delta)?;
    let ds = a.dim(1);
    let mut a_bar = Vec::with_capacity(a.numel());
    let mut b_bar = Vec::with_capacity(a.numel());
    for (i, (&av, &bv)) in a.data().iter().zip(p.b.data()).enumerate() {
        let dt = p.delta.data()[i / ds];
        let z = dt * av;
        a_bar.push(z.exp());
        b_bar.push(T::of(phi1(z.f64())) * dt * bv);
    }
    Ok(DiscreteGates {
        a_bar: Tensor::from_parts(a.shape().to_vec(), a_bar),
        b_bar: Tensor::from_parts(a.shape().to_vec(), b_bar),
    })
}

/// `[T×D×Hs×Ws]` feature maps → `[T·Hs·Ws × D]` tokens, raster order within
/// each frame and frames in temporal order.
pub fn flatten_tokens<T: Scalar>(maps: &Tensor<T>) -> Result<Tensor<T>> {
    let s = maps.shape();
    if s.len() != 4 {
        return Err(Error::InvalidShape {
            op: "flatten_tokens",
            shape: s.to_vec(),
            reason: "expected [T×D×Hs×Ws]".into(),
        });
    }
    maps.permute(&[0, 2, 3, 1])?.into_shape([s[0] * s[2] * s[3], s[1]])
}

/// Inverse of [`flatten_tokens`].
pub fn unflatten_tokens<T: Scalar>(tokens: &Tensor<T>, frames: usize, height: usize, width: usize) -> Result<Tensor<T>> {
    let d = tokens.dim(1);
    tokens.reshape([frames, height, width, d])?.permute(&[0, 3, 1, 2])
}

struct ScanDims {
    batch: usize,
    len: usize,
    channels: usize,
    state: usize,
}

fn scan_dims<T: Scalar>(a_bar: &Tensor<T>, b_bar: &Tensor<T>, c: &Tensor<T>, x: &Tensor<T>) -> Result<ScanDims> {
    let mismatch = || Error::ShapeMismatch {
        op: "scan",
        lhs: a_bar.shape().to_vec(),
        rhs: x.shape().to_vec(),
    };
    if a_bar.rank() != 2 || b_bar.shape() != a_bar.shape() || c.shape() != a_bar.shape() {
        return Err(mismatch());
    }
    let (batch, len, channels) = match x.shape() {
        [l, d] => (1, *l, *d),
        [b, l, d] => (*b, *l, *d),
        _ => return Err(mismatch()),
    };
    if channels != a_bar.dim(0) {
        return Err(mismatch());
    }
    Ok(ScanDims {
        batch,
        len,
        channels,
        state: a_bar.dim(1),
    })
}

/// One recurrence step for every batch item; writes `y_t` and updates `h` in place.
#[inline]
fn step<T: Scalar>(dims: &ScanDims, a: &[T], bb: &[T], c: &[T], x: &[T], t: usize, h: &mut [T], y: Option<&mut [T]>) {
    let (l, dch, ds) = (dims.len, dims.channels, dims.state);
    let mut y = y;
    for b in 0..dims.batch {
        for d in 0..dch {
            let xv = x[(b * l + t) * dch + d];
            let hs = &mut h[(b * dch + d) * ds..(b * dch + d + 1) * ds];
            let row = d * ds;
            let mut acc = T::zero();
            for s in 0..ds {
                let v = a[row + s] * hs[s] + bb[row + s] * xv;
                hs[s] = v;
                acc += c[row + s] * v;
            }
            if let Some(y) = y.as_deref_mut() {
                y[(b * l + t) * dch + d] = acc;
            }
        }
    }
}

fn initial_state<T: Scalar>(dims: &ScanDims, h0: Option<&ScanState<T>>) -> Result<Vec<T>> {
    let n = dims.batch * dims.channels * dims.state;
    match h0 {
        None => Ok(vec![T::zero(); n]),
        Some(s) if s.h.numel() == n => Ok(s.h.data().to_vec()),
        Some(s) => Err(Error::ShapeMismatch {
            op: "scan (initial state)",
            lhs: s.h.shape().to_vec(),
            rhs: vec![dims.batch, dims.channels, dims.state],
        }),
    }
}

fn state_shape(x: &Tensor<impl Scalar>, dims: &ScanDims) -> Vec<usize> {
    if x.rank() == 3 {
        vec![dims.batch, dims.channels, dims.state]
    } else {
        vec![dims.channels, dims.state]
    }
}

/// Runs the recurrence over `x` (`[L×D]` or `[B×L×D]`, batch items independent).
/// `h0` defaults to zeros. Linear in `L`.
pub fn scan<T: Scalar>(
    gates: &DiscreteGates<T>,
    c: &Tensor<T>,
    x: &Tensor<T>,
    h0: Option<&ScanState<T>>,
) -> Result<(Tensor<T>, ScanState<T>)> {
    let dims = scan_dims(&gates.a_bar, &gates.b_bar, c, x)?;
    let mut h = initial_state(&dims, h0)?;
    let mut y = vec![T::zero(); x.numel()];
    for t in 0..dims.len {
        step(
            &dims,
            gates.a_bar.data(),
            gates.b_bar.data(),
            c.data(),
            x.data(),
            t,
            &mut h,
            Some(&mut y),
        );
    }
    let state = ScanState {
        h: Tensor::from_parts(state_shape(x, &dims), h),
        position: h0.map_or(0, |s| s.position) + dims.len,
    };
    Ok((Tensor::from_parts(x.shape().to_vec(), y), state))
}

/// Gradients of a scan with respect to its inputs.
#[derive(Debug, Clone)]
pub struct ScanGrads<T> {
    pub a_bar: Tensor<T>,
    pub b_bar: Tensor<T>,
    pub c: Tensor<T>,
    pub x: Tensor<T>,
}

/// Adjoint (reverse) recurrence for [`scan`].
///
/// States are checkpointed every `⌈√L⌉` steps on a forward sweep, then each
/// segment is recomputed from its checkpoint while walking backwards, so
/// memory is `O(√L · B·D·Ds)` beyond the inputs.
pub fn scan_backward<T: Scalar>(
    gates: &DiscreteGates<T>,
    c: &Tensor<T>,
    x: &Tensor<T>,
    h0: Option<&ScanState<T>>,
    dy: &Tensor<T>,
) -> Result<ScanGrads<T>> {
    let dims = scan_dims(&gates.a_bar, &gates.b_bar, c, x)?;
    if dy.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "scan_backward",
            lhs: dy.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    let (a, bb, cc, xs) = (gates.a_bar.data(), gates.b_bar.data(), c.data(), x.data());
    let (l, dch, ds) = (dims.len, dims.channels, dims.state);
    let width = dims.batch * dch * ds;
    let seg = ((l as f64).sqrt().ceil() as usize).max(1);

    // checkpoint j holds the state entering token j·seg
    let mut checkpoints = Vec::with_capacity(l.div_ceil(seg));
    let mut h = initial_state(&dims, h0)?;
    for t in 0..l {
        if t % seg == 0 {
            checkpoints.push(h.clone());
        }
        step(&dims, a, bb, cc, xs, t, &mut h, None);
    }

    let mut ga = vec![T::zero(); a.len()];
    let mut gb = vec![T::zero(); a.len()];
    let mut gc = vec![T::zero(); a.len()];
    let mut gx = vec![T::zero(); xs.len()];
    let mut carry = vec![T::zero(); width];
    let mut states = vec![T::zero(); seg * width];
    let dyd = dy.data();

    for (j, cp) in checkpoints.iter().enumerate().rev() {
        let start = j * seg;
        let end = (start + seg).min(l);
        let mut h = cp.clone();
        for t in start..end {
            step(&dims, a, bb, cc, xs, t, &mut h, None);
            states[(t - start) * width..(t - start + 1) * width].copy_from_slice(&h);
        }
        for t in (start..end).rev() {
            let cur = &states[(t - start) * width..(t - start + 1) * width];
            let prev: &[T] = if t == start {
                cp
            } else {
                &states[(t - start - 1) * width..(t - start) * width]
            };
            for b in 0..dims.batch {
                for d in 0..dch {
                    let xi = (b * l + t) * dch + d;
                    let (dyv, xv) = (dyd[xi], xs[xi]);
                    let off = (b * dch + d) * ds;
                    let row = d * ds;
                    let mut dx = T::zero();
                    for s in 0..ds {
                        let g = cc[row + s] * dyv + a[row + s] * carry[off + s];
                        gc[row + s] += dyv * cur[off + s];
                        ga[row + s] += g * prev[off + s];
                        gb[row + s] += g * xv;
                        dx += g * bb[row + s];
                        carry[off + s] = g;
                    }
                    gx[xi] = dx;
                }
            }
        }
    }
    let gshape = gates.a_bar.shape().to_vec();
    Ok(ScanGrads {
        a_bar: Tensor::from_parts(gshape.clone(), ga),
        b_bar: Tensor::from_parts(gshape.clone(), gb),
        c: Tensor::from_parts(gshape, gc),
        x: Tensor::from_parts(x.shape().to_vec(), gx),
    })
}

// ---- trainable parameters ----

/// Initialization ranges for a fresh SSM.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsmInit {
    /// `A_log` is drawn uniformly from `[ln a_min, ln a_max]`, so `A ∈ [−a_max, −a_min]`.
    pub a_min: f64,
    pub a_max: f64,
    /// `softplus(Δ_raw)` is drawn log-uniformly from `[dt_min, dt_max]`.
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Default for SsmInit {
    fn default() -> Self {
        SsmInit {
            a_min: 0.5,
            a_max: 8.0,
            dt_min: 1e-3,
            dt_max: 0.1,
        }
    }
}

/// Parameter handles of one SSM module in a [`ParamStore`].
///
/// `A = −exp(A_log)` and `Δ = softplus(Δ_raw)`, so both sign constraints hold
/// for any value of the trainable leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SsmLeaves {
    pub a_log: ParamId,
    pub b: ParamId,
    pub c: ParamId,
    pub dt_raw: ParamId,
    pub channels: usize,
    pub state_dim: usize,
}

/// Inverse of softplus.
fn softplus_inv(y: f64) -> f64 {
    y.exp_m1().ln()
}

impl SsmLeaves {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        state_dim: usize,
        init: &SsmInit,
        rng: &mut R,
    ) -> Self {
        let (lo, hi) = (init.a_min.ln(), init.a_max.ln());
        let a_log = Tensor::from_fn([channels, state_dim], |_| T::of(rng.gen_range(lo..=hi)));
        let normal = Normal::new(0.0, 1.0 / (state_dim as f64).sqrt()).expect("positive std");
        let b = Tensor::from_fn([channels, state_dim], |_| T::of(normal.sample(rng)));
        let c = Tensor::from_fn([channels, state_dim], |_| T::of(normal.sample(rng)));
        let (dlo, dhi) = (init.dt_min.ln(), init.dt_max.ln());
        let dt_raw = Tensor::from_fn([channels], |_| T::of(softplus_inv(rng.gen_range(dlo..=dhi).exp())));
        SsmLeaves {
            a_log: store.add(format!("{prefix}.a_log"), a_log, false),
            b: store.add(format!("{prefix}.b"), b, false),
            c: store.add(format!("{prefix}.c"), c, false),
            dt_raw: store.add(format!("{prefix}.dt_raw"), dt_raw, false),
            channels,
            state_dim,
        }
    }

    /// Current continuous parameters as plain tensors.
    pub fn materialize<T: Scalar>(&self, store: &ParamStore<T>) -> SsmParams<T> {
        SsmParams {
            a: store.get(self.a_log).map(|v| -v.exp()),
            b: store.get(self.b).clone(),
            c: store.get(self.c).clone(),
            delta: store.get(self.dt_raw).map(|v| crate::autograd::Unary::Softplus.apply(v)),
        }
    }

    /// `A = −exp(A_log)` on the tape.
    pub fn a<'t, T: Scalar>(&self, bound: &Bound<'t, T>) -> Result<Var<'t, T>> {
        bound.var(self.a_log).exp()?.neg()
    }

    pub fn delta<'t, T: Scalar>(&self, bound: &Bound<'t, T>) -> Result<Var<'t, T>> {
        bound.var(self.dt_raw).softplus()
    }
}

/// Differentiable discretization; `a` is `[D×Ds]`, `delta` `[D]`, `b` `[D×Ds]`.
pub fn discretize_var<'t, T: Scalar>(a: &Var<'t, T>, delta: &Var<'t, T>, b: &Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
    check_negative(&a.value())?;
    check_positive(&delta.value())?;
    let channels = a.shape()[0];
    let dt = delta.reshape([channels, 1])?;
    let z = a.mul(&dt)?;
    let a_bar = z.exp()?;
    let b_bar = z.phi1()?.mul(&dt)?.mul(b)?;
    Ok((a_bar, b_bar))
}

/// Differentiable scan. Backward runs the adjoint recurrence instead of
/// unrolling the sequence onto the tape.
pub fn scan_var<'t, T: Scalar>(
    a_bar: &Var<'t, T>,
    b_bar: &Var<'t, T>,
    c: &Var<'t, T>,
    x: &Var<'t, T>,
    h0: Option<&ScanState<T>>,
) -> Result<(Var<'t, T>, ScanState<T>)> {
    let gates = DiscreteGates {
        a_bar: (*a_bar.value()).clone(),
        b_bar: (*b_bar.value()).clone(),
    };
    let cv = c.value();
    let xv = x.value();
    let (y, state) = scan(&gates, &cv, &xv, h0)?;
    let h0 = h0.cloned();
    let out = x.tape().custom(&[*a_bar, *b_bar, *c, *x], y, "scan", move |g| {
        let grads = scan_backward(&gates, &cv, &xv, h0.as_ref(), g).expect("shapes checked in forward");
        vec![Some(grads.a_bar), Some(grads.b_bar), Some(grads.c), Some(grads.x)]
    })?;
    Ok((out, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::gradcheck::{central_difference, relative_error};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Per-step unrolled recurrence, written independently of the kernel.
    fn unrolled(a_bar: &Tensor<f64>, b_bar: &Tensor<f64>, c: &Tensor<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (l, d) = (x.dim(0), x.dim(1));
        let ds = a_bar.dim(1);
        let mut h = vec![vec![0.0; ds]; d];
        let mut y = Tensor::zeros([l, d]);
        for t in 0..l {
            for ch in 0..d {
                let mut out = 0.0;
                for s in 0..ds {
                    h[ch][s] = a_bar.at(&[ch, s]) * h[ch][s] + b_bar.at(&[ch, s]) * x.at(&[t, ch]);
                    out += c.at(&[ch, s]) * h[ch][s];
                }
                y.data_mut()[t * d + ch] = out;
            }
        }
        y
    }

    fn random_params(d: usize, ds: usize, rng: &mut ChaCha8Rng) -> SsmParams<f64> {
        SsmParams {
            a: Tensor::from_fn([d, ds], |_| -rng.gen_range(0.1..4.0)),
            b: Tensor::from_fn([d, ds], |_| rng.gen_range(-1.0..1.0)),
            c: Tensor::from_fn([d, ds], |_| rng.gen_range(-1.0..1.0)),
            delta: Tensor::from_fn([d], |_| rng.gen_range(0.01..0.5)),
        }
    }

    #[test]
    fn closed_form_half_gate() {
        let p = SsmParams {
            a: Tensor::<f64>::from_f64([1, 1], &[-1.0]).unwrap(),
            b: Tensor::<f64>::from_f64([1, 1], &[0.8]).unwrap(),
            c: Tensor::<f64>::from_f64([1, 1], &[1.0]).unwrap(),
            delta: Tensor::<f64>::from_f64([1], &[2f64.ln()]).unwrap(),
        };
        let g = discretize(&p, None).unwrap();
        assert!((g.a_bar.item() - 0.5).abs() < 1e-12);
        assert!((g.b_bar.item() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn small_step_matches_taylor_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = random_params(3, 4, &mut rng);
        p.delta = Tensor::full([3], 1e-8);
        let g = discretize(&p, None).unwrap();
        for i in 0..12 {
            let a = p.a.data()[i];
            let taylor_a = 1.0 + 1e-8 * a;
            let taylor_b = 1e-8 * p.b.data()[i];
            assert!(((g.a_bar.data()[i] - taylor_a) / taylor_a).abs() < 1e-4);
            assert!(((g.b_bar.data()[i] - taylor_b) / taylor_b).abs() < 1e-4);
        }
    }

    #[test]
    fn matches_scalar_reference_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(5, 3, &mut rng);
        let g = discretize(&p, None).unwrap();
        for d in 0..5 {
            for s in 0..3 {
                let (a, b, dt) = (p.a.at(&[d, s]), p.b.at(&[d, s]), p.delta.data()[d]);
                let lit = (1.0 / (dt * a)) * ((dt * a).exp() - 1.0) * (dt * b);
                assert!((g.b_bar.at(&[d, s]) - lit).abs() < 1e-12);
                assert_eq!(g.a_bar.at(&[d, s]), (dt * a).exp());
            }
        }
    }

    #[test]
    fn sign_violations_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = random_params(2, 2, &mut rng);
        let bad = Tensor::<f64>::from_f64([2, 2], &[-1.0, 0.0, -1.0, -1.0]).unwrap();
        assert!(discretize(&p, Some(&bad)).is_err());
        p.delta = Tensor::<f64>::from_f64([2], &[0.1, 0.0]).unwrap();
        assert!(discretize(&p, None).is_err());
    }

    #[test]
    fn flatten_order_and_round_trip() {
        let m = Tensor::<f64>::from_f64([1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        assert_eq!(flatten_tokens(&m).unwrap().data(), &[1., 2., 3., 4.]);
        let maps = Tensor::<f64>::from_fn([2, 3, 2, 2], |i| (i[0] * 1000 + i[1] * 100 + i[2] * 10 + i[3]) as f64);
        let seq = flatten_tokens(&maps).unwrap();
        assert_eq!(seq.shape(), &[8, 3]);
        for t in 0..8 {
            let frame = (seq.at(&[t, 0]) / 1000.0).floor() as usize;
            assert_eq!(frame, t / 4);
        }
        assert_eq!(unflatten_tokens(&seq, 2, 2, 2).unwrap(), maps);
    }

    #[test]
    fn degenerate_gates() {
        let x = Tensor::<f64>::from_f64([4, 1], &[1.0, -2.0, 0.5, 3.0]).unwrap();
        let g = DiscreteGates {
            a_bar: Tensor::<f64>::from_f64([1, 1], &[0.0]).unwrap(),
            b_bar: Tensor::<f64>::from_f64([1, 1], &[2.0]).unwrap(),
        };
        let c = Tensor::<f64>::from_f64([1, 1], &[1.5]).unwrap();
        let (y, _) = scan(&g, &c, &x, None).unwrap();
        assert_eq!(y.data(), &[3.0, -6.0, 1.5, 9.0]);

        let ones = DiscreteGates {
            a_bar: Tensor::ones([1, 1]),
            b_bar: Tensor::ones([1, 1]),
        };
        let (y, _) = scan(&ones, &Tensor::ones([1, 1]), &x, None).unwrap();
        assert_eq!(y.data(), &[1.0, -1.0, -0.5, 2.5]);
    }

    #[test]
    fn matches_unrolled_oracle_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (l, d, ds) = (17, 3, 4);
        let p = random_params(d, ds, &mut rng);
        let g = discretize(&p, None).unwrap();
        let x = Tensor::from_fn([l, d], |_| rng.gen_range(-1.0..1.0));
        let (y, _) = scan(&g, &p.c, &x, None).unwrap();
        assert!(y.max_abs_diff(&unrolled(&g.a_bar, &g.b_bar, &p.c, &x)) < 1e-10);

        let w = Tensor::from_fn([l, d], |_| rng.gen_range(-1.0..1.0));
        let inputs = [g.a_bar.clone(), g.b_bar.clone(), p.c.clone(), x.clone()];
        let loss = |vals: &[Tensor<f64>]| -> f64 {
            let y = unrolled(&vals[0], &vals[1], &vals[2], &vals[3]);
            y.mul(&w).unwrap().sum_all()
        };
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let (yv, _) = scan_var(&vars[0], &vars[1], &vars[2], &vars[3], None).unwrap();
        yv.mul(&tape.constant(w.clone())).unwrap().sum_all().unwrap().backward().unwrap();
        for (i, v) in vars.iter().enumerate() {
            let fd = central_difference(&inputs[i], 1e-5, |probe| {
                let mut vals = inputs.clone();
                vals[i] = probe.clone();
                loss(&vals)
            });
            for (a, n) in v.grad().unwrap().data().iter().zip(fd.data()) {
                assert!(relative_error(*a, *n) < 1e-4, "input {i}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn batched_scan_equals_independent_scans() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(3, 2, &mut rng);
        let g = discretize(&p, None).unwrap();
        let x = Tensor::from_fn([2, 9, 3], |_| rng.gen_range(-1.0..1.0));
        let (y, state) = scan(&g, &p.c, &x, None).unwrap();
        assert_eq!(state.h.shape(), &[2, 3, 2]);
        for b in 0..2 {
            let xb = x.narrow(0, b, 1).unwrap().reshape([9, 3]).unwrap();
            let (yb, _) = scan(&g, &p.c, &xb, None).unwrap();
            assert_eq!(y.narrow(0, b, 1).unwrap().reshape([9, 3]).unwrap(), yb);
        }
    }

    #[test]
    fn zero_input_state_decays() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_params(4, 3, &mut rng);
        let g = discretize(&p, None).unwrap();
        let mut state = ScanState {
            h: Tensor::from_fn([4, 3], |_| rng.gen_range(-1.0..1.0)),
            position: 0,
        };
        let zero = Tensor::zeros([1, 4]);
        let mut prev = state.h.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..20 {
            let (_, next) = scan(&g, &p.c, &zero, Some(&state)).unwrap();
            let n = next.h.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n < prev);
            prev = n;
            state = next;
        }
        assert_eq!(state.position, 20);
    }

    #[test]
    fn backward_rejects_bad_cotangent() {
        let g = DiscreteGates {
            a_bar: Tensor::full([2, 2], 0.5),
            b_bar: Tensor::ones([2, 2]),
        };
        let x = Tensor::<f64>::zeros([5, 2]);
        assert!(scan_backward(&g, &Tensor::ones([2, 2]), &x, None, &Tensor::zeros([4, 2])).is_err());
        assert!(scan(&g, &Tensor::ones([2, 2]), &Tensor::zeros([5, 3]), None).is_err());
    }

    #[test]
    fn discretize_var_matches_plain() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let leaves = SsmLeaves::init(&mut store, "ssm", 3, 4, &SsmInit::default(), &mut rng);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let (ab, bb) = discretize_var(&leaves.a(&bound).unwrap(), &leaves.delta(&bound).unwrap(), &bound.var(leaves.b)).unwrap();
        let plain = discretize(&leaves.materialize(&store), None).unwrap();
        assert!(ab.value().max_abs_diff(&plain.a_bar) < 1e-15);
        assert!(bb.value().max_abs_diff(&plain.b_bar) < 1e-15);
        let delta = leaves.materialize(&store).delta;
        assert!(delta.data().iter().all(|&d| (1e-3 - 1e-12..=0.1 + 1e-12).contains(&d)));
    }

    proptest! {
        #[test]
        fn gates_stay_in_unit_interval(
            a_log in prop::collection::vec(-4.0f64..3.0, 6),
            dt_raw in prop::collection::vec(-8.0f64..3.0, 2),
        ) {
            let p = SsmParams {
                a: Tensor::new([2, 3], a_log.iter().map(|v| -v.exp()).collect()).unwrap(),
                b: Tensor::ones([2, 3]),
                c: Tensor::ones([2, 3]),
                delta: Tensor::new([2], dt_raw.iter().map(|&v| crate::autograd::Unary::Softplus.apply(v)).collect()).unwrap(),
            };
            let g = discretize(&p, None).unwrap();
            prop_assert!(g.a_bar.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }

        #[test]
        fn linear_and_split_invariant(seed in 0u64..500, split in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_params(3, 3, &mut rng);
            let g = discretize(&p, None).unwrap();
            let x = Tensor::from_fn([20, 3], |_| rng.gen_range(-1.0..1.0));
            let x2 = Tensor::from_fn([20, 3], |_| rng.gen_range(-1.0..1.0));
            let (y, full_state) = scan(&g, &p.c, &x, None).unwrap();
            let (y2, _) = scan(&g, &p.c, &x2, None).unwrap();
            let (ysum, _) = scan(&g, &p.c, &x.add(&x2).unwrap(), None).unwrap();
            prop_assert!(ysum.max_abs_diff(&y.add(&y2).unwrap()) < 1e-12);

            let (ya, sa) = scan(&g, &p.c, &x.narrow(0, 0, split).unwrap(), None).unwrap();
            let (yb, sb) = scan(&g, &p.c, &x.narrow(0, split, 20 - split).unwrap(), Some(&sa)).unwrap();
            prop_assert_eq!(Tensor::concat(&[&ya, &yb], 0).unwrap(), y);
            prop_assert_eq!(sb.h, full_state.h);
        }
    }
}
