//! Forgetting-gate refinement.
//!
//! The forgetting parameter `A` of one path is flipped within its value range
//! (`A^I`), channels are scored by how much they already retain (`β`), and the
//! spectrum features decide how far each channel moves toward the flipped
//! gate (`α`). The refined gate `A^R` drives the other path.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ReduceOp, Tensor, EPS};

/// Axis along which `invert_gate` takes its extremes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvertAxis {
    /// Per state dimension, extremes across channels.
    #[default]
    Channels,
    /// Per channel, extremes across its state dimensions.
    States,
}

impl InvertAxis {
    fn reduce_axis(self) -> usize {
        match self {
            InvertAxis::Channels => 0,
            InvertAxis::States => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FgirConfig {
    pub eps: f64,
    pub axis: InvertAxis,
}

impl Default for FgirConfig {
    fn default() -> Self {
        FgirConfig {
            eps: EPS,
            axis: InvertAxis::Channels,
        }
    }
}

/// Refined gate plus the intermediates that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedGate<T> {
    pub a_r: Tensor<T>,
    pub a_i: Tensor<T>,
    pub beta: Tensor<T>,
    pub alpha: Tensor<T>,
    pub f_mean_softmax: Tensor<T>,
}

fn check_gate<T: Scalar>(a: &Tensor<T>, op: &'static str) -> Result<()> {
    if a.rank() != 2 {
        return Err(Error::InvalidShape {
            op,
            shape: a.shape().to_vec(),
            reason: "expected [D×Ds]".into(),
        });
    }
    Ok(())
}

fn warn_degenerate(shape: &[usize], axis: InvertAxis) {
    if shape[axis.reduce_axis()] == 1 {
        log::warn!("invert_gate: a single entry along the {axis:?} axis; the inverted gate equals the input");
    }
}

/// `A^I = max + min − A`, extremes taken along `axis` and broadcast back.
pub fn invert_gate<T: Scalar>(a: &Tensor<T>, axis: InvertAxis) -> Result<Tensor<T>> {
    check_gate(a, "invert_gate")?;
    warn_degenerate(a.shape(), axis);
    let ax = axis.reduce_axis();
    let mx = a.reduce(ReduceOp::Max, ax, true)?.values;
    let mn = a.reduce(ReduceOp::Min, ax, true)?.values;
    mx.add(&mn)?.sub(a)
}

/// `β_i = ‖exp(A_i)‖ / (max_j ‖exp(A_j)‖ + ε)`.
pub fn channel_importance<T: Scalar>(a: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    check_gate(a, "channel_importance")?;
    let norms = a.map(|v| v.exp()).reduce(ReduceOp::L2, 1, false)?.values;
    let top = norms.data().iter().copied().fold(T::neg_infinity(), T::max);
    Ok(norms.map(|v| v / (top + T::of(eps))))
}

/// `α = softmax(mean over rows of F) ⊙ (1 − β)`; returns `(α, softmax)`.
pub fn inverting_weight<T: Scalar>(f_batch: &Tensor<T>, beta: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    if f_batch.rank() != 2 || beta.shape() != [f_batch.dim(1)] {
        return Err(Error::ShapeMismatch {
            op: "inverting_weight",
            lhs: f_batch.shape().to_vec(),
            rhs: beta.shape().to_vec(),
        });
    }
    let soft = f_batch.reduce(ReduceOp::Mean, 0, false)?.values.softmax(0)?;
    let alpha = soft.mul(&beta.map(|b| T::one() - b))?;
    Ok((alpha, soft))
}

/// `A^R = (1 − α) ⊙ A + α ⊙ A^I` with `α` broadcast over state dimensions.
pub fn refine_gate<T: Scalar>(a: &Tensor<T>, a_i: &Tensor<T>, alpha: &Tensor<T>) -> Result<Tensor<T>> {
    check_gate(a, "refine_gate")?;
    let al = alpha.reshape([a.dim(0), 1])?;
    let keep = al.map(|v| T::one() - v);
    keep.mul(a)?.add(&al.mul(a_i)?)
}

/// Full refinement of `a` given the batch of spectrum features `[N×D]`.
pub fn refine<T: Scalar>(a: &Tensor<T>, f_batch: &Tensor<T>, cfg: &FgirConfig) -> Result<RefinedGate<T>> {
    let a_i = invert_gate(a, cfg.axis)?;
    let beta = channel_importance(a, cfg.eps)?;
    let (alpha, f_mean_softmax) = inverting_weight(f_batch, &beta)?;
    let a_r = refine_gate(a, &a_i, &alpha)?;
    Ok(RefinedGate {
        a_r,
        a_i,
        beta,
        alpha,
        f_mean_softmax,
    })
}

// ---- differentiable versions ----

pub fn invert_gate_var<'t, T: Scalar>(a: &Var<'t, T>, axis: InvertAxis) -> Result<Var<'t, T>> {
    check_gate(&a.value(), "invert_gate")?;
    warn_degenerate(&a.shape(), axis);
    let ax = axis.reduce_axis();
    a.max(ax, true)?.add(&a.min(ax, true)?)?.sub(a)
}

pub fn channel_importance_var<'t, T: Scalar>(a: &Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
    check_gate(&a.value(), "channel_importance")?;
    let norms = a.exp()?.l2_norm(1, false)?;
    let top = norms.max(0, true)?.add_scalar(T::of(eps))?;
    norms.div(&top)
}

pub fn inverting_weight_var<'t, T: Scalar>(f_batch: &Var<'t, T>, beta: &Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let (fs, bs) = (f_batch.shape(), beta.shape());
    if fs.len() != 2 || bs != [fs[1]] {
        return Err(Error::ShapeMismatch {
            op: "inverting_weight",
            lhs: fs,
            rhs: bs,
        });
    }
    let soft = f_batch.mean(0, false)?.softmax(0)?;
    let alpha = soft.mul(&beta.rsub_scalar(T::one())?)?;
    Ok((alpha, soft))
}

pub fn refine_gate_var<'t, T: Scalar>(a: &Var<'t, T>, a_i: &Var<'t, T>, alpha: &Var<'t, T>) -> Result<Var<'t, T>> {
    let d = a.shape()[0];
    let al = alpha.reshape([d, 1])?;
    al.rsub_scalar(T::one())?.mul(a)?.add(&al.mul(a_i)?)
}

/// Tape outputs of [`refine_var`].
pub struct RefinedGateVar<'t, T: Scalar> {
    pub a_r: Var<'t, T>,
    pub a_i: Var<'t, T>,
    pub beta: Var<'t, T>,
    pub alpha: Var<'t, T>,
    pub f_mean_softmax: Var<'t, T>,
}

impl<T: Scalar> RefinedGateVar<'_, T> {
    pub fn values(&self) -> RefinedGate<T> {
        RefinedGate {
            a_r: (*self.a_r.value()).clone(),
            a_i: (*self.a_i.value()).clone(),
            beta: (*self.beta.value()).clone(),
            alpha: (*self.alpha.value()).clone(),
            f_mean_softmax: (*self.f_mean_softmax.value()).clone(),
        }
    }
}

pub fn refine_var<'t, T: Scalar>(a: &Var<'t, T>, f_batch: &Var<'t, T>, cfg: &FgirConfig) -> Result<RefinedGateVar<'t, T>> {
    let a_i = invert_gate_var(a, cfg.axis)?;
    let beta = channel_importance_var(a, cfg.eps)?;
    let (alpha, f_mean_softmax) = inverting_weight_var(f_batch, &beta)?;
    let a_r = refine_gate_var(a, &a_i, &alpha)?;
    Ok(RefinedGateVar {
        a_r,
        a_i,
        beta,
        alpha,
        f_mean_softmax,
    })
}
