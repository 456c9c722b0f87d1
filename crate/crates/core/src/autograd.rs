//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every op applied to its [`Var`] handles in execution
//! order, which is a topological order by construction. [`Tape::backward`]
//! walks the record once in reverse, accumulating gradients into leaves.
//! Gradients persist on the tape across calls until [`Tape::zero_grad`].
//!
//! The tape is rebuilt for every forward pass; parameters live in a
//! [`ParamStore`](crate::params::ParamStore) and are bound as fresh leaves.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{broadcast_shape, ReduceOp, Tensor, EPS};

/// Backward rule: maps the output gradient to one optional gradient per parent.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    checks: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            checks: Cell::new(false),
        }
    }

    /// Enables debug-mode finiteness and zero-denominator assertions.
    pub fn with_checks(self, on: bool) -> Self {
        self.checks.set(on);
        self
    }

    pub fn checks(&self) -> bool {
        self.checks.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, parents: Vec<usize>, backward: Option<BackwardFn<T>>, leaf_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = leaf_grad || parents.iter().any(|&p| nodes[p].requires_grad);
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward: if requires_grad { backward } else { None },
            requires_grad,
            grad: None,
        });
        Var { tape: self, id }
    }

    /// A trainable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Vec::new(), None, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Vec::new(), None, false)
    }

    /// Records an op with a caller-supplied backward rule.
    ///
    /// `backward` receives the gradient of the output and must return one entry
    /// per input, each `None` or shaped like that input.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t, T>],
        value: Tensor<T>,
        op: &'static str,
        backward: impl Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Result<Var<'t, T>> {
        if self.checks() && !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let parents = inputs.iter().map(|v| v.id).collect();
        Ok(self.push(value, parents, Some(Box::new(backward)), false))
    }

    /// Accumulates d(root)/d(leaf) into every tracked leaf.
    pub fn backward(&self, root: Var<'_, T>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let shape = nodes[root.id].value.shape().to_vec();
        if nodes[root.id].value.numel() != 1 {
            return Err(Error::NonScalarRoot(shape));
        }
        if !nodes[root.id].requires_grad {
            log::warn!("backward from a root that does not depend on any tracked leaf");
            return Ok(());
        }
        let mut pending: Vec<Option<Tensor<T>>> = (0..=root.id).map(|_| None).collect();
        pending[root.id] = Some(Tensor::ones(shape));
        for id in (0..=root.id).rev() {
            let Some(g) = pending[id].take() else { continue };
            if nodes[id].backward.is_none() {
                let node = &mut nodes[id];
                if node.requires_grad && node.parents.is_empty() {
                    match node.grad.as_mut() {
                        Some(acc) => acc.add_assign(&g),
                        None => node.grad = Some(g),
                    }
                }
                continue;
            }
            let grads = (nodes[id].backward.as_ref().unwrap())(&g);
            debug_assert_eq!(grads.len(), nodes[id].parents.len());
            let parents = nodes[id].parents.clone();
            for (p, pg) in parents.into_iter().zip(grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "gradient shape for parent {p}");
                match pending[p].as_mut() {
                    Some(acc) => acc.add_assign(&pg),
                    None => pending[p] = Some(pg),
                }
            }
        }
        Ok(())
    }

    pub fn grad(&self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.nodes.borrow()[v.id].grad.clone()
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }
}

macro_rules! check_finite {
    ($tape:expr, $t:expr, $op:expr) => {
        if $tape.checks() && !$t.all_finite() {
            return Err(Error::NonFinite { op: $op });
        }
    };
}

/// Elementwise unary functions with closed-form derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Exp,
    Log,
    Sqrt,
    Neg,
    Reciprocal,
    Square,
    Softplus,
    /// tanh-approximated GELU.
    Gelu,
    /// `expm1(z) / z`, continuous at 0.
    Phi1,
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (y, dy)
}

pub(crate) fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        z.exp_m1() / z
    }
}

fn phi1_prime(z: f64) -> f64 {
    if z.abs() < 1e-3 {
        0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0 + z.powi(4) / 144.0
    } else {
        (z.exp() - phi1(z)) / z
    }
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Sqrt => "sqrt",
            Unary::Neg => "neg",
            Unary::Reciprocal => "reciprocal",
            Unary::Square => "square",
            Unary::Softplus => "softplus",
            Unary::Gelu => "gelu",
            Unary::Phi1 => "phi1",
        }
    }

    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Neg => -x,
            Unary::Reciprocal => x.recip(),
            Unary::Square => x * x,
            Unary::Softplus => {
                // log(1 + e^x) without overflow
                x.max(T::zero()) + (-x.abs()).exp().ln_1p()
            }
            Unary::Gelu => T::of(gelu_parts(x.f64()).0),
            Unary::Phi1 => T::of(phi1(x.f64())),
        }
    }

    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Unary::Exp => y,
            Unary::Log => x.recip(),
            Unary::Sqrt => T::of(0.5) / y,
            Unary::Neg => -T::one(),
            Unary::Reciprocal => -(y * y),
            Unary::Square => T::of(2.0) * x,
            Unary::Softplus => T::one() / (T::one() + (-x).exp()),
            Unary::Gelu => T::of(gelu_parts(x.f64()).1),
            Unary::Phi1 => T::of(phi1_prime(x.f64())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Shared handle to the forward value.
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.grad(*self)
    }

    pub fn item(&self) -> T {
        self.value().item()
    }

    /// Same value, cut off from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant((*self.value()).clone())
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward(*self)
    }

    fn unary(&self, op: Unary) -> Result<Var<'t, T>> {
        let x = self.value();
        if self.tape.checks() && op == Unary::Reciprocal && x.data().iter().any(|v| v.is_zero()) {
            return Err(Error::ZeroDenominator { op: "reciprocal" });
        }
        let y = Rc::new(x.map(|v| op.apply(v)));
        check_finite!(self.tape, y, op.name());
        let yc = y.clone();
        self.tape.custom(&[*self], (*y).clone(), op.name(), move |g| {
            let data = g
                .data()
                .iter()
                .zip(x.data().iter().zip(yc.data()))
                .map(|(&g, (&x, &y))| g * op.derivative(x, y))
                .collect();
            vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
        })
    }

    pub fn exp(&self) -> Result<Var<'t, T>> {
        self.unary(Unary::Exp)
    }

    pub fn log(&self) -> Result<Var<'t, T>> {
        self.unary(Unary::Log)
    }

    pub fn sqrt(&self) -> Result<Var<'t, T>> {
        self.unary(Unary::Sqrt)
    }

    pub fn neg(&self) -> Result<Var<'t, T>> {
        self.unary(Unary::Neg)
    }

    pub fn reciprocal(&self) -> Result<Var<'t, T>> {
        self.unary(Unary::Reciprocal)
    }

    pub fn square(&self) -> Result<Var<'t, T>> {
        self.unary(Unary::Square)
    }

    pub fn softplus(&self) -> Result<Var<'t, T>> {
        self.unary(Unary::Softplus)
    }

    pub fn gelu(&self) -> Result<Var<'t, T>> {
        self.unary(Unary::Gelu)
    }

    pub fn phi1(&self) -> Result<Var<'t, T>> {
        self.unary(Unary::Phi1)
    }

    pub fn map_unary(&self, op: Unary) -> Result<Var<'t, T>> {
        self.unary(op)
    }

    fn binary(&self, other: &Var<'t, T>, op: Binary) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let name = match op {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        if self.tape.checks() && op == Binary::Div && b.data().iter().any(|v| v.is_zero()) {
            return Err(Error::ZeroDenominator { op: "div" });
        }
        let y = match op {
            Binary::Add => a.add(&b)?,
            Binary::Sub => a.sub(&b)?,
            Binary::Mul => a.mul(&b)?,
            Binary::Div => a.div(&b)?,
        };
        check_finite!(self.tape, y, name);
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.tape.custom(&[*self, *other], y, name, move |g| {
            let (ga, gb) = match op {
                Binary::Add => (g.clone(), g.clone()),
                Binary::Sub => (g.clone(), g.map(|v| -v)),
                Binary::Mul => (g.mul(&b).unwrap(), g.mul(&a).unwrap()),
                Binary::Div => {
                    let ga = g.div(&b).unwrap();
                    // d(a/b)/db = -a / b^2
                    let q = a.div(&b).unwrap().div(&b).unwrap();
                    (ga, g.mul(&q).unwrap().map(|v| -v))
                }
            };
            vec![Some(ga.sum_to_shape(&sa).unwrap()), Some(gb.sum_to_shape(&sb).unwrap())]
        })
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Binary::Div)
    }

    pub fn add_scalar(&self, s: T) -> Result<Var<'t, T>> {
        let y = self.value().map(|v| v + s);
        self.tape.custom(&[*self], y, "add_scalar", |g| vec![Some(g.clone())])
    }

    pub fn mul_scalar(&self, s: T) -> Result<Var<'t, T>> {
        let y = self.value().map(|v| v * s);
        self.tape.custom(&[*self], y, "mul_scalar", move |g| vec![Some(g.scale(s))])
    }

    /// `s - self`
    pub fn rsub_scalar(&self, s: T) -> Result<Var<'t, T>> {
        let y = self.value().map(|v| s - v);
        self.tape.custom(&[*self], y, "rsub_scalar", |g| vec![Some(g.map(|v| -v))])
    }

    /// `max(self, floor)`; gradient passes only where the input exceeds `floor`.
    pub fn clamp_min(&self, floor: T) -> Result<Var<'t, T>> {
        let x = self.value();
        let y = x.map(|v| v.max(floor));
        self.tape.custom(&[*self], y, "clamp_min", move |g| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&g, &v)| if v > floor { g } else { T::zero() })
                .collect();
            vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
        })
    }

    /// `[m×k]·[k×n]`; backward `dA = dY·Bᵀ`, `dB = Aᵀ·dY`.
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let y = a.matmul(&b)?;
        check_finite!(self.tape, y, "matmul");
        let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
        self.tape.custom(&[*self, *other], y, "matmul", move |g| {
            let mut ga = vec![T::zero(); m * k];
            T::gemm(m, n, k, (g.data(), n as isize, 1), (b.data(), 1, n as isize), &mut ga, false);
            let mut gb = vec![T::zero(); k * n];
            T::gemm(k, m, n, (a.data(), 1, k as isize), (g.data(), n as isize, 1), &mut gb, false);
            vec![Some(Tensor::from_parts(vec![m, k], ga)), Some(Tensor::from_parts(vec![k, n], gb))]
        })
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let x = self.value();
        let src = x.shape().to_vec();
        let y = x.reshape(shape)?;
        self.tape
            .custom(&[*self], y, "reshape", move |g| vec![Some(g.reshape(src.clone()).unwrap())])
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Var<'t, T>> {
        let y = self.value().permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.tape
            .custom(&[*self], y, "permute", move |g| vec![Some(g.permute(&inverse).unwrap())])
    }

    pub fn transpose(&self) -> Result<Var<'t, T>> {
        self.permute(&[1, 0])
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let y = x.narrow(axis, start, len)?;
        let src = x.shape().to_vec();
        self.tape.custom(&[*self], y, "narrow", move |g| {
            let full = src[axis];
            let mut parts = Vec::new();
            let mut before = src.clone();
            before[axis] = start;
            let mut after = src.clone();
            after[axis] = full - start - len;
            let zb = Tensor::zeros(before);
            let za = Tensor::zeros(after);
            if start > 0 {
                parts.push(&zb);
            }
            parts.push(g);
            if full - start - len > 0 {
                parts.push(&za);
            }
            vec![Some(Tensor::concat(&parts, axis).unwrap())]
        })
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero vars"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let y = Tensor::concat(&refs, axis)?;
        let extents: Vec<usize> = values.iter().map(|v| v.dim(axis)).collect();
        first.tape.custom(parts, y, "concat", move |g| {
            let mut start = 0;
            extents
                .iter()
                .map(|&len| {
                    let piece = g.narrow(axis, start, len).unwrap();
                    start += len;
                    Some(piece)
                })
                .collect()
        })
    }

    /// Axis reduction. Max/min route gradient to the (first) arg-extremum;
    /// l2 routes `g·x/‖x‖`, zero where the norm vanishes.
    pub fn reduce(&self, op: ReduceOp, axis: usize, keepdim: bool) -> Result<Var<'t, T>> {
        let x = self.value();
        let r = x.reduce(op, axis, keepdim)?;
        let src = x.shape().to_vec();
        let (outer, len, inner) = (
            src[..axis].iter().product::<usize>(),
            src[axis],
            src[axis + 1..].iter().product::<usize>(),
        );
        let norms = r.values.clone();
        let indices = r.indices;
        self.tape.custom(&[*self], r.values, "reduce", move |g| {
            let mut out = vec![T::zero(); x.numel()];
            let gd = g.data();
            for o in 0..outer {
                for i in 0..inner {
                    let r = o * inner + i;
                    let at = |k: usize| (o * len + k) * inner + i;
                    match op {
                        ReduceOp::Sum => (0..len).for_each(|k| out[at(k)] = gd[r]),
                        ReduceOp::Mean => {
                            let s = gd[r] / T::of(len as f64);
                            (0..len).for_each(|k| out[at(k)] = s)
                        }
                        ReduceOp::Max | ReduceOp::Min => {
                            out[at(indices.as_ref().unwrap()[r])] = gd[r];
                        }
                        ReduceOp::L2 => {
                            let n = norms.data()[r];
                            if n > T::zero() {
                                (0..len).for_each(|k| out[at(k)] = gd[r] * x.data()[at(k)] / n)
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor::from_parts(src.clone(), out))]
        })
    }

    pub fn sum(&self, axis: usize, keepdim: bool) -> Result<Var<'t, T>> {
        self.reduce(ReduceOp::Sum, axis, keepdim)
    }

    pub fn mean(&self, axis: usize, keepdim: bool) -> Result<Var<'t, T>> {
        self.reduce(ReduceOp::Mean, axis, keepdim)
    }

    pub fn max(&self, axis: usize, keepdim: bool) -> Result<Var<'t, T>> {
        self.reduce(ReduceOp::Max, axis, keepdim)
    }

    pub fn min(&self, axis: usize, keepdim: bool) -> Result<Var<'t, T>> {
        self.reduce(ReduceOp::Min, axis, keepdim)
    }

    pub fn l2_norm(&self, axis: usize, keepdim: bool) -> Result<Var<'t, T>> {
        self.reduce(ReduceOp::L2, axis, keepdim)
    }

    pub fn sum_all(&self) -> Result<Var<'t, T>> {
        let n = self.value().numel();
        self.reshape([n])?.sum(0, false)
    }

    pub fn mean_all(&self) -> Result<Var<'t, T>> {
        let n = self.value().numel();
        self.reshape([n])?.mean(0, false)
    }

    /// Softmax along `axis`; backward `s ⊙ (g − Σ g⊙s)`.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let s = Rc::new(x.softmax(axis)?);
        check_finite!(self.tape, s, "softmax");
        let shape = x.shape().to_vec();
        let (outer, len, inner) = (
            shape[..axis].iter().product::<usize>(),
            shape[axis],
            shape[axis + 1..].iter().product::<usize>(),
        );
        let sc = s.clone();
        self.tape.custom(&[*self], (*s).clone(), "softmax", move |g| {
            let mut out = vec![T::zero(); g.numel()];
            let (gd, sd) = (g.data(), sc.data());
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let dot: T = (0..len).map(|k| gd[at(k)] * sd[at(k)]).sum();
                    for k in 0..len {
                        out[at(k)] = sd[at(k)] * (gd[at(k)] - dot);
                    }
                }
            }
            vec![Some(Tensor::from_parts(shape.clone(), out))]
        })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta` (both `[C]`).
    pub fn layer_norm(&self, gamma: &Var<'t, T>, beta: &Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let c = *x.shape().last().ok_or_else(|| Error::invalid("layer_norm on a scalar"))?;
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let rows = x.numel() / c;
        let mut xhat = vec![T::zero(); x.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut y = vec![T::zero(); x.numel()];
        let eps = T::of(eps);
        for r in 0..rows {
            let row = &x.data()[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<T>() / T::of(c as f64);
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::of(c as f64);
            let rs = (var + eps).sqrt().recip();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                y[r * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let shape = x.shape().to_vec();
        let y = Tensor::from_parts(shape.clone(), y);
        check_finite!(self.tape, y, "layer_norm");
        self.tape.custom(&[*self, *gamma, *beta], y, "layer_norm", move |g| {
            let gd = g.data();
            let mut dx = vec![T::zero(); gd.len()];
            let mut dg = vec![T::zero(); c];
            let mut db = vec![T::zero(); c];
            let n = T::of(c as f64);
            for r in 0..rows {
                let mut sum_dh = T::zero();
                let mut sum_dh_h = T::zero();
                for j in 0..c {
                    let k = r * c + j;
                    let dh = gd[k] * gv.data()[j];
                    sum_dh += dh;
                    sum_dh_h += dh * xhat[k];
                    dg[j] += gd[k] * xhat[k];
                    db[j] += gd[k];
                }
                for j in 0..c {
                    let k = r * c + j;
                    let dh = gd[k] * gv.data()[j];
                    dx[k] = rstd[r] * (dh - sum_dh / n - xhat[k] * sum_dh_h / n);
                }
            }
            vec![
                Some(Tensor::from_parts(shape.clone(), dx)),
                Some(Tensor::from_parts(vec![c], dg)),
                Some(Tensor::from_parts(vec![c], db)),
            ]
        })
    }

    /// `self · weight + bias` for `self: [n×in]`, `weight: [in×out]`, `bias: [out]`.
    pub fn linear(&self, weight: &Var<'t, T>, bias: Option<&Var<'t, T>>) -> Result<Var<'t, T>> {
        let y = self.matmul(weight)?;
        match bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

/// Output shape of a broadcasting binary op, exposed for callers validating inputs.
pub fn broadcast_result(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    broadcast_shape(a, b)
}

/// The small constant used at divide-by-norm sites.
pub fn eps<T: Scalar>() -> T {
    T::of(EPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::central_difference;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let root = x.square().unwrap().sum_all().unwrap();
        root.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_root_has_zero_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let c = tape.constant(t(&[2], &[3.0, 4.0]));
        let zero = x.mul_scalar(0.0).unwrap().sum_all().unwrap();
        let root = c.sum_all().unwrap().add(&zero).unwrap();
        root.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn repeated_backward_accumulates_and_zero_grad_resets() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1], &[3.0]));
        let y = x.square().unwrap().sum_all().unwrap();
        y.backward().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[12.0]);
        tape.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn shared_subexpression_sums_contributions() {
        // y = u * u + u with u = 2x: dy/dx = 2(2u + 1)
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1], &[1.5]));
        let u = x.mul_scalar(2.0).unwrap();
        let y = u.mul(&u).unwrap().add(&u).unwrap().sum_all().unwrap();
        y.backward().unwrap();
        assert!((x.grad().unwrap().data()[0] - 2.0 * (2.0 * 3.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn debug_checks_catch_zero_division_and_nan() {
        let tape = Tape::<f64>::new().with_checks(true);
        let a = tape.leaf(t(&[2], &[1.0, 2.0]));
        let z = tape.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(a.div(&z), Err(Error::ZeroDenominator { .. })));
        let neg = tape.constant(t(&[1], &[-1.0]));
        assert!(matches!(neg.log(), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn phi1_is_smooth_through_zero() {
        for z in [-1e-7, -1e-4, 0.0, 1e-6, 2e-3, -0.7] {
            let exact = if z == 0.0 { 1.0 } else { f64::exp_m1(z) / z };
            assert!((phi1(z) - exact).abs() < 1e-12, "{z}");
            let fd = (phi1(z + 1e-5) - phi1(z - 1e-5)) / 2e-5;
            assert!((phi1_prime(z) - fd).abs() < 1e-7, "{z}");
        }
    }

    /// Every differentiable op against central differences on a composite scalar.
    #[test]
    fn ops_match_finite_differences() {
        let shapes: [(&[usize], &[f64]); 3] = [
            (&[2, 3], &[0.3, -0.7, 1.1, 0.4, -0.2, 0.9]),
            (&[3], &[0.5, -1.3, 0.8]),
            (&[3, 2], &[0.2, 0.6, -0.4, 1.5, 0.7, -0.9]),
        ];
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|(s, v)| t(s, v)).collect();
        type Build = for<'a> fn(&[Var<'a, f64>]) -> Result<Var<'a, f64>>;
        let cases: Vec<(&str, Build)> = vec![
            ("add-broadcast", |v| v[0].add(&v[1])?.square()?.sum_all()),
            ("sub", |v| v[0].sub(&v[1])?.exp()?.sum_all()),
            ("mul-div", |v| v[0].mul(&v[1])?.div(&v[1].square()?.add_scalar(1.0)?)?.sum_all()),
            ("log-sqrt", |v| {
                v[0].square()?
                    .add_scalar(0.5)?
                    .log()?
                    .add(&v[1].square()?.add_scalar(1.0)?.sqrt()?)?
                    .sum_all()
            }),
            ("recip-neg", |v| v[0].add_scalar(3.0)?.reciprocal()?.neg()?.sum_all()),
            ("softplus-gelu", |v| v[0].softplus()?.mul(&v[0].gelu()?)?.sum_all()),
            ("phi1", |v| v[0].phi1()?.mul(&v[1])?.sum_all()),
            ("matmul", |v| v[0].matmul(&v[2])?.square()?.sum_all()),
            ("permute-narrow-concat", |v| {
                let a = v[0].transpose()?.narrow(0, 1, 2)?;
                Var::concat(&[a, v[2]], 0)?.square()?.mul_scalar(0.5)?.sum_all()
            }),
            ("reductions", |v| {
                let m = v[0].max(0, false)?.add(&v[0].min(1, false)?.sum_all()?)?;
                m.add(&v[0].l2_norm(1, false)?.sum_all()?)?
                    .add(&v[0].mean(1, true)?.square()?.sum_all()?)?
                    .sum_all()
            }),
            ("softmax", |v| v[0].softmax(1)?.mul(&v[1])?.sum_all()),
            ("layer-norm", |v| {
                let g = v[1];
                let b = v[1].mul_scalar(-0.3)?;
                v[0].layer_norm(&g, &b, 1e-5)?.square()?.mul(&v[1])?.sum_all()
            }),
        ];
        for (name, build) in cases {
            let tape = Tape::new();
            let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
            build(&vars).unwrap().backward().unwrap();
            for (which, x) in inputs.iter().enumerate() {
                let analytic = vars[which].grad().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
                let numeric = central_difference(x, 1e-5, |probe| {
                    let tape = Tape::new();
                    let vars: Vec<_> = inputs
                        .iter()
                        .enumerate()
                        .map(|(i, x)| tape.leaf(if i == which { probe.clone() } else { x.clone() }))
                        .collect();
                    build(&vars).unwrap().item()
                });
                for (a, n) in analytic.data().iter().zip(numeric.data()) {
                    let rel = (a - n).abs() / (a.abs() + n.abs() + 1e-8);
                    assert!(rel < 1e-4, "{name} input {which}: ad {a} fd {n}");
                }
            }
        }
    }
}
