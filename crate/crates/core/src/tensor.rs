//! Dense row-major tensors and the plain (untracked) kernels behind every
//! differentiable op in [`crate::autograd`].

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Global guard used by divide-by-norm sites unless a module overrides it.
pub const EPS: f64 = 1e-8;

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
    Min,
    L2,
}

/// Result of an axis reduction. `indices` is populated for `Max`/`Min`.
#[derive(Debug, Clone)]
pub struct Reduced<T> {
    pub values: Tensor<T>,
    pub indices: Option<Vec<usize>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Trailing-dimension broadcast of two shapes (shorter shape padded with leading 1s).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out` (rank-aligned), zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let pad = out.len() - shape.len();
    (0..out.len())
        .map(|i| if i < pad || shape[i - pad] == 1 { 0 } else { own[i - pad] })
        .collect()
}

/// Calls `f(out_index, a_offset, b_offset)` over the broadcast iteration space.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = numel(out);
    if n == 0 {
        return;
    }
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..n {
        f(o, oa, ob);
        let mut d = rank;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: format!("holds {} elements", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    /// Builds a tensor by evaluating `f` at each multi-index in row-major order.
    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(&[usize]) -> T) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Tensor { shape, data }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn([n, n], |i| if i[0] == i[1] { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape.len());
        let s = strides(&self.shape);
        let off: usize = index.iter().zip(&s).map(|(i, s)| i * s).sum();
        self.data[off]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        if T::DTYPE == U::DTYPE {
            // bit copy, so NaN payloads survive
            let mut bytes = Vec::with_capacity(self.data.len() * T::DTYPE.size());
            self.data.iter().for_each(|v| v.write_le(&mut bytes));
            return Tensor {
                shape: self.shape.clone(),
                data: bytes.chunks_exact(U::DTYPE.size()).map(U::read_le).collect(),
            };
        }
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        self.clone().into_shape(shape)
    }

    pub fn into_shape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        Ok(Tensor { shape, data: self.data })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum_all(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Elementwise `f(a, b)` under trailing-dimension broadcasting.
    pub fn zip_with(&self, other: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Tensor::from_parts(self.shape.clone(), data));
        }
        let out = broadcast_shape(&self.shape, &other.shape).ok_or_else(|| Error::ShapeMismatch {
            op,
            lhs: self.shape.clone(),
            rhs: other.shape.clone(),
        })?;
        let mut data = vec![T::zero(); numel(&out)];
        if other.data.len() == 1 {
            let b = other.data[0];
            for (o, &a) in data.iter_mut().zip(self.data.iter().cycle()) {
                *o = f(a, b);
            }
        } else if self.data.len() == 1 {
            let a = self.data[0];
            for (o, &b) in data.iter_mut().zip(other.data.iter().cycle()) {
                *o = f(a, b);
            }
        } else {
            let sa = broadcast_strides(&self.shape, &out);
            let sb = broadcast_strides(&other.shape, &out);
            for_each_broadcast(&out, &sa, &sb, |o, ia, ib| {
                data[o] = f(self.data[ia], other.data[ib]);
            });
        }
        Ok(Tensor::from_parts(out, data))
    }

    /// Sums a broadcast result back down to `shape` (the adjoint of broadcasting).
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        match broadcast_shape(shape, &self.shape) {
            Some(b) if b == self.shape => {}
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "sum_to_shape",
                    lhs: self.shape.clone(),
                    rhs: shape.to_vec(),
                })
            }
        }
        let mut out = vec![T::zero(); numel(shape)];
        if out.len() == 1 {
            out[0] = self.sum_all();
        } else {
            let ss = broadcast_strides(shape, &self.shape);
            let own = vec![0; self.shape.len()];
            for_each_broadcast(&self.shape, &ss, &own, |o, i, _| {
                out[i] += self.data[o];
            });
        }
        Ok(Tensor::from_parts(shape.to_vec(), out))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_with(other, "div", |a, b| a / b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// 2D matrix product `[m×k]·[k×n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, (&self.data, k as isize, 1), (&other.data, n as isize, 1), &mut out, false);
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    pub fn transpose(&self) -> Result<Self> {
        self.permute(&[1, 0])
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::InvalidShape {
                op: "permute",
                shape: self.shape.clone(),
                reason: format!("bad axis order {axes:?}"),
            });
        }
        let out: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src = strides(&self.shape);
        let sa: Vec<usize> = axes.iter().map(|&a| src[a]).collect();
        let zero = vec![0; rank];
        let mut data = vec![T::zero(); self.data.len()];
        for_each_broadcast(&out, &sa, &zero, |o, i, _| data[o] = self.data[i]);
        Ok(Tensor::from_parts(out, data))
    }

    fn axis_split(&self, axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis {
                op,
                axis,
                rank: self.rank(),
            });
        }
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        Ok((outer, self.shape[axis], inner))
    }

    /// Reduces along `axis`; the reduced axis is kept with extent 1 when `keepdim`.
    pub fn reduce(&self, op: ReduceOp, axis: usize, keepdim: bool) -> Result<Reduced<T>> {
        let (outer, len, inner) = self.axis_split(axis, "reduce")?;
        if len == 0 {
            return Err(Error::EmptyAxis { op: "reduce" });
        }
        let mut values = vec![T::zero(); outer * inner];
        let mut indices = matches!(op, ReduceOp::Max | ReduceOp::Min).then(|| vec![0usize; outer * inner]);
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| self.data[(o * len + k) * inner + i];
                let r = o * inner + i;
                values[r] = match op {
                    ReduceOp::Sum => (0..len).map(at).sum(),
                    ReduceOp::Mean => (0..len).map(at).sum::<T>() / T::of(len as f64),
                    ReduceOp::L2 => (0..len).map(|k| at(k) * at(k)).sum::<T>().sqrt(),
                    ReduceOp::Max | ReduceOp::Min => {
                        let mut best = 0;
                        for k in 1..len {
                            let better = if op == ReduceOp::Max { at(k) > at(best) } else { at(k) < at(best) };
                            if better {
                                best = k;
                            }
                        }
                        if let Some(ix) = indices.as_mut() {
                            ix[r] = best;
                        }
                        at(best)
                    }
                };
            }
        }
        let mut shape = self.shape.clone();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        Ok(Reduced {
            values: Tensor::from_parts(shape, values),
            indices,
        })
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        let (outer, len, inner) = self.axis_split(axis, "softmax")?;
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let ix = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| out[ix(k)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for k in 0..len {
                    let e = (out[ix(k)] - m).exp();
                    out[ix(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[ix(k)] /= total;
                }
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), out))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let (outer, full, inner) = self.axis_split(axis, "narrow")?;
        if start + len > full {
            return Err(Error::InvalidShape {
                op: "narrow",
                shape: self.shape.clone(),
                reason: format!("range {start}..{} exceeds axis {axis}", start + len),
            });
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor::from_parts(shape, data))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let (outer, _, inner) = first.axis_split(axis, "concat")?;
        for p in parts {
            let same = p.rank() == first.rank() && p.shape.iter().zip(&first.shape).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !same {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
        }
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Tensor::from_parts(shape, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exp_of_zeros_and_minus_one() {
        let t = Tensor::<f64>::zeros([2]).map(f64::exp);
        assert_eq!(t.data(), &[1.0, 1.0]);
        let e = Tensor::scalar(-1.0f64).map(f64::exp).item();
        assert!((e - (-1.0f64).exp()).abs() < 1e-15);
        assert!((e - 0.367879441171).abs() < 1e-12);
    }

    #[test]
    fn mul_hand_arithmetic() {
        let a = Tensor::from_vec(vec![2.0f64, 3.0]);
        let b = Tensor::from_vec(vec![4.0f64, 5.0]);
        assert_eq!(a.mul(&b).unwrap().data(), &[8.0, 15.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::<f64>::zeros([2, 3]);
        let b = Tensor::<f64>::zeros([4]);
        let msg = a.add(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let m = Tensor::<f64>::from_f64([2, 2], &[1., 2., 3., 4.]).unwrap();
        assert_eq!(Tensor::<f64>::eye(2).matmul(&m).unwrap(), m);
        let a = Tensor::<f64>::from_f64([1, 2], &[1., 2.]).unwrap();
        let b = Tensor::<f64>::from_f64([2, 1], &[3., 4.]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn reductions() {
        let t = Tensor::from_vec(vec![1.0f64, 2.0, 3.0]);
        assert_eq!(t.reduce(ReduceOp::Sum, 0, false).unwrap().values.item(), 6.0);
        let c = Tensor::full([3, 2], 7.5f64);
        let r = c.reduce(ReduceOp::Max, 0, false).unwrap();
        assert_eq!(r.values.data(), &[7.5, 7.5]);
        let n = Tensor::from_vec(vec![3.0f64, 4.0]);
        assert_eq!(n.reduce(ReduceOp::L2, 0, false).unwrap().values.item(), 5.0);
        let m = Tensor::<f64>::from_f64([2, 3], &[1., 5., 2., 9., 0., 4.]).unwrap();
        let r = m.reduce(ReduceOp::Max, 1, true).unwrap();
        assert_eq!(r.values.shape(), &[2, 1]);
        assert_eq!(r.indices.unwrap(), vec![1, 0]);
        let r = m.reduce(ReduceOp::Min, 0, false).unwrap();
        assert_eq!(r.values.data(), &[1., 0., 2.]);
        assert_eq!(r.indices.unwrap(), vec![0, 1, 0]);
        assert!(matches!(
            Tensor::<f64>::zeros([0, 2]).reduce(ReduceOp::Sum, 0, false),
            Err(Error::EmptyAxis { .. })
        ));
        assert!(m.reduce(ReduceOp::Sum, 2, false).is_err());
    }

    #[test]
    fn softmax_closed_forms() {
        let s = Tensor::<f64>::zeros([3]).softmax(0).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = Tensor::from_vec(vec![1f64.ln(), 2f64.ln(), 3f64.ln()]);
        let s = x.softmax(0).unwrap();
        for (v, e) in s.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((v - e).abs() < 1e-15);
        }
        let shifted = x.map(|v| v + 1000.0).softmax(0).unwrap();
        assert!(shifted.max_abs_diff(&s) < 1e-12);
    }

    #[test]
    fn narrow_and_concat_invert() {
        let t = Tensor::<f64>::from_fn([2, 5, 3], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64);
        let a = t.narrow(1, 0, 2).unwrap();
        let b = t.narrow(1, 2, 3).unwrap();
        assert_eq!(Tensor::concat(&[&a, &b], 1).unwrap(), t);
    }

    fn naive_broadcast(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let out = broadcast_shape(a.shape(), b.shape()).unwrap();
        Tensor::from_fn(out.clone(), |idx| {
            let pick = |t: &Tensor<f64>| {
                let pad = out.len() - t.rank();
                let local: Vec<usize> = (0..t.rank()).map(|d| if t.shape()[d] == 1 { 0 } else { idx[d + pad] }).collect();
                t.at(&local)
            };
            pick(a) - 2.0 * pick(b)
        })
    }

    fn shape_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        prop::collection::vec(1usize..4, 1..=4)
            .prop_flat_map(|full| {
                let n = full.len();
                (Just(full), prop::collection::vec(any::<bool>(), n), 0..=n)
            })
            .prop_map(|(full, ones, drop)| {
                let b: Vec<usize> = full
                    .iter()
                    .zip(&ones)
                    .map(|(&d, &one)| if one { 1 } else { d })
                    .skip(drop)
                    .collect();
                (full, b)
            })
    }

    proptest! {
        #[test]
        fn broadcasting_matches_naive_loop((sa, sb) in shape_pair(), seed in 0u64..1000) {
            let a = Tensor::<f64>::from_fn(sa, |i| i.iter().sum::<usize>() as f64 + seed as f64);
            let b = Tensor::<f64>::from_fn(sb, |i| i.iter().fold(1.0, |acc, &v| acc * (v as f64 + 0.5)));
            let fast = a.zip_with(&b, "t", |x, y| x - 2.0 * y).unwrap();
            prop_assert_eq!(&fast, &naive_broadcast(&a, &b));
            // both operand orders
            let flipped = b.zip_with(&a, "t", |y, x| x - 2.0 * y).unwrap();
            prop_assert_eq!(&flipped, &fast);
            // adjoint: summing back to each operand's shape preserves the total
            let back = fast.sum_to_shape(b.shape()).unwrap();
            prop_assert!((back.sum_all() - fast.sum_all()).abs() < 1e-9);
        }

        #[test]
        fn softmax_sums_to_one(v in prop::collection::vec(-50.0f64..50.0, 1..20)) {
            let s = Tensor::from_vec(v).softmax(0).unwrap();
            prop_assert!((s.sum_all() - 1.0).abs() < 1e-6);
            prop_assert!(s.data().iter().all(|&p| p > 0.0));
        }
    }
}
