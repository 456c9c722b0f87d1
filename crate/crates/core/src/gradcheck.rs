//! Central finite-difference gradient checking.

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;

/// Relative error `|a − n| / (|a| + |n| + 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-8)
}

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn central_difference(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut out = vec![0.0; x.numel()];
    for (i, slot) in out.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        *slot = (up - down) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

#[derive(Debug, Clone)]
pub struct LeafReport {
    pub name: String,
    pub worst_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub leaves: Vec<LeafReport>,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.leaves.iter().all(|l| l.worst_rel_err < self.tolerance)
    }

    pub fn worst(&self) -> Option<&LeafReport> {
        self.leaves.iter().max_by(|a, b| a.worst_rel_err.total_cmp(&b.worst_rel_err))
    }

    /// Worst relative error grouped by the leading path segment of each leaf name.
    pub fn by_module(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for l in &self.leaves {
            let module = l.name.split('.').next().unwrap_or(&l.name).to_string();
            match out.iter_mut().find(|(m, _)| *m == module) {
                Some((_, e)) => *e = e.max(l.worst_rel_err),
                None => out.push((module, l.worst_rel_err)),
            }
        }
        out
    }
}

/// Checks every element of every parameter in `store` against central
/// differences of the scalar returned by `loss`.
pub fn check_params<F>(store: &ParamStore<f64>, step: f64, tolerance: f64, loss: F) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &Bound<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let bound = store.bind(&tape);
    loss(&tape, &bound)?.backward()?;
    let grads = bound.grads();
    drop(bound);

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::new();
        let bound = s.bind_frozen(&tape);
        Ok(loss(&tape, &bound)?.item())
    };

    let mut leaves = Vec::new();
    let mut probe = store.clone();
    for (pi, p) in store.iter().enumerate() {
        let id = crate::params::ParamId(pi);
        let mut report = LeafReport {
            name: p.name.clone(),
            worst_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            grad_norm: grads[pi].data().iter().map(|g| g * g).sum::<f64>().sqrt(),
        };
        for i in 0..p.value.numel() {
            let orig = p.value.data()[i];
            probe.get_mut(id).data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grads[pi].data()[i];
            let rel = relative_error(analytic, numeric);
            if rel > report.worst_rel_err || i == 0 {
                report.worst_rel_err = rel;
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
        leaves.push(report);
    }
    Ok(GradReport { leaves, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("lin.w", Tensor::from_f64([2, 2], &[0.5, -0.3, 0.8, 0.1]).unwrap(), true);
        s.add("lin.b", Tensor::from_f64([2], &[0.2, -0.4]).unwrap(), false);
        s
    }

    #[test]
    fn correct_rules_pass() {
        let x = Tensor::from_f64([3, 2], &[1.0, 2.0, -1.0, 0.5, 0.3, -0.7]).unwrap();
        let report = check_params(&store(), 1e-5, 1e-4, |tape, b| {
            let xin = tape.constant(x.clone());
            let w = b.var(crate::params::ParamId(0));
            let bias = b.var(crate::params::ParamId(1));
            xin.linear(&w, Some(&bias))?.gelu()?.square()?.sum_all()
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.by_module(), vec![("lin".to_string(), report.worst().unwrap().worst_rel_err)]);
    }

    #[test]
    fn corrupted_backward_rule_is_reported() {
        let report = check_params(&store(), 1e-5, 1e-4, |tape, b| {
            let w = b.var(crate::params::ParamId(0));
            let v = w.value().map(|x| x * x);
            // true derivative is 2x; the fixture claims 3x
            let wv = w.value();
            let sq = tape.custom(&[w], v, "bad_square", move |g| vec![Some(g.mul(&wv.map(|x| 3.0 * x)).unwrap())])?;
            sq.sum_all()?.add(&b.var(crate::params::ParamId(1)).sum_all()?)
        })
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.worst().unwrap().name, "lin.w");
    }
}
