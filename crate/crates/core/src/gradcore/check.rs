//! Central finite-difference verification of analytic gradients.

use super::{Graph, OpTag, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (input index, flat entry index) of the worst entry.
    pub worst_entry: (usize, usize),
    pub entries_checked: usize,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CheckOptions {
    /// Forwarded to [`Graph::inject_fault`] for the analytic pass.
    pub fault: Option<(OpTag, f64)>,
}

/// Max relative error between the analytic gradient of `f` at `x` and central differences.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let report = grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), eps)?;
    Ok(report.max_relative_error)
}

pub fn grad_check_many<F>(f: F, xs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_with(f, xs, eps, CheckOptions::default())
}

pub fn grad_check_with<F>(f: F, xs: &[Tensor], eps: f64, opts: CheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("grad_check eps must be positive, got {eps}")));
    }

    let mut graph = Graph::new();
    if let Some((tag, factor)) = opts.fault {
        graph.inject_fault(tag, factor);
    }
    let vars: Vec<Var> = xs.iter().map(|x| graph.param(x.clone())).collect();
    let loss = f(&mut graph, &vars)?;
    let base = graph.value(loss).item();
    let grads = graph.backward(loss)?;

    let replay = evaluate(&f, xs)?;
    if replay.to_bits() != base.to_bits() {
        return Err(Error::invalid(format!(
            "grad_check: function is not deterministic ({base} vs {replay})"
        )));
    }

    let mut worst = 0.0_f64;
    let mut worst_entry = (0, 0);
    let mut entries = 0;
    let mut probe: Vec<Tensor> = xs.to_vec();
    for (k, (x, v)) in xs.iter().zip(&vars).enumerate() {
        let analytic = grads.get_or_zeros(*v, x);
        for i in 0..x.len() {
            let orig = x.data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let up = evaluate(&f, &probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let down = evaluate(&f, &probe)?;
            probe[k].data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst || rel.is_nan() {
                worst = if rel.is_nan() { f64::INFINITY } else { rel };
                worst_entry = (k, i);
            }
            entries += 1;
        }
    }
    Ok(GradCheckReport { max_relative_error: worst, worst_entry, entries_checked: entries })
}

fn evaluate<F>(f: &F, xs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| graph.param(x.clone())).collect();
    let loss = f(&mut graph, &vars)?;
    if graph.shape(loss) != (1, 1) {
        return Err(Error::shape("grad_check", "function must return a 1x1 tensor"));
    }
    Ok(graph.value(loss).item())
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use super::*;

    fn sum_of_squares(g: &mut Graph, x: Var) -> Result<Var> {
        let sq = g.mul_elem(x, x)?;
        g.sum_all(sq)
    }

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::column(&[0.3, -1.2, 2.5]);
        let err = grad_check(sum_of_squares, &x, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn rejects_bad_eps() {
        let x = Tensor::column(&[1.0]);
        assert!(grad_check(sum_of_squares, &x, 0.0).is_err());
    }

    #[test]
    fn detects_nondeterminism() {
        let calls = Cell::new(0.0);
        let f = |g: &mut Graph, x: Var| {
            calls.set(calls.get() + 1.0);
            let s = g.sum_all(x)?;
            g.scale(s, calls.get())
        };
        let err = grad_check(f, &Tensor::column(&[1.0, 2.0]), 1e-5).unwrap_err();
        assert!(err.to_string().contains("deterministic"));
    }

    #[test]
    fn fault_injection_is_caught() {
        let x = Tensor::column(&[0.3, -1.2, 2.5]);
        let opts = CheckOptions { fault: Some((OpTag::MulElem, 1.05)) };
        let report =
            grad_check_with(|g, v| sum_of_squares(g, v[0]), std::slice::from_ref(&x), 1e-5, opts)
                .unwrap();
        assert!(report.max_relative_error > 1e-2);
    }
}
