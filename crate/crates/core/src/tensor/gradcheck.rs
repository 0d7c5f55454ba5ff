//! Central finite-difference verification of backward rules.

use super::{Graph, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero on both sides do not divide by zero.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-4,
            tol: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (input index, flat coordinate) of the largest relative error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub passed: bool,
}

/// Compares the tape's gradient of the scalar `f(inputs)` against
/// `(f(x + εe) − f(x − εe)) / 2ε` for every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::inference();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &vars)?;
        let v = g.value(out).item();
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
        passed: true,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        for j in 0..a.numel() {
            let x0 = probe[i].data()[j];
            probe[i].data_mut()[j] = x0 + opts.eps;
            let fp = eval(&probe)?;
            probe[i].data_mut()[j] = x0 - opts.eps;
            let fm = eval(&probe)?;
            probe[i].data_mut()[j] = x0;

            let numeric = (fp - fm) / (2.0 * opts.eps);
            let an = a.data()[j];
            let abs = (an - numeric).abs();
            let rel = abs / an.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = Some((i, j));
            }
        }
    }
    report.passed = report.max_rel_error.is_finite() && report.max_rel_error <= opts.tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_all_ones_gradient_and_zero_error() {
        let x = Tensor::from_fn(&[5], |i| i as f64 - 2.0);
        let r = grad_check(|g, v| g.sum(v[0]), &[x], GradCheckOptions::default()).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error < 1e-9);
        assert_eq!(r.checked, 5);
    }

    #[test]
    fn corrupted_backward_rule_is_caught() {
        let x = Tensor::from_fn(&[4], |i| 0.3 * i as f64 + 0.1);
        // forward computes x², backward claims 3x instead of 2x
        let bad_square = |g: &Graph<f64>, v: &[Var]| {
            let sq = g.custom_op(
                &[v[0]],
                |x| Ok(x[0].map(|a| a * a)),
                |c| {
                    let d: Vec<f64> = c
                        .inputs[0]
                        .data()
                        .iter()
                        .zip(c.grad.data())
                        .map(|(x, g)| 3.0 * x * g)
                        .collect();
                    vec![Some(Tensor::new(c.inputs[0].shape(), d).unwrap())]
                },
            )?;
            g.sum(sq)
        };
        let r = grad_check(bad_square, &[x], GradCheckOptions::default()).unwrap();
        assert!(!r.passed);
        assert!(r.max_rel_error > 0.1);
    }
}
