//! Central finite-difference gradient checking in 64-bit precision.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the backward implementation it checks.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of one check: the worst elementwise relative error found.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// (input index, element index) of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub step: f64,
    /// Gradients smaller than this are compared on an absolute scale.
    pub floor: f64,
    /// Check at most this many elements per input (evenly strided).
    pub max_elems: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { step: 1e-5, floor: 1e-3, max_elems: None }
    }
}

impl GradCheck {
    pub fn sampled(max_elems: usize) -> Self {
        GradCheck { max_elems: Some(max_elems), ..Default::default() }
    }

    /// Compares analytic and numeric gradients of `build` with respect to
    /// every input. Non-scalar outputs are contracted with a fixed
    /// deterministic weight pattern first.
    pub fn run<F>(&self, inputs: &[Tensor<f64>], build: F) -> Result<GradReport>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let eval = |values: &[Tensor<f64>], with_grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
            let mut g = Graph::new();
            let vars: Vec<Var> = values
                .iter()
                .map(|t| {
                    let t = t.clone();
                    if with_grad {
                        g.param(t)
                    } else {
                        g.constant(t)
                    }
                })
                .collect();
            let out = build(&mut g, &vars)?;
            let loss = scalarize(&mut g, out)?;
            let value = g.item(loss)?;
            if !with_grad {
                return Ok((value, Vec::new()));
            }
            g.backward(loss)?;
            let grads = vars.iter().map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_default()).collect();
            Ok((value, grads))
        };

        let (_, analytic) = eval(inputs, true)?;
        let mut report = GradReport { max_rel_err: 0.0, worst: (0, 0), analytic: 0.0, numeric: 0.0, checked: 0 };
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        for (i, input) in inputs.iter().enumerate() {
            let n = input.len();
            let stride = match self.max_elems {
                Some(m) if m > 0 && m < n => n.div_ceil(m),
                _ => 1,
            };
            for j in (0..n).step_by(stride) {
                let orig = input.data()[j];
                work[i].data_mut()[j] = orig + self.step;
                let (plus, _) = eval(&work, false)?;
                work[i].data_mut()[j] = orig - self.step;
                let (minus, _) = eval(&work, false)?;
                work[i].data_mut()[j] = orig;
                let numeric = (plus - minus) / (2.0 * self.step);
                let a = analytic[i][j];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(self.floor);
                report.checked += 1;
                if err > report.max_rel_err || report.checked == 1 {
                    report.max_rel_err = err;
                    report.worst = (i, j);
                    report.analytic = a;
                    report.numeric = numeric;
                }
            }
        }
        Ok(report)
    }
}

fn scalarize(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    let n = g.value(out).len();
    if n == 1 && g.shape(out).iter().all(|&d| d == 1) {
        return g.sum_all(out);
    }
    let shape = g.shape(out).to_vec();
    let weights: Vec<f64> = (0..n).map(|k| 0.5 + 0.5 * ((k as f64) * 1.618_033_988_75).sin()).collect();
    let w = g.constant(Tensor::from_vec(&shape, weights)?);
    let prod = g.mul(out, w)?;
    g.sum_all(prod)
}
