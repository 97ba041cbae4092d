//! Central finite-difference oracle for the reverse-mode gradients.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of the adjoints it checks.

use super::{GradientMap, Graph, Tensor, Var};
use crate::error::Result;

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + REL_FLOOR)
}

/// Compare `analytic` against central differences of `eval` around `inputs`.
/// Parameters absent from `analytic` are treated as having zero gradient.
pub fn compare(
    inputs: &[(String, Tensor<f64>)],
    analytic: &GradientMap<f64>,
    eps: f64,
    mut eval: impl FnMut(&[(String, Tensor<f64>)]) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut work: Vec<(String, Tensor<f64>)> = inputs.to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for p in 0..work.len() {
        let n = work[p].1.numel();
        for i in 0..n {
            let orig = work[p].1.data()[i];
            work[p].1.data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[p].1.data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[p].1.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic
                .get(&work[p].0)
                .map(|g| g.data()[i])
                .unwrap_or(0.0);
            let err = rel_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(Mismatch {
                    name: work[p].0.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                    rel_error: err,
                });
            }
        }
    }
    Ok(report)
}

/// Check a scalar-valued graph function of named inputs. `f` receives one
/// grad-enabled [`Var`] per input, in order.
pub fn check_fn(
    inputs: &[(String, Tensor<f64>)],
    eps: f64,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|(n, t)| g.param(n, t)).collect();
    let loss = f(&mut g, &vars)?;
    let analytic = g.backward(loss)?;
    compare(inputs, &analytic, eps, |vals| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|(_, t)| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        g.value(loss).item()
    })
}

/// Like [`check_fn`], but `f` builds the graph itself from the (possibly
/// perturbed) named values, registering grad-enabled leaves with
/// [`Graph::param`] under the same names.
pub fn check_with(
    inputs: &[(String, Tensor<f64>)],
    eps: f64,
    f: impl Fn(&mut Graph<f64>, &[(String, Tensor<f64>)]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let loss = f(&mut g, inputs)?;
    let analytic = g.backward(loss)?;
    compare(inputs, &analytic, eps, |vals| {
        let mut g = Graph::new();
        let loss = f(&mut g, vals)?;
        g.value(loss).item()
    })
}
