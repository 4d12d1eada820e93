//! Central-difference gradient verification.
//!
//! This path is independent of the analytic backward implementations: it only
//! ever calls forward builders with `requires_grad = false` and compares
//! `(f(x+eps) - f(x-eps)) / 2eps` against the tape's gradients.

use super::{numel, Graph, TensorId};
use crate::error::Result;

/// Below this magnitude the comparison switches to an absolute scale, since
/// central differences lose the leading digits of near-zero gradients to
/// cancellation.
const REL_FLOOR: f64 = 1e-3;

/// Outcome of a [`grad_check`] run.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: usize,
    pub worst_elem: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare the tape's gradients of a scalar function against central finite
/// differences, returning the maximum relative error over every element of
/// every parameter.
///
/// `build` must construct the same function each time it is called; it
/// receives one leaf per `(shape, data)` entry in `params`.
pub fn grad_check<F>(
    params: &[(Vec<usize>, Vec<f64>)],
    eps: f64,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[TensorId]) -> Result<TensorId>,
{
    let mut g = Graph::new();
    let mut ids = Vec::with_capacity(params.len());
    for (shape, data) in params {
        ids.push(g.leaf(data.clone(), shape, true)?);
    }
    let root = build(&mut g, &ids)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(params.iter())
        .map(|(&id, (shape, _))| {
            g.grad(id).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; numel(shape)])
        })
        .collect();
    drop(g);

    let mut data: Vec<Vec<f64>> = params.iter().map(|(_, d)| d.clone()).collect();
    let mut report =
        GradCheckReport { max_rel_err: 0.0, worst_param: 0, worst_elem: 0, analytic: 0.0, numeric: 0.0 };
    for pi in 0..data.len() {
        for ei in 0..data[pi].len() {
            let orig = data[pi][ei];
            data[pi][ei] = orig + eps;
            let f_plus = eval_scalar(params, &data, &mut build)?;
            data[pi][ei] = orig - eps;
            let f_minus = eval_scalar(params, &data, &mut build)?;
            data[pi][ei] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[pi][ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > report.max_rel_err {
                report = GradCheckReport {
                    max_rel_err: rel,
                    worst_param: pi,
                    worst_elem: ei,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

fn eval_scalar<F>(
    params: &[(Vec<usize>, Vec<f64>)],
    data: &[Vec<f64>],
    build: &mut F,
) -> Result<f64>
where
    F: FnMut(&mut Graph, &[TensorId]) -> Result<TensorId>,
{
    let mut g = Graph::new();
    let mut ids = Vec::with_capacity(params.len());
    for ((shape, _), d) in params.iter().zip(data.iter()) {
        ids.push(g.leaf(d.clone(), shape, false)?);
    }
    let root = build(&mut g, &ids)?;
    g.value(root)
}
