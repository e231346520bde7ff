use alloc::vec::Vec;

use super::{Graph, NodeId, Tensor};
use crate::error::{contract_err, Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

fn evaluate<F>(params: &[Tensor], build: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids = params
        .iter()
        .map(|p| g.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut g, &ids)?;
    g.value(loss)
        .item()
        .ok_or_else(|| contract_err!("loss must be scalar, got dims {:?}", g.value(loss).dims()))
}

/// Compares analytic gradients against central differences.
///
/// Returns the maximum over every parameter entry of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`. `build` must
/// construct the same scalar loss every time it is called with the same values.
pub fn grad_check<F>(params: &[Tensor], eps: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(contract_err!("finite-difference step must be positive, got {eps}"));
    }
    let mut g = Graph::new();
    let ids = params
        .iter()
        .map(|p| g.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| g.grad(id).map_or_else(|| alloc::vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let plus = evaluate(&work, &build);
            work[pi].data_mut()[j] = orig - eps;
            let minus = evaluate(&work, &build);
            work[pi].data_mut()[j] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => (p, m),
                (Err(e @ Error::Shape(_)), _) | (_, Err(e @ Error::Shape(_))) => return Err(e),
                _ => {
                    return Err(Error::Numeric(alloc::format!(
                        "non-finite loss when perturbing parameter {pi} entry {j}"
                    )))
                }
            };
            let numeric = (plus - minus) / (2.0 * eps);
            let denom = 1.0f64.max(a.abs()).max(numeric.abs());
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
