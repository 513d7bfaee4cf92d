//! Finite-difference verification of the graph's analytic gradients.
//!
//! The numeric side only ever evaluates the forward pass at perturbed
//! parameter values; it never touches the backward code it is checking.

use crate::error::{RecallError, Result};
use crate::numcore::graph::{Graph, NodeId};
use crate::numcore::params::{ParamId, ParamStore};

/// Per-parameter maximum relative deviation between analytic and
/// central-finite-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
    pub worst: f64,
}

impl GradCheckReport {
    pub fn failures(&self, tolerance: f64) -> Vec<&str> {
        self.per_param
            .iter()
            .filter(|(_, dev)| *dev > tolerance)
            .map(|(name, _)| name.as_str())
            .collect()
    }
}

/// Checks every parameter of `store` against central differences with the
/// given `step`, for the scalar graph produced by `builder`. The builder must
/// be a deterministic function of the store contents.
///
/// Returns the report when all deviations are within `tolerance`; otherwise
/// an error naming the offending parameters.
pub fn grad_check<F>(
    store: &mut ParamStore,
    builder: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Graph) -> Result<NodeId>,
{
    let analytic = analytic_grads(store, &builder)?;
    let numeric = numeric_grads(store, &builder, step)?;
    let report = compare(store, &analytic, &numeric);
    let failures = report.failures(tolerance);
    if failures.is_empty() {
        Ok(report)
    } else {
        Err(RecallError::GradCheck(format!(
            "deviation above {tolerance:e} for parameters: {} (worst {:.3e})",
            failures.join(", "),
            report.worst
        )))
    }
}

fn eval(store: &ParamStore, builder: &impl Fn(&ParamStore, &mut Graph) -> Result<NodeId>) -> Result<f64> {
    let mut g = Graph::new();
    let root = builder(store, &mut g)?;
    if !g.value(root).is_scalar() {
        return Err(RecallError::Dimension("grad_check builder must produce a scalar".into()));
    }
    Ok(g.value(root).item())
}

fn analytic_grads(
    store: &mut ParamStore,
    builder: &impl Fn(&ParamStore, &mut Graph) -> Result<NodeId>,
) -> Result<Vec<Vec<f64>>> {
    store.zero_grads();
    let mut g = Graph::new();
    let root = builder(store, &mut g)?;
    g.backward(root)?;
    g.accumulate_param_grads(store);
    Ok(store.ids().map(|id| store.grad(id).to_vec()).collect())
}

fn numeric_grads(
    store: &mut ParamStore,
    builder: &impl Fn(&ParamStore, &mut Graph) -> Result<NodeId>,
    step: f64,
) -> Result<Vec<Vec<f64>>> {
    let ids: Vec<ParamId> = store.ids().collect();
    let mut all = Vec::with_capacity(ids.len());
    for id in ids {
        let numel = store.tensor(id).numel();
        let mut grads = vec![0.0; numel];
        for k in 0..numel {
            let orig = store.tensor(id).data()[k];
            store.tensor_mut(id).data_mut()[k] = orig + step;
            let plus = eval(store, builder)?;
            store.tensor_mut(id).data_mut()[k] = orig - step;
            let minus = eval(store, builder)?;
            store.tensor_mut(id).data_mut()[k] = orig;
            grads[k] = (plus - minus) / (2.0 * step);
        }
        all.push(grads);
    }
    Ok(all)
}

fn compare(store: &ParamStore, analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> GradCheckReport {
    let mut per_param = Vec::with_capacity(analytic.len());
    let mut worst = 0.0f64;
    for (idx, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let dev = a
            .iter()
            .zip(n)
            .map(|(&ai, &ni)| (ai - ni).abs() / (ai.abs() + ni.abs()).max(1e-6))
            .fold(0.0f64, f64::max);
        worst = worst.max(dev);
        per_param.push((store.name(ParamId(idx)).to_string(), dev));
    }
    GradCheckReport { per_param, worst }
}
