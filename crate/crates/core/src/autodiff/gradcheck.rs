//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, NodeId};
use super::params::{ParamNodes, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    /// Largest scaled error `|analytic − numeric| / max(1, |analytic|, |numeric|)`
    /// over the tensor's entries.
    pub max_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_error.total_cmp(&b.max_error))
    }
}

pub fn scaled_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval<F>(params: &ParamStore, build: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamNodes) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let nodes = params.register_all(&mut g);
    let loss = build(&mut g, &nodes)?;
    let v = g.value(loss);
    if !v.is_scalar() {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares the gradient from [`Graph::backward`] against central differences
/// with the given `step`, for every entry of every parameter in `params`.
/// `build` must construct the same scalar loss from the registered parameters
/// on each call.
pub fn grad_check<F>(
    params: &ParamStore,
    step: f64,
    tolerance: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamNodes) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let nodes = params.register_all(&mut g);
    let loss = build(&mut g, &nodes)?;
    let analytic = g.backward(loss)?;

    let mut probe = params.clone();
    let mut checks = Vec::with_capacity(params.len());
    for (name, tensor) in params.iter() {
        let grad = analytic
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("no gradient for {name}")))?;
        let mut max_error: f64 = 0.0;
        for i in 0..tensor.len() {
            let orig = tensor.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + step;
            let plus = eval(&probe, &build)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - step;
            let minus = eval(&probe, &build)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            max_error = max_error.max(scaled_error(grad.data()[i], numeric));
        }
        checks.push(ParamCheck {
            name: name.clone(),
            max_error,
        });
    }
    Ok(GradCheckReport {
        params: checks,
        tolerance,
    })
}
