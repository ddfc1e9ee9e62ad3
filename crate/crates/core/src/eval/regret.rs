use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trace::RunTrace;
use crate::data::PartialDatum;
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::sketch::sketch_cost;
use crate::subspace::Subspace;

/// Online versus last-iterate cost of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub horizon: usize,
    /// `(1/T) Σ g_τ(ψ_τ, U[τ-1])`
    pub online_cost: f64,
    /// `(1/T) Σ g_τ(ψ_τ, U[T])`
    pub final_cost: f64,
    /// `final_cost - online_cost`
    pub regret: f64,
    /// `max_t t·‖U[t] - U[t-1]‖_F`
    pub b_hat: f64,
    pub mu: Option<f64>,
    /// `B̂²(ln T + 1)²/(2μT) + 5B̂²/(6μT)` for a constant step `μ`.
    pub bound: Option<f64>,
}

pub fn regret_bound(b: f64, mu: f64, horizon: usize) -> f64 {
    let t = horizon as f64;
    let l = t.ln() + 1.0;
    b * b * l * l / (2.0 * mu * t) + 5.0 * b * b / (6.0 * mu * t)
}

fn check_aligned(data: &[&PartialDatum], sketches: &[&DVector<f64>]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::domain("empty history"));
    }
    if data.len() != sketches.len() {
        return Err(Error::dim(format!("{} data but {} sketches", data.len(), sketches.len())));
    }
    Ok(())
}

/// Per-datum `-Σ log ℓ + (λ/2)‖ψ‖²` at a fixed subspace, in stream order.
pub fn data_costs(
    model: &ModelSpec,
    data: &[&PartialDatum],
    sketches: &[&DVector<f64>],
    u: &Subspace,
    lambda: f64,
) -> Result<Vec<f64>> {
    check_aligned(data, sketches)?;
    data.par_iter().zip(sketches.par_iter()).map(|(d, p)| sketch_cost(model, d, u, p, lambda)).collect()
}

/// `C_T(U) = (1/T) Σ g_τ(ψ_τ, U)` with the `λ/(2T)‖U‖²` weighting.
pub fn empirical_cost(
    model: &ModelSpec,
    data: &[&PartialDatum],
    sketches: &[&DVector<f64>],
    u: &Subspace,
    lambda: f64,
) -> Result<f64> {
    let costs = data_costs(model, data, sketches, u, lambda)?;
    let t = costs.len() as f64;
    Ok(costs.iter().sum::<f64>() / t + lambda / (2.0 * t) * u.frobenius_sq())
}

fn finish(
    horizon: usize,
    online_cost: f64,
    final_cost: f64,
    b_hat: f64,
    mu: Option<f64>,
) -> RegretReport {
    RegretReport {
        horizon,
        online_cost,
        final_cost,
        regret: final_cost - online_cost,
        b_hat,
        mu,
        bound: mu.filter(|&m| m > 0.0).map(|m| regret_bound(b_hat, m, horizon)),
    }
}

/// Costs and regret from the full subspace history `U[0], …, U[T]`.
pub fn cumulative_costs(
    model: &ModelSpec,
    data: &[&PartialDatum],
    sketches: &[&DVector<f64>],
    history: &[Subspace],
    lambda: f64,
    mu: Option<f64>,
) -> Result<RegretReport> {
    check_aligned(data, sketches)?;
    let horizon = data.len();
    if history.len() != horizon + 1 {
        return Err(Error::dim(format!("need {} subspaces, got {}", horizon + 1, history.len())));
    }
    let reg = lambda / (2.0 * horizon as f64);
    let online: Vec<f64> = (0..horizon)
        .into_par_iter()
        .map(|k| {
            let c = sketch_cost(model, data[k], &history[k], sketches[k], lambda)?;
            Ok(c + reg * history[k].frobenius_sq())
        })
        .collect::<Result<_>>()?;
    let online_cost = online.iter().sum::<f64>() / horizon as f64;
    let final_cost = empirical_cost(model, data, sketches, &history[horizon], lambda)?;
    let b_hat = (1..=horizon)
        .map(|t| t as f64 * history[t].distance(&history[t - 1]))
        .fold(0.0, f64::max);
    Ok(finish(horizon, online_cost, final_cost, b_hat, mu))
}

/// Same as [`cumulative_costs`], with the online side read from the run trace
/// instead of a stored subspace history.
pub fn regret_from_trace(
    model: &ModelSpec,
    data: &[&PartialDatum],
    sketches: &[&DVector<f64>],
    trace: &RunTrace,
    u_final: &Subspace,
    lambda: f64,
    mu: Option<f64>,
) -> Result<RegretReport> {
    check_aligned(data, sketches)?;
    let horizon = data.len();
    if trace.len() != horizon {
        return Err(Error::dim(format!("trace has {} steps, history {horizon}", trace.len())));
    }
    let reg = lambda / (2.0 * horizon as f64);
    let online_cost =
        trace.records.iter().map(|r| r.data_loss + reg * r.u_norm_sq).sum::<f64>() / horizon as f64;
    let final_cost = empirical_cost(model, data, sketches, u_final, lambda)?;
    let b_hat = trace.records.iter().map(|r| r.t as f64 * r.delta_u).fold(0.0, f64::max);
    Ok(finish(horizon, online_cost, final_cost, b_hat, mu))
}
