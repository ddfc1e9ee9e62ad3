//! Stochastic-gradient learning of the single cut of a binary Probit quantizer.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::PartialDatum;
use crate::error::{Error, Result};
use crate::models::tail::{log_q, mills_ratio};
use crate::subspace::{row_dot, Subspace};

/// Which expression to use for the per-entry threshold gradient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdGradForm {
    /// `yᵢ·m(bᵢ)/σ`, the derivative of the binary Probit log-likelihood.
    #[default]
    Exact,
    /// `bᵢ·m(bᵢ)/σ`, kept only for comparison runs.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub eta: f64,
    /// Gradient used by the most recent step.
    pub last_grad: f64,
}

impl ThresholdState {
    pub fn new(eta: f64) -> Result<Self> {
        if !eta.is_finite() {
            return Err(Error::domain("threshold must be finite"));
        }
        Ok(Self { eta, last_grad: 0.0 })
    }
}

fn sign_label(y: f64) -> Result<f64> {
    if y == 1.0 || y == -1.0 {
        Ok(y)
    } else {
        Err(Error::domain(format!("threshold learning needs labels in {{-1, +1}}, got {y}")))
    }
}

fn check(u: &Subspace, psi: &DVector<f64>, sigma: f64) -> Result<()> {
    if u.stack_len() != 1 || psi.len() != u.rank() {
        return Err(Error::dim("threshold learning needs a single factor matching the sketch"));
    }
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// `-Σ log Q(bᵢ)` with `bᵢ = yᵢ(η - uᵢᵀψ)/σ`: the data part of the cost as a
/// function of the threshold.
pub fn threshold_cost(datum: &PartialDatum, u: &Subspace, psi: &DVector<f64>, eta: f64, sigma: f64) -> Result<f64> {
    check(u, psi, sigma)?;
    let mut s = 0.0;
    for &(i, y) in &datum.entries {
        let y = sign_label(y)?;
        let b = y * (eta - row_dot(u.factor(0), i, psi)) / sigma;
        s -= log_q(b);
    }
    Ok(s)
}

/// Derivative of [`threshold_cost`] in `η`.
pub fn threshold_grad(
    datum: &PartialDatum,
    u: &Subspace,
    psi: &DVector<f64>,
    eta: f64,
    sigma: f64,
    form: ThresholdGradForm,
) -> Result<f64> {
    check(u, psi, sigma)?;
    let mut g = 0.0;
    for &(i, y) in &datum.entries {
        let y = sign_label(y)?;
        let b = y * (eta - row_dot(u.factor(0), i, psi)) / sigma;
        let lead = match form {
            ThresholdGradForm::Exact => y,
            ThresholdGradForm::Literal => b,
        };
        g += lead * mills_ratio(b) / sigma;
    }
    Ok(g)
}

/// `η ← η - γ·∇_η g`. Call with the subspace *after* this step's update.
pub fn threshold_step(
    state: &ThresholdState,
    datum: &PartialDatum,
    u: &Subspace,
    psi: &DVector<f64>,
    gamma: f64,
    sigma: f64,
    form: ThresholdGradForm,
) -> Result<ThresholdState> {
    let g = threshold_grad(datum, u, psi, state.eta, sigma, form)?;
    let eta = state.eta - gamma * g;
    if !eta.is_finite() {
        return Err(Error::Numerical { context: "threshold step", detail: format!("eta={eta}, grad={g}") });
    }
    Ok(ThresholdState { eta, last_grad: g })
}
