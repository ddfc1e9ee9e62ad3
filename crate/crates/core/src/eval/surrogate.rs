use nalgebra::DVector;

use crate::data::PartialDatum;
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::sketch::sketch_cost;
use crate::subspace::{data_gradient_sum, Subspace};

/// Quadratic-majorizer average
/// `Č_T(U) = (1/T) Σ_τ [g_τ(U[τ-1]) + ⟨∇g_τ(U[τ-1]), U - U[τ-1]⟩ + (α_τ/2)‖U - U[τ-1]‖²]`
/// with `α_τ = δ₂‖ψ_τ‖² + λ/τ`, where `g_τ` carries the `λ/(2τ)‖U‖²` term.
/// `history[k]` is `U[k]`; at least `T` entries are needed. Diagnostic only.
pub fn surrogate_cost(
    model: &ModelSpec,
    data: &[&PartialDatum],
    sketches: &[&DVector<f64>],
    history: &[Subspace],
    u: &Subspace,
    lambda: f64,
    delta2: f64,
) -> Result<f64> {
    let horizon = data.len();
    if horizon == 0 || sketches.len() != horizon || history.len() < horizon {
        return Err(Error::dim("misaligned histories"));
    }
    let mut total = 0.0;
    for k in 0..horizon {
        let tau = (k + 1) as f64;
        let prev = &history[k];
        let g = sketch_cost(model, data[k], prev, sketches[k], lambda)? + lambda / (2.0 * tau) * prev.frobenius_sq();
        let sum = data_gradient_sum(model, &data[k..=k], &sketches[k..=k], prev)?;
        let mut inner = 0.0;
        let mut dist = 0.0;
        for (f, (s, p)) in u.factors().iter().zip(sum.iter().zip(prev.factors())) {
            let diff = f - p;
            let grad = s + p * (lambda / tau);
            inner += grad.dot(&diff);
            dist += diff.norm_squared();
        }
        let alpha = delta2 * sketches[k].norm_squared() + lambda / tau;
        total += g + inner + 0.5 * alpha * dist;
    }
    Ok(total / horizon as f64)
}
