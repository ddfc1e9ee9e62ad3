use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::regret::empirical_cost;
use crate::data::{PartialDatum, Stream};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::sketch::{solve_sketch_newton, InnerMethod, InnerSolverConfig};
use crate::subspace::{data_gradient_sum, gradient_from_sum, init_subspace, Subspace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub rank: usize,
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once `‖∇_U C_T‖_F` falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { rank: 2, lambda: 0.1, max_iters: 5000, tol: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub u: Subspace,
    pub psi: Vec<DVector<f64>>,
    /// `C_T(U*)` with `Ψ*`.
    pub cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn exact(lambda: f64) -> InnerSolverConfig {
    InnerSolverConfig { method: InnerMethod::Newton, max_iters: 100, betas: vec![1.0], lambda, tol: 1e-13 }
}

/// Full-batch block minimization of
/// `C_T(U, Ψ) = (1/T) Σ_τ [-Σ log ℓ(y; uᵢᵀψ_τ) + (λ/2)‖ψ_τ‖²] + (λ/2T)‖U‖²`.
///
/// Each sweep solves every `ψ_τ` and then every row `uᵢ` to optimality by
/// Newton's method (both blocks are strictly convex for log-concave models).
/// Only scalar-score models are supported.
pub fn batch_oracle(model: &ModelSpec, stream: &Stream, cfg: &OracleConfig) -> Result<OracleResult> {
    if model.score_dim() != 1 {
        return Err(Error::domain("the batch oracle handles scalar-score models only"));
    }
    if stream.is_empty() {
        return Err(Error::domain("empty stream"));
    }
    if !(cfg.lambda > 0.0) {
        return Err(Error::Config("the batch oracle needs lambda > 0".into()));
    }
    let inner = exact(cfg.lambda);
    let t_len = stream.len();
    let mut u = init_subspace(stream.dim, cfg.rank, cfg.seed)?;
    let mut psi = vec![DVector::zeros(cfg.rank); t_len];

    // Row-wise view: for row i, the (τ, y) pairs where it is observed.
    let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); stream.dim];
    for (k, d) in stream.data.iter().enumerate() {
        for &(i, y) in &d.entries {
            by_row[i].push((k, y));
        }
    }
    let by_row: Vec<PartialDatum> = by_row.into_iter().map(|e| PartialDatum::new(1, e)).collect();
    let data: Vec<&PartialDatum> = stream.data.iter().collect();

    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        psi = data
            .par_iter()
            .zip(psi.par_iter())
            .map(|(d, p0)| solve_sketch_newton(model, d, &u, &inner, p0).map(|o| o.psi))
            .collect::<Result<_>>()?;
        let sketches: Vec<&DVector<f64>> = psi.iter().collect();
        let sum = data_gradient_sum(model, &data, &sketches, &u)?;
        grad_norm = gradient_from_sum(&sum, &u, cfg.lambda, t_len);
        iterations = it;
        if grad_norm <= cfg.tol {
            break;
        }
        let psi_mat = Subspace::from_matrix(DMatrix::from_fn(t_len, cfg.rank, |r, c| psi[r][c]));
        let rows: Vec<DVector<f64>> = by_row
            .par_iter()
            .enumerate()
            .map(|(i, d)| {
                let u0 = u.factor(0).row(i).transpose();
                solve_sketch_newton(model, d, &psi_mat, &inner, &u0).map(|o| o.psi)
            })
            .collect::<Result<_>>()?;
        let m = DMatrix::from_fn(stream.dim, cfg.rank, |r, c| rows[r][c]);
        u = Subspace::from_matrix(m);
        iterations = it + 1;
    }
    let sketches: Vec<&DVector<f64>> = psi.iter().collect();
    let cost = empirical_cost(model, &data, &sketches, &u, cfg.lambda)?;
    Ok(OracleResult { u, psi, cost, grad_norm, iterations, converged: grad_norm <= cfg.tol })
}
