//! Per-datum embedding: minimize `g(ψ) = -Σ_{i∈Ω} log ℓ(yᵢ; uᵢᵀψ) + (λ/2)‖ψ‖²`
//! for a frozen subspace, and impute the missing entries from the result.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::PartialDatum;
use crate::error::{Error, Result};
use crate::models::{ModelSpec, ScoreDerivs};
use crate::subspace::Subspace;

pub type SketchVec = DVector<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerMethod {
    Gd,
    Newton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerSolverConfig {
    pub method: InnerMethod,
    /// Maximum number of inner iterations.
    pub max_iters: usize,
    /// `β_1, β_2, …`; the last value repeats once the list runs out.
    pub betas: Vec<f64>,
    pub lambda: f64,
    pub tol: f64,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        Self { method: InnerMethod::Newton, max_iters: 5, betas: vec![1.0], lambda: 0.1, tol: 1e-6 }
    }
}

impl InnerSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("inner solver needs at least one iteration".into()));
        }
        if self.betas.is_empty() || self.betas.iter().any(|&b| !(b > 0.0 && b <= 1.0)) {
            return Err(Error::Config(format!("step weights must lie in (0, 1], got {:?}", self.betas)));
        }
        if !(self.lambda >= 0.0) || !(self.tol >= 0.0) {
            return Err(Error::Config("lambda and tol must be non-negative".into()));
        }
        if self.method == InnerMethod::Newton && self.lambda <= 0.0 {
            return Err(Error::Config("the Newton solver needs lambda > 0".into()));
        }
        Ok(())
    }

    fn beta(&self, k: usize) -> f64 {
        self.betas[k.min(self.betas.len() - 1)]
    }
}

/// Result of one inner solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchOutcome {
    pub psi: SketchVec,
    pub cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Newton fell back to a gradient step at least once.
    pub fell_back: bool,
}

/// Cost, gradient and (optionally) Hessian of the sketch subproblem.
struct Local {
    cost: f64,
    grad: DVector<f64>,
    hess: Option<DMatrix<f64>>,
}

fn evaluate(
    model: &ModelSpec,
    datum: &PartialDatum,
    u: &Subspace,
    psi: &DVector<f64>,
    lambda: f64,
    with_hess: bool,
) -> Result<Local> {
    u.check_shape(model, psi.len())?;
    let d = psi.len();
    let c = u.stack_len();
    let mut cost = 0.5 * lambda * psi.norm_squared();
    let mut grad = psi * lambda;
    let mut hess = with_hess.then(|| DMatrix::identity(d, d) * lambda);
    let mut scores = Vec::with_capacity(c);
    let mut sd = ScoreDerivs::default();
    let mut rows: Vec<DVector<f64>> = vec![DVector::zeros(d); c];
    for &(i, y) in &datum.entries {
        if i >= u.rows() {
            return Err(Error::dim(format!("row index {i} outside 0..{}", u.rows())));
        }
        u.scores_into(i, psi, &mut scores);
        model.score_derivs_into(y, &scores, &mut sd)?;
        cost -= sd.loglik;
        for (k, row) in rows.iter_mut().enumerate() {
            for col in 0..d {
                row[col] = u.factor(k)[(i, col)];
            }
            grad.axpy(-sd.grad[k], row, 1.0);
        }
        if let Some(h) = hess.as_mut() {
            for k in 0..c {
                for l in 0..c {
                    let w = -sd.hess[k * c + l];
                    if w != 0.0 {
                        h.ger(w, &rows[k], &rows[l], 1.0);
                    }
                }
            }
        }
    }
    Ok(Local { cost, grad, hess })
}

/// `g(ψ)` for one datum.
pub fn sketch_cost(
    model: &ModelSpec,
    datum: &PartialDatum,
    u: &Subspace,
    psi: &DVector<f64>,
    lambda: f64,
) -> Result<f64> {
    Ok(evaluate(model, datum, u, psi, lambda, false)?.cost)
}

/// `∇_ψ g`.
pub fn sketch_grad(
    model: &ModelSpec,
    datum: &PartialDatum,
    u: &Subspace,
    psi: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    Ok(evaluate(model, datum, u, psi, lambda, false)?.grad)
}

/// `∇²_ψ g = Σ (-∂²log ℓ) uᵢuᵢᵀ + λI`.
pub fn sketch_hessian(
    model: &ModelSpec,
    datum: &PartialDatum,
    u: &Subspace,
    psi: &DVector<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    Ok(evaluate(model, datum, u, psi, lambda, true)?.hess.expect("requested"))
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 20;

fn non_finite(psi: &DVector<f64>, k: usize) -> Error {
    Error::Numerical {
        context: "sketch solve",
        detail: format!("non-finite iterate at inner iteration {k}: {:?}", psi.as_slice()),
    }
}

/// Backtracking along `dir` from `psi` (cost `f0`, directional slope `slope < 0`).
/// A trial point is accepted on sufficient decrease, or, once cost differences
/// are lost to rounding, when the cost stays within a few ulps and the
/// gradient shrinks.
/// Returns `None` if neither happens within the halving budget.
fn backtrack(
    model: &ModelSpec,
    datum: &PartialDatum,
    u: &Subspace,
    lambda: f64,
    psi: &DVector<f64>,
    current: &Local,
    dir: &DVector<f64>,
    slope: f64,
    step0: f64,
    k: usize,
    with_hess: bool,
) -> Result<Option<(DVector<f64>, Local)>> {
    let f0 = current.cost;
    let g0 = current.grad.norm();
    let mut step = step0;
    for _ in 0..=MAX_HALVINGS {
        let cand = psi + dir * step;
        if cand.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(&cand, k));
        }
        let trial = evaluate(model, datum, u, &cand, lambda, with_hess)?;
        let armijo = trial.cost <= f0 + ARMIJO * step * slope;
        let flat = trial.cost <= f0 + 8.0 * f64::EPSILON * f0.abs().max(1.0) && trial.grad.norm() < g0;
        if armijo || flat {
            return Ok(Some((cand, trial)));
        }
        step *= 0.5;
    }
    Ok(None)
}

/// Gradient descent: `ψ ← (1-β)ψ + (β/λ) Σ εᵢ uᵢ`, i.e. a step of length
/// `β/λ` along `-∇g` (length `β` when `λ = 0`), guarded by backtracking.
pub fn solve_sketch_gd(
    model: &ModelSpec,
    datum: &PartialDatum,
    u: &Subspace,
    cfg: &InnerSolverConfig,
    psi0: &DVector<f64>,
) -> Result<SketchOutcome> {
    cfg.validate()?;
    let mut psi = psi0.clone();
    let mut local = evaluate(model, datum, u, &psi, cfg.lambda, false)?;
    let mut iterations = 0;
    let scale = if cfg.lambda > 0.0 { 1.0 / cfg.lambda } else { 1.0 };
    for k in 0..cfg.max_iters {
        let gn = local.grad.norm();
        if gn <= cfg.tol {
            break;
        }
        let dir = -&local.grad;
        let step = cfg.beta(k) * scale;
        iterations = k + 1;
        match backtrack(model, datum, u, cfg.lambda, &psi, &local, &dir, -gn * gn, step, k, false)? {
            Some((next, trial)) => {
                psi = next;
                local = trial;
            }
            None => break,
        }
    }
    Ok(SketchOutcome { grad_norm: local.grad.norm(), cost: local.cost, psi, iterations, fell_back: false })
}

/// Damped Newton with a Cholesky solve; falls back to a gradient step when the
/// Hessian fails to factor.
pub fn solve_sketch_newton(
    model: &ModelSpec,
    datum: &PartialDatum,
    u: &Subspace,
    cfg: &InnerSolverConfig,
    psi0: &DVector<f64>,
) -> Result<SketchOutcome> {
    cfg.validate()?;
    let mut psi = psi0.clone();
    let mut local = evaluate(model, datum, u, &psi, cfg.lambda, true)?;
    let mut iterations = 0;
    let mut fell_back = false;
    for k in 0..cfg.max_iters {
        let gn = local.grad.norm();
        if gn <= cfg.tol {
            break;
        }
        iterations = k + 1;
        let hess = local.hess.take().expect("requested");
        let (dir, slope, step) = match hess.cholesky() {
            Some(ch) => {
                let dir = -ch.solve(&local.grad);
                let slope = local.grad.dot(&dir);
                (dir, slope, cfg.beta(k))
            }
            None => {
                fell_back = true;
                (-&local.grad, -gn * gn, cfg.beta(k) / cfg.lambda)
            }
        };
        if !(slope < 0.0) {
            break;
        }
        match backtrack(model, datum, u, cfg.lambda, &psi, &local, &dir, slope, step, k, true)? {
            Some((next, trial)) => {
                psi = next;
                local = trial;
            }
            None => break,
        }
    }
    Ok(SketchOutcome { grad_norm: local.grad.norm(), cost: local.cost, psi, iterations, fell_back })
}

pub fn solve_sketch(
    model: &ModelSpec,
    datum: &PartialDatum,
    u: &Subspace,
    cfg: &InnerSolverConfig,
    psi0: &DVector<f64>,
) -> Result<SketchOutcome> {
    match cfg.method {
        InnerMethod::Gd => solve_sketch_gd(model, datum, u, cfg, psi0),
        InnerMethod::Newton => solve_sketch_newton(model, datum, u, cfg, psi0),
    }
}

/// Fill in the missing entries of `datum` by pushing `uⱼᵀψ` through the
/// model's forward map; observed entries pass through.
pub fn impute(model: &ModelSpec, datum: &PartialDatum, u: &Subspace, psi: &DVector<f64>) -> Vec<f64> {
    let dense = datum.dense(u.rows());
    let mut scores = Vec::with_capacity(u.stack_len());
    dense
        .iter()
        .enumerate()
        .map(|(j, obs)| match obs {
            Some(y) => *y,
            None => {
                u.scores_into(j, psi, &mut scores);
                model.forward_map(&scores)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{logistic, QuantizerSpec};
    use crate::subspace::{init_stack, init_subspace};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probit5(sigma: f64) -> ModelSpec {
        ModelSpec::Probit(
            QuantizerSpec::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![-2.0, -0.7, 0.7, 2.0], sigma).unwrap(),
        )
    }

    fn random_probit_datum(u: &Subspace, n: usize, seed: u64) -> PartialDatum {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..n).map(|i| (i, rng.random_range(1..=5) as f64)).collect();
        let _ = u;
        PartialDatum::new(1, entries)
    }

    fn newton(lambda: f64, k: usize) -> InnerSolverConfig {
        InnerSolverConfig { method: InnerMethod::Newton, max_iters: k, betas: vec![1.0], lambda, tol: 1e-12 }
    }

    #[test]
    fn empty_datum_cost_and_fixed_point() {
        let u = init_subspace(4, 2, 0).unwrap();
        let d = PartialDatum::new(1, vec![]);
        let psi = DVector::from_vec(vec![1.0, -2.0]);
        let m = probit5(1.0);
        assert!((sketch_cost(&m, &d, &u, &psi, 0.4).unwrap() - 0.2 * 5.0).abs() < 1e-15);
        let cfg = InnerSolverConfig { method: InnerMethod::Gd, max_iters: 1, ..Default::default() };
        let out = solve_sketch_gd(&m, &d, &u, &cfg, &DVector::zeros(2)).unwrap();
        assert_eq!(out.psi, DVector::zeros(2));
    }

    #[test]
    fn logit_cost_at_origin() {
        let u = Subspace::from_matrix(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let d = PartialDatum::new(1, vec![(0, 1.0)]);
        let c = sketch_cost(&ModelSpec::LogitBinary, &d, &u, &DVector::zeros(2), 1.0).unwrap();
        assert!((c - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cost_matches_direct_sum() {
        let m = probit5(0.8);
        let u = init_subspace(20, 3, 1).unwrap();
        let d = random_probit_datum(&u, 20, 2);
        let psi = DVector::from_vec(vec![0.3, -0.1, 0.5]);
        let mut direct = 0.5 * 0.3 * psi.norm_squared();
        for &(i, y) in &d.entries {
            let x: f64 = (0..3).map(|k| u.factor(0)[(i, k)] * psi[k]).sum();
            let q = m.quantizer().unwrap();
            let th = q.thresholds();
            let b = q.label_index(y).unwrap();
            let cdf = |z: f64| 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
            let p = cdf((th[b + 1] - x) / 0.8) - cdf((th[b] - x) / 0.8);
            direct -= p.ln();
        }
        let got = sketch_cost(&m, &d, &u, &psi, 0.3).unwrap();
        assert!((got - direct).abs() < 1e-10 * direct.abs(), "{got} vs {direct}");
    }

    #[test]
    fn gd_and_newton_agree() {
        let m = probit5(1.0);
        let u = init_subspace(20, 2, 5).unwrap();
        let d = random_probit_datum(&u, 20, 6);
        let gd = InnerSolverConfig { method: InnerMethod::Gd, max_iters: 200, betas: vec![1.0], lambda: 1.0, tol: 1e-9 };
        let a = solve_sketch_gd(&m, &d, &u, &gd, &DVector::zeros(2)).unwrap();
        assert!(a.grad_norm <= 1e-4, "{}", a.grad_norm);
        let b = solve_sketch_newton(&m, &d, &u, &newton(1.0, 50), &DVector::zeros(2)).unwrap();
        assert!(b.grad_norm <= 1e-9);
        assert!((a.psi - &b.psi).norm() <= 1e-6);
    }

    #[test]
    fn single_logit_entry_matches_bisection() {
        // Stationarity of -log π(ψ₁) + ψ₁²/2: ψ₁ = 1 - π(ψ₁).
        let f = |p: f64| p - (1.0 - logistic(p));
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let want = 0.5 * (lo + hi);
        let u = Subspace::from_matrix(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let d = PartialDatum::new(1, vec![(0, 1.0)]);
        let gd = InnerSolverConfig { method: InnerMethod::Gd, max_iters: 500, betas: vec![1.0], lambda: 1.0, tol: 1e-13 };
        let out = solve_sketch_gd(&ModelSpec::LogitBinary, &d, &u, &gd, &DVector::zeros(2)).unwrap();
        assert!((out.psi[0] - want).abs() < 1e-10, "{} vs {want}", out.psi[0]);
        assert_eq!(out.psi[1], 0.0);
    }

    #[test]
    fn newton_one_step_is_ridge_for_interior_tobit() {
        let sigma = 0.5;
        let m = ModelSpec::TobitI { lower: -100.0, upper: 100.0, sigma };
        let u = init_subspace(6, 3, 8).unwrap();
        let ys = [0.3, -1.2, 2.0, 0.1, -0.4, 0.9];
        let d = PartialDatum::new(1, ys.iter().enumerate().map(|(i, &y)| (i, y)).collect());
        let lambda = 0.7;
        let out = solve_sketch_newton(&m, &d, &u, &newton(lambda, 1), &DVector::zeros(3)).unwrap();
        let uu = u.factor(0);
        let a = uu.transpose() * uu / (sigma * sigma) + DMatrix::identity(3, 3) * lambda;
        let rhs = uu.transpose() * DVector::from_row_slice(&ys) / (sigma * sigma);
        let want = a.cholesky().unwrap().solve(&rhs);
        assert!((out.psi - want).norm() < 1e-10);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn huge_lambda_shrinks_to_zero() {
        let m = probit5(1.0);
        let u = init_subspace(20, 2, 5).unwrap();
        let d = random_probit_datum(&u, 20, 6);
        let out = solve_sketch_newton(&m, &d, &u, &newton(1e6, 5), &DVector::from_vec(vec![0.5, 0.5])).unwrap();
        assert!(out.psi.norm() < 1e-4);
    }

    #[test]
    fn impute_passes_observed_and_applies_sign_rule() {
        let m = ModelSpec::Probit(QuantizerSpec::binary(0.2, 1.0).unwrap());
        let u = Subspace::from_matrix(DMatrix::from_row_slice(3, 1, &[1.0, -1.0, 0.5]));
        let psi = DVector::from_vec(vec![1.0]);
        let d = PartialDatum::new(1, vec![(1, 1.0)]);
        assert_eq!(impute(&m, &d, &u, &psi), vec![1.0, 1.0, 1.0]);
        let d = PartialDatum::new(1, vec![]);
        assert_eq!(impute(&m, &d, &u, &psi), vec![1.0, -1.0, 1.0]);
        let full = PartialDatum::new(1, vec![(0, -1.0), (1, -1.0), (2, 1.0)]);
        assert_eq!(impute(&m, &full, &u, &psi), vec![-1.0, -1.0, 1.0]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = InnerSolverConfig::default();
        c.max_iters = 0;
        assert!(c.validate().is_err());
        let c = InnerSolverConfig { betas: vec![1.5], ..Default::default() };
        assert!(c.validate().is_err());
        let c = InnerSolverConfig { lambda: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    fn models() -> Vec<ModelSpec> {
        vec![
            probit5(0.9),
            ModelSpec::TobitII { lower: -1.0, upper: 1.0, interior: 0.0, sigma: 0.8 },
            ModelSpec::LogitBinary,
            ModelSpec::LogitMulti { classes: 3 },
            ModelSpec::TobitI { lower: -1.0, upper: 1.0, sigma: 1.0 },
        ]
    }

    fn labels_for(m: &ModelSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n)
            .map(|_| match m {
                ModelSpec::Probit(_) => rng.random_range(1..=5) as f64,
                ModelSpec::TobitII { .. } => [0.0, -1.0, 1.0, -1.7, 2.2][rng.random_range(0..5)],
                ModelSpec::TobitI { .. } => [-1.0, 1.0, 0.3, -0.5][rng.random_range(0..4)],
                ModelSpec::LogitBinary => rng.random_range(0..2) as f64,
                ModelSpec::LogitMulti { .. } => rng.random_range(0..3) as f64,
            })
            .collect()
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_difference(seed in 0u64..1000, which in 0usize..5) {
            let m = &models()[which];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = init_stack(8, 3, m.score_dim(), seed).unwrap();
            let ys = labels_for(m, 6, &mut rng);
            let d = PartialDatum::new(1, ys.into_iter().enumerate().map(|(i, y)| (i + 1, y)).collect());
            let psi = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let g = sketch_grad(m, &d, &u, &psi, 0.3).unwrap();
            for k in 0..3 {
                let h = 1e-5;
                let mut p = psi.clone();
                p[k] += h;
                let fp = sketch_cost(m, &d, &u, &p, 0.3).unwrap();
                p[k] -= 2.0 * h;
                let fm = sketch_cost(m, &d, &u, &p, 0.3).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                prop_assert!((g[k] - fd).abs() <= 1e-5 * g[k].abs().max(1e-3), "{} vs {}", g[k], fd);
            }
        }

        #[test]
        fn hessian_is_spd(seed in 0u64..1000, which in 0usize..4) {
            let m = &models()[which];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = init_stack(8, 3, m.score_dim(), seed).unwrap();
            let ys = labels_for(m, 8, &mut rng);
            let d = PartialDatum::new(1, ys.into_iter().enumerate().map(|(i, y)| (i, y)).collect());
            let psi = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let lambda = 0.25;
            let h = sketch_hessian(m, &d, &u, &psi, lambda).unwrap();
            prop_assert!((&h - h.transpose()).amax() < 1e-12);
            let min = h.symmetric_eigenvalues().min();
            prop_assert!(min >= lambda - 1e-10, "{min}");
        }

        #[test]
        fn solvers_monotone_and_order_invariant(seed in 0u64..500, which in 0usize..4, gd in proptest::bool::ANY) {
            let m = &models()[which];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = init_stack(10, 3, m.score_dim(), seed).unwrap();
            let ys = labels_for(m, 10, &mut rng);
            let entries: Vec<_> = ys.into_iter().enumerate().collect();
            let d = PartialDatum::new(1, entries.clone());
            let method = if gd { InnerMethod::Gd } else { InnerMethod::Newton };
            let psi0 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let mut prev = sketch_cost(m, &d, &u, &psi0, 0.5).unwrap();
            let mut psi = psi0.clone();
            for _ in 0..5 {
                let cfg = InnerSolverConfig { method, max_iters: 1, betas: vec![1.0], lambda: 0.5, tol: 0.0 };
                let out = solve_sketch(m, &d, &u, &cfg, &psi).unwrap();
                prop_assert!(out.cost <= prev + 1e-12);
                prev = out.cost;
                psi = out.psi;
            }
            let mut rev = entries;
            rev.reverse();
            // Run to convergence: an unconverged path can differ by a flipped
            // backtracking decision.
            let iters = if gd { 2000 } else { 50 };
            let cfg = InnerSolverConfig { method, max_iters: iters, betas: vec![1.0], lambda: 0.5, tol: 1e-11 };
            let a = solve_sketch(m, &d, &u, &cfg, &psi0).unwrap();
            let b = solve_sketch(m, &PartialDatum::new(1, rev), &u, &cfg, &psi0).unwrap();
            // λ-strong convexity: ‖ψ - ψ*‖ ≤ ‖∇g(ψ)‖/λ for whatever GD leaves unconverged.
            let slack = (a.grad_norm + b.grad_norm) / 0.5;
            prop_assert!((&a.psi - &b.psi).norm() <= 1e-8 + slack);
            if !gd {
                prop_assert!(a.grad_norm <= 1e-10);
            }
        }
    }
}
