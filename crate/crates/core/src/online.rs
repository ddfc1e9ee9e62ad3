//! The online loop: sketch each datum against `U[t-1]`, then refine `U`.

use std::time::Instant;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{PartialDatum, Stream};
use crate::error::{Error, Result};
use crate::eval::{RunTrace, TraceRecord};
use crate::models::ModelSpec;
use crate::sketch::{solve_sketch, InnerMethod, InnerSolverConfig};
use crate::subspace::{grad_norm_p3, init_stack, project_ball, row_dot, sgd_step, StepSchedule, Subspace};
use crate::threshold::{threshold_step, ThresholdGradForm, ThresholdState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub eta0: f64,
    pub gamma: StepSchedule,
    pub form: ThresholdGradForm,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { eta0: 0.0, gamma: StepSchedule::Constant { mu: 0.01 }, form: ThresholdGradForm::Exact }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    pub rank: usize,
    pub lambda: f64,
    pub step: StepSchedule,
    /// Inner sketch solver; its `lambda` is replaced by the run's `lambda`.
    pub inner: InnerSolverConfig,
    pub passes: usize,
    /// Seeds the initial subspace and the per-pass shuffles.
    pub seed: u64,
    /// Reshuffle the datum order on passes after the first.
    pub shuffle: bool,
    /// Start each sketch solve from the previous sketch instead of zero.
    pub warm_start: bool,
    pub ball_radius: Option<f64>,
    pub threshold: Option<ThresholdConfig>,
    /// Evaluate `‖∇_U C_t‖_F` every this many steps (and at `t = 1`); 0 disables.
    pub trace_grad_every: usize,
    /// Keep every `U[t]`; memory grows as `T·D·d`.
    pub keep_history: bool,
    /// Count steps whose Probit row gradients exceed the smoothness bound.
    pub check_smoothness: bool,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            lambda: 0.1,
            step: StepSchedule::Constant { mu: 0.01 },
            inner: InnerSolverConfig::default(),
            passes: 1,
            seed: 0,
            shuffle: true,
            warm_start: true,
            ball_radius: None,
            threshold: None,
            trace_grad_every: 0,
            keep_history: false,
            check_smoothness: cfg!(debug_assertions),
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        model.validate()?;
        if self.rank == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.passes == 0 {
            return Err(Error::Config("need at least one pass".into()));
        }
        self.step.validate()?;
        self.inner_config().validate()?;
        if let Some(b) = self.ball_radius {
            if !(b > 0.0) {
                return Err(Error::Config(format!("ball radius must be positive, got {b}")));
            }
        }
        if let Some(th) = &self.threshold {
            th.gamma.validate()?;
            if model.quantizer().is_none_or(|q| q.num_levels() != 2) {
                return Err(Error::Config("threshold learning needs a binary Probit model".into()));
            }
        }
        Ok(())
    }

    pub fn inner_config(&self) -> InnerSolverConfig {
        InnerSolverConfig { lambda: self.lambda, ..self.inner.clone() }
    }
}

/// One processed datum.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    /// Index of the datum in the stream.
    pub datum: usize,
    pub psi: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub subspace: Subspace,
    /// The model as it stands at the end (with any learned threshold).
    pub model: ModelSpec,
    pub steps: Vec<Step>,
    pub trace: RunTrace,
    /// `U[0], …, U[T]` when requested.
    pub history: Option<Vec<Subspace>>,
    pub smoothness_violations: usize,
    pub fallbacks: usize,
}

impl RunResult {
    /// Per-step datum references and sketches, aligned with the trace.
    pub fn aligned<'a>(&'a self, stream: &'a Stream) -> (Vec<&'a PartialDatum>, Vec<&'a DVector<f64>>) {
        self.steps.iter().map(|s| (&stream.data[s.datum], &s.psi)).unzip()
    }

    /// The last sketch computed for each datum (zero for data never seen).
    pub fn final_sketches(&self, stream_len: usize) -> Vec<DVector<f64>> {
        let mut out = vec![DVector::zeros(self.subspace.rank()); stream_len];
        for s in &self.steps {
            out[s.datum] = s.psi.clone();
        }
        out
    }

    /// Steps of the last pass only, in processing order.
    pub fn last_pass(&self) -> &[Step] {
        let last = self.trace.records.last().map_or(1, |r| r.pass);
        let first = self.trace.records.iter().position(|r| r.pass == last).unwrap_or(0);
        &self.steps[first..]
    }

    pub fn eta(&self) -> Option<f64> {
        self.model.quantizer().filter(|q| q.num_levels() == 2).map(|q| q.cuts()[0])
    }
}

/// Run from a random standard-normal subspace drawn with `cfg.seed`.
pub fn run_online(model: &ModelSpec, stream: &Stream, cfg: &OnlineConfig) -> Result<RunResult> {
    let u0 = init_stack(stream.dim, cfg.rank, model.score_dim(), cfg.seed)?;
    run_online_from(model, stream, cfg, u0)
}

fn pass_order(len: usize, pass: usize, cfg: &OnlineConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    if pass > 1 && cfg.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(pass as u64);
        order.shuffle(&mut rng);
    }
    order
}

pub fn run_online_from(model: &ModelSpec, stream: &Stream, cfg: &OnlineConfig, u0: Subspace) -> Result<RunResult> {
    cfg.validate(model)?;
    if u0.rows() != stream.dim {
        return Err(Error::dim(format!("subspace has {} rows, stream {}", u0.rows(), stream.dim)));
    }
    u0.check_shape(model, cfg.rank)?;
    let mut model = model.clone();
    let inner = cfg.inner_config();
    let lambda = cfg.lambda;
    let mut threshold = match &cfg.threshold {
        Some(th) => {
            model.quantizer_mut().expect("validated").set_binary_threshold(th.eta0)?;
            Some(ThresholdState::new(th.eta0)?)
        }
        None => None,
    };
    let smooth = match (&model, cfg.check_smoothness) {
        (ModelSpec::Probit(q), true) => Some(q.smoothness_constants().0),
        _ => None,
    };

    let total = stream.len() * cfg.passes;
    let mut u = u0;
    let mut steps: Vec<Step> = Vec::with_capacity(total);
    let mut trace = RunTrace { records: Vec::with_capacity(total) };
    let mut history = cfg.keep_history.then(|| vec![u.clone()]);
    let mut psi_prev = DVector::zeros(cfg.rank);
    let (mut violations, mut fallbacks) = (0, 0);
    let mut t = 0;
    for pass in 1..=cfg.passes {
        for idx in pass_order(stream.len(), pass, cfg) {
            t += 1;
            let datum = &stream.data[idx];
            let clock = Instant::now();
            let psi0 = if cfg.warm_start { psi_prev.clone() } else { DVector::zeros(cfg.rank) };
            let out = solve_sketch(&model, datum, &u, &inner, &psi0)?;
            let solve_secs = clock.elapsed().as_secs_f64();
            fallbacks += usize::from(out.fell_back);

            let clock = Instant::now();
            let u_norm_sq = u.frobenius_sq();
            if let Some(delta1) = smooth {
                violations += smoothness_violations(&model, datum, &u, &out.psi, delta1, lambda / t as f64)?;
            }
            let mut next = sgd_step(&u, datum, &out.psi, t, lambda, cfg.step.at(t), &model)?;
            if let Some(b) = cfg.ball_radius {
                next = project_ball(&next, b)?;
            }
            let delta_u = next.distance(&u);
            u = next;
            let update_secs = clock.elapsed().as_secs_f64();

            let (mut eta, mut eta_grad) = (None, None);
            if let (Some(state), Some(th)) = (threshold.as_mut(), &cfg.threshold) {
                let sigma = model.quantizer().expect("validated").sigma();
                *state = threshold_step(state, datum, &u, &out.psi, th.gamma.at(t), sigma, th.form)?;
                model.quantizer_mut().expect("validated").set_binary_threshold(state.eta)?;
                eta = Some(state.eta);
                eta_grad = Some(state.last_grad);
            }

            psi_prev = out.psi.clone();
            steps.push(Step { datum: idx, psi: out.psi });
            if let Some(h) = history.as_mut() {
                h.push(u.clone());
            }
            let grad_norm = if cfg.trace_grad_every > 0 && (t == 1 || t % cfg.trace_grad_every == 0) {
                let data: Vec<&PartialDatum> = steps.iter().map(|s| &stream.data[s.datum]).collect();
                let sketches: Vec<&DVector<f64>> = steps.iter().map(|s| &s.psi).collect();
                Some(grad_norm_p3(&model, &data, &sketches, &u, lambda)?)
            } else {
                None
            };
            trace.records.push(TraceRecord {
                t,
                pass,
                grad_norm,
                cost: out.cost + lambda / (2.0 * t as f64) * u_norm_sq,
                data_loss: out.cost,
                u_norm_sq,
                delta_u,
                eta,
                eta_grad,
                inner_iters: out.iterations,
                fell_back: out.fell_back,
                solve_secs,
                update_secs,
            });
        }
    }
    Ok(RunResult { subspace: u, model, steps, trace, history, smoothness_violations: violations, fallbacks })
}

/// Observed rows whose gradient `-d1·ψ + (λ/t)uᵢ` breaks
/// `‖∇‖ ≤ δ₁‖ψ‖ + (λ/t)‖uᵢ‖`.
fn smoothness_violations(
    model: &ModelSpec,
    datum: &PartialDatum,
    u: &Subspace,
    psi: &DVector<f64>,
    delta1: f64,
    reg: f64,
) -> Result<usize> {
    let f = u.factor(0);
    let psi_norm = psi.norm();
    let mut n = 0;
    for &(i, y) in &datum.entries {
        let d = model.entry_derivs(y, row_dot(f, i, psi))?;
        let row = f.row(i).transpose();
        let grad = &row * reg - psi * d.d1;
        let bound = delta1 * psi_norm + reg * row.norm();
        if grad.norm() > bound * (1.0 + 1e-12) + 1e-300 {
            n += 1;
        }
    }
    Ok(n)
}

/// Sketch every datum against a frozen subspace, starting each solve at zero.
pub fn resketch(
    model: &ModelSpec,
    stream: &Stream,
    u: &Subspace,
    inner: &InnerSolverConfig,
) -> Result<Vec<DVector<f64>>> {
    let zero = DVector::zeros(u.rank());
    stream
        .data
        .par_iter()
        .map(|d| solve_sketch(model, d, u, inner, &zero).map(|o| o.psi))
        .collect()
}

/// Solve each datum to tight tolerance (default method Newton).
pub fn resketch_exact(model: &ModelSpec, stream: &Stream, u: &Subspace, lambda: f64) -> Result<Vec<DVector<f64>>> {
    let inner = InnerSolverConfig { method: InnerMethod::Newton, max_iters: 50, betas: vec![1.0], lambda, tol: 1e-10 };
    resketch(model, stream, u, &inner)
}
