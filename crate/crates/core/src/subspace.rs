//! The latent subspace `U` and its stochastic-gradient refinement.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PartialDatum;
use crate::error::{Error, Result};
use crate::models::{ModelSpec, ScoreDerivs};

/// `D×d` factor matrix, or a stack of them for the multiclass Logit (one per
/// non-reference class).
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    factors: Vec<DMatrix<f64>>,
}

impl Subspace {
    pub fn zeros(rows: usize, rank: usize, stack: usize) -> Self {
        Self { factors: vec![DMatrix::zeros(rows, rank); stack.max(1)] }
    }

    pub fn from_matrix(u: DMatrix<f64>) -> Self {
        Self { factors: vec![u] }
    }

    pub fn from_factors(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = factors.first().ok_or_else(|| Error::dim("empty factor stack"))?;
        let shape = first.shape();
        if factors.iter().any(|f| f.shape() != shape) {
            return Err(Error::dim("stacked factors must share one shape"));
        }
        Ok(Self { factors })
    }

    pub fn rows(&self) -> usize {
        self.factors[0].nrows()
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn stack_len(&self) -> usize {
        self.factors.len()
    }

    pub fn factor(&self, k: usize) -> &DMatrix<f64> {
        &self.factors[k]
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.factors
    }

    /// `uᵢ⁽ᵏ⁾ᵀψ` for every stacked factor.
    #[inline]
    pub fn scores_into(&self, row: usize, psi: &DVector<f64>, out: &mut Vec<f64>) {
        out.clear();
        for f in &self.factors {
            out.push(row_dot(f, row, psi));
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.factors.iter().map(|f| f.norm_squared()).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    /// `‖self - other‖_F`
    pub fn distance(&self, other: &Subspace) -> f64 {
        self.factors
            .iter()
            .zip(&other.factors)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.factors.iter().all(|f| f.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn check_shape(&self, model: &ModelSpec, psi_len: usize) -> Result<()> {
        if self.stack_len() != model.score_dim() {
            return Err(Error::dim(format!(
                "model {} needs {} stacked factors, subspace has {}",
                model.tag(),
                model.score_dim(),
                self.stack_len()
            )));
        }
        if psi_len != self.rank() {
            return Err(Error::dim(format!(
                "sketch has length {psi_len}, subspace rank is {}",
                self.rank()
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn row_dot(m: &DMatrix<f64>, row: usize, v: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for k in 0..m.ncols() {
        s += m[(row, k)] * v[k];
    }
    s
}

/// Random `D×d` subspace with i.i.d. standard-normal entries.
pub fn init_subspace(rows: usize, rank: usize, seed: u64) -> Result<Subspace> {
    init_stack(rows, rank, 1, seed)
}

/// As [`init_subspace`], for a stack of `stack` factors.
pub fn init_stack(rows: usize, rank: usize, stack: usize, seed: u64) -> Result<Subspace> {
    if rank == 0 || rank > rows {
        return Err(Error::dim(format!("need rows >= rank >= 1, got rows={rows}, rank={rank}")));
    }
    if stack == 0 {
        return Err(Error::dim("stack must hold at least one factor"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = (0..stack)
        .map(|_| DMatrix::from_fn(rows, rank, |_, _| StandardNormal.sample(&mut rng)))
        .collect();
    Ok(Subspace { factors })
}

/// Step-size sequence for the subspace (and threshold) updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    Constant { mu: f64 },
    /// `μ_t = 1/(c·t)`
    InverseTime { c: f64 },
}

impl StepSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { mu } => mu,
            StepSchedule::InverseTime { c } => 1.0 / (c * t.max(1) as f64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { mu } => mu >= 0.0 && mu.is_finite(),
            StepSchedule::InverseTime { c } => c > 0.0 && c.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid step schedule {self:?}")))
        }
    }
}

/// Score-gradients of every observed entry at `(U, ψ)`; entry `e` occupies
/// `out[e*c..(e+1)*c]`.
pub(crate) fn observed_score_grads(
    model: &ModelSpec,
    datum: &PartialDatum,
    u: &Subspace,
    psi: &DVector<f64>,
    out: &mut Vec<f64>,
) -> Result<f64> {
    out.clear();
    let mut scores = Vec::with_capacity(u.stack_len());
    let mut d = ScoreDerivs::default();
    let mut loglik = 0.0;
    for &(i, y) in &datum.entries {
        if i >= u.rows() {
            return Err(Error::dim(format!("row index {i} outside 0..{}", u.rows())));
        }
        u.scores_into(i, psi, &mut scores);
        model.score_derivs_into(y, &scores, &mut d)?;
        loglik += d.loglik;
        out.extend_from_slice(&d.grad);
    }
    Ok(loglik)
}

/// One stochastic-gradient refinement of `U` from the datum at time `t`:
/// observed rows move along `d1ᵢ·ψ` and every row shrinks by `1 - λμ_t/t`.
/// All rows read the same frozen `U[t-1]`.
pub fn sgd_step(
    u: &Subspace,
    datum: &PartialDatum,
    psi: &DVector<f64>,
    t: usize,
    lambda: f64,
    mu: f64,
    model: &ModelSpec,
) -> Result<Subspace> {
    if t == 0 {
        return Err(Error::domain("time index starts at 1"));
    }
    u.check_shape(model, psi.len())?;
    let mut grads = Vec::new();
    observed_score_grads(model, datum, u, psi, &mut grads)?;
    let shrink = 1.0 - lambda * mu / t as f64;
    let c = u.stack_len();
    let mut next = u.clone();
    for f in next.factors.iter_mut() {
        *f *= shrink;
    }
    for (e, &(i, _)) in datum.entries.iter().enumerate() {
        for (k, f) in next.factors.iter_mut().enumerate() {
            let g = grads[e * c + k];
            for col in 0..f.ncols() {
                f[(i, col)] += mu * g * psi[col];
            }
        }
    }
    for f in &next.factors {
        if let Some(pos) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                context: "subspace step",
                detail: format!("non-finite entry in row {} at t={t}", pos % f.nrows()),
            });
        }
    }
    Ok(next)
}

/// Gradient of `g_t` with respect to row `i` of factor `k`, for checks.
pub fn row_gradient(
    u: &Subspace,
    datum: &PartialDatum,
    psi: &DVector<f64>,
    t: usize,
    lambda: f64,
    model: &ModelSpec,
    row: usize,
    k: usize,
) -> Result<DVector<f64>> {
    let reg = lambda / t as f64;
    let mut g = u.factors[k].row(row).transpose() * reg;
    let mut scores = Vec::new();
    for &(i, y) in datum.entries.iter().filter(|(i, _)| *i == row) {
        u.scores_into(i, psi, &mut scores);
        let d = model.score_derivs(y, &scores)?;
        g -= psi * d.grad[k];
    }
    Ok(g)
}

/// Projection onto the Frobenius ball of radius `radius`.
pub fn project_ball(u: &Subspace, radius: f64) -> Result<Subspace> {
    if !(radius > 0.0) {
        return Err(Error::domain(format!("ball radius must be positive, got {radius}")));
    }
    let norm = u.frobenius();
    if norm <= radius {
        return Ok(u.clone());
    }
    let mut out = u.clone();
    let s = radius / norm;
    for f in out.factors.iter_mut() {
        *f *= s;
    }
    Ok(out)
}

/// Sum over a history of the data-term gradients `-Σ_{i∈Ω} d1ᵢ ψ` (one matrix
/// per stacked factor), reduced in fixed chunk order.
pub fn data_gradient_sum(
    model: &ModelSpec,
    data: &[&PartialDatum],
    sketches: &[&DVector<f64>],
    u: &Subspace,
) -> Result<Vec<DMatrix<f64>>> {
    if data.len() != sketches.len() {
        return Err(Error::dim(format!(
            "{} data but {} sketches",
            data.len(),
            sketches.len()
        )));
    }
    const CHUNK: usize = 256;
    let zero = || vec![DMatrix::<f64>::zeros(u.rows(), u.rank()); u.stack_len()];
    let partials: Vec<Result<Vec<DMatrix<f64>>>> = data
        .par_chunks(CHUNK)
        .zip(sketches.par_chunks(CHUNK))
        .map(|(ds, ps)| {
            let mut acc = zero();
            let mut grads = Vec::new();
            let c = u.stack_len();
            for (datum, psi) in ds.iter().zip(ps) {
                u.check_shape(model, psi.len())?;
                observed_score_grads(model, datum, u, psi, &mut grads)?;
                for (e, &(i, _)) in datum.entries.iter().enumerate() {
                    for (k, a) in acc.iter_mut().enumerate() {
                        let g = grads[e * c + k];
                        for col in 0..a.ncols() {
                            a[(i, col)] -= g * psi[col];
                        }
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = zero();
    for p in partials {
        for (t, m) in total.iter_mut().zip(p?) {
            *t += m;
        }
    }
    Ok(total)
}

/// `‖∇_U C_t(U)‖_F` for `C_t(U) = (1/t) Σ_τ g_τ(ψ_τ, U)` with the sketches
/// frozen, where `t` is the history length.
pub fn grad_norm_p3(
    model: &ModelSpec,
    data: &[&PartialDatum],
    sketches: &[&DVector<f64>],
    u: &Subspace,
    lambda: f64,
) -> Result<f64> {
    let t = data.len();
    if t == 0 {
        return Err(Error::domain("empty history"));
    }
    let sum = data_gradient_sum(model, data, sketches, u)?;
    Ok(gradient_from_sum(&sum, u, lambda, t))
}

/// Combine a data-gradient sum with the `λ/t` regularizer term.
pub fn gradient_from_sum(sum: &[DMatrix<f64>], u: &Subspace, lambda: f64, t: usize) -> f64 {
    let t = t as f64;
    sum.iter()
        .zip(&u.factors)
        .map(|(s, f)| (s / t + f * (lambda / t)).norm_squared())
        .sum::<f64>()
        .sqrt()
}

const CHECKPOINT_MAGIC: &str = "catsketch-subspace";
const CHECKPOINT_VERSION: u32 = 1;

/// Metadata carried in a checkpoint header.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub model_tag: String,
    pub t: usize,
    pub eta: Option<f64>,
}

/// Write `U` as a versioned text file:
///
/// ```text
/// catsketch-subspace 1
/// rows <D>
/// rank <d>
/// stack <C>
/// model <tag>
/// t <t>
/// eta <value|none>
/// <C·D lines of d whitespace-separated values, factor-major, row by row>
/// ```
///
/// Values use Rust's shortest round-trip formatting, so reading back is exact.
pub fn write_checkpoint(path: &Path, u: &Subspace, header: &CheckpointHeader) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
    let _ = writeln!(out, "rows {}", u.rows());
    let _ = writeln!(out, "rank {}", u.rank());
    let _ = writeln!(out, "stack {}", u.stack_len());
    let _ = writeln!(out, "model {}", header.model_tag);
    let _ = writeln!(out, "t {}", header.t);
    match header.eta {
        Some(e) => {
            let _ = writeln!(out, "eta {e:?}");
        }
        None => out.push_str("eta none\n"),
    }
    for f in &u.factors {
        for i in 0..f.nrows() {
            let row: Vec<String> = (0..f.ncols()).map(|k| format!("{:?}", f[(i, k)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(Subspace, CheckpointHeader)> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines().enumerate();
    let perr = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line: line + 1, msg };
    let mut field = |name: &str| -> Result<String> {
        let (n, line) = lines.next().ok_or_else(|| perr(0, format!("missing `{name}`")))?;
        let line = line?;
        let (key, value) = line.split_once(' ').ok_or_else(|| perr(n, format!("expected `{name} <value>`")))?;
        if key != name {
            return Err(perr(n, format!("expected `{name}`, found `{key}`")));
        }
        Ok(value.trim().to_string())
    };
    let version = field(CHECKPOINT_MAGIC)?;
    if version != CHECKPOINT_VERSION.to_string() {
        return Err(perr(0, format!("unsupported checkpoint version {version}")));
    }
    let num = |s: String, line: usize| s.parse::<usize>().map_err(|e| perr(line, e.to_string()));
    let rows = num(field("rows")?, 1)?;
    let rank = num(field("rank")?, 2)?;
    let stack = num(field("stack")?, 3)?;
    let model_tag = field("model")?;
    let t = num(field("t")?, 5)?;
    let eta = match field("eta")?.as_str() {
        "none" => None,
        s => Some(s.parse::<f64>().map_err(|e| perr(6, e.to_string()))?),
    };
    drop(field);
    let mut factors = Vec::with_capacity(stack);
    for _ in 0..stack {
        let mut m = DMatrix::zeros(rows, rank);
        for i in 0..rows {
            let (n, line) = lines.next().ok_or_else(|| perr(7, "truncated matrix body".into()))?;
            let line = line?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| perr(n, e.to_string()))?;
            if vals.len() != rank {
                return Err(perr(n, format!("expected {rank} values, found {}", vals.len())));
            }
            for (k, v) in vals.into_iter().enumerate() {
                m[(i, k)] = v;
            }
        }
        factors.push(m);
    }
    Ok((Subspace { factors }, CheckpointHeader { model_tag, t, eta }))
}
