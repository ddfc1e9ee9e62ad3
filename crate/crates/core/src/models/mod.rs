//! Categorical observation models and their per-entry log-likelihoods.
//!
//! Every model is written as a function of the bilinear score `x = uᵢᵀψ`
//! (a vector of `J-1` scores for the multiclass Logit). Derivatives are taken
//! with respect to the score; gradients in `ψ` and `uᵢ` follow by the chain
//! rule in the `sketch` and `subspace` modules.

pub mod tail;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use tail::{log_norm_pdf, log_q, mills_ratio, stable_log_tail_diff};

/// A `J`-level quantizer with bins `(η_j, η_{j+1}]`, `η_0 = -∞`, `η_J = +∞`.
///
/// Only the `J-1` interior cut points are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawQuantizer", into = "RawQuantizer")]
pub struct QuantizerSpec {
    levels: Vec<f64>,
    cuts: Vec<f64>,
    sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct RawQuantizer {
    levels: Vec<f64>,
    cuts: Vec<f64>,
    sigma: f64,
}

impl TryFrom<RawQuantizer> for QuantizerSpec {
    type Error = Error;
    fn try_from(raw: RawQuantizer) -> Result<Self> {
        QuantizerSpec::new(raw.levels, raw.cuts, raw.sigma)
    }
}

impl From<QuantizerSpec> for RawQuantizer {
    fn from(q: QuantizerSpec) -> Self {
        RawQuantizer { levels: q.levels, cuts: q.cuts, sigma: q.sigma }
    }
}

impl QuantizerSpec {
    pub fn new(levels: Vec<f64>, cuts: Vec<f64>, sigma: f64) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::domain("a quantizer needs at least two levels"));
        }
        if cuts.len() + 1 != levels.len() {
            return Err(Error::domain(format!(
                "{} levels need {} interior thresholds, got {}",
                levels.len(),
                levels.len() - 1,
                cuts.len()
            )));
        }
        if cuts.iter().any(|c| !c.is_finite()) || cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("interior thresholds must be finite and strictly increasing"));
        }
        if levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::domain("levels must be finite"));
        }
        for (i, a) in levels.iter().enumerate() {
            if levels[..i].contains(a) {
                return Err(Error::domain(format!("duplicate level {a}")));
            }
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { levels, cuts, sigma })
    }

    /// Binary sign quantizer: labels `{-1, +1}` split at `eta`.
    pub fn binary(eta: f64, sigma: f64) -> Result<Self> {
        Self::new(vec![-1.0, 1.0], vec![eta], sigma)
    }

    /// The uniform grid `((-J+1+2j)/(J-1))·x_max`, `j = 0..J`.
    pub fn uniform_grid(levels: usize, x_max: f64) -> Vec<f64> {
        assert!(levels >= 2, "uniform grid needs at least two levels");
        let denom = (levels - 1) as f64;
        (0..levels)
            .map(|j| (2.0 * j as f64 + 1.0 - levels as f64) / denom * x_max)
            .collect()
    }

    /// Uniform quantizer whose reconstruction points are the uniform grid over
    /// `[-x_max, x_max]`; cut points sit halfway between neighbouring grid points.
    pub fn uniform(levels: Vec<f64>, x_max: f64, sigma: f64) -> Result<Self> {
        if !(x_max > 0.0) {
            return Err(Error::domain(format!("x_max must be positive, got {x_max}")));
        }
        let grid = Self::uniform_grid(levels.len(), x_max);
        let cuts = grid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Self::new(levels, cuts, sigma)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// All `J+1` thresholds including the infinite sentinels.
    pub fn thresholds(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.cuts.len() + 2);
        t.push(f64::NEG_INFINITY);
        t.extend_from_slice(&self.cuts);
        t.push(f64::INFINITY);
        t
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn label_index(&self, y: f64) -> Result<usize> {
        self.levels
            .iter()
            .position(|&l| l == y)
            .ok_or_else(|| Error::domain(format!("{y} is not a level of this quantizer")))
    }

    /// Index of the bin `(η_j, η_{j+1}]` containing `x`.
    pub fn bin_of(&self, x: f64) -> usize {
        self.cuts.partition_point(|&c| c < x)
    }

    /// Span of the finite thresholds, `max - min` (zero for a binary quantizer).
    pub fn finite_span(&self) -> f64 {
        match (self.cuts.first(), self.cuts.last()) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0.0,
        }
    }

    /// `(δ₁, δ₂) = (Δ/σ², (Δ²/σ² + 1)/σ²)` with `Δ` the finite span.
    pub fn smoothness_constants(&self) -> (f64, f64) {
        let s2 = self.sigma * self.sigma;
        let span = self.finite_span();
        (span / s2, (span * span / s2 + 1.0) / s2)
    }

    /// Replace the single cut of a binary quantizer.
    pub fn set_binary_threshold(&mut self, eta: f64) -> Result<()> {
        if self.cuts.len() != 1 || !eta.is_finite() {
            return Err(Error::domain("threshold update needs a binary quantizer and a finite value"));
        }
        self.cuts[0] = eta;
        Ok(())
    }
}

/// Observation model for the categorical entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Probit(QuantizerSpec),
    /// Values are clipped to `[lower, upper]`.
    TobitI { lower: f64, upper: f64, sigma: f64 },
    /// Values inside `(lower, upper)` collapse onto `interior`.
    TobitII { lower: f64, upper: f64, interior: f64, sigma: f64 },
    /// Labels in `{0, 1}`.
    LogitBinary,
    /// Labels in `{0, …, classes-1}`; class 0 is the reference with score 0.
    LogitMulti { classes: usize },
}

/// Log-likelihood of one entry and its first two derivatives in the score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryDerivs {
    pub loglik: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Vector-score counterpart of [`EntryDerivs`]; `hess` is row-major `c×c`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreDerivs {
    pub loglik: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelSpec::Probit(_) | ModelSpec::LogitBinary => Ok(()),
            ModelSpec::TobitI { lower, upper, sigma } => {
                check_sigma(sigma)?;
                if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
                    return Err(Error::domain("Tobit needs finite lower < upper"));
                }
                Ok(())
            }
            ModelSpec::TobitII { lower, upper, interior, sigma } => {
                check_sigma(sigma)?;
                if !(lower < interior && interior < upper) || !lower.is_finite() || !upper.is_finite()
                {
                    return Err(Error::domain("Tobit-II needs lower < interior < upper"));
                }
                Ok(())
            }
            ModelSpec::LogitMulti { classes } => {
                if classes < 2 {
                    return Err(Error::domain("multiclass Logit needs at least two classes"));
                }
                Ok(())
            }
        }
    }

    /// Number of scores per entry (number of stacked factor matrices).
    pub fn score_dim(&self) -> usize {
        match self {
            ModelSpec::LogitMulti { classes } => classes - 1,
            _ => 1,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ModelSpec::Probit(_) => "probit",
            ModelSpec::TobitI { .. } => "tobit-i",
            ModelSpec::TobitII { .. } => "tobit-ii",
            ModelSpec::LogitBinary => "logit-binary",
            ModelSpec::LogitMulti { .. } => "logit-multi",
        }
    }

    /// Labels of a discrete-outcome model, `None` for Tobit variants.
    pub fn labels(&self) -> Option<Vec<f64>> {
        match self {
            ModelSpec::Probit(q) => Some(q.levels().to_vec()),
            ModelSpec::LogitBinary => Some(vec![0.0, 1.0]),
            ModelSpec::LogitMulti { classes } => Some((0..*classes).map(|c| c as f64).collect()),
            _ => None,
        }
    }

    pub fn quantizer(&self) -> Option<&QuantizerSpec> {
        match self {
            ModelSpec::Probit(q) => Some(q),
            _ => None,
        }
    }

    pub fn quantizer_mut(&mut self) -> Option<&mut QuantizerSpec> {
        match self {
            ModelSpec::Probit(q) => Some(q),
            _ => None,
        }
    }

    /// The noiseless data-generating map applied to the score(s).
    ///
    /// Probit returns the label of the bin holding `x`; Tobit-I clips; Tobit-II
    /// collapses the interior; binary Logit returns the success probability;
    /// multiclass Logit returns the most probable label.
    pub fn forward_map(&self, scores: &[f64]) -> f64 {
        let x = scores[0];
        match self {
            ModelSpec::Probit(q) => q.levels[q.bin_of(x)],
            ModelSpec::TobitI { lower, upper, .. } => x.clamp(*lower, *upper),
            ModelSpec::TobitII { lower, upper, interior, .. } => {
                if x > *lower && x < *upper {
                    *interior
                } else {
                    x
                }
            }
            ModelSpec::LogitBinary => logistic(x),
            ModelSpec::LogitMulti { .. } => {
                let mut best = (0usize, 0.0f64);
                for (k, &s) in scores.iter().enumerate() {
                    if s > best.1 {
                        best = (k + 1, s);
                    }
                }
                best.0 as f64
            }
        }
    }

    /// `log ℓ(y; x)` for the scalar-score models.
    pub fn entry_log_lik(&self, y: f64, x: f64) -> Result<f64> {
        Ok(self.entry_derivs(y, x)?.loglik)
    }

    /// `log ℓ(y; x)` with its first and second derivative in `x`.
    pub fn entry_derivs(&self, y: f64, x: f64) -> Result<EntryDerivs> {
        match self {
            ModelSpec::Probit(q) => {
                let j = q.label_index(y)?;
                let lo = if j == 0 { f64::NEG_INFINITY } else { q.cuts[j - 1] };
                let hi = if j == q.cuts.len() { f64::INFINITY } else { q.cuts[j] };
                interval_derivs((lo - x) / q.sigma, (hi - x) / q.sigma, q.sigma)
            }
            &ModelSpec::TobitI { lower, upper, sigma } => {
                if y > lower && y < upper {
                    Ok(gaussian_derivs(y, x, sigma))
                } else if y == upper {
                    interval_derivs((upper - x) / sigma, f64::INFINITY, sigma)
                } else if y == lower {
                    interval_derivs(f64::NEG_INFINITY, (lower - x) / sigma, sigma)
                } else {
                    Err(Error::domain(format!("{y} lies outside the Tobit-I range [{lower}, {upper}]")))
                }
            }
            &ModelSpec::TobitII { lower, upper, interior, sigma } => {
                if y == interior {
                    interval_derivs((lower - x) / sigma, (upper - x) / sigma, sigma)
                } else if y >= upper || y <= lower {
                    Ok(gaussian_derivs(y, x, sigma))
                } else {
                    Err(Error::domain(format!(
                        "{y} is inside ({lower}, {upper}) but is not the censored value {interior}"
                    )))
                }
            }
            ModelSpec::LogitBinary => {
                let s = binary_sign(y)?;
                let loglik = -softplus(-s * x);
                let d1 = s * logistic(-s * x);
                let p = logistic(x);
                Ok(EntryDerivs { loglik, d1, d2: -p * (1.0 - p) })
            }
            ModelSpec::LogitMulti { .. } => Err(Error::domain(
                "the multiclass Logit takes a score vector; use score_derivs",
            )),
        }
    }

    /// Log-likelihood and score derivatives for any model. Scalar models fill
    /// one-element buffers.
    pub fn score_derivs_into(&self, y: f64, scores: &[f64], out: &mut ScoreDerivs) -> Result<()> {
        let c = self.score_dim();
        if scores.len() != c {
            return Err(Error::dim(format!("expected {c} scores, got {}", scores.len())));
        }
        out.grad.clear();
        out.hess.clear();
        match self {
            ModelSpec::LogitMulti { classes } => {
                let label = multi_label(y, *classes)?;
                let m = scores.iter().fold(0.0f64, |m, &s| m.max(s));
                let total = (-m).exp() + scores.iter().map(|&s| (s - m).exp()).sum::<f64>();
                let lse = m + total.ln();
                let own = if label == 0 { 0.0 } else { scores[label - 1] };
                out.loglik = own - lse;
                let probs: Vec<f64> = scores.iter().map(|&s| (s - lse).exp()).collect();
                for k in 0..c {
                    let ind = if label == k + 1 { 1.0 } else { 0.0 };
                    out.grad.push(ind - probs[k]);
                }
                for k in 0..c {
                    for l in 0..c {
                        let diag = if k == l { probs[k] } else { 0.0 };
                        out.hess.push(probs[k] * probs[l] - diag);
                    }
                }
            }
            _ => {
                let d = self.entry_derivs(y, scores[0])?;
                out.loglik = d.loglik;
                out.grad.push(d.d1);
                out.hess.push(d.d2);
            }
        }
        Ok(())
    }

    pub fn score_derivs(&self, y: f64, scores: &[f64]) -> Result<ScoreDerivs> {
        let mut out = ScoreDerivs::default();
        self.score_derivs_into(y, scores, &mut out)?;
        Ok(out)
    }

    /// Log-likelihood for any model given the score vector.
    pub fn score_log_lik(&self, y: f64, scores: &[f64]) -> Result<f64> {
        match self {
            ModelSpec::LogitMulti { classes } => {
                if scores.len() != classes - 1 {
                    return Err(Error::dim(format!(
                        "expected {} scores, got {}",
                        classes - 1,
                        scores.len()
                    )));
                }
                let label = multi_label(y, *classes)?;
                let m = scores.iter().fold(0.0f64, |m, &s| m.max(s));
                let total = (-m).exp() + scores.iter().map(|&s| (s - m).exp()).sum::<f64>();
                let own = if label == 0 { 0.0 } else { scores[label - 1] };
                Ok(own - m - total.ln())
            }
            _ => self.entry_log_lik(y, scores[0]),
        }
    }

    /// Check that `y` is a value this model can emit.
    pub fn check_label(&self, y: f64) -> Result<()> {
        let zeros = vec![0.0; self.score_dim()];
        self.score_log_lik(y, &zeros).map(|_| ())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("sigma must be positive, got {sigma}")))
    }
}

fn binary_sign(y: f64) -> Result<f64> {
    if y == 1.0 {
        Ok(1.0)
    } else if y == 0.0 {
        Ok(-1.0)
    } else {
        Err(Error::domain(format!("binary Logit labels are 0 or 1, got {y}")))
    }
}

fn multi_label(y: f64, classes: usize) -> Result<usize> {
    if y >= 0.0 && y.fract() == 0.0 && (y as usize) < classes {
        Ok(y as usize)
    } else {
        Err(Error::domain(format!("label {y} outside 0..{classes}")))
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Uncensored branch: `log φ((y - x)/σ)`.
fn gaussian_derivs(y: f64, x: f64, sigma: f64) -> EntryDerivs {
    let r = (y - x) / sigma;
    EntryDerivs { loglik: log_norm_pdf(r), d1: r / sigma, d2: -1.0 / (sigma * sigma) }
}

/// `log(Q(a) - Q(b))` where `a = (lo - x)/σ`, `b = (hi - x)/σ`, with
/// derivatives in `x`: `d1 = f/(σw)`, `d2 = (θ/w - f²/w²)/σ²`.
fn interval_derivs(a: f64, b: f64, sigma: f64) -> Result<EntryDerivs> {
    let s2 = sigma * sigma;
    match (a.is_finite(), b.is_finite()) {
        (false, false) => Ok(EntryDerivs { loglik: 0.0, d1: 0.0, d2: 0.0 }),
        (true, false) => {
            let m = mills_ratio(a);
            Ok(EntryDerivs { loglik: log_q(a), d1: m / sigma, d2: -m * (m - a) / s2 })
        }
        (false, true) => {
            let m = mills_ratio(-b);
            Ok(EntryDerivs { loglik: log_q(-b), d1: -m / sigma, d2: -m * (m + b) / s2 })
        }
        (true, true) => {
            let loglik = stable_log_tail_diff(a, b)?;
            let pa = (log_norm_pdf(a) - loglik).exp();
            let pb = (log_norm_pdf(b) - loglik).exp();
            let ratio = pa - pb;
            let theta = a * pa - b * pb;
            Ok(EntryDerivs { loglik, d1: ratio / sigma, d2: (theta - ratio * ratio) / s2 })
        }
    }
}
