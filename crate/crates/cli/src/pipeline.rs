//! Data preparation, training and evaluation shared by the subcommands.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use catsketch::data::{gen_binary_sign, gen_synthetic, load_chess, load_movielens, read_stream, split_holdout, GroundTruth};
use catsketch::eval::{empirical_cost, ls_classify, regret_from_trace, rmse, RegretReport, Rmse};
use catsketch::online::{resketch, resketch_exact};
use catsketch::sketch::impute;
use catsketch::{run_online, ModelSpec, PartialDatum, RunTrace, StepSchedule, Stream, Subspace};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, RunConfig};

/// A data set as loaded, before any hold-out split.
pub struct Loaded {
    pub stream: Stream,
    pub truth: Option<GroundTruth>,
    /// Per-datum class in `{-1, +1}` where known.
    pub classes: Option<Vec<i8>>,
}

pub fn load(cfg: &RunConfig) -> Result<Loaded> {
    let class_of = |t: &GroundTruth| t.classes.iter().map(|&c| if c == 1 { 1 } else { -1 }).collect();
    Ok(match &cfg.data {
        DataSource::Synthetic(spec) => {
            let (stream, truth) = gen_synthetic(spec)?;
            let classes = Some(class_of(&truth));
            Loaded { stream, truth: Some(truth), classes }
        }
        DataSource::Binary(spec) => {
            let (stream, truth) = gen_binary_sign(spec)?;
            let classes = Some(class_of(&truth));
            Loaded { stream, truth: Some(truth), classes }
        }
        DataSource::File { path } => {
            Loaded { stream: read_stream(path).with_context(|| format!("reading {}", path.display()))?, truth: None, classes: None }
        }
        DataSource::Movielens { path } => Loaded { stream: load_movielens(path)?, truth: None, classes: None },
        DataSource::Chess { path } => {
            let c = load_chess(path)?;
            Loaded { stream: c.stream, truth: None, classes: Some(c.labels) }
        }
    })
}

/// The training stream and, if configured, the held-out entries.
pub struct Prepared {
    pub model: ModelSpec,
    pub train: Stream,
    pub held: Option<Stream>,
    pub truth: Option<GroundTruth>,
    pub classes: Option<Vec<i8>>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let loaded = load(cfg)?;
    let model = cfg.learning_model(loaded.stream.model.as_ref())?;
    let (train, held) = match cfg.eval.holdout_keep {
        Some(keep) => {
            let (k, h) = split_holdout(&loaded.stream, keep, cfg.eval.split_seed)?;
            (k, Some(h))
        }
        None => (loaded.stream, None),
    };
    Ok(Prepared { model, train, held, truth: loaded.truth, classes: loaded.classes })
}

/// Step-by-step record of an online run: which datum was processed and its sketch.
#[derive(Debug, Clone)]
pub struct Steps {
    pub datum: Vec<usize>,
    pub psi: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub solve_secs: f64,
    pub update_secs: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub model: String,
    pub rank: usize,
    pub data: usize,
    pub entries: usize,
    /// `C_T(U)` over the training stream with every datum re-sketched.
    pub final_cost: f64,
    pub rmse: Option<Rmse>,
    pub classification_error: Option<f64>,
    pub eta: Option<f64>,
    pub regret: Option<RegretReport>,
    pub smoothness_violations: Option<usize>,
    pub fallbacks: Option<usize>,
    pub timing: Option<Timing>,
}

pub struct Trained {
    pub model: ModelSpec,
    pub u: Subspace,
    pub steps: Steps,
    pub trace: RunTrace,
    pub metrics: Metrics,
}

pub fn train(cfg: &RunConfig, prep: &Prepared) -> Result<Trained> {
    let clock = Instant::now();
    let run = run_online(&prep.model, &prep.train, &cfg.train).context("online run failed")?;
    let wall_secs = clock.elapsed().as_secs_f64();
    let steps = Steps {
        datum: run.steps.iter().map(|s| s.datum).collect(),
        psi: run.steps.iter().map(|s| s.psi.clone()).collect(),
    };
    let mut metrics = evaluate(cfg, prep, &run.model, &run.subspace, Some((&steps, &run.trace)))?;
    metrics.smoothness_violations = cfg.train.check_smoothness.then_some(run.smoothness_violations);
    metrics.fallbacks = Some(run.fallbacks);
    metrics.timing = Some(Timing {
        solve_secs: run.trace.total_solve_secs(),
        update_secs: run.trace.total_update_secs(),
        wall_secs,
    });
    Ok(Trained { model: run.model, u: run.subspace, steps, trace: run.trace, metrics })
}

fn sketch_all(cfg: &RunConfig, model: &ModelSpec, stream: &Stream, u: &Subspace) -> Result<Vec<DVector<f64>>> {
    Ok(if cfg.train.lambda > 0.0 {
        resketch_exact(model, stream, u, cfg.train.lambda)?
    } else {
        resketch(model, stream, u, &cfg.train.inner_config())?
    })
}

/// Metrics of a subspace on the prepared data. `history` adds the regret report.
pub fn evaluate(
    cfg: &RunConfig,
    prep: &Prepared,
    model: &ModelSpec,
    u: &Subspace,
    history: Option<(&Steps, &RunTrace)>,
) -> Result<Metrics> {
    let lambda = cfg.train.lambda;
    let sketches = sketch_all(cfg, model, &prep.train, u)?;
    let data: Vec<&PartialDatum> = prep.train.data.iter().collect();
    let refs: Vec<&DVector<f64>> = sketches.iter().collect();
    let final_cost = empirical_cost(model, &data, &refs, u, lambda)?;

    let rmse = imputation_error(prep, model, u, &sketches)?;
    let classification_error = match &prep.classes {
        Some(classes) if prep.train.len() >= 4 => {
            let n = ((prep.train.len() as f64) * cfg.eval.train_fraction).round() as usize;
            let n = n.clamp(1, prep.train.len() - 1);
            match ls_classify(&sketches[..n], &classes[..n], &sketches[n..], &classes[n..], cfg.eval.ridge) {
                Ok((_, err)) => Some(err),
                Err(catsketch::Error::Domain(_)) => None,
                Err(e) => return Err(e.into()),
            }
        }
        _ => None,
    };

    let regret = match history {
        Some((steps, trace)) if cfg.eval.regret && !steps.datum.is_empty() => {
            let d: Vec<&PartialDatum> = steps.datum.iter().map(|&k| &prep.train.data[k]).collect();
            let p: Vec<&DVector<f64>> = steps.psi.iter().collect();
            let mu = match cfg.train.step {
                StepSchedule::Constant { mu } => Some(mu),
                StepSchedule::InverseTime { .. } => None,
            };
            Some(regret_from_trace(model, &d, &p, trace, u, lambda, mu)?)
        }
        _ => None,
    };

    Ok(Metrics {
        model: model.tag().to_string(),
        rank: u.rank(),
        data: prep.train.len(),
        entries: prep.train.total_entries(),
        final_cost,
        rmse,
        classification_error,
        eta: model.quantizer().filter(|q| q.num_levels() == 2).map(|q| q.cuts()[0]),
        regret,
        smoothness_violations: None,
        fallbacks: None,
        timing: None,
    })
}

/// RMSE on held-out entries if a split was made, else on the entries the
/// generator masked (when ground truth is known).
fn imputation_error(prep: &Prepared, model: &ModelSpec, u: &Subspace, sketches: &[DVector<f64>]) -> Result<Option<Rmse>> {
    let mut pairs = Vec::with_capacity(prep.train.len());
    if let Some(held) = &prep.held {
        for ((d, h), psi) in prep.train.data.iter().zip(&held.data).zip(sketches) {
            let full = impute(model, d, u, psi);
            pairs.push(h.entries.iter().map(|&(i, y)| (full[i], y)).collect());
        }
    } else if let Some(truth) = &prep.truth {
        for (d, psi) in prep.train.data.iter().zip(sketches) {
            let observed = d.dense(prep.train.dim);
            let full = impute(model, d, u, psi);
            pairs.push(
                (0..prep.train.dim)
                    .filter(|&i| observed[i].is_none())
                    .map(|i| (full[i], truth.label(i, d.t)))
                    .collect::<Vec<_>>(),
            );
        }
    } else {
        return Ok(None);
    }
    if pairs.iter().all(|p: &Vec<(f64, f64)>| p.is_empty()) {
        return Ok(None);
    }
    Ok(Some(rmse(&pairs)?))
}

pub fn write_steps(path: &Path, steps: &Steps, rank: usize) -> Result<()> {
    let mut out = String::from("t,datum");
    for k in 1..=rank {
        write!(out, ",psi_{k}")?;
    }
    out.push('\n');
    for (n, (d, psi)) in steps.datum.iter().zip(&steps.psi).enumerate() {
        write!(out, "{},{}", n + 1, d + 1)?;
        for v in psi.iter() {
            write!(out, ",{v}")?;
        }
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_steps(path: &Path) -> Result<Steps> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty sketch file")?;
    let rank = header.split(',').count().saturating_sub(2);
    let mut steps = Steps { datum: Vec::new(), psi: Vec::new() };
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != rank + 2 {
            bail!("{}:{}: expected {} fields", path.display(), n + 2, rank + 2);
        }
        let datum: usize = fields[1].parse().with_context(|| format!("{}:{}", path.display(), n + 2))?;
        if datum == 0 {
            bail!("{}:{}: datum index starts at 1", path.display(), n + 2);
        }
        let psi = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}:{}", path.display(), n + 2))?;
        steps.datum.push(datum - 1);
        steps.psi.push(DVector::from_vec(psi));
    }
    Ok(steps)
}
