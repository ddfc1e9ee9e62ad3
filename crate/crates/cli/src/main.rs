mod config;
mod pipeline;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use catsketch::data::{read_stream, write_stream, GroundTruth};
use catsketch::sketch::{impute, solve_sketch};
use catsketch::subspace::{read_checkpoint, write_checkpoint, CheckpointHeader};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use config::{DataSource, RunConfig};
use pipeline::{evaluate, prepare, read_steps, train, write_steps};

/// Online sketching of streaming categorical data.
#[derive(Parser)]
#[command(name = "catsketch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.rank=4` (repeatable).
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides `out_dir`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Seed for data generation and the run (overrides both).
    #[arg(long)]
    seed: Option<u64>,
    /// Bound the number of worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic stream, its sidecar and the ground truth.
    Generate(Common),
    /// Run the online learner and write checkpoint, sketches, trace and metrics.
    Train(Common),
    /// Score a saved subspace; adds the regret report when the run's
    /// `sketches.csv` and `trace.csv` sit next to the checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Metrics file (default `<out>/evaluation.json`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Sketch every datum of a stream file and fill in its missing entries.
    Impute {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Stream in `t,i,y` format with its JSON sidecar.
        #[arg(long)]
        input: PathBuf,
        /// Predictions file (default `<out>/imputed.csv`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train and evaluate over a grid of observation rates and ranks.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.3, 0.5, 0.7])]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [8])]
        rank: Vec<usize>,
    },
}

fn setup(common: &Common) -> Result<RunConfig> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.set)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        match &mut cfg.data {
            DataSource::Synthetic(s) => s.seed = seed,
            DataSource::Binary(s) => s.seed = seed,
            _ => {}
        }
    }
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    cfg.write(&cfg.out_dir.join("config.toml"))?;
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_truth(dir: &Path, truth: &GroundTruth) -> Result<()> {
    let mut u = String::new();
    for r in 0..truth.u.nrows() {
        let row: Vec<String> = truth.u.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(u, "{}", row.join(","))?;
    }
    std::fs::write(dir.join("truth_u.csv"), u)?;

    let mut s = String::from("t,class");
    for k in 1..=truth.psi.nrows() {
        write!(s, ",psi_{k}")?;
    }
    s.push('\n');
    for t in 0..truth.psi.ncols() {
        write!(s, "{},{}", t + 1, truth.classes[t])?;
        for v in truth.psi.column(t).iter() {
            write!(s, ",{v}")?;
        }
        s.push('\n');
    }
    std::fs::write(dir.join("truth_sketches.csv"), s)?;

    let mut l = String::from("t,i,y\n");
    for t in 0..truth.labels.ncols() {
        for i in 0..truth.labels.nrows() {
            writeln!(l, "{},{},{}", t + 1, i + 1, truth.labels[(i, t)])?;
        }
    }
    std::fs::write(dir.join("truth_labels.csv"), l)?;
    Ok(())
}

fn cmd_generate(common: &Common) -> Result<()> {
    let cfg = setup(common)?;
    if !matches!(cfg.data, DataSource::Synthetic(_) | DataSource::Binary(_)) {
        bail!("generate needs a synthetic or binary data source");
    }
    let loaded = pipeline::load(&cfg)?;
    write_stream(&cfg.out_dir.join("stream.csv"), &loaded.stream)?;
    write_truth(&cfg.out_dir, loaded.truth.as_ref().expect("generated data carry ground truth"))?;
    eprintln!(
        "wrote {} data, {} entries to {}",
        loaded.stream.len(),
        loaded.stream.total_entries(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn cmd_train(common: &Common) -> Result<()> {
    let cfg = setup(common)?;
    let prep = prepare(&cfg)?;
    let run = train(&cfg, &prep)?;
    let dir = &cfg.out_dir;
    let header = CheckpointHeader {
        model_tag: run.model.tag().to_string(),
        t: run.trace.len(),
        eta: run.metrics.eta,
    };
    write_checkpoint(&dir.join("subspace.txt"), &run.u, &header)?;
    write_steps(&dir.join("sketches.csv"), &run.steps, run.u.rank())?;
    run.trace.write_csv(&dir.join("trace.csv"), false)?;
    run.trace.write_csv(&dir.join("timing.csv"), true)?;
    write_json(&dir.join("metrics.json"), &run.metrics)?;
    eprintln!("trained on {} steps; outputs in {}", run.trace.len(), dir.display());
    Ok(())
}

fn load_model(cfg: &RunConfig, data_model: Option<&catsketch::ModelSpec>, header: &CheckpointHeader) -> Result<catsketch::ModelSpec> {
    let mut model = cfg.learning_model(data_model)?;
    if model.tag() != header.model_tag {
        bail!("checkpoint was trained with {}, configuration gives {}", header.model_tag, model.tag());
    }
    if let Some(eta) = header.eta {
        match model.quantizer_mut() {
            Some(q) if q.num_levels() == 2 => q.set_binary_threshold(eta)?,
            _ => bail!("checkpoint carries a threshold but the model is not binary Probit"),
        }
    }
    Ok(model)
}

fn cmd_evaluate(common: &Common, checkpoint: &Path, output: Option<&Path>) -> Result<()> {
    let cfg = setup(common)?;
    let prep = prepare(&cfg)?;
    let (u, header) = read_checkpoint(checkpoint)?;
    let model = load_model(&cfg, Some(&prep.model), &header)?;
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let (steps_path, trace_path) = (dir.join("sketches.csv"), dir.join("trace.csv"));
    let history = if steps_path.exists() && trace_path.exists() {
        let steps = read_steps(&steps_path)?;
        let trace = catsketch::RunTrace::read_csv(&trace_path)?;
        if steps.datum.iter().any(|&d| d >= prep.train.len()) {
            bail!("{} refers to data beyond the configured stream", steps_path.display());
        }
        Some((steps, trace))
    } else {
        None
    };
    let metrics = evaluate(&cfg, &prep, &model, &u, history.as_ref().map(|(s, t)| (s, t)))?;
    let out = output.map_or_else(|| cfg.out_dir.join("evaluation.json"), Path::to_path_buf);
    write_json(&out, &metrics)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn cmd_impute(common: &Common, checkpoint: &Path, input: &Path, output: Option<&Path>) -> Result<()> {
    let cfg = setup(common)?;
    let stream = read_stream(input).with_context(|| format!("reading {}", input.display()))?;
    let (u, header) = read_checkpoint(checkpoint)?;
    if u.rows() != stream.dim {
        bail!("checkpoint has {} rows, stream has dimension {}", u.rows(), stream.dim);
    }
    let model = load_model(&cfg, stream.model.as_ref(), &header)?;
    let inner = cfg.train.inner_config();
    let zero = DVector::zeros(u.rank());
    let mut out = String::from("t,i,y,observed\n");
    for d in &stream.data {
        let psi = solve_sketch(&model, d, &u, &inner, &zero)?.psi;
        let observed = d.dense(stream.dim);
        for (i, y) in impute(&model, d, &u, &psi).iter().enumerate() {
            writeln!(out, "{},{},{},{}", d.t, i + 1, y, u8::from(observed[i].is_some()))?;
        }
    }
    let path = output.map_or_else(|| cfg.out_dir.join("imputed.csv"), Path::to_path_buf);
    std::fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_sweep(common: &Common, ps: &[f64], ranks: &[usize]) -> Result<()> {
    let base = setup(common)?;
    let mut out = String::from(
        "p,rank,data,entries,final_cost,classification_error,rmse_per_datum,rmse_per_entry,solve_secs,update_secs,wall_secs\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for &p in ps {
        for &rank in ranks {
            let mut cfg = base.clone();
            match &mut cfg.data {
                DataSource::Synthetic(s) => s.p = p,
                DataSource::Binary(s) => s.p = p,
                _ => bail!("sweep needs a synthetic or binary data source"),
            }
            cfg.train.rank = rank;
            cfg.validate()?;
            let prep = prepare(&cfg)?;
            let m = train(&cfg, &prep)?.metrics;
            let timing = m.timing.as_ref().expect("training records timing");
            writeln!(
                out,
                "{p},{rank},{},{},{},{},{},{},{},{},{}",
                m.data,
                m.entries,
                m.final_cost,
                opt(m.classification_error),
                opt(m.rmse.map(|r| r.per_datum)),
                opt(m.rmse.map(|r| r.per_entry)),
                timing.solve_secs,
                timing.update_secs,
                timing.wall_secs
            )?;
            eprintln!("p={p} rank={rank}: error {}", opt(m.classification_error));
        }
    }
    let path = base.out_dir.join("sweep.csv");
    std::fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(c) => cmd_generate(c),
        Command::Train(c) => cmd_train(c),
        Command::Evaluate { common, checkpoint, output } => cmd_evaluate(common, checkpoint, output.as_deref()),
        Command::Impute { common, checkpoint, input, output } => {
            cmd_impute(common, checkpoint, input, output.as_deref())
        }
        Command::Sweep { common, p, rank } => cmd_sweep(common, p, rank),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
