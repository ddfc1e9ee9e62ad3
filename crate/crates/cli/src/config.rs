use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use catsketch::data::{BinarySpec, SyntheticSpec};
use catsketch::{ModelSpec, OnlineConfig, QuantizerSpec};
use serde::{Deserialize, Serialize};

/// Everything a run needs. Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Learning model; defaults to the model stored with the data.
    pub model: Option<ModelSpec>,
    /// Noise level used for learning in place of the data model's own.
    pub learn_sigma: Option<f64>,
    pub data: DataSource,
    pub train: OnlineConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            model: None,
            learn_sigma: None,
            data: DataSource::Synthetic(SyntheticSpec::default()),
            train: OnlineConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Binary(BinarySpec),
    /// A stream in the canonical `t,i,y` format with its JSON sidecar.
    File { path: PathBuf },
    /// MovieLens `u.data`.
    Movielens { path: PathBuf },
    /// UCI `kr-vs-kp.data`.
    Chess { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Keep this fraction of the observed entries for training and score the
    /// rest; unset means no split.
    pub holdout_keep: Option<f64>,
    pub split_seed: u64,
    /// Leading fraction of the data used to fit the classifier.
    pub train_fraction: f64,
    pub ridge: f64,
    pub regret: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { holdout_keep: None, split_seed: 0, train_fraction: 0.5, ridge: 1e-6, regret: true }
    }
}

impl RunConfig {
    /// Read `path` (or start from defaults) and apply `key.path=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                text.parse::<toml::Table>().with_context(|| format!("parsing {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        fill_tags(&mut table);
        let cfg: RunConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataSource::Synthetic(s) => s.validate()?,
            DataSource::Binary(_) => {}
            DataSource::File { path } | DataSource::Movielens { path } | DataSource::Chess { path } => {
                if !path.exists() {
                    bail!("data file {} does not exist", path.display());
                }
            }
        }
        if let Some(m) = &self.model {
            m.validate()?;
        }
        if let Some(s) = self.learn_sigma {
            if !(s > 0.0 && s.is_finite()) {
                bail!("learn_sigma must be positive, got {s}");
            }
        }
        if let Some(k) = self.eval.holdout_keep {
            if !(0.0..=1.0).contains(&k) {
                bail!("holdout_keep must lie in [0, 1], got {k}");
            }
        }
        if !(self.eval.train_fraction > 0.0 && self.eval.train_fraction < 1.0) {
            bail!("train_fraction must lie in (0, 1), got {}", self.eval.train_fraction);
        }
        if !(self.eval.ridge >= 0.0) {
            bail!("ridge must be non-negative");
        }
        self.train.step.validate()?;
        Ok(())
    }

    /// The learning model for data carrying `data_model`.
    pub fn learning_model(&self, data_model: Option<&ModelSpec>) -> Result<ModelSpec> {
        let Some(mut model) = self.model.clone().or_else(|| data_model.cloned()) else {
            bail!("the data carry no model; set [model] in the configuration");
        };
        if let Some(s) = self.learn_sigma {
            model = with_sigma(model, s)?;
        }
        model.validate()?;
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).context("serializing configuration")?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

fn with_sigma(model: ModelSpec, s: f64) -> Result<ModelSpec> {
    Ok(match model {
        ModelSpec::Probit(q) => ModelSpec::Probit(QuantizerSpec::new(q.levels().to_vec(), q.cuts().to_vec(), s)?),
        ModelSpec::TobitI { lower, upper, .. } => ModelSpec::TobitI { lower, upper, sigma: s },
        ModelSpec::TobitII { lower, upper, interior, .. } => ModelSpec::TobitII { lower, upper, interior, sigma: s },
        other => bail!("model {} has no noise level", other.tag()),
    })
}

/// Let partial tables omit their variant tag: `[data]` defaults to the
/// synthetic source and a step table is told apart by its key.
fn fill_tags(table: &mut toml::Table) {
    if let Some(toml::Value::Table(data)) = table.get_mut("data") {
        data.entry("source").or_insert_with(|| "synthetic".into());
    }
    let Some(toml::Value::Table(train)) = table.get_mut("train") else { return };
    tag_step(train.get_mut("step"));
    if let Some(toml::Value::Table(th)) = train.get_mut("threshold") {
        tag_step(th.get_mut("gamma"));
    }
}

fn tag_step(step: Option<&mut toml::Value>) {
    if let Some(toml::Value::Table(s)) = step {
        if !s.contains_key("kind") {
            let kind = if s.contains_key("c") { "inverse-time" } else { "constant" };
            s.insert("kind".into(), kind.into());
        }
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let Some((key, raw)) = item.split_once('=') else {
        bail!("override `{item}` is not of the form key=value");
    };
    // Bare words that are not valid TOML (paths, names) are taken as strings.
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for p in path {
        let entry = node.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override `{key}`: `{p}` is not a table"),
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = RunConfig::load(
            None,
            &["train.rank=3".into(), "data.p=0.5".into(), "out_dir=runs/a".into(), "train.step.mu=0.02".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.rank, 3);
        assert_eq!(cfg.out_dir, PathBuf::from("runs/a"));
        let DataSource::Synthetic(s) = &cfg.data else { panic!() };
        assert_eq!(s.p, 0.5);
        assert_eq!(cfg.train.step, catsketch::StepSchedule::Constant { mu: 0.02 });
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::load(None, &["train.rank".into()]).is_err());
        assert!(RunConfig::load(None, &["nonsense=1".into()]).is_err());
        assert!(RunConfig::load(None, &["eval.train_fraction=1.5".into()]).is_err());
        assert!(RunConfig::load(None, &["data.source=\"file\"".into(), "data.path=\"/no/such\"".into()]).is_err());
    }
}
