use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_probability, PartialDatum, Stream};
use crate::error::{Error, Result};
use crate::models::{ModelSpec, QuantizerSpec};

/// Two-class Gaussian-mixture sketches pushed through a random subspace and a
/// uniform `J`-level quantizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub len: usize,
    pub rank: usize,
    pub levels: usize,
    pub p: f64,
    /// Standard deviation of the additive noise before quantization.
    pub sigma: f64,
    /// Per-coordinate mean of the sketch for class 0 and class 1.
    pub class_means: [f64; 2],
    pub class_var: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 25,
            len: 5000,
            rank: 8,
            levels: 5,
            p: 1.0,
            sigma: 0.1,
            class_means: [-1.0, 1.0],
            class_var: 0.04,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.rank > self.dim {
            return Err(Error::Config(format!("need 1 <= rank <= dim, got {} and {}", self.rank, self.dim)));
        }
        if self.levels < 2 {
            return Err(Error::Config("need at least two levels".into()));
        }
        if !(self.sigma >= 0.0) || !(self.class_var >= 0.0) {
            return Err(Error::Config("noise and class variances must be non-negative".into()));
        }
        check_probability(self.p)
    }
}

/// Sign data `y = sign(uᵢᵀψ + v - η)` with `ψ` centred at `±mean·(1,…,1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinarySpec {
    pub dim: usize,
    pub len: usize,
    pub rank: usize,
    pub p: f64,
    pub sigma: f64,
    pub eta: f64,
    pub class_mean: f64,
    pub class_var: f64,
    pub seed: u64,
}

impl Default for BinarySpec {
    fn default() -> Self {
        Self {
            dim: 25,
            len: 5000,
            rank: 2,
            p: 1.0,
            sigma: 0.1,
            eta: 0.0,
            class_mean: 1.0,
            class_var: 0.04,
            seed: 0,
        }
    }
}

/// Everything the generator drew, for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Class (0 or 1) of each time step.
    pub classes: Vec<u8>,
    pub u: DMatrix<f64>,
    /// `d×T`, one sketch per column.
    pub psi: DMatrix<f64>,
    /// Noiseless `X = UΨ`.
    pub x: DMatrix<f64>,
    /// Labels of every entry before masking.
    pub labels: DMatrix<f64>,
}

impl GroundTruth {
    pub fn label(&self, row: usize, t: usize) -> f64 {
        self.labels[(row, t - 1)]
    }
}

// Independent generator streams so that changing `p` keeps the same
// underlying data and only changes the mask.
fn substream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

fn draw_latent(
    dim: usize,
    len: usize,
    rank: usize,
    means: [f64; 2],
    var: f64,
    seed: u64,
) -> (Vec<u8>, DMatrix<f64>, DMatrix<f64>) {
    let mut rng_u = substream(seed, 0);
    let u = DMatrix::from_fn(dim, rank, |_, _| StandardNormal.sample(&mut rng_u));
    let mut rng_psi = substream(seed, 1);
    let sd = var.sqrt();
    let mut classes = Vec::with_capacity(len);
    let mut psi = DMatrix::zeros(rank, len);
    for t in 0..len {
        let c = u8::from(rng_psi.random::<bool>());
        classes.push(c);
        for k in 0..rank {
            let z: f64 = StandardNormal.sample(&mut rng_psi);
            psi[(k, t)] = means[c as usize] + sd * z;
        }
    }
    (classes, u, psi)
}

fn observe(
    labels: &DMatrix<f64>,
    p: f64,
    seed: u64,
) -> Vec<PartialDatum> {
    let mut rng = substream(seed, 3);
    (0..labels.ncols())
        .map(|t| {
            let entries = (0..labels.nrows())
                .filter_map(|i| {
                    let keep = rng.random::<f64>() < p;
                    keep.then(|| (i, labels[(i, t)]))
                })
                .collect();
            PartialDatum::new(t + 1, entries)
        })
        .collect()
}

fn noise(sigma: f64, seed: u64) -> impl FnMut() -> f64 {
    let mut rng = substream(seed, 2);
    let dist = Normal::new(0.0, sigma).expect("sigma validated non-negative");
    move || dist.sample(&mut rng)
}

/// Multilevel Probit stream with labels `1..=J`. The quantizer's reconstruction
/// grid spans the largest absolute entry of the realized noiseless `X`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Stream, GroundTruth)> {
    spec.validate()?;
    let (classes, u, psi) =
        draw_latent(spec.dim, spec.len, spec.rank, spec.class_means, spec.class_var, spec.seed);
    let x = &u * &psi;
    let x_max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let levels: Vec<f64> = (1..=spec.levels).map(|j| j as f64).collect();
    let q = QuantizerSpec::uniform(levels, x_max, spec.sigma.max(f64::MIN_POSITIVE))?;
    let mut v = noise(spec.sigma, spec.seed);
    let labels = x.map(|xv| q.levels()[q.bin_of(xv + v())]);
    let data = observe(&labels, spec.p, spec.seed);
    let stream = Stream { dim: spec.dim, data, model: Some(ModelSpec::Probit(q)), seed: Some(spec.seed) };
    Ok((stream, GroundTruth { classes, u, psi, x, labels }))
}

/// Binary sign stream with labels `±1`; a score exactly at the threshold maps
/// to `-1` (bins are closed on the right).
pub fn gen_binary_sign(spec: &BinarySpec) -> Result<(Stream, GroundTruth)> {
    if spec.rank == 0 || spec.rank > spec.dim {
        return Err(Error::Config(format!("need 1 <= rank <= dim, got {} and {}", spec.rank, spec.dim)));
    }
    if !(spec.sigma >= 0.0) || !(spec.class_var >= 0.0) || !spec.eta.is_finite() {
        return Err(Error::Config("invalid noise, variance or threshold".into()));
    }
    check_probability(spec.p)?;
    let means = [spec.class_mean, -spec.class_mean];
    let (classes, u, psi) = draw_latent(spec.dim, spec.len, spec.rank, means, spec.class_var, spec.seed);
    let x = &u * &psi;
    let mut v = noise(spec.sigma, spec.seed);
    let labels = x.map(|xv| if xv + v() > spec.eta { 1.0 } else { -1.0 });
    let data = observe(&labels, spec.p, spec.seed);
    let q = QuantizerSpec::binary(spec.eta, spec.sigma.max(f64::MIN_POSITIVE))?;
    let stream = Stream { dim: spec.dim, data, model: Some(ModelSpec::Probit(q)), seed: Some(spec.seed) };
    Ok((stream, GroundTruth { classes, u, psi, x, labels }))
}
