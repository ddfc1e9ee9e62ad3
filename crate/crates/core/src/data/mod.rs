//! Streams of partially observed categorical vectors.
//!
//! Row indices are 0-based in memory and 1-based in every file format.

mod chess;
mod io;
mod movielens;
mod synthetic;

pub use chess::{load_chess, ChessData, CHESS_ATTRIBUTES, CHESS_DROPPED};
pub use io::{read_stream, sidecar_path, write_stream};
pub use movielens::load_movielens;
pub(crate) use movielens::csv_err;
pub use synthetic::{gen_binary_sign, gen_synthetic, BinarySpec, GroundTruth, SyntheticSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelSpec;

/// The observed entries `{(i, y_i)}` of one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialDatum {
    /// 1-based position in the stream.
    pub t: usize,
    pub entries: Vec<(usize, f64)>,
}

impl PartialDatum {
    pub fn new(t: usize, entries: Vec<(usize, f64)>) -> Self {
        Self { t, entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Dense `D`-vector with `None` for missing rows.
    pub fn dense(&self, dim: usize) -> Vec<Option<f64>> {
        let mut out = vec![None; dim];
        for &(i, y) in &self.entries {
            out[i] = Some(y);
        }
        out
    }

    pub(crate) fn validate(&self, dim: usize) -> Result<()> {
        let mut seen = vec![false; dim];
        for &(i, y) in &self.entries {
            if i >= dim {
                return Err(Error::dim(format!("t={}: row {} outside 1..={dim}", self.t, i + 1)));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::domain(format!("t={}: row {} observed twice", self.t, i + 1)));
            }
            if !y.is_finite() {
                return Err(Error::domain(format!("t={}: non-finite value at row {}", self.t, i + 1)));
            }
        }
        Ok(())
    }
}

/// A finite stream of partial data over `dim` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stream {
    pub dim: usize,
    pub data: Vec<PartialDatum>,
    /// Model the labels were drawn from, when known.
    pub model: Option<ModelSpec>,
    pub seed: Option<u64>,
}

impl Stream {
    pub fn new(dim: usize, data: Vec<PartialDatum>) -> Result<Self> {
        let s = Self { dim, data, model: None, seed: None };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, d) in self.data.iter().enumerate() {
            if d.t != k + 1 {
                return Err(Error::domain(format!("datum {k} carries t={}", d.t)));
            }
            d.validate(self.dim)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn total_entries(&self) -> usize {
        self.data.iter().map(PartialDatum::len).sum()
    }
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("observation probability must lie in (0, 1], got {p}")))
    }
}

/// Keep each entry independently with probability `p`. Returns the kept
/// stream and the removed entries as a stream of the same length.
pub fn split_holdout(stream: &Stream, p: f64, seed: u64) -> Result<(Stream, Stream)> {
    check_probability(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::with_capacity(stream.len());
    let mut held = Vec::with_capacity(stream.len());
    for d in &stream.data {
        let (mut k, mut h) = (Vec::new(), Vec::new());
        for &e in &d.entries {
            // Always draw, so the mask pattern does not depend on p's branch.
            let u: f64 = rng.random();
            if u < p {
                k.push(e);
            } else {
                h.push(e);
            }
        }
        kept.push(PartialDatum::new(d.t, k));
        held.push(PartialDatum::new(d.t, h));
    }
    let wrap = |data| Stream { dim: stream.dim, data, model: stream.model.clone(), seed: stream.seed };
    Ok((wrap(kept), wrap(held)))
}

/// Keep each observed entry independently with probability `p`.
pub fn mask_random(stream: &Stream, p: f64, seed: u64) -> Result<Stream> {
    Ok(split_holdout(stream, p, seed)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_stream(dim: usize, len: usize) -> Stream {
        let data = (0..len)
            .map(|t| PartialDatum::new(t + 1, (0..dim).map(|i| (i, (i % 3) as f64)).collect()))
            .collect();
        Stream::new(dim, data).unwrap()
    }

    #[test]
    fn mask_identity_at_one() {
        let s = full_stream(7, 20);
        assert_eq!(mask_random(&s, 1.0, 3).unwrap(), s);
    }

    #[test]
    fn mask_binomial_band() {
        let s = full_stream(100, 1000);
        let kept = mask_random(&s, 0.5, 1).unwrap().total_entries();
        assert!((49_500..=50_500).contains(&kept), "{kept}");
        assert_eq!(mask_random(&s, 0.5, 1).unwrap(), mask_random(&s, 0.5, 1).unwrap());
    }

    #[test]
    fn holdout_partitions_entries() {
        let s = full_stream(10, 50);
        let (train, test) = split_holdout(&s, 0.8, 5).unwrap();
        assert_eq!(train.total_entries() + test.total_entries(), s.total_entries());
        for ((a, b), c) in train.data.iter().zip(&test.data).zip(&s.data) {
            let mut merged: Vec<_> = a.entries.iter().chain(&b.entries).copied().collect();
            merged.sort_by_key(|e| e.0);
            assert_eq!(merged, c.entries);
        }
    }

    #[test]
    fn rejects_bad_probability_and_duplicates() {
        let s = full_stream(3, 2);
        assert!(mask_random(&s, 0.0, 1).is_err());
        assert!(mask_random(&s, 1.5, 1).is_err());
        assert!(Stream::new(3, vec![PartialDatum::new(1, vec![(0, 1.0), (0, 2.0)])]).is_err());
        assert!(Stream::new(3, vec![PartialDatum::new(1, vec![(3, 1.0)])]).is_err());
    }
}
