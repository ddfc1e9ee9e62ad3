//! Shared fixtures for the benchmarks.

use catsketch::data::{gen_synthetic, SyntheticSpec};
use catsketch::models::{ModelSpec, QuantizerSpec};
use catsketch::subspace::init_subspace;
use catsketch::{Stream, Subspace};

/// Noise level used to learn the five-level synthetic streams.
pub const LEARN_SIGMA: f64 = 4.0;

pub struct Fixture {
    pub model: ModelSpec,
    pub stream: Stream,
    pub u: Subspace,
}

/// A fully observed five-level stream of `len` data in dimension `dim`, with
/// a random rank-`rank` starting subspace.
pub fn fixture(dim: usize, rank: usize, len: usize) -> Fixture {
    let spec = SyntheticSpec { dim, rank: rank.min(dim), len, ..Default::default() };
    let (stream, _) = gen_synthetic(&spec).expect("valid synthetic spec");
    let q = stream.model.as_ref().and_then(|m| m.quantizer()).expect("probit stream");
    let model = ModelSpec::Probit(
        QuantizerSpec::new(q.levels().to_vec(), q.cuts().to_vec(), LEARN_SIGMA).expect("valid quantizer"),
    );
    let u = init_subspace(dim, rank, 1).expect("valid shape");
    Fixture { model, stream, u }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shapes() {
        let f = fixture(30, 4, 10);
        assert_eq!(f.stream.len(), 10);
        assert_eq!((f.u.rows(), f.u.rank()), (30, 4));
        assert_eq!(f.stream.data[0].len(), 30);
    }
}
