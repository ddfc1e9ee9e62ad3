//! Canonical on-disk stream format: a `t,i,y` CSV with one record per observed
//! entry (1-based `t` and `i`), plus a JSON sidecar next to it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::movielens::csv_err;
use super::{PartialDatum, Stream};
use crate::error::{Error, Result};
use crate::models::ModelSpec;

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    dim: usize,
    len: usize,
    entries: usize,
    levels: Option<usize>,
    model_tag: Option<String>,
    model: Option<ModelSpec>,
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    t: usize,
    i: usize,
    y: f64,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_stream(csv_path: &Path, stream: &Stream) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| csv_err(csv_path, e))?;
    for d in &stream.data {
        for &(i, y) in &d.entries {
            w.serialize(Record { t: d.t, i: i + 1, y }).map_err(|e| csv_err(csv_path, e))?;
        }
    }
    w.flush()?;
    let meta = Sidecar {
        dim: stream.dim,
        len: stream.len(),
        entries: stream.total_entries(),
        levels: stream.model.as_ref().and_then(|m| m.labels()).map(|l| l.len()),
        model_tag: stream.model.as_ref().map(|m| m.tag().to_string()),
        model: stream.model.clone(),
        seed: stream.seed,
    };
    std::fs::write(sidecar_path(csv_path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn read_stream(csv_path: &Path) -> Result<Stream> {
    let meta: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(csv_path))?)?;
    let mut data: Vec<PartialDatum> = (1..=meta.len).map(|t| PartialDatum::new(t, Vec::new())).collect();
    let mut reader = csv::Reader::from_path(csv_path).map_err(|e| csv_err(csv_path, e))?;
    let mut count = 0;
    for rec in reader.deserialize::<Record>() {
        let rec = rec.map_err(|e| csv_err(csv_path, e))?;
        if rec.t == 0 || rec.t > meta.len || rec.i == 0 || rec.i > meta.dim {
            return Err(Error::Parse {
                path: csv_path.to_path_buf(),
                line: count + 2,
                msg: format!("record ({}, {}) outside {}x{}", rec.t, rec.i, meta.len, meta.dim),
            });
        }
        data[rec.t - 1].entries.push((rec.i - 1, rec.y));
        count += 1;
    }
    if count != meta.entries {
        return Err(Error::Parse {
            path: csv_path.to_path_buf(),
            line: count + 1,
            msg: format!("sidecar announces {} entries, file holds {count}", meta.entries),
        });
    }
    let stream = Stream { dim: meta.dim, data, model: meta.model, seed: meta.seed };
    stream.validate()?;
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};
    use proptest::prelude::*;

    #[test]
    fn synthetic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let (s, _) = gen_synthetic(&SyntheticSpec { len: 40, p: 0.5, ..Default::default() }).unwrap();
        write_stream(&path, &s).unwrap();
        assert_eq!(read_stream(&path).unwrap(), s);
        let head = std::fs::read_to_string(&path).unwrap();
        assert!(head.starts_with("t,i,y\n"));
    }

    proptest! {
        #[test]
        fn arbitrary_round_trip(
            dim in 1usize..6,
            rows in proptest::collection::vec(proptest::collection::vec((0usize..6, -1e6f64..1e6), 0..6), 0..8),
        ) {
            let data = rows.into_iter().enumerate().map(|(t, es)| {
                let mut seen = std::collections::BTreeMap::new();
                for (i, y) in es { seen.insert(i % dim, y); }
                PartialDatum::new(t + 1, seen.into_iter().collect())
            }).collect();
            let s = Stream::new(dim, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.csv");
            write_stream(&path, &s).unwrap();
            prop_assert_eq!(read_stream(&path).unwrap(), s);
        }
    }
}
