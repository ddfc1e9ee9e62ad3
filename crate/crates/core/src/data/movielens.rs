use std::path::Path;

use super::{PartialDatum, Stream};
use crate::error::{Error, Result};
use crate::models::{ModelSpec, QuantizerSpec};

/// Load a MovieLens `u.data` file (`user\titem\trating\ttimestamp`).
///
/// Each movie becomes one datum whose entries are the users who rated it, in
/// item-id order; `dim` is the largest user id. The attached model is a
/// five-level Probit quantizer over the integer ratings with unit noise and
/// cuts at the half-integers.
pub fn load_movielens(path: &Path) -> Result<Stream> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut triples = Vec::new();
    let (mut users, mut items) = (0usize, 0usize);
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let perr = |msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
        if rec.len() != 4 {
            return Err(perr(format!("expected 4 tab-separated fields, found {}", rec.len())));
        }
        let id = |k: usize, what: &str| -> Result<usize> {
            let v: usize = rec[k].trim().parse().map_err(|_| perr(format!("bad {what} `{}`", &rec[k])))?;
            if v == 0 {
                return Err(perr(format!("{what} ids start at 1")));
            }
            Ok(v)
        };
        let user = id(0, "user")?;
        let item = id(1, "item")?;
        let rating: f64 = rec[2].trim().parse().map_err(|_| perr(format!("bad rating `{}`", &rec[2])))?;
        if !(1..=5).any(|r| r as f64 == rating) {
            return Err(Error::domain(format!("line {line}: rating {rating} outside 1..=5")));
        }
        users = users.max(user);
        items = items.max(item);
        triples.push((item - 1, user - 1, rating));
    }
    triples.sort_by_key(|&(item, user, _)| (item, user));
    if let Some(w) = triples.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
        return Err(Error::domain(format!("user {} rated item {} twice", w[0].1 + 1, w[0].0 + 1)));
    }
    let mut data: Vec<PartialDatum> = (1..=items).map(|t| PartialDatum::new(t, Vec::new())).collect();
    for (item, user, rating) in triples {
        data[item].entries.push((user, rating));
    }
    let q = QuantizerSpec::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![1.5, 2.5, 3.5, 4.5], 1.0)?;
    Ok(Stream { dim: users, data, model: Some(ModelSpec::Probit(q)), seed: None })
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse { path: path.to_path_buf(), line, msg: format!("{kind:?}") },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn fixture(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_layout() {
        let f = fixture("196\t242\t3\t881250949\n186\t302\t3\t891717742\n22\t377\t1\t878887116\n196\t302\t5\t881250949\n");
        let s = load_movielens(f.path()).unwrap();
        assert_eq!(s.dim, 196);
        assert_eq!(s.len(), 377);
        assert_eq!(s.total_entries(), 4);
        assert_eq!(s.data[301].entries, vec![(185, 3.0), (195, 5.0)]);
        assert!(s.data[0].is_empty());
        s.validate().unwrap();
    }

    #[test]
    fn reports_line_of_malformed_record() {
        let f = fixture("1\t1\t3\t0\n2\tx\t3\t0\n");
        match load_movielens(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let f = fixture("1\t1\t3\t0\n2\t2\t3\n");
        assert!(matches!(load_movielens(f.path()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn rejects_out_of_range_rating() {
        let f = fixture("1\t1\t6\t0\n");
        assert!(matches!(load_movielens(f.path()), Err(Error::Domain(_))));
        let f = fixture("1\t1\t2.5\t0\n");
        assert!(matches!(load_movielens(f.path()), Err(Error::Domain(_))));
    }
}
