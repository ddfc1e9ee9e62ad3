use std::path::Path;

use super::movielens::csv_err;
use super::{PartialDatum, Stream};
use crate::error::{Error, Result};
use crate::models::{ModelSpec, QuantizerSpec};

/// Attribute names of the UCI king-rook-vs-king-pawn set, in file order.
pub const CHESS_ATTRIBUTES: [&str; 36] = [
    "bkblk", "bknwy", "bkon8", "bkona", "bkspr", "bkxbq", "bkxcr", "bkxwp", "blxwp", "bxqsq",
    "cntxt", "dsopp", "dwipd", "hdchk", "katri", "mulch", "qxmsq", "r2ar8", "reskd", "reskr",
    "rimmx", "rkxwp", "rxmsq", "simpl", "skach", "skewr", "skrxp", "spcop", "stlmt", "thrsk",
    "wkcti", "wkna8", "wknck", "wkovl", "wkpos", "wtoeg",
];

/// The one three-valued attribute (`b`/`n`/`w`); it is dropped.
pub const CHESS_DROPPED: &str = "katri";

/// `(token for -1, token for +1)` of each kept attribute.
fn token_pair(name: &str) -> (&'static str, &'static str) {
    match name {
        "dwipd" => ("g", "l"),
        "wtoeg" => ("n", "t"),
        _ => ("f", "t"),
    }
}

/// Encoded scenarios and their outcome (`+1` won, `-1` nowin).
#[derive(Debug, Clone, PartialEq)]
pub struct ChessData {
    pub stream: Stream,
    pub labels: Vec<i8>,
}

/// Load `kr-vs-kp.data`: 36 comma-separated attribute tokens and a class.
///
/// The 35 binary attributes map to `{-1, +1}` (`f`/`t`, `dwipd` `g`/`l`,
/// `wtoeg` `n`/`t`); `katri` is dropped. Every entry is observed.
pub fn load_chess(path: &Path) -> Result<ChessData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let perr = |msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
        if rec.len() != 37 {
            return Err(perr(format!("expected 37 fields, found {}", rec.len())));
        }
        let mut entries = Vec::with_capacity(35);
        for (name, tok) in CHESS_ATTRIBUTES.iter().zip(rec.iter()) {
            if *name == CHESS_DROPPED {
                if !matches!(tok, "b" | "n" | "w") {
                    return Err(perr(format!("unknown token `{tok}` for {name}")));
                }
                continue;
            }
            let (neg, pos) = token_pair(name);
            let y = match tok {
                t if t == neg => -1.0,
                t if t == pos => 1.0,
                _ => return Err(perr(format!("unknown token `{tok}` for {name}"))),
            };
            entries.push((entries.len(), y));
        }
        labels.push(match &rec[36] {
            "won" => 1,
            "nowin" => -1,
            other => return Err(perr(format!("unknown class `{other}`"))),
        });
        data.push(PartialDatum::new(data.len() + 1, entries));
    }
    let model = ModelSpec::Probit(QuantizerSpec::binary(0.0, 1.0)?);
    Ok(ChessData { stream: Stream { dim: 35, data, model: Some(model), seed: None }, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const ROW_WON: &str = "f,f,f,f,f,f,f,f,f,f,f,f,l,f,n,f,f,f,f,f,f,f,f,t,f,f,f,f,f,f,f,f,t,t,t,n,won";
    const ROW_NOWIN: &str = "t,t,f,f,f,t,f,f,f,f,f,f,g,t,w,f,f,f,f,f,f,f,f,f,f,f,f,t,f,f,t,f,f,t,t,t,nowin";

    fn fixture(rows: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for r in rows {
            writeln!(f, "{r}").unwrap();
        }
        f
    }

    #[test]
    fn attribute_table_is_consistent() {
        assert_eq!(CHESS_ATTRIBUTES.iter().filter(|&&a| a == CHESS_DROPPED).count(), 1);
        assert_eq!(CHESS_ATTRIBUTES.iter().position(|&a| a == CHESS_DROPPED), Some(14));
    }

    #[test]
    fn encodes_rows() {
        let f = fixture(&[ROW_WON, ROW_NOWIN]);
        let c = load_chess(f.path()).unwrap();
        assert_eq!(c.labels, vec![1, -1]);
        assert_eq!(c.stream.dim, 35);
        for d in &c.stream.data {
            assert_eq!(d.len(), 35);
            assert!(d.entries.iter().all(|&(_, y)| y == 1.0 || y == -1.0));
        }
        let first = &c.stream.data[0].entries;
        // dwipd=l -> +1 at index 12; katri skipped so mulch lands at 14.
        assert_eq!(first[12].1, 1.0);
        assert_eq!(first[34].1, -1.0);
        assert_eq!(first[22].1, 1.0);
        c.stream.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_tokens() {
        let bad = ROW_WON.replacen("f", "x", 1);
        let f = fixture(&[ROW_WON, &bad]);
        assert!(matches!(load_chess(f.path()), Err(Error::Parse { line: 2, .. })));
        let bad = ROW_WON.replace(",l,", ",t,");
        assert!(load_chess(fixture(&[&bad]).path()).is_err());
        let bad = ROW_WON.replace("won", "draw");
        assert!(load_chess(fixture(&[&bad]).path()).is_err());
    }
}
