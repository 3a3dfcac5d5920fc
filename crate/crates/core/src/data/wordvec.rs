use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed word → vector table. Lookups of unknown words yield zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WordVectors {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn new(dim: usize, vectors: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if let Some((w, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Dataset(format!(
                "word vector for `{w}` has dimension {}, expected {dim}",
                v.len()
            )));
        }
        Ok(Self { dim, vectors })
    }

    /// Dimension; 0 for an empty table.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// The vector for `word`, or zeros when it is missing.
    pub fn lookup(&self, word: &str) -> Vec<f64> {
        self.get(word)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.dim])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(w, v)| (w.as_str(), v.as_slice()))
    }

    /// Parses `word f1 f2 ...` lines. Blank lines are skipped.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut dim = None;
        let mut vectors = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values = parts
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    detail: e.to_string(),
                })?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    detail: "non-finite value".into(),
                });
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: n + 1,
                        detail: format!("expected {d} values, found {}", values.len()),
                    })
                }
                _ => {}
            }
            vectors.insert(word.to_string(), values);
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            vectors,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, v) in &self.vectors {
            out.push_str(w);
            for x in v {
                write!(out, " {x}").expect("string write");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<WordVectors> {
        WordVectors::parse(s, Path::new("mem"))
    }

    #[test]
    fn singleton_and_empty() {
        let wv = parse("red 1 2 3\n").unwrap();
        assert_eq!(wv.len(), 1);
        assert_eq!(wv.dim(), 3);
        assert_eq!(wv.lookup("red"), vec![1.0, 2.0, 3.0]);
        assert_eq!(wv.lookup("blue"), vec![0.0; 3]);

        let empty = parse("").unwrap();
        assert!(empty.is_empty());
        assert!(empty.lookup("anything").is_empty());
    }

    #[test]
    fn inconsistent_dimension_is_rejected() {
        let err = parse("a 1 2\nb 1 2 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn averaging_a_pair_yields_the_midpoint() {
        let wv = parse("a 1 -2 4\nb 3 2 0\n").unwrap();
        let (a, b) = (wv.lookup("a"), wv.lookup("b"));
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
        assert_eq!(mid, vec![2.0, 0.0, 2.0]);
    }

    #[test]
    fn text_round_trip() {
        let wv = parse("a 0.1 -2e-3\nb 3 1e10\n").unwrap();
        assert_eq!(parse(&wv.to_text()).unwrap(), wv);
    }
}
