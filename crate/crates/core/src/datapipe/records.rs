use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Pair,
    Triple,
}

/// `(query, positive document)` pair used for contrastive pre-training.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairRecord {
    pub query: String,
    pub doc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

/// Query with a positive and zero or more hard negatives.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripleRecord {
    pub query: String,
    pub pos: String,
    #[serde(default)]
    pub negs: Vec<String>,
}

impl PairRecord {
    pub fn new(query: impl Into<String>, doc: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            doc: doc.into(),
            id: None,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.query.trim().is_empty() {
            return Err("field `query` is empty".into());
        }
        if self.doc.trim().is_empty() {
            return Err("field `doc` is empty".into());
        }
        Ok(())
    }
}

impl TripleRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.query.trim().is_empty() {
            return Err("field `query` is empty".into());
        }
        if self.pos.trim().is_empty() {
            return Err("field `pos` is empty".into());
        }
        Ok(())
    }
}

/// Records of one source, all of the same kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Records {
    Pairs(Vec<PairRecord>),
    Triples(Vec<TripleRecord>),
}

impl Records {
    pub fn kind(&self) -> SourceKind {
        match self {
            Records::Pairs(_) => SourceKind::Pair,
            Records::Triples(_) => SourceKind::Triple,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Records::Pairs(v) => v.len(),
            Records::Triples(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Records {
        match self {
            Records::Pairs(v) => Records::Pairs(indices.iter().map(|&i| v[i].clone()).collect()),
            Records::Triples(v) => {
                Records::Triples(indices.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }

    /// Every text in the source, de-duplicated, in first-occurrence order.
    pub fn texts(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut push = |s: &String| {
            if seen.insert(s.clone()) {
                out.push(s.clone());
            }
        };
        match self {
            Records::Pairs(v) => v.iter().for_each(|r| {
                push(&r.query);
                push(&r.doc);
            }),
            Records::Triples(v) => v.iter().for_each(|r| {
                push(&r.query);
                push(&r.pos);
                r.negs.iter().for_each(&mut push);
            }),
        }
        out
    }
}

/// Reads a JSON Lines file into `(line number, value)` pairs. Blank lines
/// are skipped; the first malformed line aborts with its 1-based number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

fn checked<T>(
    path: &Path,
    rows: Vec<(usize, T)>,
    validate: impl Fn(&T) -> std::result::Result<(), String>,
) -> Result<Vec<T>> {
    rows.into_iter()
        .map(|(line, r)| {
            validate(&r).map_err(|msg| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            })?;
            Ok(r)
        })
        .collect()
}

/// Reads a JSON Lines file of pairs or triples, rejecting empty texts.
pub fn load_source(path: &Path, kind: SourceKind) -> Result<Records> {
    Ok(match kind {
        SourceKind::Pair => Records::Pairs(checked(path, read_jsonl(path)?, PairRecord::validate)?),
        SourceKind::Triple => {
            Records::Triples(checked(path, read_jsonl(path)?, TripleRecord::validate)?)
        }
    })
}

/// Writes any serialisable records as JSON Lines.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Keeps the first occurrence of each `(query, doc)` pair, comparing
/// whitespace-trimmed text byte for byte. Order is preserved.
pub fn dedup_exact(records: Vec<PairRecord>) -> Vec<PairRecord> {
    let mut seen = HashSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert((r.query.trim().to_string(), r.doc.trim().to_string())))
        .collect()
}

/// Triple counterpart of [`dedup_exact`], keyed on `(query, pos)`.
pub fn dedup_exact_triples(records: Vec<TripleRecord>) -> Vec<TripleRecord> {
    let mut seen = HashSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert((r.query.trim().to_string(), r.pos.trim().to_string())))
        .collect()
}

pub fn dedup_records(records: Records) -> Records {
    match records {
        Records::Pairs(v) => Records::Pairs(dedup_exact(v)),
        Records::Triples(v) => Records::Triples(dedup_exact_triples(v)),
    }
}
