use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Judgments;
use crate::datapipe::read_jsonl;
use crate::error::{Error, Result};

/// Query id → judged documents.
pub type Qrels = BTreeMap<String, Judgments>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledText {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StsPair {
    pub s1: String,
    pub s2: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledPair {
    pub s1: String,
    pub s2: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankRecord {
    pub query: String,
    pub positive: Vec<String>,
    #[serde(default)]
    pub negative: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryRecord {
    pub summary: String,
    pub references: Vec<String>,
    pub score: f64,
}

/// Reads a JSON Lines file of any record type.
pub fn load_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

/// `{"id", "text"}` records with unique ids.
pub fn load_texts(path: &Path) -> Result<Vec<TextRecord>> {
    let rows: Vec<(usize, TextRecord)> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for (line, r) in &rows {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: *line,
                msg: format!("duplicate id {}", r.id),
            });
        }
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// Parses `query_id<TAB>doc_id<TAB>relevance` lines. A first line whose
/// relevance column is not an integer is taken as a header.
pub fn parse_qrels(text: &str, path: &Path) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(err(format!(
                "expected 3 tab-separated columns, found {}",
                cols.len()
            )));
        }
        let rel = match cols[2].trim().parse::<u32>() {
            Ok(r) => r,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(err(format!("bad relevance {:?}: {e}", cols[2]))),
        };
        qrels
            .entry(cols[0].to_string())
            .or_default()
            .insert(cols[1].to_string(), rel);
    }
    Ok(qrels)
}

pub fn load_qrels(path: &Path) -> Result<Qrels> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(&text, path)
}

pub fn qrels_to_string(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (q, docs) in qrels {
        for (d, r) in docs {
            writeln!(out, "{q}\t{d}\t{r}").expect("string write");
        }
    }
    out
}

/// Ids with one vector each, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::Input(format!(
                "{} ids for {} vectors",
                ids.len(),
                vectors.len()
            )));
        }
        let mut seen = HashSet::new();
        for (id, v) in ids.iter().zip(&vectors) {
            if id.is_empty() || id.contains(['\t', '\n', '\r']) {
                return Err(Error::Input(format!(
                    "id {id:?} is empty or holds tabs/newlines"
                )));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Input(format!("duplicate id {id}")));
            }
            if v.len() != dim {
                return Err(Error::Input(format!(
                    "vector for {id} has {} values, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Input(format!("vector for {id} is not finite")));
            }
        }
        Ok(Self { dim, ids, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Header `N d`, then `id<TAB>v1 v2 ...` per row using shortest
    /// round-trip float formatting.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            out.push_str(id);
            out.push('\t');
            for (j, x) in v.iter().enumerate() {
                if j > 0 {
                    out.push(' ');
                }
                write!(out, "{x}").expect("string write");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| err(1, "missing header".into()))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(1, format!("bad header: {e}")))?;
        let [n, dim] = nums[..] else {
            return Err(err(1, "header must be `N d`".into()));
        };
        let mut ids = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| err(i + 2, "missing tab after id".into()))?;
            let v: Vec<f64> = rest
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(i + 2, format!("bad float: {e}")))?;
            ids.push(id.to_string());
            vectors.push(v);
        }
        if ids.len() != n {
            return Err(err(
                1,
                format!("header promises {n} rows, found {}", ids.len()),
            ));
        }
        Self::new(dim, ids, vectors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}
