use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::records::{dedup_records, load_source, Records, SourceKind};
use crate::error::{Error, Result};

/// Declaration of one data source in a run configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    pub path: PathBuf,
    pub kind: SourceKind,
    #[serde(default)]
    pub task_family: String,
}

#[derive(Debug, Clone)]
pub struct Source {
    pub spec: SourceSpec,
    pub records: Records,
    /// Candidate pool for random negatives (triple sources only).
    pub corpus: Vec<String>,
}

impl Source {
    pub fn new(spec: SourceSpec, records: Records) -> Result<Self> {
        if records.kind() != spec.kind {
            return Err(Error::Input(format!(
                "source {} declared as {:?} but holds {:?} records",
                spec.name,
                spec.kind,
                records.kind()
            )));
        }
        let records = dedup_records(records);
        if records.is_empty() {
            return Err(Error::Input(format!("source {} has no records", spec.name)));
        }
        let corpus = match &records {
            Records::Triples(_) => records.texts(),
            Records::Pairs(_) => Vec::new(),
        };
        Ok(Self {
            spec,
            records,
            corpus,
        })
    }

    pub fn size(&self) -> usize {
        self.records.len()
    }
}

/// Loaded, de-duplicated sources; sizes are post-dedup record counts.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    sources: Vec<Source>,
}

impl Registry {
    pub fn from_sources(sources: Vec<Source>) -> Result<Self> {
        let mut names = HashSet::new();
        for s in &sources {
            if !names.insert(s.spec.name.as_str()) {
                return Err(Error::Input(format!(
                    "duplicate source name {}",
                    s.spec.name
                )));
            }
        }
        Ok(Self { sources })
    }

    /// Loads every spec, resolving relative paths against `base_dir`.
    pub fn load(specs: &[SourceSpec], base_dir: Option<&Path>) -> Result<Self> {
        let sources = specs
            .iter()
            .map(|spec| {
                let path = match base_dir {
                    Some(base) if spec.path.is_relative() => base.join(&spec.path),
                    _ => spec.path.clone(),
                };
                let records = load_source(&path, spec.kind)?;
                Source::new(spec.clone(), records)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_sources(sources)
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sources.iter().map(Source::size).collect()
    }

    pub fn source(&self, i: usize) -> &Source {
        &self.sources[i]
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    /// Keeps only sources of `kind`.
    pub fn filter_kind(&self, kind: SourceKind) -> Registry {
        Registry {
            sources: self
                .sources
                .iter()
                .filter(|s| s.spec.kind == kind)
                .cloned()
                .collect(),
        }
    }

    pub fn total_records(&self) -> usize {
        self.sizes().iter().sum()
    }
}
