use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Retrieval,
    Classification,
    Clustering,
    Reranking,
    PairClassification,
    Sts,
    Summarization,
    ZeroShot,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::Retrieval,
        TaskKind::Classification,
        TaskKind::Clustering,
        TaskKind::Reranking,
        TaskKind::PairClassification,
        TaskKind::Sts,
        TaskKind::Summarization,
        TaskKind::ZeroShot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Retrieval => "retrieval",
            TaskKind::Classification => "classification",
            TaskKind::Clustering => "clustering",
            TaskKind::Reranking => "reranking",
            TaskKind::PairClassification => "pair_classification",
            TaskKind::Sts => "sts",
            TaskKind::Summarization => "summarization",
            TaskKind::ZeroShot => "zero_shot",
        }
    }

    /// Headline metric reported for the task.
    pub fn metric(self) -> &'static str {
        match self {
            TaskKind::Retrieval => "ndcg@10",
            TaskKind::Classification | TaskKind::ZeroShot => "accuracy",
            TaskKind::Clustering => "v_measure",
            TaskKind::Reranking => "map",
            TaskKind::PairClassification => "ap",
            TaskKind::Sts | TaskKind::Summarization => "spearman",
        }
    }

    pub fn supported() -> String {
        Self::ALL.map(Self::name).join(", ")
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Input(format!(
                    "unsupported task {s:?}; supported: {}",
                    Self::supported()
                ))
            })
    }
}

fn metric_range(metric: &str) -> (f64, f64) {
    if metric.starts_with("spearman") {
        (-1.0, 1.0)
    } else {
        (0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskResult {
    pub task: TaskKind,
    pub dataset: String,
    pub metric: String,
    pub value: f64,
    /// Secondary metrics, e.g. recall@100 next to nDCG@10.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

impl TaskResult {
    pub fn new(task: TaskKind, dataset: impl Into<String>, value: f64) -> Result<Self> {
        let r = Self {
            task,
            dataset: dataset.into(),
            metric: task.metric().to_string(),
            value,
            details: BTreeMap::new(),
        };
        r.check(&r.metric, value)?;
        Ok(r)
    }

    pub fn with_detail(mut self, metric: &str, value: f64) -> Result<Self> {
        self.check(metric, value)?;
        self.details.insert(metric.to_string(), value);
        Ok(self)
    }

    fn check(&self, metric: &str, value: f64) -> Result<()> {
        let (lo, hi) = metric_range(metric);
        if !(lo..=hi).contains(&value) {
            return Err(Error::Contract(format!(
                "{} {metric} = {value} outside [{lo}, {hi}]",
                self.dataset
            )));
        }
        Ok(())
    }
}

/// Conventions every report states alongside its numbers.
pub fn conventions() -> BTreeMap<String, String> {
    [
        (
            "similarity",
            "cosine; zero-shot uses inner product of L2-normalised embeddings",
        ),
        ("ranking_ties", "ascending document id"),
        ("ndcg_gain", "2^rel - 1 with log2(rank + 1) discount"),
        ("average_precision", "tied scores form one threshold"),
        (
            "classification",
            "multinomial logistic regression, L2 C=1, 100 iterations",
        ),
        (
            "clustering",
            "mini-batch k-means, batch 32, k-means++ seeding, 100 iterations",
        ),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub tasks: Vec<TaskResult>,
    /// Unweighted mean of the headline values.
    pub average: f64,
    pub config_fingerprint: String,
    pub timestamp: String,
    pub conventions: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn new(
        tasks: Vec<TaskResult>,
        config_fingerprint: String,
        timestamp: String,
    ) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Input("a report needs at least one task".into()));
        }
        let average = tasks.iter().map(|t| t.value).sum::<f64>() / tasks.len() as f64;
        Ok(Self {
            tasks,
            average,
            config_fingerprint,
            timestamp,
            conventions: conventions(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        for t in &r.tasks {
            t.check(&t.metric, t.value)?;
            for (m, v) in &t.details {
                t.check(m, *v)?;
            }
        }
        Ok(r)
    }

    /// Fixed-width table of task, dataset, metric and value plus the average.
    pub fn summary_table(&self) -> String {
        let width = self
            .tasks
            .iter()
            .map(|t| t.dataset.len())
            .max()
            .unwrap_or(0)
            .max(7);
        let mut out = String::new();
        writeln!(
            out,
            "{:<20} {:<width$} {:<12} {:>8}",
            "task", "dataset", "metric", "value"
        )
        .expect("write");
        for t in &self.tasks {
            writeln!(
                out,
                "{:<20} {:<width$} {:<12} {:>8.4}",
                t.task.name(),
                t.dataset,
                t.metric,
                t.value
            )
            .expect("write");
        }
        writeln!(
            out,
            "{:<20} {:<width$} {:<12} {:>8.4}",
            "average", "", "", self.average
        )
        .expect("write");
        out
    }
}
