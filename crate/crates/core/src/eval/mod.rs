//! Embedding evaluation: retrieval, classification, clustering, reranking,
//! pair classification, STS, summarization and zero-shot classification.

mod data;
mod kmeans;
mod logreg;
mod metrics;
mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap};

pub use data::{
    load_jsonl, load_qrels, load_texts, parse_qrels, qrels_to_string, EmbeddingMatrix, LabeledPair,
    LabeledText, Qrels, RerankRecord, StsPair, SummaryRecord, TextRecord,
};
pub use kmeans::{mini_batch_kmeans, KMeansConfig};
pub use logreg::{LogRegConfig, LogisticRegression};
pub use metrics::{
    average_precision, average_ranks, best_threshold_accuracy, ndcg_at_k, pearson, rank_by_score,
    recall_at_k, spearman, v_measure, Judgments, VMeasure,
};
pub use report::{conventions, EvalReport, TaskKind, TaskResult};

use crate::encoder::{EncoderModel, Vocabulary};
use crate::error::{Error, Result};

/// Anything that maps texts to vectors.
pub trait Embedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Embeds through an encoder checkpoint.
#[derive(Debug, Clone, Copy)]
pub struct ModelEmbedder<'a> {
    pub model: &'a EncoderModel,
    pub vocab: &'a Vocabulary,
    pub max_len: usize,
    pub chunk: usize,
}

impl<'a> ModelEmbedder<'a> {
    pub fn new(model: &'a EncoderModel, vocab: &'a Vocabulary) -> Self {
        Self {
            model,
            vocab,
            max_len: model.config().max_seq_len,
            chunk: 64,
        }
    }
}

impl Embedder for ModelEmbedder<'_> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        self.model
            .embed_texts(self.vocab, texts, self.max_len, self.chunk)
    }
}

/// Looks texts up in precomputed embeddings.
#[derive(Debug, Clone, Default)]
pub struct LookupEmbedder {
    map: HashMap<String, Vec<f64>>,
}

impl LookupEmbedder {
    pub fn new(pairs: impl IntoIterator<Item = (String, Vec<f64>)>) -> Self {
        Self {
            map: pairs.into_iter().collect(),
        }
    }

    /// Joins `{"id", "text"}` records with an embedding file on id.
    pub fn from_matrix(texts: &[TextRecord], matrix: &EmbeddingMatrix) -> Result<Self> {
        let by_id: HashMap<&str, &Vec<f64>> = matrix
            .ids
            .iter()
            .map(String::as_str)
            .zip(&matrix.vectors)
            .collect();
        let mut map = HashMap::new();
        for t in texts {
            let v = by_id
                .get(t.id.as_str())
                .ok_or_else(|| Error::Input(format!("no embedding for id {}", t.id)))?;
            map.insert(t.text.clone(), (*v).clone());
        }
        Ok(Self { map })
    }
}

impl Embedder for LookupEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|t| {
                self.map
                    .get(t)
                    .cloned()
                    .ok_or_else(|| Error::Input(format!("no embedding for text {t:?}")))
            })
            .collect()
    }
}

pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Domain(
            "cannot normalise a zero or non-finite vector".into(),
        ));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(dot(&normalize(a)?, &normalize(b)?))
}

fn normalize_all(v: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    v.iter().map(|x| normalize(x)).collect()
}

fn embed_owned<S: AsRef<str>>(embedder: &dyn Embedder, texts: &[S]) -> Result<Vec<Vec<f64>>> {
    let owned: Vec<String> = texts.iter().map(|t| t.as_ref().to_string()).collect();
    embedder.embed(&owned)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalMetrics {
    pub ndcg: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, f64>,
    /// Queries that contributed (judged with at least one relevant doc).
    pub queries: usize,
}

/// nDCG@k and Recall@k for every `k` in `ks`, averaged over queries with at
/// least one relevant judgment. Queries missing from `qrels` or judged only
/// irrelevant are skipped with a warning.
pub fn retrieval_metrics(
    query_ids: &[String],
    query_vecs: &[Vec<f64>],
    doc_ids: &[String],
    doc_vecs: &[Vec<f64>],
    qrels: &Qrels,
    ks: &[usize],
) -> Result<RetrievalMetrics> {
    if doc_ids.is_empty() {
        return Err(Error::Input("retrieval corpus is empty".into()));
    }
    let known: BTreeSet<&str> = query_ids.iter().map(String::as_str).collect();
    if let Some(q) = qrels.keys().find(|q| !known.contains(q.as_str())) {
        return Err(Error::Input(format!("qrels reference unknown query {q}")));
    }
    let qn = normalize_all(query_vecs)?;
    let dn = normalize_all(doc_vecs)?;
    let mut ndcg: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut recall = ndcg.clone();
    let mut used = 0;
    for (qid, q) in query_ids.iter().zip(&qn) {
        let Some(judged) = qrels.get(qid).filter(|j| j.values().any(|&r| r > 0)) else {
            log::warn!("query {qid} has no relevant judgments; skipped");
            continue;
        };
        let scores: Vec<f64> = dn.iter().map(|d| dot(q, d)).collect();
        let ranked: Vec<&str> = rank_by_score(&scores, doc_ids)
            .into_iter()
            .map(|i| doc_ids[i].as_str())
            .collect();
        for &k in ks {
            *ndcg.get_mut(&k).expect("k present") +=
                ndcg_at_k(&ranked, judged, k).expect("relevant");
            *recall.get_mut(&k).expect("k present") +=
                recall_at_k(&ranked, judged, k).expect("relevant");
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::Input("no query has a relevant judgment".into()));
    }
    for v in ndcg.values_mut().chain(recall.values_mut()) {
        *v /= used as f64;
    }
    Ok(RetrievalMetrics {
        ndcg,
        recall,
        queries: used,
    })
}

pub fn eval_retrieval(
    embedder: &dyn Embedder,
    corpus: &[TextRecord],
    queries: &[TextRecord],
    qrels: &Qrels,
    ks: &[usize],
) -> Result<RetrievalMetrics> {
    let texts = |r: &[TextRecord]| r.iter().map(|t| t.text.clone()).collect::<Vec<_>>();
    let ids = |r: &[TextRecord]| r.iter().map(|t| t.id.clone()).collect::<Vec<_>>();
    let dv = embedder.embed(&texts(corpus))?;
    let qv = embedder.embed(&texts(queries))?;
    retrieval_metrics(&ids(queries), &qv, &ids(corpus), &dv, qrels, ks)
}

/// Logistic-regression probe accuracy on frozen features. Test labels not
/// seen in training count as errors.
pub fn classification_accuracy(
    train_x: &[Vec<f64>],
    train_y: &[String],
    test_x: &[Vec<f64>],
    test_y: &[String],
    config: &LogRegConfig,
) -> Result<f64> {
    let classes: Vec<&String> = train_y
        .iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(Error::Input(
            "training set needs at least two classes".into(),
        ));
    }
    if test_x.is_empty() || test_x.len() != test_y.len() {
        return Err(Error::Input(
            "test features and labels must be non-empty and aligned".into(),
        ));
    }
    let index: HashMap<&String, usize> = classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let y: Vec<usize> = train_y.iter().map(|l| index[l]).collect();
    let model = LogisticRegression::fit(train_x, &y, classes.len(), config)?;
    let correct = test_x
        .iter()
        .zip(test_y)
        .filter(|(x, l)| index.get(l).is_some_and(|&c| model.predict(x) == c))
        .count();
    Ok(correct as f64 / test_x.len() as f64)
}

pub fn eval_classification(
    embedder: &dyn Embedder,
    train: &[LabeledText],
    test: &[LabeledText],
    config: &LogRegConfig,
) -> Result<f64> {
    let tx = embed_owned(embedder, &train.iter().map(|r| &r.text).collect::<Vec<_>>())?;
    let vx = embed_owned(embedder, &test.iter().map(|r| &r.text).collect::<Vec<_>>())?;
    let ty: Vec<String> = train.iter().map(|r| r.label.clone()).collect();
    let vy: Vec<String> = test.iter().map(|r| r.label.clone()).collect();
    classification_accuracy(&tx, &ty, &vx, &vy, config)
}

/// Mini-batch k-means with `k` = number of distinct labels, scored by
/// v-measure.
pub fn clustering_v_measure(x: &[Vec<f64>], labels: &[String], seed: u64) -> Result<VMeasure> {
    let k = labels.iter().collect::<BTreeSet<_>>().len();
    if k < 2 {
        return Err(Error::Input("clustering needs at least two labels".into()));
    }
    let pred = mini_batch_kmeans(x, &KMeansConfig::new(k, seed))?;
    v_measure(labels, &pred)
}

pub fn eval_clustering(
    embedder: &dyn Embedder,
    items: &[LabeledText],
    seed: u64,
) -> Result<VMeasure> {
    let x = embed_owned(embedder, &items.iter().map(|r| &r.text).collect::<Vec<_>>())?;
    let labels: Vec<String> = items.iter().map(|r| r.label.clone()).collect();
    clustering_v_measure(&x, &labels, seed)
}

/// Mean average precision over queries, each given candidate scores and
/// binary relevance. Queries without a relevant candidate are skipped.
pub fn mean_average_precision(queries: &[(Vec<f64>, Vec<bool>)]) -> Result<f64> {
    let mut total = 0.0;
    let mut used = 0;
    for (i, (scores, labels)) in queries.iter().enumerate() {
        if !labels.iter().any(|&l| l) {
            log::warn!("reranking query {i} has no relevant candidate; skipped");
            continue;
        }
        total += average_precision(scores, labels)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Input(
            "no reranking query has a relevant candidate".into(),
        ));
    }
    Ok(total / used as f64)
}

pub fn eval_reranking(embedder: &dyn Embedder, records: &[RerankRecord]) -> Result<f64> {
    let mut per_query = Vec::with_capacity(records.len());
    for r in records {
        let q = embedder.embed(std::slice::from_ref(&r.query))?;
        let cands: Vec<String> = r.positive.iter().chain(&r.negative).cloned().collect();
        let cv = embedder.embed(&cands)?;
        let scores = cv
            .iter()
            .map(|c| cosine(&q[0], c))
            .collect::<Result<Vec<_>>>()?;
        let labels = (0..cands.len()).map(|i| i < r.positive.len()).collect();
        per_query.push((scores, labels));
    }
    mean_average_precision(&per_query)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairClassificationMetrics {
    pub ap: f64,
    pub accuracy: f64,
    pub threshold: f64,
}

pub fn pair_classification_metrics(
    scores: &[f64],
    labels: &[bool],
) -> Result<PairClassificationMetrics> {
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::Input(
            "pair classification needs both classes".into(),
        ));
    }
    let ap = average_precision(scores, labels)?;
    let (accuracy, threshold) = best_threshold_accuracy(scores, labels)?;
    Ok(PairClassificationMetrics {
        ap,
        accuracy,
        threshold,
    })
}

fn pair_cosines(embedder: &dyn Embedder, a: &[&String], b: &[&String]) -> Result<Vec<f64>> {
    let av = embed_owned(embedder, a)?;
    let bv = embed_owned(embedder, b)?;
    av.iter().zip(&bv).map(|(x, y)| cosine(x, y)).collect()
}

pub fn eval_pair_classification(
    embedder: &dyn Embedder,
    pairs: &[LabeledPair],
) -> Result<PairClassificationMetrics> {
    if let Some(p) = pairs.iter().find(|p| p.label > 1) {
        return Err(Error::Input(format!(
            "pair label must be 0 or 1, got {}",
            p.label
        )));
    }
    let a: Vec<&String> = pairs.iter().map(|p| &p.s1).collect();
    let b: Vec<&String> = pairs.iter().map(|p| &p.s2).collect();
    let scores = pair_cosines(embedder, &a, &b)?;
    let labels: Vec<bool> = pairs.iter().map(|p| p.label == 1).collect();
    pair_classification_metrics(&scores, &labels)
}

pub fn eval_sts(embedder: &dyn Embedder, pairs: &[StsPair]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::Input("STS needs at least three pairs".into()));
    }
    let a: Vec<&String> = pairs.iter().map(|p| &p.s1).collect();
    let b: Vec<&String> = pairs.iter().map(|p| &p.s2).collect();
    let scores = pair_cosines(embedder, &a, &b)?;
    let gold: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    spearman(&scores, &gold)
}

/// Quality of each summary: the highest cosine similarity to any of its
/// references.
pub fn summary_qualities(embedder: &dyn Embedder, records: &[SummaryRecord]) -> Result<Vec<f64>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.references.is_empty() {
                return Err(Error::Input(format!("summary {i} has no references")));
            }
            let s = embedder.embed(std::slice::from_ref(&r.summary))?;
            let refs = embedder.embed(&r.references)?;
            refs.iter()
                .map(|v| cosine(&s[0], v))
                .try_fold(f64::NEG_INFINITY, |m, c| Ok(m.max(c?)))
        })
        .collect()
}

pub fn eval_summarization(embedder: &dyn Embedder, records: &[SummaryRecord]) -> Result<f64> {
    let q = summary_qualities(embedder, records)?;
    let human: Vec<f64> = records.iter().map(|r| r.score).collect();
    spearman(&q, &human)
}

/// Label texts, optionally rendered through a template containing
/// `{label}`. Duplicates are rejected.
pub fn verbalize(labels: &[String], template: Option<&str>) -> Result<Vec<String>> {
    if labels.len() < 2 {
        return Err(Error::Input("zero-shot needs at least two labels".into()));
    }
    let out: Vec<String> = match template {
        Some(t) if !t.contains("{label}") => {
            return Err(Error::Input(format!(
                "template {t:?} lacks a {{label}} slot"
            )));
        }
        Some(t) => labels.iter().map(|l| t.replace("{label}", l)).collect(),
        None => labels.to_vec(),
    };
    let mut seen = BTreeSet::new();
    for v in &out {
        if v.trim().is_empty() {
            return Err(Error::Input("empty verbalizer".into()));
        }
        if !seen.insert(v) {
            return Err(Error::Input(format!("duplicate verbalizer {v:?}")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotResult {
    pub predictions: Vec<usize>,
    pub accuracy: Option<f64>,
}

/// Argmax over label similarities, ties to the lowest label index.
/// Similarity is the inner product of normalised embeddings unless
/// `raw_inner_product` is set.
pub fn zero_shot_from_vectors(
    texts: &[Vec<f64>],
    labels: &[Vec<f64>],
    gold: Option<&[usize]>,
    raw_inner_product: bool,
) -> Result<ZeroShotResult> {
    let prep = |v: &[Vec<f64>]| {
        if raw_inner_product {
            Ok(v.to_vec())
        } else {
            normalize_all(v)
        }
    };
    let (tv, lv) = (prep(texts)?, prep(labels)?);
    let predictions: Vec<usize> = tv
        .iter()
        .map(|t| {
            let mut best = (0, f64::NEG_INFINITY);
            for (i, l) in lv.iter().enumerate() {
                let s = dot(t, l);
                if s > best.1 {
                    best = (i, s);
                }
            }
            best.0
        })
        .collect();
    let accuracy = match gold {
        Some(g) if g.len() != predictions.len() => {
            return Err(Error::Input(format!(
                "{} gold labels for {} texts",
                g.len(),
                predictions.len()
            )));
        }
        Some(_) if predictions.is_empty() => None,
        Some(g) => {
            let hits = predictions.iter().zip(g).filter(|(p, g)| p == g).count();
            Some(hits as f64 / g.len() as f64)
        }
        None => None,
    };
    Ok(ZeroShotResult {
        predictions,
        accuracy,
    })
}

pub fn zero_shot_classify(
    embedder: &dyn Embedder,
    texts: &[String],
    verbalizers: &[String],
    gold: Option<&[usize]>,
    raw_inner_product: bool,
) -> Result<ZeroShotResult> {
    let checked = verbalize(verbalizers, None)?;
    let tv = embedder.embed(texts)?;
    let lv = embedder.embed(&checked)?;
    zero_shot_from_vectors(&tv, &lv, gold, raw_inner_product)
}
