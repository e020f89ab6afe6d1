//! Synthetic paraphrase corpora for toy-scale training and evaluation.
//!
//! A text mentions a few *concepts*, each rendered by one of several
//! surface forms, mixed with filler words. Queries always use a concept's
//! first form and documents use the others, so a query and its document
//! share meaning but no concept tokens: matching them has to be learned.

use std::collections::BTreeSet;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datapipe::{PairRecord, TripleRecord};
use crate::eval::{Qrels, TextRecord};

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub concepts: usize,
    pub forms_per_concept: usize,
    pub concepts_per_text: usize,
    pub fillers: usize,
    pub fillers_per_text: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            concepts: 60,
            forms_per_concept: 3,
            concepts_per_text: 3,
            fillers: 20,
            fillers_per_text: 2,
            seed: 0,
        }
    }
}

/// Held-out retrieval task over the same concept space.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalFixture {
    pub corpus: Vec<TextRecord>,
    pub queries: Vec<TextRecord>,
    pub qrels: Qrels,
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    config: SynthConfig,
    forms: Vec<Vec<String>>,
    fillers: Vec<String>,
}

impl SynthWorld {
    pub fn new(config: SynthConfig) -> Self {
        assert!(
            config.forms_per_concept >= 2,
            "documents need a form other than the query's"
        );
        assert!(config.concepts > config.concepts_per_text);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut used = BTreeSet::new();
        let mut word = |rng: &mut ChaCha8Rng| loop {
            let w: String = (0..3)
                .map(|_| {
                    format!(
                        "{}{}",
                        ONSETS.choose(rng).unwrap(),
                        VOWELS.choose(rng).unwrap()
                    )
                })
                .collect();
            if used.insert(w.clone()) {
                break w;
            }
        };
        let forms = (0..config.concepts)
            .map(|_| {
                (0..config.forms_per_concept)
                    .map(|_| word(&mut rng))
                    .collect()
            })
            .collect();
        let fillers = (0..config.fillers).map(|_| word(&mut rng)).collect();
        Self {
            config,
            forms,
            fillers,
        }
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    fn pick_concepts(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        index::sample(rng, self.config.concepts, self.config.concepts_per_text).into_vec()
    }

    fn render(&self, concepts: &[usize], as_query: bool, rng: &mut ChaCha8Rng) -> String {
        let mut words: Vec<&str> = concepts
            .iter()
            .map(|&c| {
                let f = if as_query {
                    0
                } else {
                    rng.random_range(1..self.config.forms_per_concept)
                };
                self.forms[c][f].as_str()
            })
            .collect();
        for _ in 0..self.config.fillers_per_text {
            words.push(self.fillers.choose(rng).unwrap());
        }
        words.shuffle(rng);
        words.join(" ")
    }

    /// `n` query/document pairs over random concept sets.
    pub fn pairs(&self, n: usize, seed: u64) -> Vec<PairRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let c = self.pick_concepts(&mut rng);
                PairRecord::new(
                    self.render(&c, true, &mut rng),
                    self.render(&c, false, &mut rng),
                )
            })
            .collect()
    }

    /// Concept set sharing all but one concept with `c`.
    fn near_miss(&self, c: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = c.to_vec();
        let slot = rng.random_range(0..out.len());
        out[slot] = loop {
            let x = rng.random_range(0..self.config.concepts);
            if !c.contains(&x) {
                break x;
            }
        };
        out
    }

    /// Triples whose hard negatives differ from the positive in one concept.
    pub fn triples(&self, n: usize, hard_negatives: usize, seed: u64) -> Vec<TripleRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let c = self.pick_concepts(&mut rng);
                TripleRecord {
                    query: self.render(&c, true, &mut rng),
                    pos: self.render(&c, false, &mut rng),
                    negs: (0..hard_negatives)
                        .map(|_| {
                            let m = self.near_miss(&c, &mut rng);
                            self.render(&m, false, &mut rng)
                        })
                        .collect(),
                }
            })
            .collect()
    }

    /// `queries` queries with one relevant document each, plus
    /// `near_misses` distractors per query sharing all but one concept.
    pub fn retrieval_fixture(
        &self,
        queries: usize,
        near_misses: usize,
        seed: u64,
    ) -> RetrievalFixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut corpus = Vec::new();
        let mut qs = Vec::new();
        let mut qrels = Qrels::new();
        for i in 0..queries {
            let c = self.pick_concepts(&mut rng);
            let qid = format!("q{i:04}");
            let did = format!("d{i:04}");
            qs.push(TextRecord {
                id: qid.clone(),
                text: self.render(&c, true, &mut rng),
            });
            corpus.push(TextRecord {
                id: did.clone(),
                text: self.render(&c, false, &mut rng),
            });
            qrels.entry(qid).or_default().insert(did, 1);
            for j in 0..near_misses {
                let m = self.near_miss(&c, &mut rng);
                corpus.push(TextRecord {
                    id: format!("d{i:04}n{j}"),
                    text: self.render(&m, false, &mut rng),
                });
            }
        }
        RetrievalFixture {
            corpus,
            queries: qs,
            qrels,
        }
    }

    /// Every concept form and filler: the full token inventory.
    pub fn lexicon(&self) -> Vec<String> {
        self.forms
            .iter()
            .flatten()
            .chain(&self.fillers)
            .cloned()
            .collect()
    }
}
