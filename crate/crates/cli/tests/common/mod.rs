#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gteforge::datapipe::write_jsonl;
use gteforge::eval::{
    qrels_to_string, LabeledPair, LabeledText, RerankRecord, StsPair, SummaryRecord,
};
use gteforge::synth::{SynthConfig, SynthWorld};

pub const BIN: &str = env!("CARGO_BIN_EXE_gteforge");

pub const CONFIG: &str = r#"
seed = 7
output_dir = "out"

[vocab]
size = 4096

[encoder]
max_seq_len = 16

[[data.sources]]
name = "pairs"
path = "pairs.jsonl"
kind = "pair"

[[data.sources]]
name = "triples"
path = "triples.jsonl"
kind = "triple"

[pretrain]
total_steps = 12
batch_size = 16
max_seq_len = 16

[finetune]
total_steps = 4
batch_size = 4
group_size = 4
max_seq_len = 16
checkpoint = "out/pretrain.gtef"

[[eval.tasks]]
task = "retrieval"
dataset = "synth-retrieval"
corpus = "corpus.jsonl"
queries = "queries.jsonl"
qrels = "qrels.tsv"

[[eval.tasks]]
task = "classification"
dataset = "synth-cls"
train = "cls_train.jsonl"
test = "cls_test.jsonl"

[[eval.tasks]]
task = "clustering"
dataset = "synth-clu"
data = "cluster.jsonl"

[[eval.tasks]]
task = "reranking"
dataset = "synth-rerank"
data = "rerank.jsonl"

[[eval.tasks]]
task = "pair_classification"
dataset = "synth-pairs"
data = "pairclass.jsonl"

[[eval.tasks]]
task = "sts"
dataset = "synth-sts"
data = "sts.jsonl"

[[eval.tasks]]
task = "summarization"
dataset = "synth-summ"
data = "summ.jsonl"

[[eval.tasks]]
task = "zero_shot"
dataset = "synth-zs"
data = "zeroshot.jsonl"
labels = ["LABELS"]
template = "about {label}"
"#;

/// A temporary directory holding synthetic training and evaluation data
/// plus `config.toml`.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        let world = SynthWorld::new(SynthConfig::default());
        write_jsonl(&p.join("pairs.jsonl"), &world.pairs(200, 1)).unwrap();
        write_jsonl(&p.join("triples.jsonl"), &world.triples(80, 3, 2)).unwrap();

        let fx = world.retrieval_fixture(12, 2, 3);
        write_jsonl(&p.join("corpus.jsonl"), &fx.corpus).unwrap();
        write_jsonl(&p.join("queries.jsonl"), &fx.queries).unwrap();
        std::fs::write(
            p.join("qrels.tsv"),
            format!("query-id\tcorpus-id\tscore\n{}", qrels_to_string(&fx.qrels)),
        )
        .unwrap();

        let doc = |i: usize| {
            fx.corpus
                .iter()
                .find(|d| d.id == format!("d{i:04}"))
                .unwrap()
                .text
                .clone()
        };
        let miss = |i: usize| {
            fx.corpus
                .iter()
                .find(|d| d.id == format!("d{i:04}n0"))
                .unwrap()
                .text
                .clone()
        };
        let label = |i: usize| format!("c{}", i % 3);
        let n = fx.queries.len();

        let train: Vec<LabeledText> = (0..n)
            .map(|i| LabeledText {
                text: doc(i),
                label: label(i),
            })
            .collect();
        let test: Vec<LabeledText> = (0..n)
            .map(|i| LabeledText {
                text: fx.queries[i].text.clone(),
                label: label(i),
            })
            .collect();
        write_jsonl(&p.join("cls_train.jsonl"), &train).unwrap();
        write_jsonl(&p.join("cls_test.jsonl"), &test).unwrap();
        let cluster: Vec<LabeledText> = train.iter().chain(&test).cloned().collect();
        write_jsonl(&p.join("cluster.jsonl"), &cluster).unwrap();

        let rerank: Vec<RerankRecord> = (0..n)
            .map(|i| RerankRecord {
                query: fx.queries[i].text.clone(),
                positive: vec![doc(i)],
                negative: vec![miss(i), doc((i + 1) % n)],
            })
            .collect();
        write_jsonl(&p.join("rerank.jsonl"), &rerank).unwrap();

        let pairs: Vec<LabeledPair> = (0..n)
            .flat_map(|i| {
                let q = fx.queries[i].text.clone();
                [
                    LabeledPair {
                        s1: q.clone(),
                        s2: doc(i),
                        label: 1,
                    },
                    LabeledPair {
                        s1: q,
                        s2: doc((i + 5) % n),
                        label: 0,
                    },
                ]
            })
            .collect();
        write_jsonl(&p.join("pairclass.jsonl"), &pairs).unwrap();

        let sts: Vec<StsPair> = (0..n)
            .map(|i| {
                let (s2, score) = match i % 3 {
                    0 => (doc(i), 5.0),
                    1 => (miss(i), 2.5),
                    _ => (doc((i + 4) % n), 0.0),
                };
                StsPair {
                    s1: fx.queries[i].text.clone(),
                    s2,
                    score,
                }
            })
            .collect();
        write_jsonl(&p.join("sts.jsonl"), &sts).unwrap();

        let summ: Vec<SummaryRecord> = (0..n)
            .map(|i| SummaryRecord {
                summary: if i % 2 == 0 {
                    fx.queries[i].text.clone()
                } else {
                    doc((i + 3) % n)
                },
                references: vec![doc(i)],
                score: if i % 2 == 0 {
                    4.0 + i as f64 / 100.0
                } else {
                    1.0 + i as f64 / 100.0
                },
            })
            .collect();
        write_jsonl(&p.join("summ.jsonl"), &summ).unwrap();

        let lex = world.lexicon();
        let labels: Vec<String> = lex[..3].to_vec();
        let zs: Vec<LabeledText> = (0..9)
            .map(|i| {
                let l = &labels[i % 3];
                LabeledText {
                    text: format!("about {l} {l}"),
                    label: l.clone(),
                }
            })
            .collect();
        write_jsonl(&p.join("zeroshot.jsonl"), &zs).unwrap();

        let quoted: Vec<String> = labels.iter().map(|l| format!("\"{l}\"")).collect();
        let config = CONFIG.replace("\"LABELS\"", &quoted.join(", "));
        std::fs::write(p.join("config.toml"), config).unwrap();
        Self { dir }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self) -> PathBuf {
        self.path().join("config.toml")
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.path().join("out").join(name)
    }

    pub fn read(&self, rel: &str) -> Vec<u8> {
        std::fs::read(self.path().join(rel)).unwrap()
    }

    /// Runs the binary with `args`, clearing the seed and date overrides
    /// unless given in `env`.
    pub fn run(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(BIN);
        cmd.args(args)
            .current_dir(self.path())
            .env_remove("GTEFORGE_SEED")
            .env_remove("SOURCE_DATE_EPOCH");
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }

    pub fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args, &[]);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    /// build-vocab, pretrain, finetune and evaluate with the fine-tuned model.
    pub fn full_pipeline(&self, extra_env: &[(&str, &str)]) {
        let cfg = self.config();
        let cfg = cfg.to_str().unwrap();
        for args in [
            vec!["build-vocab", "--config", cfg],
            vec!["pretrain", "--config", cfg],
            vec!["finetune", "--config", cfg],
            vec![
                "evaluate",
                "--config",
                cfg,
                "--checkpoint",
                "out/finetune.gtef",
            ],
        ] {
            let out = self.run(&args, extra_env);
            assert!(
                out.status.success(),
                "{args:?} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
    }
}
