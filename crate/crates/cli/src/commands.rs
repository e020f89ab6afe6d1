use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gteforge::datapipe::{Registry, SourceKind, Stage};
use gteforge::encoder::Vocabulary;
use gteforge::eval::{
    eval_classification, eval_clustering, eval_pair_classification, eval_reranking, eval_retrieval,
    eval_sts, eval_summarization, load_jsonl, load_qrels, load_texts, verbalize,
    zero_shot_classify, Embedder, EmbeddingMatrix, EvalReport, LabeledText, LogRegConfig,
    LookupEmbedder, ModelEmbedder, TaskKind, TaskResult,
};
use gteforge::trainer::{self, Checkpoint, StepRecord};

use crate::config::{Loaded, TaskSpec};
use crate::{CliError, ConfigArgs, ReportFormat};

const DATE_ENV: &str = "SOURCE_DATE_EPOCH";

fn require_file(path: &Path, key: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{key}: {} does not exist",
            path.display()
        )))
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_registry(loaded: &Loaded) -> Result<Registry, CliError> {
    let specs = loaded.sources()?;
    Ok(Registry::load(&specs, None)?)
}

fn load_vocab(loaded: &Loaded) -> Result<Vocabulary, CliError> {
    let path = loaded.vocab_path();
    if !path.is_file() {
        return Err(CliError::Config(format!(
            "vocab.path: {} does not exist; run build-vocab first",
            path.display()
        )));
    }
    Ok(Vocabulary::load(&path)?)
}

fn log_csv(log: &[StepRecord], stage: Stage) -> String {
    let mut out = String::from("step,loss,lr\n");
    for r in log.iter().filter(|r| r.stage == stage) {
        writeln!(out, "{},{},{}", r.step, r.loss, r.lr).expect("write");
    }
    out
}

fn save_stage(loaded: &Loaded, ck: &Checkpoint, stage: Stage) -> Result<(), CliError> {
    let name = match stage {
        Stage::Pretrain => "pretrain",
        Stage::Finetune => "finetune",
    };
    let dir = loaded.output_dir();
    let ck_path = dir.join(format!("{name}.gtef"));
    let log_path = dir.join(format!("{name}_log.csv"));
    write_file(&ck_path, ck.to_bytes()?)?;
    write_file(&log_path, log_csv(&ck.meta.log, stage))?;
    if let Some(last) = ck.meta.log.iter().rev().find(|r| r.stage == stage) {
        println!("{name}: {} steps, final loss {:.6}", last.step, last.loss);
    }
    println!("wrote {}", ck_path.display());
    println!("wrote {}", log_path.display());
    Ok(())
}

pub fn build_vocab(args: &ConfigArgs) -> Result<(), CliError> {
    let loaded = Loaded::load(&args.config, &args.set)?;
    let registry = load_registry(&loaded)?;
    let texts: Vec<String> = registry
        .sources()
        .iter()
        .flat_map(|s| s.records.texts())
        .collect();
    let vocab = Vocabulary::build(&texts, loaded.config.vocab.size)
        .map_err(|e| CliError::Config(format!("vocab.size: {e}")))?;
    if vocab.len() < loaded.config.vocab.size {
        log::warn!(
            "corpus has only {} distinct tokens; vocabulary is smaller than vocab.size {}",
            vocab.len(),
            loaded.config.vocab.size
        );
    }
    let path = loaded.vocab_path();
    write_file(&path, vocab.to_file_string())?;
    println!("wrote {} tokens to {}", vocab.len(), path.display());
    Ok(())
}

pub fn pretrain(args: &ConfigArgs) -> Result<(), CliError> {
    let loaded = Loaded::load(&args.config, &args.set)?;
    let cfg = loaded.train_config(Stage::Pretrain)?;
    if !loaded.has_kind(SourceKind::Pair) {
        return Err(CliError::Config(
            "data.sources: pre-training needs a pair source".into(),
        ));
    }
    let vocab = load_vocab(&loaded)?;
    let encoder = loaded.config.encoder.with_vocab(vocab.len());
    encoder
        .validate()
        .map_err(|e| CliError::Config(format!("encoder: {e}")))?;
    let registry = load_registry(&loaded)?;
    let ck = trainer::pretrain(&cfg, &encoder, &vocab, &registry)?;
    save_stage(&loaded, &ck, Stage::Pretrain)
}

pub fn finetune(args: &ConfigArgs, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    let loaded = Loaded::load(&args.config, &args.set)?;
    let cfg = loaded.train_config(Stage::Finetune)?;
    let (path, key) = match checkpoint {
        Some(p) => (p, "--checkpoint"),
        None => match &loaded.config.finetune.checkpoint {
            Some(p) => (loaded.resolve(p), "finetune.checkpoint"),
            None => {
                return Err(CliError::Config(
                    "finetune.checkpoint is not set; pass --checkpoint or set it in the config"
                        .into(),
                ))
            }
        },
    };
    require_file(&path, key)?;
    if !loaded.has_kind(SourceKind::Triple) {
        return Err(CliError::Config(
            "data.sources: fine-tuning needs a triple source".into(),
        ));
    }
    let start = Checkpoint::load(&path)?;
    let enc_len = start.model.config().max_seq_len;
    if cfg.max_seq_len > enc_len {
        return Err(CliError::Config(format!(
            "finetune.max_seq_len {} exceeds the checkpoint encoder's {enc_len}",
            cfg.max_seq_len
        )));
    }
    let registry = load_registry(&loaded)?;
    let ck = trainer::finetune(&cfg, &start, &registry)?;
    save_stage(&loaded, &ck, Stage::Finetune)
}

pub fn embed(
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    max_seq_len: Option<usize>,
) -> Result<(), CliError> {
    require_file(checkpoint, "--checkpoint")?;
    require_file(input, "--input")?;
    let ck = Checkpoint::load(checkpoint)?;
    let vocab = ck.vocab()?;
    let mut embedder = ModelEmbedder::new(&ck.model, &vocab);
    if let Some(n) = max_seq_len {
        if n < 2 || n > embedder.max_len {
            return Err(CliError::Config(format!(
                "--max-seq-len must be in [2, {}], got {n}",
                embedder.max_len
            )));
        }
        embedder.max_len = n;
    }
    let records = load_texts(input)?;
    let texts: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
    let vectors = embedder.embed(&texts)?;
    let ids = records.into_iter().map(|r| r.id).collect();
    let matrix = EmbeddingMatrix::new(ck.model.config().embed_dim, ids, vectors)?;
    write_file(output, matrix.to_text())?;
    println!("wrote {} embeddings to {}", matrix.len(), output.display());
    Ok(())
}

fn timestamp() -> Result<String, CliError> {
    let secs = match std::env::var(DATE_ENV) {
        Ok(v) => v
            .trim()
            .parse::<i64>()
            .map_err(|e| CliError::Config(format!("{DATE_ENV}={v:?}: {e}")))?,
        Err(_) => 0,
    };
    let t = chrono::DateTime::from_timestamp(secs, 0)
        .ok_or_else(|| CliError::Config(format!("{DATE_ENV}={secs} is out of range")))?;
    Ok(t.format("%Y-%m-%dT%H:%M:%SZ").to_string())
}

fn check_tasks(loaded: &Loaded) -> Result<Vec<(TaskKind, TaskSpec)>, CliError> {
    if loaded.config.eval.tasks.is_empty() {
        return Err(CliError::Config("eval.tasks is empty".into()));
    }
    loaded
        .config
        .eval
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let kind = t.kind().map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("eval.tasks[{i}].task: {m}")),
                other => other,
            })?;
            let mut resolved = t.clone();
            for (key, path) in t.required_files()? {
                let path = path.as_ref().ok_or_else(|| {
                    CliError::Config(format!(
                        "eval.tasks[{i}].{key} is required for {}",
                        kind.name()
                    ))
                })?;
                require_file(&loaded.resolve(path), &format!("eval.tasks[{i}].{key}"))?;
            }
            for slot in [
                &mut resolved.corpus,
                &mut resolved.queries,
                &mut resolved.qrels,
                &mut resolved.train,
                &mut resolved.test,
                &mut resolved.data,
            ] {
                if let Some(p) = slot.as_mut() {
                    *p = loaded.resolve(p);
                }
            }
            if kind == TaskKind::ZeroShot {
                verbalize(&t.labels, t.template.as_deref())
                    .map_err(|e| CliError::Config(format!("eval.tasks[{i}]: {e}")))?;
            }
            Ok((kind, resolved))
        })
        .collect()
}

fn path(p: &Option<PathBuf>) -> &Path {
    p.as_deref().expect("checked by check_tasks")
}

fn run_task(
    kind: TaskKind,
    t: &TaskSpec,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<TaskResult, CliError> {
    let ds = t.dataset.as_str();
    let result = match kind {
        TaskKind::Retrieval => {
            let corpus = load_texts(path(&t.corpus))?;
            let queries = load_texts(path(&t.queries))?;
            let qrels = load_qrels(path(&t.qrels))?;
            let m = eval_retrieval(embedder, &corpus, &queries, &qrels, &[10, 100])?;
            TaskResult::new(kind, ds, m.ndcg[&10])?.with_detail("recall@100", m.recall[&100])?
        }
        TaskKind::Classification => {
            let train: Vec<LabeledText> = load_jsonl(path(&t.train))?;
            let test: Vec<LabeledText> = load_jsonl(path(&t.test))?;
            TaskResult::new(
                kind,
                ds,
                eval_classification(embedder, &train, &test, &LogRegConfig::default())?,
            )?
        }
        TaskKind::Clustering => {
            let items: Vec<LabeledText> = load_jsonl(path(&t.data))?;
            let v = eval_clustering(embedder, &items, seed)?;
            TaskResult::new(kind, ds, v.v_measure)?
                .with_detail("homogeneity", v.homogeneity)?
                .with_detail("completeness", v.completeness)?
        }
        TaskKind::Reranking => TaskResult::new(
            kind,
            ds,
            eval_reranking(embedder, &load_jsonl(path(&t.data))?)?,
        )?,
        TaskKind::PairClassification => {
            let m = eval_pair_classification(embedder, &load_jsonl(path(&t.data))?)?;
            TaskResult::new(kind, ds, m.ap)?.with_detail("accuracy", m.accuracy)?
        }
        TaskKind::Sts => {
            TaskResult::new(kind, ds, eval_sts(embedder, &load_jsonl(path(&t.data))?)?)?
        }
        TaskKind::Summarization => TaskResult::new(
            kind,
            ds,
            eval_summarization(embedder, &load_jsonl(path(&t.data))?)?,
        )?,
        TaskKind::ZeroShot => {
            let items: Vec<LabeledText> = load_jsonl(path(&t.data))?;
            let gold = items
                .iter()
                .map(|r| {
                    t.labels.iter().position(|l| *l == r.label).ok_or_else(|| {
                        CliError::Runtime(format!(
                            "{ds}: label {:?} is not among the task labels",
                            r.label
                        ))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let texts: Vec<String> = items.into_iter().map(|r| r.text).collect();
            let verbalizers = verbalize(&t.labels, t.template.as_deref())?;
            let r = zero_shot_classify(
                embedder,
                &texts,
                &verbalizers,
                Some(&gold),
                t.raw_inner_product,
            )?;
            TaskResult::new(kind, ds, r.accuracy.unwrap_or(0.0))?
        }
    };
    Ok(result)
}

pub fn evaluate(
    args: &ConfigArgs,
    checkpoint: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    texts: Option<PathBuf>,
    output: Option<PathBuf>,
) -> Result<(), CliError> {
    let loaded = Loaded::load(&args.config, &args.set)?;
    let tasks = check_tasks(&loaded)?;
    let stamp = timestamp()?;
    let ck;
    let vocab;
    let model_embedder;
    let lookup;
    let embedder: &dyn Embedder = match (checkpoint, embeddings) {
        (Some(p), None) => {
            require_file(&p, "--checkpoint")?;
            ck = Checkpoint::load(&p)?;
            vocab = ck.vocab()?;
            model_embedder = ModelEmbedder::new(&ck.model, &vocab);
            &model_embedder
        }
        (None, Some(e)) => {
            let t = texts.ok_or_else(|| CliError::Config("--embeddings needs --texts".into()))?;
            require_file(&e, "--embeddings")?;
            require_file(&t, "--texts")?;
            lookup = LookupEmbedder::from_matrix(&load_texts(&t)?, &EmbeddingMatrix::load(&e)?)?;
            &lookup
        }
        _ => {
            return Err(CliError::Config(
                "evaluate needs exactly one of --checkpoint or --embeddings".into(),
            ))
        }
    };
    let results = tasks
        .iter()
        .map(|(kind, spec)| run_task(*kind, spec, embedder, loaded.config.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let report = EvalReport::new(results, loaded.fingerprint(), stamp)?;
    let out = output.unwrap_or_else(|| loaded.output_dir().join("report.json"));
    write_file(&out, report.to_json()?)?;
    print!("{}", report.summary_table());
    println!("wrote {}", out.display());
    Ok(())
}

pub fn report(input: &Path, format: ReportFormat) -> Result<(), CliError> {
    require_file(input, "--input")?;
    let text = std::fs::read_to_string(input)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", input.display())))?;
    let report = EvalReport::from_json(&text)?;
    match format {
        ReportFormat::Table => print!("{}", report.summary_table()),
        ReportFormat::Json => print!("{}", report.to_json()?),
    }
    Ok(())
}
