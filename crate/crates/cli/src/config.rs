use std::path::{Path, PathBuf};

use gteforge::datapipe::{SourceKind, SourceSpec, Stage, DEFAULT_ALPHA, DEFAULT_GROUP_SIZE};
use gteforge::encoder::EncoderConfig;
use gteforge::eval::TaskKind;
use gteforge::objectives::{LossConfig, LossVariant, DEFAULT_TEMPERATURE};
use gteforge::trainer::{AdamWConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SEED_ENV: &str = "GTEFORGE_SEED";

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// One run: everything the subcommands need, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub vocab: VocabSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub pretrain: StageSection,
    #[serde(default)]
    pub finetune: StageSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabSection {
    pub size: usize,
    pub path: Option<PathBuf>,
}

impl Default for VocabSection {
    fn default() -> Self {
        Self {
            size: 4096,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub init_std: f64,
    pub pool_include_bos: bool,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let toy = EncoderConfig::toy(0);
        Self {
            embed_dim: toy.embed_dim,
            num_layers: toy.num_layers,
            num_heads: toy.num_heads,
            ffn_dim: toy.ffn_dim,
            max_seq_len: 512,
            init_std: toy.init_std,
            pool_include_bos: toy.pool_include_bos,
        }
    }
}

impl EncoderSection {
    pub fn with_vocab(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            max_seq_len: self.max_seq_len,
            init_std: self.init_std,
            pool_include_bos: self.pool_include_bos,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub sources: Vec<SourceSpec>,
}

/// Stage settings; unset fields take stage-specific defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSection {
    pub total_steps: Option<u64>,
    pub peak_lr: Option<f64>,
    pub warmup_fraction: Option<f64>,
    pub batch_size: Option<usize>,
    pub group_size: Option<usize>,
    pub max_seq_len: Option<usize>,
    pub alpha: Option<f64>,
    pub temperature: Option<f64>,
    pub loss_variant: Option<LossVariant>,
    pub dedupe_positive_in_z: Option<bool>,
    pub weight_decay: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub grad_clip: Option<f64>,
    /// Starting checkpoint (fine-tuning only).
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub task: String,
    pub dataset: String,
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub labels: Vec<String>,
    pub template: Option<String>,
    pub raw_inner_product: bool,
}

impl TaskSpec {
    pub fn kind(&self) -> Result<TaskKind, CliError> {
        self.task
            .parse()
            .map_err(|e: gteforge::Error| CliError::Config(e.to_string()))
    }

    /// Data files the task requires, by key.
    pub fn required_files(&self) -> Result<Vec<(&'static str, &Option<PathBuf>)>, CliError> {
        Ok(match self.kind()? {
            TaskKind::Retrieval => vec![
                ("corpus", &self.corpus),
                ("queries", &self.queries),
                ("qrels", &self.qrels),
            ],
            TaskKind::Classification => vec![("train", &self.train), ("test", &self.test)],
            _ => vec![("data", &self.data)],
        })
    }
}

/// Applies one `section.key=value` override to a parsed TOML document.
/// The value is read as TOML, falling back to a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        CliError::Config(format!(
            "--set expects section.key=value, got {assignment:?}"
        ))
    })?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut table = doc;
    for part in &path[..path.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key}: {part} is not a section")))?;
    }
    table.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

/// A parsed run configuration together with the directory its relative
/// paths are resolved against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut doc: toml::Table = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut config: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Ok(seed) = std::env::var(SEED_ENV) {
            config.seed = seed
                .trim()
                .parse()
                .map_err(|e| CliError::Config(format!("{SEED_ENV}={seed:?} is not a u64: {e}")))?;
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn vocab_path(&self) -> PathBuf {
        match &self.config.vocab.path {
            Some(p) => self.resolve(p),
            None => self.output_dir().join("vocab.txt"),
        }
    }

    /// Source specs with resolved paths; every file must exist.
    pub fn sources(&self) -> Result<Vec<SourceSpec>, CliError> {
        if self.config.data.sources.is_empty() {
            return Err(CliError::Config(
                "data.sources is empty: no corpus path configured".into(),
            ));
        }
        self.config
            .data
            .sources
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let path = self.resolve(&s.path);
                if !path.is_file() {
                    return Err(CliError::Config(format!(
                        "data.sources[{i}].path: {} does not exist",
                        path.display()
                    )));
                }
                Ok(SourceSpec { path, ..s.clone() })
            })
            .collect()
    }

    /// Resolved training settings for `stage`. Fine-tuning defaults to a
    /// tenth of the pre-training peak learning rate.
    pub fn train_config(&self, stage: Stage) -> Result<TrainConfig, CliError> {
        let c = &self.config;
        let s = match stage {
            Stage::Pretrain => &c.pretrain,
            Stage::Finetune => &c.finetune,
        };
        let pre_lr = c.pretrain.peak_lr.unwrap_or(1e-3);
        let adam = AdamWConfig::default();
        let loss = LossConfig {
            temperature: s.temperature.unwrap_or(DEFAULT_TEMPERATURE),
            variant: s.loss_variant.unwrap_or(LossVariant::Improved),
            dedupe_positive_in_z: s.dedupe_positive_in_z.unwrap_or(false),
        };
        let cfg = TrainConfig {
            stage,
            total_steps: s.total_steps.unwrap_or(500),
            peak_lr: s.peak_lr.unwrap_or(match stage {
                Stage::Pretrain => pre_lr,
                Stage::Finetune => pre_lr / 10.0,
            }),
            warmup_fraction: s.warmup_fraction.unwrap_or(0.05),
            batch_size: s.batch_size.unwrap_or(32),
            group_size: s.group_size.unwrap_or(DEFAULT_GROUP_SIZE),
            max_seq_len: s.max_seq_len.unwrap_or(match stage {
                Stage::Pretrain => 128,
                Stage::Finetune => 512,
            }),
            loss,
            alpha: s.alpha.unwrap_or(DEFAULT_ALPHA),
            seed: c.seed,
            weight_decay: s.weight_decay.unwrap_or(adam.weight_decay),
            beta1: s.beta1.unwrap_or(adam.beta1),
            beta2: s.beta2.unwrap_or(adam.beta2),
            eps: s.eps.unwrap_or(adam.eps),
            grad_clip: s.grad_clip,
        };
        let section = match stage {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        };
        cfg.validate()
            .map_err(|e| CliError::Config(format!("{section}: {e}")))?;
        if cfg.max_seq_len > c.encoder.max_seq_len {
            return Err(CliError::Config(format!(
                "{section}.max_seq_len {} exceeds encoder.max_seq_len {}",
                cfg.max_seq_len, c.encoder.max_seq_len
            )));
        }
        if stage == Stage::Pretrain && c.pretrain.checkpoint.is_some() {
            return Err(CliError::Config(
                "pretrain.checkpoint is not used; pre-training starts from scratch".into(),
            ));
        }
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical JSON form of the resolved config.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(&self.config).expect("config serialises");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn has_kind(&self, kind: SourceKind) -> bool {
        self.config.data.sources.iter().any(|s| s.kind == kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> toml::Table {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn overrides_create_and_replace() {
        let mut doc = table("seed = 1\n[pretrain]\nbatch_size = 8\n");
        apply_override(&mut doc, "pretrain.batch_size=4").unwrap();
        apply_override(&mut doc, "finetune.loss_variant=vanilla_infonce").unwrap();
        apply_override(&mut doc, "pretrain.alpha=0.0").unwrap();
        let cfg: RunConfig = toml::Value::Table(doc).try_into().unwrap();
        assert_eq!(cfg.pretrain.batch_size, Some(4));
        assert_eq!(cfg.pretrain.alpha, Some(0.0));
        assert_eq!(cfg.finetune.loss_variant, Some(LossVariant::VanillaInfonce));
        let mut doc = table("seed = 1\n");
        assert!(apply_override(&mut doc, "nonsense").is_err());
        assert!(apply_override(&mut doc, "seed.x=1").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let doc = table("[pretrain]\nbatch = 8\n");
        assert!(toml::Value::Table(doc).try_into::<RunConfig>().is_err());
    }

    #[test]
    fn finetune_lr_defaults_to_tenth() {
        let loaded = Loaded {
            config: toml::from_str("[pretrain]\npeak_lr = 0.002\n").unwrap(),
            base: PathBuf::new(),
        };
        let ft = loaded.train_config(Stage::Finetune).unwrap();
        assert!((ft.peak_lr - 0.0002).abs() < 1e-18);
        assert_eq!(ft.group_size, 16);
        assert_eq!(
            loaded.train_config(Stage::Pretrain).unwrap().max_seq_len,
            128
        );
    }

    #[test]
    fn task_names_validated() {
        let t = TaskSpec {
            task: "translation".into(),
            ..TaskSpec::default()
        };
        let msg = t.kind().unwrap_err().to_string();
        assert!(
            msg.contains("retrieval") && msg.contains("zero_shot"),
            "{msg}"
        );
    }
}
