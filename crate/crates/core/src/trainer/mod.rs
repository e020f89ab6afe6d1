//! Two-stage optimisation: contrastive pre-training on pairs, then
//! fine-tuning on triples with hard-negative groups.

mod adamw;
mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adamw::{adamw_step, clip_grad_norm, AdamWConfig, OptimizerState};
pub use checkpoint::{Checkpoint, CheckpointMeta, FORMAT_VERSION, MAGIC};

use crate::datapipe::{
    build_finetune_group, derive_seed, Batch, Records, Registry, Sampler, SourceKind, Stage,
    DEFAULT_ALPHA, DEFAULT_GROUP_SIZE,
};
use crate::encoder::{EncoderConfig, EncoderModel, TokenBatch, Vocabulary};
use crate::error::{Error, Result};
use crate::objectives::{contrastive_loss, LossConfig};
use crate::tensor::{Tape, Var};

const INIT_TAG: u64 = 3;
const GROUP_TAG: u64 = 4;

fn default_warmup() -> f64 {
    0.05
}
fn default_group() -> usize {
    DEFAULT_GROUP_SIZE
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_wd() -> f64 {
    AdamWConfig::default().weight_decay
}
fn default_beta1() -> f64 {
    AdamWConfig::default().beta1
}
fn default_beta2() -> f64 {
    AdamWConfig::default().beta2
}
fn default_eps() -> f64 {
    AdamWConfig::default().eps
}

/// Settings for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub total_steps: u64,
    pub peak_lr: f64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    pub batch_size: usize,
    /// Documents per query (positive first); pre-training always uses 1.
    #[serde(default = "default_group")]
    pub group_size: usize,
    pub max_seq_len: usize,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    /// Toy-scale pre-training defaults.
    pub fn pretrain(seed: u64) -> Self {
        Self {
            stage: Stage::Pretrain,
            total_steps: 500,
            peak_lr: 1e-3,
            warmup_fraction: default_warmup(),
            batch_size: 32,
            group_size: 1,
            max_seq_len: 128,
            loss: LossConfig::default(),
            alpha: DEFAULT_ALPHA,
            seed,
            weight_decay: default_wd(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            grad_clip: None,
        }
    }

    /// Fine-tuning settings derived from a pre-training config: a tenth of
    /// the peak learning rate, groups of 16, longer sequences.
    pub fn finetune_from(pretrain: &TrainConfig) -> Self {
        Self {
            stage: Stage::Finetune,
            peak_lr: pretrain.peak_lr / 10.0,
            group_size: DEFAULT_GROUP_SIZE,
            max_seq_len: 512,
            ..pretrain.clone()
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Group size actually used: pairs carry only their positive.
    pub fn effective_group_size(&self) -> usize {
        match self.stage {
            Stage::Pretrain => 1,
            Stage::Finetune => self.group_size,
        }
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_fraction * self.total_steps as f64).ceil() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!(
                "warmup_fraction must lie in (0, 1), got {}",
                self.warmup_fraction
            ));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return bad(format!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.group_size == 0 {
            return bad("group_size must be at least 1".into());
        }
        if self.max_seq_len < 2 {
            return bad(format!(
                "max_seq_len must be at least 2, got {}",
                self.max_seq_len
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if self.eps.is_nan()
            || self.eps <= 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return bad("eps must be positive and weight_decay non-negative".into());
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        self.loss.validate()
    }
}

/// Linear warm-up from 0 to `peak_lr` over the first `⌈warmup_fraction ·
/// total_steps⌉` steps, then linear decay to 0 at `total_steps`.
pub fn lr_at(step: u64, config: &TrainConfig) -> Result<f64> {
    let total = config.total_steps;
    if step > total {
        return Err(Error::Input(format!(
            "step {step} beyond total_steps {total}"
        )));
    }
    let warm = config.warmup_steps();
    let peak = config.peak_lr;
    Ok(if step >= total {
        0.0
    } else if step <= warm {
        peak * step as f64 / warm as f64
    } else {
        peak * (total - step) as f64 / (total - warm) as f64
    })
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: Stage,
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Query texts and their flattened document groups for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTexts {
    pub queries: Vec<String>,
    pub docs: Vec<String>,
    pub group_size: usize,
}

/// Turns a batch into texts; triple records are packed into groups drawing
/// random negatives from their source corpus.
pub fn batch_texts(
    batch: &Batch,
    registry: &Registry,
    group_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BatchTexts> {
    match &batch.records {
        Records::Pairs(v) => Ok(BatchTexts {
            queries: v.iter().map(|r| r.query.clone()).collect(),
            docs: v.iter().map(|r| r.doc.clone()).collect(),
            group_size: 1,
        }),
        Records::Triples(v) => {
            let corpus = &registry.source(batch.source_index).corpus;
            let mut docs = Vec::with_capacity(v.len() * group_size);
            for r in v {
                docs.extend(build_finetune_group(r, corpus, group_size, rng)?);
            }
            Ok(BatchTexts {
                queries: v.iter().map(|r| r.query.clone()).collect(),
                docs,
                group_size,
            })
        }
    }
}

/// Records the loss of `texts` on `tape`; returns the loss and the
/// parameter variables.
pub fn record_loss(
    tape: &mut Tape,
    model: &EncoderModel,
    vocab: &Vocabulary,
    texts: &BatchTexts,
    max_seq_len: usize,
    loss: &LossConfig,
) -> Result<(Var, Vec<Var>)> {
    let n = texts.queries.len();
    let all: Vec<&str> = texts
        .queries
        .iter()
        .chain(&texts.docs)
        .map(String::as_str)
        .collect();
    let tokens = TokenBatch::from_texts(&all, vocab, max_seq_len)?;
    let fwd = model.forward(tape, &tokens)?;
    let d = model.config().embed_dim;
    let q = tape.slice(fwd.embeddings, 0, n, 0, d)?;
    let docs = tape.slice(fwd.embeddings, n, texts.docs.len(), 0, d)?;
    let l = contrastive_loss(tape, q, docs, texts.group_size, loss)?;
    Ok((l, fwd.params))
}

/// Stepwise driver of one training stage.
#[derive(Debug, Clone)]
pub struct StageRunner {
    config: TrainConfig,
    vocab: Vocabulary,
    registry: Registry,
    model: EncoderModel,
    optimizer: OptimizerState,
    sampler: Sampler,
    group_rng: ChaCha8Rng,
    step: u64,
    log: Vec<StepRecord>,
}

impl StageRunner {
    /// Prepares a stage; `prior_log` carries the log of earlier stages.
    /// Only sources matching the stage's record kind are used.
    pub fn new(
        config: TrainConfig,
        vocab: Vocabulary,
        registry: &Registry,
        model: EncoderModel,
        prior_log: Vec<StepRecord>,
    ) -> Result<Self> {
        config.validate()?;
        if config.max_seq_len > model.config().max_seq_len {
            return Err(Error::Input(format!(
                "stage max_seq_len {} exceeds encoder max_seq_len {}",
                config.max_seq_len,
                model.config().max_seq_len
            )));
        }
        if vocab.len() != model.config().vocab_size {
            return Err(Error::Input(format!(
                "vocabulary has {} tokens, encoder expects {}",
                vocab.len(),
                model.config().vocab_size
            )));
        }
        let kind = match config.stage {
            Stage::Pretrain => SourceKind::Pair,
            Stage::Finetune => SourceKind::Triple,
        };
        let registry = registry.filter_kind(kind);
        if registry.is_empty() {
            return Err(Error::Input(format!(
                "{:?} stage needs at least one {kind:?} source",
                config.stage
            )));
        }
        let sampler = Sampler::new(
            &registry.sizes(),
            config.alpha,
            derive_seed(config.seed, &[config.stage as u64]),
        )?;
        let group_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[GROUP_TAG]));
        let optimizer = OptimizerState::new(model.params());
        Ok(Self {
            config,
            vocab,
            registry,
            model,
            optimizer,
            sampler,
            group_rng,
            step: 0,
            log: prior_log,
        })
    }

    pub fn model(&self) -> &EncoderModel {
        &self.model
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.total_steps
    }

    /// Texts of the next batch without advancing any state.
    pub fn peek_texts(&self) -> Result<BatchTexts> {
        let mut sampler = self.sampler.clone();
        let mut rng = self.group_rng.clone();
        let batch = sampler.next_batch(&self.registry, self.config.batch_size)?;
        batch_texts(
            &batch,
            &self.registry,
            self.config.effective_group_size(),
            &mut rng,
        )
    }

    /// Runs one optimisation step and returns its log row.
    pub fn step(&mut self) -> Result<StepRecord> {
        if self.is_done() {
            return Err(Error::Contract("stage already finished".into()));
        }
        let batch = self
            .sampler
            .next_batch(&self.registry, self.config.batch_size)?;
        let texts = batch_texts(
            &batch,
            &self.registry,
            self.config.effective_group_size(),
            &mut self.group_rng,
        )?;
        let mut tape = Tape::new();
        let (loss, vars) = record_loss(
            &mut tape,
            &self.model,
            &self.vocab,
            &texts,
            self.config.max_seq_len,
            &self.config.loss,
        )?;
        let value = tape.item(loss);
        if !value.is_finite() {
            return Err(Error::Domain(format!(
                "loss is {value} at step {}",
                self.step
            )));
        }
        tape.backward(loss)?;
        self.model.zero_grad();
        self.model.accumulate_grads(&tape, &vars)?;
        if let Some(c) = self.config.grad_clip {
            clip_grad_norm(self.model.params_mut(), c);
        }
        let lr = lr_at(self.step, &self.config)?;
        let names = self.model.names().to_vec();
        adamw_step(
            self.model.params_mut(),
            &names,
            &mut self.optimizer,
            lr,
            &self.config.adamw(),
        )?;
        self.step += 1;
        let rec = StepRecord {
            stage: self.config.stage,
            step: self.step,
            loss: value,
            lr,
        };
        self.log.push(rec);
        Ok(rec)
    }

    pub fn run(mut self) -> Result<Checkpoint> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.into_checkpoint())
    }

    pub fn into_checkpoint(mut self) -> Checkpoint {
        self.model.zero_grad();
        let total = self.registry.total_records() as f64;
        let meta = CheckpointMeta {
            format_version: FORMAT_VERSION,
            stage: Some(self.config.stage),
            step: self.step,
            seed: self.config.seed,
            encoder: self.model.config().clone(),
            vocab: self.vocab.tokens().to_vec(),
            train: Some(self.config.clone()),
            sampler: Some(self.sampler.state().clone()),
            epoch_fraction: self.step as f64 * self.config.batch_size as f64 / total,
            optimizer_step: self.optimizer.step,
            log: self.log,
        };
        Checkpoint {
            meta,
            model: self.model,
            optimizer: Some(self.optimizer),
        }
    }
}

/// Randomly initialised encoder for `config`, seeded from the run seed.
pub fn init_model(encoder: EncoderConfig, seed: u64) -> Result<EncoderModel> {
    EncoderModel::init(encoder, derive_seed(seed, &[INIT_TAG]))
}

/// Contrastive pre-training from random initialisation.
pub fn pretrain(
    config: &TrainConfig,
    encoder: &EncoderConfig,
    vocab: &Vocabulary,
    registry: &Registry,
) -> Result<Checkpoint> {
    if config.stage != Stage::Pretrain {
        return Err(Error::Input("pretrain requires stage = pretrain".into()));
    }
    let model = init_model(encoder.clone(), config.seed)?;
    StageRunner::new(config.clone(), vocab.clone(), registry, model, Vec::new())?.run()
}

/// Fine-tuning from a checkpoint with fresh optimiser state.
pub fn finetune(
    config: &TrainConfig,
    checkpoint: &Checkpoint,
    registry: &Registry,
) -> Result<Checkpoint> {
    if config.stage != Stage::Finetune {
        return Err(Error::Input("finetune requires stage = finetune".into()));
    }
    let vocab = Vocabulary::from_tokens(checkpoint.meta.vocab.clone())?;
    StageRunner::new(
        config.clone(),
        vocab,
        registry,
        checkpoint.model.clone(),
        checkpoint.meta.log.clone(),
    )?
    .run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(total: u64) -> TrainConfig {
        TrainConfig {
            total_steps: total,
            peak_lr: 0.1,
            ..TrainConfig::pretrain(0)
        }
    }

    #[test]
    fn schedule_endpoints() {
        for total in [1u64, 2, 10, 20, 21, 100, 1000, 1001] {
            let c = cfg(total);
            assert_eq!(lr_at(0, &c).unwrap(), 0.0);
            assert_eq!(lr_at(total, &c).unwrap(), 0.0);
            if c.warmup_steps() < total {
                assert_eq!(lr_at(c.warmup_steps(), &c).unwrap(), 0.1);
                let max = (0..=total)
                    .map(|s| lr_at(s, &c).unwrap())
                    .fold(0.0, f64::max);
                assert_eq!(max, 0.1);
            }
        }
        assert!(lr_at(11, &cfg(10)).is_err());
    }

    #[test]
    fn schedule_is_piecewise_linear() {
        let c = cfg(200);
        assert_eq!(c.warmup_steps(), 10);
        assert!((lr_at(5, &c).unwrap() - 0.05).abs() < 1e-15);
        assert!((lr_at(105, &c).unwrap() - 0.05).abs() < 1e-15);
        for s in 1..200 {
            let (a, b, m) = (
                lr_at(s - 1, &c).unwrap(),
                lr_at(s + 1, &c).unwrap(),
                lr_at(s, &c).unwrap(),
            );
            if s != 10 {
                assert!((m - (a + b) / 2.0).abs() < 1e-15, "step {s}");
            }
        }
    }

    #[test]
    fn finetune_defaults_follow_pretrain() {
        let p = TrainConfig::pretrain(5);
        let f = TrainConfig::finetune_from(&p);
        assert_eq!(f.peak_lr, p.peak_lr / 10.0);
        assert_eq!(f.group_size, 16);
        assert_eq!(f.stage, Stage::Finetune);
        assert_eq!(f.seed, 5);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(10);
        c.warmup_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = cfg(10);
        c.batch_size = 0;
        assert!(c.validate().is_err());
        assert!(cfg(0).validate().is_ok());
    }
}
