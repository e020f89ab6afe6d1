use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::{tokenize, Vocabulary};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

fn default_init_std() -> f64 {
    0.02
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    /// Whether the BOS position takes part in mean pooling.
    #[serde(default = "default_true")]
    pub pool_include_bos: bool,
}

impl EncoderConfig {
    /// Two layers, width 32: small enough for CPU training in seconds.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 32,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 64,
            max_seq_len: 64,
            init_std: default_init_std(),
            pool_include_bos: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if self.vocab_size < 4 {
            return bad(format!(
                "vocab_size must be at least 4, got {}",
                self.vocab_size
            ));
        }
        if self.embed_dim == 0 || self.num_heads == 0 || self.ffn_dim == 0 {
            return bad("embed_dim, num_heads and ffn_dim must be positive".into());
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.max_seq_len < 2 {
            return bad(format!(
                "max_seq_len must be at least 2, got {}",
                self.max_seq_len
            ));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad(format!("init_std must be positive, got {}", self.init_std));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Parameter shapes in canonical order, with their names.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.embed_dim, self.ffn_dim);
        let mut out = vec![
            ("embeddings.token".to_string(), vec![self.vocab_size, d]),
            ("embeddings.position".to_string(), vec![self.max_seq_len, d]),
        ];
        for l in 0..self.num_layers {
            for (name, shape) in [
                ("ln1.gamma", vec![d]),
                ("ln1.beta", vec![d]),
                ("attn.wq", vec![d, d]),
                ("attn.bq", vec![d]),
                ("attn.wk", vec![d, d]),
                ("attn.bk", vec![d]),
                ("attn.wv", vec![d, d]),
                ("attn.bv", vec![d]),
                ("attn.wo", vec![d, d]),
                ("attn.bo", vec![d]),
                ("ln2.gamma", vec![d]),
                ("ln2.beta", vec![d]),
                ("ffn.w1", vec![d, f]),
                ("ffn.b1", vec![f]),
                ("ffn.w2", vec![f, d]),
                ("ffn.b2", vec![d]),
            ] {
                out.push((format!("layers.{l}.{name}"), shape));
            }
        }
        out.push(("final_ln.gamma".into(), vec![d]));
        out.push(("final_ln.beta".into(), vec![d]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

const PER_LAYER: usize = 16;

#[derive(Clone, Copy)]
enum LayerParam {
    Ln1Gamma = 0,
    Ln1Beta,
    Wq,
    Bq,
    Wk,
    Bk,
    Wv,
    Bv,
    Wo,
    Bo,
    Ln2Gamma,
    Ln2Beta,
    W1,
    B1,
    W2,
    B2,
}

/// Padded token ids `[rows, len]` with a 0/1 attention mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    ids: Vec<u32>,
    mask: Vec<u8>,
    rows: usize,
    len: usize,
}

impl TokenBatch {
    pub fn new(ids: Vec<u32>, mask: Vec<u8>, rows: usize, len: usize) -> Result<Self> {
        if rows == 0 || len == 0 || ids.len() != rows * len || mask.len() != rows * len {
            return Err(Error::Contract(format!(
                "token batch [{rows}, {len}] does not match {} ids / {} mask entries",
                ids.len(),
                mask.len()
            )));
        }
        for (r, row) in mask.chunks(len).enumerate() {
            if row.iter().any(|&m| m > 1) {
                return Err(Error::Contract(format!("mask row {r} is not 0/1")));
            }
            if row.iter().all(|&m| m == 0) {
                return Err(Error::Contract(format!(
                    "mask row {r} has no active position"
                )));
            }
        }
        Ok(Self {
            ids,
            mask,
            rows,
            len,
        })
    }

    /// Tokenizes each text with BOS prefix and truncation at `max_len`, then
    /// pads every row to the longest one.
    pub fn from_texts<S: AsRef<str>>(
        texts: &[S],
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::Contract("empty text batch".into()));
        }
        let encoded = texts
            .iter()
            .map(|t| tokenize(t.as_ref(), vocab, max_len))
            .collect::<Result<Vec<_>>>()?;
        let len = encoded
            .iter()
            .map(|(_, m)| m.iter().filter(|&&x| x == 1).count())
            .max()
            .unwrap_or(1);
        let mut ids = Vec::with_capacity(texts.len() * len);
        let mut mask = Vec::with_capacity(texts.len() * len);
        for (i, m) in encoded {
            ids.extend_from_slice(&i[..len]);
            mask.extend_from_slice(&m[..len]);
        }
        Self::new(ids, mask, texts.len(), len)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn mask_row(&self, r: usize) -> &[u8] {
        &self.mask[r * self.len..(r + 1) * self.len]
    }
}

/// Handles produced by [`EncoderModel::forward`].
#[derive(Debug, Clone)]
pub struct EncoderForward {
    /// Pooled text vectors `[rows, d]`.
    pub embeddings: Var,
    /// Final contextual token states `[rows * len, d]`.
    pub hidden: Var,
    /// Parameter leaves in [`EncoderModel::params`] order.
    pub params: Vec<Var>,
}

/// Pre-layer-norm transformer encoder with learned positions and masked mean pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    config: EncoderConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl EncoderModel {
    /// Truncated-normal weights (cut at two standard deviations), zero biases,
    /// unit layer-norm gains.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = config.init_std;
        let normal = Normal::new(0.0, std).map_err(|e| Error::Input(e.to_string()))?;
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in config.param_layout() {
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with("gamma") {
                vec![1.0; numel]
            } else if shape.len() == 1 {
                vec![0.0; numel]
            } else {
                (0..numel)
                    .map(|_| loop {
                        let z = normal.sample(&mut rng);
                        if z.abs() <= 2.0 * std {
                            break z;
                        }
                    })
                    .collect()
            };
            names.push(name);
            params.push(Tensor::new(shape, data)?.with_grad());
        }
        Ok(Self {
            config,
            names,
            params,
        })
    }

    /// Rebuilds a model from named tensors, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_named(config: EncoderConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = config.param_layout();
        if layout.len() != named.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut params = Vec::with_capacity(named.len());
        for ((want_name, want_shape), (name, mut t)) in layout.into_iter().zip(named) {
            if want_name != name || want_shape != t.shape() {
                return Err(Error::Format(format!(
                    "parameter {name} {:?} does not match expected {want_name} {want_shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Format(format!(
                    "parameter {name} holds non-finite values"
                )));
            }
            t.set_requires_grad(true);
            names.push(name);
            params.push(t);
        }
        Ok(Self {
            config,
            names,
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Moves gradients computed by the last backward pass into the parameters.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &[Var]) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            tape.accumulate_into(v, p)?;
        }
        Ok(())
    }

    fn layer(&self, vars: &[Var], l: usize, p: LayerParam) -> Var {
        vars[2 + l * PER_LAYER + p as usize]
    }

    /// Records the encoder forward pass for `batch` on `tape`.
    pub fn forward(&self, tape: &mut Tape, batch: &TokenBatch) -> Result<EncoderForward> {
        let cfg = &self.config;
        let (rows, len, d) = (batch.rows(), batch.len(), cfg.embed_dim);
        if len > cfg.max_seq_len {
            return Err(Error::Input(format!(
                "sequence length {len} exceeds max_seq_len {}",
                cfg.max_seq_len
            )));
        }
        if let Some(bad) = batch
            .ids()
            .iter()
            .find(|&&id| id as usize >= cfg.vocab_size)
        {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocabulary of {}",
                cfg.vocab_size
            )));
        }
        let vars: Vec<Var> = self.params.iter().map(|p| tape.leaf(p)).collect();
        let n_tok = rows * len;

        let tok_idx: Vec<usize> = batch
            .ids()
            .iter()
            .flat_map(|&id| (0..d).map(move |j| id as usize * d + j))
            .collect();
        let tok = tape.gather(vars[0], tok_idx, vec![n_tok, d])?;
        let pos_idx: Vec<usize> = (0..rows)
            .flat_map(|_| 0..len)
            .flat_map(|p| (0..d).map(move |j| p * d + j))
            .collect();
        let pos = tape.gather(vars[1], pos_idx, vec![n_tok, d])?;
        let mut x = tape.add(tok, pos)?;

        let key_masks: Vec<Vec<bool>> = (0..rows)
            .map(|r| batch.mask_row(r).iter().map(|&m| m == 1).collect())
            .collect();
        let (heads, hd) = (cfg.num_heads, cfg.head_dim());
        let att_scale = 1.0 / (hd as f64).sqrt();

        for l in 0..cfg.num_layers {
            let lp = |p| self.layer(&vars, l, p);
            let h =
                tape.layer_norm(x, lp(LayerParam::Ln1Gamma), lp(LayerParam::Ln1Beta), LN_EPS)?;
            let q = self.linear(tape, h, lp(LayerParam::Wq), lp(LayerParam::Bq))?;
            let k = self.linear(tape, h, lp(LayerParam::Wk), lp(LayerParam::Bk))?;
            let v = self.linear(tape, h, lp(LayerParam::Wv), lp(LayerParam::Bv))?;
            let mut seqs = Vec::with_capacity(rows);
            for (r, key_mask) in key_masks.iter().enumerate() {
                let mut head_out = Vec::with_capacity(heads);
                for hh in 0..heads {
                    let qs = tape.slice(q, r * len, len, hh * hd, hd)?;
                    let ks = tape.slice(k, r * len, len, hh * hd, hd)?;
                    let vs = tape.slice(v, r * len, len, hh * hd, hd)?;
                    let kt = tape.transpose(ks)?;
                    let scores = tape.matmul(qs, kt)?;
                    let scores = tape.scale(scores, att_scale);
                    let probs = tape.masked_softmax(scores, key_mask)?;
                    head_out.push(tape.matmul(probs, vs)?);
                }
                seqs.push(if heads == 1 {
                    head_out[0]
                } else {
                    tape.concat_cols(&head_out)?
                });
            }
            let ctx = if rows == 1 {
                seqs[0]
            } else {
                tape.concat_rows(&seqs)?
            };
            let attn = self.linear(tape, ctx, lp(LayerParam::Wo), lp(LayerParam::Bo))?;
            x = tape.add(x, attn)?;

            let h =
                tape.layer_norm(x, lp(LayerParam::Ln2Gamma), lp(LayerParam::Ln2Beta), LN_EPS)?;
            let f = self.linear(tape, h, lp(LayerParam::W1), lp(LayerParam::B1))?;
            let f = tape.gelu(f);
            let f = self.linear(tape, f, lp(LayerParam::W2), lp(LayerParam::B2))?;
            x = tape.add(x, f)?;
        }
        let n_params = vars.len();
        let hidden = tape.layer_norm(x, vars[n_params - 2], vars[n_params - 1], LN_EPS)?;

        let weights = self.pooling_weights(batch);
        let pool = tape.constant(vec![rows, n_tok], weights)?;
        let embeddings = tape.matmul(pool, hidden)?;
        Ok(EncoderForward {
            embeddings,
            hidden,
            params: vars,
        })
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    /// Block-diagonal `[rows, rows * len]` matrix averaging each row's
    /// active positions.
    pub fn pooling_weights(&self, batch: &TokenBatch) -> Vec<f64> {
        let (rows, len) = (batch.rows(), batch.len());
        let mut w = vec![0.0; rows * rows * len];
        for r in 0..rows {
            let mut active: Vec<f64> = batch.mask_row(r).iter().map(|&m| f64::from(m)).collect();
            let others = active[1..].iter().any(|&m| m > 0.0);
            if !self.config.pool_include_bos && others {
                active[0] = 0.0;
            }
            let total: f64 = active.iter().sum();
            for (i, a) in active.iter().enumerate() {
                w[r * rows * len + r * len + i] = a / total;
            }
        }
        w
    }

    /// Inference-only embedding of a token batch as a `[rows, d]` tensor.
    pub fn encode(&self, batch: &TokenBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, batch)?;
        Ok(tape.to_tensor(out.embeddings))
    }

    /// Embeds raw texts in chunks of `chunk` rows.
    pub fn embed_texts<S: AsRef<str>>(
        &self,
        vocab: &Vocabulary,
        texts: &[S],
        max_len: usize,
        chunk: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for part in texts.chunks(chunk.max(1)) {
            let batch = TokenBatch::from_texts(part, vocab, max_len)?;
            let emb = self.encode(&batch)?;
            out.extend((0..emb.rows()).map(|r| emb.row(r).to_vec()));
        }
        Ok(out)
    }
}
