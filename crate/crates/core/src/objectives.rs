//! Cosine similarity and the contrastive objectives.
//!
//! All losses are recorded on a [`Tape`] so they can be differentiated
//! through the encoder. Every partition function is assembled into a single
//! logit row per query and reduced with one `logsumexp`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_TEMPERATURE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Query-to-document InfoNCE over in-batch (and group) documents.
    VanillaInfonce,
    /// Bidirectional loss whose partition adds query-query, reverse
    /// query-document and document-document terms.
    Improved,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "LossConfig::default_variant")]
    pub variant: LossVariant,
    /// Drop the `j = i` term of the reverse query-document sum, so the
    /// positive appears once in the partition instead of twice.
    #[serde(default)]
    pub dedupe_positive_in_z: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            variant: LossVariant::Improved,
            dedupe_positive_in_z: false,
        }
    }
}

impl LossConfig {
    fn default_variant() -> LossVariant {
        LossVariant::Improved
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Input(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_similarity", &[a.len()], &[b.len()]));
    }
    if a.is_empty() {
        return Err(Error::Domain("cosine similarity of empty vectors".into()));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity matrix `[m, n]` between the rows of `a[m,d]` and `b[n,d]`.
pub fn cosine_matrix(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let an = tape.normalize_rows(a)?;
    let bn = tape.normalize_rows(b)?;
    let bt = tape.transpose(bn)?;
    tape.matmul(an, bt)
}

fn as_rows(tape: &mut Tape, v: Var) -> Result<Var> {
    match tape.shape(v).len() {
        1 => {
            let n = tape.shape(v)[0];
            tape.reshape(v, vec![1, n])
        }
        2 => Ok(v),
        _ => Err(Error::Contract(format!(
            "expected a vector or matrix, got shape {:?}",
            tape.shape(v)
        ))),
    }
}

/// `mean_i(logsumexp(logits_i) - logits_i[pos_i])` where both logits and
/// positives are gathered from the flat value of `pool`.
fn softmax_cross_entropy(
    tape: &mut Tape,
    pool: Var,
    rows: Vec<Vec<usize>>,
    positives: Vec<usize>,
    temperature: f64,
) -> Result<Var> {
    let n = rows.len();
    let width = rows[0].len();
    debug_assert!(rows.iter().all(|r| r.len() == width));
    let logits = tape.gather(pool, rows.into_iter().flatten().collect(), vec![n, width])?;
    let logits = tape.scale(logits, 1.0 / temperature);
    let lse = tape.logsumexp(logits, 1)?;
    let pos = tape.gather(pool, positives, vec![n])?;
    let pos = tape.scale(pos, 1.0 / temperature);
    let per_query = tape.sub(lse, pos)?;
    Ok(tape.mean(per_query))
}

/// Single-query InfoNCE: `-log(e^{s⁺/τ} / (e^{s⁺/τ} + Σ e^{s⁻/τ}))`.
///
/// `negatives` may be `None` (the loss is then exactly zero).
pub fn infonce_loss(
    tape: &mut Tape,
    query: Var,
    positive: Var,
    negatives: Option<Var>,
    temperature: f64,
) -> Result<Var> {
    LossConfig {
        temperature,
        ..LossConfig::default()
    }
    .validate()?;
    let q = as_rows(tape, query)?;
    let p = as_rows(tape, positive)?;
    let docs = match negatives {
        Some(n) => {
            let n = as_rows(tape, n)?;
            tape.concat_rows(&[p, n])?
        }
        None => p,
    };
    if tape.shape(q)[0] != 1 || tape.shape(p)[0] != 1 {
        return Err(Error::Contract(
            "infonce_loss takes a single query and positive".into(),
        ));
    }
    let sims = cosine_matrix(tape, q, docs)?;
    let width = tape.shape(sims)[1];
    softmax_cross_entropy(tape, sims, vec![(0..width).collect()], vec![0], temperature)
}

/// Improved bidirectional contrastive loss over aligned rows of `queries`
/// and `docs` (both `[n, d]`).
pub fn improved_contrastive_loss(
    tape: &mut Tape,
    queries: Var,
    docs: Var,
    config: &LossConfig,
) -> Result<Var> {
    if tape.shape(queries) != tape.shape(docs) {
        return Err(Error::shape(
            "improved_contrastive_loss",
            tape.shape(queries),
            tape.shape(docs),
        ));
    }
    finetune_group_loss(tape, queries, docs, 1, config)
}

/// Contrastive loss for queries `[n, d]` against grouped documents
/// `[n * group_size, d]`, where rows `i*G .. (i+1)*G` form query `i`'s group
/// and row `i*G` is its positive. The configured variant decides the
/// partition:
///
/// * vanilla: every document in the batch (all groups), query→document only.
/// * improved: every document in the batch, other queries, every query
///   against this positive, and every other positive against this positive.
///
/// With `group_size == 1` the improved variant is exactly
/// [`improved_contrastive_loss`].
pub fn finetune_group_loss(
    tape: &mut Tape,
    queries: Var,
    docs: Var,
    group_size: usize,
    config: &LossConfig,
) -> Result<Var> {
    config.validate()?;
    if group_size == 0 {
        return Err(Error::Input("group must hold at least the positive".into()));
    }
    let (n, d) = match tape.shape(queries) {
        [n, d] => (*n, *d),
        s => return Err(Error::Contract(format!("queries must be 2-d, got {s:?}"))),
    };
    if tape.shape(docs) != [n * group_size, d] {
        return Err(Error::shape(
            "finetune_group_loss",
            tape.shape(queries),
            tape.shape(docs),
        ));
    }
    let g = group_size;
    let nd = n * g;
    let qn = tape.normalize_rows(queries)?;
    let dn = tape.normalize_rows(docs)?;
    let dt = tape.transpose(dn)?;
    let s_qd = tape.matmul(qn, dt)?;
    let pos_idx: Vec<usize> = (0..n).map(|i| i * nd + i * g).collect();

    if config.variant == LossVariant::VanillaInfonce {
        let rows = (0..n).map(|i| (i * nd..(i + 1) * nd).collect()).collect();
        return softmax_cross_entropy(tape, s_qd, rows, pos_idx, config.temperature);
    }

    let pn = if g == 1 {
        dn
    } else {
        let idx = (0..n)
            .flat_map(|i| (0..d).map(move |j| i * g * d + j))
            .collect();
        tape.gather(dn, idx, vec![n, d])?
    };
    let qt = tape.transpose(qn)?;
    let pt = tape.transpose(pn)?;
    let s_qq = tape.matmul(qn, qt)?;
    let s_qp = tape.matmul(qn, pt)?;
    let s_pp = tape.matmul(pn, pt)?;

    let flat = |tape: &mut Tape, v: Var| {
        let len = tape.value(v).len();
        tape.reshape(v, vec![len, 1])
    };
    let parts = [
        flat(tape, s_qd)?,
        flat(tape, s_qq)?,
        flat(tape, s_qp)?,
        flat(tape, s_pp)?,
    ];
    let pool = tape.concat_rows(&parts)?;
    let (o_qq, o_qp, o_pp) = (n * nd, n * nd + n * n, n * nd + 2 * n * n);

    let rows = (0..n)
        .map(|i| {
            let mut row: Vec<usize> = (i * nd..(i + 1) * nd).collect();
            row.extend((0..n).filter(|&j| j != i).map(|j| o_qq + i * n + j));
            row.extend(
                (0..n)
                    .filter(|&j| !(config.dedupe_positive_in_z && j == i))
                    .map(|j| o_qp + j * n + i),
            );
            row.extend((0..n).filter(|&j| j != i).map(|j| o_pp + j * n + i));
            row
        })
        .collect();
    softmax_cross_entropy(tape, pool, rows, pos_idx, config.temperature)
}

/// Dispatches on the configured variant for grouped batches.
pub fn contrastive_loss(
    tape: &mut Tape,
    queries: Var,
    docs: Var,
    group_size: usize,
    config: &LossConfig,
) -> Result<Var> {
    finetune_group_loss(tape, queries, docs, group_size, config)
}

/// Evaluates a loss on plain tensors without keeping the tape.
pub fn loss_value<F>(inputs: &[&Tensor], f: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &vars)?;
    Ok(tape.item(loss))
}
