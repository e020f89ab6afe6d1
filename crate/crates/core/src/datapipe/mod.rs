//! Dataset ingestion, exact-match de-duplication, size-aware source
//! sampling and fine-tuning group construction.

mod records;
mod registry;
mod sampler;

use rand::seq::index;
use rand::Rng;

pub use records::{
    dedup_exact, dedup_exact_triples, dedup_records, load_source, read_jsonl, write_jsonl,
    PairRecord, Records, SourceKind, TripleRecord,
};
pub use registry::{Registry, Source, SourceSpec};
pub use sampler::{
    derive_seed, sampling_probs, Batch, Sampler, SamplerState, Stage, DEFAULT_ALPHA,
};

use crate::error::{Error, Result};

pub const DEFAULT_GROUP_SIZE: usize = 16;

/// Packs `[pos, hard negatives..., random negatives...]` into exactly
/// `group_size` texts.
///
/// Hard negatives are taken in file order and truncated at `group_size - 1`.
/// Remaining slots are filled with distinct texts drawn uniformly from
/// `corpus`, never byte-equal to the positive.
pub fn build_finetune_group<R: Rng + ?Sized>(
    record: &TripleRecord,
    corpus: &[String],
    group_size: usize,
    rng: &mut R,
) -> Result<Vec<String>> {
    if group_size == 0 {
        return Err(Error::Input("group_size must be at least 1".into()));
    }
    let mut group = Vec::with_capacity(group_size);
    group.push(record.pos.clone());
    group.extend(record.negs.iter().take(group_size - 1).cloned());
    let fill = group_size - group.len();
    if fill > 0 {
        let eligible: Vec<&String> = corpus.iter().filter(|t| **t != record.pos).collect();
        if eligible.len() < fill {
            return Err(Error::Input(format!(
                "need {fill} random negatives but the corpus offers only {}",
                eligible.len()
            )));
        }
        for i in index::sample(rng, eligible.len(), fill) {
            group.push(eligible[i].clone());
        }
    }
    Ok(group)
}
