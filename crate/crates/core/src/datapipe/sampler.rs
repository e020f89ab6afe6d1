use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::records::Records;
use super::registry::Registry;
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Multinomial source weights `p_i = n_i^α / Σ_j n_j^α`.
pub fn sampling_probs(sizes: &[usize], alpha: f64) -> Result<Vec<f64>> {
    if sizes.is_empty() {
        return Err(Error::Input("no data sources to sample from".into()));
    }
    if let Some(pos) = sizes.iter().position(|&n| n == 0) {
        return Err(Error::Input(format!("source {pos} has no records")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Input(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let weights: Vec<f64> = sizes.iter().map(|&n| (n as f64).powf(alpha)).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

/// Records drawn from a single source.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub source: String,
    pub source_index: usize,
    pub stage: Stage,
    pub records: Records,
}

/// Serialisable sampler position: everything needed to resume the exact
/// batch stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    pub alpha: f64,
    pub probs: Vec<f64>,
    pub seed: u64,
    /// Word position of the source-choice RNG stream.
    pub draw_position: u128,
    /// Next unread position in each source's current permutation.
    pub cursors: Vec<usize>,
    /// Number of completed passes over each source.
    pub epochs: Vec<u64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a tag path into an independent stream seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Source sampler with per-source shuffled streams.
///
/// Each source is read through a permutation seeded by `(seed, source,
/// epoch)`; on exhaustion the next epoch's permutation takes over, so a batch
/// may straddle two passes.
#[derive(Debug, Clone)]
pub struct Sampler {
    state: SamplerState,
    rng: ChaCha8Rng,
    choice: WeightedIndex<f64>,
    perms: Vec<(u64, Vec<usize>)>,
}

impl Sampler {
    pub fn new(sizes: &[usize], alpha: f64, seed: u64) -> Result<Self> {
        let probs = sampling_probs(sizes, alpha)?;
        let state = SamplerState {
            alpha,
            probs,
            seed,
            draw_position: 0,
            cursors: vec![0; sizes.len()],
            epochs: vec![0; sizes.len()],
        };
        Self::from_state(state, sizes)
    }

    /// Resumes from a saved state; `sizes` must match the registry the state
    /// was produced with.
    pub fn from_state(state: SamplerState, sizes: &[usize]) -> Result<Self> {
        let probs = sampling_probs(sizes, state.alpha)?;
        if state.cursors.len() != sizes.len() || state.epochs.len() != sizes.len() {
            return Err(Error::Input(format!(
                "sampler state covers {} sources, registry has {}",
                state.cursors.len(),
                sizes.len()
            )));
        }
        if probs
            .iter()
            .zip(&state.probs)
            .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(Error::Input(
                "sampler state probabilities do not match source sizes".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(state.seed, &[0]));
        rng.set_word_pos(state.draw_position);
        let choice = WeightedIndex::new(&state.probs).map_err(|e| Error::Input(e.to_string()))?;
        let perms = sizes
            .iter()
            .enumerate()
            .map(|(s, &n)| {
                (
                    state.epochs[s],
                    permutation(state.seed, s, state.epochs[s], n),
                )
            })
            .collect();
        Ok(Self {
            state,
            rng,
            choice,
            perms,
        })
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    /// Draws a source index from the categorical distribution.
    pub fn draw_source(&mut self) -> usize {
        let s = self.choice.sample(&mut self.rng);
        self.state.draw_position = self.rng.get_word_pos();
        s
    }

    /// Next `count` record indices of source `s`.
    pub fn take(&mut self, s: usize, count: usize) -> Vec<usize> {
        let n = self.perms[s].1.len();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.state.cursors[s] == n {
                self.state.cursors[s] = 0;
                self.state.epochs[s] += 1;
                let epoch = self.state.epochs[s];
                self.perms[s] = (epoch, permutation(self.state.seed, s, epoch, n));
            }
            out.push(self.perms[s].1[self.state.cursors[s]]);
            self.state.cursors[s] += 1;
        }
        out
    }

    pub fn next_batch(&mut self, registry: &Registry, batch_size: usize) -> Result<Batch> {
        if batch_size == 0 {
            return Err(Error::Input("batch_size must be at least 1".into()));
        }
        if registry.is_empty() {
            return Err(Error::Input("registry is empty".into()));
        }
        if registry.len() != self.perms.len() {
            return Err(Error::Contract(
                "sampler built for a different registry".into(),
            ));
        }
        let s = self.draw_source();
        let idx = self.take(s, batch_size);
        let source = registry.source(s);
        Ok(Batch {
            source: source.spec.name.clone(),
            source_index: s,
            stage: match source.records.kind() {
                super::SourceKind::Pair => Stage::Pretrain,
                super::SourceKind::Triple => Stage::Finetune,
            },
            records: source.records.select(&idx),
        })
    }
}

fn permutation(seed: u64, source: usize, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, source as u64, epoch]));
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-15, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn closed_forms() {
        close(
            &sampling_probs(&[100, 400], 0.5).unwrap(),
            &[1.0 / 3.0, 2.0 / 3.0],
        );
        close(
            &sampling_probs(&[7, 1, 1000], 0.0).unwrap(),
            &[1.0 / 3.0; 3],
        );
        close(
            &sampling_probs(&[3, 5, 7], 1.0).unwrap(),
            &[3.0 / 15.0, 5.0 / 15.0, 7.0 / 15.0],
        );
    }

    #[test]
    fn invalid_inputs() {
        assert!(sampling_probs(&[], 0.5).is_err());
        assert!(sampling_probs(&[3, 0], 0.5).is_err());
        assert!(sampling_probs(&[3], 1.5).is_err());
    }

    #[test]
    fn take_wraps_with_new_permutation() {
        let mut s = Sampler::new(&[5], 0.5, 9).unwrap();
        let first = s.take(0, 5);
        let mut sorted = first.clone();
        sorted.sort();
        assert_eq!(sorted, [0, 1, 2, 3, 4]);
        let second = s.take(0, 5);
        assert_eq!(s.state().epochs[0], 1);
        let mut sorted = second.clone();
        sorted.sort();
        assert_eq!(sorted, [0, 1, 2, 3, 4]);
        let straddle = s.take(0, 7);
        assert_eq!(straddle.len(), 7);
        assert_eq!(s.state().epochs[0], 3);
    }

    #[test]
    fn resume_from_state_continues_stream() {
        let sizes = [4, 9, 2];
        let mut a = Sampler::new(&sizes, 0.5, 3).unwrap();
        for _ in 0..10 {
            let s = a.draw_source();
            a.take(s, 3);
        }
        let mut b = Sampler::from_state(a.state().clone(), &sizes).unwrap();
        for _ in 0..20 {
            let (sa, sb) = (a.draw_source(), b.draw_source());
            assert_eq!(sa, sb);
            assert_eq!(a.take(sa, 3), b.take(sb, 3));
        }
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(
            sizes in prop::collection::vec(1usize..1_000_000, 1..20),
            alpha in 0.0f64..=1.0,
        ) {
            let p = sampling_probs(&sizes, alpha).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn growing_a_source_raises_its_share(
            sizes in prop::collection::vec(1usize..10_000, 2..10),
            which in 0usize..10,
            extra in 1usize..10_000,
            alpha in 0.05f64..=1.0,
        ) {
            let which = which % sizes.len();
            let before = sampling_probs(&sizes, alpha).unwrap();
            let mut grown = sizes.clone();
            grown[which] += extra;
            let after = sampling_probs(&grown, alpha).unwrap();
            prop_assert!(after[which] > before[which]);
            for j in (0..sizes.len()).filter(|&j| j != which) {
                prop_assert!(after[j] < before[j]);
            }
        }
    }
}
