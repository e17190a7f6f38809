//! Median re-sampling.
//!
//! For every classification space the median class count is taken as the
//! target size. Classes above it are under-sampled with rate
//! `median / count`; classes at or below it keep all their instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{GroupPartition, PredicateVocabulary};

/// Count at 1-based position `ceil(n/2)` of a descending count list.
pub fn median_count(counts: &[u64]) -> Result<u64> {
    if counts.is_empty() {
        return Err(Error::Config("median of an empty classification space".into()));
    }
    Ok(counts[counts.len().div_ceil(2) - 1])
}

/// Per-class sampling rate against `median`.
pub fn sampling_rates(counts: &[u64], median: u64) -> Vec<f64> {
    counts
        .iter()
        .map(|&c| {
            if median < c {
                median as f64 / c as f64
            } else {
                1.0
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierPlan {
    pub median: u64,
    /// Rate per class of the classification space, in vocabulary order.
    pub rates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    per_classifier: Vec<ClassifierPlan>,
}

impl SamplingPlan {
    pub fn median_resampling(vocab: &PredicateVocabulary, partition: &GroupPartition) -> Result<Self> {
        let counts = vocab.counts();
        let per_classifier = partition
            .space_lens()
            .into_iter()
            .map(|len| {
                let space = counts.get(..len).ok_or_else(|| {
                    Error::Index(format!("space of {len} classes over {} counts", counts.len()))
                })?;
                let median = median_count(space)?;
                Ok(ClassifierPlan {
                    median,
                    rates: sampling_rates(space, median),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { per_classifier })
    }

    /// Keeps every instance for every classifier.
    pub fn keep_all(vocab: &PredicateVocabulary, partition: &GroupPartition) -> Self {
        let counts = vocab.counts();
        let per_classifier = partition
            .space_lens()
            .into_iter()
            .map(|len| ClassifierPlan {
                median: counts[..len].iter().copied().max().unwrap_or(0),
                rates: vec![1.0; len],
            })
            .collect();
        Self { per_classifier }
    }

    pub fn classifiers(&self) -> &[ClassifierPlan] {
        &self.per_classifier
    }

    pub fn num_classifiers(&self) -> usize {
        self.per_classifier.len()
    }

    /// Rate of `class` for classifier `k`; `None` when the class lies outside
    /// that classifier's space.
    pub fn rate(&self, k: usize, class: usize) -> Option<f64> {
        self.per_classifier.get(k)?.rates.get(class).copied()
    }
}

/// Per-classifier training subsets `D_k`, as indices into the sample list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledEpoch {
    pub seed: u64,
    pub per_classifier: Vec<Vec<usize>>,
}

impl SampledEpoch {
    pub fn members(&self, k: usize) -> &[usize] {
        &self.per_classifier[k]
    }
}

/// Draws each sample into `D_k` independently with its class rate.
///
/// `labels[i]` is the vocabulary index of sample `i`'s predicate. Classifier
/// `k` uses its own ChaCha stream of `seed`, so streams are independent of
/// each other and of the number of classifiers drawn before them.
pub fn draw_epoch(
    labels: &[usize],
    num_classes: usize,
    plan: &SamplingPlan,
    seed: u64,
) -> Result<SampledEpoch> {
    if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Data(format!(
            "sample label {bad} outside vocabulary of {num_classes}"
        )));
    }
    let per_classifier = plan
        .per_classifier
        .iter()
        .enumerate()
        .map(|(k, cp)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| match cp.rates.get(l) {
                    None => false,
                    Some(&r) if r >= 1.0 => true,
                    Some(&r) => rng.random::<f64>() < r,
                })
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    Ok(SampledEpoch {
        seed,
        per_classifier,
    })
}
