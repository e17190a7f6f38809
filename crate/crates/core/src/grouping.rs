//! Predicate class grouping.
//!
//! Classes are sorted by training-instance count (descending) and cut into
//! contiguous groups in which the largest count is at most `mu` times the
//! smallest. Classifier `k` then works over the cumulative prefix of groups
//! `0..=k`, so each classification space extends the previous one.

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateClass {
    pub name: String,
    pub count: u64,
}

/// Predicate classes ordered by descending training count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateVocabulary {
    classes: Vec<PredicateClass>,
}

impl PredicateVocabulary {
    pub fn classes(&self) -> &[PredicateClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn counts(&self) -> Vec<u64> {
        self.classes.iter().map(|c| c.count).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }
}

/// Sorts raw `(name, count)` pairs by descending count. Equal counts keep
/// their input order.
pub fn sort_vocabulary<S: AsRef<str>>(raw: &[(S, i64)]) -> Result<PredicateVocabulary> {
    let mut seen = HashSet::new();
    let mut classes = Vec::with_capacity(raw.len());
    for (name, count) in raw {
        let name = name.as_ref();
        if !seen.insert(name) {
            return Err(Error::Vocab(format!("duplicate predicate name {name:?}")));
        }
        if *count <= 0 {
            return Err(Error::Vocab(format!(
                "predicate {name:?} has non-positive count {count}"
            )));
        }
        classes.push(PredicateClass {
            name: name.to_string(),
            count: *count as u64,
        });
    }
    classes.sort_by(|a, b| b.count.cmp(&a.count));
    Ok(PredicateVocabulary { classes })
}

/// Contiguous groups over a sorted vocabulary plus their cumulative spaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupPartition {
    groups: Vec<Range<usize>>,
    mu: f64,
}

impl GroupPartition {
    /// A partition with one group covering `num_classes` classes.
    pub fn single(num_classes: usize) -> Self {
        Self {
            groups: vec![0..num_classes],
            mu: f64::INFINITY,
        }
    }

    /// Rebuilds a partition from group sizes (e.g. read from a checkpoint).
    pub fn from_sizes(sizes: &[usize], mu: f64) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid group sizes {sizes:?}")));
        }
        let mut start = 0;
        let groups = sizes
            .iter()
            .map(|&s| {
                let r = start..start + s;
                start += s;
                r
            })
            .collect();
        Ok(Self { groups, mu })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Number of groups, K.
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_classes(&self) -> usize {
        self.groups.last().map_or(0, |g| g.end)
    }

    pub fn groups(&self) -> &[Range<usize>] {
        &self.groups
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.len()).collect()
    }

    /// Group index holding vocabulary position `class`.
    pub fn group_of(&self, class: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&class))
    }

    /// Size of classification space `k` (0-based): classes in groups `0..=k`.
    pub fn space_len(&self, k: usize) -> Result<usize> {
        self.groups
            .get(k)
            .map(|g| g.end)
            .ok_or_else(|| Error::Index(format!("group {k} of {}", self.groups.len())))
    }

    /// Sizes of every classification space, strictly increasing.
    pub fn space_lens(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.end).collect()
    }

    /// Classes handled by classifier `k` (0-based), in vocabulary order.
    pub fn classification_space<'v>(
        &self,
        vocab: &'v PredicateVocabulary,
        k: usize,
    ) -> Result<&'v [PredicateClass]> {
        let len = self.space_len(k)?;
        vocab.classes.get(..len).ok_or_else(|| {
            Error::Index(format!(
                "space {k} needs {len} classes, vocabulary has {}",
                vocab.len()
            ))
        })
    }
}

/// Splits the sorted vocabulary into balanced groups.
///
/// Walking the classes in order, a new group opens at class `i` when the
/// first class of the current group has strictly more than `mu` times the
/// instances of class `i`.
pub fn partition_predicates(vocab: &PredicateVocabulary, mu: f64) -> Result<GroupPartition> {
    if mu.is_nan() || mu < 1.0 {
        return Err(Error::Config(format!("mu must be >= 1, got {mu}")));
    }
    if vocab.is_empty() {
        return Err(Error::Config("cannot partition an empty vocabulary".into()));
    }
    let counts = vocab.counts();
    let mut groups = Vec::new();
    let mut head = 0;
    for i in 1..counts.len() {
        if counts[head] as f64 > mu * counts[i] as f64 {
            groups.push(head..i);
            head = i;
        }
    }
    groups.push(head..counts.len());
    Ok(GroupPartition { groups, mu })
}
