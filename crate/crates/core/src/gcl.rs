//! Group collaborative learning relation decoder.
//!
//! Classifier `k` maps a pair feature `[x_i, x_j]` and a union feature `u_ij`
//! onto the `|P'_k|` classes of its classification space:
//!
//! ```text
//! w^k = softmax(FC_k([x_i, x_j]) ⊙ Proj_k(u_ij))
//! ```
//!
//! Training combines the summed per-classifier mean cross-entropy (PCO) with
//! a distillation term (CKD) in which classifier `n` matches the soft output
//! of an earlier classifier `m` on the classes both share. Teacher outputs
//! are detached; the distillation term is the cross-entropy form
//! `-Σ w_m log ŵ_n`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::GroupPartition;
use crate::numcore::{Linear, ParamStore, Tape, Var};
use crate::sampler::SampledEpoch;

#[derive(Clone, Debug)]
pub struct PairClassifier {
    pub fc: Linear,
    pub union_proj: Linear,
    pub width: usize,
}

/// Nested classifiers; classifier `k` covers the first `space_len(k)`
/// vocabulary classes.
#[derive(Clone, Debug)]
pub struct ClassifierBank {
    partition: GroupPartition,
    classifiers: Vec<PairClassifier>,
}

impl ClassifierBank {
    /// `pair_dim` is the width of `[x_i, x_j]`; `union_dim` of `u_ij`. The
    /// union projection bias starts at one so initial logits follow the pair
    /// branch instead of collapsing to a product of two small numbers.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        partition: GroupPartition,
        pair_dim: usize,
        union_dim: usize,
        rng: &mut R,
    ) -> Self {
        let classifiers = partition
            .space_lens()
            .into_iter()
            .enumerate()
            .map(|(k, width)| PairClassifier {
                fc: Linear::new(store, &format!("{name}.c{k}.fc"), pair_dim, width, rng),
                union_proj: Linear::with_bias(
                    store,
                    &format!("{name}.c{k}.union"),
                    union_dim,
                    width,
                    1.0,
                    rng,
                ),
                width,
            })
            .collect();
        Self {
            partition,
            classifiers,
        }
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    pub fn classifiers(&self) -> &[PairClassifier] {
        &self.classifiers
    }

    /// K.
    pub fn num_classifiers(&self) -> usize {
        self.classifiers.len()
    }

    pub fn width(&self, k: usize) -> usize {
        self.classifiers[k].width
    }

    pub fn widths(&self) -> Vec<usize> {
        self.classifiers.iter().map(|c| c.width).collect()
    }

    fn classifier(&self, k: usize) -> Result<&PairClassifier> {
        self.classifiers
            .get(k)
            .ok_or_else(|| Error::Index(format!("classifier {k} of {}", self.classifiers.len())))
    }

    /// Pre-softmax scores of classifier `k` for each row of `pair`/`union`.
    pub fn logits<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        k: usize,
        pair: Var<'t>,
        union: Var<'t>,
    ) -> Result<Var<'t>> {
        let c = self.classifier(k)?;
        let a = c.fc.forward(tape, store, pair)?;
        let b = c.union_proj.forward(tape, store, union)?;
        a.mul(b)
    }

    pub fn all_logits<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        pair: Var<'t>,
        union: Var<'t>,
    ) -> Result<Vec<Var<'t>>> {
        (0..self.num_classifiers())
            .map(|k| self.logits(tape, store, k, pair, union))
            .collect()
    }

    /// Class distribution of classifier `k` over its space, one row per pair.
    pub fn classifier_probs<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        k: usize,
        pair: Var<'t>,
        union: Var<'t>,
    ) -> Result<Var<'t>> {
        self.logits(tape, store, k, pair, union)?.softmax(1)
    }

    /// Classifier `n`'s distribution restricted to classifier `m`'s space.
    pub fn slice_distribution<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        n: usize,
        m: usize,
        pair: Var<'t>,
        union: Var<'t>,
    ) -> Result<Var<'t>> {
        if m >= n {
            return Err(Error::Index(format!(
                "slice target {m} must precede source classifier {n}"
            )));
        }
        let logits = self.logits(tape, store, n, pair, union)?;
        slice_distribution(logits, self.width(m))
    }
}

/// Softmax over the first `width` columns of `logits`.
pub fn slice_distribution(logits: Var<'_>, width: usize) -> Result<Var<'_>> {
    logits.slice_cols(0, width)?.softmax(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchingStrategy {
    /// Each classifier learns from its immediate predecessor.
    Adjacent,
    /// Each classifier learns from every predecessor.
    TopDown,
}

impl FromStr for MatchingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adjacent" => Ok(Self::Adjacent),
            "topdown" | "top-down" => Ok(Self::TopDown),
            other => Err(Error::Config(format!("unknown matching strategy {other:?}"))),
        }
    }
}

impl fmt::Display for MatchingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adjacent => "adjacent",
            Self::TopDown => "topdown",
        })
    }
}

/// Teacher/student classifier pairs `(m, n)` with `m < n` (0-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchingSet {
    pub strategy: MatchingStrategy,
    pub pairs: Vec<(usize, usize)>,
}

impl MatchingSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn build_matching_set(num_classifiers: usize, strategy: MatchingStrategy) -> MatchingSet {
    let pairs = match strategy {
        MatchingStrategy::Adjacent => (1..num_classifiers).map(|n| (n - 1, n)).collect(),
        MatchingStrategy::TopDown => (0..num_classifiers)
            .flat_map(|m| (m + 1..num_classifiers).map(move |n| (m, n)))
            .collect(),
    };
    MatchingSet { strategy, pairs }
}

fn check_rows(logits: &[Var<'_>], labels: &[usize], epoch: &SampledEpoch) -> Result<()> {
    if logits.len() != epoch.per_classifier.len() {
        return Err(Error::shape(format!(
            "{} classifier outputs but {} sampled subsets",
            logits.len(),
            epoch.per_classifier.len()
        )));
    }
    for (k, l) in logits.iter().enumerate() {
        let rows = l.shape()[0];
        if rows != labels.len() {
            return Err(Error::shape(format!(
                "classifier {k} scored {rows} rows for {} labels",
                labels.len()
            )));
        }
        if epoch.members(k).iter().any(|&r| r >= rows) {
            return Err(Error::Index(format!("sampled row out of range for classifier {k}")));
        }
    }
    Ok(())
}

/// Σ_k mean_{r ∈ D_k} CE(label_r, w^k_r).
///
/// `logits[k]` scores every row; `epoch.members(k)` picks the rows in `D_k`.
/// Classifiers whose subset is empty contribute nothing.
pub fn pco_loss<'t>(
    tape: &'t Tape,
    logits: &[Var<'t>],
    labels: &[usize],
    epoch: &SampledEpoch,
) -> Result<Var<'t>> {
    check_rows(logits, labels, epoch)?;
    let mut terms = Vec::with_capacity(logits.len());
    for (k, l) in logits.iter().enumerate() {
        let rows = epoch.members(k);
        if rows.is_empty() {
            log::warn!("classifier {k} has an empty training subset; skipping its PCO term");
            continue;
        }
        let width = l.shape()[1];
        let targets: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
        if let Some(bad) = targets.iter().find(|&&t| t >= width) {
            return Err(Error::Data(format!(
                "label {bad} outside classifier {k}'s {width} classes"
            )));
        }
        let log_probs = l.gather_rows(rows)?.log_softmax();
        terms.push(log_probs.pick(&targets)?.mean().scale(-1.0));
    }
    sum_terms(tape, terms)
}

/// Detached teacher distributions, one per classifier.
pub fn teacher_targets<'t>(logits: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
    logits.iter().map(|l| Ok(l.softmax(1)?.detach())).collect()
}

/// (1/|Q|) Σ_{(m,n)∈Q} mean_{r ∈ D_n} −Σ_l t_m[r,l] · log ŵ_n[r,l].
///
/// `teachers[m]` holds classifier `m`'s distributions as constants (see
/// [`teacher_targets`]); `ŵ_n` is classifier `n`'s softmax over the first
/// `|P'_m|` columns of its logits. Every row of `D_n` takes part regardless
/// of its label.
pub fn ckd_loss<'t>(
    tape: &'t Tape,
    logits: &[Var<'t>],
    teachers: &[Var<'t>],
    matching: &MatchingSet,
    epoch: &SampledEpoch,
) -> Result<Var<'t>> {
    if matching.is_empty() {
        return Ok(tape.constant(crate::numcore::Tensor::scalar(0.0)));
    }
    let mut terms = Vec::with_capacity(matching.len());
    for &(m, n) in &matching.pairs {
        if m >= n || n >= logits.len() || m >= teachers.len() {
            return Err(Error::Index(format!(
                "matching pair ({m}, {n}) invalid for {} classifiers",
                logits.len()
            )));
        }
        let rows = epoch.members(n);
        if rows.is_empty() {
            continue;
        }
        let width = teachers[m].shape()[1];
        let student = logits[n].gather_rows(rows)?.slice_cols(0, width)?.log_softmax();
        let target = teachers[m].gather_rows(rows)?;
        terms.push(target.mul(student)?.sum().scale(-1.0 / rows.len() as f64));
    }
    Ok(sum_terms(tape, terms)?.scale(1.0 / matching.len() as f64))
}

fn sum_terms<'t>(tape: &'t Tape, terms: Vec<Var<'t>>) -> Result<Var<'t>> {
    let mut iter = terms.into_iter();
    let Some(first) = iter.next() else {
        return Ok(tape.constant(crate::numcore::Tensor::scalar(0.0)));
    };
    iter.try_fold(first, |acc, t| acc.add(t))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub pco: f64,
    pub ckd: f64,
    pub total: f64,
    pub alpha: f64,
}

/// `pco + alpha · ckd`, returned as a differentiable scalar and its values.
pub fn gcl_loss<'t>(
    tape: &'t Tape,
    logits: &[Var<'t>],
    labels: &[usize],
    epoch: &SampledEpoch,
    matching: &MatchingSet,
    alpha: f64,
) -> Result<(Var<'t>, LossReport)> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let pco = pco_loss(tape, logits, labels, epoch)?;
    let teachers = teacher_targets(logits)?;
    let ckd = ckd_loss(tape, logits, &teachers, matching, epoch)?;
    let total = if alpha == 0.0 {
        pco
    } else {
        pco.add(ckd.scale(alpha))?
    };
    let report = LossReport {
        pco: pco.item(),
        ckd: ckd.item(),
        total: total.item(),
        alpha,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn epoch(sets: Vec<Vec<usize>>) -> SampledEpoch {
        SampledEpoch {
            seed: 0,
            per_classifier: sets,
        }
    }

    fn rows(data: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&data.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matching_sets() {
        let adj = build_matching_set(4, MatchingStrategy::Adjacent);
        assert_eq!(adj.pairs, vec![(0, 1), (1, 2), (2, 3)]);
        let td = build_matching_set(4, MatchingStrategy::TopDown);
        assert_eq!(td.len(), 6);
        assert!(td.pairs.iter().all(|(m, n)| m < n));
        assert!(build_matching_set(1, MatchingStrategy::Adjacent).is_empty());
        assert!(build_matching_set(1, MatchingStrategy::TopDown).is_empty());
        assert!(matches!("sideways".parse::<MatchingStrategy>(), Err(Error::Config(_))));
        assert_eq!("topdown".parse::<MatchingStrategy>().unwrap(), MatchingStrategy::TopDown);
    }

    #[test]
    fn zero_logits_give_uniform_probs() {
        let tape = Tape::new();
        let p = tape.constant(Tensor::zeros(&[1, 4])).softmax(1).unwrap();
        assert_eq!(p.value().data(), &[0.25; 4]);
        let p = tape.constant(rows(&[&[3f64.ln(), 0.0]])).softmax(1).unwrap();
        assert!((p.value().data()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn pco_examples() {
        let tape = Tape::new();
        // confident and correct
        let l = tape.constant(rows(&[&[800.0, 0.0]]));
        let loss = pco_loss(&tape, &[l], &[0], &epoch(vec![vec![0]])).unwrap();
        assert!(loss.item().abs() < 1e-300);
        // uniform over four classes
        let l = tape.constant(Tensor::zeros(&[1, 4]));
        let loss = pco_loss(&tape, &[l], &[2], &epoch(vec![vec![0]])).unwrap();
        assert!((loss.item() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn pco_skips_empty_subsets_and_checks_labels() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 2]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let loss = pco_loss(&tape, &[a, b], &[0, 2], &epoch(vec![vec![], vec![0, 1]])).unwrap();
        assert!((loss.item() - 3f64.ln()).abs() < 1e-15);
        assert!(matches!(
            pco_loss(&tape, &[a, b], &[0, 2], &epoch(vec![vec![1], vec![0]])),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn ckd_examples() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[1, 2]));
        let b = tape.constant(Tensor::zeros(&[1, 3]));
        let q = build_matching_set(2, MatchingStrategy::Adjacent);
        let e = epoch(vec![vec![0], vec![0]]);
        let t = teacher_targets(&[a, b]).unwrap();
        let loss = ckd_loss(&tape, &[a, b], &t, &q, &e).unwrap();
        assert!((loss.item() - 2f64.ln()).abs() < 1e-15);

        let teacher = tape.constant(rows(&[&[1.0, 0.0]]));
        let loss = ckd_loss(&tape, &[a, b], &[teacher, t[1]], &q, &e).unwrap();
        assert!((loss.item() - 2f64.ln()).abs() < 1e-15);

        let single = build_matching_set(1, MatchingStrategy::TopDown);
        let loss = ckd_loss(&tape, &[a], &t[..1], &single, &epoch(vec![vec![0]])).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn slice_matches_renormalized_probs() {
        let tape = Tape::new();
        let l = tape.constant(rows(&[&[1.0, 1.0, 1.0, 1.0], &[0.3, -1.2, 2.0, 0.7]]));
        let s = slice_distribution(l, 2).unwrap().value();
        assert_eq!(s.row(0), &[0.5, 0.5]);
        let full = l.softmax(1).unwrap().value();
        let z = full.at(1, 0) + full.at(1, 1);
        assert!((s.at(1, 0) - full.at(1, 0) / z).abs() < 1e-12);
    }

    #[test]
    fn bank_slice_rejects_bad_order() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let part = GroupPartition::from_sizes(&[2, 2], 4.0).unwrap();
        let bank = ClassifierBank::new(&mut store, "b", part, 4, 3, &mut rng);
        assert_eq!(bank.widths(), vec![2, 4]);
        let tape = Tape::new();
        let pair = tape.constant(Tensor::zeros(&[1, 4]));
        let union = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(matches!(
            bank.slice_distribution(&tape, &store, 1, 1, pair, union),
            Err(Error::Index(_))
        ));
        let s = bank.slice_distribution(&tape, &store, 1, 0, pair, union).unwrap();
        assert_eq!(s.shape(), vec![1, 2]);
        // zero pair features give uniform output
        let p = bank.classifier_probs(&tape, &store, 1, pair, union).unwrap();
        assert_eq!(p.value().data(), &[0.25; 4]);
    }

    #[test]
    fn gcl_combines_terms() {
        let tape = Tape::new();
        let a = tape.constant(rows(&[&[0.2, -0.4], &[1.0, 0.1]]));
        let b = tape.constant(rows(&[&[0.5, 0.3, -0.2], &[0.0, 0.9, 0.4]]));
        let e = epoch(vec![vec![0], vec![0, 1]]);
        let q = build_matching_set(2, MatchingStrategy::TopDown);
        let (_, r0) = gcl_loss(&tape, &[a, b], &[1, 2], &e, &q, 0.0).unwrap();
        assert_eq!(r0.total, r0.pco);
        let (_, r1) = gcl_loss(&tape, &[a, b], &[1, 2], &e, &q, 1.0).unwrap();
        assert!((r1.total - (r1.pco + r1.ckd)).abs() < 1e-12);
        assert!(r1.pco >= 0.0 && r1.ckd >= 0.0);
        assert!(gcl_loss(&tape, &[a, b], &[1, 2], &e, &q, -1.0).is_err());
    }
}
