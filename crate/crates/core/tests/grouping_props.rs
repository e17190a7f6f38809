mod common;

use common::{literal_grouping, oracle_median, oracle_rate};
use proptest::prelude::*;
use sgg_core::grouping::{partition_predicates, sort_vocabulary, PredicateVocabulary};
use sgg_core::sampler::{median_count, sampling_rates, SamplingPlan};

fn vocab_of(counts: &[u64]) -> PredicateVocabulary {
    let raw: Vec<(String, i64)> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (format!("p{i}"), c as i64))
        .collect();
    sort_vocabulary(&raw).unwrap()
}

fn counts_strategy() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..100_000, 1..120)
}

fn mu_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), Just(3.0), Just(4.0), Just(5.0), 1.0f64..20.0]
}

proptest! {
    #[test]
    fn matches_literal_walk(counts in counts_strategy(), mu in mu_strategy()) {
        let vocab = vocab_of(&counts);
        let sorted = vocab.counts();
        let part = partition_predicates(&vocab, mu).unwrap();
        let expected = literal_grouping(&sorted, mu);
        let got: Vec<Vec<usize>> = part
            .groups()
            .iter()
            .map(|g| g.clone().map(|i| i + 1).collect())
            .collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn groups_respect_ratio_and_tile_the_vocabulary(counts in counts_strategy(), mu in mu_strategy()) {
        let vocab = vocab_of(&counts);
        let sorted = vocab.counts();
        let part = partition_predicates(&vocab, mu).unwrap();
        let mut next = 0;
        for g in part.groups() {
            prop_assert_eq!(g.start, next);
            prop_assert!(!g.is_empty());
            next = g.end;
            let hi = sorted[g.start] as f64;
            let lo = sorted[g.end - 1] as f64;
            prop_assert!(hi <= mu * lo);
        }
        prop_assert_eq!(next, sorted.len());
        let spaces = part.space_lens();
        prop_assert!(spaces.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(*spaces.last().unwrap(), sorted.len());
    }

    #[test]
    fn larger_mu_never_adds_groups(counts in counts_strategy(), a in 1.0f64..10.0, b in 1.0f64..10.0) {
        let vocab = vocab_of(&counts);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let k_lo = partition_predicates(&vocab, lo).unwrap().num_groups();
        let k_hi = partition_predicates(&vocab, hi).unwrap().num_groups();
        prop_assert!(k_hi <= k_lo);
    }

    #[test]
    fn sorting_is_a_stable_descending_permutation(counts in counts_strategy()) {
        let vocab = vocab_of(&counts);
        let sorted = vocab.counts();
        prop_assert!(sorted.windows(2).all(|w| w[0] >= w[1]));
        let mut a = counts.clone();
        let mut b = sorted.clone();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        for w in vocab.classes().windows(2) {
            if w[0].count == w[1].count {
                let i: usize = w[0].name[1..].parse().unwrap();
                let j: usize = w[1].name[1..].parse().unwrap();
                prop_assert!(i < j);
            }
        }
    }

    #[test]
    fn rates_follow_closed_form(counts in counts_strategy()) {
        let mut sorted = counts.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let med = median_count(&sorted).unwrap();
        prop_assert_eq!(med, oracle_median(&sorted));
        let rates = sampling_rates(&sorted, med);
        for (&c, &r) in sorted.iter().zip(&rates) {
            prop_assert_eq!(r.to_bits(), oracle_rate(med, c).to_bits());
            prop_assert!(r > 0.0 && r <= 1.0);
            prop_assert!((r * c as f64 - (c.min(med)) as f64).abs() < 1e-9 * c as f64);
        }
    }

    #[test]
    fn plan_rates_use_each_prefix_median(counts in counts_strategy(), mu in mu_strategy()) {
        let vocab = vocab_of(&counts);
        let sorted = vocab.counts();
        let part = partition_predicates(&vocab, mu).unwrap();
        let plan = SamplingPlan::median_resampling(&vocab, &part).unwrap();
        prop_assert_eq!(plan.num_classifiers(), part.num_groups());
        for (k, cp) in plan.classifiers().iter().enumerate() {
            let len = part.space_len(k).unwrap();
            let med = oracle_median(&sorted[..len]);
            prop_assert_eq!(cp.median, med);
            prop_assert_eq!(cp.rates.len(), len);
            for c in 0..len {
                prop_assert_eq!(cp.rates[c], oracle_rate(med, sorted[c]));
            }
        }
    }
}

#[test]
fn nine_class_median_is_fifth_count() {
    let counts = [900, 800, 700, 600, 500, 400, 300, 200, 100];
    assert_eq!(median_count(&counts).unwrap(), 500);
    let rates = sampling_rates(&counts, 500);
    assert_eq!(rates[0], 500.0 / 900.0);
    assert!(rates[4..].iter().all(|&r| r == 1.0));
}

#[test]
fn even_space_takes_upper_median() {
    assert_eq!(median_count(&[10, 8, 6, 4]).unwrap(), 8);
    assert_eq!(median_count(&[7]).unwrap(), 7);
    assert!(median_count(&[]).is_err());
}

#[test]
fn worked_partition_example() {
    let vocab = vocab_of(&[100, 40, 12, 11, 3]);
    let part = partition_predicates(&vocab, 4.0).unwrap();
    assert_eq!(part.group_sizes(), vec![2, 3]);
    assert_eq!(literal_grouping(&vocab.counts(), 4.0), vec![vec![1, 2], vec![3, 4, 5]]);
}
