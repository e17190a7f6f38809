mod common;

use common::{oracle_ckd, oracle_pco, random_instance};
use sgg_core::gcl::{build_matching_set, ckd_loss, gcl_loss, pco_loss, teacher_targets, MatchingStrategy};
use sgg_core::numcore::{Tape, Tensor};
use sgg_core::sampler::SampledEpoch;

fn epoch(subsets: &[Vec<usize>]) -> SampledEpoch {
    SampledEpoch {
        seed: 0,
        per_classifier: subsets.to_vec(),
    }
}

#[test]
fn pco_and_ckd_match_loop_oracles() {
    for seed in 0..100 {
        let inst = random_instance(seed, 4, 20, 50);
        let tape = Tape::new();
        let vars: Vec<_> = inst.logits.iter().map(|t| tape.leaf(t.clone())).collect();
        let ep = epoch(&inst.subsets);
        let pco = pco_loss(&tape, &vars, &inst.labels, &ep).unwrap().item();
        let want = oracle_pco(&inst.logits, &inst.labels, &inst.subsets);
        assert!((pco - want).abs() <= 1e-10, "seed {seed}: pco {pco} vs {want}");

        let teachers = teacher_targets(&vars).unwrap();
        for strategy in [MatchingStrategy::Adjacent, MatchingStrategy::TopDown] {
            let q = build_matching_set(inst.widths.len(), strategy);
            let ckd = ckd_loss(&tape, &vars, &teachers, &q, &ep).unwrap().item();
            let want = oracle_ckd(&inst.logits, &q.pairs, &inst.subsets);
            assert!((ckd - want).abs() <= 1e-10, "seed {seed} {strategy}: ckd {ckd} vs {want}");
        }
    }
}

#[test]
fn total_is_pco_plus_weighted_ckd() {
    for seed in 100..130 {
        let inst = random_instance(seed, 4, 12, 20);
        let tape = Tape::new();
        let vars: Vec<_> = inst.logits.iter().map(|t| tape.leaf(t.clone())).collect();
        let q = build_matching_set(inst.widths.len(), MatchingStrategy::TopDown);
        let ep = epoch(&inst.subsets);
        for alpha in [0.0, 0.5, 1.0, 2.5] {
            let (total, report) = gcl_loss(&tape, &vars, &inst.labels, &ep, &q, alpha).unwrap();
            let want = oracle_pco(&inst.logits, &inst.labels, &inst.subsets)
                + alpha * oracle_ckd(&inst.logits, &q.pairs, &inst.subsets);
            assert!((total.item() - want).abs() <= 1e-10);
            assert_eq!(report.total, total.item());
            if alpha == 0.0 {
                assert_eq!(report.total, report.pco);
            }
        }
    }
}

#[test]
fn single_classifier_reduces_to_cross_entropy() {
    for seed in 200..230 {
        let inst = random_instance(seed, 1, 15, 30);
        assert_eq!(inst.widths.len(), 1);
        let tape = Tape::new();
        let vars = vec![tape.leaf(inst.logits[0].clone())];
        let q = build_matching_set(1, MatchingStrategy::TopDown);
        assert!(q.is_empty());
        let rows = &inst.subsets[0];
        if rows.is_empty() {
            continue;
        }
        let (total, _) = gcl_loss(&tape, &vars, &inst.labels, &epoch(&inst.subsets), &q, 1.0).unwrap();
        let mut ce = 0.0;
        for &r in rows {
            let row = inst.logits[0].row(r);
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            ce += lse - row[inst.labels[r]];
        }
        ce /= rows.len() as f64;
        assert!((total.item() - ce).abs() <= 1e-12, "{} vs {ce}", total.item());
    }
}

#[test]
fn distillation_vanishes_when_student_copies_teacher() {
    // Student logits equal to the teacher's on the shared columns, with a very
    // negative extra column: the sliced distributions coincide, so the loss is
    // the teacher entropy and its gradient w.r.t. the student is zero there.
    let t = Tensor::from_rows(&[vec![1.0, -0.5], vec![0.2, 0.3]]).unwrap();
    let s = Tensor::from_rows(&[vec![1.0, -0.5, -50.0], vec![0.2, 0.3, -50.0]]).unwrap();
    let tape = Tape::new();
    let vars = vec![tape.leaf(t.with_grad()), tape.leaf(s.with_grad())];
    let teachers = teacher_targets(&vars).unwrap();
    let q = build_matching_set(2, MatchingStrategy::Adjacent);
    let ep = epoch(&[vec![0, 1], vec![0, 1]]);
    let ckd = ckd_loss(&tape, &vars, &teachers, &q, &ep).unwrap();
    let mut store = sgg_core::numcore::ParamStore::new();
    tape.backward(ckd, &mut store).unwrap();
    let g = tape.grad(vars[1]).unwrap();
    assert!(g.data()[..2].iter().all(|v| v.abs() < 1e-12));
    assert!(g.data()[3..5].iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn matching_sets_for_small_k() {
    for k in 1..=8usize {
        let adj = build_matching_set(k, MatchingStrategy::Adjacent);
        let want: Vec<(usize, usize)> = (1..k).map(|n| (n - 1, n)).collect();
        assert_eq!(adj.pairs, want);
        let td = build_matching_set(k, MatchingStrategy::TopDown);
        assert_eq!(td.len(), k * (k - 1) / 2);
        let mut expect = Vec::new();
        for m in 0..k {
            for n in m + 1..k {
                expect.push((m, n));
            }
        }
        assert_eq!(td.pairs, expect);
        assert!(td.pairs.iter().all(|&(m, n)| m < n));
    }
}
