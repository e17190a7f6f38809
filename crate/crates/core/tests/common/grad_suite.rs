//! Seeded finite-difference trials, one function per differentiable block.
//! Each returns the merged report over parameters and inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgg_core::gcl::{build_matching_set, ckd_loss, pco_loss, teacher_targets, ClassifierBank, MatchingStrategy};
use sgg_core::grouping::GroupPartition;
use sgg_core::numcore::{GradCheck, GradCheckReport, ParamStore, Tape, Tensor, Var};
use sgg_core::sampler::SampledEpoch;
use sgg_core::sha::{AttentionConfig, AttentionUnit, ShaStack};

use super::random_instance;

pub const TRIALS: u64 = 20;
pub const TOL: f64 = 1e-4;

pub type Trial = fn(u64) -> GradCheckReport;

pub const SUITES: [(&str, Trial); 7] = [
    ("softmax", softmax),
    ("attention unit", attention_unit),
    ("2-layer SHA stack", sha_stack),
    ("pair classifier probs", classifier_probs),
    ("PCO", pco),
    ("CKD", ckd),
    ("GCL total", gcl_total),
];

pub fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn weighted_sum<'t>(tape: &'t Tape, v: Var<'t>, w: &Tensor) -> Var<'t> {
    v.mul(tape.constant(w.clone())).unwrap().sum()
}

pub fn softmax(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = (rng.random_range(1..5), rng.random_range(2..7));
    let x = random(r, c, &mut rng);
    let w = random(r, c, &mut rng);
    GradCheck::default()
        .check_inputs(&[x], |tape, v| Ok(weighted_sum(tape, v[0].softmax(1)?, &w)))
        .unwrap()
}

pub fn attention_unit(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let cfg = AttentionConfig::new(4, 2, 6).unwrap();
    let mut store = ParamStore::new();
    let unit = AttentionUnit::new(&mut store, "att", cfg, &mut rng);
    let (n, m) = (rng.random_range(1..5), rng.random_range(1..5));
    let x = random(n, 4, &mut rng);
    let y = random(m, 4, &mut rng);
    let w = random(n, 4, &mut rng);
    let check = GradCheck::default();
    let mut report = check
        .check_params(&mut store, &[], |tape, store| {
            let out = unit.forward(tape, store, tape.constant(x.clone()), tape.constant(y.clone()))?;
            Ok(weighted_sum(tape, out, &w))
        })
        .unwrap();
    report.merge(
        check
            .check_inputs(&[x.clone(), y.clone()], |tape, v| {
                Ok(weighted_sum(tape, unit.forward(tape, &store, v[0], v[1])?, &w))
            })
            .unwrap(),
    );
    report
}

pub fn sha_stack(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
    let cfg = AttentionConfig::new(4, 2, 4).unwrap();
    let mut store = ParamStore::new();
    let stack = ShaStack::new(&mut store, "sha", 2, cfg, &mut rng).unwrap();
    let n = rng.random_range(1..4);
    let x = random(n, 4, &mut rng);
    let y = random(n, 4, &mut rng);
    let w = random(n, 4, &mut rng);
    let check = GradCheck { max_coords: 8, ..GradCheck::default() };
    let mut report = check
        .check_params(&mut store, &[], |tape, store| {
            let out = stack.forward(tape, store, tape.constant(x.clone()), tape.constant(y.clone()))?;
            Ok(weighted_sum(tape, out, &w))
        })
        .unwrap();
    report.merge(
        check
            .check_inputs(&[x.clone(), y.clone()], |tape, v| {
                Ok(weighted_sum(tape, stack.forward(tape, &store, v[0], v[1])?, &w))
            })
            .unwrap(),
    );
    report
}

/// Weighted sum of every classifier's probabilities.
fn bank_probe<'t>(
    bank: &ClassifierBank,
    weights: &[Tensor],
    tape: &'t Tape,
    store: &ParamStore,
    pair: Var<'t>,
    union: Var<'t>,
) -> sgg_core::Result<Var<'t>> {
    let mut total = tape.constant(Tensor::scalar(0.0));
    for (k, w) in weights.iter().enumerate() {
        let probs = bank.classifier_probs(tape, store, k, pair, union)?;
        total = total.add(weighted_sum(tape, probs, w))?;
    }
    Ok(total)
}

pub fn classifier_probs(seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
    let part = GroupPartition::from_sizes(&[2, 3], 4.0).unwrap();
    let mut store = ParamStore::new();
    let bank = ClassifierBank::new(&mut store, "bank", part, 6, 3, &mut rng);
    let rows = rng.random_range(1..5);
    let pair = random(rows, 6, &mut rng);
    let union = random(rows, 3, &mut rng);
    let weights: Vec<Tensor> = bank.widths().iter().map(|&w| random(rows, w, &mut rng)).collect();
    let check = GradCheck::default();
    let mut report = check
        .check_params(&mut store, &[], |tape, store| {
            bank_probe(&bank, &weights, tape, store, tape.constant(pair.clone()), tape.constant(union.clone()))
        })
        .unwrap();
    report.merge(
        check
            .check_inputs(&[pair.clone(), union.clone()], |tape, v| {
                bank_probe(&bank, &weights, tape, &store, v[0], v[1])
            })
            .unwrap(),
    );
    report
}

pub fn epoch_of(subsets: &[Vec<usize>]) -> SampledEpoch {
    SampledEpoch {
        seed: 0,
        per_classifier: subsets.to_vec(),
    }
}

/// Teachers enter the distillation term as constants, so the numeric side
/// holds them fixed at their unperturbed values.
pub fn fixed_teachers(logits: &[Tensor]) -> Vec<Tensor> {
    let tape = Tape::new();
    let vars: Vec<_> = logits.iter().map(|t| tape.constant(t.clone())).collect();
    teacher_targets(&vars)
        .unwrap()
        .iter()
        .map(|v| v.value().detached())
        .collect()
}

/// At least two classifiers so the distillation term is not identically zero.
fn multi_instance(seed: u64) -> super::LossInstance {
    (0..)
        .map(|i| random_instance(seed * 1000 + i, 4, 10, 8))
        .find(|inst| inst.widths.len() >= 2)
        .unwrap()
}

pub fn pco(seed: u64) -> GradCheckReport {
    let inst = random_instance(400 + seed, 4, 10, 8);
    let ep = epoch_of(&inst.subsets);
    GradCheck::default()
        .check_inputs(&inst.logits, |tape, v| pco_loss(tape, v, &inst.labels, &ep))
        .unwrap()
}

pub fn ckd(seed: u64) -> GradCheckReport {
    let inst = multi_instance(500 + seed);
    let ep = epoch_of(&inst.subsets);
    let teachers = fixed_teachers(&inst.logits);
    let mut report = GradCheckReport::default();
    for strategy in [MatchingStrategy::Adjacent, MatchingStrategy::TopDown] {
        let q = build_matching_set(inst.widths.len(), strategy);
        report.merge(
            GradCheck::default()
                .check_inputs(&inst.logits, |tape, v| {
                    let t: Vec<_> = teachers.iter().map(|t| tape.constant(t.clone())).collect();
                    ckd_loss(tape, v, &t, &q, &ep)
                })
                .unwrap(),
        );
    }
    report
}

pub const ALPHA: f64 = 0.7;

pub fn gcl_total(seed: u64) -> GradCheckReport {
    let inst = multi_instance(600 + seed);
    let ep = epoch_of(&inst.subsets);
    let teachers = fixed_teachers(&inst.logits);
    let q = build_matching_set(inst.widths.len(), MatchingStrategy::TopDown);
    GradCheck::default()
        .check_inputs(&inst.logits, |tape, v| {
            let t: Vec<_> = teachers.iter().map(|t| tape.constant(t.clone())).collect();
            let pco = pco_loss(tape, v, &inst.labels, &ep)?;
            pco.add(ckd_loss(tape, v, &t, &q, &ep)?.scale(ALPHA))
        })
        .unwrap()
}
