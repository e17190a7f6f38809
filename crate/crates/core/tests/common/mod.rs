//! Independent reference implementations shared by the integration tests.
//! Written with plain loops and 1-based indexing where that mirrors the
//! textbook description; none of them call into the library's algorithms.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgg_core::numcore::Tensor;

pub mod grad_suite;

/// Literal grouping walk over 1-based positions: `cur = 1, k = 1`; for each
/// `i` in `1..=M`, if `Count(p_cur) > mu * Count(p_i)` then `cur = i`,
/// `k = k + 1` and a new empty group opens; `p_i` joins group `k`.
/// Returns 1-based class positions per group.
pub fn literal_grouping(counts: &[u64], mu: f64) -> Vec<Vec<usize>> {
    let m = counts.len();
    let count = |i: usize| counts[i - 1] as f64;
    let mut cur = 1;
    let mut k = 1;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new()];
    for i in 1..=m {
        if count(cur) > mu * count(i) {
            cur = i;
            k += 1;
            groups.push(Vec::new());
        }
        groups[k - 1].push(i);
    }
    groups
}

/// Median as the count at 1-based position ceil(n/2) of a descending list.
pub fn oracle_median(sorted_desc: &[u64]) -> u64 {
    let n = sorted_desc.len();
    sorted_desc[n.div_ceil(2) - 1]
}

/// Closed-form piecewise rate: med/count when med < count, else 1.
pub fn oracle_rate(median: u64, count: u64) -> f64 {
    if median < count {
        median as f64 / count as f64
    } else {
        1.0
    }
}

/// Descending Zipf-like counts: `scale * r^-s` plus integer jitter, at least 1.
pub fn zipf_counts(rng: &mut ChaCha8Rng, m: usize) -> Vec<u64> {
    let s: f64 = rng.random_range(0.3..2.5);
    let scale: f64 = rng.random_range(50.0..500_000.0);
    let mut c: Vec<u64> = (1..=m)
        .map(|r| {
            let base = scale * (r as f64).powf(-s);
            let jitter = rng.random_range(0.9..1.1);
            (base * jitter).max(1.0) as u64
        })
        .collect();
    c.sort_unstable_by(|a, b| b.cmp(a));
    c
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for &v in row {
        z += (v - mx).exp();
    }
    let lz = mx + z.ln();
    row.iter().map(|&v| v - lz).collect()
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    log_softmax_row(row).into_iter().map(f64::exp).collect()
}

/// Σ_k over classifiers with a non-empty subset of mean_{r ∈ D_k} −log p_k(y_r | r).
pub fn oracle_pco(logits: &[Tensor], labels: &[usize], subsets: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    for k in 0..logits.len() {
        let rows = &subsets[k];
        if rows.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for &r in rows {
            let lp = log_softmax_row(logits[k].row(r));
            sum += -lp[labels[r]];
        }
        total += sum / rows.len() as f64;
    }
    total
}

/// (1/|Q|) Σ_{(m,n)} mean_{r ∈ D_n} −Σ_l t_m[r,l] log softmax(z_n[r, ..w_m])[l],
/// with `t_m` the softmax of teacher `m`'s full row.
pub fn oracle_ckd(logits: &[Tensor], pairs: &[(usize, usize)], subsets: &[Vec<usize>]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &(m, n) in pairs {
        let rows = &subsets[n];
        if rows.is_empty() {
            continue;
        }
        let width = logits[m].cols();
        let mut sum = 0.0;
        for &r in rows {
            let t = softmax_row(logits[m].row(r));
            let s = log_softmax_row(&logits[n].row(r)[..width]);
            let mut ce = 0.0;
            for l in 0..width {
                ce -= t[l] * s[l];
            }
            sum += ce;
        }
        total += sum / rows.len() as f64;
    }
    total / pairs.len() as f64
}

/// Random loss instance: nested widths, per-row labels valid for the widest
/// classifier, random subsets restricted to rows whose label fits.
pub struct LossInstance {
    pub widths: Vec<usize>,
    pub logits: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub subsets: Vec<Vec<usize>>,
}

pub fn random_instance(seed: u64, max_k: usize, max_classes: usize, max_rows: usize) -> LossInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=max_k);
    let total = rng.random_range(k.max(2)..=max_classes);
    let mut cuts: Vec<usize> = (1..total).collect();
    for i in (1..cuts.len()).rev() {
        let j = rng.random_range(0..=i);
        cuts.swap(i, j);
    }
    let mut widths: Vec<usize> = cuts[..k - 1].to_vec();
    widths.push(total);
    widths.sort_unstable();
    let rows = rng.random_range(1..=max_rows);
    let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..total)).collect();
    let logits = widths
        .iter()
        .map(|&w| {
            let data = (0..rows * w).map(|_| rng.random_range(-4.0..4.0)).collect();
            Tensor::new(vec![rows, w], data).unwrap()
        })
        .collect();
    let subsets = widths
        .iter()
        .map(|&w| {
            (0..rows)
                .filter(|&r| labels[r] < w && rng.random_bool(0.7))
                .collect()
        })
        .collect();
    LossInstance {
        widths,
        logits,
        labels,
        subsets,
    }
}
