//! Recall@K and mean Recall@K over ranked relation triplets.
//!
//! R@K is the fraction of an image's ground-truth triplets found among its
//! top-K predictions, averaged over images. mR@K computes the same quantity
//! per predicate class (averaged over the images containing that class) and
//! then takes the unweighted mean over classes.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A directed relation between two objects of an image. Object classes take
/// part in matching, so a prediction on a mislabelled object never matches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: usize,
    pub subject_class: usize,
    pub predicate: usize,
    pub object: usize,
    pub object_class: usize,
}

/// One image's predictions, sorted by descending score.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedPredictions {
    entries: Vec<(Triplet, f64)>,
}

impl RankedPredictions {
    /// Sorts by score (stable, so equal scores keep input order) and keeps the
    /// best-scored copy of a repeated triplet.
    pub fn new(mut entries: Vec<(Triplet, f64)>) -> Result<Self> {
        if entries.iter().any(|(_, s)| s.is_nan()) {
            return Err(Error::Data("prediction score is NaN".into()));
        }
        entries.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut seen = HashSet::new();
        entries.retain(|(t, _)| seen.insert(*t));
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(Triplet, f64)] {
        &self.entries
    }

    pub fn top_k(&self, k: usize) -> &[(Triplet, f64)] {
        &self.entries[..k.min(self.entries.len())]
    }

    fn top_k_set(&self, k: usize) -> HashSet<Triplet> {
        self.top_k(k).iter().map(|(t, _)| *t).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageResult {
    pub image_id: u64,
    pub predictions: RankedPredictions,
    pub ground_truth: Vec<Triplet>,
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    Ok(())
}

/// Mean over images of `|top-k ∩ gt| / |gt|`. Images without ground truth
/// are skipped.
pub fn recall_at_k(images: &[ImageResult], k: usize) -> Result<f64> {
    check_k(k)?;
    let mut total = 0.0;
    let mut counted = 0usize;
    for img in images {
        if img.ground_truth.is_empty() {
            log::warn!("image {} has no ground-truth relations; skipped", img.image_id);
            continue;
        }
        let top = img.predictions.top_k_set(k);
        let hits = img.ground_truth.iter().filter(|t| top.contains(t)).count();
        total += hits as f64 / img.ground_truth.len() as f64;
        counted += 1;
    }
    Ok(if counted == 0 { 0.0 } else { total / counted as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecall {
    pub class: usize,
    /// Ground-truth occurrences over all images.
    pub count: usize,
    /// Images containing the class.
    pub images: usize,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanRecall {
    pub k: usize,
    pub mean: f64,
    /// Classes with at least one ground-truth occurrence, ascending.
    pub per_class: Vec<ClassRecall>,
}

pub fn mean_recall_at_k(images: &[ImageResult], k: usize, num_classes: usize) -> Result<MeanRecall> {
    check_k(k)?;
    let mut recall_sum = vec![0.0; num_classes];
    let mut image_count = vec![0usize; num_classes];
    let mut occurrences = vec![0usize; num_classes];
    for img in images {
        let top = img.predictions.top_k_set(k);
        let mut gt = vec![0usize; num_classes];
        let mut hit = vec![0usize; num_classes];
        for t in &img.ground_truth {
            if t.predicate >= num_classes {
                return Err(Error::Data(format!(
                    "predicate {} outside {num_classes} classes",
                    t.predicate
                )));
            }
            gt[t.predicate] += 1;
            hit[t.predicate] += top.contains(t) as usize;
        }
        for c in 0..num_classes {
            if gt[c] > 0 {
                recall_sum[c] += hit[c] as f64 / gt[c] as f64;
                image_count[c] += 1;
                occurrences[c] += gt[c];
            }
        }
    }
    let per_class: Vec<ClassRecall> = (0..num_classes)
        .filter(|&c| image_count[c] > 0)
        .map(|c| ClassRecall {
            class: c,
            count: occurrences[c],
            images: image_count[c],
            recall: recall_sum[c] / image_count[c] as f64,
        })
        .collect();
    let mean = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.recall).sum::<f64>() / per_class.len() as f64
    };
    Ok(MeanRecall { k, mean, per_class })
}

/// R@K and mR@K for several K over the same images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub mean_recall: Vec<MeanRecall>,
}

impl EvalSummary {
    pub fn compute(images: &[ImageResult], ks: &[usize], num_classes: usize) -> Result<Self> {
        if ks.is_empty() {
            return Err(Error::Config("empty K list".into()));
        }
        Ok(Self {
            ks: ks.to_vec(),
            recall: ks.iter().map(|&k| recall_at_k(images, k)).collect::<Result<_>>()?,
            mean_recall: ks
                .iter()
                .map(|&k| mean_recall_at_k(images, k, num_classes))
                .collect::<Result<_>>()?,
        })
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }

    pub fn mean_recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.mean_recall[i].mean)
    }

    /// Per-class table with columns `class,count,recall_at_<k>...`, one row
    /// per class that occurs in the ground truth.
    pub fn class_table_csv(&self, class_names: &[&str]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["class".to_string(), "count".to_string()];
        header.extend(self.ks.iter().map(|k| format!("recall_at_{k}")));
        w.write_record(&header).map_err(csv_err)?;
        let Some(first) = self.mean_recall.first() else {
            return Err(Error::Config("empty K list".into()));
        };
        for (row, cr) in first.per_class.iter().enumerate() {
            let name = class_names
                .get(cr.class)
                .ok_or_else(|| Error::Index(format!("no name for class {}", cr.class)))?;
            let mut rec = vec![name.to_string(), cr.count.to_string()];
            rec.extend(
                self.mean_recall
                    .iter()
                    .map(|m| format!("{:.6}", m.per_class[row].recall)),
            );
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_class_table(&self, path: &Path, class_names: &[&str]) -> Result<()> {
        let text = self.class_table_csv(class_names)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}
