use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassCatalog, Dataset, FeatureSynth, ObjectRecord, RelationRecord, SceneRecord};
use crate::error::{Error, Result};

/// Parameters of a synthetic long-tailed scene-graph dataset.
///
/// Predicate `r` (1-based rank) is drawn with probability proportional to
/// `r^(-zipf_exponent)`; an exponent of 0 gives uniform classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub object_classes: usize,
    pub predicate_classes: usize,
    pub zipf_exponent: f64,
    pub scenes: usize,
    /// Inclusive range.
    pub objects_per_scene: (usize, usize),
    /// Inclusive range; capped per scene by its object count.
    pub relations_per_scene: (usize, usize),
    pub feature_dim: usize,
    pub seed: u64,
    pub object_signal: f64,
    pub predicate_signal: f64,
    pub noise: f64,
    pub test_fraction: f64,
}

impl Default for SyntheticSpec {
    /// The standard benchmark: 20 predicates with a Zipf exponent of 1.2 and
    /// 2,000 training scenes. The noise level leaves single features
    /// ambiguous, so label priors pull predictions toward head classes.
    fn default() -> Self {
        Self {
            object_classes: 10,
            predicate_classes: 20,
            zipf_exponent: 1.2,
            scenes: 2857,
            objects_per_scene: (3, 5),
            relations_per_scene: (2, 3),
            feature_dim: 16,
            seed: 7,
            object_signal: 1.0,
            predicate_signal: 1.0,
            noise: 0.6,
            test_fraction: 0.3,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        let (omin, omax) = self.objects_per_scene;
        let (rmin, rmax) = self.relations_per_scene;
        if self.object_classes == 0 || self.predicate_classes == 0 {
            return bad("class counts must be positive");
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent must be finite and >= 0");
        }
        if self.scenes < 2 {
            return bad("need at least 2 scenes");
        }
        if omin < 2 || omin > omax {
            return bad("objects_per_scene must be a range with minimum >= 2");
        }
        if rmin == 0 || rmin > rmax {
            return bad("relations_per_scene must be a range with minimum >= 1");
        }
        if rmin > omin {
            return bad("relations_per_scene minimum exceeds objects_per_scene minimum");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie in (0, 1)");
        }
        for v in [self.object_signal, self.predicate_signal, self.noise] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad("signal and noise levels must be finite and >= 0");
            }
        }
        Ok(())
    }

    pub fn catalog(&self) -> ClassCatalog {
        ClassCatalog {
            objects: (0..self.object_classes).map(|i| format!("obj_{i:02}")).collect(),
            predicates: (0..self.predicate_classes)
                .map(|i| format!("pred_{i:02}"))
                .collect(),
        }
    }

    pub fn feature_synth(&self) -> FeatureSynth {
        FeatureSynth {
            dim: self.feature_dim,
            seed: self.seed,
            object_signal: self.object_signal,
            predicate_signal: self.predicate_signal,
            noise: self.noise,
        }
    }

    /// Expected share of predicate rank `r` (0-based).
    pub fn zipf_probabilities(&self) -> Vec<f64> {
        let w: Vec<f64> = (1..=self.predicate_classes)
            .map(|r| (r as f64).powf(-self.zipf_exponent))
            .collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }
}

/// Draws all scenes, then splits them into train and test.
pub fn generate_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let zipf = WeightedIndex::new(spec.zipf_probabilities())
        .map_err(|e| Error::Config(format!("zipf weights: {e}")))?;
    let scenes: Vec<SceneRecord> = (0..spec.scenes)
        .map(|i| draw_scene(spec, i as u64 + 1, &zipf, &mut rng))
        .collect();
    let is_test = stratified_split(&scenes, spec.predicate_classes, spec.test_fraction, &mut rng);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (scene, t) in scenes.into_iter().zip(is_test) {
        if t {
            test.push(scene);
        } else {
            train.push(scene);
        }
    }
    Dataset::new(spec.catalog(), spec.feature_synth(), train, test)
}

fn draw_scene(spec: &SyntheticSpec, image_id: u64, zipf: &WeightedIndex<f64>, rng: &mut ChaCha8Rng) -> SceneRecord {
    let n = rng.random_range(spec.objects_per_scene.0..=spec.objects_per_scene.1);
    let objects = (0..n)
        .map(|_| {
            let class = rng.random_range(0..spec.object_classes);
            let x1: f64 = rng.random_range(0.0..0.7);
            let y1: f64 = rng.random_range(0.0..0.7);
            let x2 = (x1 + rng.random_range(0.1..0.3)).min(1.0);
            let y2 = (y1 + rng.random_range(0.1..0.3)).min(1.0);
            ObjectRecord {
                class,
                bbox: [x1, y1, x2, y2],
            }
        })
        .collect();
    let r = rng.random_range(spec.relations_per_scene.0..=spec.relations_per_scene.1.min(n));
    let mut subjects: Vec<usize> = (0..n).collect();
    subjects.shuffle(rng);
    let relations = subjects[..r]
        .iter()
        .map(|&subject| {
            let mut object = rng.random_range(0..n - 1);
            if object >= subject {
                object += 1;
            }
            RelationRecord {
                subject,
                object,
                predicate: zipf.sample(rng),
            }
        })
        .collect();
    SceneRecord {
        image_id,
        objects,
        relations,
    }
}

/// Marks scenes for the test split. Classes are visited rarest first and each
/// receives roughly `fraction` of the scenes it occurs in; remaining scenes
/// fill the split to its overall size. Every class seen in test keeps at least
/// one training scene.
fn stratified_split(
    scenes: &[SceneRecord],
    num_classes: usize,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<bool> {
    let n = scenes.len();
    let n_test = ((n as f64) * fraction).round().clamp(1.0, (n - 1) as f64) as usize;
    let mut by_class: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); num_classes];
    let mut totals = vec![0usize; num_classes];
    for (i, s) in scenes.iter().enumerate() {
        for r in &s.relations {
            by_class[r.predicate].insert(i);
            totals[r.predicate] += 1;
        }
    }
    let mut order: Vec<usize> = (0..num_classes).filter(|&c| totals[c] > 0).collect();
    order.sort_by_key(|&c| (totals[c], c));

    let mut assigned: Vec<Option<bool>> = vec![None; n];
    let mut test_count = 0;
    for &c in &order {
        let members = &by_class[c];
        let quota = ((members.len() as f64) * fraction).round().max(1.0) as usize;
        let mut have = members.iter().filter(|&&i| assigned[i] == Some(true)).count();
        let mut free: Vec<usize> = members.iter().copied().filter(|&i| assigned[i].is_none()).collect();
        free.shuffle(rng);
        let mut reserved_train = members.iter().any(|&i| assigned[i] == Some(false));
        for i in free {
            if !reserved_train {
                assigned[i] = Some(false);
                reserved_train = true;
                continue;
            }
            if have >= quota || test_count >= n_test {
                break;
            }
            assigned[i] = Some(true);
            have += 1;
            test_count += 1;
        }
        if !reserved_train {
            let first = *members.iter().next().expect("class has scenes");
            assigned[first] = Some(false);
            test_count -= 1;
        }
    }
    let mut rest: Vec<usize> = (0..n).filter(|&i| assigned[i].is_none()).collect();
    rest.shuffle(rng);
    for i in rest {
        let t = test_count < n_test;
        assigned[i] = Some(t);
        test_count += t as usize;
    }
    assigned.into_iter().map(|a| a == Some(true)).collect()
}
