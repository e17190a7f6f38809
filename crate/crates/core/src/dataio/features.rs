use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{derive_seed, ClassCatalog, SceneRecord};

/// Deterministic stand-in for detector features.
///
/// An object's visual vector is
/// `object_signal·dir(class) + predicate_signal·Σ dir(p) + noise·ε`,
/// where the sum runs over the predicates of relations the object is the
/// subject of, every `dir` is a unit vector derived from the class name, and
/// `ε` is standard normal noise seeded by image id and object position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSynth {
    pub dim: usize,
    pub seed: u64,
    pub object_signal: f64,
    pub predicate_signal: f64,
    pub noise: f64,
}

impl FeatureSynth {
    pub fn direction(&self, kind: &str, name: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.seed,
            &[kind.as_bytes(), name.as_bytes()],
        ));
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / norm).collect()
    }

    pub fn scene_features(&self, scene: &SceneRecord, catalog: &ClassCatalog) -> Vec<Vec<f64>> {
        let object_dirs: Vec<Vec<f64>> = catalog
            .objects
            .iter()
            .map(|n| self.direction("object", n))
            .collect();
        let pred_dirs: Vec<Vec<f64>> = catalog
            .predicates
            .iter()
            .map(|n| self.direction("predicate", n))
            .collect();
        scene
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    self.seed,
                    &[&scene.image_id.to_le_bytes(), &(i as u64).to_le_bytes()],
                ));
                let mut v: Vec<f64> = object_dirs[o.class]
                    .iter()
                    .map(|d| self.object_signal * d)
                    .collect();
                for r in scene.relations.iter().filter(|r| r.subject == i) {
                    for (x, d) in v.iter_mut().zip(&pred_dirs[r.predicate]) {
                        *x += self.predicate_signal * d;
                    }
                }
                for x in &mut v {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *x += self.noise * e;
                }
                v
            })
            .collect()
    }
}
