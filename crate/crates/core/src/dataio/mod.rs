//! Scene-graph records, synthetic long-tailed data, annotation files and run
//! configuration.

mod annotations;
mod config;
mod features;
mod synthetic;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use annotations::{
    load_annotations, read_predicate_counts, write_annotations, write_predicate_counts,
};
pub use config::{OptimizerKind, RunConfig};
pub use features::FeatureSynth;
pub use synthetic::{generate_dataset, SyntheticSpec};

use crate::error::{Error, Result};
use crate::grouping::{sort_vocabulary, PredicateVocabulary};

/// Axis-aligned box `[x1, y1, x2, y2]` in normalized image coordinates.
pub type BoundingBox = [f64; 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    /// Index into [`ClassCatalog::objects`].
    pub class: usize,
    pub bbox: BoundingBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub subject: usize,
    pub object: usize,
    /// Index into [`ClassCatalog::predicates`].
    pub predicate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub image_id: u64,
    pub objects: Vec<ObjectRecord>,
    pub relations: Vec<RelationRecord>,
}

impl SceneRecord {
    pub fn validate(&self, catalog: &ClassCatalog) -> Result<()> {
        let id = self.image_id;
        for (i, o) in self.objects.iter().enumerate() {
            if o.class >= catalog.objects.len() {
                return Err(Error::Data(format!("image {id}: object {i} has unknown class")));
            }
            let [x1, y1, x2, y2] = o.bbox;
            let inside = o.bbox.iter().all(|v| (0.0..=1.0).contains(v));
            if !inside || x1 > x2 || y1 > y2 {
                return Err(Error::Data(format!("image {id}: object {i} has invalid box {:?}", o.bbox)));
            }
        }
        let n = self.objects.len();
        for r in &self.relations {
            if r.subject >= n || r.object >= n || r.subject == r.object {
                return Err(Error::Data(format!(
                    "image {id}: relation {} -> {} invalid for {n} objects",
                    r.subject, r.object
                )));
            }
            if r.predicate >= catalog.predicates.len() {
                return Err(Error::Data(format!("image {id}: unknown predicate index")));
            }
        }
        Ok(())
    }
}

/// Object and predicate class names. Indices into these lists are stable
/// across splits; the trained model uses vocabulary order instead.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCatalog {
    pub objects: Vec<String>,
    pub predicates: Vec<String>,
}

impl ClassCatalog {
    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|n| n == name)
    }

    pub fn predicate_index(&self, name: &str) -> Option<usize> {
        self.predicates.iter().position(|n| n == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DatasetMeta {
    catalog: ClassCatalog,
    features: FeatureSynth,
}

pub const META_FILE: &str = "meta.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

/// Train/test scenes with the predicate vocabulary counted on the train split
/// and cached per-object visual features.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub catalog: ClassCatalog,
    pub features: FeatureSynth,
    pub train: Vec<SceneRecord>,
    pub test: Vec<SceneRecord>,
    vocab: PredicateVocabulary,
    catalog_to_vocab: Vec<Option<usize>>,
    train_visual: Vec<Vec<Vec<f64>>>,
    test_visual: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Dataset {
    pub fn new(
        catalog: ClassCatalog,
        features: FeatureSynth,
        train: Vec<SceneRecord>,
        test: Vec<SceneRecord>,
    ) -> Result<Self> {
        for s in train.iter().chain(&test) {
            s.validate(&catalog)?;
        }
        let vocab = count_vocabulary(&catalog, &train)?;
        let catalog_to_vocab: Vec<Option<usize>> = catalog
            .predicates
            .iter()
            .map(|name| vocab.index_of(name))
            .collect();
        for s in &test {
            for r in &s.relations {
                if catalog_to_vocab[r.predicate].is_none() {
                    return Err(Error::Data(format!(
                        "test predicate {:?} never occurs in the train split",
                        catalog.predicates[r.predicate]
                    )));
                }
            }
        }
        let train_visual = train.iter().map(|s| features.scene_features(s, &catalog)).collect();
        let test_visual = test.iter().map(|s| features.scene_features(s, &catalog)).collect();
        Ok(Self {
            catalog,
            features,
            train,
            test,
            vocab,
            catalog_to_vocab,
            train_visual,
            test_visual,
        })
    }

    pub fn vocab(&self) -> &PredicateVocabulary {
        &self.vocab
    }

    /// Vocabulary position of a catalog predicate index.
    pub fn label_of(&self, predicate: usize) -> Option<usize> {
        self.catalog_to_vocab.get(predicate).copied().flatten()
    }

    pub fn scenes(&self, split: Split) -> &[SceneRecord] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn visual(&self, split: Split, scene: usize) -> &[Vec<f64>] {
        match split {
            Split::Train => &self.train_visual[scene],
            Split::Test => &self.test_visual[scene],
        }
    }

    /// Vocabulary-ordered instance counts of each predicate in `split`.
    pub fn split_counts(&self, split: Split) -> Vec<u64> {
        let mut counts = vec![0; self.vocab.len()];
        for s in self.scenes(split) {
            for r in &s.relations {
                if let Some(l) = self.label_of(r.predicate) {
                    counts[l] += 1;
                }
            }
        }
        counts
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = DatasetMeta {
            catalog: self.catalog.clone(),
            features: self.features.clone(),
        };
        let meta_path = dir.join(META_FILE);
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;
        write_annotations(&dir.join(TRAIN_FILE), &self.train, &self.catalog)?;
        write_annotations(&dir.join(TEST_FILE), &self.test, &self.catalog)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: meta_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let train = load_annotations(&dir.join(TRAIN_FILE), &meta.catalog)?;
        let test = load_annotations(&dir.join(TEST_FILE), &meta.catalog)?;
        Self::new(meta.catalog, meta.features, train, test)
    }

    /// SHA-256 over the dataset files as written by [`Dataset::write`].
    pub fn content_hash(dir: &Path) -> Result<String> {
        let mut hasher = Sha256::new();
        for name in [META_FILE, TRAIN_FILE, TEST_FILE] {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            hasher.update(name.as_bytes());
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
        Ok(hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }
}

/// Predicate vocabulary from training-split relation counts. Predicates that
/// never occur are left out; ties keep catalog order.
pub fn count_vocabulary(catalog: &ClassCatalog, train: &[SceneRecord]) -> Result<PredicateVocabulary> {
    let mut counts = vec![0i64; catalog.predicates.len()];
    for s in train {
        for r in &s.relations {
            counts[r.predicate] += 1;
        }
    }
    let raw: Vec<(&str, i64)> = catalog
        .predicates
        .iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .map(|(n, c)| (n.as_str(), c))
        .collect();
    if raw.is_empty() {
        return Err(Error::Data("training split has no relations".into()));
    }
    sort_vocabulary(&raw)
}

pub(crate) fn derive_seed(base: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
