//! Encoder-decoder scene-graph model over per-object proposals.
//!
//! Each proposal carries a visual vector, a box and an initial label. The
//! object encoder refines proposals with a hybrid-attention stack over a
//! visual stream (`[v_i, FC(s_i)]`) and a semantic stream (`Emb(l_i)`); a
//! linear decoder re-labels them; a second stack encodes the relation
//! context from `[v_i, x_i]` and `Emb(l'_i)`. Predicates for a directed pair
//! come from the classifier bank, using only its last classifier at
//! inference time.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{BoundingBox, SceneRecord};
use crate::dataio::derive_seed;
use crate::error::{Error, Result};
use crate::gcl::ClassifierBank;
use crate::grouping::GroupPartition;
use crate::numcore::{argmax, Linear, ParamId, ParamStore, Tape, Tensor, Var};
use crate::sha::{AttentionConfig, ShaStack};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Ground-truth boxes and labels.
    #[serde(rename = "predcls")]
    PredCls,
    /// Ground-truth boxes, noisy initial labels.
    #[serde(rename = "sgcls")]
    SgCls,
    /// Jittered boxes and noisy labels. An emulation of detection, there is
    /// no detector.
    #[serde(rename = "sgdet_sim")]
    SgDetSim,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "predcls" => Ok(Self::PredCls),
            "sgcls" => Ok(Self::SgCls),
            "sgdet_sim" | "sgdet" => Ok(Self::SgDetSim),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PredCls => "predcls",
            Self::SgCls => "sgcls",
            Self::SgDetSim => "sgdet_sim",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub visual: Vec<f64>,
    pub spatial: BoundingBox,
    pub initial_label: usize,
}

/// Corruption applied to ground truth when building proposals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProposalNoise {
    /// Probability that an initial label is replaced by a different class.
    pub label_noise: f64,
    /// Standard deviation of the per-coordinate box jitter.
    pub box_jitter: f64,
    pub num_object_classes: usize,
}

/// Builds proposals for one scene. Randomness depends only on `seed` and the
/// scene's image id.
pub fn generate_proposals(
    scene: &SceneRecord,
    visual: &[Vec<f64>],
    mode: Mode,
    noise: ProposalNoise,
    seed: u64,
) -> Result<Vec<Proposal>> {
    if scene.objects.len() < 2 {
        return Err(Error::Data(format!(
            "image {} has {} objects, need at least 2",
            scene.image_id,
            scene.objects.len()
        )));
    }
    if visual.len() != scene.objects.len() {
        return Err(Error::Data(format!(
            "image {}: {} feature rows for {} objects",
            scene.image_id,
            visual.len(),
            scene.objects.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[&scene.image_id.to_le_bytes()]));
    let jitter = Normal::new(0.0, noise.box_jitter.max(0.0))
        .map_err(|e| Error::Config(format!("box jitter: {e}")))?;
    let flips = mode != Mode::PredCls && noise.num_object_classes > 1;
    Ok(scene
        .objects
        .iter()
        .zip(visual)
        .map(|(o, v)| {
            let mut label = o.class;
            if flips && rng.random::<f64>() < noise.label_noise {
                let other = rng.random_range(0..noise.num_object_classes - 1);
                label = if other >= o.class { other + 1 } else { other };
            }
            let mut b = o.bbox;
            if mode == Mode::SgDetSim {
                for x in &mut b {
                    *x = (*x + jitter.sample(&mut rng)).clamp(0.0, 1.0);
                }
                if b[0] > b[2] {
                    b.swap(0, 2);
                }
                if b[1] > b[3] {
                    b.swap(1, 3);
                }
            }
            Proposal {
                visual: v.clone(),
                spatial: b,
                initial_label: label,
            }
        })
        .collect())
}

/// Smallest box enclosing both inputs.
pub fn union_box(a: &BoundingBox, b: &BoundingBox) -> BoundingBox {
    [a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub visual_dim: usize,
    pub num_object_classes: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub emb_dim: usize,
    pub spatial_dim: usize,
    pub union_dim: usize,
    pub obj_layers: usize,
    pub rel_layers: usize,
}

/// A directed labelled pair inside one scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RelationSample {
    pub subject: usize,
    pub object: usize,
    /// Vocabulary index of the predicate.
    pub label: usize,
}

/// Per-object results of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityState {
    pub refined: Vec<f64>,
    pub final_label: usize,
    pub final_feature: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredicatePrediction {
    pub label: usize,
    pub score: f64,
    /// Softmax over every predicate class.
    pub distribution: Vec<f64>,
}

/// Differentiable outputs of one scene's forward pass.
pub struct SceneOutputs<'t> {
    pub refined: Var<'t>,
    pub object_logits: Var<'t>,
    pub final_labels: Vec<usize>,
    pub relation_features: Var<'t>,
}

#[derive(Clone, Debug)]
pub struct SggModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    spatial_fc: Linear,
    embed: ParamId,
    obj_visual: Linear,
    obj_semantic: Linear,
    obj_encoder: ShaStack,
    obj_decoder: Linear,
    rel_visual: Linear,
    rel_semantic: Linear,
    rel_encoder: ShaStack,
    union_fc: Linear,
    pub bank: ClassifierBank,
}

impl SggModel {
    /// Builds every parameter from `seed`. Parameter names and creation order
    /// are fixed, so equal inputs give equal models.
    pub fn new(config: ModelConfig, partition: GroupPartition, seed: u64) -> Result<Self> {
        let attn = AttentionConfig::new(config.model_dim, config.heads, config.ffn_dim)?;
        if config.num_object_classes == 0 || config.visual_dim == 0 {
            return Err(Error::Config("model needs object classes and visual features".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let spatial_fc = Linear::new(&mut store, "obj.spatial", 4, c.spatial_dim, &mut rng);
        let embed = store.add_uniform("embed", &[c.num_object_classes, c.emb_dim], 0.1, &mut rng);
        let obj_visual = Linear::new(
            &mut store,
            "obj.visual",
            c.visual_dim + c.spatial_dim,
            c.model_dim,
            &mut rng,
        );
        let obj_semantic = Linear::new(&mut store, "obj.semantic", c.emb_dim, c.model_dim, &mut rng);
        let obj_encoder = ShaStack::new(&mut store, "obj.enc", c.obj_layers, attn, &mut rng)?;
        let obj_decoder = Linear::new(
            &mut store,
            "obj.dec",
            c.model_dim,
            c.num_object_classes,
            &mut rng,
        );
        let rel_visual = Linear::new(
            &mut store,
            "rel.visual",
            c.visual_dim + c.model_dim,
            c.model_dim,
            &mut rng,
        );
        let rel_semantic = Linear::new(&mut store, "rel.semantic", c.emb_dim, c.model_dim, &mut rng);
        let rel_encoder = ShaStack::new(&mut store, "rel.enc", c.rel_layers, attn, &mut rng)?;
        let union_fc = Linear::new(
            &mut store,
            "rel.union",
            2 * c.visual_dim + 4,
            c.union_dim,
            &mut rng,
        );
        let bank = ClassifierBank::new(
            &mut store,
            "gcl",
            partition,
            2 * c.model_dim,
            c.union_dim,
            &mut rng,
        );
        Ok(Self {
            config,
            store,
            spatial_fc,
            embed,
            obj_visual,
            obj_semantic,
            obj_encoder,
            obj_decoder,
            rel_visual,
            rel_semantic,
            rel_encoder,
            union_fc,
            bank,
        })
    }

    pub fn embedding(&self) -> ParamId {
        self.embed
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        match labels.iter().find(|&&l| l >= self.config.num_object_classes) {
            Some(bad) => Err(Error::Data(format!(
                "object label {bad} outside {} classes",
                self.config.num_object_classes
            ))),
            None => Ok(()),
        }
    }

    fn visual_matrix(&self, proposals: &[Proposal]) -> Result<Tensor> {
        if proposals.is_empty() {
            return Err(Error::Data("no proposals".into()));
        }
        let rows: Vec<Vec<f64>> = proposals.iter().map(|p| p.visual.clone()).collect();
        let t = Tensor::from_rows(&rows)?;
        if t.cols() != self.config.visual_dim {
            return Err(Error::Data(format!(
                "visual features have {} dims, model expects {}",
                t.cols(),
                self.config.visual_dim
            )));
        }
        Ok(t)
    }

    fn embed_labels<'t>(&self, tape: &'t Tape, labels: &[usize]) -> Result<Var<'t>> {
        self.check_labels(labels)?;
        tape.param(&self.store, self.embed).gather_rows(labels)
    }

    /// Refined object features `x_i`, one row per proposal.
    pub fn encode_objects<'t>(&self, tape: &'t Tape, proposals: &[Proposal]) -> Result<Var<'t>> {
        let s = &self.store;
        let v = tape.constant(self.visual_matrix(proposals)?);
        let boxes: Vec<Vec<f64>> = proposals.iter().map(|p| p.spatial.to_vec()).collect();
        let sp = self.spatial_fc.forward(tape, s, tape.constant(Tensor::from_rows(&boxes)?))?;
        let x = self.obj_visual.forward(tape, s, tape.concat_cols(&[v, sp])?)?;
        let labels: Vec<usize> = proposals.iter().map(|p| p.initial_label).collect();
        let y = self.obj_semantic.forward(tape, s, self.embed_labels(tape, &labels)?)?;
        self.obj_encoder.forward(tape, s, x, y)
    }

    pub fn object_logits<'t>(&self, tape: &'t Tape, refined: Var<'t>) -> Result<Var<'t>> {
        self.obj_decoder.forward(tape, &self.store, refined)
    }

    /// Argmax object class per row; ties go to the lowest index.
    pub fn decode_object_labels<'t>(&self, tape: &'t Tape, refined: Var<'t>) -> Result<Vec<usize>> {
        let logits = self.object_logits(tape, refined)?.value();
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    /// Relation context features `x'_i`.
    pub fn encode_relations<'t>(
        &self,
        tape: &'t Tape,
        proposals: &[Proposal],
        refined: Var<'t>,
        labels: &[usize],
    ) -> Result<Var<'t>> {
        let n = proposals.len();
        if labels.len() != n || refined.shape()[0] != n {
            return Err(Error::Data(format!(
                "{n} proposals, {} refined rows, {} labels",
                refined.shape()[0],
                labels.len()
            )));
        }
        let s = &self.store;
        let v = tape.constant(self.visual_matrix(proposals)?);
        let x = self.rel_visual.forward(tape, s, tape.concat_cols(&[v, refined])?)?;
        let y = self.rel_semantic.forward(tape, s, self.embed_labels(tape, labels)?)?;
        self.rel_encoder.forward(tape, s, x, y)
    }

    /// Full per-scene forward pass. In predcls the decoded labels are
    /// replaced by the ground truth.
    pub fn forward_scene<'t>(
        &self,
        tape: &'t Tape,
        proposals: &[Proposal],
        mode: Mode,
        gt_labels: &[usize],
    ) -> Result<SceneOutputs<'t>> {
        let refined = self.encode_objects(tape, proposals)?;
        let object_logits = self.object_logits(tape, refined)?;
        let final_labels = if mode == Mode::PredCls {
            if gt_labels.len() != proposals.len() {
                return Err(Error::Data("ground-truth labels misaligned with proposals".into()));
            }
            gt_labels.to_vec()
        } else {
            let l = object_logits.value();
            (0..l.rows()).map(|r| argmax(l.row(r))).collect()
        };
        let relation_features = self.encode_relations(tape, proposals, refined, &final_labels)?;
        Ok(SceneOutputs {
            refined,
            object_logits,
            final_labels,
            relation_features,
        })
    }

    /// Pair features `[x'_i, x'_j]` and union features `u_ij` for directed pairs.
    pub fn pair_inputs<'t>(
        &self,
        tape: &'t Tape,
        proposals: &[Proposal],
        relation_features: Var<'t>,
        pairs: &[(usize, usize)],
    ) -> Result<(Var<'t>, Var<'t>)> {
        let n = proposals.len();
        if pairs.is_empty() {
            return Err(Error::Data("no pairs".into()));
        }
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i == j || i >= n || j >= n) {
            return Err(Error::Data(format!("invalid pair ({i}, {j}) for {n} objects")));
        }
        let subj: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let obj: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let pair = tape.concat_cols(&[
            relation_features.gather_rows(&subj)?,
            relation_features.gather_rows(&obj)?,
        ])?;
        let union_rows: Vec<Vec<f64>> = pairs
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (&proposals[i], &proposals[j]);
                let mut row = Vec::with_capacity(2 * self.config.visual_dim + 4);
                row.extend_from_slice(&a.visual);
                row.extend_from_slice(&b.visual);
                row.extend_from_slice(&union_box(&a.spatial, &b.spatial));
                row
            })
            .collect();
        let raw = tape.constant(Tensor::from_rows(&union_rows)?);
        let union = self.union_fc.forward(tape, &self.store, raw)?.relu();
        Ok((pair, union))
    }

    /// Predictions of the last classifier for each pair row.
    pub fn predict_predicates<'t>(
        &self,
        tape: &'t Tape,
        pair: Var<'t>,
        union: Var<'t>,
    ) -> Result<Vec<PredicatePrediction>> {
        let last = self.bank.num_classifiers() - 1;
        let logits = self.bank.logits(tape, &self.store, last, pair, union)?.value();
        Ok(predictions_from_logits(&logits))
    }

    /// Inference on one scene over every ordered pair.
    pub fn infer_scene(
        &self,
        proposals: &[Proposal],
        mode: Mode,
        gt_labels: &[usize],
    ) -> Result<(Vec<EntityState>, Vec<((usize, usize), PredicatePrediction)>)> {
        let tape = Tape::new();
        let out = self.forward_scene(&tape, proposals, mode, gt_labels)?;
        let n = proposals.len();
        let pairs = all_pairs(n);
        let (pair, union) = self.pair_inputs(&tape, proposals, out.relation_features, &pairs)?;
        let preds = self.predict_predicates(&tape, pair, union)?;
        let refined = out.refined.value();
        let feats = out.relation_features.value();
        let entities = (0..n)
            .map(|i| EntityState {
                refined: refined.row(i).to_vec(),
                final_label: out.final_labels[i],
                final_feature: feats.row(i).to_vec(),
            })
            .collect();
        Ok((entities, pairs.into_iter().zip(preds).collect()))
    }
}

/// Every ordered pair `(i, j)` with `i != j`, subject-major.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect()
}

/// Softmax, argmax and max probability of each logits row.
pub fn predictions_from_logits(logits: &Tensor) -> Vec<PredicatePrediction> {
    (0..logits.rows())
        .map(|r| {
            let distribution = crate::numcore::softmax(logits.row(r));
            let label = argmax(&distribution);
            PredicatePrediction {
                label,
                score: distribution[label],
                distribution,
            }
        })
        .collect()
}
