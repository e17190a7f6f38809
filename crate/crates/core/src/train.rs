//! Seeded training and evaluation of the scene-graph model.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{derive_seed, Dataset, OptimizerKind, RunConfig, Split};
use crate::error::{Error, Result};
use crate::gcl::{build_matching_set, gcl_loss, MatchingSet};
use crate::grouping::{partition_predicates, GroupPartition, PredicateVocabulary};
use crate::metrics::{EvalSummary, ImageResult, RankedPredictions, Triplet};
use crate::numcore::{ParamStore, Tape, Tensor};
use crate::pipeline::{generate_proposals, Mode, ModelConfig, ProposalNoise, SggModel};
use crate::sampler::{draw_epoch, SamplingPlan};

/// First-order optimizer over every parameter of a store.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    momentum: f64,
    weight_decay: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    /// `momentum` is the SGD momentum or Adam's first-moment decay.
    pub fn new(kind: OptimizerKind, momentum: f64, weight_decay: f64, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        Self {
            kind,
            momentum,
            weight_decay,
            second: if kind == OptimizerKind::Adam { zeros.clone() } else { Vec::new() },
            first: zeros,
            steps: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.steps += 1;
        let ids: Vec<_> = store.ids().collect();
        for (slot, id) in ids.into_iter().enumerate() {
            let t = store.get_mut(id);
            let grad: Vec<f64> = match t.grad() {
                Some(g) => g.to_vec(),
                None => continue,
            };
            let data = t.data_mut();
            let m = &mut self.first[slot];
            match self.kind {
                OptimizerKind::Sgd => {
                    for ((w, g), v) in data.iter_mut().zip(&grad).zip(m.iter_mut()) {
                        let g = g + self.weight_decay * *w;
                        *v = self.momentum * *v + g;
                        *w -= lr * *v;
                    }
                }
                OptimizerKind::Adam => {
                    let s = &mut self.second[slot];
                    let b1 = self.momentum;
                    let c1 = 1.0 - b1.powi(self.steps as i32);
                    let c2 = 1.0 - Self::BETA2.powi(self.steps as i32);
                    for (((w, g), v1), v2) in data.iter_mut().zip(&grad).zip(m.iter_mut()).zip(s.iter_mut()) {
                        let g = g + self.weight_decay * *w;
                        *v1 = b1 * *v1 + (1.0 - b1) * g;
                        *v2 = Self::BETA2 * *v2 + (1.0 - Self::BETA2) * g * g;
                        *w -= lr * (*v1 / c1) / ((*v2 / c2).sqrt() + Self::EPS);
                    }
                }
            }
        }
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let ids: Vec<_> = store.ids().collect();
    let norm = ids
        .iter()
        .filter_map(|&id| store.get(id).grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for id in ids {
            let t = store.get_mut(id);
            if let Some(g) = t.grad() {
                let scaled: Vec<f64> = g.iter().map(|x| x * scale).collect();
                t.zero_grad();
                store.accumulate_grad(id, &scaled);
            }
        }
    }
    norm
}

/// Linear warm-up from a tenth of the base rate, then step decay.
pub fn learning_rate(cfg: &RunConfig, step: usize) -> f64 {
    let warm = if step < cfg.warmup_steps {
        0.1 + 0.9 * step as f64 / cfg.warmup_steps as f64
    } else {
        1.0
    };
    let decays = cfg.decay_steps.iter().filter(|&&s| step >= s).count();
    cfg.lr * warm * cfg.decay_factor.powi(decays as i32)
}

/// Grouping, sampling plan, matching set and distillation weight of a run.
#[derive(Clone, Debug)]
pub struct TrainSetup {
    pub partition: GroupPartition,
    pub plan: SamplingPlan,
    pub matching: MatchingSet,
    pub alpha: f64,
}

impl TrainSetup {
    /// Without GCL a single classifier sees every sample.
    pub fn new(cfg: &RunConfig, vocab: &PredicateVocabulary) -> Result<Self> {
        let (partition, plan) = if cfg.gcl {
            let p = partition_predicates(vocab, cfg.mu)?;
            let plan = SamplingPlan::median_resampling(vocab, &p)?;
            (p, plan)
        } else {
            let p = GroupPartition::single(vocab.len());
            let plan = SamplingPlan::keep_all(vocab, &p);
            (p, plan)
        };
        let matching = build_matching_set(partition.num_groups(), cfg.strategy);
        Ok(Self {
            partition,
            plan,
            matching,
            alpha: cfg.effective_alpha(),
        })
    }
}

pub fn model_config(cfg: &RunConfig, dataset: &Dataset) -> ModelConfig {
    ModelConfig {
        visual_dim: dataset.features.dim,
        num_object_classes: dataset.catalog.objects.len(),
        model_dim: cfg.model_dim,
        heads: cfg.heads,
        ffn_dim: cfg.ffn_dim,
        emb_dim: cfg.emb_dim,
        spatial_dim: cfg.spatial_dim,
        union_dim: cfg.union_dim,
        obj_layers: cfg.obj_layers,
        rel_layers: cfg.rel_layers,
    }
}

pub fn proposal_noise(cfg: &RunConfig, dataset: &Dataset) -> ProposalNoise {
    ProposalNoise {
        label_noise: cfg.label_noise,
        box_jitter: cfg.box_jitter,
        num_object_classes: dataset.catalog.objects.len(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossLogEntry {
    pub step: usize,
    pub lr: f64,
    pub pco: f64,
    pub ckd: f64,
    pub object: f64,
    pub total: f64,
}

pub struct TrainOutcome {
    pub model: SggModel,
    pub setup: TrainSetup,
    pub losses: Vec<LossLogEntry>,
}

/// Runs `cfg.steps` mini-batch updates over the training split.
pub fn train(cfg: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let vocab = dataset.vocab();
    let setup = TrainSetup::new(cfg, vocab)?;
    let mut model = SggModel::new(
        model_config(cfg, dataset),
        setup.partition.clone(),
        derive_seed(cfg.seed, &[b"init"]),
    )?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.momentum, cfg.weight_decay, &model.store);
    let noise = proposal_noise(cfg, dataset);

    let usable: Vec<usize> = dataset
        .train
        .iter()
        .enumerate()
        .filter(|(_, s)| s.objects.len() >= 2 && !s.relations.is_empty())
        .map(|(i, _)| i)
        .collect();
    if usable.is_empty() {
        return Err(Error::Data("no training scene has relations".into()));
    }

    let mut losses = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(usable.len()) {
            if cursor == order.len() {
                order = usable.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    cfg.seed,
                    &[b"order", &epoch.to_le_bytes()],
                ));
                order.shuffle(&mut rng);
                cursor = 0;
                epoch += 1;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let tape = Tape::new();
        let mut pairs = Vec::new();
        let mut unions = Vec::new();
        let mut labels = Vec::new();
        let mut object_terms = Vec::new();
        let proposal_seed = derive_seed(cfg.seed, &[b"proposals", &epoch.to_le_bytes()]);
        for &si in &batch {
            let scene = &dataset.train[si];
            let proposals = generate_proposals(
                scene,
                dataset.visual(Split::Train, si),
                cfg.mode,
                noise,
                proposal_seed,
            )?;
            let gt: Vec<usize> = scene.objects.iter().map(|o| o.class).collect();
            let out = model.forward_scene(&tape, &proposals, cfg.mode, &gt)?;
            if cfg.mode != Mode::PredCls && cfg.object_loss_weight > 0.0 {
                object_terms.push(out.object_logits.log_softmax().pick(&gt)?.mean());
            }
            let rel_pairs: Vec<(usize, usize)> =
                scene.relations.iter().map(|r| (r.subject, r.object)).collect();
            for r in &scene.relations {
                labels.push(dataset.label_of(r.predicate).ok_or_else(|| {
                    Error::Data(format!("predicate {} missing from vocabulary", r.predicate))
                })?);
            }
            let (p, u) = model.pair_inputs(&tape, &proposals, out.relation_features, &rel_pairs)?;
            pairs.push(p);
            unions.push(u);
        }
        let pair = tape.concat_rows(&pairs)?;
        let union = tape.concat_rows(&unions)?;
        let logits = model.bank.all_logits(&tape, &model.store, pair, union)?;
        let sampled = draw_epoch(
            &labels,
            vocab.len(),
            &setup.plan,
            derive_seed(cfg.seed, &[b"sample", &(step as u64).to_le_bytes()]),
        )?;
        let (rel_loss, report) = gcl_loss(&tape, &logits, &labels, &sampled, &setup.matching, setup.alpha)?;
        let mut loss = rel_loss;
        let mut object = 0.0;
        if !object_terms.is_empty() {
            let n = object_terms.len() as f64;
            let mut iter = object_terms.into_iter();
            let first = iter.next().expect("non-empty");
            let obj = iter.try_fold(first, |a, t| a.add(t))?.scale(-1.0 / n);
            object = obj.item();
            loss = loss.add(obj.scale(cfg.object_loss_weight))?;
        }
        let total = loss.item();
        if !total.is_finite() {
            return Err(Error::Numerical {
                step,
                message: format!("loss is {total} (pco {}, ckd {})", report.pco, report.ckd),
            });
        }
        model.store.zero_grad();
        tape.backward(loss, &mut model.store)?;
        if !model.store.all_grads_finite() {
            return Err(Error::Numerical {
                step,
                message: "non-finite gradient".into(),
            });
        }
        clip_grad_norm(&mut model.store, cfg.grad_clip);
        let lr = learning_rate(cfg, step);
        opt.step(&mut model.store, lr);

        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            log::info!(
                "step {step:>5} lr {lr:.2e} pco {:.4} ckd {:.4} obj {object:.4} total {total:.4}",
                report.pco,
                report.ckd
            );
            losses.push(LossLogEntry {
                step,
                lr,
                pco: report.pco,
                ckd: report.ckd,
                object,
                total,
            });
        }
    }
    Ok(TrainOutcome {
        model,
        setup,
        losses,
    })
}

/// Ranked triplets and ground truth for every scene of `split` with at least
/// two objects.
pub fn predict_split(
    model: &SggModel,
    dataset: &Dataset,
    split: Split,
    mode: Mode,
    noise: ProposalNoise,
    seed: u64,
) -> Result<Vec<ImageResult>> {
    let proposal_seed = derive_seed(seed, &[b"eval"]);
    let mut out = Vec::new();
    for (si, scene) in dataset.scenes(split).iter().enumerate() {
        if scene.objects.len() < 2 {
            log::warn!("image {} has fewer than two objects; skipped", scene.image_id);
            continue;
        }
        let proposals = generate_proposals(scene, dataset.visual(split, si), mode, noise, proposal_seed)?;
        let gt_labels: Vec<usize> = scene.objects.iter().map(|o| o.class).collect();
        let (entities, preds) = model.infer_scene(&proposals, mode, &gt_labels)?;
        let ranked = preds
            .into_iter()
            .map(|((i, j), p)| {
                let t = Triplet {
                    subject: i,
                    subject_class: entities[i].final_label,
                    predicate: p.label,
                    object: j,
                    object_class: entities[j].final_label,
                };
                (t, p.score)
            })
            .collect();
        let ground_truth = scene
            .relations
            .iter()
            .map(|r| {
                Ok(Triplet {
                    subject: r.subject,
                    subject_class: gt_labels[r.subject],
                    predicate: dataset.label_of(r.predicate).ok_or_else(|| {
                        Error::Data(format!("predicate {} missing from vocabulary", r.predicate))
                    })?,
                    object: r.object,
                    object_class: gt_labels[r.object],
                })
            })
            .collect::<Result<_>>()?;
        out.push(ImageResult {
            image_id: scene.image_id,
            predictions: RankedPredictions::new(ranked)?,
            ground_truth,
        });
    }
    Ok(out)
}

pub fn evaluate(
    model: &SggModel,
    dataset: &Dataset,
    cfg: &RunConfig,
    ks: &[usize],
) -> Result<EvalSummary> {
    let images = predict_split(
        model,
        dataset,
        Split::Test,
        cfg.mode,
        proposal_noise(cfg, dataset),
        cfg.seed,
    )?;
    EvalSummary::compute(&images, ks, dataset.vocab().len())
}

/// Record of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub seed: u64,
    pub dataset_hash: String,
    pub group_sizes: Vec<usize>,
    pub loss_log: Vec<LossLogEntry>,
    pub metrics: Option<EvalSummary>,
    pub wall_clock_secs: f64,
}

/// Trains and evaluates in one call, timing the whole run.
pub fn run_experiment(
    cfg: &RunConfig,
    dataset: &Dataset,
    dataset_hash: &str,
    ks: &[usize],
) -> Result<(TrainOutcome, RunManifest)> {
    let start = Instant::now();
    let outcome = train(cfg, dataset)?;
    let metrics = evaluate(&outcome.model, dataset, cfg, ks)?;
    let manifest = RunManifest {
        config: cfg.clone(),
        seed: cfg.seed,
        dataset_hash: dataset_hash.to_string(),
        group_sizes: outcome.setup.partition.group_sizes(),
        loss_log: outcome.losses.clone(),
        metrics: Some(metrics),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((outcome, manifest))
}

/// Detached copies of every parameter, in store order.
pub fn snapshot(store: &ParamStore) -> Vec<Tensor> {
    store.ids().map(|id| store.get(id).detached()).collect()
}
