//! Stacked hybrid-attention encoder.
//!
//! One attention unit is multi-head scaled dot-product attention followed by
//! a two-layer feed-forward block, each wrapped in residual + post-layer-norm.
//! Self-attention feeds a unit the same stream as query and context; cross-
//! attention takes the context from the other modality. A hybrid-attention
//! layer updates both streams from the previous layer's outputs:
//!
//! ```text
//! X' = SA(X) + CA(X, Y)
//! Y' = SA(Y) + CA(Y, X)
//! ```
//!
//! and the stack returns `X_L + Y_L`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{LayerNorm, Linear, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
}

impl AttentionConfig {
    pub fn new(model_dim: usize, heads: usize, ffn_dim: usize) -> Result<Self> {
        if model_dim == 0 || heads == 0 || ffn_dim == 0 || model_dim % heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {model_dim} must be a positive multiple of heads {heads}"
            )));
        }
        Ok(Self {
            model_dim,
            heads,
            ffn_dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

#[derive(Clone, Debug)]
pub struct AttentionUnit {
    pub config: AttentionConfig,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub attn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ffn_norm: LayerNorm,
}

impl AttentionUnit {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: AttentionConfig,
        rng: &mut R,
    ) -> Self {
        let d = config.model_dim;
        Self {
            config,
            query: Linear::new(store, &format!("{name}.q"), d, d, rng),
            key: Linear::new(store, &format!("{name}.k"), d, d, rng),
            value: Linear::new(store, &format!("{name}.v"), d, d, rng),
            output: Linear::new(store, &format!("{name}.o"), d, d, rng),
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), d),
            ffn_in: Linear::new(store, &format!("{name}.ffn_in"), d, config.ffn_dim, rng),
            ffn_out: Linear::new(store, &format!("{name}.ffn_out"), config.ffn_dim, d, rng),
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), d),
        }
    }

    fn check_dims(&self, x: &Var<'_>, name: &str) -> Result<()> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.config.model_dim {
            return Err(Error::shape(format!(
                "{name} has shape {shape:?}, expected [n, {}]",
                self.config.model_dim
            )));
        }
        Ok(())
    }

    /// Attends from `query_src` rows to `context` rows. Returns the unit output
    /// and the per-head attention weight matrices (`[n, m]` each).
    pub fn forward_with_weights<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        query_src: Var<'t>,
        context: Var<'t>,
    ) -> Result<(Var<'t>, Vec<Tensor>)> {
        self.check_dims(&query_src, "query input")?;
        self.check_dims(&context, "context input")?;
        let q = self.query.forward(tape, store, query_src)?;
        let k = self.key.forward(tape, store, context)?;
        let v = self.value.forward(tape, store, context)?;

        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        let mut weights = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = q.slice_cols(h * dh, dh)?;
            let kh = k.slice_cols(h * dh, dh)?;
            let vh = v.slice_cols(h * dh, dh)?;
            let attn = qh.matmul(kh.transpose()?)?.scale(scale).softmax(1)?;
            weights.push(attn.value().detached());
            heads.push(attn.matmul(vh)?);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let attended = self.output.forward(tape, store, merged)?;
        let z = self
            .attn_norm
            .forward(tape, store, query_src.add(attended)?)?;
        let hidden = self.ffn_in.forward(tape, store, z)?.relu();
        let ffn = self.ffn_out.forward(tape, store, hidden)?;
        let out = self.ffn_norm.forward(tape, store, z.add(ffn)?)?;
        Ok((out, weights))
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        query_src: Var<'t>,
        context: Var<'t>,
    ) -> Result<Var<'t>> {
        Ok(self.forward_with_weights(tape, store, query_src, context)?.0)
    }
}

/// Intra-modal refinement: queries, keys and values all come from `x`.
pub fn self_attention<'t>(
    unit: &AttentionUnit,
    tape: &'t Tape,
    store: &ParamStore,
    x: Var<'t>,
) -> Result<Var<'t>> {
    unit.forward(tape, store, x, x)
}

/// Inter-modal interaction: queries from `x`, keys and values from `y`.
pub fn cross_attention<'t>(
    unit: &AttentionUnit,
    tape: &'t Tape,
    store: &ParamStore,
    x: Var<'t>,
    y: Var<'t>,
) -> Result<Var<'t>> {
    unit.forward(tape, store, x, y)
}

/// One SA unit and one CA unit serving a single modality.
#[derive(Clone, Debug)]
pub struct HybridCell {
    pub self_attn: AttentionUnit,
    pub cross_attn: AttentionUnit,
}

impl HybridCell {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: AttentionConfig,
        rng: &mut R,
    ) -> Self {
        Self {
            self_attn: AttentionUnit::new(store, &format!("{name}.sa"), config, rng),
            cross_attn: AttentionUnit::new(store, &format!("{name}.ca"), config, rng),
        }
    }

    fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        own: Var<'t>,
        other: Var<'t>,
    ) -> Result<Var<'t>> {
        let sa = self_attention(&self.self_attn, tape, store, own)?;
        let ca = cross_attention(&self.cross_attn, tape, store, own, other)?;
        sa.add(ca)
    }
}

#[derive(Clone, Debug)]
pub struct HybridLayer {
    pub visual: HybridCell,
    pub semantic: HybridCell,
}

impl HybridLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: AttentionConfig,
        rng: &mut R,
    ) -> Self {
        Self {
            visual: HybridCell::new(store, &format!("{name}.vis"), config, rng),
            semantic: HybridCell::new(store, &format!("{name}.sem"), config, rng),
        }
    }

    /// Both outputs are computed from this layer's inputs.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        y: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let x_out = self.visual.forward(tape, store, x, y)?;
        let y_out = self.semantic.forward(tape, store, y, x)?;
        Ok((x_out, y_out))
    }
}

#[derive(Clone, Debug)]
pub struct ShaStack {
    pub config: AttentionConfig,
    pub layers: Vec<HybridLayer>,
}

impl ShaStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        num_layers: usize,
        config: AttentionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::Config("an SHA stack needs at least one layer".into()));
        }
        let layers = (0..num_layers)
            .map(|l| HybridLayer::new(store, &format!("{name}.layer{l}"), config, rng))
            .collect();
        Ok(Self { config, layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Runs paired visual (`x0`) and semantic (`y0`) streams through every
    /// layer and sums the final streams.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x0: Var<'t>,
        y0: Var<'t>,
    ) -> Result<Var<'t>> {
        let (xs, ys) = (x0.shape(), y0.shape());
        if xs.len() != 2 || ys.len() != 2 || xs[0] != ys[0] {
            return Err(Error::shape(format!(
                "SHA inputs must pair row for row, got {xs:?} and {ys:?}"
            )));
        }
        let (mut x, mut y) = (x0, y0);
        for layer in &self.layers {
            (x, y) = layer.forward(tape, store, x, y)?;
        }
        x.add(y)
    }
}
