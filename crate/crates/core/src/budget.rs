//! FLOPs and KV-cache accounting for a prune-once-at-prefill schedule.
//!
//! Tokens are scored at layer `prune_layer` and dropped from every later
//! layer. Two FLOPs accountings are reported:
//!
//! * **token fraction**: share of vision tokens removed, weighted by the
//!   share of layers that run without them,
//!   `(n - r) / n * (L - L_i) / L`. This is the one that lines up with the
//!   published 35% / ~50% / ~47% figures.
//! * **layer weighted**: the same schedule priced with a per-layer cost
//!   model that includes the quadratic attention term,
//!   `1 - (L_i F(n) + (L - L_i) F(r)) / (L F(n))`.
//!
//! The KV ratio is the fraction of vision-token cache still held, averaged
//! over layers.

use crate::error::{Error, Result};
use crate::pruner::{prune_counts, PruneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub n_layers: usize,
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub n_visual: usize,
    pub prune_layer: usize,
}

impl ModelShape {
    /// LLaVA-v1.5-7B language tower, 576 visual tokens, pruning after layer 2.
    pub const LLAVA_7B: ModelShape = ModelShape {
        n_layers: 32,
        hidden: 4096,
        mlp_hidden: 11008,
        n_visual: 576,
        prune_layer: 2,
    };

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.hidden == 0 || self.mlp_hidden == 0 || self.n_visual == 0 {
            return Err(Error::Contract("model shape fields must be positive".into()));
        }
        if self.prune_layer >= self.n_layers {
            return Err(Error::Contract(format!(
                "prune layer {} must be below layer count {}",
                self.prune_layer, self.n_layers
            )));
        }
        Ok(())
    }
}

impl Default for ModelShape {
    fn default() -> Self {
        Self::LLAVA_7B
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetReport {
    pub flops_ratio_layerweighted: f64,
    pub flops_ratio_tokenfraction: f64,
    pub kv_ratio: f64,
    pub retained_tokens: usize,
}

/// Forward FLOPs of one layer over `n_tokens`: `4 n d^2 + 2 n^2 d + 2 n d m`.
pub fn layer_flops(n_tokens: usize, shape: &ModelShape) -> f64 {
    let n = n_tokens as f64;
    let d = shape.hidden as f64;
    let m = shape.mlp_hidden as f64;
    4.0 * n * d * d + 2.0 * n * n * d + 2.0 * n * d * m
}

pub fn flops_ratio(retained: usize, shape: &ModelShape) -> Result<BudgetReport> {
    shape.validate()?;
    if retained > shape.n_visual {
        return Err(Error::Contract(format!(
            "retained {retained} exceeds visual token count {}",
            shape.n_visual
        )));
    }
    let layers = shape.n_layers as f64;
    let early = shape.prune_layer as f64;
    let late = layers - early;
    let n = shape.n_visual as f64;
    let r = retained as f64;

    let token_fraction = (n - r) / n * late / layers;

    let full = layer_flops(shape.n_visual, shape);
    let pruned = layer_flops(retained, shape);
    let layer_weighted = 1.0 - (early * full + late * pruned) / (layers * full);

    let kv = (early * n + late * r) / (layers * n);

    Ok(BudgetReport {
        flops_ratio_layerweighted: layer_weighted.clamp(0.0, 1.0),
        flops_ratio_tokenfraction: token_fraction.clamp(0.0, 1.0),
        kv_ratio: kv.clamp(0.0, 1.0),
        retained_tokens: retained,
    })
}

/// Report for a prune configuration applied to `shape.n_visual` tokens.
pub fn report_for(cfg: &PruneConfig, shape: &ModelShape) -> Result<BudgetReport> {
    let (_, _, _, retained) = prune_counts(shape.n_visual, cfg)?;
    flops_ratio(retained, shape)
}
