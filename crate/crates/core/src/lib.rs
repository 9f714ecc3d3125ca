//! Visual token importance by entropic optimal transport.
//!
//! Source tokens (the inputs of a transformer layer) are matched to target
//! tokens (the same layer's post-norm activations) under a cost mixing
//! feature distance, grid distance and distance from the image center. The
//! Sinkhorn plan's row sums rank the source tokens; the lowest-ranked are
//! dropped, a uniform subset of them is restored, and [`budget`] prices the
//! resulting schedule.

pub mod budget;
pub mod cost;
pub mod error;
pub mod layersim;
pub mod oracle;
pub mod pipeline;
pub mod pruner;
pub mod rng;
pub mod sinkhorn;
pub mod synth;
pub mod token;
pub mod verify;

pub use budget::{flops_ratio, layer_flops, BudgetReport, ModelShape};
pub use cost::{build_cost, CostConfig, CostMatrix, Normalization};
pub use error::{Error, Result};
pub use layersim::{forward_tap, init_block, Tap, ToyBlock, ToyBlockConfig};
pub use oracle::oracle_solve;
pub use pipeline::{PipelineConfig, PipelineOutput};
pub use pruner::{importance, prune, recover, select_topk, PruneConfig, PruneDecision, TokenStatus};
pub use sinkhorn::{make_marginals, solve, LastUpdate, MassMode, SinkhornConfig, TransportPlan};
pub use token::{load_dump, save_dump, TokenDumpHeader, TokenSet};
