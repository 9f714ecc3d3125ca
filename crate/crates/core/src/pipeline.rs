//! Source/target tokens in, prune decision out.

use std::time::{Duration, Instant};

use crate::cost::{build_cost, CostConfig, CostMatrix};
use crate::error::Result;
use crate::pruner::{prune, PruneConfig, PruneDecision};
use crate::sinkhorn::{make_marginals, solve, SinkhornConfig, TransportPlan};
use crate::token::TokenSet;

#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub cost: CostConfig,
    pub sinkhorn: SinkhornConfig,
    pub prune: PruneConfig,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub cost: CostMatrix,
    pub plan: TransportPlan,
    pub decision: PruneDecision,
    /// Wall time of cost construction plus the Sinkhorn solve.
    pub scoring_time: Duration,
}

pub fn run(source: &TokenSet, target: &TokenSet, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.prune.keep_count(source.len())?;
    let start = Instant::now();
    let cost = build_cost(source, target, &cfg.cost)?;
    let (p, q) = make_marginals(source, target, cfg.sinkhorn.mass_mode);
    let plan = solve(&cost.c_v, &p, &q, &cfg.sinkhorn)?;
    let scoring_time = start.elapsed();
    let decision = prune(source, &plan, &cfg.prune)?;
    Ok(PipelineOutput { cost, plan, decision, scoring_time })
}
