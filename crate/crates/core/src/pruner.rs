//! Importance scoring, top-k selection and uniform token recovery.

use std::cmp::Ordering;

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::sinkhorn::TransportPlan;
use crate::token::TokenSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneConfig {
    /// Fraction of tokens dropped by top-k, before recovery.
    pub prune_ratio: f64,
    /// Every `recovery_interval`-th pruned token is restored; 0 disables recovery.
    pub recovery_interval: usize,
}

impl PruneConfig {
    pub const LLAVA: PruneConfig = PruneConfig { prune_ratio: 0.5, recovery_interval: 4 };
    pub const LLAVA_AGGRESSIVE: PruneConfig = PruneConfig { prune_ratio: 0.6, recovery_interval: 6 };
    pub const INTERNVL2: PruneConfig = PruneConfig { prune_ratio: 0.7, recovery_interval: 3 };

    /// `floor(n * (1 - prune_ratio))`, failing when that leaves no token.
    pub fn keep_count(&self, n: usize) -> Result<usize> {
        if !(self.prune_ratio.is_finite() && (0.0..1.0).contains(&self.prune_ratio)) {
            return Err(Error::Contract(format!(
                "prune ratio must lie in [0, 1), got {}",
                self.prune_ratio
            )));
        }
        // nudge absorbs decimal ratios like 0.9 whose complement rounds low
        let k = (n as f64 * (1.0 - self.prune_ratio) + 1e-9).floor() as usize;
        let k = k.min(n);
        if k == 0 {
            return Err(Error::Contract(format!(
                "prune ratio {} leaves no token out of {n}",
                self.prune_ratio
            )));
        }
        Ok(k)
    }
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self::LLAVA
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneDecision {
    pub importance: Array1<f64>,
    pub kept_topk: Vec<usize>,
    pub recovered: Vec<usize>,
    pub retained: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenStatus {
    Kept,
    Recovered,
    Pruned,
}

impl TokenStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TokenStatus::Kept => "kept",
            TokenStatus::Recovered => "recovered",
            TokenStatus::Pruned => "pruned",
        }
    }
}

impl PruneDecision {
    pub fn n(&self) -> usize {
        self.importance.len()
    }

    /// Indices neither kept nor recovered, ascending.
    pub fn pruned(&self) -> Vec<usize> {
        complement(self.n(), &self.retained)
    }

    /// Status of every token, indexed by original position.
    pub fn statuses(&self) -> Vec<TokenStatus> {
        let mut out = vec![TokenStatus::Pruned; self.n()];
        for &i in &self.kept_topk {
            out[i] = TokenStatus::Kept;
        }
        for &i in &self.recovered {
            out[i] = TokenStatus::Recovered;
        }
        out
    }
}

fn complement(n: usize, sorted: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(n - sorted.len());
    let mut it = sorted.iter().peekable();
    for i in 0..n {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            out.push(i);
        }
    }
    out
}

/// Row sums of the contribution matrix.
pub fn importance(plan: &TransportPlan) -> Array1<f64> {
    plan.row_sums()
}

/// The `keep_count` highest-scoring indices, ascending. Ties go to the lower index.
pub fn select_topk(importance: &Array1<f64>, keep_count: usize) -> Result<Vec<usize>> {
    let n = importance.len();
    if keep_count == 0 || keep_count > n {
        return Err(Error::Contract(format!("keep count {keep_count} outside 1..={n}")));
    }
    if importance.iter().any(|v| v.is_nan()) {
        return Err(Error::Contract("importance contains NaN".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let by_score = |&a: &usize, &b: &usize| {
        importance[b]
            .partial_cmp(&importance[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    };
    if keep_count < n {
        order.select_nth_unstable_by(keep_count - 1, by_score);
    }
    let mut top = order[..keep_count].to_vec();
    top.sort_unstable();
    Ok(top)
}

/// Every `interval`-th entry of `pruned` starting at position 0.
pub fn recover(pruned: &[usize], interval: usize) -> Vec<usize> {
    if interval == 0 {
        return Vec::new();
    }
    pruned.iter().step_by(interval).copied().collect()
}

/// Counts `(kept, pruned, recovered, retained)` for `n` tokens without scoring them.
pub fn prune_counts(n: usize, cfg: &PruneConfig) -> Result<(usize, usize, usize, usize)> {
    let kept = cfg.keep_count(n)?;
    let pruned = n - kept;
    let recovered = if cfg.recovery_interval == 0 {
        0
    } else {
        pruned.div_ceil(cfg.recovery_interval)
    };
    Ok((kept, pruned, recovered, kept + recovered))
}

/// Decision from an importance vector alone.
pub fn decide(importance: Array1<f64>, cfg: &PruneConfig) -> Result<PruneDecision> {
    let n = importance.len();
    let keep = cfg.keep_count(n)?;
    let kept_topk = select_topk(&importance, keep)?;
    let pruned = complement(n, &kept_topk);
    let recovered = recover(&pruned, cfg.recovery_interval);
    let mut retained: Vec<usize> = kept_topk.iter().chain(recovered.iter()).copied().collect();
    retained.sort_unstable();
    Ok(PruneDecision { importance, kept_topk, recovered, retained })
}

pub fn prune(source: &TokenSet, plan: &TransportPlan, cfg: &PruneConfig) -> Result<PruneDecision> {
    if plan.n() != source.len() {
        return Err(Error::Shape(format!(
            "plan covers {} tokens, source has {}",
            plan.n(),
            source.len()
        )));
    }
    decide(importance(plan), cfg)
}
