//! JSON run configuration and `--section.field=value` overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use topv_core::{
    CostConfig, LastUpdate, MassMode, ModelShape, Normalization, PruneConfig, SinkhornConfig, Tap,
    ToyBlockConfig,
};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationKind {
    MinMaxPerMatrix,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassKind {
    Uniform,
    L2Norm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LastKind {
    Column,
    Row,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapKind {
    PreLn,
    Attn,
    AttnNoResidual,
    PostLn,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub normalization: NormalizationKind,
}

impl Default for CostSection {
    fn default() -> Self {
        let c = CostConfig::LLAVA;
        Self {
            alpha: c.alpha,
            beta: c.beta,
            gamma: c.gamma,
            sigma: c.sigma,
            normalization: NormalizationKind::MinMaxPerMatrix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkhornSection {
    pub epsilon: f64,
    pub max_iter: usize,
    pub tolerance: f64,
    pub mass_mode: MassKind,
    pub last_update: LastKind,
    pub log_domain: bool,
}

impl Default for SinkhornSection {
    fn default() -> Self {
        let s = SinkhornConfig::default();
        Self {
            epsilon: s.epsilon,
            max_iter: s.max_iter,
            tolerance: s.tolerance,
            mass_mode: MassKind::L2Norm,
            last_update: LastKind::Column,
            log_domain: s.log_domain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSection {
    pub ratio: f64,
    pub recovery_interval: usize,
}

impl Default for PruneSection {
    fn default() -> Self {
        let p = PruneConfig::LLAVA;
        Self { ratio: p.prune_ratio, recovery_interval: p.recovery_interval }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// `None` follows the dimension of the tokens being simulated.
    pub dim: Option<usize>,
    pub heads: usize,
    pub mlp_mult: usize,
    pub seed: u64,
    pub tap: TapKind,
}

impl Default for SimSection {
    fn default() -> Self {
        let t = ToyBlockConfig::default();
        Self { dim: None, heads: t.heads, mlp_mult: t.mlp_mult, seed: t.seed, tap: TapKind::PostLn }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeSection {
    pub n_layers: usize,
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub n_visual: usize,
    pub prune_layer: usize,
}

impl Default for ShapeSection {
    fn default() -> Self {
        let m = ModelShape::LLAVA_7B;
        Self {
            n_layers: m.n_layers,
            hidden: m.hidden,
            mlp_hidden: m.mlp_hidden,
            n_visual: m.n_visual,
            prune_layer: m.prune_layer,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub cost: CostSection,
    pub sinkhorn: SinkhornSection,
    pub prune: PruneSection,
    pub sim: SimSection,
    pub model_shape: ShapeSection,
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?
            }
            None => serde_json::to_value(RunConfig::default()).expect("defaults serialize"),
        };
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.cost_config().validate()?;
        self.sinkhorn_config().validate()?;
        self.prune_config().keep_count(self.model_shape.n_visual)?;
        self.model_shape().validate()?;
        if let Some(d) = self.sim.dim {
            self.block_config(d).validate()?;
        }
        Ok(())
    }

    pub fn cost_config(&self) -> CostConfig {
        CostConfig {
            alpha: self.cost.alpha,
            beta: self.cost.beta,
            gamma: self.cost.gamma,
            sigma: self.cost.sigma,
            normalization: match self.cost.normalization {
                NormalizationKind::MinMaxPerMatrix => Normalization::MinMaxPerMatrix,
                NormalizationKind::None => Normalization::None,
            },
        }
    }

    pub fn sinkhorn_config(&self) -> SinkhornConfig {
        SinkhornConfig {
            epsilon: self.sinkhorn.epsilon,
            max_iter: self.sinkhorn.max_iter,
            tolerance: self.sinkhorn.tolerance,
            mass_mode: match self.sinkhorn.mass_mode {
                MassKind::Uniform => MassMode::Uniform,
                MassKind::L2Norm => MassMode::L2Norm,
            },
            last_update: match self.sinkhorn.last_update {
                LastKind::Column => LastUpdate::Column,
                LastKind::Row => LastUpdate::Row,
            },
            log_domain: self.sinkhorn.log_domain,
        }
    }

    pub fn prune_config(&self) -> PruneConfig {
        PruneConfig { prune_ratio: self.prune.ratio, recovery_interval: self.prune.recovery_interval }
    }

    pub fn model_shape(&self) -> ModelShape {
        ModelShape {
            n_layers: self.model_shape.n_layers,
            hidden: self.model_shape.hidden,
            mlp_hidden: self.model_shape.mlp_hidden,
            n_visual: self.model_shape.n_visual,
            prune_layer: self.model_shape.prune_layer,
        }
    }

    pub fn tap(&self) -> Tap {
        match self.sim.tap {
            TapKind::PreLn => Tap::PreLn,
            TapKind::Attn => Tap::Attn,
            TapKind::AttnNoResidual => Tap::AttnNoResidual,
            TapKind::PostLn => Tap::PostLn,
            TapKind::Mlp => Tap::Mlp,
        }
    }

    /// Block configuration for tokens of dimension `token_dim`.
    pub fn block_config(&self, token_dim: usize) -> ToyBlockConfig {
        ToyBlockConfig {
            dim: self.sim.dim.unwrap_or(token_dim),
            heads: self.sim.heads,
            mlp_mult: self.sim.mlp_mult,
            seed: self.sim.seed,
            tap: self.tap(),
        }
    }
}

/// Sets `section.field` in a JSON config tree. The value is parsed as JSON
/// when possible (numbers, booleans, null) and taken as a string otherwise.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<(), CliError> {
    let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut parts = key.split('.').peekable();
    let mut node = root;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(CliError::Config(format!("malformed override key {key:?}")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?} descends into a non-object")))?;
        if parts.peek().is_none() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(CliError::Config(format!("empty override key {key:?}")))
}

pub type Overrides = Vec<(String, String)>;

/// Splits `--a.b=v` / `--a.b v` overrides out of raw arguments.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let dotted = arg
            .strip_prefix("--")
            .filter(|body| body.split('=').next().is_some_and(|k| k.contains('.')));
        match dotted {
            Some(body) => {
                if let Some((k, v)) = body.split_once('=') {
                    overrides.push((k.to_string(), v.to_string()));
                } else {
                    let v = it
                        .next()
                        .ok_or_else(|| CliError::Config(format!("override --{body} needs a value")))?;
                    overrides.push((body.to_string(), v));
                }
            }
            None => rest.push(arg),
        }
    }
    Ok((rest, overrides))
}
