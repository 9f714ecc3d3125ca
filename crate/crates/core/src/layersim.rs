//! A small pre-norm transformer block with seeded random weights.
//!
//! It exists to manufacture target tokens from source tokens at any of the
//! five tap positions inside a block, without loading model weights:
//!
//! ```text
//! x ──► LN ─(pre_ln)─► MHSA ─(attn_no_residual)─► + x ─(attn)─► LN ─(post_ln)─► MLP ─► + ─(mlp)─►
//! ```
//!
//! The attention map is materialized here and only here; the scoring
//! pipeline never looks at it.

use std::str::FromStr;

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::token::TokenSet;

pub const LAYER_NORM_VAR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tap {
    /// Position 1.
    PreLn,
    /// Position 2: attention output plus the residual.
    Attn,
    /// Position 2*: attention output alone.
    AttnNoResidual,
    /// Position 3.
    PostLn,
    /// Position 4: block output after the MLP residual.
    Mlp,
}

impl Tap {
    pub const ALL: [Tap; 5] = [Tap::PreLn, Tap::Attn, Tap::AttnNoResidual, Tap::PostLn, Tap::Mlp];

    pub fn as_str(&self) -> &'static str {
        match self {
            Tap::PreLn => "pre_ln",
            Tap::Attn => "attn",
            Tap::AttnNoResidual => "attn_no_residual",
            Tap::PostLn => "post_ln",
            Tap::Mlp => "mlp",
        }
    }
}

impl FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Tap::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Contract(format!("unknown tap {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyBlockConfig {
    pub dim: usize,
    pub heads: usize,
    pub mlp_mult: usize,
    pub seed: u64,
    pub tap: Tap,
}

impl Default for ToyBlockConfig {
    fn default() -> Self {
        Self { dim: 16, heads: 2, mlp_mult: 4, seed: 0, tap: Tap::PostLn }
    }
}

impl ToyBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.mlp_mult == 0 {
            return Err(Error::Contract("dim, heads and mlp_mult must be positive".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Contract(format!(
                "heads ({}) must divide dim ({})",
                self.heads, self.dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyBlock {
    pub cfg: ToyBlockConfig,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub w_up: Array2<f64>,
    pub w_down: Array2<f64>,
}

/// Fills weights in the order q, k, v, o, up, down, each row-major.
pub fn init_block(cfg: ToyBlockConfig) -> Result<ToyBlock> {
    cfg.validate()?;
    let d = cfg.dim;
    let hidden = d * cfg.mlp_mult;
    let mut rng = SplitMix64::new(cfg.seed);
    let mut fill = |rows: usize, cols: usize| Array2::from_shape_simple_fn((rows, cols), || rng.next_weight());
    let w_q = fill(d, d);
    let w_k = fill(d, d);
    let w_v = fill(d, d);
    let w_o = fill(d, d);
    let w_up = fill(d, hidden);
    let w_down = fill(hidden, d);
    Ok(ToyBlock { cfg, w_q, w_k, w_v, w_o, w_up, w_down })
}

/// Per-token standardization without learned affine parameters.
pub fn layer_norm(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let scale = var.max(LAYER_NORM_VAR_FLOOR).sqrt();
        row.mapv_inplace(|v| (v - mean) / scale);
    }
    out
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.axis_iter_mut(Axis(0)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
}

impl ToyBlock {
    fn attention(&self, h: &Array2<f64>) -> Array2<f64> {
        let q = h.dot(&self.w_q);
        let k = h.dot(&self.w_k);
        let v = h.dot(&self.w_v);
        let head_dim = self.cfg.dim / self.cfg.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut mixed = Array2::<f64>::zeros(h.raw_dim());
        for head in 0..self.cfg.heads {
            let cols = s![.., head * head_dim..(head + 1) * head_dim];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut scores);
            mixed.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        }
        mixed.dot(&self.w_o)
    }

    fn mlp(&self, h: &Array2<f64>) -> Array2<f64> {
        h.dot(&self.w_up).mapv(|v| v.max(0.0)).dot(&self.w_down)
    }

    /// Runs the block on raw features and returns the activation at `tap`.
    pub fn forward_array(&self, x: &Array2<f64>, tap: Tap) -> Result<Array2<f64>> {
        if x.ncols() != self.cfg.dim {
            return Err(Error::Shape(format!(
                "tokens have dimension {}, block expects {}",
                x.ncols(),
                self.cfg.dim
            )));
        }
        let pre = layer_norm(x);
        if tap == Tap::PreLn {
            return Ok(pre);
        }
        let attn_only = self.attention(&pre);
        if tap == Tap::AttnNoResidual {
            return Ok(attn_only);
        }
        let attn = x + &attn_only;
        if tap == Tap::Attn {
            return Ok(attn);
        }
        let post = layer_norm(&attn);
        if tap == Tap::PostLn {
            return Ok(post);
        }
        Ok(attn + self.mlp(&post))
    }
}

/// Activation at `tap` for `tokens`, keeping grid and coordinates.
pub fn forward_tap(block: &ToyBlock, tokens: &TokenSet, tap: Tap) -> Result<TokenSet> {
    let out = block.forward_array(tokens.data(), tap)?;
    tokens.with_data(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(n: usize, d: usize, seed: u64) -> TokenSet {
        let mut g = SplitMix64::new(seed);
        let data = Array2::from_shape_simple_fn((n, d), || g.next_gaussian() * 2.0 + 0.5);
        TokenSet::new(data, 1, n).unwrap()
    }

    #[test]
    fn same_seed_same_weights() {
        let a = init_block(ToyBlockConfig::default()).unwrap();
        let b = init_block(ToyBlockConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seed_different_weights() {
        let a = init_block(ToyBlockConfig::default()).unwrap();
        let b = init_block(ToyBlockConfig { seed: 1, ..Default::default() }).unwrap();
        assert_ne!(a.w_q, b.w_q);
    }

    #[test]
    fn first_weight_comes_from_first_draw() {
        let b = init_block(ToyBlockConfig::default()).unwrap();
        let want = 0xE220_A839_7B1D_CDAFu64 as f64 / 2f64.powi(64) * 0.2 - 0.1;
        assert_eq!(b.w_q[[0, 0]], want);
    }

    #[test]
    fn heads_must_divide_dim() {
        let cfg = ToyBlockConfig { dim: 10, heads: 3, ..Default::default() };
        assert!(init_block(cfg).is_err());
    }

    #[test]
    fn pre_ln_is_standardized() {
        let block = init_block(ToyBlockConfig::default()).unwrap();
        let out = forward_tap(&block, &input(9, 16, 3), Tap::PreLn).unwrap();
        for row in out.data().rows() {
            let mean = row.mean().unwrap();
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn residual_identity() {
        let block = init_block(ToyBlockConfig { seed: 5, ..Default::default() }).unwrap();
        let x = input(6, 16, 11);
        let with = forward_tap(&block, &x, Tap::Attn).unwrap();
        let without = forward_tap(&block, &x, Tap::AttnNoResidual).unwrap();
        let rebuilt = without.data() + x.data();
        for (a, b) in with.data().iter().zip(rebuilt.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn post_ln_differs_from_attn() {
        let block = init_block(ToyBlockConfig::default()).unwrap();
        let x = input(6, 16, 2);
        let a = forward_tap(&block, &x, Tap::Attn).unwrap();
        let p = forward_tap(&block, &x, Tap::PostLn).unwrap();
        assert_ne!(a.data(), p.data());
    }

    #[test]
    fn dim_mismatch() {
        let block = init_block(ToyBlockConfig::default()).unwrap();
        assert!(matches!(forward_tap(&block, &input(4, 8, 0), Tap::Mlp), Err(Error::Shape(_))));
    }

    #[test]
    fn tap_names_round_trip() {
        for t in Tap::ALL {
            assert_eq!(t.as_str().parse::<Tap>().unwrap(), t);
        }
        assert!("position3".parse::<Tap>().is_err());
    }
}
