//! Visual-aware transport cost between source and target tokens.
//!
//! The combined cost is a weighted sum of three factors, each rescaled to
//! `[0, 1]` over the whole matrix before weighting:
//!
//! * feature: squared Euclidean distance between token features,
//! * spatial: `1 - exp(-|pos_i - pos_j|^2 / (2 sigma^2))` on the patch grid,
//! * central: distance of the *source* patch from the grid center, constant
//!   along each row.

use ndarray::{Array2, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::token::TokenSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Affine map of each component onto `[0, 1]` using its global min/max.
    MinMaxPerMatrix,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Gaussian bandwidth of the spatial factor, in grid units.
    pub sigma: f64,
    pub normalization: Normalization,
}

impl CostConfig {
    /// Weights used for LLaVA-style models.
    pub const LLAVA: CostConfig = CostConfig {
        alpha: 1.0,
        beta: 1.0,
        gamma: 0.01,
        sigma: 10.0,
        normalization: Normalization::MinMaxPerMatrix,
    };

    /// Weights used for InternVL2-style models.
    pub const INTERNVL2: CostConfig = CostConfig {
        alpha: 1.0,
        beta: 1.0,
        gamma: 0.1,
        sigma: 10.0,
        normalization: Normalization::MinMaxPerMatrix,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Contract(format!("sigma must be positive, got {}", self.sigma)));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Contract(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        if self.alpha == 0.0 && self.beta == 0.0 && self.gamma == 0.0 {
            return Err(Error::Contract("at least one cost weight must be positive".into()));
        }
        Ok(())
    }
}

impl Default for CostConfig {
    fn default() -> Self {
        Self::LLAVA
    }
}

/// The three (possibly normalized) components and their weighted sum.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    pub c_f: Array2<f64>,
    pub c_s: Array2<f64>,
    pub c_e: Array2<f64>,
    pub c_v: Array2<f64>,
}

fn check_pair(source: &TokenSet, target: &TokenSet) -> Result<()> {
    if source.len() != target.len() {
        return Err(Error::Shape(format!(
            "source has {} tokens, target has {}",
            source.len(),
            target.len()
        )));
    }
    if source.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "source dimension {} differs from target dimension {}",
            source.dim(),
            target.dim()
        )));
    }
    Ok(())
}

/// Squared L2 distance between every source row and every target row.
pub fn feature_cost(source: &TokenSet, target: &TokenSet) -> Result<Array2<f64>> {
    check_pair(source, target)?;
    let n = source.len();
    let s = source.data();
    let t = target.data();
    let mut out = Array2::<f64>::zeros((n, n));
    out.as_slice_mut()
        .expect("fresh array is contiguous")
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            let si = s.row(i);
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = si
                    .iter()
                    .zip(t.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
            }
        });
    Ok(out)
}

/// Gaussian dissimilarity of grid positions.
pub fn spatial_cost(source: &TokenSet, target: &TokenSet, sigma: f64) -> Result<Array2<f64>> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Contract(format!("sigma must be positive, got {sigma}")));
    }
    if source.coords().len() != source.len() || target.coords().len() != target.len() {
        return Err(Error::Contract("token sets must carry one coordinate per token".into()));
    }
    let two_sigma_sq = 2.0 * sigma * sigma;
    let sc = source.coords();
    let tc = target.coords();
    Ok(Array2::from_shape_fn((sc.len(), tc.len()), |(i, j)| {
        let dx = sc[i].0 as f64 - tc[j].0 as f64;
        let dy = sc[i].1 as f64 - tc[j].1 as f64;
        1.0 - (-(dx * dx + dy * dy) / two_sigma_sq).exp()
    }))
}

/// Grid center in continuous coordinates.
pub fn grid_center(grid_h: usize, grid_w: usize) -> (f64, f64) {
    (grid_w as f64 / 2.0, grid_h as f64 / 2.0)
}

/// Distance of each source patch from the grid center, repeated across the row.
pub fn central_cost(source: &TokenSet) -> Result<Array2<f64>> {
    if source.coords().len() != source.len() {
        return Err(Error::Contract("token set must carry one coordinate per token".into()));
    }
    let (xc, yc) = grid_center(source.grid_h(), source.grid_w());
    let n = source.len();
    let mut out = Array2::<f64>::zeros((n, n));
    for (mut row, &(x, y)) in out.rows_mut().into_iter().zip(source.coords()) {
        let dx = x as f64 - xc;
        let dy = y as f64 - yc;
        row.fill((dx * dx + dy * dy).sqrt());
    }
    Ok(out)
}

/// Rescales in place to `[0, 1]`; a constant matrix becomes all zeros.
pub fn min_max_normalize(m: &mut Array2<f64>) {
    let (lo, hi) = m
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if !(span > 0.0) {
        m.fill(0.0);
        return;
    }
    m.mapv_inplace(|v| ((v - lo) / span).clamp(0.0, 1.0));
}

pub fn build_cost(source: &TokenSet, target: &TokenSet, cfg: &CostConfig) -> Result<CostMatrix> {
    cfg.validate()?;
    let mut c_f = feature_cost(source, target)?;
    let mut c_s = spatial_cost(source, target, cfg.sigma)?;
    let mut c_e = central_cost(source)?;
    if cfg.normalization == Normalization::MinMaxPerMatrix {
        min_max_normalize(&mut c_f);
        min_max_normalize(&mut c_s);
        min_max_normalize(&mut c_e);
    }
    let mut c_v = Array2::<f64>::zeros(c_f.raw_dim());
    Zip::from(&mut c_v)
        .and(&c_f)
        .and(&c_s)
        .and(&c_e)
        .for_each(|v, &f, &s, &e| *v = cfg.alpha * f + cfg.beta * s + cfg.gamma * e);
    if c_v.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("combined cost has non-finite entries".into()));
    }
    Ok(CostMatrix { c_f, c_s, c_e, c_v })
}
