//! Synthetic token generation.

use ndarray::Array2;

use crate::error::Result;
use crate::rng::SplitMix64;
use crate::token::TokenSet;

/// `grid_h * grid_w` tokens of dimension `dim` with i.i.d. standard normal
/// features drawn from SplitMix64 via Box-Muller.
pub fn gaussian_tokens(dim: usize, grid_h: usize, grid_w: usize, seed: u64) -> Result<TokenSet> {
    let mut rng = SplitMix64::new(seed);
    let data = Array2::from_shape_simple_fn((grid_h * grid_w, dim), || rng.next_gaussian());
    TokenSet::new(data, grid_h, grid_w)
}
