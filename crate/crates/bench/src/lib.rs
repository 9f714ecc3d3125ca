//! Fixtures shared by the criterion benches.

use topv_core::layersim::{forward_tap, init_block, Tap, ToyBlockConfig};
use topv_core::synth::gaussian_tokens;
use topv_core::TokenSet;

/// Gaussian source tokens on a `side x side` grid and their post-norm targets.
pub fn source_target(side: usize, dim: usize, seed: u64) -> (TokenSet, TokenSet) {
    let source = gaussian_tokens(dim, side, side, seed).expect("valid grid");
    let block = init_block(ToyBlockConfig { dim, seed, ..Default::default() }).expect("valid block");
    let target = forward_tap(&block, &source, Tap::PostLn).expect("matching dim");
    (source, target)
}
