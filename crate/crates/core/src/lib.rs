//! Stochastic model-predictive control for autonomous mobility-on-demand fleets.
//!
//! The crate covers the time-expanded fleet model ([`netflow`]), a small
//! vertex-returning LP/MILP solver ([`lpcore`]), the sample-average surrogate
//! ([`saa`]) and its totally unimodular decomposition ([`decomposed`]),
//! demand models ([`demand`]), numeric checks of the error bounds
//! ([`bounds`]) and a discrete-event fleet simulator ([`sim`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod decomposed;
pub mod demand;
pub mod error;
pub mod instances;
pub mod lpcore;
pub mod netflow;
pub mod saa;
pub mod sim;

pub use error::{Error, Result};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent RNG seed for `stream` (an epoch or trial index)
/// from a scenario seed: `splitmix64(seed ^ splitmix64(stream))`.
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}
