//! Dynamic portfolio allocation with neural feedback policies.
//!
//! The library simulates a two-asset market (cash plus a risky index under
//! GBM or square-root stochastic volatility), represents the stock-weight
//! feedback control as a small feed-forward network, and trains it by
//! maximizing the minibatch mean of terminal isoelastic utility with Adam.
//! Exact pathwise gradients come from a reverse-mode tape over the full
//! discretized rollout. Closed-form baseline weights and seeded Monte Carlo
//! evaluators validate the learned policies; calibration routines estimate
//! market parameters from daily price and volatility-index data.
//!
//! Batch work (path simulation, per-path gradient tapes, policy evaluation)
//! runs on rayon when the default `parallel` feature is enabled. Reductions
//! use a fixed path order, so parallel and sequential execution produce
//! bit-identical results; `*_sequential` variants of the batch entry points
//! are always available for comparison.

pub mod calibrate;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod grad;
pub mod market;
pub mod policy;
pub mod rng;
pub mod scalar;
mod tape;
pub mod train;
pub mod utility;

pub use error::{Error, Result};
pub use market::{
    check_feller, draw_increments, simulate_batch, simulate_batch_sequential, step_market,
    step_wealth, GbmParams, HestonParams, IncrementPair, MarketParams, MarketState, NoiseBatch,
    TimeGrid, INITIAL_WEALTH, WEALTH_FLOOR,
};
pub use policy::{silu, Architecture, PolicyParams};
pub use utility::{isoelastic_utility, UtilitySpec};

/// Map `f` over `0..n`, in parallel when the `parallel` feature is active.
/// Output order always matches the index order.
pub(crate) fn collect_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Single-threaded counterpart of [`collect_indexed`].
pub(crate) fn collect_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
