//! Empirical utility objective and its pathwise gradient.
//!
//! The objective is the minibatch mean of terminal utility over simulated
//! paths. Noise is frozen per evaluation (common random numbers), which makes
//! the objective a deterministic, differentiable function of the policy
//! parameters. The gradient is exact for the discretized problem: each path
//! is re-run on a recording tape and the per-path gradients are averaged in
//! fixed path order, so parallel and sequential evaluation agree bit-for-bit.
//!
//! Paths that hit the wealth floor contribute a zero sub-gradient through the
//! clamped step; floor events are counted so callers can detect them.

use crate::error::{Error, Result};
use crate::market::{rollout_wealth, IncrementPair, MarketParams, NoiseBatch, TimeGrid};
use crate::policy::{forward_on, PolicyParams};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::utility::{utility_on, UtilitySpec};
use crate::INITIAL_WEALTH;

/// Objective value, gradient (aligned with the flat parameter vector) and the
/// number of wealth-floor events in the batch.
#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub j: f64,
    pub gradient: Vec<f64>,
    pub floor_events: u64,
}

fn validate_noise(noise: &NoiseBatch, params: &MarketParams, grid: &TimeGrid) -> Result<()> {
    if noise.paths() == 0 {
        return Err(Error::invalid("noise batch has no paths"));
    }
    if noise.steps() != grid.steps() {
        return Err(Error::invalid(format!(
            "noise batch has {} steps, grid has {}",
            noise.steps(),
            grid.steps()
        )));
    }
    if noise.dt() != grid.dt() || noise.rho() != params.correlation() {
        return Err(Error::invalid(
            "noise batch was generated for different market or grid settings",
        ));
    }
    Ok(())
}

/// Mean terminal utility of one path under the current parameters.
pub(crate) fn path_utility(
    policy: &PolicyParams,
    params: &MarketParams,
    grid: &TimeGrid,
    u: &UtilitySpec,
    incs: &[IncrementPair],
) -> (f64, u32) {
    let horizon = grid.horizon();
    let (w, floors) = rollout_wealth::<f64>(
        &mut |t, y| forward_on::<f64>(policy.arch(), policy.values(), t / horizon, y),
        params,
        grid,
        incs,
        INITIAL_WEALTH,
    );
    (utility_on::<f64>(w, u.eta), floors)
}

fn path_utility_gradient(
    policy: &PolicyParams,
    params: &MarketParams,
    grid: &TimeGrid,
    u: &UtilitySpec,
    incs: &[IncrementPair],
) -> (f64, Vec<f64>, u32) {
    let n_params = policy.param_count();
    // Rough per-step node count; exactness only affects reallocation.
    let nodes_per_step: usize = policy
        .arch()
        .widths()
        .windows(2)
        .map(|w| 5 * w[0] * w[1])
        .sum::<usize>()
        + 8;
    let tape = Tape::with_capacity(n_params + grid.steps() * nodes_per_step + 4);
    let theta: Vec<_> = policy.values().iter().map(|&v| tape.var(v)).collect();
    let horizon = grid.horizon();
    let (w, floors) = rollout_wealth(
        &mut |t, y| forward_on(policy.arch(), &theta, t / horizon, y),
        params,
        grid,
        incs,
        INITIAL_WEALTH,
    );
    let utility = utility_on(w, u.eta);
    let gradient = tape.gradient(utility, n_params);
    (utility.value(), gradient, floors)
}

fn reduce_objective(parts: Vec<(f64, Vec<f64>, u32)>, n_params: usize) -> ObjectiveValue {
    let b = parts.len() as f64;
    let mut j = 0.0;
    let mut gradient = vec![0.0; n_params];
    let mut floor_events = 0u64;
    for (u, g, f) in parts {
        j += u;
        for (acc, gi) in gradient.iter_mut().zip(&g) {
            *acc += gi;
        }
        floor_events += u64::from(f);
    }
    for gi in gradient.iter_mut() {
        *gi /= b;
    }
    ObjectiveValue {
        j: j / b,
        gradient,
        floor_events,
    }
}

/// Minibatch mean terminal utility `J` and the floor-event count.
pub fn batch_utility(
    policy: &PolicyParams,
    params: &MarketParams,
    grid: &TimeGrid,
    u: &UtilitySpec,
    noise: &NoiseBatch,
) -> Result<(f64, u64)> {
    validate_noise(noise, params, grid)?;
    let parts = crate::collect_indexed(noise.paths(), |b| {
        let incs = noise.path(b);
        path_utility(policy, params, grid, u, &incs)
    });
    let b = parts.len() as f64;
    let mut j = 0.0;
    let mut floors = 0u64;
    for (v, f) in parts {
        j += v;
        floors += u64::from(f);
    }
    Ok((j / b, floors))
}

/// `J` together with its exact gradient at fixed noise. The `j` field matches
/// [`batch_utility`] bit-for-bit.
pub fn batch_utility_gradient(
    policy: &PolicyParams,
    params: &MarketParams,
    grid: &TimeGrid,
    u: &UtilitySpec,
    noise: &NoiseBatch,
) -> Result<ObjectiveValue> {
    validate_noise(noise, params, grid)?;
    let parts = crate::collect_indexed(noise.paths(), |b| {
        let incs = noise.path(b);
        path_utility_gradient(policy, params, grid, u, &incs)
    });
    Ok(reduce_objective(parts, policy.param_count()))
}

/// Single-threaded variant of [`batch_utility_gradient`]; bit-identical.
pub fn batch_utility_gradient_sequential(
    policy: &PolicyParams,
    params: &MarketParams,
    grid: &TimeGrid,
    u: &UtilitySpec,
    noise: &NoiseBatch,
) -> Result<ObjectiveValue> {
    validate_noise(noise, params, grid)?;
    let parts = crate::collect_indexed_seq(noise.paths(), |b| {
        let incs = noise.path(b);
        path_utility_gradient(policy, params, grid, u, &incs)
    });
    Ok(reduce_objective(parts, policy.param_count()))
}

/// Gradient over an explicit subset of noise paths, averaged in the order
/// given. Used by the precomputed-pool training mode.
pub(crate) fn subset_utility_gradient(
    policy: &PolicyParams,
    params: &MarketParams,
    grid: &TimeGrid,
    u: &UtilitySpec,
    noise: &NoiseBatch,
    paths: &[usize],
) -> Result<ObjectiveValue> {
    validate_noise(noise, params, grid)?;
    let parts = crate::collect_indexed(paths.len(), |i| {
        let incs = noise.path(paths[i]);
        path_utility_gradient(policy, params, grid, u, &incs)
    });
    Ok(reduce_objective(parts, policy.param_count()))
}

/// Central finite difference of an arbitrary scalar function; the
/// verification oracle for the pathwise gradient.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let xi = point[i];
        point[i] = xi + h;
        let up = f(&point);
        point[i] = xi - h;
        let down = f(&point);
        point[i] = xi;
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Central finite differences of the batch objective at fixed noise.
pub fn finite_diff_gradient(
    policy: &PolicyParams,
    params: &MarketParams,
    grid: &TimeGrid,
    u: &UtilitySpec,
    noise: &NoiseBatch,
    h: f64,
) -> Result<Vec<f64>> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::invalid(format!("step h must be > 0, got {h}")));
    }
    validate_noise(noise, params, grid)?;
    let arch = policy.arch().clone();
    Ok(central_difference(
        |values| {
            let p = PolicyParams::from_values(arch.clone(), values.to_vec())
                .expect("perturbed parameters stay valid");
            batch_utility(&p, params, grid, u, noise)
                .expect("noise already validated")
                .0
        },
        policy.values(),
        h,
    ))
}
