//! Adam-based maximization of the empirical utility objective.
//!
//! Training runs phases in order; every step draws a fresh noise batch from
//! the master seed stream (sub-seed `k + 1` for global step `k`, sub-seed 0
//! for weight initialization), so runs are reproducible and restartable. An
//! optional precomputed-pool mode samples minibatches from a fixed pool with
//! a held-out validation segment instead of re-simulating.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::grad::{batch_utility, batch_utility_gradient, subset_utility_gradient};
use crate::market::{MarketParams, NoiseBatch, TimeGrid};
use crate::policy::{Architecture, PolicyParams};
use crate::rng::{seed_for, stream_rng};
use crate::utility::UtilitySpec;
use rand_chacha::rand_core::RngCore;

const POOL_SEED_INDEX: u64 = u64::MAX;

/// Adam hyperparameters; defaults are the common ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    params: AdamParams,
}

impl AdamState {
    pub fn new(dim: usize, params: AdamParams) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
            params,
        }
    }

    pub fn from_parts(m: Vec<f64>, v: Vec<f64>, step: u64, params: AdamParams) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::invalid("moment vectors must have equal length"));
        }
        if v.iter().any(|&x| x < 0.0) {
            return Err(Error::invalid("second moments must be non-negative"));
        }
        Ok(AdamState { m, v, step, params })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> AdamParams {
        self.params
    }

    pub fn first_moments(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moments(&self) -> &[f64] {
        &self.v
    }
}

/// One bias-corrected Adam step in the ascent direction of `grad`.
pub fn adam_step(
    state: &mut AdamState,
    theta: &mut [f64],
    grad: &[f64],
    step_size: f64,
) -> Result<()> {
    if theta.len() != state.dim() || grad.len() != state.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: state {}, theta {}, grad {}",
            state.dim(),
            theta.len(),
            grad.len()
        )));
    }
    if !step_size.is_finite() || step_size <= 0.0 {
        return Err(Error::invalid(format!("step size must be > 0, got {step_size}")));
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    state.step += 1;
    let AdamParams { beta1, beta2, epsilon } = state.params;
    let bias1 = 1.0 - beta1.powi(state.step as i32);
    let bias2 = 1.0 - beta2.powi(state.step as i32);
    for i in 0..theta.len() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        theta[i] += step_size * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

/// One schedule phase: `steps` optimizer steps at minibatch size `batch` and
/// step size `step_size`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingPhase {
    pub steps: usize,
    pub batch: usize,
    pub step_size: f64,
}

impl TrainingPhase {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.step_size.is_nan() || self.step_size <= 0.0 {
            return Err(Error::invalid(format!(
                "phase fields must be positive: steps={}, batch={}, step_size={}",
                self.steps, self.batch, self.step_size
            )));
        }
        Ok(())
    }
}

/// Ordered list of phases.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSchedule {
    phases: Vec<TrainingPhase>,
}

impl TrainingSchedule {
    pub fn new(phases: Vec<TrainingPhase>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::invalid("schedule must contain at least one phase"));
        }
        for p in &phases {
            p.validate()?;
        }
        Ok(TrainingSchedule { phases })
    }

    pub fn phases(&self) -> &[TrainingPhase] {
        &self.phases
    }

    pub fn total_steps(&self) -> usize {
        self.phases.iter().map(|p| p.steps).sum()
    }

    /// Total simulated paths over the whole run.
    pub fn total_paths(&self) -> usize {
        self.phases.iter().map(|p| p.steps * p.batch).sum()
    }

    /// Phase index owning global step `k`.
    pub fn phase_of(&self, k: usize) -> Option<usize> {
        let mut acc = 0;
        for (i, p) in self.phases.iter().enumerate() {
            acc += p.steps;
            if k < acc {
                return Some(i);
            }
        }
        None
    }
}

/// Minibatch sourcing strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainMode {
    /// Fresh paths every step (the default; avoids overtraining).
    Resimulate,
    /// Fixed pool of `pool` paths; each step samples its minibatch from the
    /// training segment, and `validation_fraction` of the pool is held out.
    Precomputed { pool: usize, validation_fraction: f64 },
}

/// Everything a training run needs.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub market: MarketParams,
    pub grid: TimeGrid,
    pub arch: Architecture,
    pub sigma_init: f64,
    pub utility: UtilitySpec,
    pub schedule: TrainingSchedule,
    pub seed: u64,
    pub mode: TrainMode,
}

/// Per-step log record. `wall_ms` is measurement only and is excluded from
/// the deterministic log body.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub phase: usize,
    pub step: u64,
    pub objective: f64,
    pub grad_norm: f64,
    pub floor_events: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub records: Vec<StepRecord>,
}

impl TrainingLog {
    /// Deterministic body: `phase,step,J,grad_norm,floor_events`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "phase,step,J,grad_norm,floor_events")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.phase, r.step, r.objective, r.grad_norm, r.floor_events
            )?;
        }
        Ok(())
    }

    /// Wall-clock sidecar: `step,ms`. Not reproducible across runs.
    pub fn write_timing_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,ms")?;
        for r in &self.records {
            writeln!(out, "{},{:.3}", r.step, r.wall_ms)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyParams,
    pub adam: AdamState,
    pub log: TrainingLog,
    /// Mean utility over the held-out pool segment (precomputed mode only).
    pub validation: Option<f64>,
}

/// Observer callback invoked after every optimizer step.
pub type StepObserver<'a> = dyn FnMut(&StepRecord, &PolicyParams, &AdamState) + 'a;

/// Run the full schedule from a fresh initialization.
pub fn train(setup: &TrainSetup) -> Result<TrainOutcome> {
    train_with_observer(setup, &mut |_, _, _| {})
}

pub fn train_with_observer(setup: &TrainSetup, observer: &mut StepObserver) -> Result<TrainOutcome> {
    let policy = PolicyParams::init(setup.arch.clone(), setup.sigma_init, seed_for(setup.seed, 0))?;
    let adam = AdamState::new(policy.param_count(), AdamParams::default());
    run_steps(setup, policy, adam, 0, observer)
}

/// Continue a run from parameters and optimizer state saved after
/// `steps_done` global steps. Bit-identical to an uninterrupted run given the
/// same setup.
pub fn resume(
    setup: &TrainSetup,
    policy: PolicyParams,
    adam: AdamState,
    steps_done: u64,
) -> Result<TrainOutcome> {
    if policy.arch() != &setup.arch {
        return Err(Error::invalid("checkpoint architecture differs from setup"));
    }
    if adam.dim() != policy.param_count() {
        return Err(Error::invalid("optimizer state does not match parameters"));
    }
    if adam.step_count() != steps_done {
        return Err(Error::invalid(format!(
            "optimizer step count {} does not match cursor {}",
            adam.step_count(),
            steps_done
        )));
    }
    run_steps(setup, policy, adam, steps_done, &mut |_, _, _| {})
}

struct Pool {
    noise: NoiseBatch,
    train_len: usize,
}

fn run_steps(
    setup: &TrainSetup,
    mut policy: PolicyParams,
    mut adam: AdamState,
    start_step: u64,
    observer: &mut StepObserver,
) -> Result<TrainOutcome> {
    let total = setup.schedule.total_steps() as u64;
    if start_step > total {
        return Err(Error::invalid(format!(
            "cursor {start_step} lies beyond the schedule ({total} steps)"
        )));
    }

    let pool = match setup.mode {
        TrainMode::Resimulate => None,
        TrainMode::Precomputed { pool, validation_fraction } => {
            if pool == 0 {
                return Err(Error::invalid("pool size must be positive"));
            }
            if !(0.0..1.0).contains(&validation_fraction) {
                return Err(Error::invalid("validation fraction must lie in [0, 1)"));
            }
            let train_len = ((pool as f64) * (1.0 - validation_fraction)).floor() as usize;
            if train_len == 0 {
                return Err(Error::invalid("validation split leaves no training paths"));
            }
            Some(Pool {
                noise: NoiseBatch::for_market(
                    seed_for(setup.seed, POOL_SEED_INDEX),
                    pool,
                    &setup.grid,
                    &setup.market,
                ),
                train_len,
            })
        }
    };

    let mut log = TrainingLog::default();
    for k in start_step..total {
        let phase_idx = setup
            .schedule
            .phase_of(k as usize)
            .expect("step within schedule");
        let phase = setup.schedule.phases()[phase_idx];
        let started = Instant::now();
        let step_seed = seed_for(setup.seed, k + 1);

        let objective = match &pool {
            None => {
                let noise =
                    NoiseBatch::for_market(step_seed, phase.batch, &setup.grid, &setup.market);
                batch_utility_gradient(&policy, &setup.market, &setup.grid, &setup.utility, &noise)?
            }
            Some(pool) => {
                // Minibatch indices drawn with replacement from the training
                // segment of the pool.
                let mut rng = stream_rng(step_seed, 0);
                let picks: Vec<usize> = (0..phase.batch)
                    .map(|_| (rng.next_u64() % pool.train_len as u64) as usize)
                    .collect();
                subset_utility_gradient(
                    &policy,
                    &setup.market,
                    &setup.grid,
                    &setup.utility,
                    &pool.noise,
                    &picks,
                )?
            }
        };

        if !objective.j.is_finite() {
            return Err(Error::NonFiniteObjective { phase: phase_idx, step: k });
        }
        adam_step(
            &mut adam,
            policy.values_mut(),
            &objective.gradient,
            phase.step_size,
        )?;

        let grad_norm = objective.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
        let record = StepRecord {
            phase: phase_idx,
            step: k,
            objective: objective.j,
            grad_norm,
            floor_events: objective.floor_events,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        observer(&record, &policy, &adam);
        log.records.push(record);
    }

    let validation = match &pool {
        Some(pool) if pool.train_len < pool.noise.paths() => {
            let val_paths: Vec<usize> = (pool.train_len..pool.noise.paths()).collect();
            // Mean utility over the held-out paths at the final parameters.
            let report = subset_utility_gradient(
                &policy,
                &setup.market,
                &setup.grid,
                &setup.utility,
                &pool.noise,
                &val_paths,
            )?;
            Some(report.j)
        }
        _ => None,
    };

    Ok(TrainOutcome {
        policy,
        adam,
        log,
        validation,
    })
}

/// Mean utility of freshly simulated paths at fixed parameters; convenience
/// used by tests and diagnostics.
pub fn mean_utility(
    policy: &PolicyParams,
    market: &MarketParams,
    grid: &TimeGrid,
    utility: &UtilitySpec,
    paths: usize,
    seed: u64,
) -> Result<f64> {
    let noise = NoiseBatch::for_market(seed, paths, grid, market);
    Ok(batch_utility(policy, market, grid, utility, &noise)?.0)
}
