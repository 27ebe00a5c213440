//! Behavioral training checks at desk scale. These run a few hundred Adam
//! steps each, so they are the slowest tests in the crate (single-digit
//! seconds apiece).

use mertopt_core::checkpoint::Checkpoint;
use mertopt_core::eval::{time_averaged_weight, Policy};
use mertopt_core::policy::Architecture;
use mertopt_core::train::{
    resume, train, train_with_observer, TrainMode, TrainSetup, TrainingPhase, TrainingSchedule,
};
use mertopt_core::{MarketParams, TimeGrid, UtilitySpec};

fn desk_schedule() -> TrainingSchedule {
    TrainingSchedule::new(vec![
        TrainingPhase { steps: 200, batch: 10, step_size: 0.05 },
        TrainingPhase { steps: 300, batch: 50, step_size: 0.01 },
    ])
    .unwrap()
}

fn gbm_setup(market: MarketParams, seed: u64) -> TrainSetup {
    TrainSetup {
        market,
        grid: TimeGrid::new(1.0, 252).unwrap(),
        arch: Architecture::with_hidden(&[3]).unwrap(),
        sigma_init: 0.1,
        utility: UtilitySpec::log(),
        schedule: desk_schedule(),
        seed,
        mode: TrainMode::Resimulate,
    }
}

#[test]
fn objective_trends_upward_over_training() {
    let setup = gbm_setup(MarketParams::gbm(0.05, 0.085, 0.176).unwrap(), 42);
    let out = train(&setup).unwrap();
    let js: Vec<f64> = out.log.records.iter().map(|r| r.objective).collect();
    let head = js[..100].iter().sum::<f64>() / 100.0;
    let tail = js[js.len() - 100..].iter().sum::<f64>() / 100.0;
    assert!(
        tail >= head,
        "objective did not improve: first hundred {head}, last hundred {tail}"
    );
}

#[test]
fn no_equity_premium_trains_to_near_zero_weight() {
    // mu = r: the optimal allocation is identically zero.
    let setup = gbm_setup(MarketParams::gbm(0.05, 0.05, 0.176).unwrap(), 42);
    let out = train(&setup).unwrap();
    let policy = Policy::Ann { params: out.policy };
    let avg = time_averaged_weight(&policy, &setup.market, &setup.grid, 500, 0.176 * 0.176).unwrap();
    assert!(avg.abs() <= 0.05, "time-averaged weight {avg}");
    if let Policy::Ann { params } = &policy {
        for i in 0..=100 {
            let w = params.forward(i as f64 / 100.0, 0.176 * 0.176);
            assert!(w.abs() <= 0.05, "weight {w} at t index {i}");
        }
    }
}

#[test]
fn different_seeds_give_different_parameters_but_comparable_objectives() {
    let market = MarketParams::gbm(0.05, 0.085, 0.176).unwrap();
    let a = train(&gbm_setup(market, 42)).unwrap();
    let b = train(&gbm_setup(market, 43)).unwrap();
    assert_ne!(a.policy.values(), b.policy.values());
    // Final objectives agree up to Monte Carlo noise of the last minibatches.
    let tail = |out: &mertopt_core::train::TrainOutcome| {
        let js: Vec<f64> = out.log.records.iter().rev().take(50).map(|r| r.objective).collect();
        js.iter().sum::<f64>() / js.len() as f64
    };
    let (ja, jb) = (tail(&a), tail(&b));
    assert!((ja - jb).abs() < 0.01, "final objectives {ja} vs {jb}");
}

#[test]
fn checkpointed_state_continues_bit_identically() {
    let mut setup = gbm_setup(MarketParams::gbm(0.05, 0.085, 0.176).unwrap(), 7);
    setup.schedule = TrainingSchedule::new(vec![
        TrainingPhase { steps: 30, batch: 5, step_size: 0.05 },
        TrainingPhase { steps: 30, batch: 10, step_size: 0.01 },
    ])
    .unwrap();
    let full = train(&setup).unwrap();

    // Snapshot mid-run through the checkpoint text format, then resume.
    let mut serialized = None;
    train_with_observer(&setup, &mut |record, policy, adam| {
        if record.step == 44 {
            let ck = Checkpoint {
                policy: policy.clone(),
                seed: setup.seed,
                phase: record.phase,
                step: record.step + 1,
                adam: Some(adam.clone()),
                config_tag: None,
            };
            let mut buf = Vec::new();
            ck.write_to(&mut buf).unwrap();
            serialized = Some(buf);
        }
    })
    .unwrap();
    let restored = Checkpoint::read_from(&serialized.unwrap()[..]).unwrap();
    let resumed = resume(
        &setup,
        restored.policy,
        restored.adam.expect("adam state saved"),
        restored.step,
    )
    .unwrap();

    assert_eq!(resumed.policy.values(), full.policy.values());
    assert_eq!(resumed.adam, full.adam);
}
