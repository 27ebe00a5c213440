//! The four subcommands: calibrate, train, eval, profile.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};

use mertopt_core::calibrate::{calibrate_gbm, calibrate_heston, load_price_csv, load_vix_csv};
use mertopt_core::checkpoint::Checkpoint;
use mertopt_core::eval::{
    evaluate_policy, weight_profile, wealth_paths, write_profile_csv, write_profile_plot,
    write_report_csv, write_report_plot, write_wealth_csv, write_wealth_plot, Policy, ReportRow,
};
use mertopt_core::market::{simulate_traces, write_paths_csv};
use mertopt_core::rng::seed_for;
use mertopt_core::train::{train_with_observer, TrainMode, TrainSetup};
use mertopt_core::{UtilitySpec, INITIAL_WEALTH};

use crate::config::{parse_grid, Experiment};

/// Guard file marking exclusive ownership of an output directory by one
/// training run. Removed on drop, including panics.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "pid {}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "output directory {} is owned by another training run (remove {} if stale)",
                dir.display(),
                path.display()
            ),
            Err(e) => Err(e).context("cannot create lock file"),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))
}

/// Wall-clock metadata sidecar; the only place timestamps are written.
fn write_meta(dir: &Path, command: &str, exp: &Experiment, started: Instant) -> Result<()> {
    ensure_dir(dir)?;
    let unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let body = format!(
        "command = {command}\nconfig_hash = {}\nseed = {}\nunix_time = {unix}\nelapsed_s = {:.3}\n",
        exp.config_hash,
        exp.seed,
        started.elapsed().as_secs_f64()
    );
    fs::write(dir.join(format!("{command}_meta.txt")), body)?;
    Ok(())
}

fn stamp(exp: &Experiment, seed: u64) -> String {
    format!("config={} seed={}", exp.config_hash, seed)
}

pub fn cmd_calibrate(exp: &Experiment, verbose: bool) -> Result<()> {
    let started = Instant::now();
    let prices_path = exp
        .prices_csv
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("config has no model.prices_csv to calibrate from"))?;
    let prices = load_price_csv(prices_path)?;
    let gbm = calibrate_gbm(&prices)?;
    let s0 = prices.last_price().unwrap_or(1.0);

    // Estimate everything first; only then touch the filesystem.
    let heston = match &exp.vix_csv {
        Some(path) => {
            let vars = load_vix_csv(path)?;
            Some(calibrate_heston(&prices, &vars)?)
        }
        None => None,
    };

    let dir = exp.out.join("calibration");
    ensure_dir(&dir)?;
    let tag = stamp(exp, exp.seed);

    let report = format!(
        "# {tag}\nmodel = gbm\nn_obs = {}\nmu = {}\nsigma = {}\ns0 = {s0}\n",
        gbm.n_obs, gbm.mu, gbm.sigma
    );
    fs::write(dir.join("gbm_report.txt"), &report)?;
    let model_toml = format!(
        "# {tag}\n[model]\nkind = \"gbm\"\nr = {}\nmu = {}\nsigma = {}\ns0 = {s0}\n",
        exp.r, gbm.mu, gbm.sigma
    );
    fs::write(dir.join("gbm_model.toml"), &model_toml)?;
    if verbose {
        eprintln!("gbm: mu = {:.6}, sigma = {:.6} ({} observations)", gbm.mu, gbm.sigma, gbm.n_obs);
    }

    if let Some(est) = heston {
        let report = format!(
            "# {tag}\nmodel = heston\nn_obs = {}\nmu = {}\nkappa = {}\ntheta = {}\nsigma_y = {}\nrho = {}\ny0 = {}\nfeller_satisfied = {}\ns0 = {s0}\n",
            est.n_obs, est.mu, est.kappa, est.theta, est.sigma_y, est.rho, est.y0, est.feller
        );
        fs::write(dir.join("heston_report.txt"), &report)?;
        let model_toml = format!(
            "# {tag}\n[model]\nkind = \"heston\"\nr = {}\nmu = {}\nkappa = {}\ntheta = {}\nsigma_y = {}\nrho = {}\ny0 = {}\ns0 = {s0}\n",
            exp.r, est.mu, est.kappa, est.theta, est.sigma_y, est.rho, est.y0
        );
        fs::write(dir.join("heston_model.toml"), &model_toml)?;
        if verbose {
            eprintln!(
                "heston: kappa = {:.4}, theta = {:.5}, sigma_y = {:.4}, rho = {:.4}, feller = {}",
                est.kappa, est.theta, est.sigma_y, est.rho, est.feller
            );
        }
    }

    write_meta(&exp.out.join("logs"), "calibrate", exp, started)
}

pub fn cmd_train(exp: &Experiment, verbose: bool) -> Result<()> {
    let started = Instant::now();
    let schedule = exp.schedule()?.clone();
    ensure_dir(&exp.out)?;
    let _lock = DirLock::acquire(&exp.out)?;
    let ckpt_dir = exp.out.join("checkpoints");
    let log_dir = exp.out.join("logs");
    ensure_dir(&ckpt_dir)?;
    ensure_dir(&log_dir)?;

    for (i, &eta) in exp.etas.iter().enumerate() {
        let label = Experiment::eta_label(eta);
        let run_seed = seed_for(exp.seed, i as u64);
        let setup = TrainSetup {
            market: exp.market,
            grid: exp.grid,
            arch: exp.arch.clone(),
            sigma_init: exp.sigma_init,
            utility: UtilitySpec::new(eta)?,
            schedule: schedule.clone(),
            seed: run_seed,
            mode: TrainMode::Resimulate,
        };

        let eta_dir = ckpt_dir.join(format!("eta_{label}"));
        ensure_dir(&eta_dir)?;
        let every = exp.checkpoint_every;
        let tag = exp.config_hash.clone();
        let total = schedule.total_steps() as u64;
        let mut observer = |record: &mertopt_core::train::StepRecord,
                            policy: &mertopt_core::policy::PolicyParams,
                            adam: &mertopt_core::train::AdamState| {
            let done = record.step + 1;
            if every > 0 && done.is_multiple_of(every as u64) && done < total {
                let ck = Checkpoint {
                    policy: policy.clone(),
                    seed: run_seed,
                    phase: record.phase,
                    step: done,
                    adam: Some(adam.clone()),
                    config_tag: Some(tag.clone()),
                };
                let _ = ck.save(&eta_dir.join(format!("step_{done}.ckpt")));
            }
            if verbose && done.is_multiple_of(100) {
                eprintln!(
                    "eta {label}: step {done}/{total} J = {:.6} |grad| = {:.4}",
                    record.objective, record.grad_norm
                );
            }
        };
        let outcome = train_with_observer(&setup, &mut observer)?;

        let final_ck = Checkpoint {
            policy: outcome.policy.clone(),
            seed: run_seed,
            phase: schedule.phases().len().saturating_sub(1),
            step: total,
            adam: Some(outcome.adam.clone()),
            config_tag: Some(exp.config_hash.clone()),
        };
        final_ck.save(&eta_dir.join("final.ckpt"))?;

        let mut body = Vec::new();
        writeln!(body, "# {}", stamp(exp, run_seed))?;
        outcome.log.write_csv(&mut body)?;
        fs::write(log_dir.join(format!("train_eta_{label}.csv")), body)?;
        let mut timing = Vec::new();
        outcome.log.write_timing_csv(&mut timing)?;
        fs::write(log_dir.join(format!("train_eta_{label}_timing.csv")), timing)?;

        if verbose {
            let last = outcome.log.records.last().map(|r| r.objective).unwrap_or(f64::NAN);
            eprintln!("eta {label}: finished {total} steps, final J = {last:.6}");
        }
    }

    write_meta(&log_dir, "train", exp, started)
}

fn parse_policy_kind(spec: &str, eta: f64) -> Result<Policy> {
    if let Some(rest) = spec.strip_prefix("constant:") {
        let weight: f64 = rest.parse().with_context(|| format!("bad constant weight {rest:?}"))?;
        return Ok(Policy::Constant { weight });
    }
    match spec {
        "analytic" => Ok(Policy::AnalyticGbm { eta }),
        "myopic" => Ok(Policy::MyopicHeston),
        "ann" => bail!("trained policies are selected via --checkpoint"),
        other => bail!("unknown policy {other:?}; expected ann, analytic, myopic or constant:<w>"),
    }
}

pub struct EvalArgs {
    pub policy: String,
    pub checkpoint: Option<PathBuf>,
    pub reps: Option<usize>,
    pub dump_paths: Option<usize>,
    pub compare_wealth: Option<usize>,
}

pub fn cmd_eval(exp: &Experiment, args: &EvalArgs, verbose: bool) -> Result<()> {
    let started = Instant::now();
    let reps = args.reps.unwrap_or(exp.eval_reps);
    let seed = exp.seed;

    let ann_params = if args.policy == "ann" {
        let path = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("--policy ann needs --checkpoint"))?;
        Some(Checkpoint::load(path)?.policy)
    } else {
        None
    };

    let mut rows = Vec::with_capacity(exp.etas.len());
    for &eta in &exp.etas {
        let policy = match &ann_params {
            Some(params) => Policy::Ann { params: params.clone() },
            None => parse_policy_kind(&args.policy, eta)?,
        };
        let report = evaluate_policy(
            &policy,
            &exp.market,
            &exp.grid,
            &UtilitySpec::new(eta)?,
            reps,
            seed,
        )?;
        if verbose {
            eprintln!(
                "{} at eta {eta}: mean {:.6} se {:.6} floors {}",
                policy.label(),
                report.mean_utility,
                report.std_error,
                report.floor_events
            );
        }
        rows.push(ReportRow {
            policy: policy.label(),
            eta_inv: 1.0 / eta,
            report,
        });
    }

    let dir = exp.out.join("reports");
    ensure_dir(&dir)?;
    let slug = args.policy.replace(':', "_");
    let csv_name = format!("eval_{slug}.csv");
    let mut body = Vec::new();
    write_report_csv(&mut body, Some(&format!("{} reps={reps}", stamp(exp, seed))), &rows)?;
    fs::write(dir.join(&csv_name), body)?;
    let mut plot = Vec::new();
    write_report_plot(&mut plot, &csv_name)?;
    fs::write(dir.join(format!("eval_{slug}.gp")), plot)?;

    if let Some(n_paths) = args.dump_paths {
        let eta = exp.etas[0];
        let policy = match &ann_params {
            Some(params) => Policy::Ann { params: params.clone() },
            None => parse_policy_kind(&args.policy, eta)?,
        };
        let weight = policy.bind(&exp.market, &exp.grid)?;
        let traces = simulate_traces(
            &exp.market,
            &exp.grid,
            &weight,
            n_paths,
            seed,
            INITIAL_WEALTH,
            exp.s0,
        );
        let mut body = Vec::new();
        writeln!(body, "# {}", stamp(exp, seed))?;
        write_paths_csv(&mut body, &traces)?;
        fs::write(dir.join(format!("paths_{slug}.csv")), body)?;
    }

    if let Some(n_paths) = args.compare_wealth {
        let eta = exp.etas[0];
        let evaluated = match &ann_params {
            Some(params) => Policy::Ann { params: params.clone() },
            None => parse_policy_kind(&args.policy, eta)?,
        };
        // Baseline with a closed form under the configured market.
        let baseline = match exp.market {
            mertopt_core::MarketParams::Gbm(_) => Policy::AnalyticGbm { eta },
            mertopt_core::MarketParams::Heston(_) => Policy::MyopicHeston,
        };
        export_wealth_comparison(exp, &[evaluated, baseline], n_paths, &format!("wealth_{slug}"))?;
    }

    write_meta(&exp.out.join("logs"), "eval", exp, started)
}

pub struct ProfileArgs {
    pub policy: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub t_grid: String,
    pub y_grid: String,
}

pub fn cmd_profile(exp: &Experiment, args: &ProfileArgs, verbose: bool) -> Result<()> {
    let started = Instant::now();
    let t_grid = parse_grid(&args.t_grid).context("bad --t-grid")?;
    let y_grid = parse_grid(&args.y_grid).context("bad --y-grid")?;
    let eta = exp.etas[0];

    let (label, policy) = match (&args.checkpoint, &args.policy) {
        (Some(path), None) => {
            let params = Checkpoint::load(path)?.policy;
            ("ann".to_string(), Policy::Ann { params })
        }
        (None, Some(spec)) => {
            let policy = parse_policy_kind(spec, eta)?;
            (spec.replace(':', "_"), policy)
        }
        (Some(_), Some(_)) => bail!("pass either --checkpoint or --policy, not both"),
        (None, None) => bail!("profile needs --checkpoint or --policy"),
    };

    let rows = weight_profile(&policy, &exp.market, &exp.grid, &t_grid, &y_grid)?;
    if verbose {
        eprintln!("profiling {} on {} x {} grid", label, t_grid.len(), y_grid.len());
    }

    let dir = exp.out.join("profiles");
    ensure_dir(&dir)?;
    let csv_name = format!("profile_{label}.csv");
    let mut body = Vec::new();
    write_profile_csv(&mut body, Some(&stamp(exp, exp.seed)), &rows)?;
    fs::write(dir.join(&csv_name), body)?;
    let mut plot = Vec::new();
    write_profile_plot(&mut plot, &csv_name)?;
    fs::write(dir.join(format!("profile_{label}.gp")), plot)?;

    write_meta(&exp.out.join("logs"), "profile", exp, started)
}

/// Wealth-comparison export shared by figures: every listed policy simulated
/// on common noise.
fn export_wealth_comparison(
    exp: &Experiment,
    policies: &[Policy],
    n_paths: usize,
    out_name: &str,
) -> Result<()> {
    let groups = wealth_paths(policies, &exp.market, &exp.grid, n_paths, exp.seed, exp.s0)?;
    let dir = exp.out.join("reports");
    ensure_dir(&dir)?;
    let csv_name = format!("{out_name}.csv");
    let mut body = Vec::new();
    write_wealth_csv(&mut body, Some(&stamp(exp, exp.seed)), &groups)?;
    fs::write(dir.join(&csv_name), body)?;
    let mut plot = Vec::new();
    write_wealth_plot(&mut plot, &csv_name)?;
    fs::write(dir.join(format!("{out_name}.gp")), plot)?;
    Ok(())
}
