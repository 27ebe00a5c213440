//! Closed-form baseline weights, Monte Carlo policy evaluation with standard
//! errors, and the CSV/plot exporters behind the reporting commands.

use std::io::Write;

use crate::error::{Error, Result};
use crate::market::{
    simulate_batch, simulate_batch_sequential, simulate_traces, MarketParams, PathTrace, TimeGrid,
};
use crate::policy::PolicyParams;
use crate::utility::{utility_on, UtilitySpec};
use crate::INITIAL_WEALTH;

/// Observed squared volatility is clamped at this level inside the myopic
/// rule. Euler paths can graze zero even when the continuous process cannot;
/// without a guard the weight would blow up on those steps.
pub const MYOPIC_VARIANCE_GUARD: f64 = 1e-4;

/// Optimal constant weight for a GBM market under isoelastic utility:
/// `(mu - r) / (eta sigma^2)`.
pub fn merton_ratio_gbm(mu: f64, r: f64, sigma: f64, eta: f64) -> Result<f64> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    if eta.is_nan() || eta <= 0.0 {
        return Err(Error::invalid(format!(
            "eta must be > 0 (risk-neutral demand is unbounded), got {eta}"
        )));
    }
    Ok((mu - r) / (eta * sigma * sigma))
}

/// Log-utility optimal weight under stochastic volatility: `(mu - r) / y`.
pub fn myopic_weight_heston(mu: f64, r: f64, y: f64) -> Result<f64> {
    if y.is_nan() || y <= 0.0 {
        return Err(Error::invalid(format!("squared volatility must be > 0, got {y}")));
    }
    Ok((mu - r) / y)
}

/// A policy evaluable as a weight function of `(t, y)`.
#[derive(Debug, Clone)]
pub enum Policy {
    Constant { weight: f64 },
    AnalyticGbm { eta: f64 },
    MyopicHeston,
    Ann { params: PolicyParams },
}

impl Policy {
    /// Short label used in report rows and file names.
    pub fn label(&self) -> String {
        match self {
            Policy::Constant { weight } => format!("constant_{weight}"),
            Policy::AnalyticGbm { .. } => "analytic".into(),
            Policy::MyopicHeston => "myopic".into(),
            Policy::Ann { .. } => "ann".into(),
        }
    }

    /// Resolve against a market and grid into a plain weight function.
    pub fn bind<'a>(
        &'a self,
        market: &MarketParams,
        grid: &TimeGrid,
    ) -> Result<Box<dyn Fn(f64, f64) -> f64 + Sync + 'a>> {
        match self {
            Policy::Constant { weight } => {
                let w = *weight;
                Ok(Box::new(move |_, _| w))
            }
            Policy::AnalyticGbm { eta } => match market {
                MarketParams::Gbm(p) => {
                    let ratio = merton_ratio_gbm(p.mu, p.r, p.sigma, *eta)?;
                    Ok(Box::new(move |_, _| ratio))
                }
                MarketParams::Heston(_) => Err(Error::invalid(
                    "analytic constant weight requires a GBM market",
                )),
            },
            Policy::MyopicHeston => {
                let excess = market.drift() - market.riskless_rate();
                Ok(Box::new(move |_, y: f64| excess / y.max(MYOPIC_VARIANCE_GUARD)))
            }
            Policy::Ann { params } => {
                let horizon = grid.horizon();
                Ok(Box::new(move |t: f64, y: f64| params.forward(t / horizon, y)))
            }
        }
    }
}

/// Monte Carlo evaluation summary.
#[derive(Debug, Clone, Copy)]
pub struct EvalReport {
    pub mean_utility: f64,
    /// Sample standard deviation over replications divided by `sqrt(n_rep)`.
    pub std_error: f64,
    pub n_rep: usize,
    pub seed: u64,
    pub floor_events: u64,
}

fn report_from_utilities(utilities: &[f64], floor_events: u64, seed: u64) -> EvalReport {
    let n = utilities.len();
    let mean = utilities.iter().sum::<f64>() / n as f64;
    // Identical samples (deterministic wealth) give exactly zero error rather
    // than accumulated rounding noise.
    let all_equal = utilities.iter().all(|&u| u == utilities[0]);
    let std_error = if all_equal {
        0.0
    } else {
        let var = utilities.iter().map(|u| (u - mean) * (u - mean)).sum::<f64>() / (n as f64 - 1.0);
        (var / n as f64).sqrt()
    };
    EvalReport {
        mean_utility: mean,
        std_error,
        n_rep: n,
        seed,
        floor_events,
    }
}

/// Simulate `n_rep` paths under `policy` and report mean terminal utility
/// with its standard error. Deterministic given the seed.
pub fn evaluate_policy(
    policy: &Policy,
    market: &MarketParams,
    grid: &TimeGrid,
    utility: &UtilitySpec,
    n_rep: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_rep < 2 {
        return Err(Error::invalid("need at least 2 replications"));
    }
    let weight = policy.bind(market, grid)?;
    let batch = simulate_batch(market, grid, &weight, n_rep, seed, INITIAL_WEALTH);
    let utilities: Vec<f64> = batch
        .terminal_wealths
        .iter()
        .map(|&w| utility_on::<f64>(w, utility.eta))
        .collect();
    Ok(report_from_utilities(&utilities, batch.floor_events, seed))
}

/// Single-threaded variant of [`evaluate_policy`]; bit-identical.
pub fn evaluate_policy_sequential(
    policy: &Policy,
    market: &MarketParams,
    grid: &TimeGrid,
    utility: &UtilitySpec,
    n_rep: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_rep < 2 {
        return Err(Error::invalid("need at least 2 replications"));
    }
    let weight = policy.bind(market, grid)?;
    let batch =
        simulate_batch_sequential(market, grid, &weight, n_rep, seed, INITIAL_WEALTH);
    let utilities: Vec<f64> = batch
        .terminal_wealths
        .iter()
        .map(|&w| utility_on::<f64>(w, utility.eta))
        .collect();
    Ok(report_from_utilities(&utilities, batch.floor_events, seed))
}

/// Weight evaluated on the Cartesian product of the two grids.
pub fn weight_profile(
    policy: &Policy,
    market: &MarketParams,
    grid: &TimeGrid,
    t_grid: &[f64],
    y_grid: &[f64],
) -> Result<Vec<(f64, f64, f64)>> {
    if t_grid.is_empty() || y_grid.is_empty() {
        return Err(Error::invalid("profile grids must be non-empty"));
    }
    let weight = policy.bind(market, grid)?;
    let mut rows = Vec::with_capacity(t_grid.len() * y_grid.len());
    for &t in t_grid {
        for &y in y_grid {
            rows.push((t, y, weight(t, y)));
        }
    }
    Ok(rows)
}

/// Policy weight averaged over `points` equispaced times in `[0, horizon]`
/// at fixed squared volatility `y`.
pub fn time_averaged_weight(
    policy: &Policy,
    market: &MarketParams,
    grid: &TimeGrid,
    points: usize,
    y: f64,
) -> Result<f64> {
    if points < 2 {
        return Err(Error::invalid("need at least 2 time points"));
    }
    let weight = policy.bind(market, grid)?;
    let h = grid.horizon() / (points - 1) as f64;
    let sum: f64 = (0..points).map(|i| weight(i as f64 * h, y)).sum();
    Ok(sum / points as f64)
}

/// `n` equispaced values covering `[lo, hi]` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + i as f64 * h).collect()
}

/// Average over paths of the per-path `[2.5%, 97.5%]` empirical quantiles of
/// the squared-volatility trajectory; the typical band the process occupies.
pub fn variance_band(
    market: &MarketParams,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_paths == 0 {
        return Err(Error::invalid("need at least one path"));
    }
    let traces = simulate_traces(market, grid, |_, _| 0.0, n_paths, seed, 1.0, 1.0);
    let mut lo_sum = 0.0;
    let mut hi_sum = 0.0;
    for trace in &traces {
        let mut ys: Vec<f64> = trace.points.iter().map(|p| p.y.max(0.0)).collect();
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lo_sum += quantile_sorted(&ys, 0.025);
        hi_sum += quantile_sorted(&ys, 0.975);
    }
    Ok((lo_sum / n_paths as f64, hi_sum / n_paths as f64))
}

/// Linear-interpolation empirical quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Wealth trajectories for each policy on common noise, for side-by-side
/// comparison plots.
pub fn wealth_paths(
    policies: &[Policy],
    market: &MarketParams,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    s0: f64,
) -> Result<Vec<(String, Vec<PathTrace>)>> {
    if n_paths == 0 {
        return Err(Error::invalid("need at least one path"));
    }
    let mut out = Vec::with_capacity(policies.len());
    for policy in policies {
        let weight = policy.bind(market, grid)?;
        let traces =
            simulate_traces(market, grid, &weight, n_paths, seed, INITIAL_WEALTH, s0);
        out.push((policy.label(), traces));
    }
    Ok(out)
}

/// One row of the utility-comparison table.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub policy: String,
    pub eta_inv: f64,
    pub report: EvalReport,
}

/// `policy,eta_inv,mean,stderr,n_rep,seed`, optionally preceded by a comment.
pub fn write_report_csv<W: Write>(mut out: W, comment: Option<&str>, rows: &[ReportRow]) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "policy,eta_inv,mean,stderr,n_rep,seed")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.policy,
            row.eta_inv,
            row.report.mean_utility,
            row.report.std_error,
            row.report.n_rep,
            row.report.seed
        )?;
    }
    Ok(())
}

/// `t,y,pi` rows.
pub fn write_profile_csv<W: Write>(
    mut out: W,
    comment: Option<&str>,
    rows: &[(f64, f64, f64)],
) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "t,y,pi")?;
    for (t, y, pi) in rows {
        writeln!(out, "{t},{y},{pi}")?;
    }
    Ok(())
}

/// `policy,path,step,t,W` rows.
pub fn write_wealth_csv<W: Write>(
    mut out: W,
    comment: Option<&str>,
    groups: &[(String, Vec<PathTrace>)],
) -> std::io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "policy,path,step,t,W")?;
    for (label, traces) in groups {
        for (i, trace) in traces.iter().enumerate() {
            for p in &trace.points {
                writeln!(out, "{label},{i},{},{},{}", p.step, p.t, p.w)?;
            }
        }
    }
    Ok(())
}

/// Minimal gnuplot companion for a profile CSV.
pub fn write_profile_plot<W: Write>(mut out: W, csv_name: &str) -> std::io::Result<()> {
    writeln!(out, "set datafile separator ','")?;
    writeln!(out, "set datafile commentschars '#'")?;
    writeln!(out, "set key autotitle columnhead")?;
    writeln!(out, "set xlabel 't (years)'")?;
    writeln!(out, "set ylabel 'stock weight'")?;
    writeln!(out, "plot '{csv_name}' using 1:3 with lines title 'pi vs t'")?;
    writeln!(out, "# For volatility profiles plot column 2 instead:")?;
    writeln!(out, "# plot '{csv_name}' using 2:3 with lines title 'pi vs y'")?;
    Ok(())
}

/// Minimal gnuplot companion for a report CSV.
pub fn write_report_plot<W: Write>(mut out: W, csv_name: &str) -> std::io::Result<()> {
    writeln!(out, "set datafile separator ','")?;
    writeln!(out, "set datafile commentschars '#'")?;
    writeln!(out, "set key autotitle columnhead")?;
    writeln!(out, "set xlabel '1/eta'")?;
    writeln!(out, "set ylabel 'mean terminal utility'")?;
    writeln!(
        out,
        "plot '{csv_name}' using 2:3:4 with yerrorbars title 'mean +/- stderr'"
    )?;
    Ok(())
}

/// Minimal gnuplot companion for a wealth CSV.
pub fn write_wealth_plot<W: Write>(mut out: W, csv_name: &str) -> std::io::Result<()> {
    writeln!(out, "set datafile separator ','")?;
    writeln!(out, "set datafile commentschars '#'")?;
    writeln!(out, "set xlabel 't (years)'")?;
    writeln!(out, "set ylabel 'wealth'")?;
    writeln!(
        out,
        "plot '{csv_name}' using 4:5 with dots title 'wealth paths'"
    )?;
    Ok(())
}
