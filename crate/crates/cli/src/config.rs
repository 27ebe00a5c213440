//! Experiment configuration: one TOML file drives every command.
//!
//! Unknown keys are rejected and every section is validated before any
//! simulation starts. The schema is documented in the repository README and
//! mirrored by the sample files under `configs/`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use mertopt_core::calibrate::{calibrate_gbm, calibrate_heston, load_price_csv, load_vix_csv};
use mertopt_core::policy::Architecture;
use mertopt_core::train::{TrainingPhase, TrainingSchedule};
use mertopt_core::{MarketParams, TimeGrid, UtilitySpec};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSection,
    pub grid: GridSection,
    #[serde(default)]
    pub policy: PolicySection,
    pub utility: UtilitySection,
    #[serde(default)]
    pub schedule: Vec<PhaseSection>,
    pub run: RunSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: String,
    pub r: f64,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub kappa: Option<f64>,
    pub theta: Option<f64>,
    pub sigma_y: Option<f64>,
    pub rho: Option<f64>,
    pub y0: Option<f64>,
    /// Initial risky price; only affects trajectory exports.
    pub s0: Option<f64>,
    /// Calibration inputs, used when inline parameters are absent.
    pub prices_csv: Option<PathBuf>,
    pub vix_csv: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_sigma_init")]
    pub sigma_init: f64,
}

fn default_hidden() -> Vec<usize> {
    vec![3]
}

fn default_sigma_init() -> f64 {
    0.1
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            hidden: default_hidden(),
            sigma_init: default_sigma_init(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilitySection {
    pub etas: Option<Vec<f64>>,
    /// Convenience alternative: specify the grid in 1/eta.
    pub eta_inverses: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    pub steps: usize,
    pub batch: usize,
    pub step_size: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default = "default_eval_reps")]
    pub eval_reps: usize,
    /// Optimizer steps between periodic checkpoints; 0 disables them.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_eval_reps() -> usize {
    10_000
}

/// Fully validated configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub market: MarketParams,
    pub s0: f64,
    pub grid: TimeGrid,
    pub arch: Architecture,
    pub sigma_init: f64,
    pub etas: Vec<f64>,
    pub schedule: Option<TrainingSchedule>,
    pub seed: u64,
    pub out: PathBuf,
    pub eval_reps: usize,
    pub checkpoint_every: usize,
    /// Hex digest of the config file bytes, embedded in every output.
    pub config_hash: String,
    pub prices_csv: Option<PathBuf>,
    pub vix_csv: Option<PathBuf>,
    pub r: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let text = String::from_utf8(bytes.clone()).context("config file is not UTF-8")?;
        let file: ConfigFile = toml::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        Experiment::from_file(file, sha256_hex(&bytes), path)
    }

    fn from_file(file: ConfigFile, config_hash: String, config_path: &Path) -> Result<Self> {
        let grid = TimeGrid::new(file.grid.horizon, file.grid.steps)?;
        let arch = Architecture::with_hidden(&file.policy.hidden)?;
        if file.policy.sigma_init.is_nan() || file.policy.sigma_init < 0.0 {
            bail!("policy.sigma_init must be >= 0");
        }

        let etas = match (&file.utility.etas, &file.utility.eta_inverses) {
            (Some(_), Some(_)) => bail!("specify utility.etas or utility.eta_inverses, not both"),
            (Some(etas), None) => etas.clone(),
            (None, Some(invs)) => {
                if invs.iter().any(|&x| x.is_nan() || x <= 0.0) {
                    bail!("utility.eta_inverses must be positive");
                }
                invs.iter().map(|x| 1.0 / x).collect()
            }
            (None, None) => bail!("utility section needs etas or eta_inverses"),
        };
        if etas.is_empty() {
            bail!("utility list must be non-empty");
        }
        for &eta in &etas {
            UtilitySpec::new(eta)?;
        }

        let schedule = if file.schedule.is_empty() {
            None
        } else {
            Some(TrainingSchedule::new(
                file.schedule
                    .iter()
                    .map(|p| TrainingPhase {
                        steps: p.steps,
                        batch: p.batch,
                        step_size: p.step_size,
                    })
                    .collect(),
            )?)
        };

        // Calibration paths are interpreted relative to the config file.
        let base = config_path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &PathBuf| {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        let prices_csv = file.model.prices_csv.as_ref().map(&resolve);
        let vix_csv = file.model.vix_csv.as_ref().map(&resolve);

        let m = &file.model;
        let market = match m.kind.as_str() {
            "gbm" => match (m.mu, m.sigma) {
                (Some(mu), Some(sigma)) => Some(MarketParams::gbm(m.r, mu, sigma)?),
                (None, None) => None,
                _ => bail!("GBM needs both model.mu and model.sigma (or neither, with prices_csv)"),
            },
            "heston" => {
                let inline = [m.mu, m.kappa, m.theta, m.sigma_y, m.rho, m.y0];
                if inline.iter().all(Option::is_some) {
                    Some(MarketParams::heston(
                        m.r,
                        m.mu.unwrap(),
                        m.kappa.unwrap(),
                        m.theta.unwrap(),
                        m.sigma_y.unwrap(),
                        m.rho.unwrap(),
                        m.y0.unwrap(),
                    )?)
                } else if inline.iter().all(Option::is_none) {
                    None
                } else {
                    bail!("Heston needs all of mu, kappa, theta, sigma_y, rho, y0 (or none, with prices_csv + vix_csv)");
                }
            }
            other => bail!("model.kind must be \"gbm\" or \"heston\", got {other:?}"),
        };

        let (market, s0) = match market {
            Some(market) => (market, m.s0.unwrap_or(1.0)),
            None => {
                // Calibrate on the fly from the referenced data files.
                let prices_path = prices_csv
                    .as_ref()
                    .ok_or_else(|| anyhow::anyhow!("model has neither parameters nor prices_csv"))?;
                let prices = load_price_csv(prices_path)?;
                let s0 = m.s0.or(prices.last_price()).unwrap_or(1.0);
                let market = match m.kind.as_str() {
                    "gbm" => calibrate_gbm(&prices)?.to_market(m.r)?,
                    _ => {
                        let vix_path = vix_csv.as_ref().ok_or_else(|| {
                            anyhow::anyhow!("heston calibration needs model.vix_csv")
                        })?;
                        let vars = load_vix_csv(vix_path)?;
                        calibrate_heston(&prices, &vars)?.to_market(m.r)?
                    }
                };
                (market, s0)
            }
        };

        if file.run.eval_reps < 2 {
            bail!("run.eval_reps must be at least 2");
        }

        Ok(Experiment {
            market,
            s0,
            grid,
            arch,
            sigma_init: file.policy.sigma_init,
            etas,
            schedule,
            seed: file.run.seed,
            out: file.run.out.clone(),
            eval_reps: file.run.eval_reps,
            checkpoint_every: file.run.checkpoint_every,
            config_hash,
            prices_csv,
            vix_csv,
            r: file.model.r,
        })
    }

    /// Training schedule, or an error naming the gap.
    pub fn schedule(&self) -> Result<&TrainingSchedule> {
        self.schedule
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("config has no [[schedule]] phases; training needs at least one"))
    }

    /// Label used in per-eta file names.
    pub fn eta_label(eta: f64) -> String {
        format!("{eta:.6}")
    }
}

/// Parse a grid spec: either `lo:hi:count` or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    if spec.is_empty() {
        bail!("empty grid spec");
    }
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            bail!("range spec must be lo:hi:count, got {spec:?}");
        }
        let lo: f64 = parts[0].trim().parse().context("bad range start")?;
        let hi: f64 = parts[1].trim().parse().context("bad range end")?;
        let count: usize = parts[2].trim().parse().context("bad range count")?;
        if count == 0 {
            bail!("range count must be positive");
        }
        Ok(mertopt_core::eval::linspace(lo, hi, count))
    } else {
        spec.split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad grid value {tok:?}"))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("config.toml");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    const GBM: &str = r#"
[model]
kind = "gbm"
r = 0.05
mu = 0.085
sigma = 0.176

[grid]
horizon = 1.0
steps = 252

[utility]
etas = [1.0]

[[schedule]]
steps = 10
batch = 5
step_size = 0.05

[run]
seed = 42
out = "runs/test"
"#;

    #[test]
    fn loads_minimal_gbm_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), GBM);
        let exp = Experiment::load(&path).unwrap();
        assert!(matches!(exp.market, MarketParams::Gbm(_)));
        assert_eq!(exp.etas, vec![1.0]);
        assert_eq!(exp.schedule.unwrap().total_steps(), 10);
        assert_eq!(exp.config_hash.len(), 16);
    }

    #[test]
    fn rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), &format!("{GBM}\n[extra]\nx = 1\n"));
        assert!(Experiment::load(&path).is_err());
        let path = write_config(dir.path(), &GBM.replace("sigma = 0.176", "sigma = 0.176\nvol = 2"));
        assert!(Experiment::load(&path).is_err());
    }

    #[test]
    fn eta_inverses_convert() {
        let dir = tempfile::tempdir().unwrap();
        let body = GBM.replace("etas = [1.0]", "eta_inverses = [0.25, 0.5, 1.0]");
        let exp = Experiment::load(&write_config(dir.path(), &body)).unwrap();
        assert_eq!(exp.etas, vec![4.0, 2.0, 1.0]);
    }

    #[test]
    fn missing_schedule_is_fine_until_training() {
        let dir = tempfile::tempdir().unwrap();
        let body = GBM
            .lines()
            .take_while(|l| !l.starts_with("[[schedule]]"))
            .chain(["[run]", "seed = 1", "out = \"x\""])
            .collect::<Vec<_>>()
            .join("\n");
        let exp = Experiment::load(&write_config(dir.path(), &body)).unwrap();
        assert!(exp.schedule.is_none());
        assert!(exp.schedule().is_err());
    }

    #[test]
    fn heston_requires_all_fields() {
        let dir = tempfile::tempdir().unwrap();
        let body = GBM
            .replace("kind = \"gbm\"", "kind = \"heston\"")
            .replace("sigma = 0.176", "kappa = 10.5");
        assert!(Experiment::load(&write_config(dir.path(), &body)).is_err());
    }

    #[test]
    fn grid_specs_parse() {
        assert_eq!(parse_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("0.02, 0.0438, 0.08").unwrap(), vec![0.02, 0.0438, 0.08]);
        assert_eq!(parse_grid("1.5").unwrap(), vec![1.5]);
        assert!(parse_grid("").is_err());
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("a,b").is_err());
    }
}
