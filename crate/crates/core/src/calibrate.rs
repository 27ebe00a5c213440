//! Parameter estimation from daily price and volatility-index data.
//!
//! GBM parameters come from closed-form maximum likelihood on log returns.
//! The square-root variance process is fitted by weighted least squares on
//! the one-step regression `dY = kappa*theta*dt - kappa*Y*dt + noise` with
//! inverse-conditional-variance weights `1/(Y dt)`; the vol-of-vol is the
//! weighted residual standard deviation and the correlation is the sample
//! correlation of the standardized stock and variance residuals.
//!
//! Daily observations are assumed: the observation step is fixed at 1/252
//! years and outputs are annualized. Missing dates are never interpolated.

use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::market::{check_feller, MarketParams};

/// Observation step for daily data, in years.
pub const OBSERVATION_DT: f64 = 1.0 / 252.0;

/// Minimum observations accepted by the estimators.
pub const MIN_OBSERVATIONS: usize = 30;

/// Date-ordered adjusted closing prices.
#[derive(Debug, Clone)]
pub struct PriceSeries {
    rows: Vec<(NaiveDate, f64)>,
}

impl PriceSeries {
    pub fn from_rows(rows: Vec<(NaiveDate, f64)>) -> Result<Self> {
        for window in rows.windows(2) {
            if window[1].0 <= window[0].0 {
                return Err(Error::invalid(format!(
                    "dates must be strictly increasing: {} then {}",
                    window[0].0, window[1].0
                )));
            }
        }
        if let Some((date, price)) = rows.iter().find(|(_, p)| p.is_nan() || *p <= 0.0) {
            return Err(Error::invalid(format!("non-positive price {price} on {date}")));
        }
        Ok(PriceSeries { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn prices(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|(_, p)| *p)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.rows.iter().map(|(d, _)| *d)
    }

    pub fn last_price(&self) -> Option<f64> {
        self.rows.last().map(|(_, p)| *p)
    }
}

/// Date-ordered squared volatility derived from a volatility index.
#[derive(Debug, Clone)]
pub struct VarianceSeries {
    rows: Vec<(NaiveDate, f64)>,
}

impl VarianceSeries {
    pub fn from_rows(rows: Vec<(NaiveDate, f64)>) -> Result<Self> {
        for window in rows.windows(2) {
            if window[1].0 <= window[0].0 {
                return Err(Error::invalid(format!(
                    "dates must be strictly increasing: {} then {}",
                    window[0].0, window[1].0
                )));
            }
        }
        if let Some((date, y)) = rows.iter().find(|(_, y)| y.is_nan() || *y < 0.0) {
            return Err(Error::invalid(format!("negative variance {y} on {date}")));
        }
        Ok(VarianceSeries { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn variances(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|(_, y)| *y)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.rows.iter().map(|(d, _)| *d)
    }

    pub fn last_variance(&self) -> Option<f64> {
        self.rows.last().map(|(_, y)| *y)
    }
}

/// Index quote (e.g. 12.45 points) to annualized squared volatility.
pub fn vix_to_variance(quote: f64) -> Result<f64> {
    if !quote.is_finite() || quote < 0.0 {
        return Err(Error::invalid(format!("index quote must be >= 0, got {quote}")));
    }
    let v = quote / 100.0;
    Ok(v * v)
}

fn read_csv_rows(path: &Path, value_column: &str) -> Result<Vec<(NaiveDate, f64)>> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::invalid(format!("cannot open {display}: {e}")),
            _ => Error::Malformed {
                path: display.clone(),
                line: 1,
                msg: e.to_string(),
            },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Malformed {
            path: display.clone(),
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let expected = ["date", value_column];
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::Malformed {
            path: display,
            line: 1,
            msg: format!("expected header `date,{value_column}`, got `{}`", got.join(",")),
        });
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Malformed {
            path: display.clone(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 2 {
            return Err(Error::Malformed {
                path: display.clone(),
                line,
                msg: format!("expected 2 fields, got {}", record.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| Error::Malformed {
            path: display.clone(),
            line,
            msg: format!("bad date {:?}: {e}", &record[0]),
        })?;
        let value: f64 = record[1].parse().map_err(|e| Error::Malformed {
            path: display.clone(),
            line,
            msg: format!("bad value {:?}: {e}", &record[1]),
        })?;
        rows.push((date, value, line));
    }
    rows.sort_by_key(|(d, _, _)| *d);
    // Surface the offending line for validation failures.
    for window in rows.windows(2) {
        if window[1].0 == window[0].0 {
            return Err(Error::Malformed {
                path: display.clone(),
                line: window[1].2,
                msg: format!("duplicate date {}", window[1].0),
            });
        }
    }
    Ok(rows.into_iter().map(|(d, v, _)| (d, v)).collect())
}

/// Load `date,adj_close` rows, validate and sort by date.
pub fn load_price_csv(path: &Path) -> Result<PriceSeries> {
    let rows = read_csv_rows(path, "adj_close")?;
    let display = path.display().to_string();
    for (i, (date, price)) in rows.iter().enumerate() {
        if price.is_nan() || *price <= 0.0 {
            return Err(Error::Malformed {
                path: display,
                // +2: one header line, one-based data rows.
                line: (i + 2) as u64,
                msg: format!("non-positive price {price} on {date}"),
            });
        }
    }
    PriceSeries::from_rows(rows)
}

/// Load `date,vix_close` rows and convert quotes to squared volatility.
pub fn load_vix_csv(path: &Path) -> Result<VarianceSeries> {
    let rows = read_csv_rows(path, "vix_close")?;
    let display = path.display().to_string();
    let mut converted = Vec::with_capacity(rows.len());
    for (i, (date, quote)) in rows.into_iter().enumerate() {
        let y = vix_to_variance(quote).map_err(|e| Error::Malformed {
            path: display.clone(),
            line: (i + 2) as u64,
            msg: e.to_string(),
        })?;
        converted.push((date, y));
    }
    VarianceSeries::from_rows(converted)
}

/// Annualized GBM estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbmEstimate {
    pub mu: f64,
    pub sigma: f64,
    pub n_obs: usize,
}

impl GbmEstimate {
    pub fn to_market(&self, r: f64) -> Result<MarketParams> {
        MarketParams::gbm(r, self.mu, self.sigma)
    }
}

/// Closed-form MLE on log returns; the drift includes the `sigma^2/2`
/// correction so it is the arithmetic drift of the price equation.
pub fn calibrate_gbm(series: &PriceSeries) -> Result<GbmEstimate> {
    if series.len() < MIN_OBSERVATIONS {
        return Err(Error::invalid(format!(
            "need at least {MIN_OBSERVATIONS} observations, got {}",
            series.len()
        )));
    }
    let prices: Vec<f64> = series.prices().collect();
    let returns: Vec<f64> = prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let sigma_sq = var / OBSERVATION_DT;
    Ok(GbmEstimate {
        mu: mean / OBSERVATION_DT + sigma_sq / 2.0,
        sigma: sigma_sq.sqrt(),
        n_obs: series.len(),
    })
}

/// Annualized square-root-process estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HestonEstimate {
    pub mu: f64,
    pub kappa: f64,
    pub theta: f64,
    pub sigma_y: f64,
    pub rho: f64,
    /// Final observed squared volatility, the natural simulation start.
    pub y0: f64,
    pub feller: bool,
    pub n_obs: usize,
}

impl HestonEstimate {
    pub fn to_market(&self, r: f64) -> Result<MarketParams> {
        MarketParams::heston(r, self.mu, self.kappa, self.theta, self.sigma_y, self.rho, self.y0)
    }
}

/// Weighted least squares on the discretized variance dynamics plus moment
/// estimates for drift and correlation.
pub fn calibrate_heston(prices: &PriceSeries, variances: &VarianceSeries) -> Result<HestonEstimate> {
    if prices.len() != variances.len() {
        return Err(Error::invalid(format!(
            "series must be aligned: {} prices vs {} variances",
            prices.len(),
            variances.len()
        )));
    }
    if prices.len() < MIN_OBSERVATIONS {
        return Err(Error::invalid(format!(
            "need at least {MIN_OBSERVATIONS} observations, got {}",
            prices.len()
        )));
    }
    for (dp, dv) in prices.dates().zip(variances.dates()) {
        if dp != dv {
            return Err(Error::invalid(format!(
                "date mismatch between series: {dp} vs {dv}"
            )));
        }
    }

    let dt = OBSERVATION_DT;
    let p: Vec<f64> = prices.prices().collect();
    let y: Vec<f64> = variances.variances().collect();
    let n = p.len() - 1;
    if let Some(i) = y[..n].iter().position(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::Degenerate(format!(
            "variance must be strictly positive for weighting (index {i})"
        )));
    }

    // WLS of dY on Y with intercept, weights 1/(Y dt).
    let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..n {
        let w = 1.0 / (y[k] * dt);
        let dy = y[k + 1] - y[k];
        sw += w;
        swx += w * y[k];
        swy += w * dy;
        swxx += w * y[k] * y[k];
        swxy += w * y[k] * dy;
    }
    let denom = sw * swxx - swx * swx;
    let scale = sw * swxx;
    if !denom.is_finite() || denom.abs() <= 1e-12 * scale.max(1.0) {
        return Err(Error::Degenerate(
            "variance series is (numerically) constant; kappa is unidentifiable".into(),
        ));
    }
    let slope = (sw * swxy - swx * swy) / denom;
    let intercept = (swy - slope * swx) / sw;
    let kappa = -slope / dt;
    let theta = if slope.abs() > 0.0 { -intercept / slope } else { f64::NAN };

    // Weighted residual standard deviation estimates the vol-of-vol;
    // two regression parameters are consumed.
    let mut weighted_rss = 0.0;
    let mut var_resid = Vec::with_capacity(n);
    for k in 0..n {
        let e = y[k + 1] - y[k] - (intercept + slope * y[k]);
        let standardized = e / (y[k] * dt).sqrt();
        weighted_rss += standardized * standardized;
        var_resid.push(standardized);
    }
    let sigma_y = (weighted_rss / (n as f64 - 2.0)).sqrt();

    // Drift from mean simple returns; correlation from standardized residuals.
    let simple_returns: Vec<f64> = p.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let mu = simple_returns.iter().sum::<f64>() / n as f64 / dt;
    let stock_resid: Vec<f64> = simple_returns
        .iter()
        .enumerate()
        .map(|(k, ret)| (ret - mu * dt) / (y[k] * dt).sqrt())
        .collect();
    let rho = sample_correlation(&stock_resid, &var_resid)?;

    let estimate = HestonEstimate {
        mu,
        kappa,
        theta,
        sigma_y,
        rho,
        y0: variances.last_variance().expect("non-empty"),
        feller: false,
        n_obs: prices.len(),
    };
    let feller = estimate
        .to_market(0.0)
        .ok()
        .map(|m| check_feller(&m).unwrap_or(false))
        .unwrap_or(false);
    Ok(HestonEstimate { feller, ..estimate })
}

fn sample_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
        sab += (x - ma) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("residuals have zero variance".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}
