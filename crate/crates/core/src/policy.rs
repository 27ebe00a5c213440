//! Feed-forward policy network mapping `(t, y)` to a stock weight.
//!
//! Hidden layers use SiLU activations; the output layer is linear so weights
//! may exceed one or go negative (borrowing and short selling). Parameters
//! are stored flat, layer by layer, each layer as row-major weights followed
//! by biases. That order is the checkpoint format and the gradient layout.

use crate::error::{Error, Result};
use crate::rng::Normals;
use crate::scalar::Scalar;

/// Layer widths from input to output. The input is always `(t, y)` (width 2)
/// and the output a single weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    widths: Vec<usize>,
}

impl Architecture {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("architecture needs at least two layers"));
        }
        if widths[0] != 2 {
            return Err(Error::invalid("input width must be 2"));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::invalid("output width must be 1"));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(Architecture { widths })
    }

    /// `[2, hidden..., 1]`.
    pub fn with_hidden(hidden: &[usize]) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(2);
        widths.extend_from_slice(hidden);
        widths.push(1);
        Architecture::new(widths)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn hidden(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    /// Total number of weights and biases.
    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Flat parameter vector paired with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    arch: Architecture,
    values: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.param_count();
        PolicyParams {
            arch,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters for {:?}, got {}",
                arch.param_count(),
                arch.widths(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(PolicyParams { arch, values })
    }

    /// i.i.d. normal initialization with standard deviation `sigma_init`.
    /// Small values keep the initial policy close to all-cash.
    pub fn init(arch: Architecture, sigma_init: f64, seed: u64) -> Result<Self> {
        if !sigma_init.is_finite() || sigma_init < 0.0 {
            return Err(Error::invalid(format!(
                "sigma_init must be >= 0, got {sigma_init}"
            )));
        }
        let n = arch.param_count();
        let values = Normals::new(seed).take(n).map(|z| sigma_init * z).collect();
        Ok(PolicyParams { arch, values })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    /// Network output for inputs `(t_in, y_in)`. Callers feed normalized
    /// time `t/T` and raw squared volatility.
    pub fn forward(&self, t_in: f64, y_in: f64) -> f64 {
        forward_on::<f64>(&self.arch, &self.values, t_in, y_in)
    }
}

/// `x / (1 + e^{-x})`.
pub fn silu(x: f64) -> f64 {
    Scalar::silu(x)
}

/// Forward pass over any scalar kind; `theta` follows the flat layout of
/// [`PolicyParams`].
pub(crate) fn forward_on<S: Scalar>(arch: &Architecture, theta: &[S], t: f64, y: f64) -> S {
    debug_assert_eq!(theta.len(), arch.param_count());
    let widths = arch.widths();
    let depth = widths.len() - 1;

    // First layer reads the two plain inputs.
    let n_out = widths[1];
    let mut offset = 0;
    let mut acts: Vec<S> = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let w = &theta[offset + 2 * i..offset + 2 * i + 2];
        let mut pre = w[0] * t;
        pre = pre + w[1] * y;
        pre = pre + theta[offset + 2 * n_out + i];
        acts.push(if depth == 1 { pre } else { pre.silu() });
    }
    offset += 2 * n_out + n_out;

    for layer in 2..=depth {
        let n_in = widths[layer - 1];
        let n_out = widths[layer];
        let last = layer == depth;
        let mut next: Vec<S> = Vec::with_capacity(n_out);
        for i in 0..n_out {
            let row = offset + n_in * i;
            let mut acc = theta[row] * acts[0];
            for k in 1..n_in {
                acc = acc + theta[row + k] * acts[k];
            }
            acc = acc + theta[offset + n_in * n_out + i];
            next.push(if last { acc } else { acc.silu() });
        }
        offset += n_in * n_out + n_out;
        acts = next;
    }
    acts[0]
}
