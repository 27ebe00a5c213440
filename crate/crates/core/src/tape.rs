//! Reverse-mode automatic differentiation on a scalar tape.
//!
//! A [`Tape`] records one node per arithmetic operation: the indices of its
//! parents and the local partial derivatives, precomputed during the forward
//! pass. [`Tape::gradient`] then runs a single backward sweep, accumulating
//! adjoints from the output down to the leaves. Inputs pushed first (the
//! policy parameters) occupy indices `0..n`, so their adjoints are the
//! gradient.
//!
//! Tapes are cheap, single-threaded objects; batch code builds one tape per
//! simulated path and averages the per-path gradients afterwards.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Sub};

use crate::scalar::Scalar;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(nodes)),
        }
    }

    /// Push a leaf variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(0, 0.0, 0, 0.0);
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    fn push(&self, p0: u32, d0: f64, p1: u32, d1: f64) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node {
            parents: [p0, p1],
            partials: [d0, d1],
        });
        idx
    }

    fn unary(&self, parent: u32, partial: f64, value: f64) -> Var<'_> {
        let idx = self.push(parent, partial, parent, 0.0);
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    fn binary(&self, p0: u32, d0: f64, p1: u32, d1: f64, value: f64) -> Var<'_> {
        let idx = self.push(p0, d0, p1, d1);
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    /// Adjoints of the first `n_inputs` tape entries with respect to `output`.
    pub fn gradient(&self, output: Var<'_>, n_inputs: usize) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        adjoint[output.idx as usize] = 1.0;
        for i in (0..nodes.len()).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            adjoint[node.parents[0] as usize] += a * node.partials[0];
            adjoint[node.parents[1] as usize] += a * node.partials[1];
        }
        adjoint.truncate(n_inputs);
        adjoint
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn add(self, rhs: Self) -> Var<'t> {
        self.tape
            .binary(self.idx, 1.0, rhs.idx, 1.0, self.val + rhs.val)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn mul(self, rhs: Self) -> Var<'t> {
        self.tape
            .binary(self.idx, rhs.val, rhs.idx, self.val, self.val * rhs.val)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn add(self, c: f64) -> Var<'t> {
        self.tape.unary(self.idx, 1.0, self.val + c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn sub(self, c: f64) -> Var<'t> {
        self.tape.unary(self.idx, 1.0, self.val - c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn mul(self, c: f64) -> Var<'t> {
        self.tape.unary(self.idx, c, self.val * c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn div(self, c: f64) -> Var<'t> {
        self.tape.unary(self.idx, 1.0 / c, self.val / c)
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    #[inline]
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.tape.unary(rhs.idx, -1.0, self - rhs.val)
    }
}

impl<'t> Scalar for Var<'t> {
    #[inline]
    fn value(self) -> f64 {
        self.val
    }

    #[inline]
    fn exp(self) -> Self {
        let v = f64::exp(self.val);
        self.tape.unary(self.idx, v, v)
    }

    #[inline]
    fn ln(self) -> Self {
        self.tape.unary(self.idx, 1.0 / self.val, f64::ln(self.val))
    }

    #[inline]
    fn silu(self) -> Self {
        // Same expression as the f64 instance so values agree bit-for-bit.
        let v = self.val / (1.0 + f64::exp(-self.val));
        let sigmoid = 1.0 / (1.0 + f64::exp(-self.val));
        let partial = sigmoid * (1.0 + self.val * (1.0 - sigmoid));
        self.tape.unary(self.idx, partial, v)
    }

    #[inline]
    fn pow_const(self, e: f64) -> Self {
        let v = self.val.powf(e);
        self.tape
            .unary(self.idx, e * self.val.powf(e - 1.0), v)
    }

    #[inline]
    fn clamp_min(self, floor: f64) -> Self {
        if self.val < floor {
            self.tape.unary(self.idx, 0.0, floor)
        } else {
            self.tape.unary(self.idx, 1.0, self.val)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad1(f: impl for<'t> Fn(Var<'t>) -> Var<'t>, x: f64) -> (f64, f64) {
        let tape = Tape::new();
        let v = tape.var(x);
        let out = f(v);
        let g = tape.gradient(out, 1);
        (out.value(), g[0])
    }

    #[test]
    fn product_rule() {
        let (val, grad) = grad1(|x| x * x, 3.0);
        assert_eq!(val, 9.0);
        assert_eq!(grad, 6.0);
    }

    #[test]
    fn fan_out_accumulates() {
        // f(x) = x*x + x, f'(x) = 2x + 1
        let (val, grad) = grad1(|x| x * x + x, 3.0);
        assert_eq!(val, 12.0);
        assert_eq!(grad, 7.0);
    }

    #[test]
    fn transcendental_chain() {
        // f(x) = exp(ln(x) * 2) = x^2
        let (val, grad) = grad1(|x| (x.ln() * 2.0).exp(), 5.0);
        assert!((val - 25.0).abs() < 1e-12);
        assert!((grad - 10.0).abs() < 1e-12);
    }

    #[test]
    fn constant_minus_var() {
        let (val, grad) = grad1(|x| (1.0 - x) * 3.0, 0.25);
        assert_eq!(val, 2.25);
        assert_eq!(grad, -3.0);
    }

    #[test]
    fn silu_derivative_matches_finite_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let (_, grad) = grad1(|v| v.silu(), x);
            let h = 1e-6;
            let fd = (Scalar::silu(x + h) - Scalar::silu(x - h)) / (2.0 * h);
            assert!((grad - fd).abs() < 1e-8, "x={x}: {grad} vs {fd}");
        }
    }

    #[test]
    fn clamp_kills_gradient_below_floor() {
        let (val, grad) = grad1(|x| (x * 2.0).clamp_min(1.0), 0.25);
        assert_eq!(val, 1.0);
        assert_eq!(grad, 0.0);
        let (val, grad) = grad1(|x| (x * 2.0).clamp_min(1.0), 2.0);
        assert_eq!(val, 4.0);
        assert_eq!(grad, 2.0);
    }

    #[test]
    fn multi_input_gradient() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = tape.var(4.0);
        let out = x * y + x; // df/dx = y + 1, df/dy = x
        let g = tape.gradient(out, 2);
        assert_eq!(g, vec![5.0, 3.0]);
    }

    #[test]
    fn values_match_plain_f64() {
        let expr_f64 = {
            let x = 0.37_f64;
            ((1.0 - x) * 0.2 + x * 0.05 + 1.0).ln()
        };
        let tape = Tape::new();
        let x = tape.var(0.37);
        let expr_var = ((1.0 - x) * 0.2 + x * 0.05 + 1.0).ln();
        assert_eq!(expr_f64, expr_var.value());
    }
}
