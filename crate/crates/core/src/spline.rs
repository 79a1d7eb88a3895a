//! Natural cubic spline with analytic first derivative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivative at each node; zero at both ends.
    m: Vec<f64>,
}

impl CubicSpline {
    /// Interpolates `(x_i, y_i)` with zero second derivative at both ends.
    /// Nodes must be strictly increasing; two nodes give the straight line.
    pub fn natural(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::InvalidParameter(format!(
                "spline needs at least two nodes and matching values ({} x, {} y)",
                n,
                y.len()
            )));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "spline nodes must be strictly increasing".into(),
            ));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spline data"));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior nodes
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                let h0 = x[i + 1] - x[i];
                let h1 = x[i + 2] - x[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..k {
                let lower = x[i + 1] - x[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self { x, y, m })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn second_derivatives(&self) -> &[f64] {
        &self.m
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.partition_point(|&xi| xi <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        }
    }

    /// Value and derivative at `t`. Outside the node range the endpoint value
    /// is returned with zero slope and the flag set.
    pub fn eval_with_derivative(&self, t: f64) -> (f64, f64, bool) {
        let (lo, hi) = self.domain();
        if t < lo {
            return (self.y[0], 0.0, true);
        }
        if t > hi {
            return (self.y[self.y.len() - 1], 0.0, true);
        }
        let i = self.interval(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let value = a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let slope = (self.y[i + 1] - self.y[i]) / h
            + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        (value, slope, false)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_with_derivative(t).0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.eval_with_derivative(t).1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..=n).map(|i| i as f64 / n as f64).collect()
    }

    #[test]
    fn reproduces_nodes() {
        let x = grid(8);
        let y: Vec<f64> = x.iter().map(|t| (3.0 * t).sin()).collect();
        let s = CubicSpline::natural(x.clone(), y.clone()).unwrap();
        for (t, v) in x.iter().zip(&y) {
            assert!((s.eval(*t) - v).abs() < 1e-15);
        }
        let m = s.second_derivatives();
        assert_eq!(m[0], 0.0);
        assert_eq!(m[8], 0.0);
    }

    #[test]
    fn linear_data_is_exact() {
        let x = grid(8);
        let y: Vec<f64> = x.iter().map(|t| 2.0 - 2.0 * t).collect();
        let s = CubicSpline::natural(x, y).unwrap();
        for i in 0..=40 {
            let t = i as f64 / 40.0;
            let (v, d, clamped) = s.eval_with_derivative(t);
            assert!(!clamped);
            assert!((v - (2.0 - 2.0 * t)).abs() < 1e-14);
            assert!((d + 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let x = grid(8);
        let y = vec![1.0, 0.84, 0.69, 0.54, 0.41, 0.29, 0.18, 0.08, 0.0];
        let s = CubicSpline::natural(x, y).unwrap();
        for i in 1..50 {
            let t = i as f64 / 50.0 + 1e-3;
            let h = 1e-6;
            let fd = (s.eval(t + h) - s.eval(t - h)) / (2.0 * h);
            assert!((fd - s.derivative(t)).abs() < 1e-7);
        }
    }

    #[test]
    fn clamps_outside() {
        let s = CubicSpline::natural(vec![0.0, 0.5, 1.0], vec![1.0, 0.3, 0.0]).unwrap();
        assert_eq!(s.eval_with_derivative(-0.1), (1.0, 0.0, true));
        assert_eq!(s.eval_with_derivative(1.2), (0.0, 0.0, true));
    }

    #[test]
    fn rejects_bad_nodes() {
        assert!(CubicSpline::natural(vec![0.0], vec![1.0]).is_err());
        assert!(CubicSpline::natural(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(CubicSpline::natural(vec![0.0, 1.0], vec![1.0]).is_err());
    }
}
