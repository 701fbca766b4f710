//! Monotone piecewise-cubic (Fritsch-Carlson) interpolation.
//!
//! Used for all RD-curve work in the quality -> log(bpp) domain. The
//! interpolant passes exactly through its knots, preserves monotonicity of
//! the data, and refuses to extrapolate.

use crate::error::{Error, Result};

pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    tangents: Vec<f64>,
}

impl MonotoneCubic {
    /// `xs` must be strictly increasing with at least two entries.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Argument("xs and ys lengths differ".into()));
        }
        if xs.len() < 2 {
            return Err(Error::Argument(
                "interpolation needs at least two points".into(),
            ));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument("xs must be strictly increasing".into()));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite interpolation knot".into()));
        }

        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let d: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();

        let mut m = vec![0.0; n];
        if n == 2 {
            m[0] = d[0];
            m[1] = d[0];
        } else {
            for i in 1..n - 1 {
                if d[i - 1] * d[i] <= 0.0 {
                    m[i] = 0.0;
                } else {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
                }
            }
            m[0] = edge_tangent(h[0], h[1], d[0], d[1]);
            m[n - 1] = edge_tangent(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
        }
        Ok(MonotoneCubic {
            xs,
            ys,
            tangents: m,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.xs[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    /// Evaluate inside the knot span; no extrapolation.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(x >= self.x_min() && x <= self.x_max()) {
            return Err(Error::Numeric(format!(
                "query {x} outside interpolation span [{}, {}]",
                self.x_min(),
                self.x_max()
            )));
        }
        // knots return their value exactly
        if let Some(i) = self.xs.iter().position(|&k| k == x) {
            return Ok(self.ys[i]);
        }
        let i = match self.xs.partition_point(|&k| k < x) {
            0 => 0,
            p => p - 1,
        };
        let i = i.min(self.xs.len() - 2);
        let hh = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / hh;
        let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
        let h10 = t * (1.0 - t) * (1.0 - t);
        let h01 = t * t * (3.0 - 2.0 * t);
        let h11 = t * t * (t - 1.0);
        Ok(self.ys[i] * h00
            + hh * self.tangents[i] * h10
            + self.ys[i + 1] * h01
            + hh * self.tangents[i + 1] * h11)
    }
}

/// One-sided three-point endpoint tangent with the usual monotonicity fixes.
fn edge_tangent(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let mut m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m * d0 <= 0.0 {
        m = 0.0;
    } else if d0 * d1 <= 0.0 && m.abs() > 3.0 * d0.abs() {
        m = 3.0 * d0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_exactly_through_knots() {
        let xs = vec![1.0, 2.5, 3.0, 7.0];
        let ys = vec![0.1, 0.7, 0.9, 2.0];
        let f = MonotoneCubic::new(xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(f.eval(*x).unwrap(), *y);
        }
    }

    #[test]
    fn preserves_monotonicity() {
        // data with strongly varying slopes; classic cubic fits overshoot here
        let xs = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = vec![0.0, 0.01, 0.02, 1.0, 1.01, 1.02];
        let f = MonotoneCubic::new(xs, ys).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=500 {
            let x = 5.0 * i as f64 / 500.0;
            let y = f.eval(x).unwrap();
            assert!(y >= prev - 1e-12, "not monotone at x={x}");
            prev = y;
        }
    }

    #[test]
    fn two_points_interpolate_linearly() {
        let f = MonotoneCubic::new(vec![30.0, 40.0], vec![0.0, std::f64::consts::LN_2]).unwrap();
        let mid = f.eval(35.0).unwrap();
        assert!((mid - std::f64::consts::LN_2 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn refuses_extrapolation() {
        let f = MonotoneCubic::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        assert!(f.eval(-0.1).is_err());
        assert!(f.eval(1.1).is_err());
    }

    #[test]
    fn rejects_unsorted_and_short_input() {
        assert!(MonotoneCubic::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(MonotoneCubic::new(vec![1.0], vec![2.0]).is_err());
    }

    #[test]
    fn interpolates_smooth_function_accurately() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 / 2.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (0.3 * x).tanh() + 0.1 * x).collect();
        let f = MonotoneCubic::new(xs, ys).unwrap();
        for i in 0..100 {
            let x = 9.5 * i as f64 / 99.0;
            let want = (0.3 * x).tanh() + 0.1 * x;
            assert!((f.eval(x).unwrap() - want).abs() < 2e-3);
        }
    }
}
