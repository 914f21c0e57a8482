//! Continuous piecewise-linear approximation of the logistic function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorecard::logistic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PwlStrategy {
    Uniform,
    #[default]
    Greedy,
}

impl std::str::FromStr for PwlStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PwlStrategy::Uniform),
            "greedy" => Ok(PwlStrategy::Greedy),
            _ => Err(Error::Argument(format!("unknown piecewise strategy `{s}`"))),
        }
    }
}

/// Secant interpolation of the logistic function between consecutive
/// breakpoints. Segment `r` covers `[b[r], b[r+1]]` and evaluates
/// `slopes[r] * x + intercepts[r]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseApprox {
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    /// Requested error target (greedy stops once it is met).
    pub eps_approx: f64,
    /// Exact maximum of `|logistic − approx|` over the covered interval.
    pub max_error: f64,
    pub strategy: PwlStrategy,
}

impl PiecewiseApprox {
    pub fn segments(&self) -> usize {
        self.slopes.len()
    }

    pub fn lower(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn upper(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1]
    }

    /// Index of the segment containing `x` (the left one at interior
    /// breakpoints); values outside the interval use the end segments.
    pub fn segment_of(&self, x: f64) -> usize {
        let interior = &self.breakpoints[1..self.breakpoints.len() - 1];
        interior.partition_point(|&b| b < x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let r = self.segment_of(x);
        self.slopes[r] * x + self.intercepts[r]
    }
}

fn secant(a: f64, b: f64) -> (f64, f64) {
    let (fa, fb) = (logistic(a), logistic(b));
    let slope = (fb - fa) / (b - a);
    (slope, fa - slope * a)
}

/// Largest deviation on `[a, b]` and where it occurs. The error of a secant
/// is extremal where `logistic'(x) = σ(1 − σ)` equals the slope, which has
/// the closed-form roots `σ = (1 ± √(1 − 4α)) / 2`.
fn segment_error(a: f64, b: f64) -> (f64, f64) {
    let (slope, icpt) = secant(a, b);
    let disc = (1.0 - 4.0 * slope).max(0.0).sqrt();
    let mut best = (0.0, 0.5 * (a + b));
    for s in [(1.0 - disc) / 2.0, (1.0 + disc) / 2.0] {
        if s <= 0.0 || s >= 1.0 {
            continue;
        }
        let x = (s / (1.0 - s)).ln();
        if x > a && x < b {
            let err = (logistic(x) - (slope * x + icpt)).abs();
            if err > best.0 {
                best = (err, x);
            }
        }
    }
    best
}

fn assemble(breakpoints: Vec<f64>, eps_approx: f64, strategy: PwlStrategy) -> PiecewiseApprox {
    let mut slopes = Vec::with_capacity(breakpoints.len() - 1);
    let mut intercepts = Vec::with_capacity(breakpoints.len() - 1);
    let mut max_error: f64 = 0.0;
    for w in breakpoints.windows(2) {
        let (s, c) = secant(w[0], w[1]);
        slopes.push(s);
        intercepts.push(c);
        max_error = max_error.max(segment_error(w[0], w[1]).0);
    }
    PiecewiseApprox {
        breakpoints,
        slopes,
        intercepts,
        eps_approx,
        max_error,
        strategy,
    }
}

/// Builds the approximation on `[m1, m2]`. `segments` is the exact count for
/// the uniform strategy and the cap for the greedy one, which stops early
/// once the maximum error is at most `eps_approx`.
pub fn piecewise_logistic(
    m1: f64,
    m2: f64,
    segments: usize,
    strategy: PwlStrategy,
    eps_approx: Option<f64>,
) -> Result<PiecewiseApprox> {
    if !(m1.is_finite() && m2.is_finite()) || m1 >= m2 {
        return Err(Error::Argument(format!("piecewise interval [{m1}, {m2}] is empty")));
    }
    if segments < 1 {
        return Err(Error::Argument("at least one segment is required".into()));
    }
    let eps = eps_approx.unwrap_or(0.0);
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::Argument("eps_approx must be nonnegative".into()));
    }
    let breakpoints = match strategy {
        PwlStrategy::Uniform => {
            let h = (m2 - m1) / segments as f64;
            let mut b: Vec<f64> = (0..segments).map(|r| m1 + h * r as f64).collect();
            b.push(m2);
            b
        }
        PwlStrategy::Greedy => {
            let mut b = vec![m1, m2];
            while b.len() - 1 < segments {
                let (r, (err, at)) = b.windows(2).map(|w| segment_error(w[0], w[1])).enumerate().fold(
                    (0, (f64::NEG_INFINITY, 0.0)),
                    |best, (r, e)| if e.0 > best.1 .0 { (r, e) } else { best },
                );
                if err <= eps {
                    break;
                }
                b.insert(r + 1, at);
            }
            b
        }
    };
    Ok(assemble(breakpoints, eps, strategy))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_error(p: &PiecewiseApprox) -> f64 {
        let n = 10_000;
        (0..=n)
            .map(|k| {
                let x = p.lower() + (p.upper() - p.lower()) * k as f64 / n as f64;
                (logistic(x) - p.eval(x)).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn uniform_two_segments() {
        let p = piecewise_logistic(-6.0, 6.0, 2, PwlStrategy::Uniform, None).unwrap();
        assert_eq!(p.breakpoints, vec![-6.0, 0.0, 6.0]);
        assert!((p.slopes[0] - (0.5 - logistic(-6.0)) / 6.0).abs() < 1e-15);
        assert!((p.slopes[0] - 0.082917).abs() < 1e-5);
    }

    #[test]
    fn exact_at_breakpoints_and_continuous() {
        let p = piecewise_logistic(-3.0, 5.0, 9, PwlStrategy::Greedy, None).unwrap();
        for &b in &p.breakpoints {
            assert!((p.eval(b) - logistic(b)).abs() < 1e-15);
        }
        for r in 0..p.segments() - 1 {
            let b = p.breakpoints[r + 1];
            let left = p.slopes[r] * b + p.intercepts[r];
            let right = p.slopes[r + 1] * b + p.intercepts[r + 1];
            assert!((left - right).abs() < 1e-10);
        }
    }

    #[test]
    fn greedy_meets_target() {
        let p = piecewise_logistic(-6.0, 6.0, 64, PwlStrategy::Greedy, Some(0.01)).unwrap();
        assert!(p.max_error <= 0.01);
        assert!(grid_error(&p) <= p.max_error + 1e-12);
        assert_eq!(p.segments(), 12);
    }

    #[test]
    fn analytic_error_bounds_the_grid() {
        let p = piecewise_logistic(-2.0, 9.0, 3, PwlStrategy::Uniform, None).unwrap();
        let g = grid_error(&p);
        assert!(g <= p.max_error + 1e-12 && p.max_error - g < 1e-6);
    }

    #[test]
    fn bad_arguments() {
        assert!(piecewise_logistic(1.0, 1.0, 4, PwlStrategy::Uniform, None).is_err());
        assert!(piecewise_logistic(0.0, 1.0, 0, PwlStrategy::Greedy, None).is_err());
    }
}
