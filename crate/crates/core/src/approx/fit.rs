//! Polynomial fits of activation functions: discrete least squares and
//! Chebyshev interpolation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points of the uniform grid on which fit errors are reported.
pub const GRID_POINTS: usize = 1000;

/// Default activation interval.
pub const DEFAULT_INTERVAL: (f64, f64) = (-8.0, 8.0);

/// Singular-value ratio below which a least-squares system is refused.
const MIN_RCOND: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("degree {0} is not supported here")]
    Degree(usize),
    #[error("interval [{0}, {1}] is empty")]
    Interval(f64, f64),
    #[error("normal equations are ill-conditioned (rcond {0:e})")]
    IllConditioned(f64),
    #[error("unknown activation {0:?}")]
    Unknown(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Identity,
    Sigmoid,
    /// `ln(1 + e^x)`.
    SmoothRelu,
    Tanh,
    /// One logit of a softmax, approximated per logit by a sigmoid.
    SoftmaxComponent,
    Sqrt,
    Square,
    Constant(f64),
}

impl Target {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Target::Identity => x,
            Target::Sigmoid | Target::SoftmaxComponent => 1.0 / (1.0 + (-x).exp()),
            Target::SmoothRelu => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Target::Tanh => x.tanh(),
            Target::Sqrt => x.max(0.0).sqrt(),
            Target::Square => x * x,
            Target::Constant(c) => *c,
        }
    }

    pub fn parse(name: &str) -> Result<Self, FitError> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "identity" | "linear" => Target::Identity,
            "sigmoid" => Target::Sigmoid,
            "smooth_relu" | "softplus" | "smoothrelu" => Target::SmoothRelu,
            "tanh" => Target::Tanh,
            "softmax" | "softmax_component" => Target::SoftmaxComponent,
            "sqrt" => Target::Sqrt,
            "square" => Target::Square,
            _ => return Err(FitError::Unknown(name.to_string())),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Coefficients of `x^k` in the original variable.
    Power,
    /// Coefficients of `T_k(t)` with `t` the affine image of `[a, b]` on `[-1, 1]`.
    Chebyshev,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxPoly {
    pub coeffs: Vec<f64>,
    pub basis: Basis,
    pub interval: (f64, f64),
    pub target: Target,
    /// Max `|poly - target|` over the reporting grid.
    pub fit_error: f64,
}

fn to_unit(x: f64, (a, b): (f64, f64)) -> f64 {
    (2.0 * x - (a + b)) / (b - a)
}

/// `T_0..T_d` at `t`.
fn chebyshev_row(t: f64, d: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(d + 1);
    row.push(1.0);
    if d >= 1 {
        row.push(t);
    }
    for k in 2..=d {
        row.push(2.0 * t * row[k - 1] - row[k - 2]);
    }
    row
}

pub fn grid(interval: (f64, f64), points: usize) -> Vec<f64> {
    let (a, b) = interval;
    (0..points).map(|i| a + (b - a) * i as f64 / (points - 1) as f64).collect()
}

impl ApproxPoly {
    pub fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.basis {
            Basis::Power => self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c),
            Basis::Chebyshev => {
                // Clenshaw.
                let t = to_unit(x, self.interval);
                let (mut b1, mut b2) = (0.0, 0.0);
                for &c in self.coeffs.iter().skip(1).rev() {
                    let b0 = 2.0 * t * b1 - b2 + c;
                    b2 = b1;
                    b1 = b0;
                }
                t * b1 - b2 + self.coeffs.first().copied().unwrap_or(0.0)
            }
        }
    }

    /// Max error against the target on the reporting grid.
    pub fn grid_error(&self) -> f64 {
        grid(self.interval, GRID_POINTS).iter().map(|&x| (self.eval(x) - self.target.eval(x)).abs()).fold(0.0, f64::max)
    }

    /// Power-basis coefficients in the original variable.
    pub fn to_power(&self) -> ApproxPoly {
        if self.basis == Basis::Power {
            return self.clone();
        }
        let (a, b) = self.interval;
        // t = alpha * x + beta
        let (alpha, beta) = (2.0 / (b - a), -(a + b) / (b - a));
        let d = self.coeffs.len();
        let mut out = vec![0.0; d];
        let mut t_prev = vec![1.0];
        let mut t_cur = vec![beta, alpha];
        out[0] += self.coeffs[0];
        if d > 1 {
            out[0] += self.coeffs[1] * beta;
            out[1] += self.coeffs[1] * alpha;
        }
        for &c in self.coeffs.iter().skip(2) {
            // T_{k} = 2 t T_{k-1} - T_{k-2}
            let mut next = vec![0.0; t_cur.len() + 1];
            for (i, &v) in t_cur.iter().enumerate() {
                next[i] += 2.0 * beta * v;
                next[i + 1] += 2.0 * alpha * v;
            }
            for (i, &v) in t_prev.iter().enumerate() {
                next[i] -= v;
            }
            for (o, &v) in out.iter_mut().zip(&next) {
                *o += c * v;
            }
            t_prev = std::mem::replace(&mut t_cur, next);
        }
        let mut p = ApproxPoly { coeffs: out, basis: Basis::Power, interval: self.interval, target: self.target, fit_error: 0.0 };
        p.fit_error = p.grid_error();
        p
    }

    /// Formal derivative, in the power basis.
    pub fn derivative(&self) -> ApproxPoly {
        let p = self.to_power();
        let coeffs: Vec<f64> = if p.coeffs.len() <= 1 {
            vec![0.0]
        } else {
            p.coeffs.iter().enumerate().skip(1).map(|(k, &c)| k as f64 * c).collect()
        };
        ApproxPoly { coeffs, basis: Basis::Power, interval: p.interval, target: p.target, fit_error: f64::NAN }
    }
}

fn check(interval: (f64, f64)) -> Result<(), FitError> {
    if interval.1 > interval.0 && interval.0.is_finite() && interval.1.is_finite() {
        Ok(())
    } else {
        Err(FitError::Interval(interval.0, interval.1))
    }
}

/// Discrete least squares on the uniform grid, solved in the Chebyshev basis
/// for conditioning; returned in the power basis when `degree <= 12`.
pub fn fit_least_squares(target: Target, interval: (f64, f64), degree: usize) -> Result<ApproxPoly, FitError> {
    check(interval)?;
    if degree == 0 {
        return Err(FitError::Degree(0));
    }
    let xs = grid(interval, GRID_POINTS);
    let rows: Vec<f64> = xs.iter().flat_map(|&x| chebyshev_row(to_unit(x, interval), degree)).collect();
    let a = DMatrix::from_row_slice(xs.len(), degree + 1, &rows);
    let y = DVector::from_iterator(xs.len(), xs.iter().map(|&x| target.eval(x)));
    let svd = a.svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if smin <= MIN_RCOND * smax {
        return Err(FitError::IllConditioned(smin / smax));
    }
    let c = svd.solve(&y, 0.0).map_err(|_| FitError::IllConditioned(0.0))?;
    let mut p = ApproxPoly { coeffs: c.iter().copied().collect(), basis: Basis::Chebyshev, interval, target, fit_error: 0.0 };
    if degree <= 12 {
        p = p.to_power();
    }
    p.fit_error = p.grid_error();
    Ok(p)
}

/// Interpolation at the `degree + 1` Chebyshev extreme points `cos(pi j / d)`;
/// kept in the Chebyshev basis. The endpoints are nodes, so the fit is exact
/// at both ends of the interval.
pub fn fit_chebyshev(target: Target, interval: (f64, f64), degree: usize) -> Result<ApproxPoly, FitError> {
    check(interval)?;
    let (a, b) = interval;
    let at = |t: f64| target.eval(0.5 * (b - a) * t + 0.5 * (a + b));
    if degree == 0 {
        let c = at(0.0);
        let mut p = ApproxPoly { coeffs: vec![c], basis: Basis::Chebyshev, interval, target, fit_error: 0.0 };
        p.fit_error = p.grid_error();
        return Ok(p);
    }
    let d = degree as f64;
    let fx: Vec<f64> = (0..=degree).map(|j| at((std::f64::consts::PI * j as f64 / d).cos())).collect();
    // Discrete cosine sums with halved end terms, in both j and k.
    let end = |i: usize| if i == 0 || i == degree { 0.5 } else { 1.0 };
    let coeffs: Vec<f64> = (0..=degree)
        .map(|k| {
            let s: f64 = fx
                .iter()
                .enumerate()
                .map(|(j, &f)| end(j) * f * (std::f64::consts::PI * (j * k) as f64 / d).cos())
                .sum();
            end(k) * 2.0 * s / d
        })
        .collect();
    let mut p = ApproxPoly { coeffs, basis: Basis::Chebyshev, interval, target, fit_error: 0.0 };
    p.fit_error = p.grid_error();
    Ok(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Value,
    Derivative,
}

/// Power-basis activation polynomial or its derivative.
///
/// The smooth-ReLU derivative is a sigmoid, fitted directly at `degree - 1`;
/// `Square` is exact.
pub fn activation(name: &str, mode: Mode, degree: usize, interval: (f64, f64)) -> Result<ApproxPoly, FitError> {
    let target = Target::parse(name)?;
    let value = match target {
        Target::Square => ApproxPoly {
            coeffs: vec![0.0, 0.0, 1.0],
            basis: Basis::Power,
            interval,
            target,
            fit_error: 0.0,
        },
        Target::Identity => ApproxPoly { coeffs: vec![0.0, 1.0], basis: Basis::Power, interval, target, fit_error: 0.0 },
        _ => fit_least_squares(target, interval, degree)?.to_power(),
    };
    Ok(match mode {
        Mode::Value => value,
        Mode::Derivative if target == Target::SmoothRelu => {
            let mut d = fit_least_squares(Target::Sigmoid, interval, degree.saturating_sub(1).max(1))?.to_power();
            d.target = Target::Sigmoid;
            d
        }
        Mode::Derivative => value.derivative(),
    })
}
