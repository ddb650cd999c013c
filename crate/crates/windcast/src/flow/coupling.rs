//! The elementwise coupling function and its monotonicity constraint.
//!
//! Each transformed coordinate passes through h(x) = a*x + b + c/(1+(d*x+g)^2)
//! with a, b, d forced positive through exp and |c| capped strictly below
//! 8*sqrt(3)*a/(9*d), the exact bound under which h' stays positive
//! everywhere. A small safety margin keeps h' bounded away from zero so the
//! log-derivative and the root solver stay stable.

use crate::error::{Error, Result};

/// sup |2u/(1+u^2)^2| = 3*sqrt(3)/8, so |c| * d < a * 8/(3*sqrt(3)) keeps
/// h' = a - 2*c*d*u/(1+u^2)^2 positive; 8/(3*sqrt(3)) = 8*sqrt(3)/9.
pub const C_BOUND: f64 = 1.5396007178390022;

/// Safety margin keeping h' >= a * MARGIN > 0.
pub const C_MARGIN: f64 = 1e-3;

/// Constrained parameters of one elementwise map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub g: f64,
}

/// Maps raw (unconstrained) parameters [a', b', c', d', g'] to a strictly
/// increasing h.
pub fn constrain_theta(raw: &[f64]) -> Theta {
    assert_eq!(raw.len(), 5, "theta takes five raw parameters");
    let a = raw[0].exp();
    let b = raw[1].exp();
    let d = raw[3].exp();
    let c = C_BOUND * (a / d) * raw[2].tanh() * (1.0 - C_MARGIN);
    Theta { a, b, c, d, g: raw[4] }
}

pub fn h_eval(t: &Theta, x: f64) -> f64 {
    let u = t.d * x + t.g;
    t.a * x + t.b + t.c / (1.0 + u * u)
}

pub fn h_deriv(t: &Theta, x: f64) -> f64 {
    let u = t.d * x + t.g;
    let den = 1.0 + u * u;
    t.a - 2.0 * t.c * t.d * u / (den * den)
}

/// Solves h(x) = target by bracketed Newton iteration.
///
/// The bump term is bounded by |c|, so the root lies inside
/// [(target - b - |c|)/a, (target - b + |c|)/a]. Newton steps that leave the
/// current bracket fall back to bisection; the bracket shrinks monotonically
/// because h is strictly increasing.
pub fn h_invert(t: &Theta, target: f64, coord: usize) -> Result<f64> {
    const TOL: f64 = 1e-10;
    const MAX_ITERS: usize = 200;
    let c_abs = t.c.abs();
    if c_abs == 0.0 {
        return Ok((target - t.b) / t.a);
    }
    let mut lo = (target - t.b - c_abs) / t.a;
    let mut hi = (target - t.b + c_abs) / t.a;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..MAX_ITERS {
        let f = h_eval(t, x) - target;
        if f.abs() <= TOL {
            return Ok(x);
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let step = f / h_deriv(t, x);
        let candidate = x - step;
        x = if candidate > lo && candidate < hi { candidate } else { 0.5 * (lo + hi) };
    }
    Err(Error::InverseNoConverge { coord, iters: MAX_ITERS })
}
