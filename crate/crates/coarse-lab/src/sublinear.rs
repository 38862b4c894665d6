//! Admissible error functions u(r) = a + b (1+r)^theta log^k(e+r) and their
//! large-scale functionals: the last-crossing radius r_eps(u) = sup{r : u(r) > eps r}
//! and the doubling-type functional u "uparrow" tau = sup_r u(tau r)/u(r).
//!
//! The family is closed (up to domination) under pointwise max, positive
//! scaling, sums and argument advancement u_p(t) = u(p+t); those combinations
//! are kept as lazy [`ErrorTerm`] bags on which both functionals are computed
//! numerically.

use crate::numerics;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SublinearError {
    #[error("invalid admissible-function parameters: {0}")]
    InvalidParameters(String),
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Constant,
    PowerLog,
}

/// u(r) = a                                   (Constant)
/// u(r) = a + b (1+r)^theta ln^k(e+r)         (PowerLog)
///
/// Nondecreasing, doubling and sublinear by construction (theta < 1), with
/// u >= 1 enforced at validation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleFunction {
    pub family: Family,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub k: f64,
}

impl AdmissibleFunction {
    pub fn constant(a: f64) -> Result<Self, SublinearError> {
        if !a.is_finite() || a < 1.0 {
            return Err(SublinearError::InvalidParameters(format!(
                "constant level must be >= 1, got {a}"
            )));
        }
        Ok(AdmissibleFunction {
            family: Family::Constant,
            a,
            b: 0.0,
            theta: 0.0,
            k: 0.0,
        })
    }

    pub fn power_log(a: f64, b: f64, theta: f64, k: f64) -> Result<Self, SublinearError> {
        for (name, val) in [("a", a), ("b", b), ("theta", theta), ("k", k)] {
            if !val.is_finite() {
                return Err(SublinearError::InvalidParameters(format!(
                    "{name} must be finite"
                )));
            }
        }
        if a < 0.0 || b < 0.0 {
            return Err(SublinearError::InvalidParameters(format!(
                "coefficients must be nonnegative, got a={a} b={b}"
            )));
        }
        if !(0.0..1.0).contains(&theta) {
            return Err(SublinearError::InvalidParameters(format!(
                "theta must lie in [0,1), got {theta}"
            )));
        }
        if k < 0.0 {
            return Err(SublinearError::InvalidParameters(format!(
                "log exponent must be >= 0, got {k}"
            )));
        }
        if a + b < 1.0 {
            return Err(SublinearError::InvalidParameters(format!(
                "u(0) = a + b = {} must be >= 1",
                a + b
            )));
        }
        Ok(AdmissibleFunction {
            family: Family::PowerLog,
            a,
            b,
            theta,
            k,
        })
    }

    /// Convenience for the log-class error v(r) = 1 + ln(e + r).
    pub fn log_class() -> Self {
        AdmissibleFunction::power_log(1.0, 1.0, 0.0, 1.0).expect("valid parameters")
    }

    /// Convenience for v(r) = (1+r)^{1/2}.
    pub fn sqrt_class() -> Self {
        AdmissibleFunction::power_log(0.0, 1.0, 0.5, 0.0).expect("valid parameters")
    }

    /// Evaluates u at r; negative arguments clamp to r = 0, which extends u
    /// nondecreasingly to the whole line.
    pub fn evaluate(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        match self.family {
            Family::Constant => self.a,
            Family::PowerLog => {
                let power = (1.0 + r).powf(self.theta);
                let log = if self.k == 0.0 {
                    1.0
                } else {
                    (std::f64::consts::E + r).ln().powf(self.k)
                };
                self.a + self.b * power * log
            }
        }
    }

    /// True when u is bounded (so sup-level sets of the form {u <= c} can be
    /// all of [0, infinity)).
    pub fn is_bounded(&self) -> bool {
        match self.family {
            Family::Constant => true,
            Family::PowerLog => self.b == 0.0 || (self.theta == 0.0 && self.k == 0.0),
        }
    }

    /// Exponent of the dominant power term; the uparrow limit at infinity is
    /// tau^theta_dominant.
    fn dominant_theta(&self) -> f64 {
        match self.family {
            Family::Constant => 0.0,
            Family::PowerLog => {
                if self.b == 0.0 {
                    0.0
                } else {
                    self.theta
                }
            }
        }
    }

    pub fn r_epsilon(&self, eps: f64) -> Result<f64, SublinearError> {
        ErrorTerm::Base(*self).r_epsilon(eps)
    }

    pub fn uparrow(&self, tau: f64) -> f64 {
        ErrorTerm::Base(*self).uparrow(tau)
    }

    pub fn advance(&self, p: f64) -> ErrorTerm {
        ErrorTerm::Base(*self).advance(p)
    }
}

/// Lazy bag of admissible functions closed under the operations the tracking
/// formulas need. Every combination preserves "nondecreasing + doubling +
/// sublinear", so the numeric functionals below stay well defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ErrorTerm {
    Base(AdmissibleFunction),
    Advance { p: f64, inner: Box<ErrorTerm> },
    Scale { factor: f64, inner: Box<ErrorTerm> },
    Sum(Box<ErrorTerm>, Box<ErrorTerm>),
    Max(Box<ErrorTerm>, Box<ErrorTerm>),
}

impl ErrorTerm {
    pub fn evaluate(&self, r: f64) -> f64 {
        match self {
            ErrorTerm::Base(u) => u.evaluate(r),
            ErrorTerm::Advance { p, inner } => inner.evaluate(p + r.max(0.0)),
            ErrorTerm::Scale { factor, inner } => factor * inner.evaluate(r),
            ErrorTerm::Sum(x, y) => x.evaluate(r) + y.evaluate(r),
            ErrorTerm::Max(x, y) => x.evaluate(r).max(y.evaluate(r)),
        }
    }

    pub fn advance(&self, p: f64) -> ErrorTerm {
        ErrorTerm::Advance {
            p: p.max(0.0),
            inner: Box::new(self.clone()),
        }
    }

    pub fn scale(&self, factor: f64) -> ErrorTerm {
        ErrorTerm::Scale {
            factor,
            inner: Box::new(self.clone()),
        }
    }

    pub fn sum(&self, other: &ErrorTerm) -> ErrorTerm {
        ErrorTerm::Sum(Box::new(self.clone()), Box::new(other.clone()))
    }

    pub fn max(&self, other: &ErrorTerm) -> ErrorTerm {
        ErrorTerm::Max(Box::new(self.clone()), Box::new(other.clone()))
    }

    pub fn is_bounded(&self) -> bool {
        match self {
            ErrorTerm::Base(u) => u.is_bounded(),
            ErrorTerm::Advance { inner, .. } => inner.is_bounded(),
            ErrorTerm::Scale { inner, .. } => inner.is_bounded(),
            ErrorTerm::Sum(x, y) | ErrorTerm::Max(x, y) => x.is_bounded() && y.is_bounded(),
        }
    }

    fn dominant_theta(&self) -> f64 {
        match self {
            ErrorTerm::Base(u) => u.dominant_theta(),
            ErrorTerm::Advance { inner, .. } => inner.dominant_theta(),
            ErrorTerm::Scale { inner, .. } => inner.dominant_theta(),
            ErrorTerm::Sum(x, y) | ErrorTerm::Max(x, y) => {
                x.dominant_theta().max(y.dominant_theta())
            }
        }
    }

    /// sup{r >= 0 : u(r) > eps r}, the radius beyond which u sits below the
    /// line of slope eps. Always >= 1/(2 eps) here because u >= 1.
    pub fn r_epsilon(&self, eps: f64) -> Result<f64, SublinearError> {
        if !(eps > 0.0) {
            return Err(SublinearError::NonPositiveEpsilon(eps));
        }
        if let ErrorTerm::Base(u) = self {
            if u.family == Family::Constant {
                return Ok(u.a / eps);
            }
        }
        // r = 1/(2 eps) is always in the set (u >= 1 > eps r there), so the
        // octave scan can start at it.
        let mut last_violation = 0.5 / eps;
        let mut hi = last_violation * 2.0;
        let mut clean_run = 0;
        let mut guard = 0;
        while clean_run < 40 {
            if self.evaluate(hi) > eps * hi {
                last_violation = hi;
                clean_run = 0;
            } else {
                clean_run += 1;
            }
            hi *= 2.0;
            guard += 1;
            if guard > 4000 || hi > 1e305 {
                // sublinearity makes this unreachable for valid bags
                break;
            }
        }
        let mut lo = last_violation;
        let mut up = last_violation * 2.0;
        for _ in 0..200 {
            if up - lo <= 1e-9 * up.max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + up);
            if self.evaluate(mid) > eps * mid {
                lo = mid;
            } else {
                up = mid;
            }
        }
        Ok(0.5 * (lo + up))
    }

    /// sup{r >= 0 : u(r) <= c} for the nondecreasing bag; None = unbounded.
    pub fn sup_level(&self, c: f64) -> Option<f64> {
        numerics::sup_level(|r| self.evaluate(r), c)
    }

    /// sup_r u(tau r)/u(r). For tau <= 1 the ratio never exceeds 1 and equals
    /// 1 at r = 0, so the functional extends by 1 there.
    pub fn uparrow(&self, tau: f64) -> f64 {
        if tau <= 1.0 {
            return 1.0;
        }
        let ratio = |r: f64| self.evaluate(tau * r) / self.evaluate(r);
        let mut best = 1.0f64; // r = 0 gives exactly 1
        let mut best_idx = 0usize;
        let grid: Vec<f64> = (0..=600)
            .map(|i| 1e-9 * 10f64.powf(i as f64 * 15.0 / 600.0))
            .collect();
        for (i, &r) in grid.iter().enumerate() {
            let v = ratio(r);
            if v > best {
                best = v;
                best_idx = i;
            }
        }
        // refine around the best grid cell
        if best_idx > 0 && best_idx + 1 < grid.len() {
            let a = grid[best_idx - 1];
            let b = grid[best_idx + 1];
            let (_, neg) = numerics::golden_section_min(|r| -ratio(r), a, b, 1e-9 * b.max(1.0));
            best = best.max(-neg);
        }
        // limit at infinity: the dominant power term gives tau^theta
        best.max(tau.powf(self.dominant_theta())).max(1.0)
    }
}
