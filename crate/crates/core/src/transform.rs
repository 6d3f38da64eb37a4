//! Box-Cox power transform with an optional location shift.
//!
//! `h(z) = ((z - C)^k - 1) / k` for `k != 0` and `log(z - C)` for `k = 0`,
//! defined for `z > C`.

use crate::datamodel::Thresholds;
use crate::error::{Result, SaeError};

/// Powers this close to zero are evaluated by the log branch.
pub const KAPPA_LOG_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxCox {
    pub kappa: f64,
    pub shift: f64,
}

impl BoxCox {
    pub fn new(kappa: f64) -> Self {
        BoxCox { kappa, shift: 0.0 }
    }

    pub fn shifted(kappa: f64, shift: f64) -> Self {
        BoxCox { kappa, shift }
    }

    #[inline]
    fn is_log(&self) -> bool {
        self.kappa.abs() < KAPPA_LOG_CUTOFF
    }

    /// Infimum of the transformed range.
    pub fn range_lower(&self) -> f64 {
        if !self.is_log() && self.kappa > 0.0 {
            -1.0 / self.kappa
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Supremum of the transformed range.
    pub fn range_upper(&self) -> f64 {
        if !self.is_log() && self.kappa < 0.0 {
            -1.0 / self.kappa
        } else {
            f64::INFINITY
        }
    }

    #[inline]
    pub fn in_range(&self, v: f64) -> bool {
        v > self.range_lower() && v < self.range_upper()
    }

    pub fn forward(&self, z: f64) -> Result<f64> {
        let x = z - self.shift;
        if !(x > 0.0) {
            return Err(SaeError::Invalid(format!(
                "Box-Cox argument {z} must exceed shift {}",
                self.shift
            )));
        }
        Ok(self.forward_unchecked(x))
    }

    #[inline]
    fn forward_unchecked(&self, x: f64) -> f64 {
        if self.is_log() {
            x.ln()
        } else {
            (self.kappa * x.ln()).exp_m1() / self.kappa
        }
    }

    /// Inverse transform; values outside the open range are reported, not clamped.
    pub fn inverse(&self, v: f64) -> Result<f64> {
        if !self.in_range(v) {
            return Err(SaeError::OutOfRange {
                value: v,
                kappa: self.kappa,
            });
        }
        Ok(self.inverse_unchecked(v))
    }

    /// Inverse transform without the range check. Callers guarantee `in_range(v)`.
    #[inline]
    pub fn inverse_unchecked(&self, v: f64) -> f64 {
        if self.is_log() {
            self.shift + v.exp()
        } else {
            self.shift + ((self.kappa * v).ln_1p() / self.kappa).exp()
        }
    }

    /// Image of a class boundary. `c <= shift` (the implicit `c_0`) maps to the
    /// bottom of the range and `+inf` (the implicit `c_G`) to its top.
    pub fn transformed_cut(&self, c: f64) -> f64 {
        if c == f64::INFINITY {
            self.range_upper()
        } else if c <= self.shift {
            self.range_lower()
        } else {
            self.forward_unchecked(c - self.shift)
        }
    }

    /// A transformed boundary with its first and second derivatives in `kappa`.
    /// Infinite boundaries carry zero derivatives.
    pub fn cut_with_kappa_derivs(&self, c: f64) -> (f64, f64, f64) {
        let t = self.transformed_cut(c);
        if !t.is_finite() {
            return (t, 0.0, 0.0);
        }
        let k = self.kappa;
        if c == f64::INFINITY || c <= self.shift {
            // range end -1/kappa
            return (t, 1.0 / (k * k), -2.0 / (k * k * k));
        }
        let l = (c - self.shift).ln();
        if (k * l).abs() < 0.1 {
            // t = sum_{j>=1} k^{j-1} l^j / j!
            let (mut d1, mut d2) = (0.0, 0.0);
            let mut term = l; // l^j / j!
            for j in 1..30 {
                let jf = j as f64;
                if j >= 2 {
                    d1 += (jf - 1.0) * k.powi(j - 2) * term;
                }
                if j >= 3 {
                    d2 += (jf - 1.0) * (jf - 2.0) * k.powi(j - 3) * term;
                }
                term *= l / (jf + 1.0);
            }
            return (t, d1, d2);
        }
        let xk = (k * l).exp();
        let d1 = (k * xk * l - (xk - 1.0)) / (k * k);
        let d2 = (xk * l * l * k * k - 2.0 * k * xk * l + 2.0 * (xk - 1.0)) / (k * k * k);
        (t, d1, d2)
    }

    /// All `G + 1` class boundaries on the transformed scale.
    pub fn transformed_bounds(&self, thresholds: &Thresholds) -> Vec<f64> {
        let mut bounds = Vec::with_capacity(thresholds.groups() + 1);
        bounds.push(self.range_lower());
        bounds.extend(thresholds.cuts().iter().map(|&c| self.transformed_cut(c)));
        bounds.push(self.range_upper());
        bounds
    }
}
