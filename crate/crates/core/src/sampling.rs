//! Random variate generators shared by the importance sampler, the Gibbs
//! sampler and the population simulators.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::special::{norm_cdf, norm_quantile, norm_sf};

/// Standardized distance beyond which the exponential rejection sampler is used.
pub const TAIL_SWITCH: f64 = 5.0;

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Inverse gamma `IG(shape, scale)` as the reciprocal of a gamma variate.
pub fn inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0)
        .expect("inverse gamma shape must be positive")
        .sample(rng);
    scale / g
}

/// Draw from `N(mean, sd^2)` truncated to `[lower, upper)`.
///
/// Returns `None` when the interval carries no representable mass.
pub fn truncated_normal<R: Rng + ?Sized>(
    rng: &mut R,
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
) -> Option<f64> {
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    if !(a < b) {
        return None;
    }
    let z = truncated_std_normal(rng, a, b)?;
    let x = mean + sd * z;
    // guard against rounding pushing the value onto or past a boundary
    if x < lower {
        return Some(lower);
    }
    if x >= upper {
        let below = upper.next_down();
        return (below >= lower).then_some(below);
    }
    Some(x)
}

/// Standard normal truncated to `[a, b)`.
pub fn truncated_std_normal<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> Option<f64> {
    if a >= TAIL_SWITCH {
        return Some(tail_exponential(rng, a, b));
    }
    if b <= -TAIL_SWITCH {
        return Some(-tail_exponential(rng, -b, -a));
    }
    if a >= 0.0 {
        // upper tail: work with survival probabilities
        let (qa, qb) = (norm_sf(a), norm_sf(b));
        if !(qa > qb) {
            return None;
        }
        let u: f64 = rng.random();
        let q = qb + u * (qa - qb);
        Some((-norm_quantile(q)).clamp(a, b))
    } else {
        let (pa, pb) = (norm_cdf(a), norm_cdf(b));
        if !(pb > pa) {
            return None;
        }
        let u: f64 = rng.random();
        let p = pa + u * (pb - pa);
        Some(norm_quantile(p).clamp(a, b))
    }
}

/// Robert's translated-exponential rejection sampler on `[a, b)` for `a > 0`
/// far in the upper tail.
fn tail_exponential<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    let width = b - a;
    // mass of the truncated exponential proposal on [a, b)
    let cap = if width.is_finite() {
        -(-alpha * width).exp_m1()
    } else {
        1.0
    };
    loop {
        let u: f64 = rng.random();
        let z = a - (-u * cap).ln_1p() / alpha;
        if z >= b {
            continue;
        }
        let accept = (-0.5 * (z - alpha) * (z - alpha)).exp();
        let v: f64 = rng.random();
        if v <= accept {
            return z;
        }
    }
}
