//! Drawing unit values from the model: area effects from their priors, latent
//! values on the transformed scale, and back-transformed unit values.

use rand::Rng;

use crate::datamodel::{GroupedSample, Hyperparameters, RandomEffects, Thresholds};
use crate::sampling::{inv_gamma, std_normal};
use crate::transform::BoxCox;

/// Redraws allowed for a latent value outside the Box-Cox range before it is clamped.
pub const MAX_REDRAWS: usize = 100;
/// Distance from the range boundary used when clamping.
pub const CLAMP_OFFSET: f64 = 1e-8;

/// `b ~ N(0, tau2)` and `sigma2 ~ IG(lambda/2 + 1, lambda phi / 2)`.
pub fn draw_effects<R: Rng + ?Sized>(psi: &Hyperparameters, x: &[f64], rng: &mut R) -> RandomEffects {
    let b = psi.tau2.sqrt() * std_normal(rng);
    let (shape, scale) = psi.sigma2_prior(x);
    RandomEffects {
        b,
        sigma2: inv_gamma(rng, shape, scale),
    }
}

/// One latent value from `N(mu, sd^2)` inside the range of `h`.
///
/// Draws outside the range are redrawn up to [`MAX_REDRAWS`] times, then
/// clamped [`CLAMP_OFFSET`] inside the violated boundary. The flag reports a clamp.
#[inline]
pub fn draw_latent<R: Rng + ?Sized>(h: &BoxCox, mu: f64, sd: f64, rng: &mut R) -> (f64, bool) {
    let mut v = mu + sd * std_normal(rng);
    if h.in_range(v) {
        return (v, false);
    }
    for _ in 0..MAX_REDRAWS {
        v = mu + sd * std_normal(rng);
        if h.in_range(v) {
            return (v, false);
        }
    }
    let clamped = if v <= h.range_lower() {
        h.range_lower() + CLAMP_OFFSET
    } else {
        h.range_upper() - CLAMP_OFFSET
    };
    (clamped, true)
}

/// Unit values of one finite population.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaPopulation {
    pub values: Vec<f64>,
    /// latent draws clamped to the transform range
    pub clamped: usize,
}

impl AreaPopulation {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Class counts of the first `n` units.
    pub fn sample_first(&self, n: usize, thresholds: &Thresholds) -> GroupedSample {
        thresholds.group_counts(&self.values[..n])
    }
}

/// `count` unit values given the area mean `mu` and variance `sigma2` on the transformed scale.
pub fn draw_units<R: Rng + ?Sized>(h: &BoxCox, mu: f64, sigma2: f64, count: usize, rng: &mut R) -> AreaPopulation {
    let sd = sigma2.sqrt();
    let mut clamped = 0;
    let values = (0..count)
        .map(|_| {
            let (v, c) = draw_latent(h, mu, sd, rng);
            clamped += c as usize;
            h.inverse_unchecked(v)
        })
        .collect();
    AreaPopulation { values, clamped }
}

/// Full population of one area: effects from the priors, then `n_pop` units.
pub fn draw_area_population<R: Rng + ?Sized>(
    psi: &Hyperparameters,
    x: &[f64],
    n_pop: usize,
    h: &BoxCox,
    rng: &mut R,
) -> (RandomEffects, AreaPopulation) {
    let u = draw_effects(psi, x, rng);
    let pop = draw_units(h, psi.mean_of(x) + u.b, u.sigma2, n_pop, rng);
    (u, pop)
}
