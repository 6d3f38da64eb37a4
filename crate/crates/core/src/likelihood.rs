//! Group membership probabilities and the grouped-data likelihood.

use crate::datamodel::{AreaRecord, GroupedSample, Hyperparameters, RandomEffects, Thresholds};
use crate::special::{
    inv_gamma_log_pdf, ln_factorial, norm_cdf, norm_interval, norm_log_pdf, norm_sf, normal_log_pdf,
};
use crate::transform::BoxCox;

/// How unit values map to classes: thresholds, transform shift and
/// whether class probabilities are renormalized to the Box-Cox range.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub thresholds: Thresholds,
    pub shift: f64,
    pub renormalize: bool,
}

impl Grouping {
    pub fn new(thresholds: Thresholds) -> Self {
        Grouping {
            thresholds,
            shift: 0.0,
            renormalize: false,
        }
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn with_renormalize(mut self, renormalize: bool) -> Self {
        self.renormalize = renormalize;
        self
    }

    pub fn groups(&self) -> usize {
        self.thresholds.groups()
    }

    pub fn transform(&self, kappa: f64) -> BoxCox {
        BoxCox::shifted(kappa, self.shift)
    }

    /// Class boundaries on the transformed scale for power `kappa`.
    pub fn bounds(&self, kappa: f64) -> Vec<f64> {
        self.transform(kappa).transformed_bounds(&self.thresholds)
    }

    /// Boundaries with their first and second derivatives in `kappa`.
    pub fn bounds_with_derivs(&self, kappa: f64) -> Vec<BoundDerivs> {
        let h = self.transform(kappa);
        let mut out = Vec::with_capacity(self.groups() + 1);
        out.push(h.cut_with_kappa_derivs(self.shift));
        out.extend(self.thresholds.cuts().iter().map(|&c| h.cut_with_kappa_derivs(c)));
        out.push(h.cut_with_kappa_derivs(f64::INFINITY));
        out.into_iter()
            .map(|(t, d1, d2)| BoundDerivs { t, d1, d2 })
            .collect()
    }
}

/// A transformed class boundary and its `kappa` derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundDerivs {
    pub t: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Derivatives of a log-pmf in the latent mean `mu` and the power `kappa`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LogPmfDerivs {
    pub value: f64,
    pub d_mu: f64,
    pub d_kappa: f64,
    pub d_mu_mu: f64,
    pub d_mu_kappa: f64,
    pub d_kappa_kappa: f64,
}

impl LogPmfDerivs {
    fn add_scaled(&mut self, w: f64, o: &LogPmfDerivs) {
        self.value += w * o.value;
        self.d_mu += w * o.d_mu;
        self.d_kappa += w * o.d_kappa;
        self.d_mu_mu += w * o.d_mu_mu;
        self.d_mu_kappa += w * o.d_mu_kappa;
        self.d_kappa_kappa += w * o.d_kappa_kappa;
    }
}

/// `(z, phi(z), z phi(z))` at one boundary; infinite boundaries give zeros.
#[inline]
fn boundary_terms(t: f64, mu: f64, sigma: f64) -> (f64, f64, f64) {
    let z = (t - mu) / sigma;
    if z.is_finite() {
        let phi = norm_log_pdf(z).exp();
        (z, phi, z * phi)
    } else {
        (z, 0.0, 0.0)
    }
}

/// Log probability of `[a, b)` under `N(mu, sigma^2)` with its derivatives.
fn log_interval_derivs(a: &BoundDerivs, b: &BoundDerivs, mu: f64, sigma: f64) -> LogPmfDerivs {
    let (za, pa, zpa) = boundary_terms(a.t, mu, sigma);
    let (zb, pb, zpb) = boundary_terms(b.t, mu, sigma);
    let p = norm_interval(za, zb);
    let s2 = sigma * sigma;
    let g_mu = -(pb - pa) / (sigma * p);
    let g_k = (pb * b.d1 - pa * a.d1) / (sigma * p);
    let h_mm = -(zpb - zpa) / (s2 * p) - g_mu * g_mu;
    let h_mk = (zpb * b.d1 - zpa * a.d1) / (s2 * p) - g_mu * g_k;
    let h_kk = (-(zpb * b.d1 * b.d1 - zpa * a.d1 * a.d1) / s2 + (pb * b.d2 - pa * a.d2) / sigma) / p
        - g_k * g_k;
    LogPmfDerivs {
        value: p.ln(),
        d_mu: g_mu,
        d_kappa: g_k,
        d_mu_mu: h_mm,
        d_mu_kappa: h_mk,
        d_kappa_kappa: h_kk,
    }
}

/// Class probabilities under `N(mu, sigma2)` on the transformed scale.
pub fn group_probs(mu: f64, sigma2: f64, kappa: f64, thresholds: &Thresholds) -> Vec<f64> {
    let bounds = BoxCox::new(kappa).transformed_bounds(thresholds);
    probs_from_bounds(&bounds, mu, sigma2.sqrt(), false)
}

pub fn probs_from_bounds(bounds: &[f64], mu: f64, sigma: f64, renormalize: bool) -> Vec<f64> {
    let mut probs: Vec<f64> = bounds
        .windows(2)
        .map(|w| norm_interval((w[0] - mu) / sigma, (w[1] - mu) / sigma))
        .collect();
    if renormalize {
        let total = norm_interval(
            (bounds[0] - mu) / sigma,
            (bounds[bounds.len() - 1] - mu) / sigma,
        );
        probs.iter_mut().for_each(|p| *p /= total);
    }
    probs
}

/// Multinomial log-pmf of class counts given the latent normal.
pub fn log_pmf(y: &GroupedSample, mu: f64, sigma2: f64, kappa: f64, thresholds: &Thresholds) -> f64 {
    let bounds = BoxCox::new(kappa).transformed_bounds(thresholds);
    AreaLikelihood::new(y).log_pmf(&bounds, mu, sigma2.sqrt(), false)
}

/// Per-area cache for repeated likelihood evaluation.
#[derive(Debug, Clone)]
pub struct AreaLikelihood<'a> {
    counts: &'a [u64],
    n: u64,
    log_coef: f64,
}

impl<'a> AreaLikelihood<'a> {
    pub fn new(y: &'a GroupedSample) -> Self {
        let log_coef =
            ln_factorial(y.n()) - y.counts().iter().map(|&c| ln_factorial(c)).sum::<f64>();
        AreaLikelihood {
            counts: y.counts(),
            n: y.n(),
            log_coef,
        }
    }

    /// Log-pmf for boundaries `bounds` (length `G + 1`); `-inf` when an
    /// occupied class has zero probability.
    #[inline]
    pub fn log_pmf(&self, bounds: &[f64], mu: f64, sigma: f64, renormalize: bool) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        // One erfc per boundary: keep the tail on the boundary's own side.
        let tail = |t: f64| {
            let z = (t - mu) / sigma;
            if z >= 0.0 {
                (true, norm_sf(z))
            } else {
                (false, norm_cdf(z))
            }
        };
        let mut acc = self.log_coef;
        let mut lower = tail(bounds[0]);
        let mut lower_idx = 0usize;
        for (g, &count) in self.counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            if lower_idx != g {
                lower = tail(bounds[g]);
            }
            let upper = tail(bounds[g + 1]);
            let p = match (lower.0, upper.0) {
                (true, true) => lower.1 - upper.1,
                (false, false) => upper.1 - lower.1,
                (false, true) => 1.0 - upper.1 - lower.1,
                (true, false) => 0.0,
            };
            if !(p > 0.0) {
                return f64::NEG_INFINITY;
            }
            acc += count as f64 * p.ln();
            lower = upper;
            lower_idx = g + 1;
        }
        if renormalize {
            let total = norm_interval(
                (bounds[0] - mu) / sigma,
                (bounds[bounds.len() - 1] - mu) / sigma,
            );
            acc -= self.n as f64 * total.ln();
        }
        acc
    }

    /// [`AreaLikelihood::log_pmf`] with first and second derivatives in `mu` and `kappa`.
    pub fn log_pmf_derivs(&self, bounds: &[BoundDerivs], mu: f64, sigma: f64, renormalize: bool) -> LogPmfDerivs {
        let mut acc = LogPmfDerivs {
            value: self.log_coef,
            ..LogPmfDerivs::default()
        };
        if self.n == 0 {
            acc.value = 0.0;
            return acc;
        }
        for (g, &count) in self.counts.iter().enumerate() {
            if count > 0 {
                acc.add_scaled(count as f64, &log_interval_derivs(&bounds[g], &bounds[g + 1], mu, sigma));
            }
        }
        if renormalize {
            let total = log_interval_derivs(&bounds[0], &bounds[bounds.len() - 1], mu, sigma);
            acc.add_scaled(-(self.n as f64), &total);
        }
        acc
    }
}

/// `log pi(u)`: `N(0, tau2)` on `b` times `IG(lambda/2 + 1, lambda phi / 2)` on `sigma2`.
pub fn log_prior_u(u: RandomEffects, psi: &Hyperparameters, x: &[f64]) -> f64 {
    let (shape, scale) = psi.sigma2_prior(x);
    normal_log_pdf(u.b, 0.0, psi.tau2) + inv_gamma_log_pdf(u.sigma2, shape, scale)
}

/// Complete-data log-likelihood over in-sample areas; `u[i]` pairs with the
/// i-th in-sample area of `areas`.
pub fn complete_loglik(
    areas: &[AreaRecord],
    u: &[RandomEffects],
    psi: &Hyperparameters,
    grouping: &Grouping,
) -> f64 {
    let bounds = grouping.bounds(psi.kappa);
    areas
        .iter()
        .filter_map(|a| a.sample.as_ref().map(|s| (a, s)))
        .zip(u)
        .map(|((area, y), &ui)| {
            let mu = psi.mean_of(&area.x) + ui.b;
            AreaLikelihood::new(y).log_pmf(&bounds, mu, ui.sigma2.sqrt(), grouping.renormalize)
                + log_prior_u(ui, psi, &area.x)
        })
        .sum()
}
