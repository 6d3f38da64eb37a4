//! Per-area efficient importance sampling (EIS) and sampling importance
//! resampling (SIR) for the area random effects `u = (b, sigma2)`.
//!
//! The proposal is `N(theta1, theta2) x IG(theta3, theta4)`, an exponential
//! family whose log-kernel is linear in `(b, b^2, log sigma2, 1/sigma2)`.
//! EIS fits the natural parameters by weighted least squares of the log
//! target on those sufficient statistics, re-drawing from the updated
//! proposal with common random numbers until the moment parameters settle.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::datamodel::{GroupedSample, Hyperparameters, RandomEffects};
use crate::error::{Result, SaeError};
use crate::likelihood::{AreaLikelihood, Grouping};
use crate::linalg::weighted_least_squares;
use crate::sampling::{inv_gamma, std_normal};
use crate::special::{gamma_p_inv, ln_gamma};

/// Moment parameters of the `N x IG` proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalParams {
    /// normal mean
    pub theta1: f64,
    /// normal variance
    pub theta2: f64,
    /// inverse gamma shape
    pub theta3: f64,
    /// inverse gamma scale
    pub theta4: f64,
}

impl ProposalParams {
    /// The prior `N(0, tau2) x IG(lambda/2 + 1, lambda phi / 2)`.
    pub fn prior(psi: &Hyperparameters, x: &[f64]) -> Self {
        let (shape, scale) = psi.sigma2_prior(x);
        ProposalParams {
            theta1: 0.0,
            theta2: psi.tau2,
            theta3: shape,
            theta4: scale,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.theta2 > 0.0
            && self.theta3 > 0.0
            && self.theta4 > 0.0
            && [self.theta1, self.theta2, self.theta3, self.theta4]
                .iter()
                .all(|v| v.is_finite())
    }

    /// Natural parameters `(a1, a2, a3, a4)` of the log-kernel
    /// `a1 b + a2 b^2 + a3 log sigma2 + a4 / sigma2`.
    pub fn natural(&self) -> [f64; 4] {
        [
            self.theta1 / self.theta2,
            -1.0 / (2.0 * self.theta2),
            -(self.theta3 + 1.0),
            -self.theta4,
        ]
    }

    /// Inverse of [`natural`](Self::natural); `None` unless `a2 < 0`, `a3 < -1`, `a4 < 0`.
    pub fn from_natural(a: [f64; 4]) -> Option<Self> {
        if !(a[1] < 0.0 && a[2] < -1.0 && a[3] < 0.0) {
            return None;
        }
        let p = ProposalParams {
            theta1: -a[0] / (2.0 * a[1]),
            theta2: -1.0 / (2.0 * a[1]),
            theta3: -a[2] - 1.0,
            theta4: -a[3],
        };
        p.is_valid().then_some(p)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.theta1, self.theta2, self.theta3, self.theta4]
    }

    fn constants(&self) -> (f64, f64) {
        (
            -0.5 * (2.0 * std::f64::consts::PI * self.theta2).ln(),
            self.theta3 * self.theta4.ln() - ln_gamma(self.theta3),
        )
    }

    /// Normalized log density `log q(u | theta)`.
    pub fn log_density(&self, u: RandomEffects) -> f64 {
        let (cn, cg) = self.constants();
        self.log_density_with(u, cn, cg)
    }

    #[inline]
    fn log_density_with(&self, u: RandomEffects, cn: f64, cg: f64) -> f64 {
        let d = u.b - self.theta1;
        cn - 0.5 * d * d / self.theta2 + cg - (self.theta3 + 1.0) * u.sigma2.ln() - self.theta4 / u.sigma2
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RandomEffects {
        RandomEffects {
            b: self.theta1 + self.theta2.sqrt() * std_normal(rng),
            sigma2: inv_gamma(rng, self.theta3, self.theta4),
        }
    }
}

/// `log f(y | u) + log pi(u)` for one area under fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct AreaTarget<'a> {
    pub id: &'a str,
    lik: AreaLikelihood<'a>,
    bounds: Vec<f64>,
    renormalize: bool,
    mean: f64,
    tau2: f64,
    shape: f64,
    scale: f64,
    norm_const: f64,
    ig_const: f64,
}

impl<'a> AreaTarget<'a> {
    pub fn new(
        id: &'a str,
        y: &'a GroupedSample,
        x: &[f64],
        psi: &Hyperparameters,
        grouping: &Grouping,
    ) -> Self {
        let (shape, scale) = psi.sigma2_prior(x);
        AreaTarget {
            id,
            lik: AreaLikelihood::new(y),
            bounds: grouping.bounds(psi.kappa),
            renormalize: grouping.renormalize,
            mean: psi.mean_of(x),
            tau2: psi.tau2,
            shape,
            scale,
            norm_const: -0.5 * (2.0 * std::f64::consts::PI * psi.tau2).ln(),
            ig_const: shape * scale.ln() - ln_gamma(shape),
        }
    }

    #[inline]
    pub fn log_lik(&self, u: RandomEffects) -> f64 {
        if !(u.sigma2 > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.lik
            .log_pmf(&self.bounds, self.mean + u.b, u.sigma2.sqrt(), self.renormalize)
    }

    #[inline]
    pub fn log_prior(&self, u: RandomEffects) -> f64 {
        if !(u.sigma2 > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.norm_const - 0.5 * u.b * u.b / self.tau2 + self.ig_const
            - (self.shape + 1.0) * u.sigma2.ln()
            - self.scale / u.sigma2
    }

    #[inline]
    pub fn log_target(&self, u: RandomEffects) -> f64 {
        let ll = self.log_lik(u);
        if ll == f64::NEG_INFINITY {
            return ll;
        }
        ll + self.log_prior(u)
    }
}

#[derive(Debug, Clone)]
pub struct EisConfig {
    pub s0: usize,
    pub max_iter: usize,
    /// relative change in `theta` that ends the iteration
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for EisConfig {
    fn default() -> Self {
        EisConfig {
            s0: 100,
            max_iter: 50,
            tol: 1e-3,
            max_halvings: 10,
        }
    }
}

/// The weighted regression solved at one EIS iteration.
#[derive(Debug, Clone)]
pub struct GlsSystem {
    pub draws: Vec<RandomEffects>,
    pub weights: Vec<f64>,
    pub response: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EisFit {
    pub proposal: ProposalParams,
    pub iterations: usize,
    pub converged: bool,
    /// iterations where the regression was singular and the previous proposal kept
    pub singular_fallbacks: usize,
    /// iterations where the step had to be damped or rejected
    pub damped_steps: usize,
    /// regression of the final iteration, when its solution was accepted undamped
    pub last_system: Option<GlsSystem>,
}

/// Regressors `[1, b, b^2, log sigma2, 1/sigma2]`.
pub fn eis_design(draws: &[RandomEffects]) -> DMatrix<f64> {
    DMatrix::from_fn(draws.len(), 5, |i, j| {
        let u = draws[i];
        match j {
            0 => 1.0,
            1 => u.b,
            2 => u.b * u.b,
            3 => u.sigma2.ln(),
            _ => 1.0 / u.sigma2,
        }
    })
}

/// Weighted least-squares solution `(c, a1, a2, a3, a4)` of the EIS regression.
pub fn gls_natural_params(
    draws: &[RandomEffects],
    weights: &[f64],
    response: &[f64],
) -> Result<[f64; 5]> {
    let coef = weighted_least_squares(&eis_design(draws), weights, response)?;
    Ok([coef[0], coef[1], coef[2], coef[3], coef[4]])
}

/// Fit the EIS proposal for one area. The first iteration starts from the
/// prior and regresses with unit weights; later iterations weight by
/// `f pi / q` under the previous proposal.
pub fn eis_fit<R: Rng + ?Sized>(target: &AreaTarget, start: ProposalParams, cfg: &EisConfig, rng: &mut R) -> EisFit {
    // common random numbers, reused at every iteration
    let normals: Vec<f64> = (0..cfg.s0).map(|_| std_normal(rng)).collect();
    let uniforms: Vec<f64> = (0..cfg.s0)
        .map(|_| {
            let u: f64 = rng.random();
            u.clamp(1e-300, 1.0 - 1e-16)
        })
        .collect();

    let mut theta = start;
    let mut fit = EisFit {
        proposal: theta,
        iterations: 0,
        converged: false,
        singular_fallbacks: 0,
        damped_steps: 0,
        last_system: None,
    };

    for iter in 1..=cfg.max_iter {
        fit.iterations = iter;
        let sd = theta.theta2.sqrt();
        let draws: Vec<RandomEffects> = normals
            .iter()
            .zip(&uniforms)
            .map(|(&e, &u)| RandomEffects {
                b: theta.theta1 + sd * e,
                sigma2: theta.theta4 / gamma_p_inv(theta.theta3, u),
            })
            .collect();
        let (cn, cg) = theta.constants();

        let mut kept = Vec::with_capacity(cfg.s0);
        let mut response = Vec::with_capacity(cfg.s0);
        let mut log_w = Vec::with_capacity(cfg.s0);
        for &u in &draws {
            if !(u.sigma2 > 0.0 && u.sigma2.is_finite()) {
                continue;
            }
            let f = target.log_target(u);
            if f.is_finite() {
                kept.push(u);
                response.push(f);
                log_w.push(f - theta.log_density_with(u, cn, cg));
            }
        }
        if kept.len() < 10 {
            fit.singular_fallbacks += 1;
            fit.last_system = None;
            break;
        }
        let weights = if iter == 1 {
            vec![1.0; kept.len()]
        } else {
            let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            log_w.iter().map(|lw| (lw - max).exp()).collect()
        };

        let coef = match gls_natural_params(&kept, &weights, &response) {
            Ok(c) => c,
            Err(_) => {
                fit.singular_fallbacks += 1;
                fit.last_system = None;
                break;
            }
        };
        let proposed = [coef[1], coef[2], coef[3], coef[4]];
        let (next, damped) = match ProposalParams::from_natural(proposed) {
            Some(p) => (p, false),
            None => {
                let prev = theta.natural();
                let mut found = None;
                for k in 1..=cfg.max_halvings {
                    let f = 0.5f64.powi(k as i32);
                    let trial: [f64; 4] = std::array::from_fn(|j| prev[j] + f * (proposed[j] - prev[j]));
                    if let Some(p) = ProposalParams::from_natural(trial) {
                        found = Some(p);
                        break;
                    }
                }
                (found.unwrap_or(theta), true)
            }
        };
        if damped {
            fit.damped_steps += 1;
        }
        fit.last_system = (!damped).then_some(GlsSystem {
            draws: kept,
            weights,
            response,
        });

        let prev = theta.as_array();
        let now = next.as_array();
        let num = prev.iter().zip(&now).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den = prev.iter().map(|a| a * a).sum::<f64>().sqrt();
        theta = next;
        fit.proposal = theta;
        if iter > 1 && num / den < cfg.tol {
            fit.converged = true;
            break;
        }
    }
    fit
}

/// Self-normalized importance weights from log weights (max-subtracted).
pub fn normalized_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Some(w.into_iter().map(|v| v / total).collect())
}

/// Kish effective sample size `(sum w)^2 / sum w^2`.
pub fn kish_ess(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    s * s / s2
}

#[derive(Debug, Clone)]
pub struct WeightedDraws {
    pub draws: Vec<RandomEffects>,
    pub log_weights: Vec<f64>,
    pub ess: f64,
}

/// Multinomial resampling of `count` indices with the given probabilities.
pub fn resample_indices<R: Rng + ?Sized>(probs: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let dist = WeightedIndex::new(probs).expect("resampling weights must be valid");
    (0..count).map(|_| dist.sample(rng)).collect()
}

/// Draw `s1` values from the proposal, weight them by `f pi / q` and resample `s2`.
pub fn sir<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    target: &AreaTarget,
    proposal: &ProposalParams,
    s1: usize,
    s2: usize,
    draw_rng: &mut R1,
    resample_rng: &mut R2,
) -> Result<(Vec<RandomEffects>, WeightedDraws)> {
    let draws: Vec<RandomEffects> = (0..s1).map(|_| proposal.sample(draw_rng)).collect();
    let (cn, cg) = proposal.constants();
    let log_weights: Vec<f64> = draws
        .iter()
        .map(|&u| {
            let f = target.log_target(u);
            if f == f64::NEG_INFINITY {
                f
            } else {
                f - proposal.log_density_with(u, cn, cg)
            }
        })
        .collect();
    let probs = normalized_weights(&log_weights).ok_or_else(|| SaeError::WeightCollapse {
        area: target.id.to_string(),
    })?;
    let ess = kish_ess(&probs);
    let resampled = resample_indices(&probs, s2, resample_rng)
        .into_iter()
        .map(|i| draws[i])
        .collect();
    Ok((
        resampled,
        WeightedDraws {
            draws,
            log_weights,
            ess,
        },
    ))
}

/// Importance-sampling estimate of `log int f(y|u) pi(u) du` and its
/// delta-method standard error.
pub fn log_marginal_is<R: Rng + ?Sized>(
    target: &AreaTarget,
    proposal: &ProposalParams,
    draws: usize,
    rng: &mut R,
) -> (f64, f64) {
    let (cn, cg) = proposal.constants();
    let log_w: Vec<f64> = (0..draws)
        .map(|_| {
            let u = proposal.sample(rng);
            let f = target.log_target(u);
            if f == f64::NEG_INFINITY {
                f
            } else {
                f - proposal.log_density_with(u, cn, cg)
            }
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let w: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (max + mean.ln(), (var / n).sqrt() / mean)
}
