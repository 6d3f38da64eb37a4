//! Empirical Bayes prediction of area means and Gini coefficients.
//!
//! For an in-sample area the sampler augments the grouped sample with latent
//! unit values on the transformed scale: sampled units are truncated to their
//! class interval, non-sampled units are free. A sweep updates `mu`, the
//! sampled units, the non-sampled units and `sigma2` in that order. Each kept
//! state is mapped back through the inverse transform and summarized.

use rand::Rng;

use crate::baseline::gini_sorted;
use crate::datamodel::{AreaRecord, Hyperparameters};
use crate::error::{Result, SaeError};
use crate::likelihood::Grouping;
use crate::population::{draw_effects, draw_latent};
use crate::sampling::{inv_gamma, std_normal, truncated_normal};
use crate::transform::BoxCox;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsConfig {
    /// kept sweeps
    pub iterations: usize,
    pub burnin: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            iterations: 500,
            burnin: 50,
        }
    }
}

/// One state of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub mu: f64,
    pub sigma2: f64,
    /// sampled units, grouped by class in increasing order
    pub v_in: Vec<f64>,
    pub v_out: Vec<f64>,
}

/// Point predictions for one area.
#[derive(Debug, Clone, PartialEq)]
pub struct EbEstimate {
    pub area_id: String,
    pub in_sample: bool,
    pub mean_eb: f64,
    pub gini_eb: f64,
    pub draws_used: usize,
    pub clamped_draws: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    start: usize,
    end: usize,
    lower: f64,
    upper: f64,
}

/// Full-conditional sampler for one in-sample area at fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct GibbsSampler {
    id: String,
    blocks: Vec<Block>,
    transform: BoxCox,
    prior_mean: f64,
    tau2: f64,
    lambda: f64,
    lambda_phi: f64,
    n_pop: usize,
    n: usize,
}

impl GibbsSampler {
    pub fn new(area: &AreaRecord, psi: &Hyperparameters, grouping: &Grouping) -> Result<Self> {
        let y = area
            .sample
            .as_ref()
            .ok_or_else(|| SaeError::Invalid(format!("area {} has no sample", area.id)))?;
        if y.groups() != grouping.groups() {
            return Err(SaeError::Arity {
                what: format!("counts of area {}", area.id),
                expected: grouping.groups(),
                found: y.groups(),
            });
        }
        let n = y.n() as usize;
        let n_pop = area.n_pop as usize;
        if n_pop < n {
            return Err(SaeError::Invalid(format!(
                "area {}: sample size {n} exceeds population size {n_pop}",
                area.id
            )));
        }
        let bounds = grouping.bounds(psi.kappa);
        let mut blocks = Vec::new();
        let mut start = 0;
        for (g, &count) in y.counts().iter().enumerate() {
            let end = start + count as usize;
            if count > 0 {
                blocks.push(Block {
                    start,
                    end,
                    lower: bounds[g],
                    upper: bounds[g + 1],
                });
            }
            start = end;
        }
        Ok(GibbsSampler {
            id: area.id.clone(),
            blocks,
            transform: grouping.transform(psi.kappa),
            prior_mean: psi.mean_of(&area.x),
            tau2: psi.tau2,
            lambda: psi.lambda,
            lambda_phi: psi.lambda * psi.phi(&area.x),
            n_pop,
            n,
        })
    }

    pub fn transform(&self) -> BoxCox {
        self.transform
    }

    /// Deterministic start: `mu = x'beta`, `sigma2 = phi`, sampled units at
    /// their interval midpoints (one prior sd inside an open end) and
    /// non-sampled units at `mu`.
    pub fn initial_state(&self) -> PosteriorDraw {
        let mu = self.prior_mean;
        let sigma2 = self.lambda_phi / self.lambda;
        let sd = sigma2.sqrt();
        let mut v_in = vec![0.0; self.n];
        for b in &self.blocks {
            let start = match (b.lower.is_finite(), b.upper.is_finite()) {
                (true, true) => 0.5 * (b.lower + b.upper),
                (false, true) => b.upper - sd,
                (true, false) => b.lower + sd,
                (false, false) => mu,
            };
            v_in[b.start..b.end].fill(start);
        }
        PosteriorDraw {
            mu,
            sigma2,
            v_in,
            v_out: vec![mu; self.n_pop - self.n],
        }
    }

    /// Mean and variance of `mu` given `sigma2` and the sum of all `N` latent values.
    pub fn mu_conditional(&self, sigma2: f64, sum_v: f64) -> (f64, f64) {
        let big_n = self.n_pop as f64;
        let denom = sigma2 + big_n * self.tau2;
        (
            (sigma2 * self.prior_mean + self.tau2 * sum_v) / denom,
            self.tau2 * sigma2 / denom,
        )
    }

    /// Shape and scale of `sigma2` given the residual sum of squares over all `N` values.
    pub fn sigma2_conditional(&self, ss: f64) -> (f64, f64) {
        (
            (self.n_pop as f64 + self.lambda) / 2.0 + 1.0,
            0.5 * (self.lambda_phi + ss),
        )
    }

    /// One sweep in the order `mu`, sampled units, non-sampled units, `sigma2`.
    /// Returns the number of clamped non-sampled draws.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut PosteriorDraw, rng: &mut R) -> Result<usize> {
        let sum_v: f64 = state.v_in.iter().sum::<f64>() + state.v_out.iter().sum::<f64>();
        let (m, var) = self.mu_conditional(state.sigma2, sum_v);
        state.mu = m + var.sqrt() * std_normal(rng);

        let sd = state.sigma2.sqrt();
        for b in &self.blocks {
            for v in &mut state.v_in[b.start..b.end] {
                *v = truncated_normal(rng, state.mu, sd, b.lower, b.upper).ok_or_else(|| {
                    SaeError::TruncatedNormal {
                        area: self.id.clone(),
                        lower: b.lower,
                        upper: b.upper,
                        mean: state.mu,
                        sd,
                    }
                })?;
                assert!(
                    *v >= b.lower && *v < b.upper,
                    "latent value left its class interval"
                );
            }
        }

        let mut clamped = 0;
        for v in &mut state.v_out {
            let (draw, c) = draw_latent(&self.transform, state.mu, sd, rng);
            *v = draw;
            clamped += c as usize;
        }

        let ss: f64 = state
            .v_in
            .iter()
            .chain(&state.v_out)
            .map(|v| (v - state.mu).powi(2))
            .sum();
        let (shape, scale) = self.sigma2_conditional(ss);
        state.sigma2 = inv_gamma(rng, shape, scale);
        Ok(clamped)
    }
}

/// Mean and Gini of the back-transformed latent values; the Gini is `NaN`
/// when the values do not have a positive total.
pub fn summarize(h: &BoxCox, latent: impl Iterator<Item = f64>, buf: &mut Vec<f64>) -> (f64, f64) {
    buf.clear();
    buf.extend(latent.map(|v| h.inverse_unchecked(v)));
    let mean = buf.iter().sum::<f64>() / buf.len() as f64;
    buf.sort_by(f64::total_cmp);
    (mean, gini_sorted(buf).unwrap_or(f64::NAN))
}

/// EB estimates for an in-sample area from `burnin + iterations` sweeps.
pub fn eb_estimate<R: Rng + ?Sized>(
    area: &AreaRecord,
    psi: &Hyperparameters,
    grouping: &Grouping,
    cfg: &GibbsConfig,
    rng: &mut R,
) -> Result<EbEstimate> {
    if cfg.iterations == 0 {
        return Err(SaeError::Invalid("at least one kept Gibbs sweep is required".into()));
    }
    let sampler = GibbsSampler::new(area, psi, grouping)?;
    let h = sampler.transform();
    let mut state = sampler.initial_state();
    let mut clamped = 0;
    for _ in 0..cfg.burnin {
        clamped += sampler.step(&mut state, rng)?;
    }
    let mut buf = Vec::with_capacity(area.n_pop as usize);
    let (mut mean_sum, mut gini_sum) = (0.0, 0.0);
    for _ in 0..cfg.iterations {
        clamped += sampler.step(&mut state, rng)?;
        let (m, g) = summarize(&h, state.v_in.iter().chain(&state.v_out).copied(), &mut buf);
        mean_sum += m;
        gini_sum += g;
    }
    let k = cfg.iterations as f64;
    Ok(EbEstimate {
        area_id: area.id.clone(),
        in_sample: true,
        mean_eb: mean_sum / k,
        gini_eb: gini_sum / k,
        draws_used: cfg.iterations,
        clamped_draws: clamped,
    })
}

/// Monte Carlo prediction for an area without sample: effects from their
/// priors, then a full population per draw.
pub fn predict_out_of_sample<R: Rng + ?Sized>(
    area: &AreaRecord,
    psi: &Hyperparameters,
    grouping: &Grouping,
    draws: usize,
    rng: &mut R,
) -> Result<EbEstimate> {
    if draws == 0 {
        return Err(SaeError::Invalid("at least one draw is required".into()));
    }
    if area.n_pop == 0 {
        return Err(SaeError::Invalid(format!("area {} has an empty population", area.id)));
    }
    let h = grouping.transform(psi.kappa);
    let base = psi.mean_of(&area.x);
    let mut buf = Vec::with_capacity(area.n_pop as usize);
    let mut latent = Vec::with_capacity(area.n_pop as usize);
    let (mut mean_sum, mut gini_sum, mut clamped) = (0.0, 0.0, 0);
    for _ in 0..draws {
        let u = draw_effects(psi, &area.x, rng);
        let sd = u.sigma2.sqrt();
        latent.clear();
        for _ in 0..area.n_pop {
            let (v, c) = draw_latent(&h, base + u.b, sd, rng);
            clamped += c as usize;
            latent.push(v);
        }
        let (m, g) = summarize(&h, latent.iter().copied(), &mut buf);
        mean_sum += m;
        gini_sum += g;
    }
    Ok(EbEstimate {
        area_id: area.id.clone(),
        in_sample: false,
        mean_eb: mean_sum / draws as f64,
        gini_eb: gini_sum / draws as f64,
        draws_used: draws,
        clamped_draws: clamped,
    })
}

/// [`eb_estimate`] for in-sample areas, [`predict_out_of_sample`] otherwise.
pub fn estimate_area<R: Rng + ?Sized>(
    area: &AreaRecord,
    psi: &Hyperparameters,
    grouping: &Grouping,
    cfg: &GibbsConfig,
    rng: &mut R,
) -> Result<EbEstimate> {
    if area.in_sample() {
        eb_estimate(area, psi, grouping, cfg, rng)
    } else {
        predict_out_of_sample(area, psi, grouping, cfg.iterations, rng)
    }
}
