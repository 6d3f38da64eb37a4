//! Monte Carlo EM for the hyperparameters.
//!
//! Each iteration fits an importance sampler per area, resamples posterior
//! draws of `(b, sigma2)`, and maximizes the Monte Carlo complete-data
//! log-likelihood block by block: `tau2` in closed form, `(beta, kappa)` by
//! Newton ascent and `(gamma, log lambda)` by Nelder-Mead. Convergence is
//! judged on windowed means of the iterates.

mod convergence;
mod init;

pub use convergence::{check_convergence, window_mean, windowed_estimate, BlockErrors, ConvergenceCheck, BLOCKS};
pub use init::{initial_values, local_mle, log_midpoint_moments, InitOptions, LocalFit, FALLBACK_LAMBDA, LOCAL_KAPPA_BOUND};

use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{dot, validate_areas, AreaRecord, GroupedSample, Hyperparameters, RandomEffects};
use crate::eis::{eis_fit, log_marginal_is, sir, AreaTarget, EisConfig, ProposalParams};
use crate::error::{Result, SaeError};
use crate::likelihood::{AreaLikelihood, Grouping, LogPmfDerivs};
use crate::optim::{NelderMead, Newton};
use crate::rng::{Purpose, StreamKey};
use crate::special::ln_gamma;

/// Largest `|kappa|` the M-step will consider.
pub const KAPPA_BOUND: f64 = 3.0;
const LOG_LAMBDA_RANGE: (f64, f64) = (-10.0, 20.0);

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub s0: usize,
    pub s1: usize,
    pub s2: usize,
    pub window_h: usize,
    pub window_d: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub max_em_iter: usize,
    pub seed: u64,
    pub eis_max_iter: usize,
    pub nm_ftol: f64,
    pub nm_max_evals: usize,
    /// Hold `kappa` at this value instead of estimating it.
    pub fix_kappa: Option<f64>,
    pub init: InitOptions,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            s0: 100,
            s1: 10_000,
            s2: 500,
            window_h: 30,
            window_d: 5,
            delta: 1e-3,
            epsilon: 1e-3,
            max_em_iter: 200,
            seed: 1,
            eis_max_iter: 50,
            nm_ftol: 1e-8,
            nm_max_evals: 500,
            fix_kappa: None,
            init: InitOptions::default(),
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s0 < 10 {
            return Err(SaeError::Invalid(format!("s0 must be at least 10, got {}", self.s0)));
        }
        if self.s2 == 0 || self.s1 < self.s2 {
            return Err(SaeError::Invalid(format!(
                "need s1 >= s2 >= 1, got s1={} s2={}",
                self.s1, self.s2
            )));
        }
        if self.window_h == 0 || self.window_d == 0 {
            return Err(SaeError::Invalid("window sizes H and d must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.epsilon > 0.0) {
            return Err(SaeError::Invalid("delta and epsilon must be positive".into()));
        }
        if self.max_em_iter == 0 {
            return Err(SaeError::Invalid("max_em_iter must be at least 1".into()));
        }
        Ok(())
    }

    fn eis(&self) -> EisConfig {
        EisConfig {
            s0: self.s0,
            max_iter: self.eis_max_iter,
            ..EisConfig::default()
        }
    }

    fn optimizer(&self) -> NelderMead {
        NelderMead {
            ftol_abs: self.nm_ftol,
            max_evals: self.nm_max_evals,
            ..NelderMead::default()
        }
    }
}

/// One EM iteration as recorded in the fit trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub psi: Hyperparameters,
    #[serde(default)]
    pub errors: Option<BlockErrors>,
    /// quantiles of ESS / S1 across areas
    pub ess_q10: f64,
    pub ess_q50: f64,
    pub ess_q90: f64,
    /// areas whose importance sampler hit the iteration cap
    #[serde(default)]
    pub eis_unconverged: usize,
}

/// Resampled posterior draws of one in-sample area.
#[derive(Debug, Clone)]
pub struct AreaDraws {
    /// index into the full area list
    pub area: usize,
    pub draws: Vec<RandomEffects>,
    /// ESS / S1 of the importance weights
    pub ess_ratio: f64,
    pub proposal: ProposalParams,
    pub eis_converged: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// windowed-mean estimate
    pub psi: Hyperparameters,
    pub converged: bool,
    pub iterations: usize,
    pub initial: Hyperparameters,
    /// raw iterates, one per EM iteration
    pub history: Vec<Hyperparameters>,
    pub trace: Vec<TraceRecord>,
    /// ESS / S1 per iteration and in-sample area
    pub area_ess: Vec<Vec<f64>>,
}

fn sampled(areas: &[AreaRecord]) -> Vec<(usize, &AreaRecord, &GroupedSample)> {
    areas
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.sample.as_ref().map(|s| (i, a, s)))
        .collect()
}

/// E-step: per-area EIS fit and SIR draws under `psi`.
pub fn e_step(
    areas: &[AreaRecord],
    psi: &Hyperparameters,
    grouping: &Grouping,
    cfg: &EmConfig,
    iteration: usize,
) -> Result<Vec<AreaDraws>> {
    let eis_cfg = cfg.eis();
    sampled(areas)
        .into_par_iter()
        .map(|(i, area, y)| {
            let target = AreaTarget::new(&area.id, y, &area.x, psi, grouping);
            let prior = ProposalParams::prior(psi, &area.x);
            let key = |p| StreamKey::new(p).area(i).iteration(iteration);
            let mut eis_rng = key(Purpose::EisProposal).rng(cfg.seed);
            let fit = eis_fit(&target, prior, &eis_cfg, &mut eis_rng);
            if !fit.converged {
                debug!("area {}: EIS stopped after {} iterations", area.id, fit.iterations);
            }
            let mut draw_rng = key(Purpose::SirDraws).rng(cfg.seed);
            let mut resample_rng = key(Purpose::SirResample).rng(cfg.seed);
            let (draws, diag) = sir(&target, &fit.proposal, cfg.s1, cfg.s2, &mut draw_rng, &mut resample_rng)?;
            Ok(AreaDraws {
                area: i,
                draws,
                ess_ratio: diag.ess / cfg.s1 as f64,
                proposal: fit.proposal,
                eis_converged: fit.converged,
            })
        })
        .collect()
}

/// Closed-form update: the mean of `b^2` over all areas and draws.
pub fn update_tau2(draws: &[AreaDraws]) -> f64 {
    let per_area: Vec<f64> = draws
        .iter()
        .map(|a| a.draws.iter().map(|u| u.b * u.b).sum::<f64>() / a.draws.len() as f64)
        .collect();
    per_area.iter().sum::<f64>() / per_area.len() as f64
}

struct PreparedArea<'a> {
    lik: AreaLikelihood<'a>,
    x: &'a [f64],
    b: Vec<f64>,
    sd: Vec<f64>,
}

/// Monte Carlo average of `sum_i log f(y_i | u_i)` per sampled unit, as a
/// function of `(beta, kappa)` with the draws held fixed.
pub struct BetaKappaObjective<'a> {
    areas: Vec<PreparedArea<'a>>,
    grouping: &'a Grouping,
    scale: f64,
}

impl<'a> BetaKappaObjective<'a> {
    pub fn new(areas: &'a [AreaRecord], draws: &[AreaDraws], grouping: &'a Grouping) -> Self {
        let mut units = 0u64;
        let mut count = 0usize;
        let prepared: Vec<PreparedArea<'a>> = draws
            .iter()
            .map(|d| {
                let area = &areas[d.area];
                let y = area.sample.as_ref().expect("draws belong to in-sample areas");
                units += y.n();
                count = d.draws.len();
                PreparedArea {
                    lik: AreaLikelihood::new(y),
                    x: &area.x,
                    b: d.draws.iter().map(|u| u.b).collect(),
                    sd: d.draws.iter().map(|u| u.sigma2.sqrt()).collect(),
                }
            })
            .collect();
        BetaKappaObjective {
            areas: prepared,
            grouping,
            scale: 1.0 / (units.max(1) as f64 * count.max(1) as f64),
        }
    }

    /// Average log-likelihood per unit; `-inf` if any draw makes an occupied class impossible.
    pub fn value(&self, beta: &[f64], kappa: f64) -> f64 {
        let bounds = self.grouping.bounds(kappa);
        let renormalize = self.grouping.renormalize;
        let parts: Vec<f64> = self
            .areas
            .par_iter()
            .map(|a| {
                let base = dot(a.x, beta);
                let mut acc = 0.0;
                for (b, sd) in a.b.iter().zip(&a.sd) {
                    let l = a.lik.log_pmf(&bounds, base + b, *sd, renormalize);
                    if l == f64::NEG_INFINITY {
                        return l;
                    }
                    acc += l;
                }
                acc
            })
            .collect();
        parts.iter().sum::<f64>() * self.scale
    }

    /// Value, gradient and Hessian in `(beta, kappa)`, or in `beta` alone
    /// when `with_kappa` is false.
    pub fn derivatives(&self, beta: &[f64], kappa: f64, with_kappa: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
        let p = beta.len();
        let k = p + usize::from(with_kappa);
        let bounds = self.grouping.bounds_with_derivs(kappa);
        let renormalize = self.grouping.renormalize;
        let parts: Vec<LogPmfDerivs> = self
            .areas
            .par_iter()
            .map(|a| {
                let base = dot(a.x, beta);
                let mut acc = LogPmfDerivs::default();
                for (b, sd) in a.b.iter().zip(&a.sd) {
                    let d = a.lik.log_pmf_derivs(&bounds, base + b, *sd, renormalize);
                    acc.value += d.value;
                    acc.d_mu += d.d_mu;
                    acc.d_kappa += d.d_kappa;
                    acc.d_mu_mu += d.d_mu_mu;
                    acc.d_mu_kappa += d.d_mu_kappa;
                    acc.d_kappa_kappa += d.d_kappa_kappa;
                }
                acc
            })
            .collect();
        let mut value = 0.0;
        let mut grad = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        for (a, d) in self.areas.iter().zip(&parts) {
            value += d.value;
            for i in 0..p {
                grad[i] += a.x[i] * d.d_mu;
                for j in 0..p {
                    hess[(i, j)] += a.x[i] * a.x[j] * d.d_mu_mu;
                }
                if with_kappa {
                    hess[(i, p)] += a.x[i] * d.d_mu_kappa;
                    hess[(p, i)] += a.x[i] * d.d_mu_kappa;
                }
            }
            if with_kappa {
                grad[p] += d.d_kappa;
                hess[(p, p)] += d.d_kappa_kappa;
            }
        }
        (value * self.scale, grad * self.scale, hess * self.scale)
    }
}

/// Maximize the `(beta, kappa)` block from `psi_prev`: Newton ascent with
/// analytic derivatives, Nelder-Mead if Newton cannot make progress.
pub fn update_beta_kappa(
    areas: &[AreaRecord],
    draws: &[AreaDraws],
    psi_prev: &Hyperparameters,
    grouping: &Grouping,
    cfg: &EmConfig,
) -> Result<(Vec<f64>, f64)> {
    let objective = BetaKappaObjective::new(areas, draws, grouping);
    let p = psi_prev.beta.len();
    let start_value = objective.value(&psi_prev.beta, cfg.fix_kappa.unwrap_or(psi_prev.kappa));
    if !start_value.is_finite() {
        return Err(SaeError::NonFiniteObjective(format!(
            "(beta, kappa) objective is {start_value} at the previous iterate"
        )));
    }
    let split = |v: &[f64]| -> (Vec<f64>, f64) {
        match cfg.fix_kappa {
            Some(k) => (v.to_vec(), k),
            None => (v[..p].to_vec(), v[p]),
        }
    };
    let feasible = |v: &[f64]| cfg.fix_kappa.is_some() || v[p].abs() <= KAPPA_BOUND;
    let mut x0 = psi_prev.beta.clone();
    if cfg.fix_kappa.is_none() {
        x0.push(psi_prev.kappa);
    }
    let value = |v: &[f64]| {
        if !feasible(v) {
            return f64::NEG_INFINITY;
        }
        let (beta, kappa) = split(v);
        objective.value(&beta, kappa)
    };

    let newton = Newton {
        decrement_tol: cfg.nm_ftol * 1e-4,
        ..Newton::default()
    };
    let with_kappa = cfg.fix_kappa.is_none();
    let result = newton.maximize(
        value,
        |v| {
            if !feasible(v) {
                let k = v.len();
                return (f64::NEG_INFINITY, DVector::zeros(k), DMatrix::zeros(k, k));
            }
            let (beta, kappa) = split(v);
            objective.derivatives(&beta, kappa, with_kappa)
        },
        &x0,
    );
    if let Some(best) = result.filter(|m| m.converged) {
        debug!("(beta, kappa) Newton: {} iterations", best.iterations);
        return Ok(split(&best.x));
    }
    let best = cfg.optimizer().minimize(|v| -value(v), &x0);
    debug!("(beta, kappa) simplex fallback: {} evaluations, converged={}", best.evals, best.converged);
    Ok(split(&best.x))
}

/// Per-area sufficient statistics of the `sigma2` draws: means of `log sigma2` and `1/sigma2`.
#[derive(Debug, Clone)]
pub struct DispersionStats {
    pub x: Vec<Vec<f64>>,
    pub mean_log: Vec<f64>,
    pub mean_inv: Vec<f64>,
}

impl DispersionStats {
    pub fn new(areas: &[AreaRecord], draws: &[AreaDraws]) -> Self {
        let mut stats = DispersionStats {
            x: Vec::with_capacity(draws.len()),
            mean_log: Vec::with_capacity(draws.len()),
            mean_inv: Vec::with_capacity(draws.len()),
        };
        for d in draws {
            let s = d.draws.len() as f64;
            stats.x.push(areas[d.area].x.clone());
            stats.mean_log.push(d.draws.iter().map(|u| u.sigma2.ln()).sum::<f64>() / s);
            stats.mean_inv.push(d.draws.iter().map(|u| 1.0 / u.sigma2).sum::<f64>() / s);
        }
        stats
    }

    /// Average over areas of the Monte Carlo mean inverse gamma log density.
    pub fn value(&self, gamma: &[f64], lambda: f64) -> f64 {
        let shape = lambda / 2.0 + 1.0;
        let lg = ln_gamma(shape);
        let total: f64 = self
            .x
            .iter()
            .zip(self.mean_log.iter().zip(&self.mean_inv))
            .map(|(x, (&l, &r))| {
                let scale = lambda * dot(x, gamma).exp() / 2.0;
                shape * scale.ln() - lg - (shape + 1.0) * l - scale * r
            })
            .sum();
        total / self.x.len() as f64
    }
}

/// Maximize the `(gamma, lambda)` block over `(gamma, log lambda)`.
pub fn update_gamma_lambda(stats: &DispersionStats, psi_prev: &Hyperparameters, cfg: &EmConfig) -> Result<(Vec<f64>, f64)> {
    let p = psi_prev.gamma.len();
    let start = stats.value(&psi_prev.gamma, psi_prev.lambda);
    if !start.is_finite() {
        return Err(SaeError::NonFiniteObjective(format!(
            "(gamma, lambda) objective is {start} at the previous iterate"
        )));
    }
    let mut x0 = psi_prev.gamma.clone();
    x0.push(psi_prev.lambda.ln());
    let best = cfg.optimizer().minimize(
        |v| {
            if !(LOG_LAMBDA_RANGE.0..LOG_LAMBDA_RANGE.1).contains(&v[p]) {
                return f64::INFINITY;
            }
            -stats.value(&v[..p], v[p].exp())
        },
        &x0,
    );
    Ok((best.x[..p].to_vec(), best.x[p].exp()))
}

/// M-step from the E-step draws, warm-started at `psi_prev`.
pub fn m_step(
    areas: &[AreaRecord],
    draws: &[AreaDraws],
    psi_prev: &Hyperparameters,
    grouping: &Grouping,
    cfg: &EmConfig,
) -> Result<Hyperparameters> {
    let tau2 = update_tau2(draws);
    let (beta, kappa) = update_beta_kappa(areas, draws, psi_prev, grouping, cfg)?;
    let (gamma, lambda) = update_gamma_lambda(&DispersionStats::new(areas, draws), psi_prev, cfg)?;
    Ok(Hyperparameters {
        beta,
        tau2,
        lambda,
        kappa,
        gamma,
    })
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Fit the hyperparameters, starting from [`initial_values`].
pub fn fit(areas: &[AreaRecord], grouping: &Grouping, cfg: &EmConfig) -> Result<FitResult> {
    validate_areas(areas, &grouping.thresholds)?;
    let mut start = initial_values(areas, grouping, cfg.init)?;
    if let Some(k) = cfg.fix_kappa {
        start.kappa = k;
    }
    fit_from(areas, grouping, cfg, start)
}

/// Fit the hyperparameters from a given starting point.
pub fn fit_from(areas: &[AreaRecord], grouping: &Grouping, cfg: &EmConfig, start: Hyperparameters) -> Result<FitResult> {
    cfg.validate()?;
    let p = validate_areas(areas, &grouping.thresholds)?;
    start.validate(p)?;
    if !areas.iter().any(|a| a.in_sample()) {
        return Err(SaeError::Invalid("no in-sample areas to fit".into()));
    }
    info!("EM start: {start:?}");
    let mut psi = start.clone();
    let mut history = Vec::new();
    let mut trace = Vec::new();
    let mut area_ess = Vec::new();
    let mut converged = false;

    for iter in 1..=cfg.max_em_iter {
        let started = Instant::now();
        let draws = e_step(areas, &psi, grouping, cfg, iter)?;
        let e_time = started.elapsed();
        psi = m_step(areas, &draws, &psi, grouping, cfg)?;
        let m_time = started.elapsed() - e_time;
        psi.validate(p)?;
        history.push(psi.clone());

        let ess: Vec<f64> = draws.iter().map(|d| d.ess_ratio).collect();
        let check = check_convergence(&history, cfg.window_h, cfg.window_d, cfg.delta, cfg.epsilon);
        let record = TraceRecord {
            iter,
            psi: psi.clone(),
            errors: check.errors,
            ess_q10: quantile(&ess, 0.1),
            ess_q50: quantile(&ess, 0.5),
            ess_q90: quantile(&ess, 0.9),
            eis_unconverged: draws.iter().filter(|d| !d.eis_converged).count(),
        };
        debug!(
            "EM {iter} (E {:.2?}, M {:.2?}): beta={:?} tau2={:.5} kappa={:.5} lambda={:.4} gamma={:?} max e={:?}",
            e_time,
            m_time,
            psi.beta,
            psi.tau2,
            psi.kappa,
            psi.lambda,
            psi.gamma,
            check.errors.map(|e| e.max())
        );
        trace.push(record);
        area_ess.push(ess);
        if check.converged {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("EM did not converge in {} iterations", cfg.max_em_iter);
    }
    let estimate = windowed_estimate(&history, cfg.window_h);
    Ok(FitResult {
        psi: estimate,
        converged,
        iterations: history.len(),
        initial: start,
        history,
        trace,
        area_ess,
    })
}

/// Importance-sampling estimate of the marginal log-likelihood at `psi` and
/// its standard error, summed over in-sample areas.
pub fn marginal_loglik(
    areas: &[AreaRecord],
    psi: &Hyperparameters,
    grouping: &Grouping,
    s0: usize,
    draws: usize,
    seed: u64,
) -> (f64, f64) {
    let eis_cfg = EisConfig {
        s0,
        ..EisConfig::default()
    };
    let parts: Vec<(f64, f64)> = sampled(areas)
        .into_par_iter()
        .map(|(i, area, y)| {
            let target = AreaTarget::new(&area.id, y, &area.x, psi, grouping);
            let mut rng = StreamKey::new(Purpose::MarginalLikelihood).area(i).rng(seed);
            let fit = eis_fit(&target, ProposalParams::prior(psi, &area.x), &eis_cfg, &mut rng);
            log_marginal_is(&target, &fit.proposal, draws, &mut rng)
        })
        .collect();
    let value = parts.iter().map(|p| p.0).sum();
    let se = parts.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
    (value, se)
}
