//! Starting values for the EM iterations, built from class midpoints and
//! per-area maximum likelihood under a local (area-only) model.

use log::warn;

use crate::baseline::Midpoints;
use crate::datamodel::{AreaRecord, GroupedSample, Hyperparameters};
use crate::error::{Result, SaeError};
use crate::likelihood::{AreaLikelihood, Grouping};
use crate::linalg::{lstsq_min_norm, ols};
use crate::optim::NelderMead;

/// Largest `|kappa|` explored by the local fits.
pub const LOCAL_KAPPA_BOUND: f64 = 2.0;
/// `lambda` used when the spread of local variances is undefined.
pub const FALLBACK_LAMBDA: f64 = 10.0;
const TAU2_FLOOR: f64 = 1e-4;
const SIGMA2_RANGE: (f64, f64) = (1e-6, 1e6);

/// Maximum likelihood fit of `h_kappa(z) ~ N(beta, sigma2)` to one area's counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFit {
    pub beta: f64,
    pub kappa: f64,
    pub sigma2: f64,
}

/// Mean and within-area variance of the log class midpoints.
pub fn log_midpoint_moments(y: &GroupedSample, logs: &[f64]) -> (f64, f64) {
    let n = y.n() as f64;
    let mean = y.counts().iter().zip(logs).map(|(&c, l)| c as f64 * l).sum::<f64>() / n;
    let var = y
        .counts()
        .iter()
        .zip(logs)
        .map(|(&c, l)| c as f64 * (l - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var)
}

fn log_midpoints(grouping: &Grouping) -> Vec<f64> {
    Midpoints::with_lower(&grouping.thresholds, grouping.shift)
        .values()
        .into_iter()
        .map(|c| (c - grouping.shift).ln())
        .collect()
}

/// Local-model MLE for one area; `None` when the area cannot identify it.
pub fn local_mle(y: &GroupedSample, grouping: &Grouping, start: LocalFit) -> Option<LocalFit> {
    if y.n() < 3 || y.occupied() < 2 {
        return None;
    }
    let lik = AreaLikelihood::new(y);
    let objective = |v: &[f64]| {
        let (beta, kappa, log_s2) = (v[0], v[1], v[2]);
        if kappa.abs() > LOCAL_KAPPA_BOUND || !(-30.0..30.0).contains(&log_s2) {
            return f64::INFINITY;
        }
        let bounds = grouping.bounds(kappa);
        -lik.log_pmf(&bounds, beta, (0.5 * log_s2).exp(), grouping.renormalize)
    };
    let nm = NelderMead {
        max_evals: 2000,
        rel_step: 0.1,
        zero_step: 0.1,
        ..NelderMead::default()
    };
    let x0 = [start.beta, start.kappa, start.sigma2.ln()];
    let mut best = nm.minimize(objective, &x0);
    // one restart from the first solution guards against early simplex collapse
    let again = nm.minimize(objective, &best.x);
    if again.f < best.f {
        best = again;
    }
    if !best.f.is_finite() {
        return None;
    }
    let fit = LocalFit {
        beta: best.x[0],
        kappa: best.x[1],
        sigma2: best.x[2].exp(),
    };
    let at_bound = fit.kappa.abs() > LOCAL_KAPPA_BOUND - 1e-3;
    let sane = fit.sigma2 > SIGMA2_RANGE.0 && fit.sigma2 < SIGMA2_RANGE.1 && fit.beta.is_finite();
    (sane && !at_bound).then_some(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InitOptions {
    /// Regress `log sigma2` instead of `sigma2` on the covariates for `gamma`.
    pub gamma_on_log: bool,
}

/// Starting hyperparameters from the in-sample areas.
pub fn initial_values(areas: &[AreaRecord], grouping: &Grouping, options: InitOptions) -> Result<Hyperparameters> {
    let sampled: Vec<(&AreaRecord, &GroupedSample)> = areas
        .iter()
        .filter_map(|a| a.sample.as_ref().map(|s| (a, s)))
        .collect();
    if sampled.is_empty() {
        return Err(SaeError::Invalid("no in-sample areas to fit".into()));
    }
    let logs = log_midpoints(grouping);
    let moments: Vec<(f64, f64)> = sampled
        .iter()
        .map(|(_, y)| log_midpoint_moments(y, &logs))
        .collect();
    let v: Vec<f64> = moments.iter().map(|m| m.0).collect();
    let rows: Vec<Vec<f64>> = sampled.iter().map(|(a, _)| a.x.clone()).collect();
    let m = rows.len() as f64;

    let beta = ols(&rows, &v)?;
    let resid2: f64 = rows
        .iter()
        .zip(&v)
        .map(|(x, vi)| (vi - crate::datamodel::dot(x, &beta)).powi(2))
        .sum();
    let tau2 = (resid2 / m).max(TAU2_FLOOR);

    let mut fits: Vec<(usize, LocalFit)> = Vec::new();
    for (i, ((area, y), &(mean, var))) in sampled.iter().zip(&moments).enumerate() {
        let start = LocalFit {
            beta: mean,
            kappa: 0.0,
            sigma2: var.max(0.01),
        };
        match local_mle(y, grouping, start) {
            Some(fit) => fits.push((i, fit)),
            None => warn!("area {}: local fit unavailable, excluded from starting moments", area.id),
        }
    }
    if fits.is_empty() {
        warn!("no area supports a local fit; using log-midpoint variances");
        fits = moments
            .iter()
            .enumerate()
            .map(|(i, &(mean, var))| {
                (
                    i,
                    LocalFit {
                        beta: mean,
                        kappa: 0.0,
                        sigma2: var.max(0.01),
                    },
                )
            })
            .collect();
    }

    let k = fits.len() as f64;
    let kappa = fits.iter().map(|(_, f)| f.kappa).sum::<f64>() / k;
    let s_mean = fits.iter().map(|(_, f)| f.sigma2).sum::<f64>() / k;
    let s_var = if fits.len() > 1 {
        fits.iter().map(|(_, f)| (f.sigma2 - s_mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    let lambda = if s_var > 0.0 {
        2.0 * (s_mean * s_mean / s_var + 1.0)
    } else {
        FALLBACK_LAMBDA
    };

    let sub_rows: Vec<Vec<f64>> = fits.iter().map(|(i, _)| rows[*i].clone()).collect();
    let response: Vec<f64> = fits
        .iter()
        .map(|(_, f)| if options.gamma_on_log { f.sigma2.ln() } else { f.sigma2 })
        .collect();
    let gamma = ols(&sub_rows, &response).unwrap_or_else(|_| lstsq_min_norm(&sub_rows, &response));

    let psi = Hyperparameters {
        beta,
        tau2,
        lambda,
        kappa,
        gamma,
    };
    psi.validate(rows[0].len())?;
    Ok(psi)
}
