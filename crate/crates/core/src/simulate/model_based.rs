//! Model-based study: populations drawn from the model at known
//! hyperparameters, refitted in every replicate.

use log::info;
use rayon::prelude::*;

use super::{score_replicate, RelativeErrors, RrmseTable};
use crate::datamodel::{AreaRecord, Hyperparameters, Thresholds};
use crate::error::{Result, SaeError};
use crate::estimator::{EstimationContext, EstimatorRegistry};
use crate::likelihood::Grouping;
use crate::mcem::{fit, EmConfig};
use crate::population::draw_area_population;
use crate::rng::{derive_seed, Purpose, StreamKey};
use crate::sampling::std_normal;

#[derive(Debug, Clone)]
pub struct ModelBasedConfig {
    pub m: usize,
    pub n_pop: usize,
    /// sample sizes assigned to equal consecutive blocks of areas
    pub n_pattern: Vec<u64>,
    pub thresholds: Thresholds,
    pub psi_true: Hyperparameters,
    /// one row per area; synthetic when `None`
    pub covariates: Option<Vec<Vec<f64>>>,
    pub replicates: usize,
    pub seed: u64,
    pub em: EmConfig,
}

/// Sample sizes `10, 50, 100, 150, 200`.
pub fn default_n_pattern() -> Vec<u64> {
    vec![10, 50, 100, 150, 200]
}

/// Synthetic stand-in for fitted real-data hyperparameters with `p`
/// covariates (intercept first). Not estimated from any data set.
pub fn synthetic_psi(p: usize) -> Hyperparameters {
    let pick = |base: &[f64]| (0..p).map(|j| base.get(j).copied().unwrap_or(0.0)).collect();
    Hyperparameters {
        beta: pick(&[1.4, 0.1, -0.05]),
        tau2: 0.02,
        lambda: 20.0,
        kappa: 0.2,
        gamma: pick(&[0.6f64.ln(), 0.05, 0.0]),
    }
}

/// Intercept plus `p - 1` standard normal columns.
pub fn synthetic_covariates(m: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..m)
        .map(|i| {
            let mut rng = StreamKey::new(Purpose::SimCovariates).area(i).rng(seed);
            let mut x = vec![1.0];
            x.extend((1..p).map(|_| std_normal(&mut rng)));
            x
        })
        .collect()
}

/// Sample size of area `i` under equal blocks of `pattern`.
fn block_size(pattern: &[u64], i: usize, m: usize) -> u64 {
    pattern[i * pattern.len() / m]
}

impl ModelBasedConfig {
    pub fn sample_sizes(&self) -> Vec<u64> {
        (0..self.m).map(|i| block_size(&self.n_pattern, i, self.m)).collect()
    }

    fn validate(&self) -> Result<Vec<Vec<f64>>> {
        if self.m == 0 || self.replicates == 0 || self.n_pattern.is_empty() {
            return Err(SaeError::Invalid("m, R and the n pattern must be non-empty".into()));
        }
        if let Some(&n) = self.n_pattern.iter().find(|&&n| n == 0 || n as usize > self.n_pop) {
            return Err(SaeError::Invalid(format!(
                "sample size {n} must lie in 1..={}",
                self.n_pop
            )));
        }
        let x = match &self.covariates {
            Some(x) => x.clone(),
            None => synthetic_covariates(self.m, self.psi_true.p(), self.seed),
        };
        if x.len() != self.m {
            return Err(SaeError::Arity {
                what: "covariate rows".into(),
                expected: self.m,
                found: x.len(),
            });
        }
        self.psi_true.validate(self.psi_true.p())?;
        if let Some(row) = x.iter().find(|r| r.len() != self.psi_true.p()) {
            return Err(SaeError::Arity {
                what: "covariates".into(),
                expected: self.psi_true.p(),
                found: row.len(),
            });
        }
        Ok(x)
    }
}

/// One replicate: populations, samples, truths.
fn draw_replicate(cfg: &ModelBasedConfig, x: &[Vec<f64>], sizes: &[u64], grouping: &Grouping, r: usize) -> (Vec<AreaRecord>, Vec<f64>) {
    let h = grouping.transform(cfg.psi_true.kappa);
    (0..cfg.m)
        .map(|i| {
            let mut rng = StreamKey::new(Purpose::SimPopulation)
                .area(i)
                .replicate(r)
                .rng(cfg.seed);
            let (_, pop) = draw_area_population(&cfg.psi_true, &x[i], cfg.n_pop, &h, &mut rng);
            let area = AreaRecord {
                id: format!("area{}", i + 1),
                x: x[i].clone(),
                n_pop: cfg.n_pop as u64,
                sample: Some(pop.sample_first(sizes[i] as usize, &cfg.thresholds)),
            };
            (area, pop.mean())
        })
        .unzip()
}

/// Refit and score every replicate; rows are in area order.
pub fn simulate_model_based(cfg: &ModelBasedConfig, registry: &EstimatorRegistry) -> Result<RrmseTable> {
    let x = cfg.validate()?;
    let sizes = cfg.sample_sizes();
    let grouping = Grouping::new(cfg.thresholds.clone());
    let per_replicate: Vec<Vec<Vec<f64>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let (areas, truths) = draw_replicate(cfg, &x, &sizes, &grouping, r);
            let em = EmConfig {
                seed: derive_seed(cfg.seed, StreamKey::new(Purpose::SimFit).replicate(r)),
                ..cfg.em.clone()
            };
            let fitted = fit(&areas, &grouping, &em)?;
            info!(
                "replicate {}: {} EM iterations, converged={}",
                r + 1,
                fitted.iterations,
                fitted.converged
            );
            let ctx = EstimationContext {
                psi: &fitted.psi,
                grouping: &grouping,
            };
            score_replicate(&areas, &truths, &ctx, registry, cfg.seed, r)
        })
        .collect::<Result<_>>()?;
    let mut acc = RelativeErrors::new(cfg.m, registry.len());
    for errors in &per_replicate {
        acc.add(errors);
    }
    Ok(acc.into_table(registry.names(), &sizes, cfg.thresholds.groups()))
}
