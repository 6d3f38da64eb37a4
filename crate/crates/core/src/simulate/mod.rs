//! Repeated-sampling studies scoring the registered estimators by relative
//! root mean squared error (RRMSE).

mod design_based;
mod model_based;

use rayon::prelude::*;

use crate::datamodel::AreaRecord;
use crate::error::Result;
use crate::estimator::{EstimationContext, EstimatorRegistry};
use crate::rng::{Purpose, StreamKey};

pub use design_based::{
    build_population, load_domain_covariates, load_units, resolve_shift, simulate_design_based, srswor, synth_population,
    write_domain_covariates, write_units, DesignBasedConfig, DomainUnits, SyntheticPopulation,
};
pub use model_based::{default_n_pattern, simulate_model_based, synthetic_covariates, synthetic_psi, ModelBasedConfig};

/// RRMSE of every estimator in one area.
#[derive(Debug, Clone, PartialEq)]
pub struct RrmseRow {
    pub area_index: usize,
    pub n: u64,
    pub rrmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RrmseTable {
    pub estimators: Vec<&'static str>,
    pub groups: usize,
    pub replicates: usize,
    pub rows: Vec<RrmseRow>,
}

impl RrmseTable {
    /// Column of one estimator, if registered.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.estimators.iter().position(|&e| e == name)?;
        Some(self.rows.iter().map(|r| r.rrmse[j]).collect())
    }
}

/// Accumulates squared relative errors per (area, estimator).
pub(crate) struct RelativeErrors {
    sums: Vec<Vec<f64>>,
    replicates: usize,
}

impl RelativeErrors {
    pub(crate) fn new(areas: usize, estimators: usize) -> Self {
        RelativeErrors {
            sums: vec![vec![0.0; estimators]; areas],
            replicates: 0,
        }
    }

    /// `errors[i][k]` is the squared relative error of estimator `k` in area `i`.
    pub(crate) fn add(&mut self, errors: &[Vec<f64>]) {
        for (acc, e) in self.sums.iter_mut().zip(errors) {
            for (a, v) in acc.iter_mut().zip(e) {
                *a += v;
            }
        }
        self.replicates += 1;
    }

    pub(crate) fn into_table(self, estimators: Vec<&'static str>, sizes: &[u64], groups: usize) -> RrmseTable {
        let r = self.replicates as f64;
        RrmseTable {
            estimators,
            groups,
            replicates: self.replicates,
            rows: self
                .sums
                .into_iter()
                .zip(sizes)
                .enumerate()
                .map(|(i, (s, &n))| RrmseRow {
                    area_index: i + 1,
                    n,
                    rrmse: s.into_iter().map(|v| (v / r).sqrt()).collect(),
                })
                .collect(),
        }
    }
}

/// Squared relative errors of every estimator in every area for one replicate.
pub(crate) fn score_replicate(
    areas: &[AreaRecord],
    truths: &[f64],
    ctx: &EstimationContext,
    registry: &EstimatorRegistry,
    seed: u64,
    replicate: usize,
) -> Result<Vec<Vec<f64>>> {
    areas
        .par_iter()
        .zip(truths)
        .enumerate()
        .map(|(i, (area, &truth))| {
            registry
                .iter()
                .enumerate()
                .map(|(k, est)| {
                    let mut rng = StreamKey::new(Purpose::SimEstimate)
                        .area(i)
                        .replicate(replicate)
                        .iteration(k)
                        .rng(seed);
                    let e = est.estimate(ctx, area, &mut rng)?.unwrap_or(f64::NAN);
                    Ok(((e - truth) / truth).powi(2))
                })
                .collect()
        })
        .collect()
}
