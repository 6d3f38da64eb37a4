//! Parametric bootstrap of the root mean squared error of area-mean estimators.
//!
//! Each replicate draws a fresh population per area from the model at the
//! fitted hyperparameters, takes the first `n_i` units as the grouped sample,
//! and re-estimates at the same hyperparameters.

use rayon::prelude::*;

use crate::datamodel::{AreaRecord, Hyperparameters};
use crate::error::{Result, SaeError};
use crate::estimator::{EstimationContext, EstimatorRegistry};
use crate::likelihood::Grouping;
use crate::population::draw_area_population;
use crate::rng::{Purpose, StreamKey};

/// Bootstrap RMSE of every registered estimator for one area.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaRmse {
    pub area_id: String,
    pub n: u64,
    /// one value per registered estimator, `NaN` where it does not apply
    pub rmse: Vec<f64>,
    pub replicates: usize,
}

/// Squared errors of each estimator in one (replicate, area) cell.
fn replicate_cell(
    area: &AreaRecord,
    index: usize,
    replicate: usize,
    ctx: &EstimationContext,
    registry: &EstimatorRegistry,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    let h = ctx.grouping.transform(ctx.psi.kappa);
    let mut pop_rng = StreamKey::new(Purpose::BootstrapPopulation)
        .area(index)
        .replicate(replicate)
        .rng(seed);
    let (_, pop) = draw_area_population(ctx.psi, &area.x, area.n_pop as usize, &h, &mut pop_rng);
    let truth = pop.mean();
    let boot_area = AreaRecord {
        id: area.id.clone(),
        x: area.x.clone(),
        n_pop: area.n_pop,
        sample: area
            .sample
            .as_ref()
            .map(|y| pop.sample_first(y.n() as usize, &ctx.grouping.thresholds)),
    };
    registry
        .iter()
        .enumerate()
        .map(|(k, est)| {
            let mut rng = StreamKey::new(Purpose::BootstrapEstimate)
                .area(index)
                .replicate(replicate)
                .iteration(k)
                .rng(seed);
            Ok(est.estimate(ctx, &boot_area, &mut rng)?.map(|e| (e - truth).powi(2)))
        })
        .collect()
}

/// Bootstrap RMSE with `replicates` populations per area.
pub fn bootstrap_rmse(
    areas: &[AreaRecord],
    psi: &Hyperparameters,
    grouping: &Grouping,
    replicates: usize,
    registry: &EstimatorRegistry,
    seed: u64,
) -> Result<Vec<AreaRmse>> {
    if replicates == 0 {
        return Err(SaeError::Invalid("the bootstrap needs at least one replicate".into()));
    }
    let ctx = EstimationContext { psi, grouping };
    let cells: Vec<(usize, usize)> = (0..replicates)
        .flat_map(|b| (0..areas.len()).map(move |i| (b, i)))
        .collect();
    let errors: Vec<Vec<Option<f64>>> = cells
        .par_iter()
        .map(|&(b, i)| replicate_cell(&areas[i], i, b, &ctx, registry, seed))
        .collect::<Result<_>>()?;

    let k = registry.len();
    let mut sums = vec![vec![0.0; k]; areas.len()];
    let mut missing = vec![vec![false; k]; areas.len()];
    for (&(_, i), cell) in cells.iter().zip(&errors) {
        for (j, e) in cell.iter().enumerate() {
            match e {
                Some(v) => sums[i][j] += v,
                None => missing[i][j] = true,
            }
        }
    }
    Ok(areas
        .iter()
        .enumerate()
        .map(|(i, area)| AreaRmse {
            area_id: area.id.clone(),
            n: area.sample.as_ref().map_or(0, |y| y.n()),
            rmse: (0..k)
                .map(|j| {
                    if missing[i][j] {
                        f64::NAN
                    } else {
                        (sums[i][j] / replicates as f64).sqrt()
                    }
                })
                .collect(),
            replicates,
        })
        .collect())
}
