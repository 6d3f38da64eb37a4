//! Named area-mean estimators that the bootstrap and the simulation
//! harnesses score side by side.

use crate::baseline::{naive_mean, Midpoints};
use crate::datamodel::{AreaRecord, Hyperparameters};
use crate::error::{Result, SaeError};
use crate::gibbs::{estimate_area, GibbsConfig};
use crate::likelihood::Grouping;
use crate::rng::StreamRng;

/// Everything an estimator may consult besides the area itself.
#[derive(Debug, Clone, Copy)]
pub struct EstimationContext<'a> {
    pub psi: &'a Hyperparameters,
    pub grouping: &'a Grouping,
}

pub trait AreaEstimator: Send + Sync {
    /// Column suffix, e.g. `eb` gives `rmse_eb`.
    fn name(&self) -> &'static str;

    /// Estimated area mean; `None` when the estimator does not apply to this area.
    fn estimate(&self, ctx: &EstimationContext, area: &AreaRecord, rng: &mut StreamRng) -> Result<Option<f64>>;
}

/// Empirical Bayes posterior mean from the Gibbs sampler.
#[derive(Debug, Clone, Copy, Default)]
pub struct EbEstimator {
    pub gibbs: GibbsConfig,
}

impl AreaEstimator for EbEstimator {
    fn name(&self) -> &'static str {
        "eb"
    }

    fn estimate(&self, ctx: &EstimationContext, area: &AreaRecord, rng: &mut StreamRng) -> Result<Option<f64>> {
        Ok(Some(estimate_area(area, ctx.psi, ctx.grouping, &self.gibbs, rng)?.mean_eb))
    }
}

/// Class-midpoint estimator; undefined for areas without sample.
#[derive(Debug, Clone)]
pub struct NaiveEstimator {
    pub midpoints: Midpoints,
}

impl AreaEstimator for NaiveEstimator {
    fn name(&self) -> &'static str {
        "naive"
    }

    fn estimate(&self, _ctx: &EstimationContext, area: &AreaRecord, _rng: &mut StreamRng) -> Result<Option<f64>> {
        area.sample
            .as_ref()
            .map(|y| naive_mean(y, &self.midpoints))
            .transpose()
    }
}

/// Ordered set of estimators with unique names.
#[derive(Default)]
pub struct EstimatorRegistry {
    entries: Vec<Box<dyn AreaEstimator>>,
}

impl EstimatorRegistry {
    pub fn new() -> Self {
        EstimatorRegistry { entries: Vec::new() }
    }

    /// The EB and naive estimators, in that order.
    pub fn with_defaults(gibbs: GibbsConfig, midpoints: Midpoints) -> Self {
        let mut registry = EstimatorRegistry::new();
        registry.entries.push(Box::new(EbEstimator { gibbs }));
        registry.entries.push(Box::new(NaiveEstimator { midpoints }));
        registry
    }

    pub fn register(&mut self, estimator: Box<dyn AreaEstimator>) -> Result<()> {
        if self.get(estimator.name()).is_some() {
            return Err(SaeError::Invalid(format!(
                "estimator '{}' is already registered",
                estimator.name()
            )));
        }
        self.entries.push(estimator);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&dyn AreaEstimator> {
        self.entries.iter().find(|e| e.name() == name).map(|e| e.as_ref())
    }

    /// Look up an estimator or fail with the list of known names.
    pub fn require(&self, name: &str) -> Result<&dyn AreaEstimator> {
        self.get(name).ok_or_else(|| SaeError::UnknownStrategy {
            kind: "estimator",
            name: format!("{name} (known: {})", self.names().join(", ")),
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn AreaEstimator> {
        self.entries.iter().map(|e| e.as_ref())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
