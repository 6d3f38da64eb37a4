//! Design-based study: one fixed finite population per domain, repeated
//! simple random samples without replacement, shifted Box-Cox model.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::BufReader;
use std::path::Path;

use log::info;
use rand::seq::index::sample as index_sample;
use rand::Rng;
use rayon::prelude::*;

use super::{score_replicate, RelativeErrors, RrmseTable};
use crate::datamodel::{AreaRecord, Thresholds};
use crate::error::{Result, SaeError};
use crate::estimator::{EstimationContext, EstimatorRegistry};
use crate::likelihood::Grouping;
use crate::mcem::{fit, EmConfig};
use crate::rng::{derive_seed, Purpose, StreamKey};
use crate::sampling::std_normal;

/// Unit values of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainUnits {
    pub id: String,
    pub values: Vec<f64>,
}

/// Frozen per-domain populations.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopulation {
    pub domains: Vec<DomainUnits>,
}

impl SyntheticPopulation {
    pub fn means(&self) -> Vec<f64> {
        self.domains
            .iter()
            .map(|d| d.values.iter().sum::<f64>() / d.values.len() as f64)
            .collect()
    }

    pub fn min_value(&self) -> f64 {
        self.domains
            .iter()
            .flat_map(|d| d.values.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// Hash of ids and value bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for d in &self.domains {
            d.id.hash(&mut h);
            for v in &d.values {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Resample each domain with replacement to `size` units (or its own size).
pub fn build_population(units: &[DomainUnits], size: Option<usize>, seed: u64) -> Result<SyntheticPopulation> {
    let domains = units
        .iter()
        .enumerate()
        .map(|(i, d)| {
            if d.values.is_empty() {
                return Err(SaeError::Invalid(format!("domain {} has no units", d.id)));
            }
            let mut rng = StreamKey::new(Purpose::SimPopulation).area(i).rng(seed);
            let k = size.unwrap_or(d.values.len());
            Ok(DomainUnits {
                id: d.id.clone(),
                values: (0..k)
                    .map(|_| d.values[rng.random_range(0..d.values.len())])
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(SyntheticPopulation { domains })
}

/// Simple random sample of `n` distinct units.
pub fn srswor<R: Rng + ?Sized>(values: &[f64], n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n > values.len() {
        return Err(SaeError::Invalid(format!(
            "sample size {n} exceeds population size {}",
            values.len()
        )));
    }
    Ok(index_sample(rng, values.len(), n).into_iter().map(|i| values[i]).collect())
}

#[derive(Debug, Clone)]
pub struct DesignBasedConfig {
    /// units per domain in the frozen population; the input size when `None`
    pub pop_size: Option<usize>,
    /// sample size per domain
    pub sample_sizes: Vec<usize>,
    pub thresholds: Thresholds,
    /// covariates per domain, intercept included
    pub covariates: Vec<Vec<f64>>,
    /// Box-Cox shift; `min value - 0.1` when `None`
    pub shift: Option<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub em: EmConfig,
}

/// Shift used by the study: the configured one or 0.1 below the smallest unit value.
pub fn resolve_shift(cfg: &DesignBasedConfig, population: &SyntheticPopulation) -> f64 {
    cfg.shift.unwrap_or(population.min_value() - 0.1)
}

/// Run the study; the registry's estimators are scored against the frozen
/// domain means. The population is returned alongside for inspection.
pub fn simulate_design_based(
    units: &[DomainUnits],
    cfg: &DesignBasedConfig,
    registry: &EstimatorRegistry,
) -> Result<(RrmseTable, SyntheticPopulation)> {
    let d = units.len();
    if cfg.covariates.len() != d {
        return Err(SaeError::Arity {
            what: "domain covariate rows".into(),
            expected: d,
            found: cfg.covariates.len(),
        });
    }
    if cfg.sample_sizes.len() != d {
        return Err(SaeError::Arity {
            what: "domain sample sizes".into(),
            expected: d,
            found: cfg.sample_sizes.len(),
        });
    }
    if cfg.replicates == 0 {
        return Err(SaeError::Invalid("at least one replicate is required".into()));
    }
    let population = build_population(units, cfg.pop_size, cfg.seed)?;
    for (dom, &n) in population.domains.iter().zip(&cfg.sample_sizes) {
        if n == 0 || n > dom.values.len() {
            return Err(SaeError::Invalid(format!(
                "domain {}: sample size {n} must lie in 1..={}",
                dom.id,
                dom.values.len()
            )));
        }
    }
    let shift = resolve_shift(cfg, &population);
    if !(shift < cfg.thresholds.cuts()[0]) || population.min_value() <= shift {
        return Err(SaeError::Invalid(format!(
            "shift {shift} must lie below every unit value and the first threshold"
        )));
    }
    let grouping = Grouping::new(cfg.thresholds.clone()).with_shift(shift);
    let truths = population.means();

    let per_replicate: Vec<Vec<Vec<f64>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let areas: Vec<AreaRecord> = population
                .domains
                .iter()
                .enumerate()
                .map(|(i, dom)| {
                    let mut rng = StreamKey::new(Purpose::SimSampling)
                        .area(i)
                        .replicate(r)
                        .rng(cfg.seed);
                    let sample = srswor(&dom.values, cfg.sample_sizes[i], &mut rng)?;
                    Ok(AreaRecord {
                        id: dom.id.clone(),
                        x: cfg.covariates[i].clone(),
                        n_pop: dom.values.len() as u64,
                        sample: Some(cfg.thresholds.group_counts(&sample)),
                    })
                })
                .collect::<Result<_>>()?;
            let em = EmConfig {
                seed: derive_seed(cfg.seed, StreamKey::new(Purpose::SimFit).replicate(r)),
                ..cfg.em.clone()
            };
            let fitted = fit(&areas, &grouping, &em)?;
            info!("replicate {}: {} EM iterations", r + 1, fitted.iterations);
            let ctx = EstimationContext {
                psi: &fitted.psi,
                grouping: &grouping,
            };
            score_replicate(&areas, &truths, &ctx, registry, cfg.seed, r)
        })
        .collect::<Result<_>>()?;

    let mut acc = RelativeErrors::new(d, registry.len());
    for errors in &per_replicate {
        acc.add(errors);
    }
    let sizes: Vec<u64> = cfg.sample_sizes.iter().map(|&n| n as u64).collect();
    Ok((acc.into_table(registry.names(), &sizes, cfg.thresholds.groups()), population))
}

/// Read `domain_id, value` rows, keeping domains in first-seen order.
pub fn load_units(path: impl AsRef<Path>) -> Result<Vec<DomainUnits>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| SaeError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut order: Vec<DomainUnits> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(SaeError::Malformed(format!(
                "unit row {} has {} fields, expected 2",
                line + 2,
                record.len()
            )));
        }
        let value: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| SaeError::Malformed(format!("bad unit value '{}'", &record[1])))?;
        if !value.is_finite() {
            return Err(SaeError::Invalid(format!("non-finite unit value in row {}", line + 2)));
        }
        let id = record[0].trim().to_string();
        let k = *index.entry(id.clone()).or_insert_with(|| {
            order.push(DomainUnits { id, values: Vec::new() });
            order.len() - 1
        });
        order[k].values.push(value);
    }
    Ok(order)
}

/// Read `domain_id, x_1..x_p` rows and align them with `units`.
pub fn load_domain_covariates(path: impl AsRef<Path>, units: &[DomainUnits]) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| SaeError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut rows: HashMap<String, Vec<f64>> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let x = record
            .iter()
            .skip(1)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| SaeError::Malformed(format!("bad covariate '{s}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.insert(record[0].trim().to_string(), x);
    }
    units
        .iter()
        .map(|d| {
            rows.remove(&d.id)
                .ok_or_else(|| SaeError::Invalid(format!("no covariates for domain {}", d.id)))
        })
        .collect()
}

pub fn write_units(path: impl AsRef<Path>, units: &[DomainUnits]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["domain_id", "value"])?;
    for d in units {
        for v in &d.values {
            w.write_record([d.id.as_str(), &v.to_string()])?;
        }
    }
    w.flush().map_err(|e| SaeError::io(path, e))
}

pub fn write_domain_covariates(path: impl AsRef<Path>, ids: &[String], x: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let p = x.first().map_or(0, |r| r.len());
    let mut header = vec!["domain_id".to_string()];
    header.extend((1..=p).map(|j| format!("x_{j}")));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(x) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| SaeError::io(path, e))
}

/// Skewed unit values with a negative lower tail, driven by one domain covariate.
///
/// Domain `d` has `w_d ~ N(0, 1)`, location `2.2 + 0.35 w_d + 0.15 e_d`, and
/// units `exp(N(location, 0.6^2)) - 3`. Covariates are `(1, w_d)`.
pub fn synth_population(domains: usize, units_per_domain: usize, seed: u64) -> (Vec<DomainUnits>, Vec<Vec<f64>>) {
    (0..domains)
        .map(|i| {
            let mut rng = StreamKey::new(Purpose::SynthPopulation).area(i).rng(seed);
            let w = std_normal(&mut rng);
            let location = 2.2 + 0.35 * w + 0.15 * std_normal(&mut rng);
            let values = (0..units_per_domain)
                .map(|_| (location + 0.6 * std_normal(&mut rng)).exp() - 3.0)
                .collect();
            (
                DomainUnits {
                    id: format!("D{:03}", i + 1),
                    values,
                },
                vec![1.0, w],
            )
        })
        .unzip()
}
