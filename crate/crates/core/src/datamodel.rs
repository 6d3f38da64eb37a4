//! Domain types, validation, CSV ingestion and model persistence.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};
use crate::mcem::TraceRecord;

/// Interior class boundaries `c_1 < ... < c_{G-1}`; `c_0 = 0` and `c_G = +inf` are implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Thresholds {
    cuts: Vec<f64>,
}

impl Thresholds {
    pub fn new(cuts: Vec<f64>) -> Result<Self> {
        if cuts.is_empty() {
            return Err(SaeError::Invalid(
                "at least one threshold is required (G >= 2)".into(),
            ));
        }
        if cuts.iter().any(|c| !c.is_finite() || *c <= 0.0) {
            return Err(SaeError::Invalid(format!(
                "thresholds must be finite and positive: {cuts:?}"
            )));
        }
        if cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SaeError::Invalid(format!(
                "thresholds must be strictly increasing: {cuts:?}"
            )));
        }
        Ok(Thresholds { cuts })
    }

    /// Parse a comma separated list such as `3,5,7,10`.
    pub fn parse(text: &str) -> Result<Self> {
        let cuts = text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| SaeError::Malformed(format!("bad threshold '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Thresholds::new(cuts)
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    /// Number of classes `G`.
    pub fn groups(&self) -> usize {
        self.cuts.len() + 1
    }

    /// Zero-based class index `g` with `c_g <= z < c_{g+1}`.
    pub fn classify(&self, z: f64) -> usize {
        self.cuts.partition_point(|&c| c <= z)
    }

    /// Group a vector of unit values into class counts.
    pub fn group_counts(&self, values: &[f64]) -> GroupedSample {
        let mut counts = vec![0u64; self.groups()];
        for &z in values {
            counts[self.classify(z)] += 1;
        }
        GroupedSample::new(counts)
    }
}

impl TryFrom<Vec<f64>> for Thresholds {
    type Error = SaeError;
    fn try_from(cuts: Vec<f64>) -> Result<Self> {
        Thresholds::new(cuts)
    }
}

impl From<Thresholds> for Vec<f64> {
    fn from(t: Thresholds) -> Vec<f64> {
        t.cuts
    }
}

/// Class frequencies of one area.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupedSample {
    counts: Vec<u64>,
    n: u64,
}

impl GroupedSample {
    pub fn new(counts: Vec<u64>) -> Self {
        let n = counts.iter().sum();
        GroupedSample { counts, n }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn groups(&self) -> usize {
        self.counts.len()
    }

    /// Number of classes with at least one unit.
    pub fn occupied(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaRecord {
    pub id: String,
    /// Area covariates, intercept included explicitly.
    pub x: Vec<f64>,
    pub n_pop: u64,
    /// `None` marks an out-of-sample area.
    pub sample: Option<GroupedSample>,
}

impl AreaRecord {
    pub fn in_sample(&self) -> bool {
        self.sample.is_some()
    }
}

/// Model hyperparameters `(beta, tau2, lambda, kappa, gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub beta: Vec<f64>,
    pub tau2: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub gamma: Vec<f64>,
}

impl Hyperparameters {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.beta.len() != p {
            return Err(SaeError::Arity {
                what: "beta".into(),
                expected: p,
                found: self.beta.len(),
            });
        }
        if self.gamma.len() != p {
            return Err(SaeError::Arity {
                what: "gamma".into(),
                expected: p,
                found: self.gamma.len(),
            });
        }
        if !(self.tau2 > 0.0 && self.tau2.is_finite()) {
            return Err(SaeError::Invalid(format!("tau2 must be positive, got {}", self.tau2)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(SaeError::Invalid(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !self.kappa.is_finite() || self.beta.iter().chain(&self.gamma).any(|v| !v.is_finite()) {
            return Err(SaeError::Invalid("hyperparameters must be finite".into()));
        }
        Ok(())
    }

    /// `x' beta`.
    pub fn mean_of(&self, x: &[f64]) -> f64 {
        dot(x, &self.beta)
    }

    /// Prior mean of the area dispersion, `exp(x' gamma)`.
    pub fn phi(&self, x: &[f64]) -> f64 {
        dot(x, &self.gamma).exp()
    }

    /// Shape and scale of the inverse gamma prior on `sigma2` for covariates `x`.
    pub fn sigma2_prior(&self, x: &[f64]) -> (f64, f64) {
        (self.lambda / 2.0 + 1.0, self.lambda * self.phi(x) / 2.0)
    }
}

/// Area random effects `u = (b, sigma2)` with `mu = x' beta + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomEffects {
    pub b: f64,
    pub sigma2: f64,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Check covariate arity and finiteness, and sample arity against `thresholds`.
pub fn validate_areas(areas: &[AreaRecord], thresholds: &Thresholds) -> Result<usize> {
    let p = areas.first().map(|a| a.x.len()).unwrap_or(0);
    for area in areas {
        if area.x.len() != p {
            return Err(SaeError::Arity {
                what: format!("covariates of area {}", area.id),
                expected: p,
                found: area.x.len(),
            });
        }
        if area.x.iter().any(|v| !v.is_finite()) {
            return Err(SaeError::Invalid(format!(
                "non-finite covariate in area {}",
                area.id
            )));
        }
        if let Some(sample) = &area.sample {
            if sample.groups() != thresholds.groups() {
                return Err(SaeError::Arity {
                    what: format!("counts of area {}", area.id),
                    expected: thresholds.groups(),
                    found: sample.groups(),
                });
            }
            if sample.n() == 0 {
                return Err(SaeError::Invalid(format!(
                    "in-sample area {} has no sampled units",
                    area.id
                )));
            }
            if sample.n() > area.n_pop {
                return Err(SaeError::Invalid(format!(
                    "area {}: sample size {} exceeds population size {}",
                    area.id,
                    sample.n(),
                    area.n_pop
                )));
            }
        }
    }
    Ok(p)
}

/// Read an areas CSV with header `area_id, N_pop, x_1..x_p, y_1..y_G`.
///
/// Rows whose count cells are all blank become out-of-sample areas.
pub fn load_areas(path: impl AsRef<Path>, thresholds: &Thresholds) -> Result<Vec<AreaRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| SaeError::io(path, e))?;
    read_areas(BufReader::new(file), thresholds)
}

pub fn read_areas(reader: impl std::io::Read, thresholds: &Thresholds) -> Result<Vec<AreaRecord>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = csv.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let id_col = col("area_id").ok_or_else(|| SaeError::Malformed("missing area_id column".into()))?;
    let pop_col = col("N_pop").ok_or_else(|| SaeError::Malformed("missing N_pop column".into()))?;
    let x_cols = numbered_columns(&header, "x_")?;
    let y_cols = numbered_columns(&header, "y_")?;
    if x_cols.is_empty() {
        return Err(SaeError::Malformed("no covariate columns x_1..x_p".into()));
    }
    if y_cols.len() != thresholds.groups() {
        return Err(SaeError::Arity {
            what: "count columns".into(),
            expected: thresholds.groups(),
            found: y_cols.len(),
        });
    }

    let mut areas = Vec::new();
    for (row, record) in csv.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let field = |i: usize| record.get(i).unwrap_or("");
        let id = field(id_col).to_string();
        let n_pop = field(pop_col)
            .parse::<u64>()
            .map_err(|_| SaeError::Malformed(format!("line {line}: bad N_pop '{}'", field(pop_col))))?;
        let x = x_cols
            .iter()
            .map(|&i| {
                let v = field(i).parse::<f64>().map_err(|_| {
                    SaeError::Malformed(format!("line {line}: bad covariate '{}'", field(i)))
                })?;
                if !v.is_finite() {
                    return Err(SaeError::Invalid(format!("line {line}: non-finite covariate")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        let cells: Vec<&str> = y_cols.iter().map(|&i| field(i)).collect();
        let sample = if cells.iter().all(|c| c.is_empty()) {
            None
        } else {
            let counts = cells
                .iter()
                .map(|c| {
                    let v = c.parse::<i64>().map_err(|_| {
                        SaeError::Malformed(format!("line {line}: bad count '{c}'"))
                    })?;
                    if v < 0 {
                        return Err(SaeError::Invalid(format!("line {line}: negative count {v}")));
                    }
                    Ok(v as u64)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(GroupedSample::new(counts))
        };
        areas.push(AreaRecord {
            id,
            x,
            n_pop,
            sample,
        });
    }
    validate_areas(&areas, thresholds)?;
    Ok(areas)
}

/// Indices of columns named `{prefix}1 .. {prefix}k`, in numeric order.
fn numbered_columns(header: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.strip_prefix(prefix)
                .and_then(|rest| rest.parse::<usize>().ok())
                .map(|k| (k, i))
        })
        .collect();
    found.sort_unstable();
    for (expected, (k, _)) in found.iter().enumerate() {
        if *k != expected + 1 {
            return Err(SaeError::Malformed(format!(
                "columns {prefix}* must be numbered 1..k without gaps"
            )));
        }
    }
    Ok(found.into_iter().map(|(_, i)| i).collect())
}

/// Write areas in the same CSV layout `load_areas` reads.
pub fn write_areas(path: impl AsRef<Path>, areas: &[AreaRecord], groups: usize) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| SaeError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let p = areas.first().map(|a| a.x.len()).unwrap_or(0);
    let mut header = vec!["area_id".to_string(), "N_pop".to_string()];
    header.extend((1..=p).map(|j| format!("x_{j}")));
    header.extend((1..=groups).map(|g| format!("y_{g}")));
    w.write_record(&header)?;
    for area in areas {
        let mut row = vec![area.id.clone(), area.n_pop.to_string()];
        row.extend(area.x.iter().map(|v| v.to_string()));
        match &area.sample {
            Some(s) => row.extend(s.counts().iter().map(|c| c.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), groups)),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| SaeError::io(path, e))?;
    Ok(())
}

/// Per-column centring and scaling applied to covariates before fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardization {
    /// Constant columns (such as the intercept) are left untouched.
    pub fn from_areas(areas: &[AreaRecord]) -> Self {
        let p = areas.first().map(|a| a.x.len()).unwrap_or(0);
        let m = areas.len() as f64;
        let mut means = vec![0.0; p];
        let mut sds = vec![0.0; p];
        for j in 0..p {
            let mean = areas.iter().map(|a| a.x[j]).sum::<f64>() / m;
            let var = areas.iter().map(|a| (a.x[j] - mean).powi(2)).sum::<f64>() / m;
            if var > 0.0 {
                means[j] = mean;
                sds[j] = var.sqrt();
            } else {
                sds[j] = 0.0;
            }
        }
        Standardization { means, sds }
    }

    pub fn apply(&self, areas: &mut [AreaRecord]) -> Result<()> {
        for area in areas.iter_mut() {
            if area.x.len() != self.means.len() {
                return Err(SaeError::Arity {
                    what: format!("covariates of area {}", area.id),
                    expected: self.means.len(),
                    found: area.x.len(),
                });
            }
            for j in 0..area.x.len() {
                if self.sds[j] > 0.0 {
                    area.x[j] = (area.x[j] - self.means[j]) / self.sds[j];
                }
            }
        }
        Ok(())
    }
}

pub const MODEL_SCHEMA: u32 = 1;

/// Run metadata; the only non-reproducible part of a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub created_unix: u64,
    pub tool_version: String,
}

/// Persisted result of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub schema: u32,
    #[serde(rename = "G")]
    pub groups: usize,
    pub thresholds: Vec<f64>,
    pub p: usize,
    pub beta: Vec<f64>,
    pub tau2: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub gamma: Vec<f64>,
    /// Box-Cox location shift `C`.
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub renormalize_groups: bool,
    #[serde(default)]
    pub standardization: Option<Standardization>,
    #[serde(default)]
    pub converged: bool,
    pub em_trace: Vec<TraceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
}

impl FittedModel {
    pub fn new(psi: &Hyperparameters, thresholds: &Thresholds) -> Self {
        FittedModel {
            schema: MODEL_SCHEMA,
            groups: thresholds.groups(),
            thresholds: thresholds.cuts().to_vec(),
            p: psi.p(),
            beta: psi.beta.clone(),
            tau2: psi.tau2,
            lambda: psi.lambda,
            kappa: psi.kappa,
            gamma: psi.gamma.clone(),
            shift: 0.0,
            renormalize_groups: false,
            standardization: None,
            converged: false,
            em_trace: Vec::new(),
            meta: None,
        }
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            beta: self.beta.clone(),
            tau2: self.tau2,
            lambda: self.lambda,
            kappa: self.kappa,
            gamma: self.gamma.clone(),
        }
    }

    pub fn thresholds(&self) -> Result<Thresholds> {
        Thresholds::new(self.thresholds.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != MODEL_SCHEMA {
            return Err(SaeError::Schema {
                expected: MODEL_SCHEMA,
                found: self.schema,
            });
        }
        let thresholds = self.thresholds()?;
        if thresholds.groups() != self.groups {
            return Err(SaeError::Arity {
                what: "model thresholds".into(),
                expected: self.groups - 1,
                found: self.thresholds.len(),
            });
        }
        if !self.shift.is_finite() || self.shift >= thresholds.cuts()[0] {
            return Err(SaeError::Invalid(format!(
                "shift {} must be finite and below the first threshold",
                self.shift
            )));
        }
        self.hyperparameters().validate(self.p)
    }

    /// Fail unless `data` uses exactly the thresholds this model was fitted with.
    pub fn check_thresholds(&self, data: &Thresholds) -> Result<()> {
        if data.cuts() != self.thresholds.as_slice() {
            return Err(SaeError::ThresholdMismatch {
                model: self.thresholds.clone(),
                data: data.cuts().to_vec(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let schema = value
            .get("schema")
            .and_then(|s| s.as_u64())
            .ok_or_else(|| SaeError::Malformed("model file lacks a schema field".into()))?;
        if schema != MODEL_SCHEMA as u64 {
            return Err(SaeError::Schema {
                expected: MODEL_SCHEMA,
                found: schema as u32,
            });
        }
        let model: FittedModel = serde_json::from_value(value)?;
        model.validate()?;
        Ok(model)
    }
}

pub fn save_model(path: impl AsRef<Path>, model: &FittedModel) -> Result<()> {
    let path = path.as_ref();
    model.validate()?;
    let file = File::create(path).map_err(|e| SaeError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(model.to_json()?.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .map_err(|e| SaeError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SaeError::io(path, e))?;
    FittedModel::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g5() -> Thresholds {
        Thresholds::new(vec![3.0, 5.0, 7.0, 10.0]).unwrap()
    }

    #[test]
    fn threshold_validation() {
        assert!(Thresholds::new(vec![]).is_err());
        assert!(Thresholds::new(vec![3.0, 3.0]).is_err());
        assert!(Thresholds::new(vec![0.0, 1.0]).is_err());
        assert!(Thresholds::new(vec![1.0, f64::INFINITY]).is_err());
        assert_eq!(Thresholds::parse("3, 5,7,10").unwrap(), g5());
    }

    #[test]
    fn classify_uses_half_open_classes() {
        let t = g5();
        assert_eq!(t.classify(0.5), 0);
        assert_eq!(t.classify(3.0), 1);
        assert_eq!(t.classify(9.99), 3);
        assert_eq!(t.classify(10.0), 4);
        assert_eq!(t.classify(-4.0), 0);
        assert_eq!(t.group_counts(&[1.0, 4.0, 4.5, 50.0]).counts(), &[1, 2, 0, 0, 1]);
    }

    #[test]
    fn csv_rows_become_areas() {
        let text = "area_id,N_pop,x_1,x_2,y_1,y_2,y_3,y_4,y_5\n\
                    a,100,1,0.5,3,5,7,10,2\n\
                    b,50,1,0.1,,,,,\n";
        let areas = read_areas(text.as_bytes(), &g5()).unwrap();
        assert_eq!(areas.len(), 2);
        assert_eq!(areas[0].sample.as_ref().unwrap().n(), 27);
        assert!(areas[1].sample.is_none());
        assert_eq!(areas[1].x, vec![1.0, 0.1]);
    }

    #[test]
    fn csv_arity_and_sign_errors() {
        let four = "area_id,N_pop,x_1,y_1,y_2,y_3,y_4\na,10,1,1,1,1,1\n";
        assert!(matches!(read_areas(four.as_bytes(), &g5()), Err(SaeError::Arity { .. })));
        let neg = "area_id,N_pop,x_1,y_1,y_2,y_3,y_4,y_5\na,10,1,1,-1,1,1,1\n";
        assert!(matches!(read_areas(neg.as_bytes(), &g5()), Err(SaeError::Invalid(_))));
        let nan = "area_id,N_pop,x_1,y_1,y_2,y_3,y_4,y_5\na,10,NaN,1,1,1,1,1\n";
        assert!(read_areas(nan.as_bytes(), &g5()).is_err());
        let partial = "area_id,N_pop,x_1,y_1,y_2,y_3,y_4,y_5\na,10,1,1,,1,1,1\n";
        assert!(read_areas(partial.as_bytes(), &g5()).is_err());
        let too_many = "area_id,N_pop,x_1,y_1,y_2,y_3,y_4,y_5\na,3,1,1,1,1,1,1\n";
        assert!(read_areas(too_many.as_bytes(), &g5()).is_err());
    }

    #[test]
    fn model_json_round_trips_exactly() {
        let psi = Hyperparameters {
            beta: vec![0.0, 0.0, 0.0],
            tau2: 0.1 + 0.2,
            lambda: 1.0 / 3.0,
            kappa: -1e-17,
            gamma: vec![std::f64::consts::PI, -0.0, 1e300],
        };
        let model = FittedModel::new(&psi, &g5());
        let back = FittedModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.hyperparameters().tau2.to_bits(), psi.tau2.to_bits());
        assert_eq!(back.hyperparameters().lambda.to_bits(), psi.lambda.to_bits());
    }

    #[test]
    fn tampered_model_is_rejected() {
        let psi = Hyperparameters {
            beta: vec![0.0],
            tau2: 1.0,
            lambda: 2.0,
            kappa: 0.0,
            gamma: vec![0.0],
        };
        let json = FittedModel::new(&psi, &g5()).to_json().unwrap();
        let bad = json.replace("\"tau2\": 1.0", "\"tau2\": -1.0");
        assert_ne!(bad, json);
        assert!(matches!(FittedModel::from_json(&bad), Err(SaeError::Invalid(_))));
        let old = json.replace("\"schema\": 1", "\"schema\": 7");
        assert!(matches!(FittedModel::from_json(&old), Err(SaeError::Schema { .. })));
    }

    #[test]
    fn threshold_mismatch_is_detected() {
        let psi = Hyperparameters {
            beta: vec![0.0],
            tau2: 1.0,
            lambda: 2.0,
            kappa: 0.0,
            gamma: vec![0.0],
        };
        let model = FittedModel::new(&psi, &g5());
        let g9 = Thresholds::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 10.0, 15.0]).unwrap();
        assert!(matches!(
            model.check_thresholds(&g9),
            Err(SaeError::ThresholdMismatch { .. })
        ));
        assert!(model.check_thresholds(&g5()).is_ok());
    }

    #[test]
    fn standardization_skips_constant_columns() {
        let mut areas: Vec<AreaRecord> = (0..4)
            .map(|i| AreaRecord {
                id: i.to_string(),
                x: vec![1.0, i as f64],
                n_pop: 10,
                sample: None,
            })
            .collect();
        let st = Standardization::from_areas(&areas);
        st.apply(&mut areas).unwrap();
        assert!(areas.iter().all(|a| a.x[0] == 1.0));
        let mean: f64 = areas.iter().map(|a| a.x[1]).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-15);
    }
}
