//! Class-midpoint (naive) estimator of the area mean and the Gini coefficient
//! of a value vector.

use crate::datamodel::{GroupedSample, Thresholds};
use crate::error::{Result, SaeError};

/// Representative value of each class.
///
/// Interior classes use `(c_{g-1} + c_g) / 2`; the open top class uses
/// `c_{G-1} + (c_{G-1} - c_{G-2}) / 2` unless overridden.
#[derive(Debug, Clone, PartialEq)]
pub struct Midpoints {
    cbar: Vec<f64>,
    top_override: Option<f64>,
}

impl Midpoints {
    pub fn new(thresholds: &Thresholds) -> Self {
        Self::with_lower(thresholds, 0.0)
    }

    /// Midpoints with the bottom class starting at `lower` instead of 0.
    pub fn with_lower(thresholds: &Thresholds, lower: f64) -> Self {
        let c = thresholds.cuts();
        let g = c.len() + 1;
        let mut cbar = Vec::with_capacity(g);
        let mut prev = lower;
        for &cut in c {
            cbar.push(0.5 * (prev + cut));
            prev = cut;
        }
        let last = c[c.len() - 1];
        let below = if c.len() >= 2 { c[c.len() - 2] } else { lower };
        cbar.push(last + 0.5 * (last - below));
        Midpoints {
            cbar,
            top_override: None,
        }
    }

    /// Replace the top-class value.
    pub fn with_top(mut self, value: f64) -> Result<Self> {
        let g = self.cbar.len();
        let floor = if g >= 2 { self.cbar[g - 2] } else { f64::NEG_INFINITY };
        if !(value.is_finite() && value > floor) {
            return Err(SaeError::Invalid(format!(
                "top-class midpoint {value} must exceed the class below ({floor})"
            )));
        }
        self.top_override = Some(value);
        Ok(self)
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v = self.cbar.clone();
        if let Some(top) = self.top_override {
            let g = v.len();
            v[g - 1] = top;
        }
        v
    }

    pub fn top(&self) -> f64 {
        self.top_override.unwrap_or(self.cbar[self.cbar.len() - 1])
    }
}

/// `n^{-1} sum_g cbar_g y_g`.
pub fn naive_mean(y: &GroupedSample, midpoints: &Midpoints) -> Result<f64> {
    if y.n() == 0 {
        return Err(SaeError::Invalid("naive mean of an empty sample".into()));
    }
    let values = midpoints.values();
    if values.len() != y.groups() {
        return Err(SaeError::Arity {
            what: "midpoints".into(),
            expected: y.groups(),
            found: values.len(),
        });
    }
    let total: f64 = y
        .counts()
        .iter()
        .zip(&values)
        .map(|(&c, &v)| c as f64 * v)
        .sum();
    Ok(total / y.n() as f64)
}

/// Gini coefficient `{N + 1 - 2 sum_j (N + 1 - j) z_(j) / sum z} / N` of the
/// sorted values.
pub fn gini(z: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(SaeError::Invalid("Gini of an empty vector".into()));
    }
    let mut sorted = z.to_vec();
    sorted.sort_by(f64::total_cmp);
    gini_sorted(&sorted)
}

/// [`gini`] for values already sorted in non-decreasing order.
pub fn gini_sorted(sorted: &[f64]) -> Result<f64> {
    let n = sorted.len() as f64;
    let total: f64 = sorted.iter().sum();
    if !(total > 0.0) {
        return Err(SaeError::Invalid(format!(
            "Gini requires a positive total, got {total}"
        )));
    }
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(j, &v)| (n - j as f64) * v)
        .sum();
    Ok((n + 1.0 - 2.0 * weighted / total) / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cuts() -> Thresholds {
        Thresholds::new(vec![3.0, 5.0, 7.0, 10.0]).unwrap()
    }

    #[test]
    fn midpoint_examples() {
        let m = Midpoints::new(&cuts());
        assert_eq!(m.values(), vec![1.5, 4.0, 6.0, 8.5, 11.5]);
        let y = GroupedSample::new(vec![4, 0, 0, 0, 0]);
        assert_eq!(naive_mean(&y, &m).unwrap(), 1.5);
        let y = GroupedSample::new(vec![1, 1, 0, 0, 0]);
        assert_eq!(naive_mean(&y, &m).unwrap(), 2.75);
        let y = GroupedSample::new(vec![0, 0, 0, 0, 0]);
        assert!(naive_mean(&y, &m).is_err());
    }

    #[test]
    fn top_override_only_touches_the_top_class() {
        let m = Midpoints::new(&cuts()).with_top(23.0).unwrap();
        assert_eq!(m.values(), vec![1.5, 4.0, 6.0, 8.5, 23.0]);
        assert!(Midpoints::new(&cuts()).with_top(8.0).is_err());
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[4.0; 7]).unwrap(), 0.0);
        assert!((gini(&[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((gini(&[3.0, 1.0, 2.0]).unwrap() - 2.0 / 9.0).abs() < 1e-15);
        assert!(gini(&[0.0, 0.0]).is_err());
        assert!(gini(&[]).is_err());
    }
}
