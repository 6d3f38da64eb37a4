//! Windowed convergence monitor for the Monte Carlo EM iterates.

use serde::{Deserialize, Serialize};

use crate::datamodel::Hyperparameters;

/// Parameter blocks monitored separately.
pub const BLOCKS: [&str; 5] = ["beta", "tau2", "kappa", "lambda", "gamma"];

/// Relative change `e_k` for each block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockErrors {
    pub beta: f64,
    pub tau2: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl BlockErrors {
    pub fn max(&self) -> f64 {
        self.values().into_iter().fold(0.0, f64::max)
    }

    pub fn values(&self) -> [f64; 5] {
        [self.beta, self.tau2, self.kappa, self.lambda, self.gamma]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCheck {
    pub converged: bool,
    /// `None` until enough iterates exist for both windows.
    pub errors: Option<BlockErrors>,
}

/// Mean of `history[start..end]`, block by block.
pub fn window_mean(history: &[Hyperparameters], start: usize, end: usize) -> Hyperparameters {
    let window = &history[start..end];
    let k = window.len() as f64;
    let avg_vec = |get: &dyn Fn(&Hyperparameters) -> &[f64]| -> Vec<f64> {
        (0..get(&window[0]).len())
            .map(|j| window.iter().map(|h| get(h)[j]).sum::<f64>() / k)
            .collect()
    };
    Hyperparameters {
        beta: avg_vec(&|h| &h.beta),
        tau2: window.iter().map(|h| h.tau2).sum::<f64>() / k,
        lambda: window.iter().map(|h| h.lambda).sum::<f64>() / k,
        kappa: window.iter().map(|h| h.kappa).sum::<f64>() / k,
        gamma: avg_vec(&|h| &h.gamma),
    }
}

/// Mean of the last `h` iterates, or of all of them when fewer exist.
pub fn windowed_estimate(history: &[Hyperparameters], h: usize) -> Hyperparameters {
    let end = history.len();
    window_mean(history, end.saturating_sub(h), end)
}

fn rel_change(a: &[f64], b: &[f64], delta: f64) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / (den + delta)
}

/// Compare the mean of the last `h` iterates with the same window lagged
/// by `d`. Only evaluated once more than `h + d` iterates exist.
pub fn check_convergence(
    history: &[Hyperparameters],
    h: usize,
    d: usize,
    delta: f64,
    epsilon: f64,
) -> ConvergenceCheck {
    let k = history.len();
    if k <= h + d {
        return ConvergenceCheck {
            converged: false,
            errors: None,
        };
    }
    let recent = window_mean(history, k - h, k);
    let lagged = window_mean(history, k - h - d, k - d);
    let errors = BlockErrors {
        beta: rel_change(&recent.beta, &lagged.beta, delta),
        tau2: rel_change(&[recent.tau2], &[lagged.tau2], delta),
        kappa: rel_change(&[recent.kappa], &[lagged.kappa], delta),
        lambda: rel_change(&[recent.lambda], &[lagged.lambda], delta),
        gamma: rel_change(&recent.gamma, &lagged.gamma, delta),
    };
    ConvergenceCheck {
        converged: errors.max() < epsilon,
        errors: Some(errors),
    }
}
