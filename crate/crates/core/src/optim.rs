//! Derivative-free Nelder-Mead simplex minimizer and a damped Newton maximizer.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct NelderMead {
    /// Stop when the spread of function values over the simplex falls below this.
    pub ftol_abs: f64,
    /// Stop when every vertex is this close to the best one (max-norm).
    pub xtol: f64,
    pub max_evals: usize,
    /// Relative size of the initial simplex; zero coordinates get `zero_step`.
    pub rel_step: f64,
    pub zero_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            ftol_abs: 1e-8,
            xtol: 1e-10,
            max_evals: 500,
            rel_step: 0.05,
            zero_step: 0.00025,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

impl NelderMead {
    /// Minimize `f` from `x0`. Non-finite objective values count as `+inf`.
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, mut f: F, x0: &[f64]) -> Minimum {
        let n = x0.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };

        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(x0.to_vec());
        for j in 0..n {
            let mut v = x0.to_vec();
            v[j] = if v[j] != 0.0 {
                v[j] * (1.0 + self.rel_step)
            } else {
                self.zero_step
            };
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

        let (rho, chi, psi, sigma) = (1.0, 2.0, 0.5, 0.5);
        let mut converged = false;
        loop {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = values[n] - values[0];
            let size = simplex[1..]
                .iter()
                .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if values[0].is_finite() && (spread <= self.ftol_abs || size <= self.xtol) {
                converged = true;
                break;
            }
            if evals >= self.max_evals {
                break;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };

            let xr = along(rho);
            let fr = eval(&xr, &mut evals);
            if fr < values[0] {
                let xe = along(rho * chi);
                let fe = eval(&xe, &mut evals);
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
                continue;
            }
            let (xc, fc, accept) = if fr < values[n] {
                let xc = along(rho * psi);
                let fc = eval(&xc, &mut evals);
                let ok = fc <= fr;
                (xc, fc, ok)
            } else {
                let xc = along(-psi);
                let fc = eval(&xc, &mut evals);
                let ok = fc < values[n];
                (xc, fc, ok)
            };
            if accept {
                simplex[n] = xc;
                values[n] = fc;
                continue;
            }
            let best = simplex[0].clone();
            for i in 1..=n {
                let shrunk: Vec<f64> = best
                    .iter()
                    .zip(&simplex[i])
                    .map(|(b, v)| b + sigma * (v - b))
                    .collect();
                values[i] = eval(&shrunk, &mut evals);
                simplex[i] = shrunk;
            }
        }

        let best = (0..=n)
            .min_by(|&a, &b| values[a].total_cmp(&values[b]))
            .unwrap_or(0);
        Minimum {
            x: simplex[best].clone(),
            f: values[best],
            evals,
            converged,
        }
    }
}

/// Newton ascent with Levenberg damping and backtracking.
#[derive(Debug, Clone)]
pub struct Newton {
    pub max_iter: usize,
    /// Stop once the predicted increase `g' H^-1 g / 2` falls below this.
    pub decrement_tol: f64,
    pub max_backtracks: usize,
}

impl Default for Newton {
    fn default() -> Self {
        Newton {
            max_iter: 50,
            decrement_tol: 1e-12,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Maximum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Newton {
    /// Maximize from `x0`. Outside the feasible region `value` and the value
    /// part of `derivs` return `-inf` (or NaN); otherwise `derivs` returns
    /// value, gradient and Hessian. `None` when the start is infeasible.
    pub fn maximize<V, D>(&self, mut value: V, mut derivs: D, x0: &[f64]) -> Option<Maximum>
    where
        V: FnMut(&[f64]) -> f64,
        D: FnMut(&[f64]) -> (f64, DVector<f64>, DMatrix<f64>),
    {
        let n = x0.len();
        let mut x = DVector::from_column_slice(x0);
        let (mut f, mut g, mut h) = derivs(x.as_slice());
        if !f.is_finite() {
            return None;
        }
        let mut converged = false;
        let mut iterations = 0;
        while iterations < self.max_iter {
            iterations += 1;
            if g.iter().any(|v| !v.is_finite()) || h.iter().any(|v| !v.is_finite()) {
                break;
            }
            // smallest damping that makes -H positive definite
            let neg = -&h;
            let scale = neg.diagonal().iter().fold(0.0f64, |a, &d| a.max(d.abs())).max(1e-12);
            let mut damping = 0.0;
            let step = loop {
                let mut m = neg.clone();
                for i in 0..n {
                    m[(i, i)] += damping;
                }
                if let Some(chol) = m.cholesky() {
                    break Some(chol.solve(&g));
                }
                damping = if damping == 0.0 { 1e-8 * scale } else { damping * 10.0 };
                if damping > 1e8 * scale {
                    break None;
                }
            };
            let Some(step) = step else { break };
            let decrement = g.dot(&step);
            if !(decrement > 0.0) || 0.5 * decrement < self.decrement_tol {
                converged = true;
                break;
            }
            // the full step is evaluated with derivatives so an accepted
            // step needs no second pass
            let full = &x + &step;
            let (ff, gf, hf) = derivs(full.as_slice());
            if ff.is_finite() && ff >= f + 1e-4 * decrement {
                x = full;
                (f, g, h) = (ff, gf, hf);
                continue;
            }
            let mut t = 0.5;
            let mut accepted = None;
            for _ in 1..self.max_backtracks {
                let cand = &x + &step * t;
                let fc = value(cand.as_slice());
                if fc.is_finite() && fc >= f + 1e-4 * t * decrement {
                    accepted = Some(cand);
                    break;
                }
                t *= 0.5;
            }
            let Some(next) = accepted else {
                // no ascent along the Newton direction: at a maximum up to rounding
                converged = 0.5 * decrement < 1e3 * self.decrement_tol.max(f.abs() * f64::EPSILON);
                break;
            };
            x = next;
            (f, g, h) = derivs(x.as_slice());
            if !f.is_finite() {
                return None;
            }
        }
        Some(Maximum {
            x: x.as_slice().to_vec(),
            f,
            iterations,
            converged,
        })
    }
}
