//! Reference computations written independently of the library: adaptive
//! quadrature, dense elimination, brute-force enumeration.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Gauss-Kronrod 7/15 nodes on [-1, 1] (non-negative half).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod integral of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
        let (v, err) = gk15(f, a, b);
        // stop at the requested accuracy or once the estimate is limited by rounding
        if err <= tol || err <= 1e-14 * v.abs() || depth >= 40 {
            return v;
        }
        let m = 0.5 * (a + b);
        recurse(f, a, m, 0.5 * tol, depth + 1) + recurse(f, m, b, 0.5 * tol, depth + 1)
    }
    if a == b {
        return 0.0;
    }
    // split into short pieces first so narrow peaks are not missed
    let pieces = ((b - a).abs() / 0.05).ceil().clamp(1.0, 20_000.0) as usize;
    let w = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let lo = a + k as f64 * w;
            recurse(f, lo, lo + w, tol / pieces as f64, 0)
        })
        .sum()
}

/// Standard normal density.
pub fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Box-Cox transform on `x > 0`, written out directly.
pub fn box_cox(x: f64, kappa: f64) -> f64 {
    if kappa == 0.0 {
        x.ln()
    } else {
        (x.powf(kappa) - 1.0) / kappa
    }
}

/// Probability of each class `[c_{g-1}, c_g)` (with `c_0 = 0`, `c_G = inf`)
/// by integrating the density of `z` where `h_kappa(z) ~ N(mu, sigma^2)`.
/// Integration runs over `u = log z`.
pub fn class_probs_by_quadrature(mu: f64, sigma: f64, kappa: f64, cuts: &[f64]) -> Vec<f64> {
    let density_u = |u: f64| {
        let z = u.exp();
        let t = box_cox(z, kappa);
        if !t.is_finite() {
            return 0.0;
        }
        // dz/du = z and h'(z) = z^(kappa - 1), so the Jacobian is z^kappa
        phi((t - mu) / sigma) / sigma * (kappa * u).exp()
    };
    let (u_lo, u_hi) = (-400.0, 400.0);
    let mut edges = vec![u_lo];
    edges.extend(cuts.iter().map(|c| c.ln()));
    edges.push(u_hi);
    edges
        .windows(2)
        .map(|w| integrate(&density_u, w[0], w[1], 1e-13))
        .collect()
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col].clone();
            for (dst, src) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Weighted least squares via the normal equations `X'WX a = X'Wy`.
pub fn normal_equations(rows: &[Vec<f64>], w: &[f64], y: &[f64]) -> Vec<f64> {
    let k = rows[0].len();
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for ((r, &wi), &yi) in rows.iter().zip(w).zip(y) {
        for i in 0..k {
            xty[i] += wi * r[i] * yi;
            for j in 0..k {
                xtx[i][j] += wi * r[i] * r[j];
            }
        }
    }
    solve_dense(xtx, xty)
}

/// Gini coefficient as the mean absolute difference over all ordered pairs
/// divided by twice the mean.
pub fn gini_pairwise(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let mut total = 0.0;
    for a in z {
        for b in z {
            total += (a - b).abs();
        }
    }
    total / (2.0 * n * n * mean)
}

/// Log multinomial mass of `counts` given class probabilities, by summing
/// the probability of every ordered assignment of `n` units to classes.
pub fn multinomial_by_enumeration(probs: &[f64], counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let g = probs.len();
    let mut total = 0.0;
    let sequences = (g as u64).pow(n as u32);
    for code in 0..sequences {
        let mut c = code;
        let mut tally = vec![0u64; g];
        let mut p = 1.0;
        for _ in 0..n {
            let k = (c % g as u64) as usize;
            c /= g as u64;
            tally[k] += 1;
            p *= probs[k];
        }
        if tally == counts {
            total += p;
        }
    }
    total.ln()
}

/// All count vectors with `g` classes summing to `n`.
pub fn compositions(n: u64, g: usize) -> Vec<Vec<u64>> {
    if g == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in 0..=n {
        for mut rest in compositions(n - first, g - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Mean and batch-means standard error of a correlated series.
pub fn batch_means(series: &[f64], batches: usize) -> (f64, f64) {
    let len = series.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|k| series[k * len..(k + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (m, (var / batches as f64).sqrt())
}

/// Standard normal distribution function.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Maximize a unimodal function on `[a, b]` by golden-section search.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Posterior moments `(E mu, E mu^2, E sigma2, E sigma2^2)` of one area with
/// `mu ~ N(prior_mean, tau2)`, `sigma2 ~ IG(shape, scale)` and latent unit
/// values known only to lie in the given intervals. Units outside the sample
/// integrate out. Computed by nested quadrature over `(log sigma2, mu)`.
pub fn tiny_posterior_moments(
    prior_mean: f64,
    tau2: f64,
    shape: f64,
    scale: f64,
    intervals: &[(f64, f64)],
) -> [f64; 4] {
    let tau = tau2.sqrt();
    let kernel = |mu: f64, t: f64| {
        let s2 = t.exp();
        let s = s2.sqrt();
        let mut lik = 1.0;
        for &(lo, hi) in intervals {
            lik *= norm_cdf((hi - mu) / s) - norm_cdf((lo - mu) / s);
        }
        // IG density in t = log sigma2 carries the Jacobian sigma2
        let ig = (-shape * t - scale / s2).exp();
        phi((mu - prior_mean) / tau) * ig * lik
    };
    let moment = |g: &dyn Fn(f64, f64) -> f64| {
        integrate(
            &|t: f64| {
                integrate(
                    &|mu: f64| g(mu, t) * kernel(mu, t),
                    prior_mean - 12.0 * tau,
                    prior_mean + 12.0 * tau,
                    1e-12,
                )
            },
            -10.0,
            6.0,
            1e-12,
        )
    };
    let z = moment(&|_, _| 1.0);
    [
        moment(&|mu, _| mu) / z,
        moment(&|mu, _| mu * mu) / z,
        moment(&|_, t| t.exp()) / z,
        moment(&|_, t| (2.0 * t).exp()) / z,
    ]
}
