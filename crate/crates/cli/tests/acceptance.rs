//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset,
//! e.g. `cargo test -p grouped-sae-cli --test acceptance -- 1 5`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use grouped_sae::baseline::{gini, Midpoints};
use grouped_sae::eis::{eis_fit, gls_natural_params, AreaTarget, EisConfig, ProposalParams};
use grouped_sae::estimator::EstimatorRegistry;
use grouped_sae::gibbs::{GibbsConfig, GibbsSampler};
use grouped_sae::likelihood::{group_probs, log_pmf};
use grouped_sae::mcem::{fit, marginal_loglik, EmConfig};
use grouped_sae::population::draw_area_population;
use grouped_sae::simulate::{
    default_n_pattern, simulate_model_based, synthetic_covariates, synthetic_psi, ModelBasedConfig, RrmseTable,
};
use grouped_sae::{AreaRecord, GroupedSample, Grouping, Hyperparameters, Thresholds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances and budgets, one block per criterion.
const C1_CASES: usize = 200;
const C1_TOL: f64 = 1e-8;
const C1_BUDGET: Duration = Duration::from_secs(30);
const C2_TOL: f64 = 1e-10;
const C3_CONFIGS: usize = 100;
const C3_REL_TOL: f64 = 1e-8;
const C4_DRAWS: usize = 100_000;
const C4_SE_MULT: f64 = 3.0;
const C4_BUDGET: Duration = Duration::from_secs(120);
const C5_VECTORS: usize = 1000;
const C5_TOL: f64 = 1e-10;
const C5_EXACT_TOL: f64 = 1e-12;
const C6_IS_DRAWS: usize = 100_000;
const C6_SE_MULT: f64 = 2.0;
const C6_ITERATIONS: usize = 15;
const C7_FITS: usize = 20;
const C7_S1: usize = 5000;
/// Student t quantile with 19 degrees of freedom at 1 - 0.05 / (2 * 3):
/// two-sided 95% Bonferroni-adjusted over the three coefficients.
const C7_T_QUANTILE: f64 = 2.625_105_913;
const C7_BUDGET: Duration = Duration::from_secs(30 * 60);
const C8_SHARE: f64 = 0.9;
/// One hour on eight cores, expressed as CPU time on this machine.
const C8_CORE_HOURS: f64 = 8.0;
const C9_MIN_SHIFT: f64 = 0.10;
const FIXTURE_THRESHOLDS: &str = "2,4,6,10";
const FIXTURE_TOP_AREA: &str = "A10";

const G5: [f64; 4] = [2.0, 3.0, 4.5, 6.0];
const G9: [f64; 8] = [1.5, 2.0, 2.5, 3.0, 3.75, 4.5, 6.0, 8.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn fmt_secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// ---------------------------------------------------------------- 1

fn c1_group_probs() -> Outcome {
    let mut elapsed = Duration::ZERO;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..C1_CASES {
        let groups = rng.random_range(2..=9);
        let mut cuts: Vec<f64> = (0..groups - 1).map(|_| rng.random_range(0.1..30.0)).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let kappa: f64 = rng.random_range(-1.0..1.0);
        let sigma: f64 = rng.random_range(0.2..2.0);
        let mu = box_cox(rng.random_range(0.5..20.0), kappa);
        let th = Thresholds::new(cuts.clone()).unwrap();
        let start = Instant::now();
        let got = group_probs(mu, sigma * sigma, kappa, &th);
        elapsed += start.elapsed();
        let want = class_probs_by_quadrature(mu, sigma, kappa, &cuts);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    outcome(
        worst <= C1_TOL && elapsed < C1_BUDGET,
        format!(
            "{C1_CASES} cases, max |diff| {worst:.2e} (tol {C1_TOL:e}), implementation time {} (budget {})",
            fmt_secs(elapsed),
            fmt_secs(C1_BUDGET)
        ),
    )
}

// ---------------------------------------------------------------- 2

fn c2_pmf_enumeration() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut outcomes = 0;
    let params = [(0.3, 0.8, 0.0), (1.2, 0.5, 0.4), (-0.2, 1.5, -0.3), (2.0, 0.3, 0.1)];
    for cuts in [vec![1.5], vec![3.0], vec![0.8, 2.5], vec![1.0, 6.0]] {
        let th = Thresholds::new(cuts).unwrap();
        for &(mu, sigma, kappa) in &params {
            let probs = group_probs(mu, sigma * sigma, kappa, &th);
            for n in 0..=6 {
                for counts in compositions(n, th.groups()) {
                    let want = multinomial_by_enumeration(&probs, &counts);
                    let got = log_pmf(&GroupedSample::new(counts), mu, sigma * sigma, kappa, &th);
                    worst = worst.max((got - want).abs());
                    outcomes += 1;
                }
            }
        }
    }
    outcome(
        worst <= C2_TOL,
        format!("{outcomes} outcomes with n <= 6, G <= 3, max |diff| {worst:.2e} (tol {C2_TOL:e})"),
    )
}

// ---------------------------------------------------------------- 3

fn c3_gls() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let grouping = Grouping::new(Thresholds::new(vec![2.0]).unwrap());
    let cfg = EisConfig {
        s0: 50,
        ..EisConfig::default()
    };
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut attempts = 0;
    while checked < C3_CONFIGS && attempts < 20 * C3_CONFIGS {
        attempts += 1;
        let psi = Hyperparameters {
            beta: vec![rng.random_range(0.0..1.5)],
            tau2: rng.random_range(0.05..1.0),
            lambda: rng.random_range(3.0..30.0),
            kappa: 0.0,
            gamma: vec![rng.random_range(-1.5..0.5)],
        };
        let n1 = rng.random_range(0..30);
        let n2 = rng.random_range(0..30);
        if n1 + n2 == 0 {
            continue;
        }
        let y = GroupedSample::new(vec![n1, n2]);
        let target = AreaTarget::new("c3", &y, &[1.0], &psi, &grouping);
        let fitted = eis_fit(&target, ProposalParams::prior(&psi, &[1.0]), &cfg, &mut rng);
        let Some(system) = fitted.last_system else {
            continue;
        };
        let rows: Vec<Vec<f64>> = system
            .draws
            .iter()
            .map(|u| vec![1.0, u.b, u.b * u.b, u.sigma2.ln(), 1.0 / u.sigma2])
            .collect();
        let want = normal_equations(&rows, &system.weights, &system.response);
        let got = gls_natural_params(&system.draws, &system.weights, &system.response).unwrap();
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let rel = got.iter().zip(&want).fold(0.0f64, |m, (g, w)| m.max((g - w).abs() / scale));
        worst = worst.max(rel);
        checked += 1;
    }
    outcome(
        checked == C3_CONFIGS && worst <= C3_REL_TOL,
        format!("{checked} weighted EIS systems, max relative diff {worst:.2e} (tol {C3_REL_TOL:e})"),
    )
}

// ---------------------------------------------------------------- 4

fn c4_gibbs() -> Outcome {
    let start = Instant::now();
    let psi = Hyperparameters {
        beta: vec![0.3],
        tau2: 0.5,
        lambda: 8.0,
        kappa: 0.0,
        gamma: vec![0.0],
    };
    let grouping = Grouping::new(Thresholds::new(vec![1.0]).unwrap());
    let area = AreaRecord {
        id: "tiny".into(),
        x: vec![1.0],
        n_pop: 3,
        sample: Some(GroupedSample::new(vec![1, 1])),
    };
    let sampler = GibbsSampler::new(&area, &psi, &grouping).unwrap();
    let mut state = sampler.initial_state();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..1000 {
        sampler.step(&mut state, &mut rng).unwrap();
    }
    let mut series: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(C4_DRAWS)).collect();
    for _ in 0..C4_DRAWS {
        sampler.step(&mut state, &mut rng).unwrap();
        series[0].push(state.mu);
        series[1].push(state.mu * state.mu);
        series[2].push(state.sigma2);
        series[3].push(state.sigma2 * state.sigma2);
    }
    let (shape, scale) = psi.sigma2_prior(&[1.0]);
    // log-scale cut at 0: one sampled unit below and one above
    let want = tiny_posterior_moments(0.3, 0.5, shape, scale, &[(f64::NEG_INFINITY, 0.0), (0.0, f64::INFINITY)]);
    let names = ["E mu", "E mu^2", "E s2", "E s2^2"];
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 0..4 {
        let (m, se) = batch_means(&series[k], 50);
        let z = (m - want[k]) / se;
        pass &= z.abs() <= C4_SE_MULT;
        parts.push(format!("{} {m:.4} vs {:.4} ({z:+.2} se)", names[k], want[k]));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < C4_BUDGET;
    outcome(pass, format!("{}; {}", parts.join(", "), fmt_secs(elapsed)))
}

// ---------------------------------------------------------------- 5

fn c5_gini() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    for _ in 0..C5_VECTORS {
        let len = rng.random_range(1..200);
        let z: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0f64).powi(3) * 1e4).collect();
        if z.iter().all(|&v| v == 0.0) {
            continue;
        }
        worst = worst.max((gini(&z).unwrap() - gini_pairwise(&z)).abs());
    }
    let exact = (gini(&[1.0, 2.0, 3.0]).unwrap() - 2.0 / 9.0).abs();
    outcome(
        worst <= C5_TOL && exact <= C5_EXACT_TOL,
        format!("{C5_VECTORS} vectors, max |diff| {worst:.2e}; {{1,2,3}} off 2/9 by {exact:.1e}"),
    )
}

// ---------------------------------------------------------------- shared data

/// Areas simulated from `psi` with the first `n` of `n_pop` units sampled.
fn simulated_areas(psi: &Hyperparameters, m: usize, n: usize, n_pop: usize, th: &Thresholds, seed: u64) -> Vec<AreaRecord> {
    let x = synthetic_covariates(m, psi.p(), seed);
    let h = grouped_sae::BoxCox::new(psi.kappa);
    x.into_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
            let (_, pop) = draw_area_population(psi, &x, n_pop, &h, &mut rng);
            AreaRecord {
                id: format!("s{i}"),
                x,
                n_pop: n_pop as u64,
                sample: Some(pop.sample_first(n, th)),
            }
        })
        .collect()
}

// ---------------------------------------------------------------- 6

fn c6_em_ascent() -> Outcome {
    let psi = synthetic_psi(2);
    let th = Thresholds::new(G5.to_vec()).unwrap();
    let grouping = Grouping::new(th.clone());
    let areas = simulated_areas(&psi, 20, 50, 500, &th, 606);
    let cfg = EmConfig {
        max_em_iter: C6_ITERATIONS,
        seed: 606,
        ..EmConfig::default()
    };
    let res = fit(&areas, &grouping, &cfg).unwrap();
    let iterates: Vec<&Hyperparameters> = std::iter::once(&res.initial).chain(&res.history).collect();
    let ll: Vec<(f64, f64)> = iterates
        .iter()
        .map(|p| marginal_loglik(&areas, p, &grouping, 100, C6_IS_DRAWS, 6060))
        .collect();
    let mut worst_z = f64::NEG_INFINITY;
    for w in ll.windows(2) {
        let se = (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
        worst_z = worst_z.max((w[0].0 - w[1].0) / se);
    }
    let path: Vec<String> = ll.iter().map(|(v, _)| format!("{v:.2}")).collect();
    outcome(
        worst_z <= C6_SE_MULT,
        format!(
            "{} iterates, largest drop {worst_z:.2} se (limit {C6_SE_MULT}); loglik {}",
            ll.len(),
            path.join(" ")
        ),
    )
}

// ---------------------------------------------------------------- 7

fn c7_recovery() -> Outcome {
    let start = Instant::now();
    let psi = synthetic_psi(3);
    let th = Thresholds::new(G9.to_vec()).unwrap();
    let grouping = Grouping::new(th.clone());
    let mut betas = Vec::new();
    for r in 0..C7_FITS {
        let seed = 7000 + r as u64;
        let areas = simulated_areas(&psi, 200, 200, 1000, &th, seed);
        let cfg = EmConfig {
            s1: C7_S1,
            seed,
            ..EmConfig::default()
        };
        let res = fit(&areas, &grouping, &cfg).unwrap();
        eprintln!(
            "  C7 fit {}/{}: beta {:?}, {} iterations, converged={}",
            r + 1,
            C7_FITS,
            res.psi.beta,
            res.iterations,
            res.converged
        );
        betas.push(res.psi.beta);
    }
    let k = C7_FITS as f64;
    let mut pass = true;
    let mut parts = Vec::new();
    for j in 0..psi.p() {
        let vals: Vec<f64> = betas.iter().map(|b| b[j]).collect();
        let mean = vals.iter().sum::<f64>() / k;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
        let half = C7_T_QUANTILE * sd / k.sqrt();
        let covered = (mean - psi.beta[j]).abs() <= half;
        pass &= covered;
        parts.push(format!(
            "beta_{} true {:.4} in [{:.4}, {:.4}]: {covered}",
            j + 1,
            psi.beta[j],
            mean - half,
            mean + half
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < C7_BUDGET;
    outcome(
        pass,
        format!("{}; {} (budget {})", parts.join("; "), fmt_secs(elapsed), fmt_secs(C7_BUDGET)),
    )
}

// ---------------------------------------------------------------- 8

fn block_means(table: &RrmseTable, name: &str) -> Vec<f64> {
    let col = table.column(name).unwrap();
    let mut sizes: Vec<u64> = table.rows.iter().map(|r| r.n).collect();
    sizes.dedup();
    sizes
        .iter()
        .map(|&n| {
            let v: Vec<f64> = table.rows.iter().zip(&col).filter(|(r, _)| r.n == n).map(|(_, &v)| v).collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c8_model_based() -> Outcome {
    let start = Instant::now();
    let mut tables = Vec::new();
    for cuts in [G5.to_vec(), G9.to_vec()] {
        let th = Thresholds::new(cuts).unwrap();
        let cfg = ModelBasedConfig {
            m: 40,
            n_pop: 300,
            n_pattern: default_n_pattern(),
            thresholds: th.clone(),
            psi_true: synthetic_psi(3),
            covariates: None,
            replicates: 30,
            seed: 808,
            em: EmConfig {
                seed: 808,
                ..EmConfig::default()
            },
        };
        let registry = EstimatorRegistry::with_defaults(GibbsConfig::default(), Midpoints::new(&th));
        tables.push(simulate_model_based(&cfg, &registry).unwrap());
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for t in &tables {
        for name in ["eb", "naive"] {
            let means = block_means(t, name);
            let decreasing = means.windows(2).all(|w| w[1] < w[0]);
            pass &= decreasing;
            let shown: Vec<String> = means.iter().map(|v| format!("{v:.4}")).collect();
            parts.push(format!("(a) G={} {name} blocks [{}] decreasing={decreasing}", t.groups, shown.join(", ")));
        }
        let eb = t.column("eb").unwrap();
        let naive = t.column("naive").unwrap();
        let wins = eb.iter().zip(&naive).filter(|(e, n)| e <= n).count();
        let share = wins as f64 / eb.len() as f64;
        pass &= share >= C8_SHARE;
        parts.push(format!("(b) G={} EB <= naive in {wins}/{} areas", t.groups, eb.len()));
    }
    let med5 = median(tables[0].column("eb").unwrap());
    let med9 = median(tables[1].column("eb").unwrap());
    pass &= med9 <= med5;
    parts.push(format!("(c) median EB G=9 {med9:.4} vs G=5 {med5:.4}"));
    let elapsed = start.elapsed();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8) as f64;
    let budget = Duration::from_secs_f64(3600.0 * C8_CORE_HOURS / cores);
    pass &= elapsed < budget;
    parts.push(format!("{} (budget {} on {cores} cores)", fmt_secs(elapsed), fmt_secs(budget)));
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------- CLI helpers

fn gsae() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gsae"));
    cmd.env("RUST_LOG", "error");
    cmd
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/example_areas.csv")
}

fn run_ok(cmd: &mut Command) -> Result<(), String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).trim().to_string())
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_default()
}

/// Fixture model fitted once and shared by criteria 9 and 10.
fn fixture_model(dir: &Path) -> Result<PathBuf, String> {
    let model = dir.join("fixture_model.json");
    if !model.exists() {
        run_ok(gsae().args(["fit", "--thresholds", FIXTURE_THRESHOLDS, "--seed", "42", "--no-meta"]).arg("--data").arg(fixture()).arg("--out").arg(&model))?;
    }
    Ok(model)
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = String::from_utf8(read(path)).unwrap_or_default();
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

// ---------------------------------------------------------------- 9

fn c9_naive_sensitivity(dir: &Path) -> Outcome {
    let model = match fixture_model(dir) {
        Ok(m) => m,
        Err(e) => return outcome(false, format!("fit failed: {e}")),
    };
    let th = Thresholds::parse(FIXTURE_THRESHOLDS).unwrap();
    let top = Midpoints::new(&th).top();
    let predict = |cg: f64, out: &Path| {
        run_ok(
            gsae()
                .args(["predict", "--seed", "9"])
                .arg("--model")
                .arg(&model)
                .arg("--data")
                .arg(fixture())
                .arg("--naive-cg")
                .arg(cg.to_string())
                .arg("--out")
                .arg(out),
        )
    };
    let (base, doubled) = (dir.join("c9_base.csv"), dir.join("c9_doubled.csv"));
    if let Err(e) = predict(top, &base).and_then(|_| predict(2.0 * top, &doubled)) {
        return outcome(false, format!("predict failed: {e}"));
    }
    let (a, b) = (csv_rows(&base), csv_rows(&doubled));
    let header = &a[0];
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (naive, mean_eb, gini_eb) = (col("mean_naive"), col("mean_eb"), col("gini_eb"));
    let eb_equal = a.iter().zip(&b).all(|(r, s)| r[mean_eb] == s[mean_eb] && r[gini_eb] == s[gini_eb]);
    let Some(row) = a.iter().position(|r| r[0] == FIXTURE_TOP_AREA) else {
        return outcome(false, "top-heavy area missing from the output");
    };
    let before: f64 = a[row][naive].parse().unwrap_or(f64::NAN);
    let after: f64 = b[row][naive].parse().unwrap_or(f64::NAN);
    let shift = (after - before).abs() / before;
    outcome(
        shift > C9_MIN_SHIFT && eb_equal,
        format!(
            "top midpoint {top} -> {}: naive mean of {FIXTURE_TOP_AREA} {before:.4} -> {after:.4} ({:.1}%), EB columns identical: {eb_equal}",
            2.0 * top,
            100.0 * shift
        ),
    )
}

// ---------------------------------------------------------------- 10

fn c10_determinism(dir: &Path) -> Outcome {
    let model = match fixture_model(dir) {
        Ok(m) => m,
        Err(e) => return outcome(false, format!("fit failed: {e}")),
    };
    let fast_em = ["--s1", "1000", "--s2", "200", "--max-iter", "8"];
    let fast_gibbs = ["--gibbs-iters", "100", "--burnin", "10"];
    let units = dir.join("units.csv");
    let covariates = dir.join("domain_x.csv");
    type Job = (&'static str, Vec<String>);
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<String>>();
    let path = |p: &Path| p.to_string_lossy().into_owned();
    let fixture = path(&fixture());
    let mut jobs: Vec<Job> = vec![
        ("synth-population", {
            let mut a = s(&["simulate", "synth-population", "--domains", "6", "--units", "80", "--seed", "3"]);
            a.extend(["--out".into(), path(&units), "--covariates-out".into(), path(&covariates)]);
            a
        }),
        ("fit", {
            let mut a = s(&["fit", "--thresholds", FIXTURE_THRESHOLDS, "--seed", "42", "--no-meta"]);
            a.extend(["--data".into(), fixture.clone()]);
            a.extend(s(&fast_em));
            a
        }),
        ("predict", {
            let mut a = s(&["predict", "--seed", "5"]);
            a.extend(["--model".into(), path(&model), "--data".into(), fixture.clone()]);
            a
        }),
        ("bootstrap", {
            let mut a = s(&["bootstrap", "--seed", "5", "--B", "5"]);
            a.extend(["--model".into(), path(&model), "--data".into(), fixture.clone()]);
            a.extend(s(&fast_gibbs));
            a
        }),
        ("model-based", {
            let mut a = s(&["simulate", "model-based", "--thresholds", "2,3,4.5,6", "--m", "6", "--n-pop", "100"]);
            a.extend(s(&["--n-pattern", "20,40", "--p", "2", "--R", "2", "--seed", "8"]));
            a.extend(s(&fast_em));
            a.extend(s(&fast_gibbs));
            a
        }),
        ("design-based", {
            let mut a = s(&["simulate", "design-based", "--thresholds", "2,6,12,25", "--n", "20", "--R", "2", "--seed", "8"]);
            a.extend(["--population".into(), path(&units), "--covariates".into(), path(&covariates)]);
            a.extend(s(&fast_em));
            a.extend(s(&fast_gibbs));
            a
        }),
    ];
    let mut failures = Vec::new();
    let mut compared = 0;
    for (name, args) in jobs.drain(..) {
        let mut outputs: Vec<Vec<Vec<u8>>> = Vec::new();
        for (run, threads) in [(0, "1"), (1, "1"), (2, "2")] {
            let out = dir.join(format!("c10_{name}_{run}.out"));
            let mut cmd = gsae();
            cmd.args(["--threads", threads]).args(&args);
            if name == "synth-population" {
                let moved = [dir.join(format!("c10_units_{run}.csv")), dir.join(format!("c10_x_{run}.csv"))];
                if let Err(e) = run_ok(&mut cmd) {
                    failures.push(format!("{name}: {e}"));
                    break;
                }
                std::fs::copy(&units, &moved[0]).ok();
                std::fs::copy(&covariates, &moved[1]).ok();
                outputs.push(moved.iter().map(|p| read(p)).collect());
                continue;
            }
            cmd.arg("--out").arg(&out);
            let trace = dir.join(format!("c10_{name}_{run}.trace"));
            if name == "fit" {
                cmd.arg("--trace").arg(&trace);
            }
            if let Err(e) = run_ok(&mut cmd) {
                failures.push(format!("{name}: {e}"));
                break;
            }
            let mut files = vec![read(&out)];
            if name == "fit" {
                files.push(read(&trace));
            }
            outputs.push(files);
        }
        if outputs.len() == 3 {
            compared += 1;
            if outputs[0].iter().any(|b| b.is_empty()) {
                failures.push(format!("{name}: empty output"));
            }
            if outputs[0] != outputs[1] {
                failures.push(format!("{name}: rerun differs"));
            }
            if outputs[0] != outputs[2] {
                failures.push(format!("{name}: --threads 2 differs from --threads 1"));
            }
        }
    }
    outcome(
        failures.is_empty() && compared == 6,
        if failures.is_empty() {
            format!("{compared} commands byte-identical across reruns and thread counts")
        } else {
            failures.join("; ")
        },
    )
}

// ---------------------------------------------------------------- driver

type Criterion<'a> = (usize, &'a str, Box<dyn Fn() -> Outcome>);

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |k: usize| selected.is_empty() || selected.contains(&k);
    let dir = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<Criterion> = vec![
        (1, "group probabilities vs quadrature", Box::new(c1_group_probs)),
        (2, "multinomial pmf vs enumeration", Box::new(c2_pmf_enumeration)),
        (3, "EIS regression vs normal equations", Box::new(c3_gls)),
        (4, "Gibbs moments vs quadrature", Box::new(c4_gibbs)),
        (5, "Gini vs pairwise formula", Box::new(c5_gini)),
        (6, "EM marginal likelihood ascent", Box::new(c6_em_ascent)),
        (7, "parameter recovery", Box::new(c7_recovery)),
        (8, "model-based RRMSE pattern", Box::new(c8_model_based)),
        (9, "naive top-class sensitivity", Box::new({
            let d = dir.path().to_path_buf();
            move || c9_naive_sensitivity(&d)
        })),
        (10, "CLI determinism", Box::new({
            let d = dir.path().to_path_buf();
            move || c10_determinism(&d)
        })),
    ];
    let mut failed = 0;
    for (k, name, check) in &criteria {
        if !wanted(*k) {
            continue;
        }
        let started = Instant::now();
        let result = check();
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {k:>2} ({name}, {}): {}", fmt_secs(started.elapsed()), result.detail);
        failed += usize::from(!result.pass);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
