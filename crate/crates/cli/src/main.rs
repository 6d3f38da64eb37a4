use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;

use grouped_sae::baseline::{naive_mean, Midpoints};
use grouped_sae::bootstrap::bootstrap_rmse;
use grouped_sae::datamodel::{load_areas, load_model, save_model, Meta, Standardization};
use grouped_sae::estimator::EstimatorRegistry;
use grouped_sae::gibbs::{estimate_area, GibbsConfig};
use grouped_sae::mcem::{fit, EmConfig, InitOptions};
use grouped_sae::output::{save_estimates, save_rmse, save_rrmse, save_trace};
use grouped_sae::rng::{Purpose, StreamKey};
use grouped_sae::simulate::{
    default_n_pattern, load_domain_covariates, load_units, simulate_design_based, simulate_model_based,
    synth_population, synthetic_psi, write_domain_covariates, write_units, DesignBasedConfig, ModelBasedConfig,
};
use grouped_sae::{FittedModel, Grouping, Result, SaeError, Thresholds};

#[derive(Parser)]
#[command(name = "gsae", version, about = "Small area estimation from grouped frequency data")]
struct Cli {
    /// Worker threads (default: all available cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the hyperparameters by Monte Carlo EM
    Fit(FitArgs),
    /// Empirical Bayes estimates of area means and Gini coefficients
    Predict(PredictArgs),
    /// Parametric bootstrap RMSE of the EB and naive estimators
    Bootstrap(BootstrapArgs),
    /// Repeated-sampling studies
    #[command(subcommand)]
    Simulate(SimulateCommand),
}

#[derive(Args, Clone)]
struct EmArgs {
    #[arg(long, default_value_t = 100)]
    s0: usize,
    #[arg(long, default_value_t = 10_000)]
    s1: usize,
    #[arg(long, default_value_t = 500)]
    s2: usize,
    #[arg(long, default_value_t = 30)]
    window_h: usize,
    #[arg(long, default_value_t = 5)]
    window_d: usize,
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Regress log sigma^2 instead of sigma^2 for the starting gamma
    #[arg(long)]
    init_gamma_log: bool,
    /// Hold kappa fixed at this value
    #[arg(long, allow_hyphen_values = true)]
    fix_kappa: Option<f64>,
}

impl EmArgs {
    fn config(&self, seed: u64) -> EmConfig {
        EmConfig {
            s0: self.s0,
            s1: self.s1,
            s2: self.s2,
            window_h: self.window_h,
            window_d: self.window_d,
            delta: self.delta,
            epsilon: self.epsilon,
            max_em_iter: self.max_iter,
            seed,
            fix_kappa: self.fix_kappa,
            init: InitOptions {
                gamma_on_log: self.init_gamma_log,
            },
            ..EmConfig::default()
        }
    }
}

#[derive(Args, Clone)]
struct GibbsArgs {
    #[arg(long, default_value_t = 500)]
    gibbs_iters: usize,
    #[arg(long, default_value_t = 50)]
    burnin: usize,
}

impl GibbsArgs {
    fn config(&self) -> GibbsConfig {
        GibbsConfig {
            iterations: self.gibbs_iters,
            burnin: self.burnin,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Areas CSV: area_id, N_pop, x_1..x_p, y_1..y_G
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated class thresholds c_1,...,c_{G-1}
    #[arg(long)]
    thresholds: String,
    #[arg(long)]
    out: PathBuf,
    /// Fit trace CSV
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    em: EmArgs,
    /// Omit the run timestamp from the model file
    #[arg(long)]
    no_meta: bool,
    /// Centre and scale non-constant covariate columns before fitting
    #[arg(long)]
    standardize: bool,
    /// Divide class probabilities by the in-range mass
    #[arg(long)]
    renormalize_groups: bool,
    /// Box-Cox location shift C (transform z - C)
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    shift: f64,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    gibbs: GibbsArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Representative value of the open top class for the naive estimator
    #[arg(long, allow_hyphen_values = true)]
    naive_cg: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BootstrapArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Bootstrap replicates
    #[arg(long = "B", default_value_t = 100)]
    b: usize,
    #[command(flatten)]
    gibbs: GibbsArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, allow_hyphen_values = true)]
    naive_cg: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Populations drawn from the model at known hyperparameters
    ModelBased(ModelBasedArgs),
    /// Fixed finite populations with simple random sampling
    DesignBased(DesignBasedArgs),
    /// Write a synthetic unit-level population and its domain covariates
    SynthPopulation(SynthArgs),
}

#[derive(Args)]
struct ModelBasedArgs {
    #[arg(long)]
    thresholds: String,
    /// Model JSON whose hyperparameters serve as the truth; a synthetic set is used otherwise
    #[arg(long)]
    true_model: Option<PathBuf>,
    /// Number of areas
    #[arg(long, default_value_t = 100)]
    m: usize,
    /// Population size per area
    #[arg(long, default_value_t = 1000)]
    n_pop: usize,
    /// Comma-separated sample sizes assigned to equal blocks of areas
    #[arg(long)]
    n_pattern: Option<String>,
    /// Covariates per area including the intercept (synthetic truth only)
    #[arg(long, default_value_t = 3)]
    p: usize,
    /// Replicates
    #[arg(long = "R", default_value_t = 100)]
    r: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    em: EmArgs,
    #[command(flatten)]
    gibbs: GibbsArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DesignBasedArgs {
    /// Unit-level CSV: domain_id, value
    #[arg(long)]
    population: PathBuf,
    /// Domain covariate CSV: domain_id, x_1..x_p
    #[arg(long)]
    covariates: PathBuf,
    #[arg(long)]
    thresholds: String,
    /// Box-Cox shift C, below the smallest unit value (default: minimum - 0.1)
    #[arg(long, allow_hyphen_values = true)]
    shift_c: Option<f64>,
    /// Units per domain in the frozen population (default: input size)
    #[arg(long)]
    pop_size: Option<usize>,
    /// Sample size per domain
    #[arg(long)]
    n: usize,
    #[arg(long = "R", default_value_t = 100)]
    r: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    em: EmArgs,
    #[command(flatten)]
    gibbs: GibbsArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    domains: usize,
    #[arg(long, default_value_t = 400)]
    units: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Unit-level output CSV
    #[arg(long)]
    out: PathBuf,
    /// Domain covariate output CSV
    #[arg(long)]
    covariates_out: PathBuf,
}

fn naive_midpoints(thresholds: &Thresholds, shift: f64, top: Option<f64>) -> Result<Midpoints> {
    let m = Midpoints::with_lower(thresholds, shift.min(0.0));
    match top {
        Some(v) => m.with_top(v),
        None => Ok(m),
    }
}

fn parse_sizes(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| SaeError::Malformed(format!("bad sample size '{s}'")))
        })
        .collect()
}

fn run_fit(args: &FitArgs) -> Result<()> {
    let thresholds = Thresholds::parse(&args.thresholds)?;
    let mut areas = load_areas(&args.data, &thresholds)?;
    let standardization = if args.standardize {
        let s = Standardization::from_areas(&areas);
        s.apply(&mut areas)?;
        Some(s)
    } else {
        None
    };
    let grouping = Grouping::new(thresholds.clone())
        .with_shift(args.shift)
        .with_renormalize(args.renormalize_groups);
    let cfg = args.em.config(args.seed);
    let result = fit(&areas, &grouping, &cfg)?;
    if !result.converged {
        warn!("EM stopped after {} iterations without meeting the criterion", result.iterations);
    }
    info!("EM finished after {} iterations", result.iterations);

    let mut model = FittedModel::new(&result.psi, &thresholds);
    model.shift = args.shift;
    model.renormalize_groups = args.renormalize_groups;
    model.standardization = standardization;
    model.converged = result.converged;
    model.em_trace = result.trace.clone();
    if !args.no_meta {
        model.meta = Some(Meta {
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        });
    }
    save_model(&args.out, &model)?;
    if let Some(path) = &args.trace {
        save_trace(path, &result.trace)?;
    }
    Ok(())
}

/// Model, its grouping, and areas with the model's covariate scaling applied.
fn load_fitted(model_path: &Path, data: &Path) -> Result<(FittedModel, Grouping, Vec<grouped_sae::AreaRecord>)> {
    let model = load_model(model_path)?;
    let thresholds = model.thresholds()?;
    let mut areas = load_areas(data, &thresholds)?;
    if let Some(s) = &model.standardization {
        s.apply(&mut areas)?;
    }
    if let Some(a) = areas.iter().find(|a| a.x.len() != model.p) {
        return Err(SaeError::Arity {
            what: format!("covariates of area {}", a.id),
            expected: model.p,
            found: a.x.len(),
        });
    }
    let grouping = Grouping::new(thresholds)
        .with_shift(model.shift)
        .with_renormalize(model.renormalize_groups);
    Ok((model, grouping, areas))
}

fn run_predict(args: &PredictArgs) -> Result<()> {
    let (model, grouping, areas) = load_fitted(&args.model, &args.data)?;
    let psi = model.hyperparameters();
    let midpoints = naive_midpoints(&grouping.thresholds, model.shift, args.naive_cg)?;
    let cfg = args.gibbs.config();
    let rows = areas
        .par_iter()
        .enumerate()
        .map(|(i, area)| {
            let mut rng = StreamKey::new(Purpose::Estimator).area(i).rng(args.seed);
            let eb = estimate_area(area, &psi, &grouping, &cfg, &mut rng)?;
            let naive = area.sample.as_ref().map(|y| naive_mean(y, &midpoints)).transpose()?;
            Ok((eb, naive))
        })
        .collect::<Result<Vec<_>>>()?;
    save_estimates(&args.out, &rows)
}

fn run_bootstrap(args: &BootstrapArgs) -> Result<()> {
    let (model, grouping, areas) = load_fitted(&args.model, &args.data)?;
    let psi = model.hyperparameters();
    let midpoints = naive_midpoints(&grouping.thresholds, model.shift, args.naive_cg)?;
    let registry = EstimatorRegistry::with_defaults(args.gibbs.config(), midpoints);
    let rows = bootstrap_rmse(&areas, &psi, &grouping, args.b, &registry, args.seed)?;
    save_rmse(&args.out, &registry.names(), &rows)
}

fn run_model_based(args: &ModelBasedArgs) -> Result<()> {
    let thresholds = Thresholds::parse(&args.thresholds)?;
    let psi_true = match &args.true_model {
        Some(path) => load_model(path)?.hyperparameters(),
        None => {
            info!("no --true-model given: using the built-in synthetic hyperparameters (p = {})", args.p);
            synthetic_psi(args.p)
        }
    };
    let n_pattern = match &args.n_pattern {
        Some(text) => parse_sizes(text)?,
        None => default_n_pattern(),
    };
    let cfg = ModelBasedConfig {
        m: args.m,
        n_pop: args.n_pop,
        n_pattern,
        thresholds: thresholds.clone(),
        psi_true,
        covariates: None,
        replicates: args.r,
        seed: args.seed,
        em: args.em.config(args.seed),
    };
    let registry = EstimatorRegistry::with_defaults(args.gibbs.config(), Midpoints::new(&thresholds));
    let table = simulate_model_based(&cfg, &registry)?;
    save_rrmse(&args.out, &table)
}

fn run_design_based(args: &DesignBasedArgs) -> Result<()> {
    let thresholds = Thresholds::parse(&args.thresholds)?;
    let units = load_units(&args.population)?;
    let covariates = load_domain_covariates(&args.covariates, &units)?;
    let cfg = DesignBasedConfig {
        pop_size: args.pop_size,
        sample_sizes: vec![args.n; units.len()],
        thresholds: thresholds.clone(),
        covariates,
        shift: args.shift_c,
        replicates: args.r,
        seed: args.seed,
        em: args.em.config(args.seed),
    };
    // the shift is only known once the population is frozen, so the naive
    // midpoints are rebuilt from the resolved value
    let shift = match args.shift_c {
        Some(c) => c,
        None => {
            let pop = grouped_sae::simulate::build_population(&units, args.pop_size, args.seed)?;
            grouped_sae::simulate::resolve_shift(&cfg, &pop)
        }
    };
    let registry = EstimatorRegistry::with_defaults(args.gibbs.config(), naive_midpoints(&thresholds, shift, None)?);
    let (table, population) = simulate_design_based(&units, &cfg, &registry)?;
    info!("population fingerprint {:016x}", population.fingerprint());
    save_rrmse(&args.out, &table)
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    if args.domains == 0 || args.units == 0 {
        return Err(SaeError::Invalid("--domains and --units must be positive".into()));
    }
    let (units, x) = synth_population(args.domains, args.units, args.seed);
    write_units(&args.out, &units)?;
    let ids: Vec<String> = units.iter().map(|d| d.id.clone()).collect();
    write_domain_covariates(&args.covariates_out, &ids, &x)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Predict(a) => run_predict(a),
        Command::Bootstrap(a) => run_bootstrap(a),
        Command::Simulate(SimulateCommand::ModelBased(a)) => run_model_based(a),
        Command::Simulate(SimulateCommand::DesignBased(a)) => run_design_based(a),
        Command::Simulate(SimulateCommand::SynthPopulation(a)) => run_synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            warn!("could not size the thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} msg={}", e.kind(), msg);
            ExitCode::from(1)
        }
    }
}
