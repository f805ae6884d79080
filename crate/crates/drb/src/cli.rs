//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on input errors, 2 when the iteration or
//! sampling budget runs out before the tolerance is reached.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use drb_core::dual::{barycenter_from_duals, log_marginal_ratios, suboptimality_certificate};
use drb_core::free_support::{
    run_free_support, ExactDiscreteSampler, FreeSupportParams, MonteCarloOracle, SamplerSettings,
    SinkhornOracle,
};
use drb_core::oracle::{
    accuracy_bound, choose_oracle_params, verify_oracle_properties, OracleOutput,
};
use drb_core::sinkhorn::{run_with, Clock, NoClock, UpdateRule};
use drb_core::{
    Certificate, DiscreteMeasure, Domain, FixedSupportProblem, Mode, PotentialVector, SolverConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::exec::{resolve_threads, RayonExecutor, WallClock};
use crate::fixtures::{self, DivergenceFixture};
use crate::io::{self, PotentialsFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_BUDGET: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "drb",
    version,
    about = "Doubly regularized entropic Wasserstein barycenters"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Compute a barycenter on a fixed grid or by free-support sampling.
    Solve(SolveArgs),
    /// Evaluate the suboptimality certificate of given potentials.
    Certify(CertifyArgs),
    /// Check the approximate-oracle properties by repeated sampling.
    VerifyOracle(VerifyOracleArgs),
    /// Damped versus undamped traces on the divergence fixture.
    DivergenceDemo(DivergenceArgs),
    /// Regenerate reference and divergence fixtures.
    MakeFixtures(MakeFixturesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Fixed,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// `τ = λ/2`.
    Debiased,
}

/// Every `solve` setting. Flags override values from `--config`, which
/// override defaults; the effective values are written to `config.json`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveArgs {
    /// JSON file with settings (for example a previous `config.json`).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Marginal measure files (JSON or CSV).
    #[arg(long, num_args = 1..)]
    pub marginals: Option<Vec<PathBuf>>,
    /// Barycenter weights `w_j` (uniform when omitted).
    #[arg(long, num_args = 1..)]
    pub weights: Option<Vec<f64>>,
    /// Reference measure for fixed-support mode.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Ball radius for free-support mode.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Box lower corner (instead of a ball).
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    pub box_lo: Option<Vec<f64>>,
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    pub box_hi: Option<Vec<f64>>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Damping override; above `min(1, τ/λ)` the monotone guarantee is lost.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Target oracle accuracy in free-support mode.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Failure probability of the whole free-support run.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Samples per oracle call (Hoeffding requirement when omitted).
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub max_samples: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// ULA step size (requires `--ula-iters`).
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub ula_iters: Option<u64>,
    /// Log-Sobolev constant bound for the sampler budget.
    #[arg(long)]
    pub lsi_constant: Option<f64>,
    #[arg(long)]
    pub max_chain_steps: Option<u64>,
    /// Accept hand-picked sampler budgets outside the step-size condition.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub allow_uncertified: Option<bool>,
    #[arg(long)]
    pub smoothing_share: Option<f64>,
    /// Barycenter samples drawn at the end of a free-support run.
    #[arg(long)]
    pub final_samples: Option<usize>,
    /// Evaluate the exact dual value on an `N`-point grid (1-d free support).
    #[arg(long)]
    pub eval_grid: Option<usize>,
    /// Record wall-clock milliseconds in the trace (zeros otherwise).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub wall_time: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for Langevin chains; `DRB_THREADS` takes precedence.
    #[arg(long)]
    #[serde(skip)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    #[arg(long)]
    pub lambda: f64,
    #[arg(long)]
    pub tau: f64,
    #[arg(long, num_args = 1.., required = true)]
    pub marginals: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub reference: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Potentials file `{"potentials": [[...], ...]}`.
    #[arg(long)]
    pub psi: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyOracleArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Potentials to test at (zeros when omitted).
    #[arg(long)]
    pub psi: Option<PathBuf>,
    /// Target accuracy used to pick `ζ`.
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    #[arg(long, default_value_t = 100_000)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DivergenceArgs {
    /// Fixture file (the shipped one when omitted).
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MakeFixturesArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub count: u64,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

fn exit_code_for(err: &anyhow::Error) -> i32 {
    let exhausted = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<drb_core::Error>(),
            Some(drb_core::Error::BudgetExhausted { .. })
        )
    });
    if exhausted {
        EXIT_BUDGET
    } else {
        EXIT_INPUT
    }
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code_for(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Solve(args) => solve(args),
        Command::Certify(args) => certify(args),
        Command::VerifyOracle(args) => verify_oracle(args),
        Command::DivergenceDemo(args) => divergence_demo(args),
        Command::MakeFixtures(args) => make_fixtures(args),
    }
}

/// Overlays the non-null settings of `flags` onto `file`.
fn merge(file: Value, flags: Value) -> Value {
    let mut base = match file {
        Value::Object(m) => m,
        _ => serde_json::Map::new(),
    };
    if let Value::Object(f) = flags {
        for (k, v) in f {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    Value::Object(base)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("cannot resolve {}", p.display()))
}

impl SolveArgs {
    /// Applies `--config` and fills every default.
    pub fn resolve(self) -> Result<SolveArgs> {
        let threads = self.threads;
        let file = match &self.config {
            Some(p) => io::read_json::<Value>(p)?,
            None => Value::Null,
        };
        let merged = merge(file, serde_json::to_value(&self)?);
        let mut a: SolveArgs = serde_json::from_value(merged).context("invalid settings")?;
        a.threads = threads;
        a.mode.get_or_insert(ModeArg::Fixed);
        let lambda = a.lambda.ok_or_else(|| anyhow!("--lambda is required"))?;
        match (a.preset, a.tau) {
            (Some(Preset::Debiased), Some(t)) if t != lambda / 2.0 => {
                bail!("--preset debiased sets tau = lambda/2 and conflicts with --tau {t}")
            }
            (Some(Preset::Debiased), _) => a.tau = Some(lambda / 2.0),
            (None, None) => bail!("--tau or --preset is required"),
            (None, Some(_)) => {}
        }
        let marginals = a
            .marginals
            .take()
            .ok_or_else(|| anyhow!("--marginals is required"))?;
        if marginals.is_empty() {
            bail!("--marginals needs at least one file");
        }
        a.marginals = Some(
            marginals
                .iter()
                .map(|p| absolute(p))
                .collect::<Result<_>>()?,
        );
        let k = marginals.len();
        a.weights.get_or_insert_with(|| vec![1.0 / k as f64; k]);
        if let Some(r) = &a.reference {
            a.reference = Some(absolute(r)?);
        }
        if let Some(o) = &a.out {
            a.out = Some(absolute(o)?);
        }
        a.tol.get_or_insert(1e-6);
        a.max_iters.get_or_insert(1000);
        a.seed.get_or_insert(0);
        a.wall_time.get_or_insert(true);
        if a.mode == Some(ModeArg::Free) {
            a.eps.get_or_insert(0.1);
            a.delta.get_or_insert(0.05);
            a.max_samples.get_or_insert(10_000_000);
            a.max_chain_steps.get_or_insert(1_000_000);
            a.allow_uncertified.get_or_insert(false);
            a.smoothing_share.get_or_insert(0.5);
            a.final_samples.get_or_insert(10_000);
        }
        Ok(a)
    }

    fn solver_config(&self) -> SolverConfig {
        let mut cfg = SolverConfig::new(
            self.lambda.unwrap_or_default(),
            self.tau.unwrap_or_default(),
            self.weights.clone().unwrap_or_default(),
        )
        .with_tol(self.tol.unwrap_or(1e-6))
        .with_max_iters(self.max_iters.unwrap_or(1000))
        .with_seed(self.seed.unwrap_or(0))
        .with_mode(match self.mode {
            Some(ModeArg::Free) => Mode::FreeSupport,
            _ => Mode::FixedSupport,
        });
        cfg.eta = self.eta;
        cfg
    }

    fn domain(&self) -> Result<Domain> {
        match (&self.box_lo, &self.box_hi, self.radius) {
            (Some(lo), Some(hi), None) => Ok(Domain::cuboid(lo.clone(), hi.clone())?),
            (None, None, Some(r)) => {
                let dim = self
                    .dim
                    .ok_or_else(|| anyhow!("--dim is required with --radius"))?;
                Ok(Domain::ball(dim, r)?)
            }
            _ => {
                bail!("free-support mode needs either --radius and --dim or --box-lo and --box-hi")
            }
        }
    }
}

fn read_marginals(paths: &[PathBuf]) -> Result<Vec<DiscreteMeasure>> {
    paths.iter().map(|p| io::read_measure(p)).collect()
}

fn out_dir(out: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn clock(wall_time: bool) -> Box<dyn Clock> {
    if wall_time {
        Box::new(WallClock::start())
    } else {
        Box::new(NoClock)
    }
}

pub fn solve(args: SolveArgs) -> Result<i32> {
    let a = args.resolve()?;
    let dir = out_dir(&a.out)?;
    let cfg = a.solver_config();
    let marginals = read_marginals(a.marginals.as_deref().unwrap_or_default())?;
    cfg.validate(marginals.len())?;
    io::write_json(&dir.join("config.json"), &a)?;
    let clock = clock(a.wall_time.unwrap_or(true));

    match a.mode {
        Some(ModeArg::Free) => solve_free(&a, cfg, marginals, &dir, clock.as_ref()),
        _ => {
            let reference_path = a
                .reference
                .as_ref()
                .ok_or_else(|| anyhow!("fixed-support mode needs --reference"))?;
            let reference = io::read_measure(reference_path)?;
            let problem = FixedSupportProblem::squared_euclidean(marginals, reference)?;
            let out = run_with(&problem, &cfg, None, UpdateRule::Damped, clock.as_ref())?;
            let mu = DiscreteMeasure::from_cloud(
                problem.reference().points().clone(),
                positive_weights(out.state.mu_weights()),
            )?;
            io::write_measure(&dir.join("barycenter.json"), &mu)?;
            io::write_trace_csv(&dir.join("trace.csv"), &out.trace, false)?;
            io::write_json(&dir.join("certificate.json"), &out.certificate)?;
            io::write_json(
                &dir.join("psi.json"),
                &PotentialsFile::from_potentials(out.state.psi()),
            )?;
            report_fixed(&out.certificate, out.converged, out.trace.records.len());
            Ok(if out.converged { EXIT_OK } else { EXIT_BUDGET })
        }
    }
}

/// Barycenter weights as a valid measure: atoms that underflow to zero get
/// the smallest positive weight.
fn positive_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|v| v.max(f64::MIN_POSITIVE)).collect()
}

fn report_fixed(cert: &Certificate, converged: bool, records: usize) {
    println!(
        "{} after {} iterations: E = {:.12e}, gap <= {:.3e}",
        if converged {
            "converged"
        } else {
            "iteration budget exhausted"
        },
        records.saturating_sub(1),
        cert.dual_value,
        cert.gap_upper_bound
    );
}

fn solve_free(
    a: &SolveArgs,
    cfg: SolverConfig,
    marginals: Vec<DiscreteMeasure>,
    dir: &Path,
    clock: &dyn Clock,
) -> Result<i32> {
    let domain = a.domain()?;
    let eps = a.eps.unwrap_or(0.1);
    let mut sampler = SamplerSettings::new(eps);
    sampler.smoothing_share = a.smoothing_share.unwrap_or(0.5);
    sampler.sigma = a.sigma;
    sampler.step = a.step;
    sampler.iters = a.ula_iters;
    sampler.c_sigma = a.lsi_constant;
    sampler.max_chain_steps = a.max_chain_steps.unwrap_or(1_000_000);
    sampler.allow_uncertified = a.allow_uncertified.unwrap_or(false);
    let params = FreeSupportParams {
        eps,
        delta: a.delta.unwrap_or(0.05),
        zeta: a.zeta,
        n_samples: a.n_samples,
        max_samples: a.max_samples.unwrap_or(10_000_000),
        sampler,
        final_samples: a.final_samples.unwrap_or(10_000),
    };
    let evaluator = match a.eval_grid {
        Some(n) => {
            if domain.dim() != 1 || n < 2 {
                bail!("--eval-grid needs a 1-d domain and at least 2 points");
            }
            let lo = domain.project(&[-1e300])[0];
            let hi = domain.project(&[1e300])[0];
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| vec![lo + (hi - lo) * i as f64 / (n - 1) as f64])
                .collect();
            let grid = DiscreteMeasure::uniform(drb_core::PointCloud::new(&rows)?)?;
            Some(FixedSupportProblem::squared_euclidean(
                marginals.clone(),
                grid,
            )?)
        }
        None => None,
    };
    let executor = RayonExecutor::new(resolve_threads(a.threads)?)?;
    let out = run_free_support(
        &marginals,
        &domain,
        &cfg,
        &params,
        &executor,
        evaluator.as_ref(),
        clock,
    )?;
    io::write_samples_csv(&dir.join("samples.csv"), &out.samples)?;
    io::write_json(
        &dir.join("samples.json"),
        &json!({
            "n": out.samples.len(),
            "dim": out.samples.dim(),
            "sigma": out.sigma,
            "eps_mu_certified": out.sample_eps_mu,
            "certified": out.sample_eps_mu.is_some(),
            "budget": out.budget,
            "zeta": out.zeta,
            "n_samples_per_oracle_call": out.n_samples,
        }),
    )?;
    io::write_trace_csv(&dir.join("trace.csv"), &out.trace, true)?;
    io::write_json(
        &dir.join("psi.json"),
        &PotentialsFile::from_potentials(&out.psi),
    )?;
    if let Some(c) = &out.certificate {
        io::write_json(&dir.join("certificate.json"), c)?;
    }
    println!(
        "{} barycenter samples written (sigma = {:.3e}, certified eps_mu = {})",
        out.samples.len(),
        out.sigma,
        out.sample_eps_mu
            .map_or("none".to_string(), |e| format!("{e:.3e}"))
    );
    Ok(EXIT_OK)
}

struct LoadedProblem {
    problem: FixedSupportProblem,
    cfg: SolverConfig,
}

fn load_problem(p: &ProblemArgs) -> Result<LoadedProblem> {
    let marginals = read_marginals(&p.marginals)?;
    let reference = io::read_measure(&p.reference)?;
    let k = marginals.len();
    let weights = p.weights.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]);
    let cfg = SolverConfig::new(p.lambda, p.tau, weights);
    cfg.validate(k)?;
    Ok(LoadedProblem {
        problem: FixedSupportProblem::squared_euclidean(marginals, reference)?,
        cfg,
    })
}

pub fn certify(args: CertifyArgs) -> Result<i32> {
    let LoadedProblem { problem, cfg } = load_problem(&args.problem)?;
    let psi = io::read_json::<PotentialsFile>(&args.psi)?.anchor(problem.marginals())?;
    let state = barycenter_from_duals(psi, &problem, &cfg)?;
    let cert = suboptimality_certificate(&state, &problem, &cfg)?;
    match &args.out {
        Some(p) => io::write_json(p, &cert)?,
        None => println!("{}", serde_json::to_string_pretty(&cert)?),
    }
    Ok(EXIT_OK)
}

/// Pass counts of the four oracle properties over repeated draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleVerification {
    pub reps: usize,
    pub n_samples: usize,
    pub zeta: f64,
    pub delta: f64,
    pub eps_target: f64,
    /// Accuracy certified for these parameters, at which the properties
    /// are checked.
    pub eps_certified: f64,
    pub positivity: usize,
    pub total_variation: usize,
    pub ratio_moment: usize,
    pub oscillation: usize,
    pub all: usize,
    pub max_tv: f64,
    pub max_ratio_moment: f64,
}

impl OracleVerification {
    pub fn rate(&self, count: usize) -> f64 {
        count as f64 / self.reps as f64
    }

    /// At least 95% of repetitions pass properties 1–3 and every repetition
    /// passes property 4.
    pub fn compliant(&self) -> bool {
        self.rate(self.all) >= 0.95 && self.oscillation == self.reps
    }
}

/// Repeats the Monte-Carlo oracle with exact sampling `reps` times at `psi`.
#[allow(clippy::too_many_arguments)]
pub fn run_oracle_verification(
    problem: &FixedSupportProblem,
    cfg: &SolverConfig,
    psi: &[PotentialVector],
    eps_target: f64,
    n_samples: usize,
    delta: f64,
    reps: usize,
    seed: u64,
) -> Result<OracleVerification> {
    let c_inf = problem.c_inf();
    let m = problem.total_support();
    let max_mj = problem
        .marginals()
        .iter()
        .map(DiscreteMeasure::len)
        .max()
        .unwrap_or(1);
    let zeta = choose_oracle_params(eps_target, c_inf, max_mj, m, delta)?.zeta;
    let cfg = cfg.clone().with_seed(seed);
    let state = barycenter_from_duals(psi.to_vec(), problem, &cfg)?;
    let exact: Vec<Vec<f64>> = log_marginal_ratios(&state, problem, &cfg)?
        .into_iter()
        .map(|lr| lr.into_iter().map(f64::exp).collect())
        .collect();
    let eps_certified = problem
        .marginals()
        .iter()
        .map(|nu| accuracy_bound(nu.len(), m, n_samples as u64, zeta, 0.0, delta, c_inf))
        .collect::<drb_core::Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let mut oracle = MonteCarloOracle::new(
        ExactDiscreteSampler::new(problem, &cfg),
        problem.marginals(),
        problem.cost(),
        Some(problem),
        cfg.lambda,
        zeta,
        n_samples,
        delta,
        c_inf,
    )?;
    let mut v = OracleVerification {
        reps,
        n_samples,
        zeta,
        delta,
        eps_target,
        eps_certified,
        positivity: 0,
        total_variation: 0,
        ratio_moment: 0,
        oscillation: 0,
        all: 0,
        max_tv: 0.0,
        max_ratio_moment: 0.0,
    };
    for rep in 0..reps {
        let step = oracle.log_ratios(psi, rep as u64)?;
        let mut ok = [true; 4];
        for (j, lr) in step.log_ratios.into_iter().enumerate() {
            let out = OracleOutput {
                log_density_ratio: lr,
                accuracy_estimate: Some(eps_certified),
                n_samples,
                zeta,
            };
            let r = verify_oracle_properties(
                &out,
                &exact[j],
                &problem.marginals()[j],
                &psi[j],
                cfg.eta(),
                cfg.lambda,
                c_inf,
                eps_certified,
            );
            ok[0] &= r.positivity.holds;
            ok[1] &= r.total_variation.holds;
            ok[2] &= r.ratio_moment.holds;
            ok[3] &= r.oscillation.holds;
            v.max_tv = v.max_tv.max(r.total_variation.measured);
            v.max_ratio_moment = v.max_ratio_moment.max(r.ratio_moment.measured);
        }
        v.positivity += ok[0] as usize;
        v.total_variation += ok[1] as usize;
        v.ratio_moment += ok[2] as usize;
        v.oscillation += ok[3] as usize;
        v.all += ok.iter().all(|b| *b) as usize;
    }
    Ok(v)
}

pub fn verify_oracle(args: VerifyOracleArgs) -> Result<i32> {
    let LoadedProblem { problem, cfg } = load_problem(&args.problem)?;
    let psi = match &args.psi {
        Some(p) => io::read_json::<PotentialsFile>(p)?.anchor(problem.marginals())?,
        None => problem
            .marginals()
            .iter()
            .map(PotentialVector::zeros)
            .collect(),
    };
    let v = run_oracle_verification(
        &problem,
        &cfg,
        &psi,
        args.eps,
        args.n_samples,
        args.delta,
        args.reps,
        args.seed,
    )?;
    if let Some(p) = &args.out {
        io::write_json(p, &v)?;
    }
    println!(
        "eps = {:.4e}, zeta = {:.3e}: positivity {}/{r}, tv {}/{r}, ratio moment {}/{r}, oscillation {}/{r} -> {}",
        v.eps_certified,
        v.zeta,
        v.positivity,
        v.total_variation,
        v.ratio_moment,
        v.oscillation,
        if v.compliant() { "compliant" } else { "not compliant" },
        r = v.reps
    );
    Ok(EXIT_OK)
}

/// Damped and undamped traces on the same instance.
pub struct DivergenceDemo {
    pub damped: drb_core::SolveOutcome,
    pub undamped: drb_core::SolveOutcome,
}

pub fn run_divergence(
    fixture: &DivergenceFixture,
    lambda: f64,
    tau: f64,
    iters: usize,
) -> Result<DivergenceDemo> {
    let instance = fixtures::with_regularization(&fixture.instance, lambda, tau);
    let problem = instance.problem()?;
    let cfg = instance.config();
    Ok(DivergenceDemo {
        damped: fixtures::trace_run(&problem, &cfg, iters, UpdateRule::Damped)?,
        undamped: fixtures::trace_run(&problem, &cfg, iters, UpdateRule::Undamped)?,
    })
}

pub fn divergence_demo(args: DivergenceArgs) -> Result<i32> {
    let fixture = fixtures::load_divergence(args.fixture.as_deref())?;
    let lambda = args.lambda.unwrap_or(fixture.instance.lambda);
    let tau = args.tau.unwrap_or(fixture.instance.tau);
    let demo = run_divergence(&fixture, lambda, tau, args.iters)?;
    std::fs::create_dir_all(&args.out)?;
    io::write_trace_csv(
        &args.out.join("damped_trace.csv"),
        &demo.damped.trace,
        false,
    )?;
    io::write_trace_csv(
        &args.out.join("undamped_trace.csv"),
        &demo.undamped.trace,
        false,
    )?;
    println!(
        "damped (eta = {}): max decrease {:.3e}, monotone: {}",
        demo.damped.trace.eta,
        demo.damped.trace.max_decrease(),
        demo.damped.trace.is_monotone(1e-9)
    );
    println!(
        "undamped (eta = 1): max decrease {:.3e}, decreases: {}",
        demo.undamped.trace.max_decrease(),
        demo.undamped.trace.max_decrease() > 1e-6
    );
    Ok(EXIT_OK)
}

pub fn make_fixtures(args: MakeFixturesArgs) -> Result<i32> {
    let dir = args.out.clone().unwrap_or_else(fixtures::shipped_dir);
    let ref_dir = dir.join(fixtures::REFERENCE_DIR);
    std::fs::create_dir_all(&ref_dir)?;
    for i in 0..args.count {
        let dim = 1 + (i as usize % 2);
        let instance = fixtures::random_instance(args.seed, i, fixtures::InstanceShape::small(dim));
        let fixture = fixtures::reference_fixture(instance)?;
        if fixture.gradient_norm > drb_core::reference::GRADIENT_TOL {
            bail!(
                "reference solver stopped at gradient norm {:.3e} on fixture {i}",
                fixture.gradient_norm
            );
        }
        let path = ref_dir.join(format!("fixture_{i:02}.json"));
        io::write_json(&path, &fixture)?;
        println!("{}: E* = {:.15e}", path.display(), fixture.e_star);
    }
    let div = fixtures::search_divergence(args.seed, 10_000, 200, 1e-6)?;
    io::write_json(&dir.join(fixtures::DIVERGENCE_FILE), &div)?;
    println!(
        "divergence fixture: undamped max decrease {:.3e}",
        div.undamped_max_decrease
    );
    Ok(EXIT_OK)
}
