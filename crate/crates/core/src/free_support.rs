//! Approximate damped Sinkhorn scheme.
//!
//! The exact marginal ratio `dνʲ_ψ/dνʲ` is replaced by the output of an
//! approximate oracle, here a Monte-Carlo estimate from samples of `μ_ψ`
//! mixed with `νʲ`:
//!
//! ```text
//! ψʲ ← ψʲ − ηλ log dν̃ʲ/dνʲ
//! ```
//!
//! Samples come from a [`MuSampler`]: exact categorical draws when `π_ref` is
//! discrete, or Langevin chains when `π_ref` is Lebesgue measure on a ball or
//! box. The potentials `ψʲ` always live on the finite supports of `νʲ`.

use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::dual::{
    barycenter_from_duals, certificate_from_log_ratios, dual_objective, kl_from_log_ratio,
    log_marginal_ratios, Certificate, DualState,
};
use crate::entropic::PotentialVector;
use crate::error::{Error, Result};
use crate::langevin::{choose_sigma, ula_sample, ChainExecutor, SamplerBudget, SmoothedTarget};
use crate::measures::{
    CostOracle, DiscreteMeasure, Domain, FixedSupportProblem, Mode, PointCloud, SolverConfig,
};
use crate::oracle::{
    accuracy_bound, choose_oracle_params, mix_log_estimate, weighted_log_marginal_estimate,
};
use crate::rng;
use crate::sinkhorn::{apply_damped_update, Clock, ConvergenceTrace, TraceRecord};

/// Empirical approximation of `μ_ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MuDraw {
    pub points: PointCloud,
    /// `log` of the empirical weights; uniform `1/n` when `None`.
    pub log_weights: Option<Vec<f64>>,
    /// True when `points` is the full reference support of the evaluation
    /// problem, so its cached cost blocks apply.
    pub on_reference: bool,
    pub n_samples: usize,
    /// Certified `‖law(draw) − μ_ψ‖_TV` per sample, when known.
    pub eps_mu: Option<f64>,
    pub sigma: Option<f64>,
}

pub trait MuSampler {
    fn sample(&mut self, psi: &[PotentialVector], n: usize, iteration: u64) -> Result<MuDraw>;
}

/// Exact i.i.d. draws from `μ_ψ` on a discrete reference support, stored as
/// counts on the reference atoms.
#[derive(Debug, Clone)]
pub struct ExactDiscreteSampler<'a> {
    problem: &'a FixedSupportProblem,
    cfg: &'a SolverConfig,
}

impl<'a> ExactDiscreteSampler<'a> {
    pub fn new(problem: &'a FixedSupportProblem, cfg: &'a SolverConfig) -> Self {
        Self { problem, cfg }
    }
}

impl MuSampler for ExactDiscreteSampler<'_> {
    fn sample(&mut self, psi: &[PotentialVector], n: usize, iteration: u64) -> Result<MuDraw> {
        if n == 0 {
            return Err(Error::EmptySampleSet);
        }
        let state = barycenter_from_duals(psi.to_vec(), self.problem, self.cfg)?;
        let dist = WeightedIndex::new(state.mu_weights())
            .map_err(|_| Error::OracleFailure("barycenter weights cannot be sampled"))?;
        let mut rng = rng::stream(self.cfg.seed, rng::PURPOSE_DISCRETE, iteration, 0);
        let mut counts = alloc::vec![0u64; state.mu_weights().len()];
        for _ in 0..n {
            counts[dist.sample(&mut rng)] += 1;
        }
        let log_n = libm::log(n as f64);
        let log_weights = counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    f64::NEG_INFINITY
                } else {
                    libm::log(c as f64) - log_n
                }
            })
            .collect();
        Ok(MuDraw {
            points: self.problem.reference().points().clone(),
            log_weights: Some(log_weights),
            on_reference: true,
            n_samples: n,
            eps_mu: Some(0.0),
            sigma: None,
        })
    }
}

/// How the Langevin sampler picks `σ`, the step size and the chain length.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplerSettings {
    /// Target oracle accuracy `ε`; the sampler aims at TV error `ε²/(16m)`.
    pub eps: f64,
    /// Share of that TV target given to the smoothing error (default 1/2).
    pub smoothing_share: f64,
    pub sigma: Option<f64>,
    pub step: Option<f64>,
    pub iters: Option<u64>,
    /// LSI constant bound; the default heuristic is used when `None`.
    pub c_sigma: Option<f64>,
    /// Largest chain length accepted from the certified budget.
    pub max_chain_steps: u64,
    /// Permits hand-picked budgets that violate the step-size condition.
    pub allow_uncertified: bool,
}

impl SamplerSettings {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            smoothing_share: 0.5,
            sigma: None,
            step: None,
            iters: None,
            c_sigma: None,
            max_chain_steps: 1_000_000,
            allow_uncertified: false,
        }
    }

    /// Hand-picked `(σ, step, iters)`, marked as not certified.
    pub fn practical(eps: f64, sigma: f64, step: f64, iters: u64) -> Self {
        Self {
            sigma: Some(sigma),
            step: Some(step),
            iters: Some(iters),
            allow_uncertified: true,
            ..Self::new(eps)
        }
    }
}

/// Draws from `μ_{ψ,σ}` with ULA, projected onto the domain.
pub struct LangevinSampler<'a> {
    domain: Domain,
    marginals: &'a [DiscreteMeasure],
    cfg: &'a SolverConfig,
    settings: SamplerSettings,
    executor: &'a dyn ChainExecutor,
    c_inf: f64,
    total_support: usize,
}

impl<'a> LangevinSampler<'a> {
    pub fn new(
        domain: Domain,
        marginals: &'a [DiscreteMeasure],
        cfg: &'a SolverConfig,
        settings: SamplerSettings,
        executor: &'a dyn ChainExecutor,
    ) -> Result<Self> {
        if !(settings.eps > 0.0) {
            return Err(Error::ParameterOutOfRange(
                "sampler accuracy must be positive",
            ));
        }
        if !(settings.smoothing_share > 0.0 && settings.smoothing_share < 1.0) {
            return Err(Error::ParameterOutOfRange(
                "smoothing share must lie in (0, 1)",
            ));
        }
        let c_inf = domain.c_inf_squared();
        let total_support = marginals.iter().map(DiscreteMeasure::len).sum();
        Ok(Self {
            domain,
            marginals,
            cfg,
            settings,
            executor,
            c_inf,
            total_support,
        })
    }

    /// Total TV target `ε²/(16m)`.
    pub fn tv_target(&self) -> f64 {
        self.settings.eps * self.settings.eps / (16.0 * self.total_support as f64)
    }

    fn target(&self, psi: &[PotentialVector]) -> Result<SmoothedTarget<'a>> {
        let sigma = match self.settings.sigma {
            Some(s) => s,
            None => {
                let scaled = self.settings.eps * libm::sqrt(2.0 * self.settings.smoothing_share);
                choose_sigma(
                    scaled,
                    self.total_support,
                    self.domain.radius(),
                    self.cfg.tau,
                    self.domain.dim(),
                )?
                .sigma
            }
        };
        SmoothedTarget::new(
            self.domain.clone(),
            sigma,
            self.cfg.tau,
            self.cfg.lambda,
            self.cfg.weights.clone(),
            self.marginals,
            psi,
            &CostOracle::SquaredEuclidean,
        )
    }

    /// Budget for `psi`, or [`Error::BudgetExhausted`] when the certified
    /// chain length exceeds the cap.
    pub fn budget(&self, target: &SmoothedTarget<'_>) -> Result<SamplerBudget> {
        let s = &self.settings;
        match (s.step, s.iters) {
            (Some(step), Some(iters)) => SamplerBudget::manual(
                target,
                step,
                iters,
                self.c_inf,
                s.c_sigma,
                !s.allow_uncertified,
            ),
            (None, None) => {
                let (budget, required) =
                    SamplerBudget::certified(target, self.tv_target(), self.c_inf, s.c_sigma)?;
                if required > s.max_chain_steps as f64 {
                    return Err(Error::BudgetExhausted {
                        required,
                        cap: s.max_chain_steps,
                    });
                }
                Ok(budget)
            }
            _ => Err(Error::ParameterOutOfRange(
                "step and iters must be given together",
            )),
        }
    }
}

impl MuSampler for LangevinSampler<'_> {
    fn sample(&mut self, psi: &[PotentialVector], n: usize, iteration: u64) -> Result<MuDraw> {
        let target = self.target(psi)?;
        let budget = self.budget(&target)?;
        let draw = ula_sample(&target, &budget, n, self.cfg.seed, iteration, self.executor)?;
        Ok(MuDraw {
            points: draw.projected(&self.domain),
            log_weights: None,
            on_reference: false,
            n_samples: n,
            eps_mu: draw.eps_mu,
            sigma: Some(draw.sigma),
        })
    }
}

/// Log ratios for every marginal plus what is known about their accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleStep {
    pub log_ratios: Vec<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub n_samples: Option<usize>,
    pub sigma: Option<f64>,
}

pub trait SinkhornOracle {
    fn log_ratios(&mut self, psi: &[PotentialVector], iteration: u64) -> Result<OracleStep>;
}

/// Exact marginals on a fixed support (accuracy 0).
#[derive(Debug, Clone)]
pub struct ExactOracle<'a> {
    problem: &'a FixedSupportProblem,
    cfg: &'a SolverConfig,
}

impl<'a> ExactOracle<'a> {
    pub fn new(problem: &'a FixedSupportProblem, cfg: &'a SolverConfig) -> Self {
        Self { problem, cfg }
    }
}

impl SinkhornOracle for ExactOracle<'_> {
    fn log_ratios(&mut self, psi: &[PotentialVector], _iteration: u64) -> Result<OracleStep> {
        let state = barycenter_from_duals(psi.to_vec(), self.problem, self.cfg)?;
        Ok(OracleStep {
            log_ratios: log_marginal_ratios(&state, self.problem, self.cfg)?,
            epsilon: Some(0.0),
            n_samples: None,
            sigma: None,
        })
    }
}

/// Monte-Carlo estimate mixed with `νʲ`.
pub struct MonteCarloOracle<'a, S> {
    sampler: S,
    marginals: &'a [DiscreteMeasure],
    cost: &'a CostOracle,
    reference: Option<&'a FixedSupportProblem>,
    lambda: f64,
    zeta: f64,
    n_samples: usize,
    /// Failure probability allotted to one oracle call.
    delta_step: f64,
    c_inf: f64,
}

impl<'a, S: MuSampler> MonteCarloOracle<'a, S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sampler: S,
        marginals: &'a [DiscreteMeasure],
        cost: &'a CostOracle,
        reference: Option<&'a FixedSupportProblem>,
        lambda: f64,
        zeta: f64,
        n_samples: usize,
        delta_step: f64,
        c_inf: f64,
    ) -> Result<Self> {
        if !(zeta > 0.0 && zeta <= 0.5) {
            return Err(Error::ZetaOutOfRange(zeta));
        }
        if n_samples == 0 {
            return Err(Error::EmptySampleSet);
        }
        if !(delta_step > 0.0 && delta_step < 1.0) || !(c_inf > 0.0) {
            return Err(Error::ParameterOutOfRange(
                "need delta in (0,1) and c_inf > 0",
            ));
        }
        Ok(Self {
            sampler,
            marginals,
            cost,
            reference,
            lambda,
            zeta,
            n_samples,
            delta_step,
            c_inf,
        })
    }

    pub fn sampler(&self) -> &S {
        &self.sampler
    }
}

impl<S: MuSampler> SinkhornOracle for MonteCarloOracle<'_, S> {
    fn log_ratios(&mut self, psi: &[PotentialVector], iteration: u64) -> Result<OracleStep> {
        let draw = self.sampler.sample(psi, self.n_samples, iteration)?;
        let total: usize = self.marginals.iter().map(DiscreteMeasure::len).sum();
        let mut log_ratios = Vec::with_capacity(self.marginals.len());
        let mut epsilon: Option<f64> = draw.eps_mu.map(|_| 0.0);
        for (j, (p, nu)) in psi.iter().zip(self.marginals).enumerate() {
            let block = match (draw.on_reference, self.reference) {
                (true, Some(problem)) => Some(problem.cost_block(j)),
                (true, None) => {
                    return Err(Error::OracleFailure(
                        "reference draw without a reference problem",
                    ))
                }
                (false, _) => None,
            };
            let est = weighted_log_marginal_estimate(
                p,
                nu,
                &draw.points,
                draw.log_weights.as_deref(),
                block,
                self.cost,
                self.lambda,
            )?;
            log_ratios.push(mix_log_estimate(&est, self.zeta)?.log_density_ratio);
            if let (Some(e), Some(eps_mu)) = (epsilon.as_mut(), draw.eps_mu) {
                let bound = accuracy_bound(
                    nu.len(),
                    total,
                    draw.n_samples as u64,
                    self.zeta,
                    eps_mu,
                    self.delta_step,
                    self.c_inf,
                )?;
                *e = e.max(bound);
            }
        }
        Ok(OracleStep {
            log_ratios,
            epsilon,
            n_samples: Some(draw.n_samples),
            sigma: draw.sigma,
        })
    }
}

/// `ψʲ − ηλ log dν̃ʲ/dνʲ` with the oracle's ratios.
pub fn approx_damped_step(
    psi: &[PotentialVector],
    oracle: &mut dyn SinkhornOracle,
    cfg: &SolverConfig,
    iteration: u64,
) -> Result<Vec<PotentialVector>> {
    let step = oracle.log_ratios(psi, iteration)?;
    apply_damped_update(psi, &step.log_ratios, cfg.eta(), cfg.lambda)
}

#[derive(Debug, Clone)]
pub struct ApproxOutcome {
    /// Best iterate: highest dual value with an evaluation rig, smallest
    /// oracle residual bound otherwise.
    pub psi: Vec<PotentialVector>,
    /// `μ_ψ` and the exact certificate on the evaluation rig, if any.
    pub state: Option<DualState>,
    pub certificate: Option<Certificate>,
    pub trace: ConvergenceTrace,
    pub converged: bool,
}

struct Candidate {
    psi: Vec<PotentialVector>,
    state: Option<DualState>,
    certificate: Option<Certificate>,
    score: f64,
}

/// Runs the approximate scheme for `cfg.max_iters` steps from `ψ₀ = 0` (or
/// `warm_start`). With an evaluation rig the exact dual value and
/// certificate are recorded and the run stops once the certified gap falls
/// to `cfg.tol_certificate`.
pub fn run_approximate(
    marginals: &[DiscreteMeasure],
    cfg: &SolverConfig,
    oracle: &mut dyn SinkhornOracle,
    evaluator: Option<&FixedSupportProblem>,
    warm_start: Option<Vec<PotentialVector>>,
    oracle_c_inf: f64,
    clock: &dyn Clock,
) -> Result<ApproxOutcome> {
    cfg.validate(marginals.len())?;
    let eta = cfg.eta();
    let mut trace = ConvergenceTrace {
        records: Vec::new(),
        eta,
        monotonicity_guaranteed: false,
    };
    let mut psi = match warm_start {
        Some(p) => p,
        None => marginals.iter().map(PotentialVector::zeros).collect(),
    };
    if psi.len() != marginals.len() {
        return Err(Error::LengthMismatch {
            expected: marginals.len(),
            found: psi.len(),
        });
    }
    for (p, nu) in psi.iter().zip(marginals) {
        p.check_anchor(nu)?;
    }
    let mut best: Option<Candidate> = None;

    for t in 0..=cfg.max_iters {
        let step = oracle.log_ratios(&psi, t as u64)?;
        let (state, certificate) = match evaluator {
            Some(problem) => {
                let state = barycenter_from_duals(psi.clone(), problem, cfg)?;
                let exact = log_marginal_ratios(&state, problem, cfg)?;
                let value = dual_objective(&state, problem, cfg);
                let cert = certificate_from_log_ratios(
                    value,
                    state.psi(),
                    &exact,
                    problem.marginals(),
                    &cfg.weights,
                    problem.c_inf(),
                );
                (Some(state), Some(cert))
            }
            None => (None, None),
        };
        let kl_sum: f64 = marginals
            .iter()
            .zip(&step.log_ratios)
            .zip(&cfg.weights)
            .map(|((nu, lr), w)| w * kl_from_log_ratio(nu.weights(), nu.log_weights(), lr))
            .sum();
        let max_osc = psi.iter().map(PotentialVector::osc).fold(0.0, f64::max);
        trace.records.push(TraceRecord {
            t,
            dual_value: certificate.as_ref().map(|c| c.dual_value),
            improvement_bound: cfg.min_reg() * kl_sum,
            gap_upper_bound: certificate.as_ref().map(|c| c.gap_upper_bound),
            max_osc,
            wall_ms: clock.elapsed_ms(),
            epsilon_certified: step.epsilon,
            n_samples: step.n_samples,
            sigma: step.sigma,
        });

        let score = match &certificate {
            Some(c) => c.dual_value,
            None => {
                -certificate_from_log_ratios(
                    0.0,
                    &psi,
                    &step.log_ratios,
                    marginals,
                    &cfg.weights,
                    oracle_c_inf,
                )
                .gap_upper_bound
            }
        };
        if let Some(c) = &certificate {
            if c.gap_upper_bound <= cfg.tol_certificate {
                return Ok(ApproxOutcome {
                    psi,
                    state,
                    certificate,
                    trace,
                    converged: true,
                });
            }
        }
        let improves = best.as_ref().is_none_or(|b| score >= b.score);
        if t == cfg.max_iters {
            let chosen = if improves {
                Candidate {
                    psi,
                    state,
                    certificate,
                    score,
                }
            } else {
                best.take().unwrap()
            };
            return Ok(ApproxOutcome {
                psi: chosen.psi,
                state: chosen.state,
                certificate: chosen.certificate,
                trace,
                converged: false,
            });
        }
        let next = apply_damped_update(&psi, &step.log_ratios, eta, cfg.lambda)?;
        if improves {
            best = Some(Candidate {
                psi,
                state,
                certificate,
                score,
            });
        }
        psi = next;
    }
    unreachable!("loop returns at t == max_iters")
}

/// Settings for [`run_free_support`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FreeSupportParams {
    /// Target oracle accuracy `ε`.
    pub eps: f64,
    /// Failure probability for the whole run, split over `T·k` oracle calls.
    pub delta: f64,
    pub zeta: Option<f64>,
    /// Samples per oracle call; the Hoeffding requirement when `None`.
    pub n_samples: Option<usize>,
    /// Largest sample count accepted from the Hoeffding requirement.
    pub max_samples: usize,
    pub sampler: SamplerSettings,
    /// Chains drawn from the final `μ_{ψ,σ}`.
    pub final_samples: usize,
}

impl FreeSupportParams {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            delta: 0.05,
            zeta: None,
            n_samples: None,
            max_samples: 10_000_000,
            sampler: SamplerSettings::new(eps),
            final_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FreeSupportOutcome {
    pub psi: Vec<PotentialVector>,
    /// Barycenter samples from the final `μ_{ψ,σ}`, projected onto `X`.
    pub samples: PointCloud,
    pub sample_eps_mu: Option<f64>,
    pub sigma: f64,
    pub budget: SamplerBudget,
    pub zeta: f64,
    pub n_samples: usize,
    pub trace: ConvergenceTrace,
    pub converged: bool,
    pub certificate: Option<Certificate>,
}

/// The full free-support pipeline: Langevin sampling of `μ_ψ`, mixed
/// Monte-Carlo marginals and the damped update, then a final draw of
/// barycenter samples. `evaluator` is an optional discretized rig on which
/// the exact dual value is recorded.
pub fn run_free_support(
    marginals: &[DiscreteMeasure],
    domain: &Domain,
    cfg: &SolverConfig,
    params: &FreeSupportParams,
    executor: &dyn ChainExecutor,
    evaluator: Option<&FixedSupportProblem>,
    clock: &dyn Clock,
) -> Result<FreeSupportOutcome> {
    if cfg.mode != Mode::FreeSupport {
        return Err(Error::ModeMismatch);
    }
    cfg.validate(marginals.len())?;
    if marginals.is_empty() {
        return Err(Error::EmptySupport);
    }
    for nu in marginals {
        if nu.dim() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                found: nu.dim(),
            });
        }
        if nu.points().iter().any(|y| !domain.contains(y)) {
            return Err(Error::ParameterOutOfRange(
                "marginal atoms must lie in the domain",
            ));
        }
    }
    if !(params.delta > 0.0 && params.delta < 1.0) {
        return Err(Error::ParameterOutOfRange("delta must lie in (0, 1)"));
    }
    let c_inf = domain.c_inf_squared();
    let k = marginals.len();
    let m: usize = marginals.iter().map(DiscreteMeasure::len).sum();
    let max_mj = marginals
        .iter()
        .map(DiscreteMeasure::len)
        .max()
        .unwrap_or(1);
    let calls = (cfg.max_iters.max(1) * k) as f64;
    let delta_step = params.delta / calls;
    let decision = choose_oracle_params(params.eps, c_inf, max_mj, m, delta_step)?;
    let zeta = params.zeta.unwrap_or(decision.zeta);
    let n_samples = match params.n_samples {
        Some(n) => n,
        None => {
            if decision.n_required > params.max_samples as f64 {
                return Err(Error::BudgetExhausted {
                    required: decision.n_required,
                    cap: params.max_samples as u64,
                });
            }
            libm::ceil(decision.n_required) as usize
        }
    };

    let sampler = LangevinSampler::new(domain.clone(), marginals, cfg, params.sampler, executor)?;
    let mut oracle = MonteCarloOracle::new(
        sampler,
        marginals,
        &CostOracle::SquaredEuclidean,
        None,
        cfg.lambda,
        zeta,
        n_samples,
        delta_step,
        c_inf,
    )?;
    let out = run_approximate(marginals, cfg, &mut oracle, evaluator, None, c_inf, clock)?;

    let sampler = oracle.sampler();
    let target = sampler.target(&out.psi)?;
    let budget = sampler.budget(&target)?;
    let final_draw = ula_sample(
        &target,
        &budget,
        params.final_samples,
        cfg.seed,
        cfg.max_iters as u64 + 1,
        executor,
    )?;
    Ok(FreeSupportOutcome {
        samples: final_draw.projected(domain),
        sample_eps_mu: final_draw.eps_mu,
        sigma: final_draw.sigma,
        budget,
        zeta,
        n_samples,
        psi: out.psi,
        trace: out.trace,
        converged: out.converged,
        certificate: out.certificate,
    })
}
