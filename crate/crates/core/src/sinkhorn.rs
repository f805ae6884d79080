//! Exact damped Sinkhorn scheme on a fixed support.
//!
//! Each iteration recomputes `φʲ`, `μ_t` and the marginals `νʲ_t` from the
//! current potentials and applies
//!
//! ```text
//! ψʲ ← ψʲ − ηλ log dνʲ_t/dνʲ,   η = min(1, τ/λ)
//! ```
//!
//! With this damping the dual value increases by at least
//! `min(λ, τ) Σ_j w_j KL(νʲ ‖ νʲ_t)` per step and `osc(ψʲ_t) ≤ c_∞` holds
//! throughout. The undamped rule (`η = 1`) is kept as a diagnostic: for
//! `τ < λ/2` it can decrease the objective.

use alloc::vec::Vec;

use crate::dual::{
    barycenter_from_duals, certificate_from_log_ratios, dual_objective, kl_from_log_ratio,
    log_marginal_ratios, Certificate, DualState,
};
use crate::entropic::PotentialVector;
use crate::error::{Error, Result};
use crate::measures::{FixedSupportProblem, Mode, SolverConfig};

/// Source of wall-clock time for trace records; the core crate has no clock.
pub trait Clock {
    fn elapsed_ms(&self) -> f64;
}

/// Records zero elapsed time, keeping traces bit-reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn elapsed_ms(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceRecord {
    pub t: usize,
    /// `E(ψ_t)`; absent in free-support runs without an evaluation rig.
    pub dual_value: Option<f64>,
    /// `min(λ, τ) Σ_j w_j KL(νʲ ‖ νʲ_t)` (against the oracle marginal in
    /// approximate runs).
    pub improvement_bound: f64,
    pub gap_upper_bound: Option<f64>,
    pub max_osc: f64,
    pub wall_ms: f64,
    pub epsilon_certified: Option<f64>,
    pub n_samples: Option<usize>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
    pub eta: f64,
    /// False when η exceeds `min(1, τ/λ)` or the undamped rule is used.
    pub monotonicity_guaranteed: bool,
}

impl ConvergenceTrace {
    /// Largest drop `E_t − E_{t+1}` over consecutive records (0 if none).
    pub fn max_decrease(&self) -> f64 {
        self.records
            .windows(2)
            .filter_map(|w| Some(w[0].dual_value? - w[1].dual_value?))
            .fold(0.0, f64::max)
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.max_decrease() <= slack
    }

    pub fn dual_values(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.dual_value).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    Damped,
    /// `η = 1` regardless of `τ/λ`.
    Undamped,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub state: DualState,
    pub certificate: Certificate,
    pub trace: ConvergenceTrace,
    /// False when the iteration budget ran out before the certificate gap
    /// reached `tol_certificate`.
    pub converged: bool,
}

/// `ψʲ − ηλ ℓʲ` for log density ratios `ℓʲ`.
pub fn apply_damped_update(
    psi: &[PotentialVector],
    log_ratios: &[Vec<f64>],
    eta: f64,
    lambda: f64,
) -> Result<Vec<PotentialVector>> {
    if psi.len() != log_ratios.len() {
        return Err(Error::InconsistentState(
            "one log ratio per marginal is required",
        ));
    }
    let step = eta * lambda;
    psi.iter()
        .zip(log_ratios)
        .map(|(p, lr)| {
            if lr.len() != p.len() {
                return Err(Error::InconsistentState(
                    "log ratio length differs from potential",
                ));
            }
            let values = p
                .values()
                .iter()
                .zip(lr)
                .map(|(v, l)| v - step * l)
                .collect();
            PotentialVector::new(values, p.anchor())
        })
        .collect()
}

fn check_state(state: &DualState, problem: &FixedSupportProblem) -> Result<()> {
    if state.psi().len() != problem.k() || state.phi().len() != problem.k() {
        return Err(Error::InconsistentState("wrong number of potentials"));
    }
    for ((psi, phi), nu) in state.psi().iter().zip(state.phi()).zip(problem.marginals()) {
        if psi.check_anchor(nu).is_err() || phi.anchor() != problem.reference().id() {
            return Err(Error::InconsistentState(
                "potential anchored on the wrong support",
            ));
        }
    }
    Ok(())
}

fn step_with_eta(
    state: &DualState,
    problem: &FixedSupportProblem,
    cfg: &SolverConfig,
    eta: f64,
) -> Result<DualState> {
    check_state(state, problem)?;
    let log_ratios = log_marginal_ratios(state, problem, cfg)?;
    let next = apply_damped_update(state.psi(), &log_ratios, eta, cfg.lambda)?;
    barycenter_from_duals(next, problem, cfg)
}

/// One damped step with `η = cfg.eta()`.
pub fn damped_step(
    state: &DualState,
    problem: &FixedSupportProblem,
    cfg: &SolverConfig,
) -> Result<DualState> {
    let eta = cfg.eta();
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidDamping(eta));
    }
    step_with_eta(state, problem, cfg, eta)
}

/// One plain block-Sinkhorn step (`η = 1`).
pub fn undamped_step(
    state: &DualState,
    problem: &FixedSupportProblem,
    cfg: &SolverConfig,
) -> Result<DualState> {
    step_with_eta(state, problem, cfg, 1.0)
}

pub fn initial_state(problem: &FixedSupportProblem, cfg: &SolverConfig) -> Result<DualState> {
    let psi = problem
        .marginals()
        .iter()
        .map(PotentialVector::zeros)
        .collect();
    barycenter_from_duals(psi, problem, cfg)
}

/// Runs the damped scheme from `ψ₀ = 0` until the certificate gap drops to
/// `cfg.tol_certificate` or `cfg.max_iters` steps have been taken.
pub fn run(problem: &FixedSupportProblem, cfg: &SolverConfig) -> Result<SolveOutcome> {
    run_with(problem, cfg, None, UpdateRule::Damped, &NoClock)
}

/// General driver: optional warm start, update rule and clock.
pub fn run_with(
    problem: &FixedSupportProblem,
    cfg: &SolverConfig,
    warm_start: Option<Vec<PotentialVector>>,
    rule: UpdateRule,
    clock: &dyn Clock,
) -> Result<SolveOutcome> {
    if cfg.mode != Mode::FixedSupport {
        return Err(Error::ModeMismatch);
    }
    cfg.validate(problem.k())?;
    let eta = match rule {
        UpdateRule::Damped => cfg.eta(),
        UpdateRule::Undamped => 1.0,
    };
    let mut trace = ConvergenceTrace {
        records: Vec::new(),
        eta,
        monotonicity_guaranteed: eta <= cfg.default_eta(),
    };
    let mut state = match warm_start {
        Some(psi) => barycenter_from_duals(psi, problem, cfg)?,
        None => initial_state(problem, cfg)?,
    };
    let mut best: Option<(DualState, Certificate)> = None;

    for t in 0..=cfg.max_iters {
        let log_ratios = log_marginal_ratios(&state, problem, cfg)?;
        let value = dual_objective(&state, problem, cfg);
        let cert = certificate_from_log_ratios(
            value,
            state.psi(),
            &log_ratios,
            problem.marginals(),
            &cfg.weights,
            problem.c_inf(),
        );
        let kl_sum: f64 = problem
            .marginals()
            .iter()
            .zip(&log_ratios)
            .zip(&cfg.weights)
            .map(|((nu, lr), w)| w * kl_from_log_ratio(nu.weights(), nu.log_weights(), lr))
            .sum();
        trace.records.push(TraceRecord {
            t,
            dual_value: Some(value),
            improvement_bound: cfg.min_reg() * kl_sum,
            gap_upper_bound: Some(cert.gap_upper_bound),
            max_osc: state.max_osc(),
            wall_ms: clock.elapsed_ms(),
            epsilon_certified: None,
            n_samples: None,
            sigma: None,
        });

        if cert.gap_upper_bound <= cfg.tol_certificate {
            return Ok(SolveOutcome {
                state,
                certificate: cert,
                trace,
                converged: true,
            });
        }
        let improves = best.as_ref().is_none_or(|(_, c)| value >= c.dual_value);
        if t == cfg.max_iters {
            let (state, certificate) = if improves {
                (state, cert)
            } else {
                best.take().unwrap()
            };
            return Ok(SolveOutcome {
                state,
                certificate,
                trace,
                converged: false,
            });
        }
        let next_psi = apply_damped_update(state.psi(), &log_ratios, eta, cfg.lambda)?;
        let next = barycenter_from_duals(next_psi, problem, cfg)?;
        if improves {
            best = Some((state, cert));
        }
        state = next;
    }
    unreachable!("loop returns at t == max_iters")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{dual_objective, pushforward_marginal, suboptimality_certificate};
    use crate::measures::DiscreteMeasure;
    use alloc::vec;

    fn line(points: &[f64], weights: &[f64]) -> DiscreteMeasure {
        let rows: Vec<Vec<f64>> = points.iter().map(|p| vec![*p]).collect();
        DiscreteMeasure::new(&rows, weights.to_vec()).unwrap()
    }

    fn two_marginal() -> FixedSupportProblem {
        let reference = line(&[-1.0, -0.5, 0.0, 0.5, 1.0], &[0.2; 5]);
        let nu1 = line(&[-0.8, -0.2, 0.1], &[0.3, 0.3, 0.4]);
        let nu2 = line(&[0.0, 0.6, 0.9], &[0.5, 0.25, 0.25]);
        FixedSupportProblem::squared_euclidean(vec![nu1, nu2], reference).unwrap()
    }

    #[test]
    fn identical_single_atoms_converge_immediately() {
        let atom = DiscreteMeasure::dirac(&[0.4, -0.1]).unwrap();
        let problem =
            FixedSupportProblem::squared_euclidean(vec![atom.clone(), atom.clone()], atom).unwrap();
        let out = run(&problem, &SolverConfig::uniform(1.0, 1.0, 2)).unwrap();
        assert!(out.converged);
        assert_eq!(out.trace.records.len(), 1);
        assert_eq!(out.certificate.gap_upper_bound, 0.0);
    }

    #[test]
    fn fixed_point_is_preserved() {
        let problem = two_marginal();
        let cfg = SolverConfig::uniform(0.5, 0.5, 2)
            .with_tol(1e-13)
            .with_max_iters(5000);
        let out = run(&problem, &cfg).unwrap();
        assert!(out.converged);
        let next = damped_step(&out.state, &problem, &cfg).unwrap();
        for (a, b) in out.state.psi().iter().zip(next.psi()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
        let und = undamped_step(&out.state, &problem, &cfg).unwrap();
        for (a, b) in out.state.psi().iter().zip(und.psi()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn first_step_improvement_bound() {
        let problem = two_marginal();
        for (lambda, tau) in [(1.0, 1.0), (1.0, 0.5), (0.5, 2.0), (0.1, 0.05)] {
            let cfg = SolverConfig::uniform(lambda, tau, 2);
            let s0 = initial_state(&problem, &cfg).unwrap();
            let s1 = damped_step(&s0, &problem, &cfg).unwrap();
            let cert = suboptimality_certificate(&s0, &problem, &cfg).unwrap();
            let kl: f64 = cert
                .kl_residuals
                .iter()
                .zip(&cfg.weights)
                .map(|(k, w)| k * w)
                .sum();
            let gain = dual_objective(&s1, &problem, &cfg) - dual_objective(&s0, &problem, &cfg);
            assert!(
                gain >= lambda.min(tau) * kl - 1e-9,
                "λ={lambda} τ={tau}: {gain} < {kl}"
            );
        }
    }

    #[test]
    fn undamped_equals_damped_when_tau_dominates() {
        let problem = two_marginal();
        let cfg = SolverConfig::uniform(0.5, 0.8, 2);
        let s0 = initial_state(&problem, &cfg).unwrap();
        assert_eq!(
            damped_step(&s0, &problem, &cfg).unwrap(),
            undamped_step(&s0, &problem, &cfg).unwrap()
        );
    }

    #[test]
    fn oscillation_contracts_toward_c_inf() {
        let problem = two_marginal();
        let cfg = SolverConfig::uniform(1.0, 0.25, 2);
        let mut state = initial_state(&problem, &cfg).unwrap();
        let eta = cfg.eta();
        for _ in 0..50 {
            let next = damped_step(&state, &problem, &cfg).unwrap();
            for (a, b) in state.psi().iter().zip(next.psi()) {
                assert!(b.osc() <= (1.0 - eta) * a.osc() + eta * problem.c_inf() + 1e-9);
            }
            state = next;
        }
    }

    #[test]
    fn debiased_setting_is_monotone() {
        let problem = two_marginal();
        let cfg = SolverConfig::uniform(1.0, 0.5, 2)
            .with_max_iters(300)
            .with_tol(1e-10);
        let out = run(&problem, &cfg).unwrap();
        assert!(out.trace.monotonicity_guaranteed);
        assert!(out.trace.is_monotone(1e-9));
        assert!(out.converged);
        let r = pushforward_marginal(&out.state, 0, &problem, &cfg).unwrap();
        assert!(r.iter().all(|x| (x - 1.0).abs() < 1e-6));
    }

    #[test]
    fn budget_exhaustion_is_flagged_not_failed() {
        let problem = two_marginal();
        let cfg = SolverConfig::uniform(1.0, 1.0, 2)
            .with_max_iters(2)
            .with_tol(1e-14);
        let out = run(&problem, &cfg).unwrap();
        assert!(!out.converged);
        assert_eq!(out.trace.records.len(), 3);
    }

    #[test]
    fn overridden_eta_voids_monotonicity_flag() {
        let problem = two_marginal();
        let cfg = SolverConfig::uniform(1.0, 0.25, 2)
            .with_eta(0.9)
            .with_max_iters(3);
        let out = run(&problem, &cfg).unwrap();
        assert!(!out.trace.monotonicity_guaranteed);
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let problem = two_marginal();
        let cfg = SolverConfig::uniform(0.3, 0.2, 2).with_max_iters(40);
        let a = run(&problem, &cfg).unwrap();
        let b = run(&problem, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn free_mode_is_rejected() {
        let problem = two_marginal();
        let cfg = SolverConfig::uniform(1.0, 1.0, 2).with_mode(Mode::FreeSupport);
        assert_eq!(run(&problem, &cfg).unwrap_err(), Error::ModeMismatch);
    }
}
