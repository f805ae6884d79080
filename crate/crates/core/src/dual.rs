//! The doubly regularized dual objective and its certificate.
//!
//! For potentials `ψ = (ψ¹, …, ψᵏ)` the dual value is
//!
//! ```text
//! E(ψ) = Σ_j w_j E_{νʲ}[ψʲ] − τ log Σ_i π_i exp(−V(x_i)/τ),   V = Σ_j w_j φ_{ψʲ}
//! ```
//!
//! and the induced barycenter is `μ_ψ ∝ exp(−V/τ) π_ref`. Each `ψʲ` also
//! induces a marginal `νʲ_ψ`; the residuals `KL(νʲ ‖ νʲ_ψ)` bound the gap to
//! the optimum as long as `osc(ψʲ) ≤ c_∞`.

use alloc::vec::Vec;

use crate::entropic::{softmin_on_block, PotentialVector};
use crate::error::{Error, Result};
use crate::math::{self, LogSumExp};
use crate::measures::{FixedSupportProblem, SolverConfig};

/// Floor applied to `νʲ_ψ(y_l)` before taking logs in the KL residual.
pub const KL_FLOOR: f64 = 1e-300;

/// Slack used when testing the oscillation precondition.
pub const OSC_SLACK: f64 = 1e-9;

/// Potentials together with everything they induce on the reference support.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    psi: Vec<PotentialVector>,
    phi: Vec<PotentialVector>,
    log_z: f64,
    mu_weights: Vec<f64>,
    log_mu: Vec<f64>,
}

impl DualState {
    pub fn psi(&self) -> &[PotentialVector] {
        &self.psi
    }

    /// `φʲ` evaluated on `supp(π_ref)`.
    pub fn phi(&self) -> &[PotentialVector] {
        &self.phi
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn mu_weights(&self) -> &[f64] {
        &self.mu_weights
    }

    pub fn log_mu(&self) -> &[f64] {
        &self.log_mu
    }

    pub fn max_osc(&self) -> f64 {
        self.psi
            .iter()
            .map(PotentialVector::osc)
            .fold(0.0, f64::max)
    }

    pub fn into_psi(self) -> Vec<PotentialVector> {
        self.psi
    }
}

/// Suboptimality certificate for one dual iterate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Certificate {
    pub dual_value: f64,
    pub kl_residuals: Vec<f64>,
    pub tv_residuals: Vec<f64>,
    /// `min(2c_∞ Σ w_j TV_j, √2 c_∞ Σ w_j √KL_j)`.
    pub gap_upper_bound: f64,
    /// False when some `osc(ψʲ) > c_∞`; the bound is then not certified.
    pub oscillation_ok: bool,
}

/// Builds `φʲ`, `log Z` and `μ_ψ` on the reference support.
pub fn barycenter_from_duals(
    psi: Vec<PotentialVector>,
    problem: &FixedSupportProblem,
    cfg: &SolverConfig,
) -> Result<DualState> {
    if !(cfg.tau > 0.0) {
        return Err(Error::NonPositiveTau(cfg.tau));
    }
    if !(cfg.lambda > 0.0) {
        return Err(Error::NonPositiveLambda(cfg.lambda));
    }
    if psi.len() != problem.k() || cfg.weights.len() != problem.k() {
        return Err(Error::LengthMismatch {
            expected: problem.k(),
            found: psi.len(),
        });
    }
    for (p, nu) in psi.iter().zip(problem.marginals()) {
        p.check_anchor(nu)?;
    }

    let reference = problem.reference();
    let anchor = reference.id();
    let phi: Vec<PotentialVector> = psi
        .iter()
        .zip(problem.marginals())
        .enumerate()
        .map(|(j, (p, nu))| {
            let values = softmin_on_block(
                p.values(),
                nu.log_weights(),
                problem.cost_block(j),
                cfg.lambda,
            );
            PotentialVector::from_parts_unchecked(values, anchor)
        })
        .collect();

    let mut exponents = Vec::with_capacity(reference.len());
    for (i, log_pi) in reference.log_weights().iter().enumerate() {
        let v: f64 = phi
            .iter()
            .zip(&cfg.weights)
            .map(|(f, w)| w * f.values()[i])
            .sum();
        exponents.push(log_pi - v / cfg.tau);
    }
    let log_z = math::log_sum_exp(exponents.iter().copied());
    if !log_z.is_finite() {
        return Err(Error::NonFinite("log partition"));
    }
    let log_mu: Vec<f64> = exponents.iter().map(|e| e - log_z).collect();
    let mu_weights = log_mu.iter().map(|l| libm::exp(*l)).collect();
    Ok(DualState {
        psi,
        phi,
        log_z,
        mu_weights,
        log_mu,
    })
}

/// `log dνʲ_ψ/dνʲ (y_l)` for every atom of `νʲ`.
pub fn log_pushforward_marginal(
    state: &DualState,
    j: usize,
    problem: &FixedSupportProblem,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let k = problem.k();
    if j >= k || j >= state.psi.len() {
        return Err(Error::IndexOutOfRange { index: j, len: k });
    }
    let block = problem.cost_block(j);
    let psi = state.psi[j].values();
    let phi = state.phi[j].values();
    if block.rows() != phi.len() || block.cols() != psi.len() {
        return Err(Error::InconsistentState(
            "potential lengths do not match the cost block",
        ));
    }
    let inv = 1.0 / cfg.lambda;
    let mut acc = alloc::vec![LogSumExp::new(); psi.len()];
    for (i, (&log_mu_i, &phi_i)) in state.log_mu.iter().zip(phi).enumerate() {
        let row = block.row(i);
        for ((a, &c), &p) in acc.iter_mut().zip(row).zip(psi) {
            a.push(log_mu_i + (phi_i + p - c) * inv);
        }
    }
    Ok(acc.iter().map(LogSumExp::value).collect())
}

/// Density `dνʲ_ψ/dνʲ` at each atom of `νʲ`.
pub fn pushforward_marginal(
    state: &DualState,
    j: usize,
    problem: &FixedSupportProblem,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    Ok(log_pushforward_marginal(state, j, problem, cfg)?
        .into_iter()
        .map(libm::exp)
        .collect())
}

pub fn log_marginal_ratios(
    state: &DualState,
    problem: &FixedSupportProblem,
    cfg: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    (0..problem.k())
        .map(|j| log_pushforward_marginal(state, j, problem, cfg))
        .collect()
}

pub fn dual_objective(state: &DualState, problem: &FixedSupportProblem, cfg: &SolverConfig) -> f64 {
    let linear: f64 = state
        .psi
        .iter()
        .zip(problem.marginals())
        .zip(&cfg.weights)
        .map(|((p, nu), w)| w * nu.expectation(p.values()))
        .sum();
    linear - cfg.tau * state.log_z
}

/// `Σ_j w_j Σ_l (νʲ_l − νʲ_ψ(y_l)) ψ'ʲ_l`.
pub fn directional_derivative(
    state: &DualState,
    direction: &[PotentialVector],
    problem: &FixedSupportProblem,
    cfg: &SolverConfig,
) -> Result<f64> {
    if direction.len() != problem.k() {
        return Err(Error::AnchorMismatch);
    }
    let mut total = 0.0;
    for (j, (d, nu)) in direction.iter().zip(problem.marginals()).enumerate() {
        d.check_anchor(nu)?;
        let ratio = pushforward_marginal(state, j, problem, cfg)?;
        let s: f64 = nu
            .weights()
            .iter()
            .zip(&ratio)
            .zip(d.values())
            .map(|((v, r), dv)| v * (1.0 - r) * dv)
            .sum();
        total += cfg.weights[j] * s;
    }
    Ok(total)
}

/// Gradient of `E` with respect to the stacked `ψ` values.
pub fn dual_gradient(
    state: &DualState,
    problem: &FixedSupportProblem,
    cfg: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    problem
        .marginals()
        .iter()
        .enumerate()
        .map(|(j, nu)| {
            let ratio = pushforward_marginal(state, j, problem, cfg)?;
            Ok(nu
                .weights()
                .iter()
                .zip(&ratio)
                .map(|(v, r)| cfg.weights[j] * v * (1.0 - r))
                .collect())
        })
        .collect()
}

/// `KL(νʲ ‖ νʲ_ψ)` from the log density ratio, with `νʲ_ψ` floored at
/// [`KL_FLOOR`].
pub fn kl_from_log_ratio(nu_weights: &[f64], nu_log_weights: &[f64], log_ratio: &[f64]) -> f64 {
    let floor = libm::log(KL_FLOOR);
    let kl: f64 = nu_weights
        .iter()
        .zip(nu_log_weights)
        .zip(log_ratio)
        .map(|((v, lv), lr)| {
            let log_q = (lv + lr).max(floor);
            v * (lv - log_q)
        })
        .sum();
    kl.max(0.0)
}

/// `‖νʲ − νʲ_ψ‖_TV = ½ Σ_l ν_l |1 − r_l|`.
pub fn tv_from_log_ratio(nu_weights: &[f64], log_ratio: &[f64]) -> f64 {
    0.5 * nu_weights
        .iter()
        .zip(log_ratio)
        .map(|(v, lr)| v * (1.0 - libm::exp(*lr)).abs())
        .sum::<f64>()
}

/// Certificate from precomputed log ratios (one vector per marginal).
pub fn certificate_from_log_ratios(
    dual_value: f64,
    psi: &[PotentialVector],
    log_ratios: &[Vec<f64>],
    problem_marginals: &[crate::measures::DiscreteMeasure],
    weights: &[f64],
    c_inf: f64,
) -> Certificate {
    let mut kl_residuals = Vec::with_capacity(log_ratios.len());
    let mut tv_residuals = Vec::with_capacity(log_ratios.len());
    for (nu, lr) in problem_marginals.iter().zip(log_ratios) {
        kl_residuals.push(kl_from_log_ratio(nu.weights(), nu.log_weights(), lr));
        tv_residuals.push(tv_from_log_ratio(nu.weights(), lr));
    }
    let tv_bound = 2.0 * c_inf * math::dot(weights, &tv_residuals);
    let kl_bound = core::f64::consts::SQRT_2
        * c_inf
        * weights
            .iter()
            .zip(&kl_residuals)
            .map(|(w, kl)| w * libm::sqrt(*kl))
            .sum::<f64>();
    let oscillation_ok = psi.iter().all(|p| p.osc() <= c_inf + OSC_SLACK);
    Certificate {
        dual_value,
        kl_residuals,
        tv_residuals,
        gap_upper_bound: tv_bound.min(kl_bound).max(0.0),
        oscillation_ok,
    }
}

pub fn suboptimality_certificate(
    state: &DualState,
    problem: &FixedSupportProblem,
    cfg: &SolverConfig,
) -> Result<Certificate> {
    let log_ratios = log_marginal_ratios(state, problem, cfg)?;
    Ok(certificate_from_log_ratios(
        dual_objective(state, problem, cfg),
        &state.psi,
        &log_ratios,
        problem.marginals(),
        &cfg.weights,
        problem.c_inf(),
    ))
}

/// `KL(μ_{ψ*} ‖ μ_ψ) ≤ gap / τ`.
pub fn primal_kl_bound(gap: f64, tau: f64) -> Result<f64> {
    if !(gap >= 0.0) {
        return Err(Error::NegativeGap(gap));
    }
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTau(tau));
    }
    Ok(gap / tau)
}

/// `KL(p ‖ q)` for probability vectors on a common support.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (libm::log(*a) - libm::log(b.max(KL_FLOOR))))
        .sum::<f64>()
        .max(0.0)
}

/// `½ Σ |p − q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
