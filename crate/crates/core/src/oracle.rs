//! Monte-Carlo approximate Sinkhorn oracle.
//!
//! Given samples `X_1..X_n` from (an approximation of) `μ_ψ`, the marginal
//! `νʲ_ψ` is estimated by the kernel average
//!
//! ```text
//! ν̂ʲ(y_l)/νʲ(y_l) = (1/n) Σ_i exp((φ_{ψʲ}(X_i) + ψʲ(y_l) − c(X_i, y_l))/λ)
//! ```
//!
//! and floored by mixing with the target marginal, `ν̃ʲ = (1−ζ)ν̂ʲ + ζνʲ`.
//! The mixed ratio is strictly positive and keeps the damped update inside
//! the `c_∞` oscillation ball whenever `osc(ψʲ) ≤ c_∞`.

use alloc::vec::Vec;

use crate::entropic::{softmin_offsets, softmin_row, PotentialVector};
use crate::error::{Error, Result};
use crate::math::{self, LogSumExp};
use crate::measures::{CostMatrix, CostOracle, DiscreteMeasure, PointCloud};

/// Approximate log density ratio for one marginal.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OracleOutput {
    /// `log dν̃ʲ/dνʲ` per atom.
    pub log_density_ratio: Vec<f64>,
    /// Accuracy `ε_j` the output is certified for, when known.
    pub accuracy_estimate: Option<f64>,
    pub n_samples: usize,
    pub zeta: f64,
}

impl OracleOutput {
    pub fn with_accuracy(mut self, eps: f64, n_samples: usize) -> Self {
        self.accuracy_estimate = Some(eps);
        self.n_samples = n_samples;
        self
    }

    pub fn density_ratio(&self) -> Vec<f64> {
        self.log_density_ratio
            .iter()
            .map(|l| libm::exp(*l))
            .collect()
    }
}

/// `log((1/n) Σ_i K(X_i, y_l))` for every atom `y_l` of `νʲ`.
pub fn mc_log_marginal_estimate(
    psi_j: &PotentialVector,
    nu_j: &DiscreteMeasure,
    samples: &PointCloud,
    cost: &CostOracle,
    lambda: f64,
) -> Result<Vec<f64>> {
    weighted_log_marginal_estimate(psi_j, nu_j, samples, None, None, cost, lambda)
}

/// `log Σ_i a_i K(X_i, y_l)` for an empirical measure `Σ_i a_i δ_{X_i}`
/// given by `log a_i` (uniform when `None`). `block` may supply the cost
/// rows `c(X_i, ·)` when they are already known.
pub fn weighted_log_marginal_estimate(
    psi_j: &PotentialVector,
    nu_j: &DiscreteMeasure,
    points: &PointCloud,
    log_weights: Option<&[f64]>,
    block: Option<&CostMatrix>,
    cost: &CostOracle,
    lambda: f64,
) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::NonPositiveLambda(lambda));
    }
    if points.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    psi_j.check_anchor(nu_j)?;
    if points.dim() != nu_j.dim() {
        return Err(Error::DimensionMismatch {
            expected: nu_j.dim(),
            found: points.dim(),
        });
    }
    if let Some(lw) = log_weights {
        if lw.len() != points.len() {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                found: lw.len(),
            });
        }
    }
    let owned;
    let block = match (block, cost) {
        (Some(b), _) => {
            if b.rows() != points.len() || b.cols() != nu_j.len() {
                return Err(Error::CostShape {
                    rows: b.rows(),
                    cols: b.cols(),
                    expected_rows: points.len(),
                    expected_cols: nu_j.len(),
                });
            }
            Some(b)
        }
        (None, CostOracle::SquaredEuclidean) => None,
        (None, CostOracle::Explicit(_)) => {
            owned = cost.block(points, nu_j.points())?;
            Some(&owned)
        }
    };
    let psi = psi_j.values();
    let offsets = softmin_offsets(psi, nu_j.log_weights(), lambda);
    let inv = 1.0 / lambda;
    let mut acc = alloc::vec![LogSumExp::new(); nu_j.len()];
    let mut costs = alloc::vec![0.0; nu_j.len()];
    for (i, x) in points.iter().enumerate() {
        let lw = log_weights.map_or(0.0, |w| w[i]);
        if lw == f64::NEG_INFINITY {
            continue;
        }
        match block {
            None => {
                for (c, y) in costs.iter_mut().zip(nu_j.points().iter()) {
                    *c = math::squared_distance(x, y);
                }
            }
            Some(b) => costs.copy_from_slice(b.row(i)),
        }
        let phi = softmin_row(&offsets, costs.iter().copied(), lambda);
        for ((a, &p), &c) in acc.iter_mut().zip(psi).zip(&costs) {
            a.push(lw + (phi + p - c) * inv);
        }
    }
    let norm = if log_weights.is_some() {
        0.0
    } else {
        libm::log(points.len() as f64)
    };
    Ok(acc.iter().map(|a| a.value() - norm).collect())
}

/// `ν̂ʲ(y_l)/νʲ(y_l)` per atom.
pub fn mc_marginal_estimate(
    psi_j: &PotentialVector,
    nu_j: &DiscreteMeasure,
    samples: &PointCloud,
    cost: &CostOracle,
    lambda: f64,
) -> Result<Vec<f64>> {
    Ok(
        mc_log_marginal_estimate(psi_j, nu_j, samples, cost, lambda)?
            .into_iter()
            .map(libm::exp)
            .collect(),
    )
}

fn check_zeta(zeta: f64) -> Result<()> {
    if !(zeta > 0.0 && zeta <= 0.5) {
        return Err(Error::ZetaOutOfRange(zeta));
    }
    Ok(())
}

/// Ratio `(1−ζ)·estimate + ζ`, returned in log scale.
pub fn mix_with_marginal(estimate: &[f64], zeta: f64) -> Result<OracleOutput> {
    check_zeta(zeta)?;
    if estimate.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
        return Err(Error::ParameterOutOfRange(
            "estimate entries must be finite and non-negative",
        ));
    }
    Ok(OracleOutput {
        log_density_ratio: estimate
            .iter()
            .map(|e| libm::log((1.0 - zeta) * e + zeta))
            .collect(),
        accuracy_estimate: None,
        n_samples: 0,
        zeta,
    })
}

/// Same as [`mix_with_marginal`] for an estimate given in log scale.
pub fn mix_log_estimate(log_estimate: &[f64], zeta: f64) -> Result<OracleOutput> {
    check_zeta(zeta)?;
    let a = libm::log1p(-zeta);
    let b = libm::log(zeta);
    Ok(OracleOutput {
        log_density_ratio: log_estimate
            .iter()
            .map(|l| math::log_add_exp(a + l, b))
            .collect(),
        accuracy_estimate: None,
        n_samples: 0,
        zeta,
    })
}

/// Accuracy of the mixed Monte-Carlo oracle, holding with probability
/// `1 − δ` over the samples:
///
/// ```text
/// ε_j ≤ c_∞ (2ζ + m_j ε_μ / ζ + (m_j / ζ) √(2 log(2m/δ) / n))^{1/2}
/// ```
pub fn accuracy_bound(
    m_j: usize,
    m: usize,
    n: u64,
    zeta: f64,
    eps_mu: f64,
    delta: f64,
    c_inf: f64,
) -> Result<f64> {
    if m_j == 0 || m < m_j || n == 0 {
        return Err(Error::ParameterOutOfRange("need 0 < m_j <= m and n > 0"));
    }
    check_zeta(zeta)?;
    if !(eps_mu >= 0.0) || !(delta > 0.0 && delta < 1.0) || !(c_inf > 0.0) {
        return Err(Error::ParameterOutOfRange(
            "need eps_mu >= 0, delta in (0,1), c_inf > 0",
        ));
    }
    let mj = m_j as f64;
    let hoeffding = libm::sqrt(2.0 * libm::log(2.0 * m as f64 / delta) / n as f64);
    Ok(c_inf * libm::sqrt(2.0 * zeta + mj * eps_mu / zeta + mj / zeta * hoeffding))
}

/// Parameters that make the Monte-Carlo oracle `ε`-accurate.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OracleParams {
    pub zeta: f64,
    /// Sample count needed by the Hoeffding term (may be astronomically
    /// large, hence `f64`).
    pub n_required: f64,
    /// Largest sampler TV error `ε_μ` the remaining budget tolerates.
    pub eps_mu_budget: f64,
}

/// `ζ = min(ε²/(16c²), 1/2)`; the Hoeffding term gets `ε²/(4c²)` of the
/// squared budget and `ε_μ` receives what is left.
pub fn choose_oracle_params(
    eps: f64,
    c_inf: f64,
    m_j: usize,
    m: usize,
    delta: f64,
) -> Result<OracleParams> {
    if !(eps > 0.0) || !(c_inf > 0.0) || m_j == 0 || m < m_j || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::ParameterOutOfRange(
            "need eps, c_inf > 0, 0 < m_j <= m, delta in (0,1)",
        ));
    }
    let budget = eps * eps / (c_inf * c_inf);
    let zeta = (budget / 16.0).min(0.5);
    let hoeffding_budget = budget / 4.0;
    let mj = m_j as f64;
    let ratio = mj / (zeta * hoeffding_budget);
    let n_required = 2.0 * libm::log(2.0 * m as f64 / delta) * ratio * ratio;
    let eps_mu_budget = (zeta * (budget - 2.0 * zeta - hoeffding_budget) / mj).max(0.0);
    Ok(OracleParams {
        zeta,
        n_required,
        eps_mu_budget,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PropertyCheck {
    pub holds: bool,
    pub measured: f64,
    pub bound: f64,
}

impl PropertyCheck {
    fn at_most(measured: f64, bound: f64) -> Self {
        Self {
            holds: measured <= bound,
            measured,
            bound,
        }
    }

    pub fn slack(&self) -> f64 {
        self.bound - self.measured
    }
}

/// The four oracle contract checks for one marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PropertyReport {
    /// `min_l dν̃/dν > 0`; `measured` is the negated minimum ratio.
    pub positivity: PropertyCheck,
    /// `‖ν̃ − ν_ψ‖_TV ≤ ε/(2c_∞)`.
    pub total_variation: PropertyCheck,
    /// `E_ν[dν_ψ/dν̃] ≤ 1 + ε²/(2c_∞²)`.
    pub ratio_moment: PropertyCheck,
    /// `osc(ψ − ηλ log dν̃/dν) ≤ (1−η) osc(ψ) + η c_∞`.
    pub oscillation: PropertyCheck,
}

impl PropertyReport {
    pub fn all_hold(&self) -> bool {
        self.positivity.holds
            && self.total_variation.holds
            && self.ratio_moment.holds
            && self.oscillation.holds
    }
}

/// Slack granted to the oscillation check for rounding.
pub const OSC_CHECK_SLACK: f64 = 1e-9;

/// Checks an oracle output against the exact ratio `dνʲ_ψ/dνʲ`.
#[allow(clippy::too_many_arguments)]
pub fn verify_oracle_properties(
    output: &OracleOutput,
    exact_ratio: &[f64],
    nu_j: &DiscreteMeasure,
    psi_j: &PotentialVector,
    eta: f64,
    lambda: f64,
    c_inf: f64,
    eps: f64,
) -> PropertyReport {
    let approx = output.density_ratio();
    let min_ratio = approx.iter().copied().fold(f64::INFINITY, f64::min);
    let positivity = PropertyCheck {
        holds: min_ratio > 0.0 && output.log_density_ratio.iter().all(|l| l.is_finite()),
        measured: -min_ratio,
        bound: 0.0,
    };

    let tv = 0.5
        * nu_j
            .weights()
            .iter()
            .zip(&approx)
            .zip(exact_ratio)
            .map(|((v, a), e)| v * (a - e).abs())
            .sum::<f64>();
    let total_variation = PropertyCheck::at_most(tv, eps / (2.0 * c_inf));

    let moment: f64 = nu_j
        .weights()
        .iter()
        .zip(&approx)
        .zip(exact_ratio)
        .map(|((v, a), e)| v * e / a)
        .sum();
    let ratio_moment = PropertyCheck::at_most(moment, 1.0 + eps * eps / (2.0 * c_inf * c_inf));

    let updated: Vec<f64> = psi_j
        .values()
        .iter()
        .zip(&output.log_density_ratio)
        .map(|(p, l)| p - eta * lambda * l)
        .collect();
    let osc_after = math::oscillation(&updated);
    let osc_bound = (1.0 - eta) * psi_j.osc() + eta * c_inf;
    let oscillation = PropertyCheck {
        holds: osc_after.is_finite() && osc_after <= osc_bound + OSC_CHECK_SLACK,
        measured: osc_after,
        bound: osc_bound,
    };

    PropertyReport {
        positivity,
        total_variation,
        ratio_moment,
        oscillation,
    }
}
