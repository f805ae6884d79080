//! Log-domain primitives of entropic optimal transport.
//!
//! For a potential `ψ` on `supp(ν)` the softmin response is
//!
//! ```text
//! φ_ψ(x) = −λ log Σ_l ν_l exp((ψ_l − c(x, y_l)) / λ)
//! ```
//!
//! with no recentering. It satisfies the normalization
//! `Σ_i Σ_l exp((φ_ψ(x_i) + ψ_l − c_il)/λ) μ_i ν_l = 1` for every `μ` and has
//! oscillation at most `sup c`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, LogSumExp};
use crate::measures::{CostMatrix, CostOracle, DiscreteMeasure, PointCloud, SupportId};

/// Values of a potential on the atoms of the support it is anchored on.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PotentialVector {
    values: Vec<f64>,
    anchor: SupportId,
}

impl PotentialVector {
    pub fn new(values: Vec<f64>, anchor: SupportId) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("potential"));
        }
        Ok(Self { values, anchor })
    }

    pub fn on(measure: &DiscreteMeasure, values: Vec<f64>) -> Result<Self> {
        if values.len() != measure.len() {
            return Err(Error::LengthMismatch {
                expected: measure.len(),
                found: values.len(),
            });
        }
        Self::new(values, measure.id())
    }

    pub fn zeros(measure: &DiscreteMeasure) -> Self {
        Self {
            values: alloc::vec![0.0; measure.len()],
            anchor: measure.id(),
        }
    }

    pub(crate) fn from_parts_unchecked(values: Vec<f64>, anchor: SupportId) -> Self {
        Self { values, anchor }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn anchor(&self) -> SupportId {
        self.anchor
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `sup − inf` of the values.
    pub fn osc(&self) -> f64 {
        math::oscillation(&self.values)
    }

    pub fn shifted(&self, a: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v + a).collect(),
            anchor: self.anchor,
        }
    }

    pub(crate) fn check_anchor(&self, measure: &DiscreteMeasure) -> Result<()> {
        if self.anchor != measure.id() || self.values.len() != measure.len() {
            return Err(Error::AnchorMismatch);
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::NonPositiveLambda(lambda));
    }
    Ok(())
}

/// `log ν_l + ψ_l / λ`, the per-atom offsets shared by every softmin row.
pub(crate) fn softmin_offsets(psi: &[f64], log_weights: &[f64], lambda: f64) -> Vec<f64> {
    psi.iter()
        .zip(log_weights)
        .map(|(p, lw)| lw + p / lambda)
        .collect()
}

/// `−λ LSE_l(offset_l − c_l/λ)` for one evaluation point.
#[inline]
pub(crate) fn softmin_row<I: Iterator<Item = f64>>(offsets: &[f64], costs: I, lambda: f64) -> f64 {
    let mut acc = LogSumExp::new();
    for (o, c) in offsets.iter().zip(costs) {
        acc.push(o - c / lambda);
    }
    -lambda * acc.value()
}

pub(crate) fn softmin_on_block(
    psi: &[f64],
    log_weights: &[f64],
    block: &CostMatrix,
    lambda: f64,
) -> Vec<f64> {
    let offsets = softmin_offsets(psi, log_weights, lambda);
    (0..block.rows())
        .map(|i| softmin_row(&offsets, block.row(i).iter().copied(), lambda))
        .collect()
}

/// Squared-Euclidean softmin at one point, costs computed on the fly.
#[inline]
pub(crate) fn softmin_squared_at(
    offsets: &[f64],
    support: &PointCloud,
    x: &[f64],
    lambda: f64,
) -> f64 {
    softmin_row(
        offsets,
        support.iter().map(|y| math::squared_distance(x, y)),
        lambda,
    )
}

/// Evaluates `φ_ψ` at `eval_points`.
pub fn softmin_potential(
    psi: &PotentialVector,
    nu: &DiscreteMeasure,
    cost: &CostOracle,
    eval_points: &PointCloud,
    lambda: f64,
) -> Result<PotentialVector> {
    check_lambda(lambda)?;
    psi.check_anchor(nu)?;
    let values = match cost {
        CostOracle::SquaredEuclidean => {
            if eval_points.dim() != nu.dim() {
                return Err(Error::DimensionMismatch {
                    expected: nu.dim(),
                    found: eval_points.dim(),
                });
            }
            let offsets = softmin_offsets(psi.values(), nu.log_weights(), lambda);
            eval_points
                .iter()
                .map(|x| softmin_squared_at(&offsets, nu.points(), x, lambda))
                .collect()
        }
        CostOracle::Explicit(_) => {
            let block = cost.block(eval_points, nu.points())?;
            softmin_on_block(psi.values(), nu.log_weights(), &block, lambda)
        }
    };
    PotentialVector::new(values, eval_points.support_id())
}

/// `E_μ[φ] + E_ν[ψ]`.
pub fn semidual_value(
    phi: &PotentialVector,
    psi: &PotentialVector,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<f64> {
    phi.check_anchor(mu)?;
    psi.check_anchor(nu)?;
    Ok(mu.expectation(phi.values()) + nu.expectation(psi.values()))
}

/// Dense coupling `γ_il = exp((φ_i + ψ_l − c_il)/λ) μ_i ν_l`, one row per atom
/// of `μ`.
pub fn coupling_from_potentials(
    phi: &PotentialVector,
    psi: &PotentialVector,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostOracle,
    lambda: f64,
) -> Result<Vec<Vec<f64>>> {
    check_lambda(lambda)?;
    phi.check_anchor(mu)?;
    psi.check_anchor(nu)?;
    let block = cost.block(mu.points(), nu.points())?;
    Ok((0..mu.len())
        .map(|i| {
            (0..nu.len())
                .map(|l| {
                    libm::exp(
                        (phi.values()[i] + psi.values()[l] - block.get(i, l)) / lambda
                            + mu.log_weights()[i]
                            + nu.log_weights()[l],
                    )
                })
                .collect()
        })
        .collect())
}
