//! Brute-force solvers for tiny instances.
//!
//! [`dense_dual_ascent`] maximizes the same dual objective as the Sinkhorn
//! solvers but by plain gradient ascent, so agreement between the two checks
//! the iteration rather than the objective code.

use alloc::vec::Vec;

use crate::dual::{barycenter_from_duals, dual_gradient, dual_objective, DualState};
use crate::entropic::PotentialVector;
use crate::error::{Error, Result};
use crate::measures::{FixedSupportProblem, SolverConfig};

/// Largest total dual dimension `Σ_j m_j` accepted by [`dense_dual_ascent`].
pub const MAX_DUAL_DIMENSION: usize = 64;

/// Gradient norm at which [`dense_dual_ascent`] stops.
pub const GRADIENT_TOL: f64 = 1e-10;

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Central differences `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn finite_difference_gradient<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub dual_value: f64,
    pub state: DualState,
    pub gradient_norm: f64,
    pub iterations: usize,
}

impl ReferenceSolution {
    pub fn psi(&self) -> &[PotentialVector] {
        self.state.psi()
    }

    pub fn mu(&self) -> &[f64] {
        self.state.mu_weights()
    }
}

fn norm2(g: &[Vec<f64>]) -> f64 {
    g.iter().flatten().map(|v| v * v).sum()
}

fn shifted(psi: &[PotentialVector], dir: &[Vec<f64>], s: f64) -> Result<Vec<PotentialVector>> {
    psi.iter()
        .zip(dir)
        .map(|(p, d)| {
            let v = p.values().iter().zip(d).map(|(a, b)| a + s * b).collect();
            PotentialVector::new(v, p.anchor())
        })
        .collect()
}

/// Gradient ascent on `E` with Barzilai–Borwein trial steps and Armijo
/// backtracking, run until `‖∇E‖ ≤ 1e-10` or `iters` steps.
pub fn dense_dual_ascent(
    problem: &FixedSupportProblem,
    cfg: &SolverConfig,
    init: Option<Vec<PotentialVector>>,
    iters: usize,
) -> Result<ReferenceSolution> {
    let dim = problem.total_support();
    if dim > MAX_DUAL_DIMENSION {
        return Err(Error::DimensionTooLarge(dim));
    }
    cfg.validate(problem.k())?;
    let psi0 = match init {
        Some(p) => p,
        None => problem
            .marginals()
            .iter()
            .map(PotentialVector::zeros)
            .collect(),
    };
    let mut state = barycenter_from_duals(psi0, problem, cfg)?;
    let mut value = dual_objective(&state, problem, cfg);
    let mut grad = dual_gradient(&state, problem, cfg)?;
    let mut gn2 = norm2(&grad);
    let mut step = cfg.min_reg();
    let mut iterations = 0;

    while iterations < iters && libm::sqrt(gn2) > GRADIENT_TOL {
        let slack = 4.0 * f64::EPSILON * value.abs().max(1.0);
        let mut s = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand = barycenter_from_duals(shifted(state.psi(), &grad, s)?, problem, cfg)?;
            let v = dual_objective(&cand, problem, cfg);
            if v >= value + ARMIJO * s * gn2 - slack {
                accepted = Some((cand, v));
                break;
            }
            s *= 0.5;
        }
        let Some((cand, v)) = accepted else {
            break;
        };
        let next_grad = dual_gradient(&cand, problem, cfg)?;
        // Barzilai–Borwein step for ascent: ⟨Δψ, Δψ⟩ / ⟨Δψ, −Δg⟩.
        let mut ss = 0.0;
        let mut sy = 0.0;
        for (g0, g1) in grad.iter().flatten().zip(next_grad.iter().flatten()) {
            let dpsi = s * g0;
            ss += dpsi * dpsi;
            sy -= dpsi * (g1 - g0);
        }
        step = if sy > 0.0 && ss > 0.0 {
            ss / sy
        } else {
            s * 2.0
        };
        state = cand;
        value = v;
        grad = next_grad;
        gn2 = norm2(&grad);
        iterations += 1;
    }

    Ok(ReferenceSolution {
        dual_value: value,
        state,
        gradient_norm: libm::sqrt(gn2),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{DiscreteMeasure, PointCloud};
    use alloc::vec;

    #[test]
    fn finite_differences_linear_and_quadratic() {
        let g = finite_difference_gradient(|x| 3.0 * x[0] - 2.0 * x[1] + 1.0, &[0.4, -1.2], 0.1);
        assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] + 2.0).abs() < 1e-12);
        let g = finite_difference_gradient(|x| x[0] * x[0] + x[0] * x[1], &[1.0, 2.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn single_atoms_give_the_closed_form() {
        // E(ψ) = c(x, y) for one atom everywhere, any ψ.
        let nu = DiscreteMeasure::dirac(&[1.0]).unwrap();
        let pi = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let p = FixedSupportProblem::squared_euclidean(vec![nu], pi).unwrap();
        let cfg = SolverConfig::uniform(0.7, 0.3, 1);
        let sol = dense_dual_ascent(&p, &cfg, None, 100).unwrap();
        assert!((sol.dual_value - 1.0).abs() < 1e-14);
        assert_eq!(sol.mu(), &[1.0]);
    }

    #[test]
    fn symmetric_instance_gives_symmetric_barycenter() {
        let pts =
            |v: &[f64]| PointCloud::new(&v.iter().map(|x| vec![*x]).collect::<Vec<_>>()).unwrap();
        let a = DiscreteMeasure::from_cloud(pts(&[-1.0, -0.2]), vec![0.3, 0.7]).unwrap();
        let b = DiscreteMeasure::from_cloud(pts(&[0.2, 1.0]), vec![0.7, 0.3]).unwrap();
        let grid = DiscreteMeasure::uniform(pts(&[-1.0, -0.5, 0.0, 0.5, 1.0])).unwrap();
        let p = FixedSupportProblem::squared_euclidean(vec![a, b], grid).unwrap();
        let cfg = SolverConfig::uniform(0.5, 0.5, 2);
        let sol = dense_dual_ascent(&p, &cfg, None, 100_000).unwrap();
        assert!(sol.gradient_norm <= GRADIENT_TOL);
        let mu = sol.mu();
        for i in 0..5 {
            assert!((mu[i] - mu[4 - i]).abs() < 1e-9);
        }
    }

    #[test]
    fn dimension_cap() {
        let rows: Vec<Vec<f64>> = (0..65).map(|i| vec![i as f64]).collect();
        let nu = DiscreteMeasure::uniform(PointCloud::new(&rows).unwrap()).unwrap();
        let pi = DiscreteMeasure::dirac(&[0.0]).unwrap();
        let p = FixedSupportProblem::squared_euclidean(vec![nu], pi).unwrap();
        let cfg = SolverConfig::uniform(1.0, 1.0, 1);
        assert_eq!(
            dense_dual_ascent(&p, &cfg, None, 1).unwrap_err(),
            Error::DimensionTooLarge(65)
        );
    }
}
