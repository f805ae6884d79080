//! Free-support sampling from `μ_ψ` with the unadjusted Langevin algorithm.
//!
//! `μ_ψ` has density `∝ exp(−V_ψ/τ)` on the domain `X`, with
//! `V_ψ = Σ_j w_j φ_{ψʲ}`. Its indicator boundary is replaced by a quadratic
//! wall, giving the smoothed target
//!
//! ```text
//! V_σ(x) = V_ψ(x)/τ + dist(x, X)² / (2σ²)
//! ```
//!
//! which has a Lipschitz gradient on all of `ℝᵈ`. Chains follow
//! `x ← x − h ∇V_σ(x) + √(2h) Z` from `N(x_ψ, I)`, where `x_ψ` is a
//! stationary point of `V_ψ` over `X`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::entropic::{softmin_offsets, PotentialVector};
use crate::error::{Error, Result};
use crate::math;
use crate::measures::{CostOracle, DiscreteMeasure, Domain, PointCloud};
use crate::rng;

/// Largest smoothing width for which the smoothing TV bound applies.
pub const SIGMA_MAX: f64 = 0.25;

/// Projected-gradient residual at which [`stationary_point`] stops.
pub const STATIONARY_TOL: f64 = 1e-6;

/// Step cap for [`stationary_point`].
pub const STATIONARY_MAX_STEPS: usize = 100_000;

/// `proj_X(x)`: radial scaling for a ball, coordinate clamp for a box.
pub fn project_domain(x: &[f64], domain: &Domain) -> Vec<f64> {
    domain.project(x)
}

/// The smoothed measure `μ_{ψ,σ}` for the squared Euclidean cost.
#[derive(Debug, Clone)]
pub struct SmoothedTarget<'a> {
    domain: Domain,
    sigma: f64,
    tau: f64,
    lambda: f64,
    weights: Vec<f64>,
    marginals: &'a [DiscreteMeasure],
    offsets: Vec<Vec<f64>>,
}

/// Scratch buffers reused across gradient evaluations.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    logits: Vec<f64>,
    mean: Vec<f64>,
    proj: Vec<f64>,
}

impl Workspace {
    pub fn new(dim: usize) -> Self {
        Self {
            logits: Vec::new(),
            mean: vec![0.0; dim],
            proj: vec![0.0; dim],
        }
    }
}

impl<'a> SmoothedTarget<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        domain: Domain,
        sigma: f64,
        tau: f64,
        lambda: f64,
        weights: Vec<f64>,
        marginals: &'a [DiscreteMeasure],
        psi: &[PotentialVector],
        cost: &CostOracle,
    ) -> Result<Self> {
        if !cost.is_squared_euclidean() {
            return Err(Error::UnsupportedCost);
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::ParameterOutOfRange("sigma must be positive"));
        }
        if !(tau > 0.0) {
            return Err(Error::NonPositiveTau(tau));
        }
        if !(lambda > 0.0) {
            return Err(Error::NonPositiveLambda(lambda));
        }
        if marginals.is_empty() {
            return Err(Error::EmptySupport);
        }
        if weights.len() != marginals.len() || psi.len() != marginals.len() {
            return Err(Error::LengthMismatch {
                expected: marginals.len(),
                found: if weights.len() != marginals.len() {
                    weights.len()
                } else {
                    psi.len()
                },
            });
        }
        for nu in marginals {
            if nu.dim() != domain.dim() {
                return Err(Error::DimensionMismatch {
                    expected: domain.dim(),
                    found: nu.dim(),
                });
            }
        }
        let offsets = psi
            .iter()
            .zip(marginals)
            .map(|(p, nu)| {
                p.check_anchor(nu)?;
                Ok(softmin_offsets(p.values(), nu.log_weights(), lambda))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            domain,
            sigma,
            tau,
            lambda,
            weights,
            marginals,
            offsets,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn radius(&self) -> f64 {
        self.domain.radius()
    }

    pub fn marginals(&self) -> &[DiscreteMeasure] {
        self.marginals
    }

    pub fn max_support(&self) -> usize {
        self.marginals
            .iter()
            .map(DiscreteMeasure::len)
            .max()
            .unwrap_or(0)
    }

    /// True when `σ ≤ 1/4`, the range where the smoothing TV bound holds.
    pub fn sigma_certifiable(&self) -> bool {
        self.sigma <= SIGMA_MAX
    }

    /// Same target with a different smoothing width.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::ParameterOutOfRange("sigma must be positive"));
        }
        let mut t = self.clone();
        t.sigma = sigma;
        Ok(t)
    }

    /// `V_ψ(x)/τ`, adding its gradient into `grad` when given.
    fn potential_over_tau(
        &self,
        x: &[f64],
        mut grad: Option<&mut [f64]>,
        ws: &mut Workspace,
    ) -> f64 {
        let inv_lambda = 1.0 / self.lambda;
        let mut value = 0.0;
        ws.mean.resize(x.len(), 0.0);
        for ((nu, offsets), w) in self.marginals.iter().zip(&self.offsets).zip(&self.weights) {
            ws.logits.clear();
            let mut top = f64::NEG_INFINITY;
            for (o, y) in offsets.iter().zip(nu.points().iter()) {
                let a = o - math::squared_distance(x, y) * inv_lambda;
                top = top.max(a);
                ws.logits.push(a);
            }
            let mut total = 0.0;
            ws.mean.iter_mut().for_each(|m| *m = 0.0);
            for (a, y) in ws.logits.iter().zip(nu.points().iter()) {
                let e = libm::exp(a - top);
                total += e;
                if grad.is_some() {
                    for (m, yi) in ws.mean.iter_mut().zip(y) {
                        *m += e * yi;
                    }
                }
            }
            let phi = -self.lambda * (top + libm::log(total));
            value += w * phi;
            if let Some(g) = grad.as_deref_mut() {
                let scale = 2.0 * w / self.tau;
                for ((gi, xi), m) in g.iter_mut().zip(x).zip(&ws.mean) {
                    *gi += scale * (xi - m / total);
                }
            }
        }
        value / self.tau
    }

    /// `V_ψ(x) = Σ_j w_j φ_{ψʲ}(x)`.
    pub fn v_psi(&self, x: &[f64]) -> f64 {
        let mut ws = Workspace::new(x.len());
        self.tau * self.potential_over_tau(x, None, &mut ws)
    }

    /// `V_σ(x)`.
    pub fn v_sigma(&self, x: &[f64]) -> f64 {
        let mut ws = Workspace::new(x.len());
        let mut g = vec![0.0; x.len()];
        self.value_and_grad(x, &mut g, &mut ws)
    }

    /// `V_σ(x)`, writing `∇V_σ(x)` into `grad`.
    pub fn value_and_grad(&self, x: &[f64], grad: &mut [f64], ws: &mut Workspace) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = self.potential_over_tau(x, Some(&mut *grad), ws);
        ws.proj.resize(x.len(), 0.0);
        self.domain.project_into(x, &mut ws.proj);
        let inv_s2 = 1.0 / (self.sigma * self.sigma);
        let mut d2 = 0.0;
        for ((gi, xi), pi) in grad.iter_mut().zip(x).zip(&ws.proj) {
            let diff = xi - pi;
            d2 += diff * diff;
            *gi += diff * inv_s2;
        }
        value += 0.5 * d2 * inv_s2;
        value
    }

    /// Gradient bound without the wall term, from the closed-form formula.
    fn formula_lipschitz_without_wall(&self) -> f64 {
        let r = self.radius();
        1.0 / self.tau + 4.0 * r * r * self.max_support() as f64 / (self.tau * self.lambda)
    }

    /// Hessian bound without the wall term: `∇²φʲ = 2I − (4/λ)Cov_ρ(Y)`.
    fn hessian_lipschitz_without_wall(&self) -> f64 {
        let r = self
            .marginals
            .iter()
            .map(|nu| nu.points().max_norm())
            .fold(self.radius(), f64::max);
        (2.0f64).max(4.0 * r * r / self.lambda - 2.0) / self.tau
    }

    /// A gradient Lipschitz constant valid in every parameter regime.
    pub fn safe_lipschitz(&self) -> f64 {
        self.formula_lipschitz_without_wall()
            .max(self.hessian_lipschitz_without_wall())
            + 1.0 / (self.sigma * self.sigma)
    }
}

/// `∇V_σ(x) = (1/τ) Σ_j w_j 2(x − E_{ρʲ_x}[Y]) + (x − proj_X(x))/σ²`.
pub fn grad_v_sigma(x: &[f64], target: &SmoothedTarget<'_>) -> Vec<f64> {
    let mut ws = Workspace::new(x.len());
    let mut g = vec![0.0; x.len()];
    target.value_and_grad(x, &mut g, &mut ws);
    g
}

/// `L_σ = 1/τ + 4R² max_j m_j / (τλ) + 1/σ²`.
pub fn compute_lipschitz(target: &SmoothedTarget<'_>) -> f64 {
    target.formula_lipschitz_without_wall() + 1.0 / (target.sigma * target.sigma)
}

/// `2 e^{8R²/τ} [(4R d^{−1/4})^{d−1} + 1]`.
pub fn smoothing_factor(radius: f64, tau: f64, dim: usize) -> f64 {
    let d = dim as f64;
    let geom = libm::pow(4.0 * radius * libm::pow(d, -0.25), d - 1.0);
    2.0 * libm::exp(8.0 * radius * radius / tau) * (geom + 1.0)
}

/// `‖μ_ψ − μ_{ψ,σ}‖_TV ≤ 2σ e^{8R²/τ} [(4R d^{−1/4})^{d−1} + 1]` for
/// `σ ≤ 1/4`.
pub fn smoothing_tv_bound(sigma: f64, radius: f64, tau: f64, dim: usize) -> f64 {
    sigma * smoothing_factor(radius, tau, dim)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SigmaChoice {
    pub sigma: f64,
    /// Smoothing TV bound at `sigma`.
    pub tv_bound: f64,
    pub capped: bool,
}

/// Width giving smoothing TV error `ε²/(32m)`, capped at `1/4`.
pub fn choose_sigma(eps: f64, m: usize, radius: f64, tau: f64, dim: usize) -> Result<SigmaChoice> {
    if !(eps > 0.0) || m == 0 || !(radius > 0.0) || !(tau > 0.0) || dim == 0 {
        return Err(Error::ParameterOutOfRange(
            "need eps, radius, tau > 0 and m, d >= 1",
        ));
    }
    let target = eps * eps / (32.0 * m as f64);
    let factor = smoothing_factor(radius, tau, dim);
    let raw = target / factor;
    if raw > SIGMA_MAX {
        return Ok(SigmaChoice {
            sigma: SIGMA_MAX,
            tv_bound: SIGMA_MAX * factor,
            capped: true,
        });
    }
    Ok(SigmaChoice {
        sigma: raw,
        tv_bound: target,
        capped: false,
    })
}

/// ULA step size, iteration count and the constants they derive from.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplerBudget {
    pub l_sigma: f64,
    /// Log-Sobolev constant bound `C_σ`.
    pub c_sigma: f64,
    pub step: f64,
    pub iters: u64,
    /// Bound on `KL(ρ₀ ‖ μ_{ψ,σ})` for the Gaussian initialization.
    pub kl_init: f64,
    /// KL accuracy guaranteed for `(step, iters)`; infinite when the step
    /// exceeds `1/(8L²C)`.
    pub eps_kl: f64,
    /// False for budgets chosen by hand that skip the step-size check.
    pub certify: bool,
    /// True when `c_sigma` is the default heuristic rather than a proven
    /// constant.
    pub lsi_heuristic: bool,
}

/// `e^{8R²/τ} R² (1 + 1/(L_σ σ²))`.
pub fn default_lsi_constant(target: &SmoothedTarget<'_>, l_sigma: f64) -> f64 {
    let r = target.radius();
    let s = target.sigma;
    libm::exp(8.0 * r * r / target.tau) * r * r * (1.0 + 1.0 / (l_sigma * s * s))
}

/// `c_∞/τ + (d/2) log(L/(2π))`, clamped at zero.
pub fn initial_kl_bound(c_inf: f64, tau: f64, dim: usize, l_sigma: f64) -> f64 {
    let v = c_inf / tau + 0.5 * dim as f64 * libm::log(l_sigma / (2.0 * core::f64::consts::PI));
    v.max(0.0)
}

impl SamplerBudget {
    /// `(1/(8L²C)) min(1, ε_kl/(4d))`.
    pub fn max_step(&self, dim: usize) -> f64 {
        let base = 1.0 / (8.0 * self.l_sigma * self.l_sigma * self.c_sigma);
        base * (self.eps_kl / (4.0 * dim as f64)).min(1.0)
    }

    pub fn satisfies_step_invariant(&self, dim: usize) -> bool {
        self.step <= self.max_step(dim) * (1.0 + 1e-12)
    }

    /// KL accuracy implied by a step size and iteration count.
    fn implied_eps_kl(l: f64, c: f64, step: f64, iters: u64, kl_init: f64, dim: usize) -> f64 {
        let base = 1.0 / (8.0 * l * l * c);
        if step > base * (1.0 + 1e-12) {
            return f64::INFINITY;
        }
        let from_step = 4.0 * dim as f64 * step / base;
        let from_iters = 2.0 * kl_init * libm::exp(-(iters as f64) * step / (2.0 * c));
        from_step.max(from_iters)
    }

    fn constants(
        target: &SmoothedTarget<'_>,
        c_inf: f64,
        c_sigma: Option<f64>,
    ) -> Result<(f64, f64, f64, bool)> {
        if !(c_inf > 0.0) {
            return Err(Error::ParameterOutOfRange("c_inf must be positive"));
        }
        let l = compute_lipschitz(target).max(target.safe_lipschitz());
        let (c, heuristic) = match c_sigma {
            Some(c) if c > 0.0 && c.is_finite() => (c, false),
            Some(_) => return Err(Error::ParameterOutOfRange("LSI constant must be positive")),
            None => (default_lsi_constant(target, l), true),
        };
        let kl0 = initial_kl_bound(c_inf, target.tau, target.dim(), l);
        Ok((l, c, kl0, heuristic))
    }

    /// Budget meeting a total TV target `ε_μ` (smoothing error included),
    /// with `ε_kl = 2(ε_μ − TV_smooth)²`. Returns the budget and the exact
    /// (unrounded) iteration requirement.
    pub fn certified(
        target: &SmoothedTarget<'_>,
        eps_mu_target: f64,
        c_inf: f64,
        c_sigma: Option<f64>,
    ) -> Result<(Self, f64)> {
        let dim = target.dim();
        let tv = smoothing_tv_bound(target.sigma, target.radius(), target.tau, dim);
        let slack = eps_mu_target - tv;
        if !(slack > 0.0) {
            return Err(Error::ParameterOutOfRange(
                "TV target does not exceed the smoothing error",
            ));
        }
        let eps_kl = 2.0 * slack * slack;
        let (l, c, kl0, heuristic) = Self::constants(target, c_inf, c_sigma)?;
        let step = (eps_kl / (4.0 * dim as f64)).min(1.0) / (8.0 * l * l * c);
        let ratio = 2.0 * kl0 / eps_kl;
        let required = if ratio > 1.0 {
            2.0 * c / step * libm::log(ratio)
        } else {
            0.0
        };
        let iters = if required >= u64::MAX as f64 {
            u64::MAX
        } else {
            libm::ceil(required) as u64
        };
        let budget = Self {
            l_sigma: l,
            c_sigma: c,
            step,
            iters,
            kl_init: kl0,
            eps_kl: Self::implied_eps_kl(l, c, step, iters, kl0, dim).min(eps_kl),
            certify: true,
            lsi_heuristic: heuristic,
        };
        Ok((budget, required))
    }

    /// Budget with a hand-picked step and iteration count. The KL accuracy
    /// is whatever the guarantee gives for these values; with
    /// `certify = false` the step-size check is skipped.
    pub fn manual(
        target: &SmoothedTarget<'_>,
        step: f64,
        iters: u64,
        c_inf: f64,
        c_sigma: Option<f64>,
        certify: bool,
    ) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::ParameterOutOfRange("step must be positive"));
        }
        let (l, c, kl0, heuristic) = Self::constants(target, c_inf, c_sigma)?;
        Ok(Self {
            l_sigma: l,
            c_sigma: c,
            step,
            iters,
            kl_init: kl0,
            eps_kl: Self::implied_eps_kl(l, c, step, iters, kl0, target.dim()),
            certify,
            lsi_heuristic: heuristic,
        })
    }

    /// `TV_smooth + √(ε_kl/2)`, capped at 1; `None` when nothing is
    /// guaranteed.
    pub fn certified_eps_mu(&self, smoothing_tv: f64) -> Option<f64> {
        if !self.certify || !self.eps_kl.is_finite() {
            return None;
        }
        Some((smoothing_tv + libm::sqrt(0.5 * self.eps_kl)).min(1.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StationaryPoint {
    pub point: Vec<f64>,
    /// Norm of the projected-gradient map at `point`.
    pub residual: f64,
    pub steps: usize,
}

/// Projected gradient descent on `V_ψ/τ` over `X` from the domain centre.
pub fn stationary_point(target: &SmoothedTarget<'_>) -> StationaryPoint {
    let dim = target.dim();
    let l = target
        .formula_lipschitz_without_wall()
        .max(target.hessian_lipschitz_without_wall());
    let h = 1.0 / l;
    let mut ws = Workspace::new(dim);
    let mut x = target.domain.center();
    let mut g = vec![0.0; dim];
    let mut trial = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    let mut residual = f64::INFINITY;
    let mut steps = 0;
    while steps < STATIONARY_MAX_STEPS {
        g.iter_mut().for_each(|v| *v = 0.0);
        target.potential_over_tau(&x, Some(&mut g), &mut ws);
        for ((t, xi), gi) in trial.iter_mut().zip(&x).zip(&g) {
            *t = xi - h * gi;
        }
        target.domain.project_into(&trial, &mut next);
        residual = libm::sqrt(math::squared_distance(&x, &next)) / h;
        if residual <= STATIONARY_TOL {
            break;
        }
        core::mem::swap(&mut x, &mut next);
        steps += 1;
    }
    StationaryPoint {
        point: x,
        residual,
        steps,
    }
}

/// Runs one ULA chain in place.
pub fn ula_chain<R: Rng + ?Sized>(
    target: &SmoothedTarget<'_>,
    x: &mut [f64],
    step: f64,
    iters: u64,
    rng: &mut R,
    ws: &mut Workspace,
) {
    let noise = libm::sqrt(2.0 * step);
    let mut g = vec![0.0; x.len()];
    for _ in 0..iters {
        target.value_and_grad(x, &mut g, ws);
        for (xi, gi) in x.iter_mut().zip(&g) {
            let z: f64 = rng.sample(StandardNormal);
            *xi += -step * gi + noise * z;
        }
    }
}

/// Maps a chain index to its terminal point, possibly in parallel. Results
/// must be returned in index order.
pub trait ChainExecutor {
    fn map_chains(&self, n: usize, chain: &(dyn Fn(usize) -> Vec<f64> + Sync)) -> Vec<Vec<f64>>;
}

/// Runs chains one after another.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl ChainExecutor for Sequential {
    fn map_chains(&self, n: usize, chain: &(dyn Fn(usize) -> Vec<f64> + Sync)) -> Vec<Vec<f64>> {
        (0..n).map(chain).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangevinSamples {
    /// Terminal chain states (not projected onto `X`).
    pub points: PointCloud,
    pub sigma: f64,
    pub smoothing_tv: f64,
    /// Certified `‖law(samples) − μ_ψ‖_TV`, when the budget is certified.
    pub eps_mu: Option<f64>,
    pub stationary: StationaryPoint,
}

impl LangevinSamples {
    /// Samples mapped onto `X`; projection does not increase the TV
    /// distance to `μ_ψ`, which lives on `X`.
    pub fn projected(&self, domain: &Domain) -> PointCloud {
        let dim = self.points.dim();
        let mut coords = vec![0.0; self.points.coords().len()];
        for (out, x) in coords.chunks_mut(dim).zip(self.points.iter()) {
            domain.project_into(x, out);
        }
        PointCloud::from_flat(dim, coords).expect("projection keeps the shape")
    }
}

/// Draws `n` independent ULA chains. Chain `i` uses the RNG stream
/// `(seed, iteration, i)`, so results do not depend on the executor.
pub fn ula_sample(
    target: &SmoothedTarget<'_>,
    budget: &SamplerBudget,
    n: usize,
    seed: u64,
    iteration: u64,
    executor: &dyn ChainExecutor,
) -> Result<LangevinSamples> {
    let dim = target.dim();
    if n == 0 {
        return Err(Error::EmptySampleSet);
    }
    if !(budget.step > 0.0) || !budget.step.is_finite() {
        return Err(Error::ParameterOutOfRange("step must be positive"));
    }
    if budget.certify && !budget.satisfies_step_invariant(dim) {
        return Err(Error::BudgetInvariantViolated {
            step: budget.step,
            max_step: budget.max_step(dim),
        });
    }
    let stationary = stationary_point(target);
    let start = &stationary.point;
    let chain = |i: usize| -> Vec<f64> {
        let mut rng = rng::stream(seed, rng::PURPOSE_LANGEVIN, iteration, i as u64);
        let mut x: Vec<f64> = start
            .iter()
            .map(|c| {
                let z: f64 = rng.sample(StandardNormal);
                c + z
            })
            .collect();
        let mut ws = Workspace::new(dim);
        ula_chain(target, &mut x, budget.step, budget.iters, &mut rng, &mut ws);
        x
    };
    let rows = executor.map_chains(n, &chain);
    let mut coords = Vec::with_capacity(n * dim);
    for r in &rows {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Langevin chain state"));
        }
        coords.extend_from_slice(r);
    }
    let points = PointCloud::from_flat(dim, coords)?;
    let smoothing_tv = smoothing_tv_bound(target.sigma, target.radius(), target.tau, dim);
    let eps_mu = if target.sigma_certifiable() {
        budget.certified_eps_mu(smoothing_tv)
    } else {
        None
    };
    Ok(LangevinSamples {
        points,
        sigma: target.sigma,
        smoothing_tv,
        eps_mu,
        stationary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn cloud(rows: &[Vec<f64>]) -> PointCloud {
        PointCloud::new(rows).unwrap()
    }

    fn target<'a>(
        domain: Domain,
        sigma: f64,
        tau: f64,
        lambda: f64,
        marginals: &'a [DiscreteMeasure],
        psi: &[PotentialVector],
    ) -> SmoothedTarget<'a> {
        let k = marginals.len();
        SmoothedTarget::new(
            domain,
            sigma,
            tau,
            lambda,
            vec![1.0 / k as f64; k],
            marginals,
            psi,
            &CostOracle::SquaredEuclidean,
        )
        .unwrap()
    }

    #[test]
    fn projection_examples() {
        let b1 = Domain::ball(1, 1.0).unwrap();
        assert_eq!(project_domain(&[0.0], &b1), vec![0.0]);
        let b5 = Domain::ball(2, 5.0).unwrap();
        assert_eq!(project_domain(&[3.0, 4.0], &b5), vec![3.0, 4.0]);
        let p = project_domain(&[6.0, 8.0], &b5);
        assert!((p[0] - 3.0).abs() < 1e-15 && (p[1] - 4.0).abs() < 1e-15);
        let bx = Domain::cuboid(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(project_domain(&[-1.0, 0.5], &bx), vec![0.0, 0.5]);
    }

    #[test]
    fn gradient_examples() {
        let y = vec![0.3, -0.2];
        let nus = vec![DiscreteMeasure::dirac(&y).unwrap()];
        let psi = vec![PotentialVector::zeros(&nus[0])];
        let t = target(Domain::ball(2, 1.0).unwrap(), 0.1, 0.7, 1.3, &nus, &psi);
        let x = [-0.1, 0.4];
        let g = grad_v_sigma(&x, &t);
        for i in 0..2 {
            assert!((g[i] - 2.0 / 0.7 * (x[i] - y[i])).abs() < 1e-14);
        }

        let sym =
            vec![DiscreteMeasure::uniform(cloud(&[vec![1.0, 0.0], vec![-1.0, 0.0]])).unwrap()];
        let psi = vec![PotentialVector::zeros(&sym[0])];
        let t = target(Domain::ball(2, 1.0).unwrap(), 0.1, 1.0, 1.0, &sym, &psi);
        let g = grad_v_sigma(&[0.0, 0.0], &t);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn wall_gradient_outside_domain() {
        let nus = vec![DiscreteMeasure::dirac(&[0.0]).unwrap()];
        let psi = vec![PotentialVector::zeros(&nus[0])];
        let t = target(Domain::ball(1, 1.0).unwrap(), 0.2, 1.0, 1.0, &nus, &psi);
        let g = grad_v_sigma(&[1.5], &t);
        assert!((g[0] - (2.0 * 1.5 + 0.5 / 0.04)).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_formula_examples() {
        let nus = vec![DiscreteMeasure::dirac(&[0.0]).unwrap()];
        let psi = vec![PotentialVector::zeros(&nus[0])];
        let t = target(Domain::ball(1, 1.0).unwrap(), 1.0, 1.0, 1.0, &nus, &psi);
        assert_eq!(compute_lipschitz(&t), 6.0);
        let t = t.with_sigma(0.1).unwrap();
        assert!((compute_lipschitz(&t) - 105.0).abs() < 1e-12);
        let explicit = CostOracle::Explicit(Vec::new());
        let err = SmoothedTarget::new(
            Domain::ball(1, 1.0).unwrap(),
            0.1,
            1.0,
            1.0,
            vec![1.0],
            &nus,
            &psi,
            &explicit,
        )
        .unwrap_err();
        assert_eq!(err, Error::UnsupportedCost);
    }

    #[test]
    fn sigma_examples() {
        // independent evaluation at 40 digits: 3.0030369334824086e-9
        let s = choose_sigma(0.1, 4, 1.0, 1.0, 2).unwrap();
        assert!(!s.capped);
        assert!((s.sigma / 3.003_036_933_482_408_6e-9 - 1.0).abs() < 1e-13);
        let back = smoothing_tv_bound(s.sigma, 1.0, 1.0, 2);
        assert!((back / (0.01 / 128.0) - 1.0).abs() < 1e-13);
        assert!(choose_sigma(0.1, 4, 1.5, 1.0, 2).unwrap().sigma < s.sigma);
        let capped = choose_sigma(100.0, 1, 0.05, 10.0, 1).unwrap();
        assert!(capped.capped && capped.sigma == SIGMA_MAX);
        assert!((capped.tv_bound - smoothing_tv_bound(SIGMA_MAX, 0.05, 10.0, 1)).abs() < 1e-15);
    }

    #[test]
    fn stationary_point_examples() {
        let y = vec![0.2, -0.5];
        let nus = vec![DiscreteMeasure::dirac(&y).unwrap()];
        let psi = vec![PotentialVector::zeros(&nus[0])];
        let t = target(Domain::ball(2, 1.0).unwrap(), 0.1, 3.0, 1.0, &nus, &psi);
        let sp = stationary_point(&t);
        assert!(sp.residual <= STATIONARY_TOL);
        assert!(math::squared_distance(&sp.point, &y) < 1e-12);

        let sym =
            vec![DiscreteMeasure::uniform(cloud(&[vec![1.0, 0.0], vec![-1.0, 0.0]])).unwrap()];
        let psi = vec![PotentialVector::zeros(&sym[0])];
        let t = target(Domain::ball(2, 1.0).unwrap(), 0.1, 1.0, 1.0, &sym, &psi);
        let sp = stationary_point(&t);
        assert!(math::norm(&sp.point) < 1e-12);
    }

    #[test]
    fn certified_budget_satisfies_invariant() {
        let nus = vec![DiscreteMeasure::dirac(&[0.1]).unwrap()];
        let psi = vec![PotentialVector::zeros(&nus[0])];
        let t = target(Domain::ball(1, 0.3).unwrap(), 0.25, 1.0, 1.0, &nus, &psi);
        let tv = smoothing_tv_bound(0.25, 0.3, 1.0, 1);
        let (b, required) = SamplerBudget::certified(&t, tv + 0.2, 0.36, None).unwrap();
        assert!(b.satisfies_step_invariant(1));
        assert!(b.iters as f64 >= required);
        let eps = b.certified_eps_mu(tv).unwrap();
        assert!(eps <= tv + 0.2 + 1e-12);
        let doubled = SamplerBudget::manual(&t, b.step, 2 * b.iters, 0.36, None, true).unwrap();
        assert!(doubled.certified_eps_mu(tv).unwrap() <= eps + 1e-15);
        assert!(SamplerBudget::certified(&t, tv * 0.5, 0.36, None).is_err());
    }

    #[test]
    fn oversized_step_is_rejected_unless_uncertified() {
        let nus = vec![DiscreteMeasure::dirac(&[0.0]).unwrap()];
        let psi = vec![PotentialVector::zeros(&nus[0])];
        let t = target(Domain::ball(1, 1.0).unwrap(), 0.25, 1.0, 1.0, &nus, &psi);
        let b = SamplerBudget::manual(&t, 1e-2, 10, 4.0, None, true).unwrap();
        assert!(matches!(
            ula_sample(&t, &b, 4, 1, 0, &Sequential),
            Err(Error::BudgetInvariantViolated { .. })
        ));
        let b = SamplerBudget::manual(&t, 1e-2, 10, 4.0, None, false).unwrap();
        let s = ula_sample(&t, &b, 4, 1, 0, &Sequential).unwrap();
        assert_eq!(s.eps_mu, None);
        assert_eq!(s.points.len(), 4);
    }

    #[test]
    fn zero_steps_give_the_gaussian_initialization() {
        let nus = vec![DiscreteMeasure::dirac(&[0.4, -0.3]).unwrap()];
        let psi = vec![PotentialVector::zeros(&nus[0])];
        let t = target(Domain::ball(2, 1.0).unwrap(), 0.25, 1.0, 1.0, &nus, &psi);
        let b = SamplerBudget::manual(&t, 1e-3, 0, 4.0, None, false).unwrap();
        let n = 10_000;
        let s = ula_sample(&t, &b, n, 7, 0, &Sequential).unwrap();
        let c = &s.stationary.point;
        let nf = n as f64;
        for k in 0..2 {
            let mean = s.points.iter().map(|x| x[k]).sum::<f64>() / nf;
            let var = s
                .points
                .iter()
                .map(|x| (x[k] - mean) * (x[k] - mean))
                .sum::<f64>()
                / (nf - 1.0);
            assert!((mean - c[k]).abs() < 3.0 / libm::sqrt(nf), "mean {mean}");
            assert!((var - 1.0).abs() < 3.0 * libm::sqrt(2.0 / nf), "var {var}");
        }
        let cov = s
            .points
            .iter()
            .map(|x| (x[0] - c[0]) * (x[1] - c[1]))
            .sum::<f64>()
            / nf;
        assert!(cov.abs() < 3.0 / libm::sqrt(nf));
    }

    #[test]
    fn samples_are_reproducible() {
        let nus = vec![DiscreteMeasure::dirac(&[0.0]).unwrap()];
        let psi = vec![PotentialVector::zeros(&nus[0])];
        let t = target(Domain::ball(1, 1.0).unwrap(), 0.25, 1.0, 1.0, &nus, &psi);
        let b = SamplerBudget::manual(&t, 1e-3, 50, 4.0, None, false).unwrap();
        let a = ula_sample(&t, &b, 16, 3, 2, &Sequential).unwrap();
        let c = ula_sample(&t, &b, 16, 3, 2, &Sequential).unwrap();
        assert_eq!(a, c);
        let d = ula_sample(&t, &b, 16, 4, 2, &Sequential).unwrap();
        assert_ne!(a.points, d.points);
    }

    fn random_target_parts(
        dim: usize,
        atoms: &[f64],
        psi_raw: &[f64],
        k: usize,
    ) -> (Vec<DiscreteMeasure>, Vec<PotentialVector>) {
        let per = atoms.len() / (k * dim);
        let mut nus = Vec::new();
        let mut psi = Vec::new();
        for j in 0..k {
            let rows: Vec<Vec<f64>> = (0..per)
                .map(|l| atoms[(j * per + l) * dim..(j * per + l + 1) * dim].to_vec())
                .collect();
            let nu = DiscreteMeasure::uniform(cloud(&rows)).unwrap();
            psi.push(PotentialVector::on(&nu, psi_raw[j * per..(j + 1) * per].to_vec()).unwrap());
            nus.push(nu);
        }
        (nus, psi)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn gradient_matches_finite_differences(
            dim in 1usize..4,
            atoms in prop::collection::vec(-0.7f64..0.7, 24),
            psi_raw in prop::collection::vec(-0.5f64..0.5, 8),
            x_raw in prop::collection::vec(-1.5f64..1.5, 3),
            sigma in 0.05f64..0.25,
            tau in 0.3f64..3.0,
            lambda in 0.3f64..3.0,
        ) {
            let (nus, psi) = random_target_parts(dim, &atoms[..2 * 4 * dim], &psi_raw, 2);
            let t = target(Domain::ball(dim, 1.0).unwrap(), sigma, tau, lambda, &nus, &psi);
            let x = &x_raw[..dim];
            let g = grad_v_sigma(x, &t);
            let fd = crate::reference::finite_difference_gradient(|p| t.v_sigma(p), x, 1e-6);
            let scale = math::norm(&g).max(1.0);
            for (a, b) in g.iter().zip(&fd) {
                prop_assert!((a - b).abs() <= 1e-4 * scale, "{a} vs {b}");
            }
        }

        // Regime where 4R²/λ ≥ 1, in which the closed-form bound dominates
        // the Hessian bound.
        #[test]
        fn measured_lipschitz_ratio_is_below_bound(
            dim in 1usize..3,
            atoms in prop::collection::vec(-0.6f64..0.6, 12),
            psi_raw in prop::collection::vec(-0.5f64..0.5, 6),
            a in prop::collection::vec(-1.6f64..1.6, 2),
            b in prop::collection::vec(-1.6f64..1.6, 2),
            sigma in 0.05f64..0.25,
            tau in 0.3f64..3.0,
            lambda in 0.2f64..4.0,
        ) {
            let (nus, psi) = random_target_parts(dim, &atoms[..2 * 3 * dim], &psi_raw, 2);
            let t = target(Domain::ball(dim, 1.0).unwrap(), sigma, tau, lambda, &nus, &psi);
            let (x, y) = (&a[..dim], &b[..dim]);
            let dist = libm::sqrt(math::squared_distance(x, y));
            prop_assume!(dist > 1e-6);
            let ratio = libm::sqrt(math::squared_distance(&grad_v_sigma(x, &t), &grad_v_sigma(y, &t))) / dist;
            prop_assert!(ratio <= compute_lipschitz(&t) * (1.0 + 1e-12));
            prop_assert!(ratio <= t.safe_lipschitz() * (1.0 + 1e-12));
        }

        #[test]
        fn stationary_point_residual_is_small(
            atoms in prop::collection::vec(-1.0f64..1.0, 12),
            psi_raw in prop::collection::vec(-0.5f64..0.5, 6),
            tau in 0.3f64..3.0,
            lambda in 0.3f64..3.0,
        ) {
            let (nus, psi) = random_target_parts(2, &atoms, &psi_raw, 2);
            let t = target(Domain::ball(2, 1.0).unwrap(), 0.1, tau, lambda, &nus, &psi);
            let sp = stationary_point(&t);
            prop_assert!(sp.residual <= STATIONARY_TOL, "{}", sp.residual);
            prop_assert!(t.domain().contains(&sp.point));
        }
    }
}
