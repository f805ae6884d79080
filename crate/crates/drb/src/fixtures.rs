//! Instances, reference fixtures and the divergence fixture.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use drb_core::measures::MeasureData;
use drb_core::reference::{dense_dual_ascent, ReferenceSolution};
use drb_core::sinkhorn::{run_with, NoClock, UpdateRule};
use drb_core::{rng, DiscreteMeasure, FixedSupportProblem, PointCloud, SolverConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io;

/// RNG purpose tag for instance generation.
const PURPOSE_INSTANCE: u64 = 7;

/// A fixed-support problem with its regularization and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub marginals: Vec<MeasureData>,
    pub reference: MeasureData,
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub tau: f64,
}

impl Instance {
    pub fn problem(&self) -> Result<FixedSupportProblem> {
        let marginals = self
            .marginals
            .iter()
            .cloned()
            .map(MeasureData::into_measure)
            .collect::<drb_core::Result<Vec<_>>>()?;
        let reference = self.reference.clone().into_measure()?;
        Ok(FixedSupportProblem::squared_euclidean(
            marginals, reference,
        )?)
    }

    pub fn config(&self) -> SolverConfig {
        SolverConfig::new(self.lambda, self.tau, self.weights.clone())
    }

    pub fn total_support(&self) -> usize {
        self.marginals.iter().map(|m| m.weights.len()).sum()
    }
}

/// Ranges for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct InstanceShape {
    pub dim: usize,
    pub k: (usize, usize),
    pub m: (usize, usize),
    pub reference: (usize, usize),
    pub max_total_support: usize,
}

impl InstanceShape {
    /// `k ∈ {2, 3}`, `m_j ∈ [3, 20]`, `|supp π_ref| ∈ [5, 50]`.
    pub fn standard(dim: usize) -> Self {
        Self {
            dim,
            k: (2, 3),
            m: (3, 20),
            reference: (5, 50),
            max_total_support: usize::MAX,
        }
    }

    /// Same ranges with `Σ m_j ≤ 64`, within reach of the dense solver.
    pub fn small(dim: usize) -> Self {
        Self {
            max_total_support: 64,
            ..Self::standard(dim)
        }
    }
}

/// The regularization grid; `τ = λ/2` is drawn with probability 1/3.
pub const REG_GRID: [f64; 4] = [0.1, 0.5, 1.0, 2.0];

fn random_simplex(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn random_points(r: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Points uniform in `[−1, 1]ᵈ`, weights bounded away from zero.
pub fn random_instance(seed: u64, index: u64, shape: InstanceShape) -> Instance {
    let mut r = rng::stream(seed, PURPOSE_INSTANCE, 0, index);
    let k = r.random_range(shape.k.0..=shape.k.1);
    let per_cap = (shape.max_total_support / k).min(shape.m.1).max(shape.m.0);
    let marginals = (0..k)
        .map(|_| {
            let m = r.random_range(shape.m.0..=per_cap);
            MeasureData {
                points: random_points(&mut r, m, shape.dim),
                weights: random_simplex(&mut r, m),
            }
        })
        .collect();
    let n_ref = r.random_range(shape.reference.0..=shape.reference.1);
    let reference = MeasureData {
        points: random_points(&mut r, n_ref, shape.dim),
        weights: random_simplex(&mut r, n_ref),
    };
    let lambda = REG_GRID[r.random_range(0..REG_GRID.len())];
    let tau = if r.random_range(0..3) == 0 {
        lambda / 2.0
    } else {
        REG_GRID[r.random_range(0..REG_GRID.len())]
    };
    Instance {
        marginals,
        reference,
        weights: random_simplex(&mut r, k),
        lambda,
        tau,
    }
}

/// `{instance, E*, psi*, mu*}` from the dense reference solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFixture {
    pub instance: Instance,
    #[serde(rename = "E*")]
    pub e_star: f64,
    #[serde(rename = "psi*")]
    pub psi_star: Vec<Vec<f64>>,
    #[serde(rename = "mu*")]
    pub mu_star: Vec<f64>,
    pub gradient_norm: f64,
}

pub const DENSE_ITERS: usize = 2_000_000;

pub fn solve_reference(instance: &Instance) -> Result<(ReferenceSolution, FixedSupportProblem)> {
    let problem = instance.problem()?;
    let sol = dense_dual_ascent(&problem, &instance.config(), None, DENSE_ITERS)?;
    Ok((sol, problem))
}

pub fn reference_fixture(instance: Instance) -> Result<ReferenceFixture> {
    let (sol, _) = solve_reference(&instance)?;
    Ok(ReferenceFixture {
        e_star: sol.dual_value,
        psi_star: sol.psi().iter().map(|p| p.values().to_vec()).collect(),
        mu_star: sol.mu().to_vec(),
        gradient_norm: sol.gradient_norm,
        instance,
    })
}

/// Geometry on which undamped Sinkhorn decreases the dual value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceFixture {
    pub instance: Instance,
    /// Largest one-step drop of the undamped run within `iters` steps.
    pub undamped_max_decrease: f64,
    pub iters: usize,
}

/// Runs `iters` steps with the given rule and no early stop.
pub fn trace_run(
    problem: &FixedSupportProblem,
    cfg: &SolverConfig,
    iters: usize,
    rule: UpdateRule,
) -> Result<drb_core::SolveOutcome> {
    let cfg = cfg
        .clone()
        .with_max_iters(iters)
        .with_tol(f64::MIN_POSITIVE);
    Ok(run_with(problem, &cfg, None, rule, &NoClock)?)
}

/// Searches random instances with `τ = λ/4` until undamped Sinkhorn drops
/// by more than `threshold` within `iters` steps.
pub fn search_divergence(
    seed: u64,
    tries: u64,
    iters: usize,
    threshold: f64,
) -> Result<DivergenceFixture> {
    for index in 0..tries {
        let mut r = rng::stream(seed, PURPOSE_INSTANCE, 1, index);
        let dim = r.random_range(1..=2);
        let k = r.random_range(2..=4);
        let marginals: Vec<MeasureData> = (0..k)
            .map(|_| {
                let m = r.random_range(1..=4);
                MeasureData {
                    points: random_points(&mut r, m, dim),
                    weights: random_simplex(&mut r, m),
                }
            })
            .collect();
        let n_ref = r.random_range(3..=12);
        let lambda = 1.0;
        let instance = Instance {
            marginals,
            reference: MeasureData {
                points: random_points(&mut r, n_ref, dim)
                    .into_iter()
                    .map(|p| p.iter().map(|x| 2.0 * x).collect())
                    .collect(),
                weights: vec![1.0 / n_ref as f64; n_ref],
            },
            weights: random_simplex(&mut r, k),
            lambda,
            tau: lambda / 4.0,
        };
        let problem = instance.problem()?;
        let cfg = instance.config();
        let undamped = trace_run(&problem, &cfg, iters, UpdateRule::Undamped)?;
        let drop = undamped.trace.max_decrease();
        if drop > threshold {
            let damped = trace_run(&problem, &cfg, iters, UpdateRule::Damped)?;
            if damped.trace.is_monotone(1e-9) {
                return Ok(DivergenceFixture {
                    instance,
                    undamped_max_decrease: drop,
                    iters,
                });
            }
        }
    }
    bail!("no diverging instance among {tries} candidates")
}

/// Directory holding the shipped fixtures.
pub fn shipped_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub const DIVERGENCE_FILE: &str = "divergence.json";
pub const REFERENCE_DIR: &str = "reference";

pub fn load_divergence(path: Option<&Path>) -> Result<DivergenceFixture> {
    let default = shipped_dir().join(DIVERGENCE_FILE);
    io::read_json(path.unwrap_or(&default))
}

pub fn load_reference_fixtures(dir: &Path) -> Result<Vec<(String, ReferenceFixture)>> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let name = p
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            Ok((name, io::read_json(&p)?))
        })
        .collect()
}

/// Instance geometry from the divergence fixture with new `λ`, `τ`.
pub fn with_regularization(instance: &Instance, lambda: f64, tau: f64) -> Instance {
    Instance {
        lambda,
        tau,
        ..instance.clone()
    }
}

/// Evenly spaced `n`-point uniform grid on `[−r, r]` as a reference measure.
pub fn uniform_grid_1d(n: usize, r: f64) -> Result<DiscreteMeasure> {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| vec![-r + 2.0 * r * i as f64 / (n - 1) as f64])
        .collect();
    Ok(DiscreteMeasure::uniform(PointCloud::new(&rows)?)?)
}
