//! Measures, costs, domains and solver configuration.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Absolute tolerance on `Σ weights = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Fingerprint of a point set; potentials are anchored on one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SupportId(pub u64);

/// Row-major point set in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptySupport)?;
        let dim = first.len();
        let mut coords = Vec::with_capacity(dim * rows.len());
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            coords.extend_from_slice(row);
        }
        Self::from_flat(dim, coords)
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ParameterOutOfRange(
                "point dimension must be positive",
            ));
        }
        if coords.is_empty() {
            return Err(Error::EmptySupport);
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: coords.len() % dim,
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
        Ok(Self { dim, coords })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter().map(|p| p.to_vec()).collect()
    }

    /// FNV-1a over the dimension and the coordinate bit patterns.
    pub fn support_id(&self) -> SupportId {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |word: u64| {
            for b in word.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        feed(self.dim as u64);
        for c in &self.coords {
            feed(c.to_bits());
        }
        SupportId(h)
    }

    pub fn max_norm(&self) -> f64 {
        self.iter().map(math::norm).fold(0.0, f64::max)
    }
}

/// Weighted point cloud with strictly positive weights summing to one.
///
/// Weights are kept exactly as supplied; their logarithms are cached for the
/// log-domain kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: PointCloud,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    id: SupportId,
}

impl DiscreteMeasure {
    pub fn new(points: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        Self::from_cloud(PointCloud::new(points)?, weights)
    }

    pub fn from_cloud(points: PointCloud, weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights, points.len())?;
        let log_weights = weights.iter().map(|w| libm::log(*w)).collect();
        let id = points.support_id();
        Ok(Self {
            points,
            weights,
            log_weights,
            id,
        })
    }

    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::from_cloud(
            PointCloud::from_flat(point.len(), point.to_vec())?,
            vec![1.0],
        )
    }

    pub fn uniform(points: PointCloud) -> Result<Self> {
        let n = points.len();
        Self::from_cloud(points, vec![1.0 / n as f64; n])
    }

    pub fn points(&self) -> &PointCloud {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn id(&self) -> SupportId {
        self.id
    }

    pub fn expectation(&self, f: &[f64]) -> f64 {
        math::dot(&self.weights, f)
    }
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if n == 0 || weights.is_empty() {
        return Err(Error::EmptySupport);
    }
    if weights.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: weights.len(),
        });
    }
    for (index, &value) in weights.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite("weights"));
        }
        if value <= 0.0 {
            return Err(Error::NonPositiveWeight { index, value });
        }
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::NonProbabilityWeights { sum });
    }
    Ok(())
}

/// Dense row-major cost block `c(x_i, y_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        for &c in &data {
            if !c.is_finite() {
                return Err(Error::NonFinite("cost matrix"));
            }
            if c < 0.0 {
                return Err(Error::NegativeCost(c));
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.data[i * self.cols + l]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// Explicit cost block between two anchored supports.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBlock {
    pub rows: SupportId,
    pub cols: SupportId,
    pub matrix: CostMatrix,
}

/// Ground cost `c(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub enum CostOracle {
    /// `c(x, y) = ‖x − y‖²`, evaluated on demand.
    SquaredEuclidean,
    /// User-supplied matrices, one per (row support, column support) pair.
    Explicit(Vec<CostBlock>),
}

impl CostOracle {
    pub fn is_squared_euclidean(&self) -> bool {
        matches!(self, CostOracle::SquaredEuclidean)
    }

    /// Materializes the block `c(rows_i, cols_l)`.
    pub fn block(&self, rows: &PointCloud, cols: &PointCloud) -> Result<CostMatrix> {
        match self {
            CostOracle::SquaredEuclidean => {
                if rows.dim() != cols.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: rows.dim(),
                        found: cols.dim(),
                    });
                }
                let mut data = Vec::with_capacity(rows.len() * cols.len());
                for x in rows.iter() {
                    for y in cols.iter() {
                        data.push(math::squared_distance(x, y));
                    }
                }
                Ok(CostMatrix {
                    rows: rows.len(),
                    cols: cols.len(),
                    data,
                })
            }
            CostOracle::Explicit(blocks) => {
                let (r, c) = (rows.support_id(), cols.support_id());
                let block = blocks
                    .iter()
                    .find(|b| b.rows == r && b.cols == c)
                    .ok_or(Error::MissingCostBlock)?;
                if block.matrix.rows != rows.len() || block.matrix.cols != cols.len() {
                    return Err(Error::CostShape {
                        rows: block.matrix.rows,
                        cols: block.matrix.cols,
                        expected_rows: rows.len(),
                        expected_cols: cols.len(),
                    });
                }
                Ok(block.matrix.clone())
            }
        }
    }

    /// `sup c` over the cross pairs `rows × cols`.
    pub fn c_inf(&self, rows: &PointCloud, cols: &PointCloud) -> Result<f64> {
        Ok(self.block(rows, cols)?.max())
    }
}

/// Compact convex domain for the free-support setting.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Domain {
    Ball { dim: usize, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Domain {
    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        if dim == 0 || !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::ParameterOutOfRange(
                "ball needs dim > 0 and radius > 0",
            ));
        }
        Ok(Domain::Ball { dim, radius })
    }

    pub fn cuboid(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::ParameterOutOfRange(
                "box bounds must have equal positive length",
            ));
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite())
        {
            return Err(Error::ParameterOutOfRange(
                "box needs lo < hi in every coordinate",
            ));
        }
        Ok(Domain::Box { lo, hi })
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball { dim, .. } => *dim,
            Domain::Box { lo, .. } => lo.len(),
        }
    }

    /// Radius `R` of the smallest origin-centred ball containing the domain.
    pub fn radius(&self) -> f64 {
        match self {
            Domain::Ball { radius, .. } => *radius,
            Domain::Box { lo, hi } => libm::sqrt(
                lo.iter()
                    .zip(hi)
                    .map(|(a, b)| {
                        let m = a.abs().max(b.abs());
                        m * m
                    })
                    .sum(),
            ),
        }
    }

    /// Euclidean projection onto the domain, written into `out`.
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Domain::Ball { radius, .. } => {
                let n = math::norm(x);
                let scale = if n <= *radius { 1.0 } else { radius / n };
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = xi * scale;
                }
            }
            Domain::Box { lo, hi } => {
                for (((o, xi), a), b) in out.iter_mut().zip(x).zip(lo).zip(hi) {
                    *o = xi.clamp(*a, *b);
                }
            }
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.project_into(x, &mut out);
        out
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Ball { radius, .. } => math::norm(x) <= *radius,
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo)
                .zip(hi)
                .all(|((xi, a), b)| *a <= *xi && *xi <= *b),
        }
    }

    pub fn center(&self) -> Vec<f64> {
        match self {
            Domain::Ball { dim, .. } => vec![0.0; *dim],
            Domain::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
        }
    }

    /// Worst-case squared-Euclidean cost over the domain, `(diam)² ≤ 4R²`.
    pub fn c_inf_squared(&self) -> f64 {
        let r = self.radius();
        4.0 * r * r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    FixedSupport,
    FreeSupport,
}

/// Regularization strengths, marginal weights and iteration controls.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverConfig {
    pub lambda: f64,
    pub tau: f64,
    pub weights: Vec<f64>,
    /// `None` selects `min(1, τ/λ)`.
    pub eta: Option<f64>,
    pub max_iters: usize,
    pub tol_certificate: f64,
    pub mode: Mode,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(lambda: f64, tau: f64, weights: Vec<f64>) -> Self {
        Self {
            lambda,
            tau,
            weights,
            eta: None,
            max_iters: 1000,
            tol_certificate: 1e-6,
            mode: Mode::FixedSupport,
            seed: 0,
        }
    }

    /// Equal weights over `k` marginals.
    pub fn uniform(lambda: f64, tau: f64, k: usize) -> Self {
        Self::new(lambda, tau, vec![1.0 / k as f64; k])
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = Some(eta);
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol_certificate = tol;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn default_eta(&self) -> f64 {
        (self.tau / self.lambda).min(1.0)
    }

    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or_else(|| self.default_eta())
    }

    /// True unless η was overridden above `min(1, τ/λ)`, which voids the
    /// monotone-improvement guarantee.
    pub fn monotonicity_guaranteed(&self) -> bool {
        self.eta() <= self.default_eta()
    }

    pub fn min_reg(&self) -> f64 {
        self.lambda.min(self.tau)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::NonPositiveLambda(self.lambda));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::NonPositiveTau(self.tau));
        }
        let eta = self.eta();
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidDamping(eta));
        }
        if !(self.tol_certificate > 0.0) {
            return Err(Error::ParameterOutOfRange(
                "tol_certificate must be positive",
            ));
        }
        if self.weights.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                found: self.weights.len(),
            });
        }
        check_weights(&self.weights, k)
    }
}

/// Unvalidated measure as read from a file.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeasureData {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl MeasureData {
    pub fn into_measure(self) -> Result<DiscreteMeasure> {
        DiscreteMeasure::new(&self.points, self.weights)
    }
}

impl From<&DiscreteMeasure> for MeasureData {
    fn from(m: &DiscreteMeasure) -> Self {
        Self {
            points: m.points().to_rows(),
            weights: m.weights().to_vec(),
        }
    }
}

pub enum ReferenceSpec<'a> {
    Discrete(&'a MeasureData),
    Domain(&'a Domain),
}

/// Outcome of [`validate_problem`]: every issue found plus the derived `c_∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<Error>,
    pub dim: Option<usize>,
    pub c_inf: Option<f64>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    /// First issue as an error, or the computed `c_∞`.
    pub fn into_result(self) -> Result<f64> {
        match self.issues.into_iter().next() {
            Some(e) => Err(e),
            None => self.c_inf.ok_or(Error::EmptySupport),
        }
    }
}

/// Checks a full problem and computes `c_∞` under the squared Euclidean cost.
///
/// Fixed support: `c_∞` is the maximum cost over reference × marginal pairs.
/// Free support: `c_∞ = 4R²` for the enclosing ball of the domain.
pub fn validate_problem(
    marginals: &[MeasureData],
    reference: ReferenceSpec<'_>,
    cfg: &SolverConfig,
) -> ValidationReport {
    let mut issues = Vec::new();
    let mut dim: Option<usize> = None;
    let mut note_dim = |d: usize, issues: &mut Vec<Error>| match dim {
        None => dim = Some(d),
        Some(expected) if expected != d => {
            issues.push(Error::DimensionMismatch { expected, found: d })
        }
        _ => {}
    };

    if marginals.is_empty() {
        issues.push(Error::EmptySupport);
    }
    let mut clouds = Vec::new();
    for m in marginals {
        match DiscreteMeasure::new(&m.points, m.weights.clone()) {
            Ok(measure) => {
                note_dim(measure.dim(), &mut issues);
                clouds.push(measure.points().clone());
            }
            Err(e) => issues.push(e),
        }
    }

    let mut c_inf = None;
    match reference {
        ReferenceSpec::Discrete(r) => match DiscreteMeasure::new(&r.points, r.weights.clone()) {
            Ok(measure) => {
                note_dim(measure.dim(), &mut issues);
                if issues.is_empty() {
                    let cost = CostOracle::SquaredEuclidean;
                    let mut sup = 0.0f64;
                    for cloud in &clouds {
                        match cost.c_inf(measure.points(), cloud) {
                            Ok(c) => sup = sup.max(c),
                            Err(e) => issues.push(e),
                        }
                    }
                    c_inf = Some(sup);
                }
            }
            Err(e) => issues.push(e),
        },
        ReferenceSpec::Domain(domain) => {
            note_dim(domain.dim(), &mut issues);
            c_inf = Some(domain.c_inf_squared());
        }
    }

    if let Err(e) = cfg.validate(marginals.len()) {
        issues.push(e);
    }
    if !issues.is_empty() {
        c_inf = None;
    }
    ValidationReport { issues, dim, c_inf }
}

/// A validated fixed-support instance with cached cost blocks
/// `reference × supp(νʲ)`.
#[derive(Debug, Clone)]
pub struct FixedSupportProblem {
    marginals: Vec<DiscreteMeasure>,
    reference: DiscreteMeasure,
    cost: CostOracle,
    blocks: Vec<CostMatrix>,
    c_inf: f64,
}

impl FixedSupportProblem {
    pub fn new(
        marginals: Vec<DiscreteMeasure>,
        reference: DiscreteMeasure,
        cost: CostOracle,
    ) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::EmptySupport);
        }
        let mut blocks = Vec::with_capacity(marginals.len());
        let mut c_inf = 0.0f64;
        for nu in &marginals {
            let block = cost.block(reference.points(), nu.points())?;
            c_inf = c_inf.max(block.max());
            blocks.push(block);
        }
        Ok(Self {
            marginals,
            reference,
            cost,
            blocks,
            c_inf,
        })
    }

    pub fn squared_euclidean(
        marginals: Vec<DiscreteMeasure>,
        reference: DiscreteMeasure,
    ) -> Result<Self> {
        Self::new(marginals, reference, CostOracle::SquaredEuclidean)
    }

    pub fn marginals(&self) -> &[DiscreteMeasure] {
        &self.marginals
    }

    pub fn reference(&self) -> &DiscreteMeasure {
        &self.reference
    }

    pub fn cost(&self) -> &CostOracle {
        &self.cost
    }

    pub fn cost_block(&self, j: usize) -> &CostMatrix {
        &self.blocks[j]
    }

    pub fn k(&self) -> usize {
        self.marginals.len()
    }

    pub fn c_inf(&self) -> f64 {
        self.c_inf
    }

    /// `Σ_j m_j`.
    pub fn total_support(&self) -> usize {
        self.marginals.iter().map(DiscreteMeasure::len).sum()
    }
}
