//! Reference-set statistics: weights, covariance estimation, kernel
//! projection, the simultaneous diagonalization that splits the coefficient
//! space into free and pinned subspaces, and the Moore-Penrose pseudoinverse.
//!
//! The model behind the decomposition: reference coefficient vectors are
//! noisy observations of one underlying vector, with noise confined to the
//! null space of the endpoint matrix `A`. The covariance therefore commutes
//! with `A^T A` and the two matrices share an orthogonal eigenbasis
//! `V = (V1 V2 V3)`: `V1` spans the noise image (free directions), `V3` the
//! row space of `A` (pinned by the endpoints), and `V2` whatever is left
//! (implicit linear relations pinned by the data). Estimated covariances
//! never commute exactly, so [`project_to_kernel`] reconciles them with the
//! model before [`decompose`] runs.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{max_abs, symmetric_eigen_desc, symmetrize, symmetry_defect};
use crate::trajectory::{CoefficientVector, EndpointSystem, TrajectoryError};

/// Default relative eigenvalue threshold for numerical ranks.
pub const DEFAULT_RANK_RTOL: f64 = 1e-10;

/// Relative tolerance on the commutation residual accepted by [`decompose`].
const COMMUTATION_RTOL: f64 = 1e-8;

#[derive(Error, Debug)]
pub enum RefStatsError {
    #[error("reference set needs at least one trajectory")]
    Empty,

    #[error("covariance estimation needs at least two references, got {0}")]
    InsufficientData(usize),

    #[error("reference {index} uses a different basis than reference 0")]
    MixedBases { index: usize },

    #[error("weights must be positive, got {value} at index {index}")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("{scheme} weighting needs one cost per reference")]
    MissingCosts { scheme: &'static str },

    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },

    #[error("shrinkage must lie in [0, 1], got {0}")]
    InvalidShrinkage(f64),

    #[error(
        "endpoint matrix is not full row rank (rank {rank} of {rows}); \
         dependent rows {deficient:?}"
    )]
    RankDeficient {
        rank: usize,
        rows: usize,
        deficient: Vec<usize>,
    },

    #[error(
        "covariance does not commute with A^T A (residual {residual:.3e} > {tolerance:.3e}); \
         project it onto ker A first"
    )]
    ModelMismatch { residual: f64, tolerance: f64 },

    #[error("matrix is not symmetric (defect {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix dimensions {rows}x{cols} do not match the expected size {expected}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        expected: usize,
    },

    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Weighted set of reference coefficient vectors sharing one basis.
#[derive(Clone, Debug)]
pub struct ReferenceSet {
    vectors: Vec<CoefficientVector>,
    weights: Vec<f64>,
    costs: Option<Vec<f64>>,
}

impl ReferenceSet {
    /// Weights are normalized to sum to one; they must be positive.
    pub fn new(
        vectors: Vec<CoefficientVector>,
        weights: Vec<f64>,
        costs: Option<Vec<f64>>,
    ) -> Result<Self, RefStatsError> {
        if vectors.is_empty() {
            return Err(RefStatsError::Empty);
        }
        if weights.len() != vectors.len() {
            return Err(RefStatsError::WeightCount {
                expected: vectors.len(),
                got: weights.len(),
            });
        }
        if let Some(costs) = &costs {
            if costs.len() != vectors.len() {
                return Err(RefStatsError::WeightCount {
                    expected: vectors.len(),
                    got: costs.len(),
                });
            }
        }
        for (index, v) in vectors.iter().enumerate().skip(1) {
            if v.spec() != vectors[0].spec() {
                return Err(RefStatsError::MixedBases { index });
            }
        }
        let weights = normalize_weights(weights)?;
        Ok(Self {
            vectors,
            weights,
            costs,
        })
    }

    pub fn with_uniform_weights(
        vectors: Vec<CoefficientVector>,
        costs: Option<Vec<f64>>,
    ) -> Result<Self, RefStatsError> {
        let n = vectors.len();
        Self::new(vectors, vec![1.0; n.max(1)], costs)
    }

    pub fn vectors(&self) -> &[CoefficientVector] {
        &self.vectors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn costs(&self) -> Option<&[f64]> {
        self.costs.as_deref()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn coefficient_len(&self) -> usize {
        self.vectors[0].values().len()
    }

    pub fn spec(&self) -> &crate::basis::BasisSpec {
        self.vectors[0].spec()
    }

    /// Weighted mean of the coefficient vectors.
    pub fn weighted_mean(&self) -> DVector<f64> {
        let mut mean = DVector::zeros(self.coefficient_len());
        for (v, &w) in self.vectors.iter().zip(&self.weights) {
            mean += v.values() * w;
        }
        mean
    }
}

/// Weighting schemes for the penalty term.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightScheme {
    /// Equal weight for every reference.
    Uniform,
    /// Weight proportional to the reciprocal rank of the cost (cheapest
    /// reference gets rank 1).
    InverseCostRank,
    /// User-supplied positive weights, normalized to sum to one.
    User(Vec<f64>),
}

/// Compute normalized penalty weights for `count` references.
pub fn compute_weights(
    count: usize,
    costs: Option<&[f64]>,
    scheme: &WeightScheme,
) -> Result<Vec<f64>, RefStatsError> {
    if count == 0 {
        return Err(RefStatsError::Empty);
    }
    match scheme {
        WeightScheme::Uniform => Ok(vec![1.0 / count as f64; count]),
        WeightScheme::InverseCostRank => {
            let costs = costs.ok_or(RefStatsError::MissingCosts {
                scheme: "inverse-cost-rank",
            })?;
            if costs.len() != count {
                return Err(RefStatsError::WeightCount {
                    expected: count,
                    got: costs.len(),
                });
            }
            let mut order: Vec<usize> = (0..count).collect();
            order.sort_by(|&a, &b| costs[a].partial_cmp(&costs[b]).expect("finite costs"));
            let mut weights = vec![0.0; count];
            for (rank, &i) in order.iter().enumerate() {
                weights[i] = 1.0 / (rank + 1) as f64;
            }
            normalize_weights(weights)
        }
        WeightScheme::User(weights) => {
            if weights.len() != count {
                return Err(RefStatsError::WeightCount {
                    expected: count,
                    got: weights.len(),
                });
            }
            normalize_weights(weights.clone())
        }
    }
}

fn normalize_weights(mut weights: Vec<f64>) -> Result<Vec<f64>, RefStatsError> {
    for (index, &value) in weights.iter().enumerate() {
        if value <= 0.0 || !value.is_finite() {
            return Err(RefStatsError::NonPositiveWeight { index, value });
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Covariance estimator configuration: optional shrinkage toward the scaled
/// identity and the relative eigenvalue threshold defining the numerical rank.
#[derive(Clone, Copy, Debug)]
pub struct CovarianceEstimator {
    pub shrinkage: f64,
    pub rank_rtol: f64,
}

impl Default for CovarianceEstimator {
    fn default() -> Self {
        Self {
            shrinkage: 0.0,
            rank_rtol: DEFAULT_RANK_RTOL,
        }
    }
}

/// Symmetric positive semidefinite coefficient covariance with its numerical
/// rank.
#[derive(Clone, Debug)]
pub struct CovarianceModel {
    matrix: DMatrix<f64>,
    rank: usize,
    rank_threshold: f64,
    rank_rtol: f64,
}

impl CovarianceModel {
    /// Wrap an explicit symmetric matrix, recomputing rank information.
    pub fn from_matrix(matrix: DMatrix<f64>, rank_rtol: f64) -> Result<Self, RefStatsError> {
        let defect = symmetry_defect(&matrix);
        if defect > 1e-10 * (1.0 + max_abs(&matrix)) {
            return Err(RefStatsError::NotSymmetric(defect));
        }
        let matrix = symmetrize(&matrix);
        let (eigenvalues, _) = symmetric_eigen_desc(&matrix);
        let leading = eigenvalues.get(0).copied().unwrap_or(0.0).max(0.0);
        let threshold = (rank_rtol * leading).max(1e-300);
        let rank = eigenvalues.iter().filter(|&&l| l > threshold).count();
        Ok(Self {
            matrix,
            rank,
            rank_threshold: threshold,
            rank_rtol,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Numerical rank (count of eigenvalues above the threshold).
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn rank_threshold(&self) -> f64 {
        self.rank_threshold
    }

    pub fn rank_rtol(&self) -> f64 {
        self.rank_rtol
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }
}

/// Empirical covariance of the reference vectors (denominator `I - 1`),
/// optionally shrunk toward `(tr S / K) I`.
pub fn estimate_covariance(
    refs: &ReferenceSet,
    estimator: &CovarianceEstimator,
) -> Result<CovarianceModel, RefStatsError> {
    let count = refs.len();
    if count < 2 {
        return Err(RefStatsError::InsufficientData(count));
    }
    let gamma = estimator.shrinkage;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(RefStatsError::InvalidShrinkage(gamma));
    }
    let k = refs.coefficient_len();
    let mut mean = DVector::zeros(k);
    for v in refs.vectors() {
        mean += v.values();
    }
    mean /= count as f64;
    let mut sample = DMatrix::zeros(k, k);
    for v in refs.vectors() {
        let delta = v.values() - &mean;
        sample += &delta * delta.transpose();
    }
    sample /= (count - 1) as f64;
    let target = sample.trace() / k as f64;
    let mut shrunk = sample * (1.0 - gamma);
    for i in 0..k {
        shrunk[(i, i)] += gamma * target;
    }
    CovarianceModel::from_matrix(symmetrize(&shrunk), estimator.rank_rtol)
}

/// Check that the endpoint matrix is full row rank; on failure name the rows
/// that depend linearly on earlier ones.
fn require_full_row_rank(matrix: &DMatrix<f64>) -> Result<(), RefStatsError> {
    let rows = matrix.nrows();
    let svd = matrix.clone().svd(false, false);
    let rank = svd.rank(1e-10 * svd.singular_values[0].max(1.0));
    if rank == rows {
        return Ok(());
    }
    // Gram-Schmidt over the rows in order: a row that collapses is dependent.
    let scale = max_abs(matrix).max(f64::MIN_POSITIVE);
    let mut kept: Vec<DVector<f64>> = Vec::new();
    let mut deficient = Vec::new();
    for r in 0..rows {
        let mut row: DVector<f64> = matrix.row(r).transpose();
        for q in &kept {
            let coeff = row.dot(q);
            row -= q * coeff;
        }
        let norm = row.norm();
        if norm <= 1e-10 * scale {
            deficient.push(r);
        } else {
            kept.push(row / norm);
        }
    }
    Err(RefStatsError::RankDeficient {
        rank,
        rows,
        deficient,
    })
}

/// Orthogonal projector onto `ker A`, computed from the SVD of `A`.
fn kernel_projector(matrix: &DMatrix<f64>) -> DMatrix<f64> {
    let k = matrix.ncols();
    let svd = matrix.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let tol = 1e-12 * svd.singular_values[0].max(1.0);
    let mut projector = DMatrix::identity(k, k);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            let row = v_t.row(i);
            projector -= row.transpose() * row;
        }
    }
    projector
}

/// Enforce the reference model on an estimated covariance by projecting it
/// onto `ker A`: returns the projected model and the pre-projection
/// commutation residual `max |Sigma A^T A - A^T A Sigma|`.
pub fn project_to_kernel(
    cov: &CovarianceModel,
    system: &EndpointSystem,
) -> Result<(CovarianceModel, f64), RefStatsError> {
    require_full_row_rank(system.matrix())?;
    let gram = system.matrix().transpose() * system.matrix();
    let residual = max_abs(&(cov.matrix() * &gram - &gram * cov.matrix()));
    let projector = kernel_projector(system.matrix());
    let projected = symmetrize(&(&projector * cov.matrix() * &projector));
    let model = CovarianceModel::from_matrix(projected, cov.rank_rtol())?;
    Ok((model, residual))
}

/// The orthogonal split of the coefficient space produced by [`decompose`]:
/// free directions carrying the covariance, data-pinned directions, and
/// endpoint-pinned directions with the singular values of the endpoint
/// matrix.
#[derive(Clone, Debug)]
pub struct SubspaceDecomposition {
    free_directions: DMatrix<f64>,
    data_directions: DMatrix<f64>,
    endpoint_directions: DMatrix<f64>,
    covariance_eigenvalues: DVector<f64>,
    endpoint_singular_values: DVector<f64>,
    endpoint_rotation: DMatrix<f64>,
    pinned_data_coords: DVector<f64>,
    pinned_endpoint_coords: DVector<f64>,
    data_coord_spread: f64,
}

impl SubspaceDecomposition {
    /// Columns of `V1`: the free optimization directions.
    pub fn free_directions(&self) -> &DMatrix<f64> {
        &self.free_directions
    }

    /// Columns of `V2`: directions pinned by implicit data relations.
    pub fn data_directions(&self) -> &DMatrix<f64> {
        &self.data_directions
    }

    /// Columns of `V3`: directions pinned by the endpoint conditions.
    pub fn endpoint_directions(&self) -> &DMatrix<f64> {
        &self.endpoint_directions
    }

    /// Positive covariance eigenvalues on the free directions, descending.
    pub fn covariance_eigenvalues(&self) -> &DVector<f64> {
        &self.covariance_eigenvalues
    }

    /// Positive singular values of the endpoint matrix, descending.
    pub fn endpoint_singular_values(&self) -> &DVector<f64> {
        &self.endpoint_singular_values
    }

    /// Left factor of the endpoint SVD.
    pub fn endpoint_rotation(&self) -> &DMatrix<f64> {
        &self.endpoint_rotation
    }

    /// Coordinates pinned by the data relations.
    pub fn pinned_data_coords(&self) -> &DVector<f64> {
        &self.pinned_data_coords
    }

    /// Coordinates pinned by the endpoint conditions.
    pub fn pinned_endpoint_coords(&self) -> &DVector<f64> {
        &self.pinned_endpoint_coords
    }

    /// Spread of the data-pinned coordinates across references; zero in the
    /// exact model.
    pub fn data_coord_spread(&self) -> f64 {
        self.data_coord_spread
    }

    /// Dimension of the free subspace (numerical covariance rank).
    pub fn free_rank(&self) -> usize {
        self.free_directions.ncols()
    }

    /// Total coefficient dimension `K`.
    pub fn total_len(&self) -> usize {
        self.free_directions.nrows()
    }

    /// The full orthogonal basis `V = (V1 V2 V3)`.
    pub fn full_basis(&self) -> DMatrix<f64> {
        let k = self.total_len();
        let mut v = DMatrix::zeros(k, k);
        let mut col = 0;
        for block in [
            &self.free_directions,
            &self.data_directions,
            &self.endpoint_directions,
        ] {
            for j in 0..block.ncols() {
                v.set_column(col, &block.column(j));
                col += 1;
            }
        }
        v
    }

    /// The pinned coordinates stacked in `(data, endpoint)` order.
    pub fn pinned_tail(&self) -> DVector<f64> {
        let data_len = self.pinned_data_coords.len();
        let end_len = self.pinned_endpoint_coords.len();
        let mut tail = DVector::zeros(data_len + end_len);
        tail.rows_mut(0, data_len).copy_from(&self.pinned_data_coords);
        tail.rows_mut(data_len, end_len)
            .copy_from(&self.pinned_endpoint_coords);
        tail
    }

    /// Free coordinates of a full vector: `V1^T c`.
    pub fn restrict(&self, coefficients: &DVector<f64>) -> DVector<f64> {
        self.free_directions.transpose() * coefficients
    }

    /// Rebuild the full vector from free coordinates and the pinned tail.
    pub fn lift(&self, free: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.free_directions * free;
        if self.data_directions.ncols() > 0 {
            out += &self.data_directions * &self.pinned_data_coords;
        }
        if self.endpoint_directions.ncols() > 0 {
            out += &self.endpoint_directions * &self.pinned_endpoint_coords;
        }
        out
    }
}

/// Simultaneously diagonalize the kernel-projected covariance and `A^T A`.
///
/// The covariance must already satisfy the model (`Sigma A^T A = 0` within
/// tolerance) and `A` must be full row rank. References are needed to pin the
/// data coordinates; the mean of `V2^T c_R` is used and the spread reported.
pub fn decompose(
    cov: &CovarianceModel,
    system: &EndpointSystem,
    refs: &ReferenceSet,
    rank_rtol: f64,
) -> Result<SubspaceDecomposition, RefStatsError> {
    let k = cov.len();
    let a = system.matrix();
    if a.ncols() != k || refs.coefficient_len() != k {
        return Err(RefStatsError::DimensionMismatch {
            rows: a.nrows(),
            cols: a.ncols(),
            expected: k,
        });
    }
    require_full_row_rank(a)?;
    let rows = a.nrows();
    let gram = a.transpose() * a;
    let residual = max_abs(&(cov.matrix() * &gram - &gram * cov.matrix()));
    let tolerance = COMMUTATION_RTOL
        * max_abs(cov.matrix()).max(f64::MIN_POSITIVE)
        * max_abs(&gram).max(f64::MIN_POSITIVE);
    if residual > tolerance {
        return Err(RefStatsError::ModelMismatch {
            residual,
            tolerance,
        });
    }

    // Free block: eigenvectors of the covariance above the rank threshold.
    let (cov_values, cov_vectors) = symmetric_eigen_desc(cov.matrix());
    let leading = cov_values.get(0).copied().unwrap_or(0.0).max(0.0);
    let sigma_rank = cov_values
        .iter()
        .filter(|&&l| l > (rank_rtol * leading).max(1e-300))
        .count();
    if sigma_rank + rows > k {
        return Err(RefStatsError::ModelMismatch {
            residual: f64::INFINITY,
            tolerance,
        });
    }
    let free_directions = cov_vectors.columns(0, sigma_rank).into_owned();
    let covariance_eigenvalues = cov_values.rows(0, sigma_rank).into_owned();

    // Restrict A^T A to the orthogonal complement and split it there.
    let complement = cov_vectors.columns(sigma_rank, k - sigma_rank).into_owned();
    let restricted = symmetrize(&(complement.transpose() * &gram * &complement));
    let (a_values, a_vectors) = symmetric_eigen_desc(&restricted);
    let a_leading = a_values.get(0).copied().unwrap_or(0.0).max(0.0);
    let positive = a_values
        .iter()
        .filter(|&&l| l > (DEFAULT_RANK_RTOL * a_leading).max(1e-300))
        .count();
    if positive != rows {
        return Err(RefStatsError::RankDeficient {
            rank: positive,
            rows,
            deficient: Vec::new(),
        });
    }
    let endpoint_directions = (&complement * a_vectors.columns(0, rows)).into_owned();
    let endpoint_singular_values = DVector::from_fn(rows, |i, _| a_values[i].max(0.0).sqrt());
    let data_directions =
        (&complement * a_vectors.columns(rows, k - sigma_rank - rows)).into_owned();

    // Left factor of the endpoint SVD: U = A V3 S^-1.
    let mut endpoint_rotation = a * &endpoint_directions;
    for j in 0..rows {
        endpoint_rotation
            .column_mut(j)
            .scale_mut(1.0 / endpoint_singular_values[j]);
    }

    // Pin the data coordinates to the mean over references; report the spread.
    let data_count = data_directions.ncols();
    let mut pinned_data_coords = DVector::zeros(data_count);
    let mut data_coord_spread = 0.0f64;
    if data_count > 0 {
        let projected: Vec<DVector<f64>> = refs
            .vectors()
            .iter()
            .map(|v| data_directions.transpose() * v.values())
            .collect();
        for p in &projected {
            pinned_data_coords += p;
        }
        pinned_data_coords /= refs.len() as f64;
        for p in &projected {
            let diff = p - &pinned_data_coords;
            data_coord_spread = data_coord_spread.max(diff.amax());
        }
    }

    let rotated_rhs = endpoint_rotation.transpose() * system.rhs();
    let pinned_endpoint_coords =
        DVector::from_fn(rows, |i, _| rotated_rhs[i] / endpoint_singular_values[i]);

    Ok(SubspaceDecomposition {
        free_directions,
        data_directions,
        endpoint_directions,
        covariance_eigenvalues,
        endpoint_singular_values,
        endpoint_rotation,
        pinned_data_coords,
        pinned_endpoint_coords,
        data_coord_spread,
    })
}

/// Moore-Penrose pseudoinverse of a symmetric matrix: eigenvalues whose
/// magnitude falls below `rank_rtol * max |eigenvalue|` are zeroed.
pub fn pseudoinverse(matrix: &DMatrix<f64>, rank_rtol: f64) -> Result<DMatrix<f64>, RefStatsError> {
    let defect = symmetry_defect(matrix);
    if defect > 1e-10 * (1.0 + max_abs(matrix)) {
        return Err(RefStatsError::NotSymmetric(defect));
    }
    let (values, vectors) = symmetric_eigen_desc(&symmetrize(matrix));
    let largest = values.iter().fold(0.0f64, |acc, &l| acc.max(l.abs()));
    let threshold = (rank_rtol * largest).max(1e-300);
    let inverted = DVector::from_fn(values.len(), |i, _| {
        if values[i].abs() > threshold {
            1.0 / values[i]
        } else {
            0.0
        }
    });
    Ok(&vectors * DMatrix::from_diagonal(&inverted) * vectors.transpose())
}
