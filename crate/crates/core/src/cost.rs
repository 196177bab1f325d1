//! Instantaneous cost models and their lifting to explicit quadratic forms on
//! coefficient space.
//!
//! For a quadratic instantaneous cost `f(x) = x^T Q x + w^T x + r`, the
//! integrated cost of a projected trajectory is itself quadratic in the
//! coefficient vector. Because every dimension shares one orthonormal family,
//! the cross integrals collapse: `integral of phi_i phi_j` is a Kronecker
//! delta on the within-block indices and `integral of phi_i` is `sqrt(T)` for
//! the constant function and zero otherwise. Force-field costs
//! `alpha |y'|^2 - V(y)^T y'` with an affine field get the same treatment
//! through the derivative Gram matrices. [`eval_cost_quadrature`] is the
//! independent oracle: it reconstructs the trajectory at quadrature nodes and
//! integrates the instantaneous model directly, never touching the assembled
//! forms.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::basis::{BasisError, BasisSpec, QuadratureRule};
use crate::linalg::{symmetrize, symmetry_defect};
use crate::refstats::SubspaceDecomposition;
use crate::trajectory::CoefficientVector;

#[derive(Error, Debug)]
pub enum CostError {
    #[error("quadratic matrix must be symmetric (defect {0:.3e})")]
    NotSymmetric(f64),

    #[error("cost is defined on {cost_dims} dimensions but the basis has {basis_dims}")]
    DimensionMismatch {
        cost_dims: usize,
        basis_dims: usize,
    },

    #[error("matrix must be square with side {expected}, got {rows}x{cols}")]
    NotSquare {
        rows: usize,
        cols: usize,
        expected: usize,
    },

    #[error("trade-off weight alpha must be non-negative, got {0}")]
    NegativeAlpha(f64),

    #[error("entries must be finite")]
    NonFinite,

    #[error("coefficient count {got} does not match the assembled cost size {expected}")]
    CoefficientLength { got: usize, expected: usize },

    #[error("nothing to optimize: the free subspace is empty")]
    DegenerateReduction,

    #[error("decomposition is over {decomposition} coefficients, cost over {cost}")]
    ReductionMismatch { decomposition: usize, cost: usize },

    #[error("need at least {needed} samples to fit {features} features, got {got}")]
    TooFewSamples {
        needed: usize,
        features: usize,
        got: usize,
    },

    #[error("design matrix is rank deficient (rank {rank} of {features}): collinear features")]
    Collinear { rank: usize, features: usize },

    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Instantaneous quadratic cost `f(x) = x^T Q x + w^T x + r`.
#[derive(Clone, Debug)]
pub struct QuadraticInstantaneousCost {
    quadratic: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
}

impl QuadraticInstantaneousCost {
    pub fn new(quadratic: DMatrix<f64>, linear: DVector<f64>, constant: f64) -> Result<Self, CostError> {
        let d = linear.len();
        if quadratic.nrows() != d || quadratic.ncols() != d {
            return Err(CostError::NotSquare {
                rows: quadratic.nrows(),
                cols: quadratic.ncols(),
                expected: d,
            });
        }
        let defect = symmetry_defect(&quadratic);
        if defect > 1e-12 * (1.0 + quadratic.amax()) {
            return Err(CostError::NotSymmetric(defect));
        }
        if quadratic.iter().chain(linear.iter()).any(|x| !x.is_finite()) || !constant.is_finite() {
            return Err(CostError::NonFinite);
        }
        Ok(Self {
            quadratic: symmetrize(&quadratic),
            linear,
            constant,
        })
    }

    /// Constant cost `f(x) = r`.
    pub fn constant(dims: usize, r: f64) -> Self {
        Self {
            quadratic: DMatrix::zeros(dims, dims),
            linear: DVector::zeros(dims),
            constant: r,
        }
    }

    pub fn quadratic(&self) -> &DMatrix<f64> {
        &self.quadratic
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn constant_term(&self) -> f64 {
        self.constant
    }

    pub fn dim_count(&self) -> usize {
        self.linear.len()
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.quadratic * x)[0] + self.linear.dot(x) + self.constant
    }
}

/// Affine force field `V(x) = M x + b` with the kinetic trade-off weight
/// `alpha`, defining the running cost `alpha |y'|^2 - V(y)^T y'`.
#[derive(Clone, Debug)]
pub struct ForceFieldSpec {
    linear: DMatrix<f64>,
    offset: DVector<f64>,
    alpha: f64,
}

impl ForceFieldSpec {
    pub fn new(linear: DMatrix<f64>, offset: DVector<f64>, alpha: f64) -> Result<Self, CostError> {
        let d = offset.len();
        if linear.nrows() != d || linear.ncols() != d {
            return Err(CostError::NotSquare {
                rows: linear.nrows(),
                cols: linear.ncols(),
                expected: d,
            });
        }
        if linear.iter().chain(offset.iter()).any(|x| !x.is_finite()) || !alpha.is_finite() {
            return Err(CostError::NonFinite);
        }
        if alpha < 0.0 {
            return Err(CostError::NegativeAlpha(alpha));
        }
        Ok(Self {
            linear,
            offset,
            alpha,
        })
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self, CostError> {
        Self::new(self.linear.clone(), self.offset.clone(), alpha)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn linear(&self) -> &DMatrix<f64> {
        &self.linear
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn dim_count(&self) -> usize {
        self.offset.len()
    }

    /// Field value at a state.
    pub fn field(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.linear * x + &self.offset
    }
}

/// An instantaneous running cost evaluated from state and state derivative.
/// Implementations drive the quadrature oracle.
pub trait InstantaneousModel {
    fn state_dim(&self) -> usize;
    fn integrand(&self, value: &DVector<f64>, derivative: &DVector<f64>) -> f64;
}

impl InstantaneousModel for QuadraticInstantaneousCost {
    fn state_dim(&self) -> usize {
        self.dim_count()
    }

    fn integrand(&self, value: &DVector<f64>, _derivative: &DVector<f64>) -> f64 {
        self.eval(value)
    }
}

impl InstantaneousModel for ForceFieldSpec {
    fn state_dim(&self) -> usize {
        self.dim_count()
    }

    fn integrand(&self, value: &DVector<f64>, derivative: &DVector<f64>) -> f64 {
        self.alpha * derivative.norm_squared() - self.field(value).dot(derivative)
    }
}

/// The integrated cost as an explicit quadratic form on coefficient space:
/// `F(c) = c^T Q c + w^T c + constant`.
#[derive(Clone, Debug)]
pub struct AssembledQuadraticCost {
    quadratic: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
}

impl AssembledQuadraticCost {
    pub fn quadratic(&self) -> &DMatrix<f64> {
        &self.quadratic
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn constant_term(&self) -> f64 {
        self.constant
    }

    pub fn len(&self) -> usize {
        self.linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linear.len() == 0
    }

    pub fn eval(&self, coefficients: &DVector<f64>) -> f64 {
        (coefficients.transpose() * &self.quadratic * coefficients)[0]
            + self.linear.dot(coefficients)
            + self.constant
    }

    /// Gradient `2 Q c + w`.
    pub fn gradient(&self, coefficients: &DVector<f64>) -> DVector<f64> {
        &self.quadratic * coefficients * 2.0 + &self.linear
    }
}

/// Lift a quadratic instantaneous cost to coefficient space.
///
/// Within-block orthonormality collapses the Gram integrals: block `(d, e)`
/// of the quadratic part carries `Q[d, e]` on its diagonal, and the linear
/// part is `w_d sqrt(T)` on the first coefficient of each block.
pub fn assemble_quadratic(
    cost: &QuadraticInstantaneousCost,
    spec: &BasisSpec,
) -> Result<AssembledQuadraticCost, CostError> {
    let dims = spec.dim_count();
    if cost.dim_count() != dims {
        return Err(CostError::DimensionMismatch {
            cost_dims: cost.dim_count(),
            basis_dims: dims,
        });
    }
    let total = spec.total_len();
    let duration = spec.duration();
    let mut quadratic = DMatrix::zeros(total, total);
    for d in 0..dims {
        let row_range = spec.block_range(d);
        for e in 0..dims {
            let col_range = spec.block_range(e);
            let q = cost.quadratic()[(d, e)];
            if q == 0.0 {
                continue;
            }
            let shared = row_range.len().min(col_range.len());
            for i in 0..shared {
                quadratic[(row_range.start + i, col_range.start + i)] += q;
            }
        }
    }
    let mut linear = DVector::zeros(total);
    for d in 0..dims {
        linear[spec.block_range(d).start] = cost.linear()[d] * duration.sqrt();
    }
    Ok(AssembledQuadraticCost {
        quadratic,
        linear,
        constant: cost.constant_term() * duration,
    })
}

/// Lift a force-field cost to coefficient space through the derivative Gram
/// matrices; the work term's non-symmetric block matrix is symmetrized since
/// only its symmetric part matters in `c^T B c`.
pub fn assemble_forcefield(
    field: &ForceFieldSpec,
    spec: &BasisSpec,
) -> Result<AssembledQuadraticCost, CostError> {
    let dims = spec.dim_count();
    if field.dim_count() != dims {
        return Err(CostError::DimensionMismatch {
            cost_dims: field.dim_count(),
            basis_dims: dims,
        });
    }
    let total = spec.total_len();
    let gram = spec.gram_matrices();
    // value-derivative integrals: (k, l) entry is integral of phi_k phi_l'
    let value_deriv = gram.cross.transpose();

    let mut quadratic = DMatrix::zeros(total, total);
    // kinetic part: alpha * sum_d c_d^T E c_d
    if field.alpha() != 0.0 {
        for d in 0..dims {
            let range = spec.block_range(d);
            for i in 0..range.len() {
                for j in 0..range.len() {
                    quadratic[(range.start + i, range.start + j)] +=
                        field.alpha() * gram.derivative[(i, j)];
                }
            }
        }
    }
    // work part, quadratic in c: sum over field rows d and state columns e of
    // M[d, e] * y_e y_d' contributes -M[d, e] * c_e^T (value_deriv) c_d
    let mut work = DMatrix::zeros(total, total);
    for d in 0..dims {
        let deriv_range = spec.block_range(d);
        for e in 0..dims {
            let m = field.linear()[(d, e)];
            if m == 0.0 {
                continue;
            }
            let value_range = spec.block_range(e);
            for i in 0..value_range.len() {
                for j in 0..deriv_range.len() {
                    work[(value_range.start + i, deriv_range.start + j)] +=
                        m * value_deriv[(i, j)];
                }
            }
        }
    }
    quadratic -= symmetrize(&work);

    // work part, linear in c: b_d * integral of phi_l' on block d
    let rule = spec.default_quadrature();
    let deriv_integrals = integral_of_derivatives(spec, &rule);
    let mut linear = DVector::zeros(total);
    for d in 0..dims {
        let b = field.offset()[d];
        if b == 0.0 {
            continue;
        }
        let range = spec.block_range(d);
        for (l, idx) in range.enumerate() {
            linear[idx] = -b * deriv_integrals[l];
        }
    }

    Ok(AssembledQuadraticCost {
        quadratic,
        linear,
        constant: 0.0,
    })
}

fn integral_of_derivatives(spec: &BasisSpec, rule: &QuadratureRule) -> DVector<f64> {
    let k_max = spec.max_order();
    let mut out = DVector::zeros(k_max);
    for (&t, &w) in rule.nodes().iter().zip(rule.weights()) {
        let dphi = spec.eval_derivative(t).expect("node inside interval");
        for k in 0..k_max {
            out[k] += w * dphi[k];
        }
    }
    out
}

/// Independent quadrature oracle: reconstruct the trajectory (and derivative)
/// at the nodes of an `n`-point Gauss rule and integrate the instantaneous
/// model directly.
pub fn eval_cost_quadrature<M: InstantaneousModel>(
    model: &M,
    coefficients: &CoefficientVector,
    n_nodes: usize,
) -> Result<f64, CostError> {
    let spec = coefficients.spec();
    if model.state_dim() != spec.dim_count() {
        return Err(CostError::DimensionMismatch {
            cost_dims: model.state_dim(),
            basis_dims: spec.dim_count(),
        });
    }
    let rule = QuadratureRule::gauss_legendre(n_nodes, spec.duration())?;
    let mut total = 0.0;
    for (&t, &w) in rule.nodes().iter().zip(rule.weights()) {
        let value = coefficients
            .evaluate_at(t)
            .expect("quadrature node inside the interval");
        let derivative = coefficients
            .evaluate_derivative_at(t)
            .expect("quadrature node inside the interval");
        total += w * model.integrand(&value, &derivative);
    }
    Ok(total)
}

/// The cost restricted to the free subspace:
/// `F(z) = z^T Q z + w^T z + constant` for `z` the free coordinates.
#[derive(Clone, Debug)]
pub struct ReducedQuadraticCost {
    quadratic: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
}

impl ReducedQuadraticCost {
    pub fn new(quadratic: DMatrix<f64>, linear: DVector<f64>, constant: f64) -> Self {
        Self {
            quadratic: symmetrize(&quadratic),
            linear,
            constant,
        }
    }

    pub fn quadratic(&self) -> &DMatrix<f64> {
        &self.quadratic
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn constant_term(&self) -> f64 {
        self.constant
    }

    pub fn len(&self) -> usize {
        self.linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linear.len() == 0
    }

    pub fn eval(&self, free: &DVector<f64>) -> f64 {
        (free.transpose() * &self.quadratic * free)[0] + self.linear.dot(free) + self.constant
    }
}

/// Restrict an assembled cost to the free subspace of a decomposition. The
/// pinned coordinates fold into the linear and constant terms.
pub fn reduce_cost(
    assembled: &AssembledQuadraticCost,
    decomposition: &SubspaceDecomposition,
) -> Result<ReducedQuadraticCost, CostError> {
    let k = decomposition.total_len();
    if assembled.len() != k {
        return Err(CostError::ReductionMismatch {
            decomposition: k,
            cost: assembled.len(),
        });
    }
    let sigma = decomposition.free_rank();
    if sigma == 0 {
        return Err(CostError::DegenerateReduction);
    }
    let basis = decomposition.full_basis();
    let rotated_q = basis.transpose() * assembled.quadratic() * &basis;
    let rotated_w = basis.transpose() * assembled.linear();
    let tail = decomposition.pinned_tail();
    let q_free = rotated_q.view((0, 0), (sigma, sigma)).into_owned();
    let q_cross = rotated_q.view((0, sigma), (sigma, k - sigma)).into_owned();
    let q_tail = rotated_q.view((sigma, sigma), (k - sigma, k - sigma)).into_owned();
    let w_free = rotated_w.rows(0, sigma).into_owned();
    let w_tail = rotated_w.rows(sigma, k - sigma).into_owned();

    let linear = &q_cross * &tail * 2.0 + w_free;
    let constant = (tail.transpose() * &q_tail * &tail)[0]
        + w_tail.dot(&tail)
        + assembled.constant_term();
    Ok(ReducedQuadraticCost::new(q_free, linear, constant))
}

/// Diagnostics of a least-squares quadratic fit.
#[derive(Clone, Copy, Debug)]
pub struct FitDiagnostics {
    /// Residual standard deviation with denominator `n - p`.
    pub residual_std: f64,
    pub rmse: f64,
    /// Mean absolute percentage error over nonzero targets.
    pub mape: f64,
}

/// Least-squares fit of a degree-2 polynomial over the monomials
/// `{1, x_d, x_d x_e}` in raw units.
pub fn fit_quadratic_cost(
    states: &DMatrix<f64>,
    costs: &DVector<f64>,
) -> Result<(QuadraticInstantaneousCost, FitDiagnostics), CostError> {
    let n = states.nrows();
    let dims = states.ncols();
    let features = 1 + dims + dims * (dims + 1) / 2;
    if n < features || costs.len() != n {
        return Err(CostError::TooFewSamples {
            needed: features,
            features,
            got: n.min(costs.len()),
        });
    }
    let mut design = DMatrix::zeros(n, features);
    for row in 0..n {
        let mut col = 0;
        design[(row, col)] = 1.0;
        col += 1;
        for d in 0..dims {
            design[(row, col)] = states[(row, d)];
            col += 1;
        }
        for d in 0..dims {
            for e in d..dims {
                design[(row, col)] = states[(row, d)] * states[(row, e)];
                col += 1;
            }
        }
    }
    // Equilibrate the columns so the rank test is scale-invariant; the model
    // itself stays in raw units.
    let mut column_scales = DVector::zeros(features);
    for j in 0..features {
        let norm = design.column(j).norm();
        if norm == 0.0 {
            return Err(CostError::Collinear {
                rank: j,
                features,
            });
        }
        column_scales[j] = norm;
        design.column_mut(j).scale_mut(1.0 / norm);
    }
    let svd = design.clone().svd(true, true);
    let rank = svd.rank(1e-10 * svd.singular_values[0].max(1.0));
    if rank < features {
        return Err(CostError::Collinear { rank, features });
    }
    let mut beta = svd.solve(costs, 1e-12).expect("svd computed with factors");
    for j in 0..features {
        beta[j] /= column_scales[j];
    }
    // Residuals against the equilibrated design need the scaled coefficients.
    let scaled_beta = DVector::from_fn(features, |j, _| beta[j] * column_scales[j]);

    let residuals = &design * &scaled_beta - costs;
    let rss = residuals.norm_squared();
    let residual_std = (rss / (n - features) as f64).sqrt();
    let rmse = (rss / n as f64).sqrt();
    let mut mape_sum = 0.0;
    let mut mape_count = 0usize;
    for i in 0..n {
        if costs[i].abs() > f64::EPSILON {
            mape_sum += (residuals[i] / costs[i]).abs();
            mape_count += 1;
        }
    }
    let mape = if mape_count > 0 {
        100.0 * mape_sum / mape_count as f64
    } else {
        0.0
    };

    let constant = beta[0];
    let linear = DVector::from_fn(dims, |d, _| beta[1 + d]);
    let mut quadratic = DMatrix::zeros(dims, dims);
    let mut col = 1 + dims;
    for d in 0..dims {
        for e in d..dims {
            if d == e {
                quadratic[(d, d)] = beta[col];
            } else {
                quadratic[(d, e)] = beta[col] / 2.0;
                quadratic[(e, d)] = beta[col] / 2.0;
            }
            col += 1;
        }
    }
    let cost = QuadraticInstantaneousCost::new(quadratic, linear, constant)?;
    Ok((
        cost,
        FitDiagnostics {
            residual_std,
            rmse,
            mape,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisKind;
    use crate::refstats::{decompose, CovarianceModel, ReferenceSet, DEFAULT_RANK_RTOL};
    use crate::trajectory::EndpointSystem;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn legendre(dims: &[usize], duration: f64) -> BasisSpec {
        BasisSpec::new(BasisKind::Legendre, dims.to_vec(), duration).unwrap()
    }

    fn coeffs(values: Vec<f64>, spec: &BasisSpec) -> CoefficientVector {
        CoefficientVector::new(DVector::from_vec(values), spec.clone()).unwrap()
    }

    #[test]
    fn squared_state_assembles_to_identity() {
        let spec = legendre(&[3], 1.0);
        let cost = QuadraticInstantaneousCost::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            0.0,
        )
        .unwrap();
        let assembled = assemble_quadratic(&cost, &spec).unwrap();
        assert_relative_eq!(*assembled.quadratic(), DMatrix::identity(3, 3), epsilon = 1e-14);
        assert!(assembled.linear().amax() < 1e-14);
        assert_relative_eq!(assembled.constant_term(), 0.0);
    }

    #[test]
    fn constant_cost_integrates_to_r_times_duration() {
        let spec = legendre(&[4, 2], 7.0);
        let cost = QuadraticInstantaneousCost::constant(2, 3.5);
        let assembled = assemble_quadratic(&cost, &spec).unwrap();
        assert!(assembled.quadratic().amax() < 1e-14);
        assert!(assembled.linear().amax() < 1e-14);
        assert_relative_eq!(assembled.constant_term(), 24.5, epsilon = 1e-12);
    }

    #[test]
    fn linear_cost_hits_first_coefficient() {
        let spec = legendre(&[2], 1.0);
        let cost = QuadraticInstantaneousCost::new(
            DMatrix::zeros(1, 1),
            DVector::from_vec(vec![1.0]),
            0.0,
        )
        .unwrap();
        let assembled = assemble_quadratic(&cost, &spec).unwrap();
        assert_relative_eq!(assembled.linear()[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(assembled.linear()[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn assembly_rejects_dimension_mismatch() {
        let spec = legendre(&[2, 2], 1.0);
        let cost = QuadraticInstantaneousCost::constant(3, 1.0);
        assert!(matches!(
            assemble_quadratic(&cost, &spec),
            Err(CostError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pure_kinetic_field_gives_derivative_gram() {
        let spec = legendre(&[2], 1.0);
        let field = ForceFieldSpec::new(DMatrix::zeros(1, 1), DVector::zeros(1), 1.0).unwrap();
        let assembled = assemble_forcefield(&field, &spec).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 12.0]);
        assert_relative_eq!(*assembled.quadratic(), expect, epsilon = 1e-10);
    }

    #[test]
    fn constant_field_work_is_endpoint_difference() {
        // alpha = 0, V = b: F(c) = -b (y(T) - y(0)) by the fundamental theorem
        let spec = legendre(&[3], 2.0);
        let b = 1.7;
        let field =
            ForceFieldSpec::new(DMatrix::zeros(1, 1), DVector::from_vec(vec![b]), 0.0).unwrap();
        let assembled = assemble_forcefield(&field, &spec).unwrap();
        let c = coeffs(vec![0.4, -0.8, 0.3], &spec);
        let y0 = c.evaluate_at(0.0).unwrap()[0];
        let y_end = c.evaluate_at(2.0).unwrap()[0];
        assert_relative_eq!(assembled.eval(c.values()), -b * (y_end - y0), epsilon = 1e-10);
        let oracle = eval_cost_quadrature(&field, &c, 8).unwrap();
        assert_relative_eq!(assembled.eval(c.values()), oracle, epsilon = 1e-10);
    }

    #[test]
    fn curl_field_matches_quadrature_oracle() {
        // V(x1, x2) = (0, x1), alpha = 0: F = -integral of y1 y2'
        let spec = legendre(&[4, 6], 1.0);
        let field = ForceFieldSpec::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            DVector::zeros(2),
            0.0,
        )
        .unwrap();
        let assembled = assemble_forcefield(&field, &spec).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let values: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c = coeffs(values, &spec);
            let direct = assembled.eval(c.values());
            let oracle = eval_cost_quadrature(&field, &c, 12).unwrap();
            assert_relative_eq!(direct, oracle, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn negative_alpha_rejected() {
        assert!(matches!(
            ForceFieldSpec::new(DMatrix::zeros(1, 1), DVector::zeros(1), -0.1),
            Err(CostError::NegativeAlpha(_))
        ));
    }

    #[test]
    fn oracle_on_constant_cost_is_exact() {
        let spec = legendre(&[3], 5.0);
        let cost = QuadraticInstantaneousCost::constant(1, 2.0);
        let c = coeffs(vec![1.0, 2.0, 3.0], &spec);
        assert_relative_eq!(eval_cost_quadrature(&cost, &c, 6).unwrap(), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn random_quadratics_match_oracle() {
        let mut rng = StdRng::seed_from_u64(42);
        for trial in 0..40 {
            let duration = if trial % 2 == 0 { 1.0 } else { 50.0 };
            let dims = rng.random_range(1..=3usize);
            let orders: Vec<usize> = (0..dims).map(|_| rng.random_range(1..=8)).collect();
            let spec = legendre(&orders, duration);
            let mut q = DMatrix::from_fn(dims, dims, |_, _| rng.random_range(-1.0..1.0));
            q = symmetrize(&q);
            let w = DVector::from_fn(dims, |_, _| rng.random_range(-1.0..1.0));
            let r = rng.random_range(-1.0..1.0);
            let cost = QuadraticInstantaneousCost::new(q, w, r).unwrap();
            let values: Vec<f64> = (0..spec.total_len())
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            let c = coeffs(values, &spec);
            let assembled = assemble_quadratic(&cost, &spec).unwrap();
            let direct = assembled.eval(c.values());
            let oracle = eval_cost_quadrature(&cost, &c, spec.max_order() + 2).unwrap();
            assert!(
                (direct - oracle).abs() <= 1e-9 * (1.0 + direct.abs()),
                "trial {trial}: {direct} vs {oracle}"
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences_of_oracle() {
        let spec = legendre(&[3, 2], 2.0);
        let cost = QuadraticInstantaneousCost::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]),
            DVector::from_vec(vec![0.2, -0.4]),
            0.7,
        )
        .unwrap();
        let assembled = assemble_quadratic(&cost, &spec).unwrap();
        let base = vec![0.5, -0.2, 0.8, 1.1, -0.6];
        let c = coeffs(base.clone(), &spec);
        let grad = assembled.gradient(c.values());
        let h = 1e-6;
        for k in 0..base.len() {
            let mut up = base.clone();
            up[k] += h;
            let mut down = base.clone();
            down[k] -= h;
            let f_up = eval_cost_quadrature(&cost, &coeffs(up, &spec), 8).unwrap();
            let f_down = eval_cost_quadrature(&cost, &coeffs(down, &spec), 8).unwrap();
            let fd = (f_up - f_down) / (2.0 * h);
            assert!(
                (grad[k] - fd).abs() <= 1e-5 * (1.0 + grad[k].abs()),
                "component {k}: {} vs {fd}",
                grad[k]
            );
        }
    }

    fn tiny_decomposition() -> (SubspaceDecomposition, BasisSpec) {
        let spec = legendre(&[2], 1.0);
        let system = EndpointSystem::new(
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DVector::from_vec(vec![3.0]),
        )
        .unwrap();
        let cov = CovarianceModel::from_matrix(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            DEFAULT_RANK_RTOL,
        )
        .unwrap();
        let refs = ReferenceSet::with_uniform_weights(
            vec![
                coeffs(vec![0.5, 3.0], &spec),
                coeffs(vec![-0.5, 3.0], &spec),
            ],
            None,
        )
        .unwrap();
        (
            decompose(&cov, &system, &refs, DEFAULT_RANK_RTOL).unwrap(),
            spec,
        )
    }

    #[test]
    fn reduction_folds_pinned_coordinates() {
        let (dec, spec) = tiny_decomposition();
        let cost = QuadraticInstantaneousCost::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_vec(vec![0.5]),
            0.25,
        )
        .unwrap();
        let assembled = assemble_quadratic(&cost, &spec).unwrap();
        let reduced = reduce_cost(&assembled, &dec).unwrap();
        assert_eq!(reduced.len(), 1);
        for z in [-1.0, 0.0, 0.4, 2.0] {
            let free = DVector::from_vec(vec![z]);
            let full = dec.lift(&free);
            assert_relative_eq!(reduced.eval(&free), assembled.eval(&full), epsilon = 1e-10);
        }
    }

    #[test]
    fn reduction_with_zero_cost_keeps_constant() {
        let (dec, _spec) = tiny_decomposition();
        let assembled = AssembledQuadraticCost {
            quadratic: DMatrix::zeros(2, 2),
            linear: DVector::zeros(2),
            constant: 4.2,
        };
        let reduced = reduce_cost(&assembled, &dec).unwrap();
        assert!(reduced.quadratic().amax() < 1e-14);
        assert!(reduced.linear().amax() < 1e-14);
        assert_relative_eq!(reduced.constant_term(), 4.2);
    }

    #[test]
    fn exact_quadratic_recovery_without_noise() {
        let mut rng = StdRng::seed_from_u64(5);
        let n = 60;
        let dims = 2;
        let truth = QuadraticInstantaneousCost::new(
            DMatrix::from_row_slice(2, 2, &[0.8, -0.2, -0.2, 1.4]),
            DVector::from_vec(vec![0.5, -1.0]),
            2.0,
        )
        .unwrap();
        let states = DMatrix::from_fn(n, dims, |_, _| rng.random_range(-2.0..2.0));
        let costs = DVector::from_fn(n, |i, _| {
            truth.eval(&states.row(i).transpose().into_owned())
        });
        let (fitted, diag) = fit_quadratic_cost(&states, &costs).unwrap();
        assert!(diag.rmse < 1e-8);
        assert_relative_eq!(*fitted.quadratic(), *truth.quadratic(), epsilon = 1e-8);
        assert_relative_eq!(*fitted.linear(), *truth.linear(), epsilon = 1e-8);
        assert_relative_eq!(fitted.constant_term(), truth.constant_term(), epsilon = 1e-8);
    }

    #[test]
    fn residual_std_recovers_noise_level() {
        let mut rng = StdRng::seed_from_u64(11);
        let n = 10_000;
        let truth = QuadraticInstantaneousCost::new(
            DMatrix::from_element(1, 1, 0.5),
            DVector::from_vec(vec![1.0]),
            3.0,
        )
        .unwrap();
        let states = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-3.0..3.0));
        let normal = rand_distr::Normal::new(0.0, 0.1).unwrap();
        let costs = DVector::from_fn(n, |i, _| {
            truth.eval(&states.row(i).transpose().into_owned()) + rng.sample(normal)
        });
        let (_, diag) = fit_quadratic_cost(&states, &costs).unwrap();
        assert!(
            diag.residual_std > 0.09 && diag.residual_std < 0.11,
            "residual std {}",
            diag.residual_std
        );
    }

    #[test]
    fn collinear_design_is_rejected() {
        let n = 30;
        // second column is a copy of the first
        let states = DMatrix::from_fn(n, 2, |i, _| i as f64 / n as f64);
        let costs = DVector::from_fn(n, |i, _| i as f64);
        assert!(matches!(
            fit_quadratic_cost(&states, &costs),
            Err(CostError::Collinear { .. })
        ));
    }
}
