//! The regularized trajectory program and its solvers.
//!
//! The objective over the free coordinates `z` is
//! `nu * F(z) + sum_i w_i (z - z_Ri)^T diag(1/lambda) (z - z_Ri)`: the reduced
//! cost weighted by `nu` plus the Mahalanobis penalty to the reference
//! coordinates. `nu = 0` reproduces the weighted reference mean; large `nu`
//! optimizes aggressively and may leave the admissible region, which is what
//! [`tune_nu`] trades off by bisection.
//!
//! Solvers: a closed-form solve when the quadratic form is positive definite,
//! a primal active-set iteration when linear inequalities are present, and a
//! trust-region descent fallback when positive definiteness fails. An
//! indefinite objective without inequalities is unbounded below and reported
//! as such.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::cost::ReducedQuadraticCost;
use crate::linalg::{is_positive_definite, solve_spd, symmetric_eigen_desc, symmetrize};
use crate::refstats::{ReferenceSet, SubspaceDecomposition};
use crate::trajectory::{CoefficientVector, EndpointSystem, TrajectoryError};

/// Pivot tolerance of the positive-definiteness factorization, relative to
/// `trace / n`.
const PD_PIVOT_RTOL: f64 = 1e-12;

/// KKT residual demanded from the active-set iteration.
const KKT_TOL: f64 = 1e-9;

/// Gradient norm that counts as stationary for the local fallback.
const STATIONARY_TOL: f64 = 1e-8;

#[derive(Error, Debug)]
pub enum OptimizerError {
    #[error("nothing to optimize: the free subspace is empty")]
    DegenerateProblem,

    #[error("cost weight nu must be non-negative and finite, got {0}")]
    InvalidNu(f64),

    #[error("nu_max must be positive and finite, got {0}")]
    InvalidNuMax(f64),

    #[error("problem dimensions disagree: {0}")]
    DimensionMismatch(String),

    #[error("objective is unbounded below at nu = {nu}")]
    Unbounded { nu: f64 },

    #[error("active-set iteration exceeded {0} iterations")]
    IterationLimit(usize),

    #[error("active constraints became linearly dependent")]
    DegenerateActiveSet,

    #[error("local path needs a feasible starting point")]
    InfeasibleStart,

    #[error("even the weighted reference mean (nu = 0) violates the constraints")]
    NoAdmissibleSolution,

    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Linear inequalities `matrix * z <= upper` on the free coordinates.
#[derive(Clone, Debug)]
pub struct LinearInequalities {
    matrix: DMatrix<f64>,
    upper: DVector<f64>,
}

impl LinearInequalities {
    pub fn new(matrix: DMatrix<f64>, upper: DVector<f64>) -> Result<Self, OptimizerError> {
        if matrix.nrows() != upper.len() {
            return Err(OptimizerError::DimensionMismatch(format!(
                "{} inequality rows vs {} bounds",
                matrix.nrows(),
                upper.len()
            )));
        }
        Ok(Self { matrix, upper })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.len() == 0
    }
}

/// The penalized program over the free subspace, ready to solve.
#[derive(Clone, Debug)]
pub struct MapProblem {
    reduced_cost: ReducedQuadraticCost,
    reference_coords: Vec<DVector<f64>>,
    weights: Vec<f64>,
    covariance_eigenvalues: DVector<f64>,
    decomposition: SubspaceDecomposition,
    spec: crate::basis::BasisSpec,
    nu: f64,
    inequalities: Option<LinearInequalities>,
}

impl MapProblem {
    pub fn free_len(&self) -> usize {
        self.covariance_eigenvalues.len()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// The same problem at a different cost weight.
    pub fn with_nu(&self, nu: f64) -> Result<Self, OptimizerError> {
        if nu < 0.0 || !nu.is_finite() {
            return Err(OptimizerError::InvalidNu(nu));
        }
        let mut out = self.clone();
        out.nu = nu;
        Ok(out)
    }

    /// Replace the inequality set (used for synthetic problems and tests).
    pub fn with_inequalities(mut self, inequalities: Option<LinearInequalities>) -> Self {
        self.inequalities = inequalities;
        self
    }

    pub fn inequalities(&self) -> Option<&LinearInequalities> {
        self.inequalities.as_ref()
    }

    pub fn reduced_cost(&self) -> &ReducedQuadraticCost {
        &self.reduced_cost
    }

    pub fn decomposition(&self) -> &SubspaceDecomposition {
        &self.decomposition
    }

    /// Weighted mean of the reference free coordinates (the `nu = 0`
    /// solution).
    pub fn weighted_reference_mean(&self) -> DVector<f64> {
        let mut mean = DVector::zeros(self.free_len());
        for (coords, &w) in self.reference_coords.iter().zip(&self.weights) {
            mean += coords * w;
        }
        mean
    }

    /// Mahalanobis penalty at free coordinates `z`.
    pub fn penalty(&self, z: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for (coords, &w) in self.reference_coords.iter().zip(&self.weights) {
            for i in 0..z.len() {
                let diff = z[i] - coords[i];
                total += w * diff * diff / self.covariance_eigenvalues[i];
            }
        }
        total
    }

    /// Full objective `nu * cost + penalty` at free coordinates `z`.
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        self.nu * self.reduced_cost.eval(z) + self.penalty(z)
    }

    /// Matrix of the objective's quadratic form: `nu * Q + diag(1/lambda)`.
    pub fn objective_matrix(&self) -> DMatrix<f64> {
        let n = self.free_len();
        let mut matrix = self.reduced_cost.quadratic() * self.nu;
        for i in 0..n {
            matrix[(i, i)] += 1.0 / self.covariance_eigenvalues[i];
        }
        symmetrize(&matrix)
    }

    /// Linear term of the objective.
    pub fn objective_linear(&self) -> DVector<f64> {
        let mean = self.weighted_reference_mean();
        let mut linear = self.reduced_cost.linear() * self.nu;
        for i in 0..linear.len() {
            linear[i] -= 2.0 * mean[i] / self.covariance_eigenvalues[i];
        }
        linear
    }

    /// Constant term of the objective.
    pub fn objective_constant(&self) -> f64 {
        let mut constant = self.nu * self.reduced_cost.constant_term();
        for (coords, &w) in self.reference_coords.iter().zip(&self.weights) {
            for i in 0..coords.len() {
                constant += w * coords[i] * coords[i] / self.covariance_eigenvalues[i];
            }
        }
        constant
    }
}

/// Build the penalized program from the reduced cost, the decomposition and
/// the (selected, weighted) references. Positive endpoint tolerances are
/// lowered to a band of linear inequalities on the free coordinates;
/// numerically zero rows are dropped, so with a kernel-projected covariance
/// the band never binds and the solution meets the endpoints exactly.
pub fn build_map_problem(
    reduced_cost: &ReducedQuadraticCost,
    decomposition: &SubspaceDecomposition,
    refs: &ReferenceSet,
    nu: f64,
    endpoint_band: Option<(&EndpointSystem, &[f64])>,
) -> Result<MapProblem, OptimizerError> {
    if nu < 0.0 || !nu.is_finite() {
        return Err(OptimizerError::InvalidNu(nu));
    }
    let sigma = decomposition.free_rank();
    if sigma == 0 {
        return Err(OptimizerError::DegenerateProblem);
    }
    if reduced_cost.len() != sigma {
        return Err(OptimizerError::DimensionMismatch(format!(
            "reduced cost over {} coordinates, decomposition frees {}",
            reduced_cost.len(),
            sigma
        )));
    }
    if refs.coefficient_len() != decomposition.total_len() {
        return Err(OptimizerError::DimensionMismatch(format!(
            "references have {} coefficients, decomposition expects {}",
            refs.coefficient_len(),
            decomposition.total_len()
        )));
    }
    let reference_coords: Vec<DVector<f64>> = refs
        .vectors()
        .iter()
        .map(|v| decomposition.restrict(v.values()))
        .collect();

    let inequalities = match endpoint_band {
        Some((system, tolerance)) if tolerance.iter().any(|&t| t > 0.0) => {
            build_endpoint_band(system, tolerance, decomposition)?
        }
        _ => None,
    };

    Ok(MapProblem {
        reduced_cost: reduced_cost.clone(),
        reference_coords,
        weights: refs.weights().to_vec(),
        covariance_eigenvalues: decomposition.covariance_eigenvalues().clone(),
        decomposition: decomposition.clone(),
        spec: refs.spec().clone(),
        nu,
        inequalities,
    })
}

fn build_endpoint_band(
    system: &EndpointSystem,
    tolerance: &[f64],
    decomposition: &SubspaceDecomposition,
) -> Result<Option<LinearInequalities>, OptimizerError> {
    let rows = system.matrix().nrows();
    let dims = rows / 2;
    if tolerance.len() != dims {
        return Err(OptimizerError::DimensionMismatch(format!(
            "{} tolerances for {} endpoint dimensions",
            tolerance.len(),
            dims
        )));
    }
    let pinned = decomposition.lift(&DVector::zeros(decomposition.free_rank()));
    let offset = system.matrix() * &pinned;
    let band = system.matrix() * decomposition.free_directions();
    let scale = system
        .matrix()
        .iter()
        .fold(0.0f64, |acc, x| acc.max(x.abs()))
        .max(1.0);
    let mut kept_rows = Vec::new();
    let mut kept_upper = Vec::new();
    for r in 0..rows {
        let delta = tolerance[r % dims];
        let row = band.row(r);
        if row.iter().all(|x| x.abs() <= 1e-12 * scale) {
            continue;
        }
        let slack_up = system.rhs()[r] + delta - offset[r];
        let slack_down = offset[r] - (system.rhs()[r] - delta);
        kept_rows.push((row.into_owned(), slack_up, slack_down));
        kept_upper.push(());
    }
    if kept_rows.is_empty() {
        return Ok(None);
    }
    let sigma = decomposition.free_rank();
    let m = kept_rows.len();
    let mut matrix = DMatrix::zeros(2 * m, sigma);
    let mut upper = DVector::zeros(2 * m);
    for (i, (row, up, down)) in kept_rows.into_iter().enumerate() {
        for j in 0..sigma {
            matrix[(i, j)] = row[j];
            matrix[(m + i, j)] = -row[j];
        }
        upper[i] = up;
        upper[m + i] = down;
    }
    Ok(Some(LinearInequalities::new(matrix, upper)?))
}

/// Convexity certificate for the penalized quadratic objective at a given
/// penalty weight `kappa = 1 / nu`.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct WeylReport {
    /// Smallest eigenvalue of the reduced cost matrix.
    pub rho_sigma: f64,
    /// Largest covariance eigenvalue.
    pub lambda_max: f64,
    /// Smallest penalty weight certified convex: `max(0, -rho_sigma * lambda_max)`.
    pub kappa_min: f64,
    /// The weight the certificate was requested for.
    pub kappa: f64,
    /// Whether `kappa >= kappa_min`. Sufficient, not necessary.
    pub certified: bool,
}

impl WeylReport {
    /// Largest cost weight `nu = 1 / kappa` certified convex, if bounded.
    pub fn certified_nu_max(&self) -> Option<f64> {
        (self.kappa_min > 0.0).then(|| 1.0 / self.kappa_min)
    }
}

/// Eigenvalue bound for convexity: perturbing the reduced cost matrix by
/// `kappa * diag(1/lambda)` lifts its smallest eigenvalue by at least
/// `kappa / lambda_max`, so `kappa >= -rho_sigma * lambda_max` certifies a
/// positive semidefinite objective.
pub fn weyl_certificate(
    reduced_quadratic: &DMatrix<f64>,
    covariance_eigenvalues: &DVector<f64>,
    kappa: f64,
) -> WeylReport {
    let (values, _) = symmetric_eigen_desc(reduced_quadratic);
    let rho_sigma = values[values.len() - 1];
    let lambda_max = covariance_eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |acc, &l| acc.max(l));
    let kappa_min = (-rho_sigma * lambda_max).max(0.0);
    WeylReport {
        rho_sigma,
        lambda_max,
        kappa_min,
        kappa,
        certified: kappa >= kappa_min,
    }
}

/// How a solution was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum SolveMethod {
    ClosedForm,
    ActiveSet,
    TrustRegion,
}

/// Solver diagnostics attached to every solution.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SolveDiagnostics {
    pub method: SolveMethod,
    pub iterations: usize,
    pub active_set: Vec<usize>,
    /// KKT (or gradient) residual at the returned point.
    pub kkt_residual: f64,
    /// Set when the point is only a local stationary point.
    pub local: bool,
}

/// A solved program: the lifted coefficient vector, its free coordinates and
/// the objective split.
#[derive(Clone, Debug)]
pub struct Solution {
    pub coefficients: CoefficientVector,
    pub reduced: DVector<f64>,
    pub objective: f64,
    pub cost: f64,
    pub penalty: f64,
    pub diagnostics: SolveDiagnostics,
}

/// Rebuild the full coefficient vector from free coordinates.
pub fn lift_solution(reduced: &DVector<f64>, decomposition: &SubspaceDecomposition) -> DVector<f64> {
    decomposition.lift(reduced)
}

/// Solve the penalized program.
pub fn solve_reduced(problem: &MapProblem) -> Result<Solution, OptimizerError> {
    let quadratic = problem.objective_matrix();
    let linear = problem.objective_linear();
    let n = quadratic.nrows();
    let positive_definite = is_positive_definite(&quadratic, PD_PIVOT_RTOL);

    let (z, diagnostics) = if positive_definite {
        match problem.inequalities() {
            None => {
                let z = solve_spd(&quadratic, &(-&linear * 0.5))
                    .ok_or(OptimizerError::DegenerateActiveSet)?;
                let residual = (&quadratic * &z * 2.0 + &linear).amax();
                (
                    z,
                    SolveDiagnostics {
                        method: SolveMethod::ClosedForm,
                        iterations: 1,
                        active_set: Vec::new(),
                        kkt_residual: residual,
                        local: false,
                    },
                )
            }
            Some(inequalities) => active_set_solve(&quadratic, &linear, inequalities)?,
        }
    } else {
        trust_region_solve(problem, &quadratic, &linear)?
    };

    debug_assert_eq!(z.len(), n);
    finish_solution(problem, z, diagnostics)
}

fn finish_solution(
    problem: &MapProblem,
    z: DVector<f64>,
    diagnostics: SolveDiagnostics,
) -> Result<Solution, OptimizerError> {
    let cost = problem.reduced_cost.eval(&z);
    let penalty = problem.penalty(&z);
    let lifted = problem.decomposition.lift(&z);
    let coefficients = CoefficientVector::new(lifted, problem.spec.clone())?;
    Ok(Solution {
        coefficients,
        reduced: z,
        objective: problem.nu * cost + penalty,
        cost,
        penalty,
        diagnostics,
    })
}

/// Primal active-set iteration for a strictly convex quadratic with linear
/// inequalities, starting from the unconstrained minimizer: repeatedly add
/// the most violated constraint and drop constraints with negative
/// multipliers until the KKT conditions hold.
fn active_set_solve(
    quadratic: &DMatrix<f64>,
    linear: &DVector<f64>,
    inequalities: &LinearInequalities,
) -> Result<(DVector<f64>, SolveDiagnostics), OptimizerError> {
    let m = inequalities.len();
    let chol = nalgebra::Cholesky::new(quadratic.clone())
        .ok_or(OptimizerError::DegenerateActiveSet)?;
    let unconstrained = chol.solve(&(-linear * 0.5));
    let scale = 1.0 + inequalities.upper().amax();
    let feas_tol = KKT_TOL * scale;

    let mut active: Vec<usize> = Vec::new();
    let cap = 50 * (m + 1);
    for iteration in 0..cap {
        let (z, multipliers) = if active.is_empty() {
            (unconstrained.clone(), DVector::zeros(0))
        } else {
            // Equality-constrained solve on the active rows via the Schur
            // complement: z = -H^-1 (b + L^T mu) / 2 with S mu = rhs.
            let rows = active.len();
            let mut l_active = DMatrix::zeros(rows, unconstrained.len());
            let mut u_active = DVector::zeros(rows);
            for (i, &r) in active.iter().enumerate() {
                l_active.row_mut(i).copy_from(&inequalities.matrix().row(r));
                u_active[i] = inequalities.upper()[r];
            }
            let h_inv_lt = chol.solve(&l_active.transpose());
            let schur = &l_active * &h_inv_lt * 0.5;
            let schur_chol = nalgebra::Cholesky::new(symmetrize(&schur))
                .ok_or(OptimizerError::DegenerateActiveSet)?;
            // Stationarity plus L z = u gives S mu = L z0 - u.
            let mu = schur_chol.solve(&(&l_active * &unconstrained - &u_active));
            let z = &unconstrained - chol.solve(&(l_active.transpose() * &mu)) * 0.5;
            (z, mu)
        };

        // Drop the most negative multiplier, if any.
        let mut drop_index = None;
        let mut most_negative = -KKT_TOL;
        for (i, &mu) in multipliers.iter().enumerate() {
            if mu < most_negative {
                most_negative = mu;
                drop_index = Some(i);
            }
        }
        if let Some(i) = drop_index {
            active.remove(i);
            continue;
        }

        // Add the most violated constraint, if any.
        let violations = inequalities.matrix() * &z - inequalities.upper();
        let mut add_index = None;
        let mut worst = feas_tol;
        for (r, &v) in violations.iter().enumerate() {
            if !active.contains(&r) && v > worst {
                worst = v;
                add_index = Some(r);
            }
        }
        if let Some(r) = add_index {
            active.push(r);
            continue;
        }

        // KKT residual: stationarity + primal feasibility + complementarity.
        let mut gradient = quadratic * &z * 2.0 + linear;
        for (i, &r) in active.iter().enumerate() {
            gradient += inequalities.matrix().row(r).transpose() * multipliers[i];
        }
        let mut residual = gradient.amax();
        for (i, &r) in active.iter().enumerate() {
            residual = residual.max((multipliers[i] * violations[r]).abs());
        }
        residual = residual.max(violations.iter().fold(0.0f64, |acc, &v| acc.max(v)));

        return Ok((
            z,
            SolveDiagnostics {
                method: SolveMethod::ActiveSet,
                iterations: iteration + 1,
                active_set: active,
                kkt_residual: residual,
                local: false,
            },
        ));
    }
    Err(OptimizerError::IterationLimit(cap))
}

/// Exact solution of `min g^T p + p^T B p / 2` over `|p| <= radius` through
/// the eigendecomposition of `B`.
fn trust_region_step(
    eigenvalues: &DVector<f64>,
    eigenvectors: &DMatrix<f64>,
    gradient: &DVector<f64>,
    radius: f64,
) -> DVector<f64> {
    let n = gradient.len();
    let coords = eigenvectors.transpose() * gradient;
    let theta_min = eigenvalues[n - 1];
    let step_norm = |shift: f64| -> f64 {
        (0..n)
            .map(|i| {
                let denom = eigenvalues[i] + shift;
                if denom.abs() < f64::EPSILON {
                    0.0
                } else {
                    (coords[i] / denom).powi(2)
                }
            })
            .sum::<f64>()
            .sqrt()
    };
    // Interior Newton step when strictly convex and inside the ball.
    if theta_min > 0.0 && step_norm(0.0) <= radius {
        let p = DVector::from_fn(n, |i, _| -coords[i] / eigenvalues[i]);
        return eigenvectors * p;
    }
    let floor = (-theta_min).max(0.0);
    // Hard case: gradient orthogonal to the bottom eigenspace.
    let at_floor = step_norm(floor + 1e-14 * (1.0 + floor));
    if at_floor < radius {
        let mut p = DVector::from_fn(n, |i, _| {
            let denom = eigenvalues[i] + floor;
            if denom.abs() <= 1e-12 * (1.0 + floor) {
                0.0
            } else {
                -coords[i] / denom
            }
        });
        let fill = (radius * radius - p.norm_squared()).max(0.0).sqrt();
        let bottom = eigenvectors.column(n - 1);
        p = eigenvectors * p;
        return p + bottom * fill;
    }
    // Otherwise bisect the secular equation |p(shift)| = radius.
    let mut lo = floor + 1e-14 * (1.0 + floor);
    let mut hi = lo.max(1e-8);
    let mut expansions = 0;
    while step_norm(hi) > radius && expansions < 200 {
        hi *= 2.0;
        expansions += 1;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if step_norm(mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shift = 0.5 * (lo + hi);
    let p = DVector::from_fn(n, |i, _| -coords[i] / (eigenvalues[i] + shift));
    eigenvectors * p
}

/// Descent fallback when the objective is not positive definite: from the
/// weighted reference mean, take exact trust-region steps (clipped to the
/// feasible region when inequalities are present). Converges to a stationary
/// point for consistent semidefinite objectives; detects unbounded descent
/// otherwise.
fn trust_region_solve(
    problem: &MapProblem,
    quadratic: &DMatrix<f64>,
    linear: &DVector<f64>,
) -> Result<(DVector<f64>, SolveDiagnostics), OptimizerError> {
    let hessian = quadratic * 2.0;
    let (eigenvalues, eigenvectors) = symmetric_eigen_desc(&hessian);
    let scale = eigenvalues.amax().max(1.0);
    let theta_min = eigenvalues[eigenvalues.len() - 1];
    let indefinite = theta_min < -1e-10 * scale;

    if indefinite && problem.inequalities().is_none() {
        return Err(OptimizerError::Unbounded { nu: problem.nu });
    }

    let mut z = problem.weighted_reference_mean();
    if let Some(ineq) = problem.inequalities() {
        let slack = ineq.matrix() * &z - ineq.upper();
        if slack.iter().any(|&s| s > KKT_TOL * (1.0 + ineq.upper().amax())) {
            return Err(OptimizerError::InfeasibleStart);
        }
    }
    let start_norm = z.norm();
    let mut radius = 1.0 + start_norm;
    let mut iterations = 0usize;
    let cap = 500;
    loop {
        iterations += 1;
        if iterations > cap {
            return Err(OptimizerError::IterationLimit(cap));
        }
        let gradient = &hessian * &z + linear;
        // With negative curvature around, a vanishing gradient is a saddle or
        // maximum; the trust-region step then follows the bottom eigenvector.
        if gradient.amax() <= STATIONARY_TOL && !indefinite {
            break;
        }
        let step = trust_region_step(&eigenvalues, &eigenvectors, &gradient, radius);
        // Clip against the inequalities and minimize the exact quadratic
        // along the clipped segment.
        let mut tau_max = 1.0f64;
        let mut clipped = false;
        if let Some(ineq) = problem.inequalities() {
            let direction = ineq.matrix() * &step;
            let slack = ineq.upper() - ineq.matrix() * &z;
            for r in 0..ineq.len() {
                if direction[r] > 1e-14 {
                    let limit = (slack[r] / direction[r]).max(0.0);
                    if limit < tau_max {
                        tau_max = limit;
                        clipped = true;
                    }
                }
            }
        }
        let curvature = (step.transpose() * &hessian * &step)[0];
        let slope = gradient.dot(&step);
        let tau = if curvature > 0.0 {
            (-slope / curvature).clamp(0.0, tau_max)
        } else {
            tau_max
        };
        let decrease = -(tau * slope + 0.5 * tau * tau * curvature);
        z += &step * tau;

        if z.norm() > 1e9 * (1.0 + start_norm) {
            return Err(OptimizerError::Unbounded { nu: problem.nu });
        }
        if decrease <= 1e-15 * (1.0 + problem.objective(&z).abs()) {
            if clipped || tau_max == 0.0 {
                // Blocked by the boundary: accept as a local point.
                break;
            }
            if gradient.amax() > STATIONARY_TOL {
                // Full steps at growing radius keep failing to decrease:
                // treat as unbounded descent.
                if indefinite {
                    return Err(OptimizerError::Unbounded { nu: problem.nu });
                }
                break;
            }
            break;
        }
        if tau >= 1.0 - 1e-12 && step.norm() >= 0.99 * radius {
            radius *= 2.0;
        }
        if radius > 1e12 * (1.0 + start_norm) {
            return Err(OptimizerError::Unbounded { nu: problem.nu });
        }
    }
    let gradient_norm = (&hessian * &z + linear).amax();
    Ok((
        z,
        SolveDiagnostics {
            method: SolveMethod::TrustRegion,
            iterations,
            active_set: Vec::new(),
            kkt_residual: gradient_norm,
            local: true,
        },
    ))
}

/// Result of the cost-weight bisection.
#[derive(Clone, Debug)]
pub struct NuSearch {
    pub nu: f64,
    pub solution: Solution,
    /// Number of (solve, check) evaluations performed.
    pub evaluations: usize,
    /// True when the `nu_max` solution was already admissible.
    pub saturated: bool,
}

/// Bisection over the cost weight on `(0, nu_max]`.
///
/// If the `nu_max` solution is admissible it is returned at once. Otherwise
/// the search keeps the invariant `lo` admissible / `hi` not, bisecting
/// `max_iters` times and returning the largest admissible weight found. The
/// `nu = 0` solution (the weighted reference mean) must be admissible, or the
/// search fails. Solver failures at positive weights (unbounded descent)
/// count as inadmissible.
pub fn tune_nu<S, C>(
    mut solve_at: S,
    mut is_admissible: C,
    nu_max: f64,
    max_iters: usize,
) -> Result<NuSearch, OptimizerError>
where
    S: FnMut(f64) -> Result<Solution, OptimizerError>,
    C: FnMut(&Solution) -> Result<bool, OptimizerError>,
{
    if nu_max <= 0.0 || !nu_max.is_finite() {
        return Err(OptimizerError::InvalidNuMax(nu_max));
    }
    let mut evaluations = 0usize;
    let check = |nu: f64,
                     solve_at: &mut S,
                     is_admissible: &mut C,
                     evaluations: &mut usize|
     -> Result<Option<Solution>, OptimizerError> {
        *evaluations += 1;
        match solve_at(nu) {
            Ok(solution) => {
                if is_admissible(&solution)? {
                    Ok(Some(solution))
                } else {
                    Ok(None)
                }
            }
            // An unbounded or stalled solve at this weight simply means the
            // weight is too aggressive.
            Err(OptimizerError::Unbounded { .. })
            | Err(OptimizerError::IterationLimit(_))
            | Err(OptimizerError::InfeasibleStart) => Ok(None),
            Err(other) => Err(other),
        }
    };

    if let Some(solution) = check(nu_max, &mut solve_at, &mut is_admissible, &mut evaluations)? {
        return Ok(NuSearch {
            nu: nu_max,
            solution,
            evaluations,
            saturated: true,
        });
    }

    let baseline = check(0.0, &mut solve_at, &mut is_admissible, &mut evaluations)?
        .ok_or(OptimizerError::NoAdmissibleSolution)?;

    let mut lo = 0.0f64;
    let mut hi = nu_max;
    let mut best = baseline;
    for _ in 0..max_iters {
        let mid = 0.5 * (lo + hi);
        match check(mid, &mut solve_at, &mut is_admissible, &mut evaluations)? {
            Some(solution) => {
                lo = mid;
                best = solution;
            }
            None => hi = mid,
        }
    }
    Ok(NuSearch {
        nu: lo,
        solution: best,
        evaluations,
        saturated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisKind, BasisSpec};
    use crate::cost::{assemble_quadratic, reduce_cost, QuadraticInstantaneousCost};
    use crate::refstats::{decompose, CovarianceModel, ReferenceSet, DEFAULT_RANK_RTOL};
    use approx::assert_relative_eq;

    fn spec2() -> BasisSpec {
        BasisSpec::new(BasisKind::Legendre, vec![2], 1.0).unwrap()
    }

    fn coeffs(values: Vec<f64>, spec: &BasisSpec) -> CoefficientVector {
        CoefficientVector::new(DVector::from_vec(values), spec.clone()).unwrap()
    }

    /// K = 2 testbed: one free direction (e1), one endpoint-pinned (e2 = 3).
    fn testbed(
        reference_frees: &[f64],
        weights: Vec<f64>,
        lambda: f64,
    ) -> (SubspaceDecomposition, ReferenceSet) {
        let spec = spec2();
        let system = EndpointSystem::new(
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DVector::from_vec(vec![3.0]),
        )
        .unwrap();
        let cov = CovarianceModel::from_matrix(
            DMatrix::from_row_slice(2, 2, &[lambda, 0.0, 0.0, 0.0]),
            DEFAULT_RANK_RTOL,
        )
        .unwrap();
        let vectors: Vec<CoefficientVector> = reference_frees
            .iter()
            .map(|&f| coeffs(vec![f, 3.0], &spec))
            .collect();
        let refs = ReferenceSet::new(vectors, weights, None).unwrap();
        let dec = decompose(&cov, &system, &refs, DEFAULT_RANK_RTOL).unwrap();
        (dec, refs)
    }

    fn linear_cost_problem(
        dec: &SubspaceDecomposition,
        refs: &ReferenceSet,
        slope: f64,
        nu: f64,
    ) -> MapProblem {
        // F(c) = slope * c_1 (free coordinate), constant elsewhere
        let spec = spec2();
        let cost = QuadraticInstantaneousCost::new(
            DMatrix::zeros(1, 1),
            DVector::from_vec(vec![slope]),
            0.0,
        )
        .unwrap();
        let assembled = assemble_quadratic(&cost, &spec).unwrap();
        let reduced = reduce_cost(&assembled, dec).unwrap();
        build_map_problem(&reduced, dec, refs, nu, None).unwrap()
    }

    #[test]
    fn nu_zero_returns_weighted_mean() {
        let (dec, refs) = testbed(&[1.0, -2.0, 4.0], vec![0.5, 0.25, 0.25], 2.0);
        let problem = linear_cost_problem(&dec, &refs, 1.0, 0.0);
        let solution = solve_reduced(&problem).unwrap();
        let sign = dec.free_directions()[(0, 0)];
        let expected = 0.5 * 1.0 + 0.25 * -2.0 + 0.25 * 4.0;
        assert_relative_eq!(solution.reduced[0] * sign, expected, epsilon = 1e-10);
        // lifted solution meets the endpoint system exactly
        assert_relative_eq!(solution.coefficients.values()[1], 3.0, epsilon = 1e-10);
    }

    #[test]
    fn single_reference_nu_zero_reproduces_it() {
        let (dec, refs) = testbed(&[0.7], vec![1.0], 1.0);
        let problem = linear_cost_problem(&dec, &refs, 0.0, 0.0);
        let solution = solve_reduced(&problem).unwrap();
        assert_relative_eq!(solution.coefficients.values()[0], 0.7, epsilon = 1e-10);
        assert_relative_eq!(solution.coefficients.values()[1], 3.0, epsilon = 1e-10);
        assert_relative_eq!(solution.penalty, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_minimizer_of_linear_cost() {
        // objective nu * s * z + (z - m)^2 / lambda has minimum at
        // z = m - nu * s * lambda / 2
        let (dec, refs) = testbed(&[1.0], vec![1.0], 2.0);
        let sign = dec.free_directions()[(0, 0)];
        let nu = 0.8;
        let problem = linear_cost_problem(&dec, &refs, 1.5, nu);
        let solution = solve_reduced(&problem).unwrap();
        let expected = 1.0 - nu * 1.5 * sign * 2.0 / 2.0;
        assert_relative_eq!(solution.reduced[0], sign * expected, epsilon = 1e-10);
        assert!(solution.diagnostics.kkt_residual <= 1e-9);
    }

    #[test]
    fn objective_matches_unreduced_form() {
        let (dec, refs) = testbed(&[0.4, -0.9], vec![0.6, 0.4], 1.7);
        let spec = spec2();
        let cost = QuadraticInstantaneousCost::new(
            DMatrix::from_element(1, 1, 0.9),
            DVector::from_vec(vec![-0.3]),
            0.2,
        )
        .unwrap();
        let assembled = assemble_quadratic(&cost, &spec).unwrap();
        let reduced = reduce_cost(&assembled, &dec).unwrap();
        let nu = 0.6;
        let problem = build_map_problem(&reduced, &dec, &refs, nu, None).unwrap();
        let pinv = crate::refstats::pseudoinverse(
            &DMatrix::from_row_slice(2, 2, &[1.7, 0.0, 0.0, 0.0]),
            DEFAULT_RANK_RTOL,
        )
        .unwrap();

        for z in [-1.2, 0.0, 0.8] {
            let free = DVector::from_vec(vec![z]);
            let c = dec.lift(&free);
            let mut penalty = 0.0;
            for (r, &w) in refs.vectors().iter().zip(refs.weights()) {
                let diff = &c - r.values();
                penalty += w * (diff.transpose() * &pinv * &diff)[0];
            }
            let unreduced = nu * assembled.eval(&c) + penalty;
            assert_relative_eq!(problem.objective(&free), unreduced, epsilon = 1e-8);

            // quadratic-form evaluation agrees with the objective
            let via_form = (free.transpose() * problem.objective_matrix() * &free)[0]
                + problem.objective_linear().dot(&free)
                + problem.objective_constant();
            assert_relative_eq!(via_form, problem.objective(&free), epsilon = 1e-10);
        }
    }

    #[test]
    fn weyl_certificate_cases() {
        // positive semidefinite cost: every kappa certified
        let psd = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        let lambda = DVector::from_vec(vec![0.5, 0.2]);
        let report = weyl_certificate(&psd, &lambda, 0.1);
        assert_eq!(report.kappa_min, 0.0);
        assert!(report.certified);
        assert!(report.certified_nu_max().is_none());

        // indefinite cost: kappa_min = -rho * lambda_1 = 1, tight bound
        let indefinite = DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 1.0]);
        let report = weyl_certificate(&indefinite, &lambda, 1.0);
        assert_relative_eq!(report.kappa_min, 1.0, epsilon = 1e-14);
        assert!(report.certified);
        let mut shifted = indefinite.clone();
        for i in 0..2 {
            shifted[(i, i)] += report.kappa_min / lambda[i];
        }
        let (values, _) = crate::linalg::symmetric_eigen_desc(&shifted);
        assert!(values[values.len() - 1] >= -1e-8);

        // below the bound: not certified (may still be convex)
        let report = weyl_certificate(&indefinite, &lambda, 0.5);
        assert!(!report.certified);
    }

    #[test]
    fn active_set_honors_synthetic_bounds() {
        let (dec, refs) = testbed(&[1.0], vec![1.0], 1.0);
        let sign = dec.free_directions()[(0, 0)];
        // unconstrained minimizer at z = sign * (1 - nu s lambda / 2)
        let nu = 2.0;
        let base = linear_cost_problem(&dec, &refs, -1.0, nu);
        let unconstrained = solve_reduced(&base).unwrap();
        assert_relative_eq!(unconstrained.reduced[0] * sign, 2.0, epsilon = 1e-10);

        // cap the free coordinate at 1.5 (in signed coordinates)
        let cap = 1.5;
        let ineq = LinearInequalities::new(
            DMatrix::from_row_slice(1, 1, &[sign]),
            DVector::from_vec(vec![cap]),
        )
        .unwrap();
        let problem = base.with_inequalities(Some(ineq));
        let solution = solve_reduced(&problem).unwrap();
        assert_eq!(solution.diagnostics.method, SolveMethod::ActiveSet);
        assert_relative_eq!(solution.reduced[0] * sign, cap, epsilon = 1e-9);
        assert!(solution.diagnostics.kkt_residual <= 1e-9);
        assert_eq!(solution.diagnostics.active_set, vec![0]);
        // objective no better than the unconstrained one
        assert!(solution.objective >= unconstrained.objective - 1e-12);
    }

    #[test]
    fn inactive_bounds_leave_solution_untouched() {
        let (dec, refs) = testbed(&[1.0], vec![1.0], 1.0);
        let sign = dec.free_directions()[(0, 0)];
        let base = linear_cost_problem(&dec, &refs, -1.0, 2.0);
        let ineq = LinearInequalities::new(
            DMatrix::from_row_slice(1, 1, &[sign]),
            DVector::from_vec(vec![10.0]),
        )
        .unwrap();
        let solution = solve_reduced(&base.with_inequalities(Some(ineq))).unwrap();
        assert_relative_eq!(solution.reduced[0] * sign, 2.0, epsilon = 1e-10);
        assert!(solution.diagnostics.active_set.is_empty());
    }

    #[test]
    fn indefinite_without_inequalities_is_unbounded() {
        let (dec, refs) = testbed(&[0.0], vec![1.0], 4.0);
        let spec = spec2();
        // concave quadratic cost: F(c) = -c^T c
        let cost = QuadraticInstantaneousCost::new(
            DMatrix::from_element(1, 1, -1.0),
            DVector::zeros(1),
            0.0,
        )
        .unwrap();
        let assembled = assemble_quadratic(&cost, &spec).unwrap();
        let reduced = reduce_cost(&assembled, &dec).unwrap();
        // penalty curvature 1/lambda = 0.25, cost curvature -nu: indefinite
        // for nu > 0.25
        let problem = build_map_problem(&reduced, &dec, &refs, 1.0, None).unwrap();
        assert!(matches!(
            solve_reduced(&problem),
            Err(OptimizerError::Unbounded { .. })
        ));

        // still convex below the threshold
        let mild = build_map_problem(&reduced, &dec, &refs, 0.2, None).unwrap();
        assert!(solve_reduced(&mild).is_ok());
    }

    #[test]
    fn indefinite_with_binding_box_returns_local_point() {
        let (dec, refs) = testbed(&[0.0], vec![1.0], 4.0);
        let spec = spec2();
        let cost = QuadraticInstantaneousCost::new(
            DMatrix::from_element(1, 1, -1.0),
            DVector::zeros(1),
            0.0,
        )
        .unwrap();
        let assembled = assemble_quadratic(&cost, &spec).unwrap();
        let reduced = reduce_cost(&assembled, &dec).unwrap();
        let problem = build_map_problem(&reduced, &dec, &refs, 1.0, None)
            .unwrap()
            .with_inequalities(Some(
                LinearInequalities::new(
                    DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
                    DVector::from_vec(vec![2.0, 2.0]),
                )
                .unwrap(),
            ));
        let solution = solve_reduced(&problem).unwrap();
        assert_eq!(solution.diagnostics.method, SolveMethod::TrustRegion);
        assert!(solution.diagnostics.local);
        assert!(solution.reduced[0].abs() <= 2.0 + 1e-9);
        // descent reached the boundary where the concave objective is lowest
        assert_relative_eq!(solution.reduced[0].abs(), 2.0, epsilon = 1e-6);
    }

    #[test]
    fn psd_singular_objective_reaches_stationary_point() {
        // two free directions, cost flat in one of them
        let spec = BasisSpec::new(BasisKind::Legendre, vec![3], 1.0).unwrap();
        let system = EndpointSystem::new(
            DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
            DVector::from_vec(vec![0.0]),
        )
        .unwrap();
        let cov = CovarianceModel::from_matrix(
            DMatrix::from_partial_diagonal(3, 3, &[2.0, 1.0, 0.0]),
            DEFAULT_RANK_RTOL,
        )
        .unwrap();
        let refs = ReferenceSet::with_uniform_weights(
            vec![
                coeffs(vec![0.5, 0.2, 0.0], &spec),
                coeffs(vec![-0.5, -0.2, 0.0], &spec),
            ],
            None,
        )
        .unwrap();
        let dec = decompose(&cov, &system, &refs, DEFAULT_RANK_RTOL).unwrap();
        // exactly cancel the penalty curvature in the first free direction:
        // nu * q + 1/lambda = 0 with q = -1/(nu*lambda)
        let nu = 1.0;
        let mut q = DMatrix::zeros(2, 2);
        q[(0, 0)] = -1.0 / (nu * dec.covariance_eigenvalues()[0]);
        let reduced = ReducedQuadraticCost::new(q, DVector::zeros(2), 0.0);
        let problem = build_map_problem(&reduced, &dec, &refs, nu, None).unwrap();
        let solution = solve_reduced(&problem).unwrap();
        assert_eq!(solution.diagnostics.method, SolveMethod::TrustRegion);
        assert!(solution.diagnostics.kkt_residual <= 1e-8);
        assert!(solution.diagnostics.local);
    }

    #[test]
    fn lift_round_trip_and_endpoint_feasibility() {
        let (dec, _refs) = testbed(&[1.0, -1.0], vec![0.5, 0.5], 1.0);
        let free = DVector::from_vec(vec![0.42]);
        let lifted = lift_solution(&free, &dec);
        assert_relative_eq!(dec.restrict(&lifted)[0], 0.42, epsilon = 1e-12);
        assert_relative_eq!(lifted[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn bisection_returns_nu_max_when_unconstrained() {
        let (dec, refs) = testbed(&[1.0], vec![1.0], 1.0);
        let problem = linear_cost_problem(&dec, &refs, 1.0, 0.0);
        let search = tune_nu(
            |nu| solve_reduced(&problem.with_nu(nu)?),
            |_| Ok(true),
            8.0,
            20,
        )
        .unwrap();
        assert!(search.saturated);
        assert_eq!(search.nu, 8.0);
        assert_eq!(search.evaluations, 1);
    }

    #[test]
    fn bisection_brackets_the_admissibility_threshold() {
        // solution z(nu) = m + nu * lambda / 2 (slope -1): admissible while
        // z <= cap, so the threshold is nu_bar = 2 (cap - m) / lambda
        let (dec, refs) = testbed(&[1.0], vec![1.0], 1.0);
        let sign = dec.free_directions()[(0, 0)];
        let problem = linear_cost_problem(&dec, &refs, -1.0, 0.0);
        let cap = 1.9;
        let nu_max = 16.0;
        let nu_bar = 2.0 * (cap - 1.0) / 1.0;
        let search = tune_nu(
            |nu| solve_reduced(&problem.with_nu(nu)?),
            |solution| Ok(solution.reduced[0] * sign <= cap),
            nu_max,
            20,
        )
        .unwrap();
        assert!(!search.saturated);
        let resolution = nu_max / 2f64.powi(20);
        assert!(
            search.nu <= nu_bar + 1e-12 && search.nu >= nu_bar - resolution,
            "nu* = {} not within [{}, {}]",
            search.nu,
            nu_bar - resolution,
            nu_bar
        );
    }

    #[test]
    fn bisection_fails_when_mean_is_inadmissible() {
        let (dec, refs) = testbed(&[1.0], vec![1.0], 1.0);
        let problem = linear_cost_problem(&dec, &refs, -1.0, 0.0);
        let result = tune_nu(
            |nu| solve_reduced(&problem.with_nu(nu)?),
            |_| Ok(false),
            4.0,
            20,
        );
        assert!(matches!(result, Err(OptimizerError::NoAdmissibleSolution)));
    }

    #[test]
    fn bisection_treats_unbounded_solves_as_inadmissible() {
        let (dec, refs) = testbed(&[0.0], vec![1.0], 4.0);
        let spec = spec2();
        let cost = QuadraticInstantaneousCost::new(
            DMatrix::from_element(1, 1, -1.0),
            DVector::zeros(1),
            0.0,
        )
        .unwrap();
        let assembled = assemble_quadratic(&cost, &spec).unwrap();
        let reduced = reduce_cost(&assembled, &dec).unwrap();
        let problem = build_map_problem(&reduced, &dec, &refs, 0.0, None).unwrap();
        // indefinite for nu > 0.25: bisection must settle below that
        let search = tune_nu(
            |nu| solve_reduced(&problem.with_nu(nu)?),
            |_| Ok(true),
            10.0,
            30,
        )
        .unwrap();
        assert!(!search.saturated);
        assert!(search.nu <= 0.25 + 1e-6);
        assert!(search.nu > 0.2);
    }

    #[test]
    fn regularization_path_is_monotone() {
        let (dec, refs) = testbed(&[1.0, 2.5, -0.5], vec![0.4, 0.3, 0.3], 1.3);
        let spec = spec2();
        let cost = QuadraticInstantaneousCost::new(
            DMatrix::from_element(1, 1, 0.7),
            DVector::from_vec(vec![0.4]),
            0.0,
        )
        .unwrap();
        let assembled = assemble_quadratic(&cost, &spec).unwrap();
        let reduced = reduce_cost(&assembled, &dec).unwrap();
        let problem = build_map_problem(&reduced, &dec, &refs, 0.0, None).unwrap();
        let mut previous_cost = f64::INFINITY;
        let mut previous_penalty = -f64::INFINITY;
        for i in 0..10 {
            let nu = 1e-3 * 4f64.powi(i);
            let solution = solve_reduced(&problem.with_nu(nu).unwrap()).unwrap();
            assert!(
                solution.cost <= previous_cost + 1e-9,
                "cost increased along the path at nu = {nu}"
            );
            assert!(
                solution.penalty >= previous_penalty - 1e-9,
                "penalty decreased along the path at nu = {nu}"
            );
            previous_cost = solution.cost;
            previous_penalty = solution.penalty;
        }
    }

    #[test]
    fn degenerate_problem_is_rejected() {
        let (dec, refs) = testbed(&[1.0], vec![1.0], 1.0);
        let reduced = ReducedQuadraticCost::new(DMatrix::zeros(1, 1), DVector::zeros(1), 0.0);
        assert!(matches!(
            build_map_problem(&reduced, &dec, &refs, -0.5, None),
            Err(OptimizerError::InvalidNu(_))
        ));
        // mismatched reduced size
        let bad = ReducedQuadraticCost::new(DMatrix::zeros(2, 2), DVector::zeros(2), 0.0);
        assert!(matches!(
            build_map_problem(&bad, &dec, &refs, 0.1, None),
            Err(OptimizerError::DimensionMismatch(_))
        ));
    }
}
