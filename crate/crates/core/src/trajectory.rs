//! Trajectory sampling, projection onto the truncated basis space,
//! reconstruction, the endpoint linear system and constraint checking.
//!
//! Projection integrates the piecewise-linear interpolant of the samples
//! against each basis function with a per-interval Gauss rule, so the
//! interpolant itself is integrated exactly; the only error left is the
//! interpolation error of the raw signal. Inputs are presumed pre-smoothed.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::basis::{BasisError, BasisSpec, QuadratureRule};

/// Relative coverage slack: samples must reach both interval ends up to
/// `COVERAGE_RTOL * T`.
const COVERAGE_RTOL: f64 = 1e-6;

#[derive(Error, Debug)]
pub enum TrajectoryError {
    #[error("samples need at least two rows, got {0}")]
    TooFewSamples(usize),

    #[error("sample times must be strictly increasing (violated at row {0})")]
    UnsortedTimes(usize),

    #[error("non-finite entry at row {row}, column {column}")]
    NonFiniteValue { row: usize, column: usize },

    #[error("non-finite time at row {0}")]
    NonFiniteTime(usize),

    #[error("times has {times} entries but values has {rows} rows")]
    ShapeMismatch { times: usize, rows: usize },

    #[error(
        "samples cover [{first}, {last}] but the basis interval is [0, {duration}] \
         (coverage slack {slack})"
    )]
    Coverage {
        first: f64,
        last: f64,
        duration: f64,
        slack: f64,
    },

    #[error("coefficient vector has {got} entries, basis expects {expected}")]
    CoefficientLength { got: usize, expected: usize },

    #[error("coefficient entry {0} is not finite")]
    NonFiniteCoefficient(usize),

    #[error("endpoint vectors must all have length {expected}, got {got}")]
    EndpointLength { expected: usize, got: usize },

    #[error("endpoint tolerance for dimension {0} is negative")]
    NegativeTolerance(usize),

    #[error("endpoint values must be finite")]
    NonFiniteEndpoint,

    #[error("dimension index {dim} out of range for {dims} dimensions")]
    DimensionOutOfRange { dim: usize, dims: usize },

    #[error("constraint `{name}` returned a non-finite value at t = {t}")]
    ConstraintEvaluation { name: String, t: f64 },

    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Time-stamped multivariate samples: one row per time, one column per
/// component.
#[derive(Clone, Debug)]
pub struct TrajectorySamples {
    times: Vec<f64>,
    values: DMatrix<f64>,
}

impl TrajectorySamples {
    pub fn new(times: Vec<f64>, values: DMatrix<f64>) -> Result<Self, TrajectoryError> {
        if times.len() != values.nrows() {
            return Err(TrajectoryError::ShapeMismatch {
                times: times.len(),
                rows: values.nrows(),
            });
        }
        if times.len() < 2 {
            return Err(TrajectoryError::TooFewSamples(times.len()));
        }
        if let Some(row) = times.iter().position(|t| !t.is_finite()) {
            return Err(TrajectoryError::NonFiniteTime(row));
        }
        for i in 1..times.len() {
            if times[i] <= times[i - 1] {
                return Err(TrajectoryError::UnsortedTimes(i));
            }
        }
        for row in 0..values.nrows() {
            for column in 0..values.ncols() {
                if !values[(row, column)].is_finite() {
                    return Err(TrajectoryError::NonFiniteValue { row, column });
                }
            }
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of components per sample.
    pub fn dim_count(&self) -> usize {
        self.values.ncols()
    }

    /// Linear interpolation of component `d` at time `t` (clamped to the
    /// sampled range).
    pub fn interpolate(&self, d: usize, t: f64) -> f64 {
        let times = &self.times;
        if t <= times[0] {
            return self.values[(0, d)];
        }
        if t >= *times.last().expect("non-empty") {
            return self.values[(times.len() - 1, d)];
        }
        let right = times.partition_point(|&x| x < t).max(1);
        let (t0, t1) = (times[right - 1], times[right]);
        let alpha = (t - t0) / (t1 - t0);
        self.values[(right - 1, d)] * (1.0 - alpha) + self.values[(right, d)] * alpha
    }
}

/// Stacked coefficient vector of a projected trajectory, dimension blocks in
/// order.
#[derive(Clone, Debug)]
pub struct CoefficientVector {
    values: DVector<f64>,
    spec: BasisSpec,
}

impl CoefficientVector {
    pub fn new(values: DVector<f64>, spec: BasisSpec) -> Result<Self, TrajectoryError> {
        if values.len() != spec.total_len() {
            return Err(TrajectoryError::CoefficientLength {
                got: values.len(),
                expected: spec.total_len(),
            });
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(TrajectoryError::NonFiniteCoefficient(i));
        }
        Ok(Self { values, spec })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    /// Coefficients owned by dimension `d`.
    pub fn block(&self, d: usize) -> nalgebra::DVectorView<'_, f64> {
        let range = self.spec.block_range(d);
        self.values.rows(range.start, range.len())
    }

    /// Evaluate the represented trajectory at one time.
    pub fn evaluate_at(&self, t: f64) -> Result<DVector<f64>, TrajectoryError> {
        let phi = self.spec.eval(t)?;
        Ok(DVector::from_fn(self.spec.dim_count(), |d, _| {
            let block = self.block(d);
            (0..block.len()).map(|k| block[k] * phi[k]).sum()
        }))
    }

    /// Evaluate the time derivative of the represented trajectory.
    pub fn evaluate_derivative_at(&self, t: f64) -> Result<DVector<f64>, TrajectoryError> {
        let dphi = self.spec.eval_derivative(t)?;
        Ok(DVector::from_fn(self.spec.dim_count(), |d, _| {
            let block = self.block(d);
            (0..block.len()).map(|k| block[k] * dphi[k]).sum()
        }))
    }
}

/// Prescribed start and end states with per-dimension tolerances
/// (0 means exact).
#[derive(Clone, Debug)]
pub struct EndpointConditions {
    start: DVector<f64>,
    end: DVector<f64>,
    tolerance: DVector<f64>,
}

impl EndpointConditions {
    pub fn new(
        start: DVector<f64>,
        end: DVector<f64>,
        tolerance: DVector<f64>,
    ) -> Result<Self, TrajectoryError> {
        if start.len() != end.len() || start.len() != tolerance.len() {
            return Err(TrajectoryError::EndpointLength {
                expected: start.len(),
                got: end.len().max(tolerance.len()),
            });
        }
        if start.iter().chain(end.iter()).any(|x| !x.is_finite()) {
            return Err(TrajectoryError::NonFiniteEndpoint);
        }
        if let Some(d) = tolerance.iter().position(|&x| x < 0.0 || !x.is_finite()) {
            return Err(TrajectoryError::NegativeTolerance(d));
        }
        Ok(Self {
            start,
            end,
            tolerance,
        })
    }

    /// Exact endpoint conditions (zero tolerance everywhere).
    pub fn exact(start: DVector<f64>, end: DVector<f64>) -> Result<Self, TrajectoryError> {
        let tolerance = DVector::zeros(start.len());
        Self::new(start, end, tolerance)
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.start
    }

    pub fn end(&self) -> &DVector<f64> {
        &self.end
    }

    pub fn tolerance(&self) -> &DVector<f64> {
        &self.tolerance
    }

    pub fn dim_count(&self) -> usize {
        self.start.len()
    }
}

/// The linear system `A c = rhs` equivalent to the endpoint conditions on the
/// projected space: one row per dimension at `t = 0`, then one per dimension
/// at `t = T`.
#[derive(Clone, Debug)]
pub struct EndpointSystem {
    matrix: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl EndpointSystem {
    /// Wrap an explicit system; row counts must match.
    pub fn new(matrix: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self, TrajectoryError> {
        if matrix.nrows() != rhs.len() {
            return Err(TrajectoryError::ShapeMismatch {
                times: matrix.nrows(),
                rows: rhs.len(),
            });
        }
        Ok(Self { matrix, rhs })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    /// `max |A c - rhs|`.
    pub fn residual(&self, coefficients: &DVector<f64>) -> f64 {
        (&self.matrix * coefficients - &self.rhs)
            .iter()
            .fold(0.0, |acc: f64, x| acc.max(x.abs()))
    }
}

/// Assemble the endpoint system for a basis: block-diagonal basis values at
/// `0` and `T`, right-hand side `(y0, yT)`.
pub fn endpoint_system(
    spec: &BasisSpec,
    conditions: &EndpointConditions,
) -> Result<EndpointSystem, TrajectoryError> {
    let dims = spec.dim_count();
    if conditions.dim_count() != dims {
        return Err(TrajectoryError::EndpointLength {
            expected: dims,
            got: conditions.dim_count(),
        });
    }
    let total = spec.total_len();
    let phi_start = spec.eval(0.0)?;
    let phi_end = spec.eval(spec.duration())?;
    let mut matrix = DMatrix::zeros(2 * dims, total);
    for d in 0..dims {
        let range = spec.block_range(d);
        for (k, col) in range.clone().enumerate() {
            matrix[(d, col)] = phi_start[k];
            matrix[(dims + d, col)] = phi_end[k];
        }
    }
    let mut rhs = DVector::zeros(2 * dims);
    for d in 0..dims {
        rhs[d] = conditions.start()[d];
        rhs[dims + d] = conditions.end()[d];
    }
    EndpointSystem::new(matrix, rhs)
}

/// Project samples onto the basis: `c_k^(d) = integral of y_d phi_k`, with
/// `y_d` the piecewise-linear interpolant of the samples.
pub fn project(
    samples: &TrajectorySamples,
    spec: &BasisSpec,
) -> Result<CoefficientVector, TrajectoryError> {
    let duration = spec.duration();
    let slack = COVERAGE_RTOL * duration;
    let first = samples.times()[0];
    let last = *samples.times().last().expect("validated non-empty");
    if first > slack || last < duration - slack || first < -slack || last > duration + slack {
        return Err(TrajectoryError::Coverage {
            first,
            last,
            duration,
            slack,
        });
    }
    let dims = spec.dim_count();
    let k_max = spec.max_order();
    // Per-interval rule exact for (linear sample) x (degree K_max - 1 basis).
    let nodes = k_max / 2 + 1;
    let reference = QuadratureRule::gauss_legendre(nodes, 1.0)?;

    let mut coefficients = DVector::zeros(spec.total_len());
    let times = samples.times();
    for w in times.windows(2) {
        let (t0, t1) = (w[0].max(0.0), w[1].min(duration));
        if t1 <= t0 {
            continue;
        }
        let width = t1 - t0;
        for (&xi, &wi) in reference.nodes().iter().zip(reference.weights()) {
            let t = t0 + xi * width;
            let phi = spec.eval(t)?;
            let weight = wi * width;
            for d in 0..dims {
                let y = samples.interpolate(d, t);
                let range = spec.block_range(d);
                for (k, idx) in range.enumerate() {
                    coefficients[idx] += weight * y * phi[k];
                }
            }
        }
    }
    CoefficientVector::new(coefficients, spec.clone())
}

/// Evaluate the projected trajectory at the requested times.
pub fn reconstruct(
    coefficients: &CoefficientVector,
    times: &[f64],
) -> Result<TrajectorySamples, TrajectoryError> {
    let dims = coefficients.spec().dim_count();
    let mut values = DMatrix::zeros(times.len(), dims);
    for (i, &t) in times.iter().enumerate() {
        let state = coefficients.evaluate_at(t)?;
        for d in 0..dims {
            values[(i, d)] = state[d];
        }
    }
    TrajectorySamples::new(times.to_vec(), values)
}

/// Uniform grid of `n` times spanning `[0, duration]`.
pub fn uniform_grid(duration: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| duration * i as f64 / (n - 1).max(1) as f64)
        .collect()
}

/// Forward-difference derivative of component `d`, aligned to interval left
/// endpoints: `n - 1` values for `n` samples.
pub fn derivative_series(
    samples: &TrajectorySamples,
    d: usize,
) -> Result<(Vec<f64>, Vec<f64>), TrajectoryError> {
    if d >= samples.dim_count() {
        return Err(TrajectoryError::DimensionOutOfRange {
            dim: d,
            dims: samples.dim_count(),
        });
    }
    let times = samples.times();
    let mut out_times = Vec::with_capacity(times.len() - 1);
    let mut rates = Vec::with_capacity(times.len() - 1);
    for i in 0..times.len() - 1 {
        let dt = times[i + 1] - times[i];
        out_times.push(times[i]);
        rates.push((samples.values()[(i + 1, d)] - samples.values()[(i, d)]) / dt);
    }
    Ok((out_times, rates))
}

/// Instantaneous state handed to constraint functions: the sampled values and
/// their forward-difference derivatives.
pub struct StateView<'a> {
    pub value: &'a [f64],
    pub derivative: &'a [f64],
}

type ConstraintFn = Box<dyn Fn(&StateView<'_>) -> f64 + Send + Sync>;

/// A named scalar inequality `g(state) <= 0`.
pub struct Constraint {
    name: String,
    g: ConstraintFn,
}

impl Constraint {
    pub fn custom(
        name: impl Into<String>,
        g: impl Fn(&StateView<'_>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            g: Box::new(g),
        }
    }

    /// `value[d] <= max`.
    pub fn upper_bound(name: impl Into<String>, d: usize, max: f64) -> Self {
        Self::custom(name, move |state| state.value[d] - max)
    }

    /// `value[d] >= min`.
    pub fn lower_bound(name: impl Into<String>, d: usize, min: f64) -> Self {
        Self::custom(name, move |state| min - state.value[d])
    }

    /// Finite-difference derivative of component `d` bounded above by `max`.
    pub fn derivative_upper_bound(name: impl Into<String>, d: usize, max: f64) -> Self {
        Self::custom(name, move |state| state.derivative[d] - max)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl std::fmt::Debug for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Constraint")
            .field("name", &self.name)
            .finish()
    }
}

/// A set of inequality constraints plus the feasibility slack used when
/// classifying a trajectory as admissible.
#[derive(Debug, Default)]
pub struct ConstraintSet {
    constraints: Vec<Constraint>,
    slack: f64,
}

impl ConstraintSet {
    pub fn new(constraints: Vec<Constraint>) -> Self {
        Self {
            constraints,
            slack: 0.0,
        }
    }

    pub fn with_slack(mut self, slack: f64) -> Self {
        self.slack = slack;
        self
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn slack(&self) -> f64 {
        self.slack
    }
}

/// Worst violation of one constraint over the evaluation grid.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ConstraintMargin {
    pub name: String,
    pub worst_violation: f64,
    pub worst_time: f64,
}

/// Admissibility verdict with the worst margin per constraint.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ConstraintReport {
    pub admissible: bool,
    pub margins: Vec<ConstraintMargin>,
}

/// Evaluate every constraint at every sample time. The derivative entry at
/// the final sample reuses the last interval; an empty set is vacuously
/// admissible.
pub fn check_constraints(
    samples: &TrajectorySamples,
    set: &ConstraintSet,
) -> Result<ConstraintReport, TrajectoryError> {
    let n = samples.len();
    let dims = samples.dim_count();
    let times = samples.times();
    let mut margins = Vec::with_capacity(set.constraints.len());
    let mut value = vec![0.0; dims];
    let mut derivative = vec![0.0; dims];
    for constraint in &set.constraints {
        let mut worst = f64::NEG_INFINITY;
        let mut worst_time = times[0];
        for i in 0..n {
            let left = if i + 1 < n { i } else { i - 1 };
            let dt = times[left + 1] - times[left];
            for d in 0..dims {
                value[d] = samples.values()[(i, d)];
                derivative[d] =
                    (samples.values()[(left + 1, d)] - samples.values()[(left, d)]) / dt;
            }
            let g = (constraint.g)(&StateView {
                value: &value,
                derivative: &derivative,
            });
            if !g.is_finite() {
                return Err(TrajectoryError::ConstraintEvaluation {
                    name: constraint.name.clone(),
                    t: times[i],
                });
            }
            if g > worst {
                worst = g;
                worst_time = times[i];
            }
        }
        margins.push(ConstraintMargin {
            name: constraint.name.clone(),
            worst_violation: worst,
            worst_time,
        });
    }
    let admissible = margins.iter().all(|m| m.worst_violation <= set.slack);
    Ok(ConstraintReport {
        admissible,
        margins,
    })
}
