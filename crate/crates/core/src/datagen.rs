//! Synthetic reference generation: Gaussian noise projected onto the null
//! space of the endpoint matrix keeps every generated trajectory on the
//! prescribed endpoints, and a bounding-box rejection keeps them inside the
//! operating region. Two ready-made scenarios are bundled: a planar
//! force-field problem and a synthetic aircraft climb.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::Normal;
use std::path::Path;
use thiserror::Error;

use crate::basis::{BasisError, BasisKind, BasisSpec};
use crate::cost::{CostError, ForceFieldSpec, QuadraticInstantaneousCost};
use crate::pipeline::config::{
    ConstraintConfig, CostConfig, EndpointConfig, RunConfig, WeightSchemeConfig,
};
use crate::refstats::{ReferenceSet, RefStatsError};
use crate::trajectory::{
    endpoint_system, reconstruct, uniform_grid, CoefficientVector, Constraint, ConstraintSet,
    EndpointConditions, EndpointSystem, TrajectoryError, TrajectorySamples,
};

#[derive(Error, Debug)]
pub enum DataGenError {
    #[error("base trajectory violates the endpoint system (residual {0:.3e})")]
    InfeasibleBase(f64),

    #[error("noise profile has {got} entries, basis expects {expected}")]
    ProfileLength { got: usize, expected: usize },

    #[error(
        "generation starved: {accepted} of {requested} accepted after {attempts} attempts \
         (acceptance rate {rate:.3})"
    )]
    Starved {
        accepted: usize,
        requested: usize,
        attempts: usize,
        rate: f64,
    },

    #[error("bounds need one (lower, upper) pair per dimension")]
    BoundsShape,

    #[error("failed to write reference files: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Basis(#[from] BasisError),

    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),

    #[error(transparent)]
    RefStats(#[from] RefStatsError),

    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Axis-aligned operating box for rejection sampling.
#[derive(Clone, Debug)]
pub struct StateBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl StateBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, DataGenError> {
        if lower.len() != upper.len() {
            return Err(DataGenError::BoundsShape);
        }
        Ok(Self { lower, upper })
    }

    fn contains(&self, samples: &TrajectorySamples) -> bool {
        for i in 0..samples.len() {
            for d in 0..samples.dim_count() {
                let v = samples.values()[(i, d)];
                if v < self.lower[d] || v > self.upper[d] {
                    return false;
                }
            }
        }
        true
    }

    /// Box membership as a constraint set (one bound pair per dimension).
    pub fn constraint_set(&self, variables: &[String]) -> ConstraintSet {
        let mut constraints = Vec::new();
        for (d, name) in variables.iter().enumerate() {
            constraints.push(Constraint::upper_bound(
                format!("{name} <= {}", self.upper[d]),
                d,
                self.upper[d],
            ));
            constraints.push(Constraint::lower_bound(
                format!("{name} >= {}", self.lower[d]),
                d,
                self.lower[d],
            ));
        }
        ConstraintSet::new(constraints)
    }
}

/// Per-coefficient noise standard deviations applied before the null-space
/// projection.
#[derive(Clone, Debug)]
pub struct NoiseProfile {
    stds: Vec<f64>,
}

impl NoiseProfile {
    /// One scale for every coefficient.
    pub fn isotropic(spec: &BasisSpec, scale: f64) -> Self {
        Self {
            stds: vec![scale; spec.total_len()],
        }
    }

    /// One scale per dimension, shared by all of its coefficients.
    pub fn per_dimension(spec: &BasisSpec, scales: &[f64]) -> Result<Self, DataGenError> {
        if scales.len() != spec.dim_count() {
            return Err(DataGenError::ProfileLength {
                got: scales.len(),
                expected: spec.dim_count(),
            });
        }
        let mut stds = vec![0.0; spec.total_len()];
        for (d, &scale) in scales.iter().enumerate() {
            for idx in spec.block_range(d) {
                stds[idx] = scale;
            }
        }
        Ok(Self { stds })
    }

    /// Scale decaying geometrically with the within-block order, which makes
    /// the estimated covariance decay across eigenvalues.
    pub fn decaying(spec: &BasisSpec, scales: &[f64], rate: f64) -> Result<Self, DataGenError> {
        let mut profile = Self::per_dimension(spec, scales)?;
        for d in 0..spec.dim_count() {
            for (order, idx) in spec.block_range(d).enumerate() {
                profile.stds[idx] *= rate.powi(order as i32);
            }
        }
        Ok(profile)
    }

    /// Zero out orders at or above `keep[d]` in each block, forcing a
    /// rank-deficient noise covariance (and a nonempty data-pinned subspace).
    pub fn with_rank_limit(mut self, spec: &BasisSpec, keep: &[usize]) -> Result<Self, DataGenError> {
        if keep.len() != spec.dim_count() {
            return Err(DataGenError::ProfileLength {
                got: keep.len(),
                expected: spec.dim_count(),
            });
        }
        for (d, &kept) in keep.iter().enumerate() {
            for (order, idx) in spec.block_range(d).enumerate() {
                if order >= kept {
                    self.stds[idx] = 0.0;
                }
            }
        }
        Ok(self)
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }
}

/// Generation parameters.
#[derive(Clone, Debug)]
pub struct GenerationConfig {
    pub profile: NoiseProfile,
    pub count: usize,
    pub bounds: Option<StateBounds>,
    pub seed: u64,
    /// Attempt cap as a multiple of `count`.
    pub attempt_cap_factor: usize,
    /// Grid resolution of the box-membership check.
    pub grid_points: usize,
}

impl GenerationConfig {
    pub fn new(profile: NoiseProfile, count: usize, seed: u64) -> Self {
        Self {
            profile,
            count,
            bounds: None,
            seed,
            attempt_cap_factor: 100,
            grid_points: 200,
        }
    }

    pub fn with_bounds(mut self, bounds: StateBounds) -> Self {
        self.bounds = Some(bounds);
        self
    }
}

/// A generated reference set with its acceptance diagnostics.
#[derive(Clone, Debug)]
pub struct GeneratedSet {
    pub references: ReferenceSet,
    pub acceptance_rate: f64,
    pub attempts: usize,
}

/// Orthonormal basis of `ker A` (columns), from the eigendecomposition of
/// `A^T A` (the thin SVD of `A` does not carry the null-space vectors).
fn null_space_basis(system: &EndpointSystem) -> DMatrix<f64> {
    let a = system.matrix();
    let k = a.ncols();
    let gram = a.transpose() * a;
    let (values, vectors) = crate::linalg::symmetric_eigen_desc(&gram);
    let tol = 1e-12 * values[0].max(1.0);
    let kept: Vec<usize> = (0..k).filter(|&i| values[i] <= tol).collect();
    let mut basis = DMatrix::zeros(k, kept.len());
    for (j, &i) in kept.iter().enumerate() {
        basis.set_column(j, &vectors.column(i));
    }
    basis
}

/// Draw references around `base` with noise confined to `ker A`, rejecting
/// trajectories that leave the bounds on a dense grid.
pub fn generate_references(
    base: &CoefficientVector,
    system: &EndpointSystem,
    config: &GenerationConfig,
) -> Result<GeneratedSet, DataGenError> {
    let spec = base.spec();
    let k = spec.total_len();
    if config.profile.stds.len() != k {
        return Err(DataGenError::ProfileLength {
            got: config.profile.stds.len(),
            expected: k,
        });
    }
    let residual = system.residual(base.values());
    if residual > 1e-10 * (1.0 + system.rhs().amax()) {
        return Err(DataGenError::InfeasibleBase(residual));
    }

    let null_basis = null_space_basis(system);
    let grid = uniform_grid(spec.duration(), config.grid_points);
    let mut rng = StdRng::from_rng(&mut rand_chacha::ChaCha8Rng::seed_from_u64(config.seed));
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let cap = config.attempt_cap_factor.max(1) * config.count.max(1);
    let mut accepted = Vec::with_capacity(config.count);
    let mut attempts = 0usize;
    while accepted.len() < config.count && attempts < cap {
        attempts += 1;
        let scaled = DVector::from_fn(k, |i, _| rng.sample(unit) * config.profile.stds[i]);
        let projected = &null_basis * (null_basis.transpose() * &scaled);
        let candidate = CoefficientVector::new(base.values() + projected, spec.clone())?;
        if let Some(bounds) = &config.bounds {
            let samples = reconstruct(&candidate, &grid)?;
            if !bounds.contains(&samples) {
                continue;
            }
        }
        accepted.push(candidate);
    }
    let rate = accepted.len() as f64 / attempts.max(1) as f64;
    if accepted.len() < config.count {
        return Err(DataGenError::Starved {
            accepted: accepted.len(),
            requested: config.count,
            attempts,
            rate,
        });
    }
    Ok(GeneratedSet {
        references: ReferenceSet::with_uniform_weights(accepted, None)?,
        acceptance_rate: rate,
        attempts,
    })
}

/// Project an analytic trajectory and snap the result exactly onto the
/// endpoint system with the smallest coefficient correction.
pub fn project_and_snap(
    f: impl Fn(f64) -> Vec<f64>,
    spec: &BasisSpec,
    system: &EndpointSystem,
) -> Result<CoefficientVector, DataGenError> {
    let dims = spec.dim_count();
    let grid = uniform_grid(spec.duration(), 4001);
    let values = DMatrix::from_fn(grid.len(), dims, |i, d| f(grid[i])[d]);
    let samples = TrajectorySamples::new(grid, values)?;
    let projected = crate::trajectory::project(&samples, spec)?;
    let defect = system.rhs() - system.matrix() * projected.values();
    let correction = system
        .matrix()
        .clone()
        .svd(true, true)
        .solve(&defect, 1e-12)
        .expect("svd computed with factors");
    Ok(CoefficientVector::new(
        projected.values() + correction,
        spec.clone(),
    )?)
}

fn write_reference_csv(
    path: &Path,
    samples: &TrajectorySamples,
    variables: &[String],
    cost: Option<(&str, &[f64])>,
) -> Result<(), DataGenError> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["time".to_string()];
    header.extend(variables.iter().cloned());
    if let Some((name, _)) = cost {
        header.push(name.to_string());
    }
    writer.write_record(&header)?;
    for i in 0..samples.len() {
        let mut row = vec![samples.times()[i].to_string()];
        for d in 0..samples.dim_count() {
            row.push(samples.values()[(i, d)].to_string());
        }
        if let Some((_, column)) = cost {
            row.push(column[i].to_string());
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Planar force-field scenario: two components on `[0, 1]` in the unit
/// square, a rotational field `V(x1, x2) = (0, x1)` and references drawn
/// around a mildly curved base path.
#[derive(Clone, Debug)]
pub struct ForceFieldScenario {
    pub spec: BasisSpec,
    pub variables: Vec<String>,
    pub endpoints: EndpointConditions,
    pub system: EndpointSystem,
    pub base: CoefficientVector,
    pub references: ReferenceSet,
    pub field: ForceFieldSpec,
    pub bounds: StateBounds,
    pub acceptance_rate: f64,
    pub seed: u64,
    /// Observations per emitted reference file.
    pub samples_per_reference: usize,
}

/// Build the force-field scenario with the requested reference count.
pub fn force_field_scenario(seed: u64, count: usize) -> Result<ForceFieldScenario, DataGenError> {
    let spec = BasisSpec::new(BasisKind::Legendre, vec![4, 6], 1.0)?;
    let start = DVector::from_vec(vec![0.111, 0.926]);
    let end = DVector::from_vec(vec![0.912, 0.211]);
    let tolerance = DVector::from_vec(vec![1e-4, 1e-4]);
    let endpoints = EndpointConditions::new(start, end, tolerance)?;
    let system = endpoint_system(&spec, &endpoints)?;

    // A gently bulged path between the endpoints; plausible but not optimal.
    let base = project_and_snap(
        |t| {
            vec![
                0.111 + 0.801 * t - 0.20 * t * (1.0 - t),
                0.926 - 0.715 * t + 0.15 * t * (1.0 - t),
            ]
        },
        &spec,
        &system,
    )?;

    let bounds = StateBounds::new(vec![0.0, 0.0], vec![1.0, 1.0])?;
    let profile = NoiseProfile::isotropic(&spec, 0.05);
    let generation = GenerationConfig::new(profile, count, seed).with_bounds(bounds.clone());
    let generated = generate_references(&base, &system, &generation)?;

    let field = ForceFieldSpec::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
        DVector::zeros(2),
        0.0,
    )?;

    Ok(ForceFieldScenario {
        spec,
        variables: vec!["x1".into(), "x2".into()],
        endpoints,
        system,
        base,
        references: generated.references,
        field,
        bounds,
        acceptance_rate: generated.acceptance_rate,
        seed,
        samples_per_reference: 81,
    })
}

impl ForceFieldScenario {
    /// Box-membership constraints used for admissibility.
    pub fn constraint_set(&self) -> ConstraintSet {
        self.bounds.constraint_set(&self.variables)
    }

    /// Write one CSV per reference into `dir`.
    pub fn write_references(&self, dir: &Path) -> Result<usize, DataGenError> {
        std::fs::create_dir_all(dir)?;
        let grid = uniform_grid(self.spec.duration(), self.samples_per_reference);
        for (i, reference) in self.references.vectors().iter().enumerate() {
            let samples = reconstruct(reference, &grid)?;
            let path = dir.join(format!("reference_{i:04}.csv"));
            write_reference_csv(&path, &samples, &self.variables, None)?;
        }
        Ok(self.references.len())
    }

    /// A ready-to-run configuration for this scenario.
    pub fn config(&self, data_dir: &Path, output_dir: &Path, alpha: f64) -> RunConfig {
        RunConfig {
            data_dir: data_dir.to_path_buf(),
            variables: self.variables.clone(),
            dims: self.spec.dims().to_vec(),
            duration: Some(self.spec.duration()),
            endpoints: EndpointConfig {
                start: self.endpoints.start().iter().copied().collect(),
                end: self.endpoints.end().iter().copied().collect(),
                tolerance: self.endpoints.tolerance().iter().copied().collect(),
            },
            endpoint_filter_tolerance: None,
            constraints: vec![
                ConstraintConfig::UpperBound {
                    variable: "x1".into(),
                    max: 1.0,
                },
                ConstraintConfig::LowerBound {
                    variable: "x1".into(),
                    min: 0.0,
                },
                ConstraintConfig::UpperBound {
                    variable: "x2".into(),
                    max: 1.0,
                },
                ConstraintConfig::LowerBound {
                    variable: "x2".into(),
                    min: 0.0,
                },
            ],
            cost: CostConfig::ForceField {
                linear: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
                offset: vec![0.0, 0.0],
                alpha,
            },
            nu_max: 1e4,
            bisection_iters: 20,
            best_count: 10,
            weight_scheme: WeightSchemeConfig::Uniform,
            shrinkage: 0.0,
            rank_rtol: crate::refstats::DEFAULT_RANK_RTOL,
            grid_size: 200,
            constraint_slack: 0.0,
            confidence: 0.95,
            sigma: None,
            first_hit_variables: vec![],
            projection_rmse_warn: 1e-2,
            output_dir: output_dir.to_path_buf(),
            seed: self.seed,
        }
    }
}

/// Synthetic climb scenario: altitude, Mach number and engine speed over a
/// fixed horizon, with a positive quadratic fuel-flow surrogate. A stand-in
/// for recorded flight data, with shape parameters of a narrow-body climb.
#[derive(Clone, Debug)]
pub struct ClimbScenario {
    pub spec: BasisSpec,
    pub variables: Vec<String>,
    pub endpoints: EndpointConditions,
    pub system: EndpointSystem,
    pub base: CoefficientVector,
    pub references: ReferenceSet,
    pub fuel_model: QuadraticInstantaneousCost,
    pub bounds: StateBounds,
    pub acceptance_rate: f64,
    pub seed: u64,
    /// Sampling period of the emitted reference files, seconds.
    pub sample_period: f64,
    /// Standard deviation of the synthetic fuel-flow measurement noise.
    pub fuel_noise_std: f64,
    /// Maximum operational Mach number.
    pub mach_limit: f64,
    /// Rate-of-climb bound, feet per second.
    pub climb_rate_limit: f64,
}

/// Fixed fuel-flow surrogate: positive over the operating box, convex, and
/// decreasing in altitude at fixed engine speed.
pub fn climb_fuel_model() -> QuadraticInstantaneousCost {
    let quadratic = DMatrix::from_partial_diagonal(3, 3, &[5.0e-10, 0.3, 2.0e-4]);
    let linear = DVector::from_vec(vec![-4.0e-5, -0.2, -0.01]);
    QuadraticInstantaneousCost::new(quadratic, linear, 2.2).expect("fixed coefficients")
}

/// Build the climb scenario with the requested reference count.
pub fn climb_scenario(seed: u64, count: usize) -> Result<ClimbScenario, DataGenError> {
    let duration = 1100.0;
    let spec = BasisSpec::new(BasisKind::Legendre, vec![4, 10, 6], duration)?;
    let start = DVector::from_vec(vec![3000.0, 0.30, 94.0]);
    let end = DVector::from_vec(vec![38_000.0, 0.78, 92.0]);
    let tolerance = DVector::from_vec(vec![100.0, 0.01, 5.0]);
    let endpoints = EndpointConditions::new(start, end, tolerance)?;
    let system = endpoint_system(&spec, &endpoints)?;

    // Smoothstep climb: cubic in t, so exactly representable in every block.
    let base = project_and_snap(
        |t| {
            let tau = t / duration;
            let s = tau * tau * (3.0 - 2.0 * tau);
            vec![3000.0 + 35_000.0 * s, 0.30 + 0.48 * s, 94.0 - 2.0 * s]
        },
        &spec,
        &system,
    )?;

    let bounds = StateBounds::new(
        vec![0.0, 0.0, 40.0],
        vec![41_000.0, 0.95, 110.0],
    )?;
    let profile = NoiseProfile::decaying(&spec, &[5000.0, 0.15, 12.0], 0.6)?;
    let generation = GenerationConfig::new(profile, count, seed).with_bounds(bounds.clone());
    let generated = generate_references(&base, &system, &generation)?;

    Ok(ClimbScenario {
        spec,
        variables: vec!["h".into(), "mach".into(), "n1".into()],
        endpoints,
        system,
        base,
        references: generated.references,
        fuel_model: climb_fuel_model(),
        bounds,
        acceptance_rate: generated.acceptance_rate,
        seed,
        sample_period: 5.0,
        fuel_noise_std: 0.01,
        mach_limit: 0.82,
        climb_rate_limit: 60.0,
    })
}

impl ClimbScenario {
    /// Operational constraints: Mach ceiling and rate-of-climb limit.
    pub fn constraint_set(&self) -> ConstraintSet {
        ConstraintSet::new(vec![
            Constraint::upper_bound("mach <= MMO", 1, self.mach_limit),
            Constraint::derivative_upper_bound("climb rate", 0, self.climb_rate_limit),
        ])
    }

    /// Write one CSV per reference into `dir`, including a noisy fuel-flow
    /// column measured from the surrogate model.
    pub fn write_references(&self, dir: &Path) -> Result<usize, DataGenError> {
        std::fs::create_dir_all(dir)?;
        let steps = (self.spec.duration() / self.sample_period).round() as usize;
        let grid = uniform_grid(self.spec.duration(), steps + 1);
        let mut rng = StdRng::from_rng(&mut rand_chacha::ChaCha8Rng::seed_from_u64(
            self.seed ^ 0x66_75_65_6c,
        ));
        let noise = Normal::new(0.0, self.fuel_noise_std).expect("fixed std");
        for (i, reference) in self.references.vectors().iter().enumerate() {
            let samples = reconstruct(reference, &grid)?;
            let fuel: Vec<f64> = (0..samples.len())
                .map(|row| {
                    let state = samples.values().row(row).transpose().into_owned();
                    self.fuel_model.eval(&state) + rng.sample(noise)
                })
                .collect();
            let path = dir.join(format!("flight_{i:04}.csv"));
            write_reference_csv(&path, &samples, &self.variables, Some(("fuel_flow", &fuel)))?;
        }
        Ok(self.references.len())
    }

    /// A ready-to-run configuration for this scenario. The cost is re-fitted
    /// from the emitted fuel-flow column.
    pub fn config(&self, data_dir: &Path, output_dir: &Path) -> RunConfig {
        RunConfig {
            data_dir: data_dir.to_path_buf(),
            variables: self.variables.clone(),
            dims: self.spec.dims().to_vec(),
            duration: Some(self.spec.duration()),
            endpoints: EndpointConfig {
                start: self.endpoints.start().iter().copied().collect(),
                end: self.endpoints.end().iter().copied().collect(),
                tolerance: self.endpoints.tolerance().iter().copied().collect(),
            },
            endpoint_filter_tolerance: None,
            constraints: vec![
                ConstraintConfig::UpperBound {
                    variable: "mach".into(),
                    max: self.mach_limit,
                },
                ConstraintConfig::DerivativeUpperBound {
                    variable: "h".into(),
                    max: self.climb_rate_limit,
                },
            ],
            cost: CostConfig::FitFromData {
                cost_column: "fuel_flow".into(),
            },
            nu_max: 1e4,
            bisection_iters: 20,
            best_count: 5,
            weight_scheme: WeightSchemeConfig::Uniform,
            shrinkage: 0.0,
            rank_rtol: crate::refstats::DEFAULT_RANK_RTOL,
            grid_size: 200,
            constraint_slack: 0.0,
            confidence: 0.95,
            sigma: None,
            first_hit_variables: vec!["h".into(), "mach".into()],
            projection_rmse_warn: 1.0,
            output_dir: output_dir.to_path_buf(),
            seed: self.seed,
        }
    }
}
