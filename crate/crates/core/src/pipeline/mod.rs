//! End-to-end orchestration: configuration, reference ingestion, the full
//! optimization chain, reports and output files. This is the surface the
//! command line drives.
//!
//! A run executes the fixed chain ingest, cost model, selection, weights,
//! covariance (with kernel projection), decomposition, assembly, reduction,
//! convexity certificate, cost-weight bisection against the configured
//! constraints, and finally reports plus three output files. Errors carry
//! the stage they happened in.

pub mod config;
pub mod ingest;
pub mod outputs;
pub mod report;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::basis::{BasisError, BasisKind, BasisSpec};
use crate::cost::{
    assemble_forcefield, assemble_quadratic, fit_quadratic_cost, reduce_cost,
    AssembledQuadraticCost, CostError, ForceFieldSpec, InstantaneousModel,
    QuadraticInstantaneousCost,
};
use crate::optimizer::{
    build_map_problem, solve_reduced, tune_nu, weyl_certificate, OptimizerError, Solution,
    SolveDiagnostics,
};
use crate::refstats::{
    compute_weights, decompose, estimate_covariance, project_to_kernel, CovarianceEstimator,
    ReferenceSet, RefStatsError,
};
use crate::trajectory::{
    check_constraints, endpoint_system, reconstruct, uniform_grid, Constraint, ConstraintReport,
    ConstraintSet, EndpointConditions, TrajectoryError, TrajectorySamples,
};
use crate::uncertainty::{confidence_interval, CostNoiseModel, UncertaintyError};

pub use config::{ConstraintConfig, CostConfig, EndpointConfig, RunConfig, WeightSchemeConfig};
pub use ingest::{load_references, parse_csv_file, FileReport, IngestError};
pub use outputs::{OutputError, OutputPaths};
pub use report::{find_first_hit, savings_report, ReportError, SavingsReport, SavingsStats};

/// What went wrong, independent of the stage.
#[derive(Error, Debug)]
pub enum PipelineErrorKind {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Ingest(#[from] IngestError),

    #[error(transparent)]
    Basis(#[from] BasisError),

    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),

    #[error(transparent)]
    RefStats(#[from] RefStatsError),

    #[error(transparent)]
    Cost(#[from] CostError),

    #[error(transparent)]
    Optimizer(#[from] OptimizerError),

    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),

    #[error(transparent)]
    Report(#[from] ReportError),

    #[error(transparent)]
    Output(#[from] OutputError),
}

/// A failure labeled with the pipeline stage it happened in.
#[derive(Error, Debug)]
#[error("stage `{stage}`: {kind}")]
pub struct PipelineError {
    pub stage: &'static str,
    #[source]
    pub kind: PipelineErrorKind,
}

impl PipelineError {
    fn at(stage: &'static str) -> impl FnOnce(PipelineErrorKind) -> Self {
        move |kind| Self { stage, kind }
    }
}

fn stage<T, E: Into<PipelineErrorKind>>(
    name: &'static str,
    result: Result<T, E>,
) -> Result<T, PipelineError> {
    result.map_err(|e| PipelineError::at(name)(e.into()))
}

/// Covariance diagnostics echoed into the summary.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CovarianceSummary {
    pub rank: usize,
    pub shrinkage: f64,
    /// Commutation residual of the estimated covariance before the kernel
    /// projection.
    pub commutation_residual: f64,
    /// Spread of the data-pinned coordinates across references.
    pub data_coord_spread: f64,
    /// Dimension of the data-pinned subspace.
    pub data_directions: usize,
}

/// Convexity summary of a run.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ConvexitySummary {
    pub rho_sigma: f64,
    pub lambda_max: f64,
    pub kappa_min: f64,
    /// Largest certified-convex cost weight, if bounded.
    pub certified_nu_max: Option<f64>,
    /// Whether the returned weight is inside the certified range.
    pub certified_at_nu_star: bool,
}

/// Confidence interval on the optimized cost.
#[derive(Clone, Debug, serde::Serialize)]
pub struct IntervalSummary {
    pub confidence: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
}

/// The serializable summary of a run; identical configurations and seeds
/// produce byte-identical summaries.
#[derive(Clone, Debug, serde::Serialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub duration: f64,
    pub files: Vec<FileReport>,
    pub accepted_count: usize,
    pub selected: Vec<String>,
    pub covariance: CovarianceSummary,
    pub convexity: ConvexitySummary,
    pub nu_star: f64,
    /// `kappa = 1 / nu` for reporting; absent when `nu* = 0`.
    pub kappa_star: Option<f64>,
    /// True when the `nu_max` solution was already admissible.
    pub saturated: bool,
    pub bisection_evaluations: usize,
    pub objective: f64,
    pub optimized_cost: f64,
    pub penalty: f64,
    pub solver: SolveDiagnostics,
    pub endpoint_residual: f64,
    pub admissibility: ConstraintReport,
    pub savings: SavingsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence_interval: Option<IntervalSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_hit_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_diagnostics: Option<FitSummary>,
}

/// Quality of the fitted cost model, when the cost came from data.
#[derive(Clone, Debug, serde::Serialize)]
pub struct FitSummary {
    pub residual_std: f64,
    pub rmse: f64,
    pub mape_percent: f64,
}

/// The outcome of a full run.
#[derive(Debug)]
pub struct RunResult {
    pub summary: RunSummary,
    pub solution: Solution,
    pub paths: OutputPaths,
}

enum CostModel {
    Quadratic(QuadraticInstantaneousCost),
    ForceField(ForceFieldSpec),
}

impl CostModel {
    fn as_model(&self) -> &dyn InstantaneousModel {
        match self {
            Self::Quadratic(q) => q,
            Self::ForceField(f) => f,
        }
    }

    fn assemble(&self, spec: &BasisSpec) -> Result<AssembledQuadraticCost, CostError> {
        match self {
            Self::Quadratic(q) => assemble_quadratic(q, spec),
            Self::ForceField(f) => assemble_forcefield(f, spec),
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

fn build_constraints(
    config: &RunConfig,
    extra: Vec<Constraint>,
) -> Result<ConstraintSet, PipelineError> {
    let index_of = |variable: &str| -> Result<usize, PipelineError> {
        config
            .variables
            .iter()
            .position(|v| v == variable)
            .ok_or_else(|| {
                PipelineError::at("config")(PipelineErrorKind::Config(format!(
                    "unknown constraint variable `{variable}`"
                )))
            })
    };
    let mut constraints = Vec::new();
    for entry in &config.constraints {
        let constraint = match entry {
            ConstraintConfig::UpperBound { variable, max } => {
                Constraint::upper_bound(format!("{variable} <= {max}"), index_of(variable)?, *max)
            }
            ConstraintConfig::LowerBound { variable, min } => {
                Constraint::lower_bound(format!("{variable} >= {min}"), index_of(variable)?, *min)
            }
            ConstraintConfig::DerivativeUpperBound { variable, max } => {
                Constraint::derivative_upper_bound(
                    format!("d{variable}/dt <= {max}"),
                    index_of(variable)?,
                    *max,
                )
            }
        };
        constraints.push(constraint);
    }
    constraints.extend(extra);
    Ok(ConstraintSet::new(constraints).with_slack(config.constraint_slack))
}

/// Run the full optimization chain described by the configuration.
pub fn run_optimization(config: &RunConfig) -> Result<RunResult, PipelineError> {
    run_optimization_with_constraints(config, Vec::new())
}

/// Library entry point that accepts additional custom constraints on top of
/// the configured built-ins.
pub fn run_optimization_with_constraints(
    config: &RunConfig,
    extra_constraints: Vec<Constraint>,
) -> Result<RunResult, PipelineError> {
    stage(
        "config",
        config.validate().map_err(PipelineErrorKind::Config),
    )?;

    // Ingest: resolve the horizon, parse, filter and project every file.
    let duration = stage("ingest", ingest::resolve_duration(config))?;
    let spec = stage(
        "ingest",
        BasisSpec::new(BasisKind::Legendre, config.dims.clone(), duration),
    )?;
    let ingestion = stage("ingest", load_references(&spec, config))?;
    let accepted = &ingestion.accepted;

    // Cost model: fitted from recorded data or taken from the configuration.
    let mut fit_summary = None;
    let mut sigma = config.sigma;
    let cost_model = match &config.cost {
        CostConfig::FitFromData { .. } => {
            let mut states: Vec<Vec<f64>> = Vec::new();
            let mut costs: Vec<f64> = Vec::new();
            for reference in accepted {
                let recorded = reference.cost_samples.as_ref().expect("ingest enforced");
                for (i, &value) in recorded.iter().enumerate() {
                    states.push(
                        (0..reference.samples.dim_count())
                            .map(|d| reference.samples.values()[(i, d)])
                            .collect(),
                    );
                    costs.push(value);
                }
            }
            let design = matrix_from_rows(&states);
            let targets = DVector::from_vec(costs);
            let (fitted, diagnostics) =
                stage("cost-model", fit_quadratic_cost(&design, &targets))?;
            fit_summary = Some(FitSummary {
                residual_std: diagnostics.residual_std,
                rmse: diagnostics.rmse,
                mape_percent: diagnostics.mape,
            });
            sigma = sigma.or(Some(diagnostics.residual_std));
            CostModel::Quadratic(fitted)
        }
        CostConfig::Quadratic {
            quadratic,
            linear,
            constant,
        } => CostModel::Quadratic(stage(
            "cost-model",
            QuadraticInstantaneousCost::new(
                matrix_from_rows(quadratic),
                DVector::from_vec(linear.clone()),
                *constant,
            ),
        )?),
        CostConfig::ForceField {
            linear,
            offset,
            alpha,
        } => CostModel::ForceField(stage(
            "cost-model",
            ForceFieldSpec::new(
                matrix_from_rows(linear),
                DVector::from_vec(offset.clone()),
                *alpha,
            ),
        )?),
    };

    // Assemble the cost and rank the references by it.
    let assembled = stage("assemble", cost_model.assemble(&spec))?;
    let reference_costs: Vec<f64> = accepted
        .iter()
        .map(|r| assembled.eval(r.coefficients.values()))
        .collect();

    // Select the cheapest references for the penalty; the covariance uses
    // all accepted ones.
    let best_count = config.best_count.min(accepted.len());
    let mut order: Vec<usize> = (0..accepted.len()).collect();
    order.sort_by(|&a, &b| {
        reference_costs[a]
            .partial_cmp(&reference_costs[b])
            .expect("finite costs")
            .then(a.cmp(&b))
    });
    let selected_indices = &order[..best_count];
    let selected_names: Vec<String> = selected_indices
        .iter()
        .map(|&i| accepted[i].name.clone())
        .collect();
    let selected_costs: Vec<f64> = selected_indices
        .iter()
        .map(|&i| reference_costs[i])
        .collect();
    let weights = stage(
        "weights",
        compute_weights(
            best_count,
            Some(&selected_costs),
            &config.weight_scheme.to_scheme(),
        ),
    )?;
    let selected_refs = stage(
        "weights",
        ReferenceSet::new(
            selected_indices
                .iter()
                .map(|&i| accepted[i].coefficients.clone())
                .collect(),
            weights,
            Some(selected_costs),
        ),
    )?;
    let all_refs = stage(
        "covariance",
        ReferenceSet::with_uniform_weights(
            accepted.iter().map(|r| r.coefficients.clone()).collect(),
            Some(reference_costs.clone()),
        ),
    )?;

    // Covariance, kernel projection and the subspace decomposition.
    let endpoints = stage(
        "covariance",
        EndpointConditions::new(
            DVector::from_vec(config.endpoints.start.clone()),
            DVector::from_vec(config.endpoints.end.clone()),
            DVector::from_vec(config.endpoints.tolerance.clone()),
        ),
    )?;
    let system = stage("covariance", endpoint_system(&spec, &endpoints))?;
    let estimator = CovarianceEstimator {
        shrinkage: config.shrinkage,
        rank_rtol: config.rank_rtol,
    };
    let raw_covariance = stage("covariance", estimate_covariance(&all_refs, &estimator))?;
    let (covariance, commutation_residual) =
        stage("covariance", project_to_kernel(&raw_covariance, &system))?;
    let decomposition = stage(
        "decompose",
        decompose(&covariance, &system, &all_refs, config.rank_rtol),
    )?;

    // Reduce the cost and certify convexity at the largest weight.
    let reduced = stage("reduce", reduce_cost(&assembled, &decomposition))?;
    let certificate_at_max = weyl_certificate(
        reduced.quadratic(),
        decomposition.covariance_eigenvalues(),
        1.0 / config.nu_max,
    );

    // Bisection over the cost weight against the configured constraints.
    let tolerance: Vec<f64> = config.endpoints.tolerance.clone();
    let problem = stage(
        "tune_nu",
        build_map_problem(
            &reduced,
            &decomposition,
            &selected_refs,
            0.0,
            Some((&system, tolerance.as_slice())),
        ),
    )?;
    let constraints = build_constraints(config, extra_constraints)?;
    let grid = uniform_grid(duration, config.grid_size);
    let search = stage(
        "tune_nu",
        tune_nu(
            |nu| solve_reduced(&problem.with_nu(nu)?),
            |solution| {
                let samples = reconstruct(&solution.coefficients, &grid)?;
                Ok(check_constraints(&samples, &constraints)?.admissible)
            },
            config.nu_max,
            config.bisection_iters,
        ),
    )?;
    let solution = search.solution.clone();

    // Reports.
    let optimized_samples = stage("report", reconstruct(&solution.coefficients, &grid))?;
    let admissibility = stage(
        "report",
        check_constraints(&optimized_samples, &constraints),
    )?;
    let endpoint_residual = system.residual(solution.coefficients.values());
    let named_costs: Vec<(String, f64)> = accepted
        .iter()
        .zip(&reference_costs)
        .map(|(r, &c)| (r.name.clone(), c))
        .collect();
    let savings = stage("report", savings_report(solution.cost, &named_costs))?;

    let interval = match sigma {
        Some(sigma) if sigma > 0.0 => {
            let model = stage("report", CostNoiseModel::new(sigma, duration))?;
            let (lower, upper) = stage(
                "report",
                confidence_interval(solution.cost, &model, config.confidence),
            )?;
            Some(IntervalSummary {
                confidence: config.confidence,
                sigma,
                lower,
                upper,
            })
        }
        _ => None,
    };

    let first_hit_time = if config.first_hit_variables.is_empty() {
        None
    } else {
        let targets: Vec<(usize, f64, f64)> = config
            .first_hit_variables
            .iter()
            .map(|name| {
                let d = config
                    .variables
                    .iter()
                    .position(|v| v == name)
                    .expect("validated");
                (d, config.endpoints.end[d], config.endpoints.tolerance[d])
            })
            .collect();
        find_first_hit(&optimized_samples, &targets)
    };

    let certified_at_star = if search.nu > 0.0 {
        weyl_certificate(
            reduced.quadratic(),
            decomposition.covariance_eigenvalues(),
            1.0 / search.nu,
        )
        .certified
    } else {
        true
    };

    let summary = RunSummary {
        config: config.clone(),
        duration,
        files: ingestion.reports.clone(),
        accepted_count: accepted.len(),
        selected: selected_names,
        covariance: CovarianceSummary {
            rank: covariance.rank(),
            shrinkage: config.shrinkage,
            commutation_residual,
            data_coord_spread: decomposition.data_coord_spread(),
            data_directions: decomposition.data_directions().ncols(),
        },
        convexity: ConvexitySummary {
            rho_sigma: certificate_at_max.rho_sigma,
            lambda_max: certificate_at_max.lambda_max,
            kappa_min: certificate_at_max.kappa_min,
            certified_nu_max: certificate_at_max.certified_nu_max(),
            certified_at_nu_star: certified_at_star,
        },
        nu_star: search.nu,
        kappa_star: (search.nu > 0.0).then(|| 1.0 / search.nu),
        saturated: search.saturated,
        bisection_evaluations: search.evaluations,
        objective: solution.objective,
        optimized_cost: solution.cost,
        penalty: solution.penalty,
        solver: solution.diagnostics.clone(),
        endpoint_residual,
        admissibility,
        savings,
        confidence_interval: interval,
        first_hit_time,
        fit_diagnostics: fit_summary,
    };

    // Output files.
    stage(
        "emit",
        std::fs::create_dir_all(&config.output_dir).map_err(|source| {
            PipelineErrorKind::Output(OutputError::Io {
                path: config.output_dir.clone(),
                source,
            })
        }),
    )?;
    let derivatives = {
        let mut values = DMatrix::zeros(grid.len(), spec.dim_count());
        for (i, &t) in grid.iter().enumerate() {
            let d = stage("emit", solution.coefficients.evaluate_derivative_at(t))?;
            for j in 0..spec.dim_count() {
                values[(i, j)] = d[j];
            }
        }
        stage("emit", TrajectorySamples::new(grid.clone(), values))?
    };
    let trajectory_path = stage(
        "emit",
        outputs::write_trajectory_csv(
            &config.output_dir,
            &optimized_samples,
            &config.variables,
            cost_model.as_model(),
            &derivatives,
        ),
    )?;
    let reference_series: Vec<(String, TrajectorySamples)> = accepted
        .iter()
        .map(|r| reconstruct(&r.coefficients, &grid).map(|samples| (r.name.clone(), samples)))
        .collect::<Result<_, _>>()
        .map_err(|e| PipelineError::at("emit")(PipelineErrorKind::Trajectory(e)))?;
    let plot_path = stage(
        "emit",
        outputs::write_plot_data_csv(
            &config.output_dir,
            &optimized_samples,
            &reference_series,
            &config.variables,
        ),
    )?;
    let summary_path = stage(
        "emit",
        outputs::write_summary_json(&config.output_dir, &summary),
    )?;

    Ok(RunResult {
        summary,
        solution,
        paths: OutputPaths {
            trajectory: trajectory_path,
            summary: summary_path,
            plot_data: plot_path,
        },
    })
}

/// Exit code mapping used by the command line.
pub fn exit_code(error: &PipelineError) -> i32 {
    match &error.kind {
        PipelineErrorKind::Config(_) => 2,
        PipelineErrorKind::Ingest(_) => 3,
        PipelineErrorKind::Optimizer(OptimizerError::NoAdmissibleSolution) => 4,
        _ => 5,
    }
}
