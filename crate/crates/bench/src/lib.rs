//! Shared fixtures for the benchmarks: a mid-sized problem with the climb
//! basis orders and a planar force-field problem.

use nalgebra::{DMatrix, DVector};
use trajmap::basis::{BasisKind, BasisSpec};
use trajmap::cost::{assemble_quadratic, reduce_cost, QuadraticInstantaneousCost};
use trajmap::datagen::{generate_references, GenerationConfig, NoiseProfile, project_and_snap};
use trajmap::optimizer::{build_map_problem, MapProblem};
use trajmap::refstats::{
    decompose, estimate_covariance, project_to_kernel, CovarianceEstimator, ReferenceSet,
    SubspaceDecomposition, DEFAULT_RANK_RTOL,
};
use trajmap::trajectory::{endpoint_system, EndpointConditions, EndpointSystem};

pub struct Fixture {
    pub spec: BasisSpec,
    pub system: EndpointSystem,
    pub references: ReferenceSet,
    pub decomposition: SubspaceDecomposition,
    pub problem: MapProblem,
}

/// A 20-coefficient three-variable problem with 48 references.
pub fn standard_fixture() -> Fixture {
    let duration = 1000.0;
    let spec = BasisSpec::new(BasisKind::Legendre, vec![4, 10, 6], duration).unwrap();
    let endpoints = EndpointConditions::exact(
        DVector::from_vec(vec![0.0, 0.3, 0.9]),
        DVector::from_vec(vec![1.0, 0.8, 0.7]),
    )
    .unwrap();
    let system = endpoint_system(&spec, &endpoints).unwrap();
    let base = project_and_snap(
        |t| {
            let tau = t / duration;
            let s = tau * tau * (3.0 - 2.0 * tau);
            vec![s, 0.3 + 0.5 * s, 0.9 - 0.2 * s]
        },
        &spec,
        &system,
    )
    .unwrap();
    let profile = NoiseProfile::per_dimension(&spec, &[0.9, 0.4, 0.5]).unwrap();
    let generated =
        generate_references(&base, &system, &GenerationConfig::new(profile, 48, 7)).unwrap();
    let references = generated.references;

    let covariance = estimate_covariance(&references, &CovarianceEstimator::default()).unwrap();
    let (projected, _) = project_to_kernel(&covariance, &system).unwrap();
    let decomposition = decompose(&projected, &system, &references, DEFAULT_RANK_RTOL).unwrap();

    let cost = QuadraticInstantaneousCost::new(
        DMatrix::from_partial_diagonal(3, 3, &[0.5, 0.3, 0.2]),
        DVector::from_vec(vec![-0.1, 0.2, 0.0]),
        1.0,
    )
    .unwrap();
    let assembled = assemble_quadratic(&cost, &spec).unwrap();
    let reduced = reduce_cost(&assembled, &decomposition).unwrap();
    let problem = build_map_problem(&reduced, &decomposition, &references, 2.0, None).unwrap();

    Fixture {
        spec,
        system,
        references,
        decomposition,
        problem,
    }
}
