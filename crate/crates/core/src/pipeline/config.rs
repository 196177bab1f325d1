//! Run configuration: the JSON document consumed by `optimize` and produced
//! by the scenario generators.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::refstats::WeightScheme;

fn default_bisection_iters() -> usize {
    20
}

fn default_grid_size() -> usize {
    200
}

fn default_rank_rtol() -> f64 {
    crate::refstats::DEFAULT_RANK_RTOL
}

fn default_confidence() -> f64 {
    0.95
}

fn default_projection_rmse_warn() -> f64 {
    1e-2
}

/// Endpoint targets with per-variable tolerances (0 = exact).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EndpointConfig {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub tolerance: Vec<f64>,
}

/// Built-in constraint descriptions; custom constraints enter through the
/// library API.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ConstraintConfig {
    UpperBound { variable: String, max: f64 },
    LowerBound { variable: String, min: f64 },
    DerivativeUpperBound { variable: String, max: f64 },
}

/// Where the instantaneous cost comes from.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum CostConfig {
    /// Fit a degree-2 polynomial to a recorded cost column.
    FitFromData { cost_column: String },
    /// Explicit quadratic `x^T Q x + w^T x + r`.
    Quadratic {
        quadratic: Vec<Vec<f64>>,
        linear: Vec<f64>,
        constant: f64,
    },
    /// Affine force field `V(x) = M x + b` with kinetic trade-off `alpha`.
    ForceField {
        linear: Vec<Vec<f64>>,
        offset: Vec<f64>,
        alpha: f64,
    },
}

/// Penalty weighting scheme.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum WeightSchemeConfig {
    #[default]
    Uniform,
    InverseCostRank,
    User {
        weights: Vec<f64>,
    },
}

impl WeightSchemeConfig {
    pub fn to_scheme(&self) -> WeightScheme {
        match self {
            Self::Uniform => WeightScheme::Uniform,
            Self::InverseCostRank => WeightScheme::InverseCostRank,
            Self::User { weights } => WeightScheme::User(weights.clone()),
        }
    }
}

/// Full run configuration. Field layout mirrors the summary echo so that a
/// summary can be re-run.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory of reference CSV files (one trajectory each).
    pub data_dir: PathBuf,
    /// Variable names in column order.
    pub variables: Vec<String>,
    /// Basis truncation order per variable.
    pub dims: Vec<usize>,
    /// Optimization horizon; defaults to the longest reference duration.
    #[serde(default)]
    pub duration: Option<f64>,
    pub endpoints: EndpointConfig,
    /// Tolerance used when filtering references on their endpoints;
    /// defaults to the optimization tolerance.
    #[serde(default)]
    pub endpoint_filter_tolerance: Option<Vec<f64>>,
    #[serde(default)]
    pub constraints: Vec<ConstraintConfig>,
    pub cost: CostConfig,
    pub nu_max: f64,
    #[serde(default = "default_bisection_iters")]
    pub bisection_iters: usize,
    /// How many of the cheapest references enter the penalty.
    pub best_count: usize,
    #[serde(default)]
    pub weight_scheme: WeightSchemeConfig,
    /// Covariance shrinkage toward the scaled identity, in [0, 1].
    #[serde(default)]
    pub shrinkage: f64,
    #[serde(default = "default_rank_rtol")]
    pub rank_rtol: f64,
    /// Evaluation grid size for constraint checks and emitted trajectories.
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    /// Feasibility slack when classifying admissibility.
    #[serde(default)]
    pub constraint_slack: f64,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Residual standard deviation for the confidence interval when the cost
    /// is not fitted from data.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Variables whose endpoint targets define the first-hit time; empty
    /// disables the search.
    #[serde(default)]
    pub first_hit_variables: Vec<String>,
    #[serde(default = "default_projection_rmse_warn")]
    pub projection_rmse_warn: f64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Structural validation independent of the data on disk.
    pub fn validate(&self) -> Result<(), String> {
        let d = self.variables.len();
        if d == 0 {
            return Err("at least one variable is required".into());
        }
        if self.dims.len() != d {
            return Err(format!("{} dims for {} variables", self.dims.len(), d));
        }
        if self.dims.contains(&0) {
            return Err("every basis order must be at least 1".into());
        }
        if let Some(duration) = self.duration {
            if duration <= 0.0 || !duration.is_finite() {
                return Err(format!("duration must be positive, got {duration}"));
            }
        }
        for (name, v) in [
            ("endpoints.start", &self.endpoints.start),
            ("endpoints.end", &self.endpoints.end),
            ("endpoints.tolerance", &self.endpoints.tolerance),
        ] {
            if v.len() != d {
                return Err(format!("{name} must have {d} entries, got {}", v.len()));
            }
        }
        if let Some(filter) = &self.endpoint_filter_tolerance {
            if filter.len() != d {
                return Err(format!(
                    "endpoint_filter_tolerance must have {d} entries, got {}",
                    filter.len()
                ));
            }
        }
        if self.nu_max <= 0.0 || !self.nu_max.is_finite() {
            return Err(format!("nu_max must be positive, got {}", self.nu_max));
        }
        if self.best_count == 0 {
            return Err("best_count must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.shrinkage) {
            return Err(format!("shrinkage must lie in [0, 1], got {}", self.shrinkage));
        }
        if self.grid_size < 2 {
            return Err("grid_size must be at least 2".into());
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(format!(
                "confidence must lie strictly inside (0, 1), got {}",
                self.confidence
            ));
        }
        for name in &self.first_hit_variables {
            if !self.variables.contains(name) {
                return Err(format!("first_hit variable `{name}` is not a data variable"));
            }
        }
        for constraint in &self.constraints {
            let variable = match constraint {
                ConstraintConfig::UpperBound { variable, .. }
                | ConstraintConfig::LowerBound { variable, .. }
                | ConstraintConfig::DerivativeUpperBound { variable, .. } => variable,
            };
            if !self.variables.contains(variable) {
                return Err(format!("constraint variable `{variable}` is not a data variable"));
            }
        }
        match &self.cost {
            CostConfig::FitFromData { cost_column } => {
                if cost_column.is_empty() {
                    return Err("cost_column must be non-empty".into());
                }
            }
            CostConfig::Quadratic {
                quadratic, linear, ..
            } => {
                if quadratic.len() != d || quadratic.iter().any(|row| row.len() != d) {
                    return Err(format!("cost quadratic must be {d}x{d}"));
                }
                if linear.len() != d {
                    return Err(format!("cost linear must have {d} entries"));
                }
            }
            CostConfig::ForceField { linear, offset, alpha } => {
                if linear.len() != d || linear.iter().any(|row| row.len() != d) {
                    return Err(format!("field matrix must be {d}x{d}"));
                }
                if offset.len() != d {
                    return Err(format!("field offset must have {d} entries"));
                }
                if *alpha < 0.0 {
                    return Err(format!("alpha must be non-negative, got {alpha}"));
                }
            }
        }
        Ok(())
    }

    /// Endpoint filter tolerance, defaulting to the optimization tolerance.
    pub fn filter_tolerance(&self) -> Vec<f64> {
        self.endpoint_filter_tolerance
            .clone()
            .unwrap_or_else(|| self.endpoints.tolerance.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> RunConfig {
        RunConfig {
            data_dir: "refs".into(),
            variables: vec!["x".into(), "y".into()],
            dims: vec![4, 6],
            duration: Some(1.0),
            endpoints: EndpointConfig {
                start: vec![0.0, 1.0],
                end: vec![1.0, 0.0],
                tolerance: vec![0.0, 0.0],
            },
            endpoint_filter_tolerance: None,
            constraints: vec![],
            cost: CostConfig::ForceField {
                linear: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
                offset: vec![0.0, 0.0],
                alpha: 0.5,
            },
            nu_max: 100.0,
            bisection_iters: 20,
            best_count: 10,
            weight_scheme: WeightSchemeConfig::Uniform,
            shrinkage: 0.0,
            rank_rtol: 1e-10,
            grid_size: 200,
            constraint_slack: 0.0,
            confidence: 0.95,
            sigma: None,
            first_hit_variables: vec![],
            projection_rmse_warn: 1e-2,
            output_dir: "out".into(),
            seed: 7,
        }
    }

    #[test]
    fn json_round_trip_is_identity() {
        let config = minimal();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn validation_catches_shape_errors() {
        let mut config = minimal();
        config.dims = vec![4];
        assert!(config.validate().is_err());

        let mut config = minimal();
        config.endpoints.start = vec![0.0];
        assert!(config.validate().is_err());

        let mut config = minimal();
        config.nu_max = 0.0;
        assert!(config.validate().is_err());

        let mut config = minimal();
        config.constraints = vec![ConstraintConfig::UpperBound {
            variable: "missing".into(),
            max: 1.0,
        }];
        assert!(config.validate().is_err());

        assert!(minimal().validate().is_ok());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut value = serde_json::to_value(minimal()).unwrap();
        value["surprise"] = serde_json::json!(1);
        assert!(serde_json::from_value::<RunConfig>(value).is_err());
    }
}
