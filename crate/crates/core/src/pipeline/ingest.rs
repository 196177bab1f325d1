//! Reference ingestion: one CSV file per trajectory, `time` column plus the
//! configured variables, parsed and projected onto the basis. Files are
//! processed in filename order so results are deterministic.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::basis::BasisSpec;
use crate::trajectory::{project, reconstruct, CoefficientVector, TrajectorySamples};

use super::config::RunConfig;

#[derive(Error, Debug)]
pub enum IngestError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("`{file}` is missing the required column `{column}`")]
    MissingColumn { file: String, column: String },

    #[error("`{file}` row {row}: cannot parse `{value}` as a number")]
    Parse {
        file: String,
        row: usize,
        value: String,
    },

    #[error("`{file}` row {row}: time values must be strictly increasing")]
    UnsortedTime { file: String, row: usize },

    #[error("`{file}`: {source}")]
    Csv {
        file: String,
        source: csv::Error,
    },

    #[error("`{file}`: {reason}")]
    Invalid { file: String, reason: String },

    #[error("no reference files found in `{0}`")]
    NoFiles(PathBuf),

    #[error("no reference was accepted; per-file reports: {0:?}")]
    EmptySet(Vec<String>),
}

/// A parsed reference file before projection.
#[derive(Clone, Debug)]
pub struct RawTrajectory {
    pub name: String,
    pub samples: TrajectorySamples,
    pub cost_samples: Option<Vec<f64>>,
}

/// Per-file ingestion outcome, echoed into the run summary.
#[derive(Clone, Debug, serde::Serialize)]
pub struct FileReport {
    pub file: String,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<String>,
    /// Per-variable RMSE between the raw samples and their projection.
    pub projection_rmse: Vec<f64>,
    /// True when any per-variable RMSE exceeds the configured threshold.
    pub projection_warning: bool,
}

/// An accepted, projected reference.
#[derive(Clone, Debug)]
pub struct AcceptedReference {
    pub name: String,
    pub coefficients: CoefficientVector,
    pub samples: TrajectorySamples,
    pub cost_samples: Option<Vec<f64>>,
}

/// The full ingestion result.
#[derive(Debug)]
pub struct Ingestion {
    pub accepted: Vec<AcceptedReference>,
    pub reports: Vec<FileReport>,
    /// Horizon used for projection (configured or longest reference).
    pub duration: f64,
}

/// Parse one reference CSV: `time` column plus the named variables, and
/// optionally a recorded cost column.
pub fn parse_csv_file(
    path: &Path,
    variables: &[String],
    cost_column: Option<&str>,
) -> Result<RawTrajectory, IngestError> {
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => IngestError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        },
        _ => IngestError::Csv {
            file: name.clone(),
            source: e,
        },
    })?;
    let headers = reader
        .headers()
        .map_err(|source| IngestError::Csv {
            file: name.clone(),
            source,
        })?
        .clone();
    let find = |column: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h.trim() == column)
            .ok_or_else(|| IngestError::MissingColumn {
                file: name.clone(),
                column: column.to_string(),
            })
    };
    let time_index = find("time")?;
    let variable_indices: Vec<usize> = variables
        .iter()
        .map(|v| find(v.as_str()))
        .collect::<Result<_, _>>()?;
    let cost_index = cost_column.map(find).transpose()?;

    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut costs = Vec::new();
    for (row_number, record) in reader.records().enumerate() {
        let record = record.map_err(|source| IngestError::Csv {
            file: name.clone(),
            source,
        })?;
        let parse = |index: usize| -> Result<f64, IngestError> {
            let raw = record.get(index).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| IngestError::Parse {
                file: name.clone(),
                row: row_number + 2,
                value: raw.to_string(),
            })
        };
        let t = parse(time_index)?;
        if let Some(&last) = times.last() {
            if t <= last {
                return Err(IngestError::UnsortedTime {
                    file: name.clone(),
                    row: row_number + 2,
                });
            }
        }
        times.push(t);
        let mut row = Vec::with_capacity(variable_indices.len());
        for &i in &variable_indices {
            row.push(parse(i)?);
        }
        rows.push(row);
        if let Some(i) = cost_index {
            costs.push(parse(i)?);
        }
    }
    let dims = variables.len();
    let values = DMatrix::from_fn(rows.len(), dims, |i, d| rows[i][d]);
    let samples = TrajectorySamples::new(times, values).map_err(|e| IngestError::Invalid {
        file: name.clone(),
        reason: e.to_string(),
    })?;
    Ok(RawTrajectory {
        name,
        samples,
        cost_samples: cost_index.map(|_| costs),
    })
}

fn endpoint_mismatch(
    samples: &TrajectorySamples,
    config: &RunConfig,
    filter: &[f64],
) -> Option<String> {
    let first = 0;
    let last = samples.len() - 1;
    for (d, variable) in config.variables.iter().enumerate() {
        let start = samples.values()[(first, d)];
        let end = samples.values()[(last, d)];
        if (start - config.endpoints.start[d]).abs() > filter[d] {
            return Some(format!(
                "`{variable}` starts at {start}, expected {} within {}",
                config.endpoints.start[d], filter[d]
            ));
        }
        if (end - config.endpoints.end[d]).abs() > filter[d] {
            return Some(format!(
                "`{variable}` ends at {end}, expected {} within {}",
                config.endpoints.end[d], filter[d]
            ));
        }
    }
    None
}

/// Load every `.csv` file under the data directory, project the accepted
/// ones and report the rest. References failing the endpoint filter or the
/// interval coverage are rejected per file, not fatally.
pub fn load_references(spec: &BasisSpec, config: &RunConfig) -> Result<Ingestion, IngestError> {
    let dir = &config.data_dir;
    let entries = std::fs::read_dir(dir).map_err(|source| IngestError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(IngestError::NoFiles(dir.clone()));
    }

    let cost_column = match &config.cost {
        super::config::CostConfig::FitFromData { cost_column } => Some(cost_column.as_str()),
        _ => None,
    };
    let raw: Vec<RawTrajectory> = paths
        .iter()
        .map(|p| parse_csv_file(p, &config.variables, cost_column))
        .collect::<Result<_, _>>()?;

    let filter = config.filter_tolerance();
    let mut accepted = Vec::new();
    let mut reports = Vec::new();
    for trajectory in raw {
        if let Some(reason) = endpoint_mismatch(&trajectory.samples, config, &filter) {
            reports.push(FileReport {
                file: trajectory.name,
                accepted: false,
                reject_reason: Some(reason),
                projection_rmse: Vec::new(),
                projection_warning: false,
            });
            continue;
        }
        let coefficients = match project(&trajectory.samples, spec) {
            Ok(c) => c,
            Err(e) => {
                reports.push(FileReport {
                    file: trajectory.name,
                    accepted: false,
                    reject_reason: Some(e.to_string()),
                    projection_rmse: Vec::new(),
                    projection_warning: false,
                });
                continue;
            }
        };
        let rebuilt = reconstruct(&coefficients, trajectory.samples.times())
            .expect("sample times lie inside the basis interval");
        let n = trajectory.samples.len() as f64;
        let projection_rmse: Vec<f64> = (0..config.variables.len())
            .map(|d| {
                let sum: f64 = (0..trajectory.samples.len())
                    .map(|i| {
                        let diff =
                            trajectory.samples.values()[(i, d)] - rebuilt.values()[(i, d)];
                        diff * diff
                    })
                    .sum();
                (sum / n).sqrt()
            })
            .collect();
        let projection_warning = projection_rmse
            .iter()
            .any(|&r| r > config.projection_rmse_warn);
        reports.push(FileReport {
            file: trajectory.name.clone(),
            accepted: true,
            reject_reason: None,
            projection_rmse,
            projection_warning,
        });
        accepted.push(AcceptedReference {
            name: trajectory.name,
            coefficients,
            samples: trajectory.samples,
            cost_samples: trajectory.cost_samples,
        });
    }
    if accepted.is_empty() {
        let summary: Vec<String> = reports
            .iter()
            .map(|r| {
                format!(
                    "{}: {}",
                    r.file,
                    r.reject_reason.as_deref().unwrap_or("rejected")
                )
            })
            .collect();
        return Err(IngestError::EmptySet(summary));
    }
    Ok(Ingestion {
        accepted,
        reports,
        duration: spec.duration(),
    })
}

/// The horizon to project on: the configured duration, or the longest final
/// time among the reference files.
pub fn resolve_duration(config: &RunConfig) -> Result<f64, IngestError> {
    if let Some(duration) = config.duration {
        return Ok(duration);
    }
    let entries = std::fs::read_dir(&config.data_dir).map_err(|source| IngestError::Io {
        path: config.data_dir.clone(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(IngestError::NoFiles(config.data_dir.clone()));
    }
    let mut longest: f64 = 0.0;
    for path in &paths {
        let raw = parse_csv_file(path, &config.variables, None)?;
        let last = *raw.samples.times().last().expect("validated non-empty");
        longest = longest.max(last);
    }
    if longest <= 0.0 {
        return Err(IngestError::Invalid {
            file: config.data_dir.display().to_string(),
            reason: "could not infer a positive duration from the data".into(),
        });
    }
    Ok(longest)
}
