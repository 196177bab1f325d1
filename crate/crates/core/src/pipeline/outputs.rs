//! Output files of a run: the optimized trajectory, the JSON summary and the
//! plot-data overlay of optimized versus reference series.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cost::InstantaneousModel;
use crate::trajectory::TrajectorySamples;

#[derive(Error, Debug)]
pub enum OutputError {
    #[error("cannot write `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot write `{path}`: {source}")]
    Csv { path: PathBuf, source: csv::Error },

    #[error("cannot serialize the run summary: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Paths of the emitted files.
#[derive(Clone, Debug, serde::Serialize)]
pub struct OutputPaths {
    pub trajectory: PathBuf,
    pub summary: PathBuf,
    pub plot_data: PathBuf,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, OutputError> {
    csv::Writer::from_path(path).map_err(|source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

/// Write `optimized_trajectory.csv`: time, one column per variable, and the
/// instantaneous cost along the trajectory.
pub fn write_trajectory_csv(
    dir: &Path,
    samples: &TrajectorySamples,
    variables: &[String],
    model: &dyn InstantaneousModel,
    derivatives: &TrajectorySamples,
) -> Result<PathBuf, OutputError> {
    let path = dir.join("optimized_trajectory.csv");
    let mut writer = csv_writer(&path)?;
    let mut header = vec!["time".to_string()];
    header.extend(variables.iter().cloned());
    header.push("instantaneous_cost".into());
    let wrap = |source: csv::Error| OutputError::Csv {
        path: path.clone(),
        source,
    };
    writer.write_record(&header).map_err(wrap)?;
    for i in 0..samples.len() {
        let mut row = vec![samples.times()[i].to_string()];
        let value = samples.values().row(i).transpose().into_owned();
        let derivative = derivatives.values().row(i).transpose().into_owned();
        for d in 0..samples.dim_count() {
            row.push(value[d].to_string());
        }
        row.push(model.integrand(&value, &derivative).to_string());
        writer.write_record(&row).map_err(wrap)?;
    }
    writer.flush().map_err(|source| OutputError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Write `plot_data.csv`: the optimized series next to every accepted
/// reference reconstructed on the same grid.
pub fn write_plot_data_csv(
    dir: &Path,
    optimized: &TrajectorySamples,
    references: &[(String, TrajectorySamples)],
    variables: &[String],
) -> Result<PathBuf, OutputError> {
    let path = dir.join("plot_data.csv");
    let mut writer = csv_writer(&path)?;
    let wrap = |source: csv::Error| OutputError::Csv {
        path: path.clone(),
        source,
    };
    let mut header = vec!["time".to_string()];
    for variable in variables {
        header.push(format!("optimized_{variable}"));
    }
    for (name, _) in references {
        let stem = name.strip_suffix(".csv").unwrap_or(name);
        for variable in variables {
            header.push(format!("{stem}_{variable}"));
        }
    }
    writer.write_record(&header).map_err(wrap)?;
    for i in 0..optimized.len() {
        let mut row = vec![optimized.times()[i].to_string()];
        for d in 0..optimized.dim_count() {
            row.push(optimized.values()[(i, d)].to_string());
        }
        for (_, reference) in references {
            for d in 0..reference.dim_count() {
                row.push(reference.values()[(i, d)].to_string());
            }
        }
        writer.write_record(&row).map_err(wrap)?;
    }
    writer.flush().map_err(|source| OutputError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Serialize the summary as pretty JSON. Field order is fixed by the struct,
/// so identical runs produce identical bytes.
pub fn write_summary_json<T: serde::Serialize>(
    dir: &Path,
    summary: &T,
) -> Result<PathBuf, OutputError> {
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(&path, text.as_bytes()).map_err(|source| OutputError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}
