//! Savings statistics and first-hit detection.

use thiserror::Error;

use crate::trajectory::TrajectorySamples;

#[derive(Error, Debug)]
pub enum ReportError {
    #[error("savings need at least one reference cost")]
    NoReferences,

    #[error("reference {index} has zero cost; percentage savings undefined")]
    ZeroReferenceCost { index: usize },
}

/// Summary statistics in the usual descriptive order.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SavingsStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub max: f64,
}

impl SavingsStats {
    fn describe(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite savings"));
        Self {
            mean,
            std,
            min: sorted[0],
            q1: quantile(&sorted, 0.25),
            q2: quantile(&sorted, 0.50),
            q3: quantile(&sorted, 0.75),
            max: sorted[n - 1],
        }
    }
}

/// Inclusive linear-interpolation quantile of pre-sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let position = p * (n - 1) as f64;
    let lower = position.floor() as usize;
    let upper = position.ceil() as usize;
    let fraction = position - lower as f64;
    sorted[lower] * (1.0 - fraction) + sorted[upper] * fraction
}

/// Savings of one reference against the optimized cost.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SavingsEntry {
    pub reference: String,
    pub absolute: f64,
    pub percent: f64,
}

/// Absolute and percentage savings per reference with their descriptive
/// statistics.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SavingsReport {
    pub per_reference: Vec<SavingsEntry>,
    pub absolute: SavingsStats,
    pub percent: SavingsStats,
}

/// Compare the optimized cost against every reference cost:
/// `absolute = ref - opt`, `percent = 100 (ref - opt) / ref`.
pub fn savings_report(
    optimized_cost: f64,
    reference_costs: &[(String, f64)],
) -> Result<SavingsReport, ReportError> {
    if reference_costs.is_empty() {
        return Err(ReportError::NoReferences);
    }
    let mut per_reference = Vec::with_capacity(reference_costs.len());
    for (index, (name, cost)) in reference_costs.iter().enumerate() {
        if *cost == 0.0 {
            return Err(ReportError::ZeroReferenceCost { index });
        }
        per_reference.push(SavingsEntry {
            reference: name.clone(),
            absolute: cost - optimized_cost,
            percent: 100.0 * (cost - optimized_cost) / cost,
        });
    }
    let absolute: Vec<f64> = per_reference.iter().map(|e| e.absolute).collect();
    let percent: Vec<f64> = per_reference.iter().map(|e| e.percent).collect();
    Ok(SavingsReport {
        per_reference,
        absolute: SavingsStats::describe(&absolute),
        percent: SavingsStats::describe(&percent),
    })
}

/// Earliest sample time at which every targeted dimension is within its
/// tolerance of its target, or `None` if that never happens.
pub fn find_first_hit(
    samples: &TrajectorySamples,
    targets: &[(usize, f64, f64)],
) -> Option<f64> {
    'rows: for i in 0..samples.len() {
        for &(dim, target, tolerance) in targets {
            if (samples.values()[(i, dim)] - target).abs() > tolerance {
                continue 'rows;
            }
        }
        return Some(samples.times()[i]);
    }
    None
}
