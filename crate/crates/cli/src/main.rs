//! Command line for the trajectory optimizer.
//!
//! Exit codes: 0 success, 2 configuration error, 3 ingestion error,
//! 4 no admissible solution, 5 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use trajmap::cost::fit_quadratic_cost;
use trajmap::datagen::{climb_scenario, force_field_scenario};
use trajmap::pipeline::{
    exit_code, parse_csv_file, run_optimization, RunConfig, SavingsStats,
};
use trajmap::trajectory::{project, reconstruct};
use trajmap::BasisSpec;

#[derive(Parser)]
#[command(
    name = "trajmap",
    about = "Data-driven trajectory optimization on orthonormal function bases",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full optimization described by a JSON configuration file.
    Optimize {
        /// Path to the configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Print the summary JSON to stdout as well.
        #[arg(long)]
        print_summary: bool,
    },
    /// Project one trajectory CSV onto the basis and write its coefficients.
    Project {
        /// Input CSV with a `time` column.
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated per-variable basis orders, e.g. `4,10,6`.
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        /// Variables to project; defaults to every non-time column.
        #[arg(long, value_delimiter = ',')]
        variables: Vec<String>,
        /// Basis interval end; defaults to the last sample time.
        #[arg(long)]
        duration: Option<f64>,
        /// Where to write the coefficient CSV; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit a degree-2 instantaneous cost to a recorded cost column.
    FitCost {
        /// Directory of reference CSV files.
        #[arg(long)]
        data_dir: PathBuf,
        /// Comma-separated state variables.
        #[arg(long, value_delimiter = ',')]
        variables: Vec<String>,
        /// Column holding the recorded instantaneous cost.
        #[arg(long)]
        cost_column: String,
        /// Where to write the fitted model JSON; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic scenario: reference CSV files plus a ready
    /// configuration.
    Generate {
        #[arg(long)]
        scenario: Scenario,
        /// Output directory; references go to `<output>/references`.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of references; defaults to 122 (force-field) or 40 (climb).
        #[arg(long)]
        count: Option<usize>,
        /// Kinetic trade-off written into the force-field configuration.
        #[arg(long, default_value_t = 0.35)]
        alpha: f64,
    },
    /// Render a run summary as a readable report.
    Report {
        /// Path to a `summary.json` produced by `optimize`.
        #[arg(long)]
        summary: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Climb,
    ForceField,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Optimize {
            config,
            print_summary,
        } => cmd_optimize(&config, print_summary),
        Command::Project {
            input,
            dims,
            variables,
            duration,
            output,
        } => cmd_project(&input, &dims, &variables, duration, output.as_deref()),
        Command::FitCost {
            data_dir,
            variables,
            cost_column,
            output,
        } => cmd_fit_cost(&data_dir, &variables, &cost_column, output.as_deref()),
        Command::Generate {
            scenario,
            output,
            seed,
            count,
            alpha,
        } => cmd_generate(scenario, &output, seed, count, alpha),
        Command::Report { summary } => cmd_report(&summary),
    };
    ExitCode::from(code)
}

fn cmd_optimize(config_path: &Path, print_summary: bool) -> u8 {
    let text = match std::fs::read_to_string(config_path) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("cannot read `{}`: {e}", config_path.display());
            return 2;
        }
    };
    let config: RunConfig = match serde_json::from_str(&text) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("invalid configuration: {e}");
            return 2;
        }
    };
    match run_optimization(&config) {
        Ok(result) => {
            let summary = &result.summary;
            println!(
                "accepted {} references ({} selected), nu* = {:.6e}{}",
                summary.accepted_count,
                summary.selected.len(),
                summary.nu_star,
                if summary.saturated { " (saturated)" } else { "" }
            );
            println!(
                "optimized cost {:.6}, penalty {:.6}, admissible: {}",
                summary.optimized_cost, summary.penalty, summary.admissibility.admissible
            );
            println!(
                "mean savings {:.2}% over {} references",
                summary.savings.percent.mean,
                summary.savings.per_reference.len()
            );
            if let Some(interval) = &summary.confidence_interval {
                println!(
                    "{:.0}% confidence interval: [{:.6}, {:.6}]",
                    100.0 * interval.confidence,
                    interval.lower,
                    interval.upper
                );
            }
            println!("summary written to {}", result.paths.summary.display());
            if print_summary {
                match serde_json::to_string_pretty(summary) {
                    Ok(text) => println!("{text}"),
                    Err(e) => eprintln!("cannot render summary: {e}"),
                }
            }
            0
        }
        Err(e) => {
            eprintln!("{e}");
            exit_code(&e) as u8
        }
    }
}

fn cmd_project(
    input: &Path,
    dims: &[usize],
    variables: &[String],
    duration: Option<f64>,
    output: Option<&Path>,
) -> u8 {
    let variables: Vec<String> = if variables.is_empty() {
        match csv::Reader::from_path(input)
            .and_then(|mut r| r.headers().cloned())
        {
            Ok(headers) => headers
                .iter()
                .map(|h| h.trim().to_string())
                .filter(|h| h != "time")
                .collect(),
            Err(e) => {
                eprintln!("cannot read `{}`: {e}", input.display());
                return 3;
            }
        }
    } else {
        variables.to_vec()
    };
    if dims.len() != variables.len() {
        eprintln!(
            "need one basis order per variable: {} orders for {} variables",
            dims.len(),
            variables.len()
        );
        return 2;
    }
    let raw = match parse_csv_file(input, &variables, None) {
        Ok(raw) => raw,
        Err(e) => {
            eprintln!("{e}");
            return 3;
        }
    };
    let duration = duration.unwrap_or_else(|| *raw.samples.times().last().unwrap());
    let spec = match BasisSpec::new(trajmap::BasisKind::Legendre, dims.to_vec(), duration) {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    let coefficients = match project(&raw.samples, &spec) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 5;
        }
    };
    let rebuilt = reconstruct(&coefficients, raw.samples.times()).expect("in-range times");
    let mut lines = vec!["variable,index,coefficient".to_string()];
    for (d, variable) in variables.iter().enumerate() {
        let block = coefficients.block(d);
        for k in 0..block.len() {
            lines.push(format!("{variable},{},{}", k + 1, block[k]));
        }
    }
    let body = lines.join("\n") + "\n";
    if let Some(path) = output {
        if let Err(e) = std::fs::write(path, &body) {
            eprintln!("cannot write `{}`: {e}", path.display());
            return 5;
        }
    } else {
        print!("{body}");
    }
    for (d, variable) in variables.iter().enumerate() {
        let n = raw.samples.len() as f64;
        let rmse = ((0..raw.samples.len())
            .map(|i| {
                let diff = raw.samples.values()[(i, d)] - rebuilt.values()[(i, d)];
                diff * diff
            })
            .sum::<f64>()
            / n)
            .sqrt();
        eprintln!("projection RMSE for {variable}: {rmse:.6e}");
    }
    0
}

fn cmd_fit_cost(
    data_dir: &Path,
    variables: &[String],
    cost_column: &str,
    output: Option<&Path>,
) -> u8 {
    let mut paths: Vec<PathBuf> = match std::fs::read_dir(data_dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
            .collect(),
        Err(e) => {
            eprintln!("cannot read `{}`: {e}", data_dir.display());
            return 3;
        }
    };
    paths.sort();
    if paths.is_empty() {
        eprintln!("no CSV files in `{}`", data_dir.display());
        return 3;
    }
    let mut states: Vec<Vec<f64>> = Vec::new();
    let mut costs: Vec<f64> = Vec::new();
    for path in &paths {
        let raw = match parse_csv_file(path, variables, Some(cost_column)) {
            Ok(raw) => raw,
            Err(e) => {
                eprintln!("{e}");
                return 3;
            }
        };
        let recorded = raw.cost_samples.expect("cost column requested");
        for (i, &value) in recorded.iter().enumerate() {
            states.push(
                (0..raw.samples.dim_count())
                    .map(|d| raw.samples.values()[(i, d)])
                    .collect(),
            );
            costs.push(value);
        }
    }
    let rows = states.len();
    let dims = variables.len();
    let design = nalgebra::DMatrix::from_fn(rows, dims, |i, j| states[i][j]);
    let targets = DVector::from_vec(costs);
    let (model, diagnostics) = match fit_quadratic_cost(&design, &targets) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("{e}");
            return 5;
        }
    };
    let quadratic: Vec<Vec<f64>> = (0..dims)
        .map(|i| (0..dims).map(|j| model.quadratic()[(i, j)]).collect())
        .collect();
    let document = serde_json::json!({
        "cost": {
            "type": "quadratic",
            "quadratic": quadratic,
            "linear": model.linear().iter().copied().collect::<Vec<f64>>(),
            "constant": model.constant_term(),
        },
        "diagnostics": {
            "samples": rows,
            "residual_std": diagnostics.residual_std,
            "rmse": diagnostics.rmse,
            "mape_percent": diagnostics.mape,
        },
    });
    let text = serde_json::to_string_pretty(&document).expect("serializable");
    if let Some(path) = output {
        if let Err(e) = std::fs::write(path, text.as_bytes()) {
            eprintln!("cannot write `{}`: {e}", path.display());
            return 5;
        }
        eprintln!(
            "fitted on {rows} samples: residual std {:.4e}, RMSE {:.4e}, MAPE {:.3}%",
            diagnostics.residual_std, diagnostics.rmse, diagnostics.mape
        );
    } else {
        println!("{text}");
    }
    0
}

fn cmd_generate(
    scenario: Scenario,
    output: &Path,
    seed: u64,
    count: Option<usize>,
    alpha: f64,
) -> u8 {
    let references_dir = output.join("references");
    let run_dir = output.join("run");
    let config_path = output.join("config.json");
    let (config, accepted, acceptance_rate) = match scenario {
        Scenario::ForceField => {
            let scenario = match force_field_scenario(seed, count.unwrap_or(122)) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{e}");
                    return 5;
                }
            };
            if let Err(e) = scenario.write_references(&references_dir) {
                eprintln!("{e}");
                return 5;
            }
            (
                scenario.config(&references_dir, &run_dir, alpha),
                scenario.references.len(),
                scenario.acceptance_rate,
            )
        }
        Scenario::Climb => {
            let scenario = match climb_scenario(seed, count.unwrap_or(40)) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("{e}");
                    return 5;
                }
            };
            if let Err(e) = scenario.write_references(&references_dir) {
                eprintln!("{e}");
                return 5;
            }
            (
                scenario.config(&references_dir, &run_dir),
                scenario.references.len(),
                scenario.acceptance_rate,
            )
        }
    };
    let text = serde_json::to_string_pretty(&config).expect("serializable");
    if let Err(e) = std::fs::write(&config_path, text.as_bytes()) {
        eprintln!("cannot write `{}`: {e}", config_path.display());
        return 5;
    }
    println!(
        "wrote {accepted} references (acceptance rate {acceptance_rate:.3}) to {}",
        references_dir.display()
    );
    println!("configuration written to {}", config_path.display());
    0
}

fn stats_row(label: &str, stats: &SavingsStats) -> String {
    format!(
        "{label:<16} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>10.2}",
        stats.mean, stats.std, stats.min, stats.q1, stats.q2, stats.q3, stats.max
    )
}

fn cmd_report(summary_path: &Path) -> u8 {
    let text = match std::fs::read_to_string(summary_path) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("cannot read `{}`: {e}", summary_path.display());
            return 3;
        }
    };
    let summary: serde_json::Value = match serde_json::from_str(&text) {
        Ok(value) => value,
        Err(e) => {
            eprintln!("invalid summary: {e}");
            return 3;
        }
    };
    let stats = |section: &str| -> Option<SavingsStats> {
        let v = &summary["savings"][section];
        Some(SavingsStats {
            mean: v["mean"].as_f64()?,
            std: v["std"].as_f64()?,
            min: v["min"].as_f64()?,
            q1: v["q1"].as_f64()?,
            q2: v["q2"].as_f64()?,
            q3: v["q3"].as_f64()?,
            max: v["max"].as_f64()?,
        })
    };
    println!("run over {} accepted references", summary["accepted_count"]);
    println!(
        "nu* = {}, optimized cost = {}, admissible = {}",
        summary["nu_star"], summary["optimized_cost"], summary["admissibility"]["admissible"]
    );
    if let Some(t) = summary["first_hit_time"].as_f64() {
        println!("first hit of the terminal state at t = {t}");
    }
    println!(
        "\n{:<16} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "savings", "mean", "std", "min", "q1", "q2", "q3", "max"
    );
    match (stats("absolute"), stats("percent")) {
        (Some(absolute), Some(percent)) => {
            println!("{}", stats_row("absolute", &absolute));
            println!("{}", stats_row("percent [%]", &percent));
        }
        _ => {
            eprintln!("summary has no savings section");
            return 3;
        }
    }
    if let Some(interval) = summary["confidence_interval"].as_object() {
        println!(
            "\n{}% confidence interval: [{}, {}] (sigma {})",
            interval["confidence"].as_f64().unwrap_or(f64::NAN) * 100.0,
            interval["lower"],
            interval["upper"],
            interval["sigma"]
        );
    }
    0
}
