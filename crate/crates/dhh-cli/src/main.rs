//! Command-line entry point: dataset generation, training, evaluation,
//! sampling-rate sweeps and chart rendering, all reproducible from seeds.

mod manifest;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use dhh::data::{generate_dataset, load_dataset, save_dataset, Dataset, SampleMode};
use dhh::evaluate::{
    evaluation_grid, plot_report, reconstruct_trajectory, sweep, trajectory_error,
    write_report_csv, ReconstructionMode, SweepConfig, SweepReport, EVAL_GRID,
};
use dhh::integrators::Scheme;
use dhh::systems::SystemSpec;
use dhh::training::{
    model_from_json, model_to_json, train, write_loss_csv, Method, TrainConfig, TrainedModel,
};
use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "dhh",
    version,
    about = "Learn Hamiltonians and continuous-time trajectories from observations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

const OUT_ENV: &str = "DHH_OUT_DIR";

fn default_out() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"))
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset: dense ground truth, subsampled noisy observations.
    Generate {
        /// mass_spring | pendulum | two_body | three_body
        #[arg(long)]
        system: String,
        /// Number of observations.
        #[arg(long)]
        n: usize,
        /// regular | irregular
        #[arg(long, default_value = "regular")]
        mode: String,
        /// Observation noise standard deviation.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Observe positions only; momenta are masked out.
        #[arg(long)]
        hide_momenta: bool,
        #[arg(long, default_value_os_t = default_out())]
        out: PathBuf,
    },
    /// Train a method on a generated dataset.
    Train {
        /// Training configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Dataset CSV (sidecar JSON next to it) or its directory.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_os_t = default_out())]
        out: PathBuf,
    },
    /// Reconstruct a trajectory from a checkpoint and score it.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// solution | euler | rk2 | rk4; defaults to the method's native mode.
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long, default_value_os_t = default_out())]
        out: PathBuf,
    },
    /// Run a (system x method x points x noise x seed) grid and aggregate.
    Sweep {
        /// Sweep configuration JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_os_t = default_out())]
        out: PathBuf,
        /// Maximum concurrent runs; 0 means one per core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Re-render the charts of an existing sweep report.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_os_t = default_out())]
        out: PathBuf,
    },
}

fn main() {
    if let Err(err) = run(Cli::parse()) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { system, n, mode, sigma, seed, hide_momenta, out } => {
            cmd_generate(&system, n, &mode, sigma, seed, hide_momenta, &out)
        }
        Command::Train { config, dataset, out } => cmd_train(&config, &dataset, &out),
        Command::Eval { checkpoint, dataset, scheme, out } => {
            cmd_eval(&checkpoint, &dataset, scheme.as_deref(), &out)
        }
        Command::Sweep { config, out, jobs } => cmd_sweep(&config, &out, jobs),
        Command::Plot { report, out } => cmd_plot(&report, &out),
    }
}

#[derive(Serialize)]
struct GenerateConfig<'a> {
    system: &'a str,
    n: usize,
    mode: &'a str,
    sigma: f64,
    seed: u64,
    hide_momenta: bool,
}

fn cmd_generate(
    system_name: &str,
    n: usize,
    mode_name: &str,
    sigma: f64,
    seed: u64,
    hide_momenta: bool,
    out: &Path,
) -> Result<()> {
    let system = SystemSpec::by_name(system_name).ok_or_else(|| {
        anyhow!("unknown system `{system_name}`; expected mass_spring, pendulum, two_body or three_body")
    })?;
    let mode = SampleMode::by_name(mode_name)
        .ok_or_else(|| anyhow!("unknown mode `{mode_name}`; expected regular or irregular"))?;
    let mask = hide_momenta.then(|| {
        let d = system.dof();
        let mut m = vec![true; 2 * d];
        m[d..].fill(false);
        m
    });
    let dataset = generate_dataset(&system, n, mode, sigma, seed, mask)?;
    std::fs::create_dir_all(out)?;
    save_dataset(&dataset, out, "dataset")?;

    let mut manifest = RunManifest::new(
        "generate",
        vec![seed],
        serde_json::to_value(GenerateConfig {
            system: system_name,
            n,
            mode: mode_name,
            sigma,
            seed,
            hide_momenta,
        })?,
    );
    manifest.record_output(&out.join("dataset.csv"))?;
    manifest.record_output(&out.join("dataset.json"))?;
    manifest.write(out)?;
    Ok(())
}

fn dataset_paths(dataset: &Path) -> (PathBuf, PathBuf) {
    if dataset.is_dir() {
        (dataset.join("dataset.csv"), dataset.join("dataset.json"))
    } else {
        (dataset.to_path_buf(), dataset.with_extension("json"))
    }
}

fn load_dataset_arg(dataset: &Path) -> Result<(Dataset, PathBuf, PathBuf)> {
    let (csv, json) = dataset_paths(dataset);
    let loaded = load_dataset(&csv, &json)
        .with_context(|| format!("loading dataset from {}", csv.display()))?;
    Ok((loaded, csv, json))
}

fn cmd_train(config_path: &Path, dataset_path: &Path, out: &Path) -> Result<()> {
    let config_text = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let config: TrainConfig =
        serde_json::from_str(&config_text).context("parsing the training configuration")?;
    let (dataset, csv_path, json_path) = load_dataset_arg(dataset_path)?;

    let model = train(&config, &dataset)?;
    std::fs::create_dir_all(out)?;
    let checkpoint_path = out.join("checkpoint.json");
    std::fs::write(&checkpoint_path, model_to_json(&model) + "\n")?;
    let loss_path = out.join("loss.csv");
    let mut loss_bytes = Vec::new();
    write_loss_csv(&mut loss_bytes, &model.loss_curve)?;
    std::fs::write(&loss_path, loss_bytes)?;

    let mut manifest =
        RunManifest::new("train", vec![config.seed], serde_json::to_value(&config)?);
    manifest.record_input(config_path)?;
    manifest.record_input(&csv_path)?;
    manifest.record_input(&json_path)?;
    manifest.record_output(&checkpoint_path)?;
    manifest.record_output(&loss_path)?;
    manifest.write(out)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalResult<'a> {
    method: &'a str,
    scheme: &'a str,
    n_times: usize,
    mse: f64,
    log_mse: f64,
    per_coordinate_mse: Vec<f64>,
}

fn scheme_for(model: &TrainedModel, flag: Option<&str>) -> Result<(ReconstructionMode, String)> {
    let mode = match flag {
        None => ReconstructionMode::default_for(model.method),
        Some("solution") => ReconstructionMode::SolutionNet,
        Some(name) => ReconstructionMode::Integrated(
            Scheme::by_name(name)
                .ok_or_else(|| anyhow!("unknown scheme `{name}`; expected solution, euler, rk2 or rk4"))?,
        ),
    };
    let label = match mode {
        ReconstructionMode::SolutionNet => "solution".to_string(),
        ReconstructionMode::Integrated(s) => s.name().to_string(),
    };
    Ok((mode, label))
}

fn cmd_eval(
    checkpoint_path: &Path,
    dataset_path: &Path,
    scheme_flag: Option<&str>,
    out: &Path,
) -> Result<()> {
    let checkpoint_text = std::fs::read_to_string(checkpoint_path)
        .with_context(|| format!("reading {}", checkpoint_path.display()))?;
    let model = model_from_json(&checkpoint_text)?;
    let (dataset, csv_path, json_path) = load_dataset_arg(dataset_path)?;
    let (mode, scheme_label) = scheme_for(&model, scheme_flag)?;

    let times = evaluation_grid(&dataset, EVAL_GRID);
    let estimate = reconstruct_trajectory(&model, &dataset, &times, mode)?;
    let (mse, log_mse) = trajectory_error(&estimate, &dataset.ground_truth)?;
    let truth = dhh::data::Trajectory::new(
        times.clone(),
        times.iter().map(|&t| dataset.ground_truth.interpolate(t)).collect(),
    );
    let per_coordinate = dhh::evaluate::per_coordinate_mse(&estimate, &truth)?;

    std::fs::create_dir_all(out)?;
    let traj_path = out.join(format!("trajectory_{scheme_label}.csv"));
    let mut traj_bytes = Vec::new();
    dhh::data::write_observations_csv(&mut traj_bytes, &estimate)?;
    std::fs::write(&traj_path, traj_bytes)?;

    let result = EvalResult {
        method: model.method.name(),
        scheme: &scheme_label,
        n_times: times.len(),
        mse,
        log_mse,
        per_coordinate_mse: per_coordinate,
    };
    let result_path = out.join("result.json");
    std::fs::write(&result_path, serde_json::to_string_pretty(&result)? + "\n")?;

    let mut manifest = RunManifest::new(
        "eval",
        vec![dataset.seed],
        serde_json::json!({ "scheme": scheme_label, "eval_grid": times.len() }),
    );
    manifest.record_input(checkpoint_path)?;
    manifest.record_input(&csv_path)?;
    manifest.record_input(&json_path)?;
    manifest.record_output(&traj_path)?;
    manifest.record_output(&result_path)?;
    manifest.write(out)?;
    Ok(())
}

fn write_charts(out: &Path, charts: &[(String, String)], manifest: &mut RunManifest) -> Result<()> {
    let plot_dir = out.join("plots");
    std::fs::create_dir_all(&plot_dir)?;
    for (stem, svg) in charts {
        let path = plot_dir.join(format!("{stem}.svg"));
        std::fs::write(&path, svg)?;
        manifest.record_output(&path)?;
    }
    Ok(())
}

fn cmd_sweep(config_path: &Path, out: &Path, jobs: usize) -> Result<()> {
    let config_text = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let config: SweepConfig =
        serde_json::from_str(&config_text).context("parsing the sweep configuration")?;
    let outcome = sweep(&config, jobs)?;

    std::fs::create_dir_all(out)?;
    let report_path = out.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&outcome.report)? + "\n")?;
    let csv_path = out.join("report.csv");
    let mut csv_bytes = Vec::new();
    write_report_csv(&mut csv_bytes, &outcome.report)?;
    std::fs::write(&csv_path, csv_bytes)?;

    let mut manifest =
        RunManifest::new("sweep", config.seeds.clone(), serde_json::to_value(&config)?);
    manifest.record_input(config_path)?;
    manifest.record_output(&report_path)?;
    manifest.record_output(&csv_path)?;
    write_charts(out, &outcome.charts, &mut manifest)?;
    manifest.write(out)?;
    Ok(())
}

fn cmd_plot(report_path: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(report_path)
        .with_context(|| format!("reading {}", report_path.display()))?;
    let report: SweepReport = serde_json::from_str(&text).context("parsing the sweep report")?;
    let charts = plot_report(&report);
    if charts.is_empty() {
        bail!("report contains no cells to plot");
    }
    std::fs::create_dir_all(out)?;
    let mut manifest = RunManifest::new(
        "plot",
        report.config.seeds.clone(),
        serde_json::json!({ "report": report_path.display().to_string() }),
    );
    manifest.record_input(report_path)?;
    write_charts(out, &charts, &mut manifest)?;
    manifest.write(out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_names_resolve() {
        assert!(Scheme::by_name("rk4").is_some());
        assert!(Scheme::by_name("midpoint").is_none());
    }

    #[test]
    fn dataset_paths_from_file_and_dir() {
        let (csv, json) = dataset_paths(Path::new("runs/dataset.csv"));
        assert_eq!(csv, Path::new("runs/dataset.csv"));
        assert_eq!(json, Path::new("runs/dataset.json"));
    }
}
