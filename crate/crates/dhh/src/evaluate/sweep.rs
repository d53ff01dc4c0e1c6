//! Sampling-rate sweeps: a full cross-product of (system, method, point
//! count, noise level, seed) runs with per-cell min/mean/max aggregation.
//! Failed runs stay in the report as explicit markers instead of being
//! dropped; the per-cell maximum becomes the infinity marker.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_dataset, SampleMode};
use crate::nets::fmt_f64;
use crate::plot::{LineChart, Series};
use crate::systems::SystemSpec;
use crate::training::{train, Method, TrainConfig};

use super::{
    evaluation_grid, reconstruct_trajectory, trajectory_error, EvaluateError, ExperimentResult,
    ReconstructionMode, EVAL_GRID,
};

/// Optional overrides applied to every per-run training configuration;
/// network sizes and budgets stay sweep-configurable.
#[derive(Clone, Default, PartialEq, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOverrides {
    pub steps: Option<usize>,
    pub collocation_points: Option<usize>,
    pub energy_pairs: Option<usize>,
    pub lr_solution: Option<f64>,
    pub lr_dynamics: Option<f64>,
    pub solution_hidden: Option<Vec<usize>>,
    pub hamiltonian_hidden: Option<Vec<usize>>,
    pub dynamics_hidden: Option<Vec<usize>>,
}

impl TrainOverrides {
    fn apply(&self, config: &mut TrainConfig) {
        if let Some(v) = self.steps {
            config.steps = v;
        }
        if let Some(v) = self.collocation_points {
            config.collocation_points = v;
        }
        if let Some(v) = self.energy_pairs {
            config.energy_pairs = v;
        }
        if let Some(v) = self.lr_solution {
            config.lr_solution = v;
        }
        if let Some(v) = self.lr_dynamics {
            config.lr_dynamics = v;
        }
        if let Some(v) = &self.solution_hidden {
            config.solution_hidden = v.clone();
        }
        if let Some(v) = &self.hamiltonian_hidden {
            config.hamiltonian_hidden = v.clone();
        }
        if let Some(v) = &self.dynamics_hidden {
            config.dynamics_hidden = v.clone();
        }
    }
}

fn d_n_points() -> Vec<usize> {
    vec![10, 20, 40, 80, 160]
}
fn d_seeds() -> Vec<u64> {
    (0..5).collect()
}
fn d_mode() -> SampleMode {
    SampleMode::Regular
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct SweepConfig {
    /// System names as accepted by `SystemSpec::by_name`.
    pub systems: Vec<String>,
    /// Method names as accepted by `Method::by_name`.
    pub methods: Vec<String>,
    #[serde(default = "d_n_points")]
    pub n_points: Vec<usize>,
    pub sigmas: Vec<f64>,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "d_mode")]
    pub mode: SampleMode,
    /// When set, solution/energy methods fan out into one variant per
    /// multiplier of the default energy-constancy weight (the ablation mode).
    #[serde(default)]
    pub lambda_extra_multipliers: Option<Vec<f64>>,
    #[serde(default)]
    pub overrides: TrainOverrides,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), EvaluateError> {
        let check = |ok: bool, msg: &str| -> Result<(), EvaluateError> {
            if ok {
                Ok(())
            } else {
                Err(EvaluateError::Train(crate::training::TrainError::InvalidConfig(msg.into())))
            }
        };
        check(!self.systems.is_empty(), "systems grid is empty")?;
        check(!self.methods.is_empty(), "methods grid is empty")?;
        check(!self.n_points.is_empty(), "n_points grid is empty")?;
        check(!self.sigmas.is_empty(), "sigmas grid is empty")?;
        check(!self.seeds.is_empty(), "seeds grid is empty")?;
        for s in &self.systems {
            check(SystemSpec::by_name(s).is_some(), &format!("unknown system `{s}`"))?;
        }
        for m in &self.methods {
            check(Method::by_name(m).is_some(), &format!("unknown method `{m}`"))?;
        }
        if let Some(ms) = &self.lambda_extra_multipliers {
            check(!ms.is_empty(), "lambda_extra_multipliers is empty")?;
        }
        Ok(())
    }
}

/// One method variant of the sweep: a method plus an optional
/// energy-constancy weight override, labeled for reports.
#[derive(Clone, Debug)]
struct MethodVariant {
    method: Method,
    label: String,
    lambda_extra: Option<f64>,
}

fn method_variants(config: &SweepConfig) -> Vec<MethodVariant> {
    let mut variants = Vec::new();
    for name in &config.methods {
        let method = Method::by_name(name).expect("validated");
        match (&config.lambda_extra_multipliers, method) {
            (Some(multipliers), Method::Dhh) => {
                let base = TrainConfig::new(Method::Dhh).lambda_extra;
                for &m in multipliers {
                    let weight = base * m;
                    variants.push(MethodVariant {
                        method,
                        label: format!("{name}@extra={weight}"),
                        lambda_extra: Some(weight),
                    });
                }
            }
            _ => variants.push(MethodVariant {
                method,
                label: name.clone(),
                lambda_extra: None,
            }),
        }
    }
    variants
}

/// Min/mean/max of log-MSE over the seeds of one cell. `max_log_mse` is
/// `None` when any run failed: the infinity marker.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CellStats {
    pub mean_log_mse: Option<f64>,
    pub min_log_mse: Option<f64>,
    pub max_log_mse: Option<f64>,
    pub runs: usize,
    pub failed_runs: usize,
}

impl CellStats {
    fn from_runs(runs: &[&ExperimentResult]) -> CellStats {
        let finite: Vec<f64> = runs.iter().filter(|r| !r.failed).map(|r| r.log_mse).collect();
        let failed = runs.len() - finite.len();
        let mean = if finite.is_empty() {
            None
        } else {
            Some(finite.iter().sum::<f64>() / finite.len() as f64)
        };
        let min = finite.iter().copied().reduce(f64::min);
        let max = if failed > 0 { None } else { finite.iter().copied().reduce(f64::max) };
        CellStats { mean_log_mse: mean, min_log_mse: min, max_log_mse: max, runs: runs.len(), failed_runs: failed }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub results: Vec<ExperimentResult>,
    /// `system -> sigma -> method -> n_points -> stats`, all keys formatted
    /// as strings in grid order.
    pub cells: BTreeMap<String, BTreeMap<String, BTreeMap<String, BTreeMap<String, CellStats>>>>,
}

/// Everything the sweep produced, including rendered charts.
pub struct SweepOutcome {
    pub report: SweepReport,
    /// `(file stem, svg text)` per (system, sigma) chart.
    pub charts: Vec<(String, String)>,
}

/// Run the full cross-product. Individual run failures are recorded in the
/// report and never abort the sweep. `jobs` bounds concurrent runs; 0 means
/// one per available core.
pub fn sweep(config: &SweepConfig, jobs: usize) -> Result<SweepOutcome, EvaluateError> {
    config.validate()?;
    let variants = method_variants(config);

    struct Job {
        system: SystemSpec,
        variant: MethodVariant,
        n: usize,
        sigma: f64,
        seed: u64,
    }
    let mut jobs_list = Vec::new();
    for system_name in &config.systems {
        let system = SystemSpec::by_name(system_name).expect("validated");
        for sigma in &config.sigmas {
            for variant in &variants {
                for &n in &config.n_points {
                    for &seed in &config.seeds {
                        jobs_list.push(Job {
                            system: system.clone(),
                            variant: variant.clone(),
                            n,
                            sigma: *sigma,
                            seed,
                        });
                    }
                }
            }
        }
    }

    let run_one = |job: &Job| -> ExperimentResult {
        let start = Instant::now();
        let outcome = run_cell(config, job.system.clone(), &job.variant, job.n, job.sigma, job.seed);
        let (mse, log_mse, per_coordinate) = match outcome {
            Ok(v) => v,
            Err(_) => (f64::INFINITY, f64::INFINITY, Vec::new()),
        };
        ExperimentResult {
            system: job.system.name(),
            method: job.variant.label.clone(),
            n_points: job.n,
            noise_sigma: job.sigma,
            seed: job.seed,
            mse,
            log_mse,
            per_coordinate_mse: per_coordinate,
            failed: !mse.is_finite(),
            wall_time_s: start.elapsed().as_secs_f64(),
        }
    };

    let results: Vec<ExperimentResult> = if jobs == 1 {
        jobs_list.iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool");
        pool.install(|| jobs_list.par_iter().map(run_one).collect())
    };

    // nested aggregation in grid order
    let mut cells: BTreeMap<String, BTreeMap<String, BTreeMap<String, BTreeMap<String, CellStats>>>> =
        BTreeMap::new();
    for system_name in &config.systems {
        let system = SystemSpec::by_name(system_name).expect("validated");
        for sigma in &config.sigmas {
            for variant in &variants {
                for &n in &config.n_points {
                    let runs: Vec<&ExperimentResult> = results
                        .iter()
                        .filter(|r| {
                            r.system == system.name()
                                && r.method == variant.label
                                && r.n_points == n
                                && r.noise_sigma == *sigma
                        })
                        .collect();
                    cells
                        .entry(system.name())
                        .or_default()
                        .entry(format!("{sigma}"))
                        .or_default()
                        .entry(variant.label.clone())
                        .or_default()
                        .insert(format!("{n}"), CellStats::from_runs(&runs));
                }
            }
        }
    }

    let report = SweepReport { config: config.clone(), results, cells };
    let charts = plot_report(&report);
    Ok(SweepOutcome { report, charts })
}

fn run_cell(
    config: &SweepConfig,
    system: SystemSpec,
    variant: &MethodVariant,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<(f64, f64, Vec<f64>), EvaluateError> {
    let dataset = generate_dataset(&system, n, config.mode, sigma, seed, None)?;
    let mut train_config = TrainConfig::for_system(variant.method, &system);
    train_config.seed = seed;
    if let Some(extra) = variant.lambda_extra {
        train_config.lambda_extra = extra;
    }
    config.overrides.apply(&mut train_config);
    let model = train(&train_config, &dataset)?;
    let times = evaluation_grid(&dataset, EVAL_GRID);
    let estimate = reconstruct_trajectory(
        &model,
        &dataset,
        &times,
        ReconstructionMode::default_for(variant.method),
    )?;
    let (mse, log_mse) = trajectory_error(&estimate, &dataset.ground_truth)?;
    let truth = crate::data::Trajectory::new(
        times.clone(),
        times.iter().map(|&t| dataset.ground_truth.interpolate(t)).collect(),
    );
    let per_coordinate = super::per_coordinate_mse(&estimate, &truth)?;
    Ok((mse, log_mse, per_coordinate))
}

/// Flat CSV `system,method,n_points,sigma,seed,mse,log_mse`; failed runs
/// carry `inf`.
pub fn write_report_csv(w: &mut impl Write, report: &SweepReport) -> std::io::Result<()> {
    writeln!(w, "system,method,n_points,sigma,seed,mse,log_mse")?;
    for r in &report.results {
        let fmt_or_inf = |v: f64| if v.is_finite() { fmt_f64(v) } else { "inf".to_string() };
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.system,
            r.method,
            r.n_points,
            r.noise_sigma,
            r.seed,
            fmt_or_inf(r.mse),
            fmt_or_inf(r.log_mse)
        )?;
    }
    Ok(())
}

/// One chart per (system, sigma): mean log-MSE against the number of
/// training points, with a min/max band per method.
pub fn plot_report(report: &SweepReport) -> Vec<(String, String)> {
    let mut charts = Vec::new();
    for (system, by_sigma) in &report.cells {
        for (sigma, by_method) in by_sigma {
            let mut series = Vec::new();
            for (method, by_n) in by_method {
                let mut points = Vec::new();
                let mut band = Vec::new();
                for (n, stats) in by_n {
                    let x: f64 = n.parse().expect("numeric key");
                    if let Some(mean) = stats.mean_log_mse {
                        points.push((x, mean));
                        band.push((
                            x,
                            stats.min_log_mse.unwrap_or(mean),
                            stats.max_log_mse.unwrap_or(f64::INFINITY),
                        ));
                    }
                }
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                band.sort_by(|a, b| a.0.total_cmp(&b.0));
                series.push(Series { label: method.clone(), points, band });
            }
            let chart = LineChart {
                title: format!("{system}, sigma = {sigma}"),
                x_label: "training points".into(),
                y_label: "log MSE".into(),
                series,
            };
            let stem = format!("{system}_sigma{}", sigma.replace('.', "p"));
            charts.push((stem, chart.to_svg()));
        }
    }
    charts
}
