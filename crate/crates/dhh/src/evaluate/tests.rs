use super::*;
use crate::data::{generate_dataset, SampleMode, Trajectory};
use crate::nets::test_support::{constant_network, exact_spring_hamiltonian};
use crate::training::{Method, TrainedModel};

fn spring_dataset(n: usize, sigma: f64, seed: u64) -> Dataset {
    generate_dataset(&SystemSpec::mass_spring(), n, SampleMode::Regular, sigma, seed, None)
        .unwrap()
}

fn exact_hamiltonian_model(dataset: &Dataset, method: Method) -> TrainedModel {
    TrainedModel {
        method,
        solution: None,
        hamiltonian: Some(exact_spring_hamiltonian()),
        dynamics: None,
        time_map: dataset.time_map,
        loss_curve: Vec::new(),
    }
}

fn constant_trajectory(values: &[(f64, f64)], times: &[f64]) -> Trajectory {
    Trajectory::new(
        times.to_vec(),
        values.iter().map(|&(q, p)| PhaseState::new(vec![q], vec![p])).collect(),
    )
}

#[test]
fn log_mse_of_identical_trajectories_hits_the_floor() {
    let times = [0.0, 1.0, 2.0];
    let traj = constant_trajectory(&[(1.0, 2.0), (3.0, 4.0), (5.0, 6.0)], &times);
    let (mse, log_mse) = traj_log_mse(&traj, &traj).unwrap();
    assert_eq!(mse, 0.0);
    assert_eq!(log_mse, MSE_FLOOR.ln());
}

#[test]
fn log_mse_of_constant_offset() {
    let times = [0.0, 1.0];
    let a = constant_trajectory(&[(0.0, 0.0), (1.0, 1.0)], &times);
    let b = constant_trajectory(&[(0.1, 0.1), (1.1, 1.1)], &times);
    let (mse, _) = traj_log_mse(&a, &b).unwrap();
    assert!((mse - 0.01).abs() < 1e-15, "mse {mse}");
}

#[test]
fn log_mse_hand_value() {
    // single time, single dof, errors 0.3 in q and 0.4 in p
    let times = [0.5];
    let a = constant_trajectory(&[(0.0, 0.0)], &times);
    let b = constant_trajectory(&[(0.3, 0.4)], &times);
    let (mse, _) = traj_log_mse(&a, &b).unwrap();
    assert!((mse - 0.125).abs() < 1e-15, "mse {mse}");
}

#[test]
fn mse_scales_quadratically_with_dyadic_error_scale() {
    let times = [0.0, 1.0, 2.0];
    let truth = constant_trajectory(&[(0.0, 0.0); 3], &times);
    let base = constant_trajectory(&[(0.25, -0.5), (0.125, 1.0), (-2.0, 0.75)], &times);
    let doubled = constant_trajectory(&[(0.5, -1.0), (0.25, 2.0), (-4.0, 1.5)], &times);
    let (m1, _) = traj_log_mse(&base, &truth).unwrap();
    let (m2, _) = traj_log_mse(&doubled, &truth).unwrap();
    assert_eq!(m2, 4.0 * m1);
}

#[test]
fn misaligned_lengths_are_rejected() {
    let a = constant_trajectory(&[(0.0, 0.0)], &[0.0]);
    let b = constant_trajectory(&[(0.0, 0.0), (1.0, 1.0)], &[0.0, 1.0]);
    assert!(matches!(
        traj_log_mse(&a, &b),
        Err(EvaluateError::MisalignedLengths(1, 2))
    ));
}

#[test]
fn solution_mode_requires_a_solution_network() {
    let dataset = spring_dataset(10, 0.0, 1);
    let model = exact_hamiltonian_model(&dataset, Method::HnnOracle);
    let times = evaluation_grid(&dataset, 10);
    assert!(matches!(
        reconstruct_trajectory(&model, &dataset, &times, ReconstructionMode::SolutionNet),
        Err(EvaluateError::MissingNetwork("solution"))
    ));
}

#[test]
fn evaluation_times_must_stay_inside_the_interval() {
    let dataset = spring_dataset(10, 0.0, 1);
    let model = exact_hamiltonian_model(&dataset, Method::HnnOracle);
    let err = reconstruct_trajectory(
        &model,
        &dataset,
        &[dataset.observations.times[0] - 1.0],
        ReconstructionMode::Integrated(crate::integrators::Scheme::Rk4),
    )
    .unwrap_err();
    assert!(matches!(err, EvaluateError::OutOfInterval(_)));
}

#[test]
fn exact_hamiltonian_reconstruction_matches_the_closed_form() {
    let dataset = spring_dataset(20, 0.0, 7);
    let model = exact_hamiltonian_model(&dataset, Method::HnnOracle);
    let times = evaluation_grid(&dataset, 100);
    let traj = reconstruct_trajectory(
        &model,
        &dataset,
        &times,
        ReconstructionMode::Integrated(crate::integrators::Scheme::Rk4),
    )
    .unwrap();
    let initial = &dataset.ground_truth.states[0];
    let (q0, p0) = (initial.q[0], initial.p[0]);
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let q = q0 * (2.0 * t).cos() + p0 * (2.0 * t).sin();
        let p = p0 * (2.0 * t).cos() - q0 * (2.0 * t).sin();
        assert!((s.q[0] - q).abs() < 1e-6, "t={t}: q {} vs {q}", s.q[0]);
        assert!((s.p[0] - p).abs() < 1e-6, "t={t}: p {} vs {p}", s.p[0]);
    }
}

#[test]
fn integrator_swap_orders_differ_as_expected() {
    // rolling the same exact energy out with Euler vs RK4: first-order
    // against fourth-order global error
    let dataset = spring_dataset(20, 0.0, 3);
    let model = exact_hamiltonian_model(&dataset, Method::Dhh);
    let times = evaluation_grid(&dataset, 200);
    let closed_form = |t: f64| {
        let initial = &dataset.ground_truth.states[0];
        let (q0, p0) = (initial.q[0], initial.p[0]);
        PhaseState::new(
            vec![q0 * (2.0 * t).cos() + p0 * (2.0 * t).sin()],
            vec![p0 * (2.0 * t).cos() - q0 * (2.0 * t).sin()],
        )
    };
    let truth = Trajectory::new(times.clone(), times.iter().map(|&t| closed_form(t)).collect());
    let mut errors = std::collections::HashMap::new();
    for scheme in [crate::integrators::Scheme::Euler, crate::integrators::Scheme::Rk4] {
        let traj = reconstruct_trajectory(
            &model,
            &dataset,
            &times,
            ReconstructionMode::Integrated(scheme),
        )
        .unwrap();
        let (mse, _) = traj_log_mse(&traj, &truth).unwrap();
        errors.insert(scheme.name(), mse);
    }
    assert!(
        errors["euler"] > 1e4 * errors["rk4"],
        "euler {} vs rk4 {}",
        errors["euler"],
        errors["rk4"]
    );
}

#[test]
fn solution_mode_never_touches_the_integrator() {
    use crate::nets::test_support::exact_spring_orbit;
    let dataset = spring_dataset(10, 0.0, 2);
    let model = TrainedModel {
        method: Method::Dhh,
        solution: Some(exact_spring_orbit()),
        hamiltonian: Some(exact_spring_hamiltonian()),
        dynamics: None,
        time_map: crate::data::TimeMap::identity(),
        loss_curve: Vec::new(),
    };
    let times: Vec<f64> = dataset.observations.times.clone();
    let before = crate::integrators::steps_taken();
    let traj = reconstruct_trajectory(&model, &dataset, &times, ReconstructionMode::SolutionNet)
        .unwrap();
    assert_eq!(crate::integrators::steps_taken(), before, "integrator was invoked");
    assert_eq!(traj.len(), times.len());
}

struct Shifted<'a>(&'a SystemSpec, f64);

impl Hamiltonian for Shifted<'_> {
    fn dof(&self) -> usize {
        self.0.dof()
    }
    fn energy(&self, s: &PhaseState) -> Result<f64, SystemError> {
        Ok(self.0.energy(s)? + self.1)
    }
    fn gradient(&self, s: &PhaseState) -> Result<(Vec<f64>, Vec<f64>), SystemError> {
        self.0.gradient(s)
    }
}

struct Negated<'a>(&'a SystemSpec);

impl Hamiltonian for Negated<'_> {
    fn dof(&self) -> usize {
        self.0.dof()
    }
    fn energy(&self, s: &PhaseState) -> Result<f64, SystemError> {
        Ok(-self.0.energy(s)?)
    }
    fn gradient(&self, s: &PhaseState) -> Result<(Vec<f64>, Vec<f64>), SystemError> {
        let (dq, dp) = self.0.gradient(s)?;
        Ok((dq.iter().map(|g| -g).collect(), dp.iter().map(|g| -g).collect()))
    }
}

#[test]
fn hamiltonian_comparison_is_offset_invariant() {
    let system = SystemSpec::mass_spring();
    let dataset = spring_dataset(20, 0.0, 5);
    let shifted = Shifted(&system, 5.0);
    let cmp = compare_hamiltonian(&shifted, &system, &system, &dataset.ground_truth).unwrap();
    assert!(cmp.offset_corrected_rmse < 1e-12, "rmse {}", cmp.offset_corrected_rmse);
    assert!((cmp.gradient_cosine - 1.0).abs() < 1e-12, "cosine {}", cmp.gradient_cosine);
    assert!(cmp.probes > 0);
}

#[test]
fn negated_hamiltonian_has_antiparallel_field() {
    let system = SystemSpec::mass_spring();
    let dataset = spring_dataset(20, 0.0, 5);
    let negated = Negated(&system);
    let cmp = compare_hamiltonian(&negated, &system, &system, &dataset.ground_truth).unwrap();
    assert!((cmp.gradient_cosine + 1.0).abs() < 1e-12, "cosine {}", cmp.gradient_cosine);
}

fn hidden_p_dataset(seed: u64) -> Dataset {
    generate_dataset(
        &SystemSpec::mass_spring(),
        20,
        SampleMode::Regular,
        0.1,
        seed,
        Some(vec![true, false]),
    )
    .unwrap()
}

#[test]
fn hidden_coordinate_up_to_constant_is_perfect() {
    use crate::nets::test_support::exact_spring_orbit;
    // solution = truth + constant shift in p
    let dataset = hidden_p_dataset(11);
    let mut solution = exact_spring_orbit();
    // the dataset spans [0, 10]; rebuild the orbit in normalized time
    let scale = dataset.time_map.scale;
    let offset = dataset.time_map.offset;
    // s(tau) = (cos(2 t), -sin(2 t)) with t = (tau - offset) / scale, for the
    // ground truth starting at (q0, p0): compose the sine layer accordingly
    let initial = &dataset.ground_truth.states[0];
    let (q0, p0) = (initial.q[0], initial.p[0]);
    let amp = (q0 * q0 + p0 * p0).sqrt();
    let phase = p0.atan2(q0); // q(t) = amp cos(2t - phase)
    {
        use crate::graph::Tensor;
        let w = 2.0 / scale;
        let params = &mut solution.params;
        params.layers[0].weight = Tensor::matrix(2, 1, vec![w, w]);
        params.layers[0].bias = Tensor::vector(vec![
            std::f64::consts::FRAC_PI_2 - 2.0 * offset / scale - phase,
            -2.0 * offset / scale - phase,
        ]);
        params.layers[1].weight = Tensor::matrix(2, 2, vec![amp, 0.0, 0.0, -amp]);
        params.layers[1].bias = Tensor::vector(vec![0.0, 0.25]); // constant shift in p
    }
    let model = TrainedModel {
        method: Method::Dhh,
        solution: Some(solution),
        hamiltonian: Some(exact_spring_hamiltonian()),
        dynamics: None,
        time_map: dataset.time_map,
        loss_curve: Vec::new(),
    };
    let report = check_hidden_coordinate(&model, &dataset).unwrap();
    assert!(report.offset_corrected_rmse < 1e-6, "rmse {}", report.offset_corrected_rmse);
    assert!(report.correlation > 0.999999, "correlation {}", report.correlation);
    assert!(!report.degenerate);
}

#[test]
fn constant_reconstruction_is_flagged_degenerate() {
    let dataset = hidden_p_dataset(13);
    let model = TrainedModel {
        method: Method::Dhh,
        solution: Some(constant_network(1, vec![0.3, -0.4])),
        hamiltonian: None,
        dynamics: None,
        time_map: dataset.time_map,
        loss_curve: Vec::new(),
    };
    let report = check_hidden_coordinate(&model, &dataset).unwrap();
    assert_eq!(report.correlation, 0.0);
    assert!(report.degenerate);
}

fn tiny_sweep_config(methods: &[&str], n_points: &[usize], seeds: &[u64]) -> SweepConfig {
    SweepConfig {
        systems: vec!["mass_spring".into()],
        methods: methods.iter().map(|s| s.to_string()).collect(),
        n_points: n_points.to_vec(),
        sigmas: vec![0.1],
        seeds: seeds.to_vec(),
        mode: SampleMode::Regular,
        lambda_extra_multipliers: None,
        overrides: TrainOverrides {
            steps: Some(20),
            collocation_points: Some(4),
            energy_pairs: Some(2),
            solution_hidden: Some(vec![6]),
            hamiltonian_hidden: Some(vec![6]),
            dynamics_hidden: Some(vec![6]),
            ..Default::default()
        },
    }
}

#[test]
fn identical_seeds_collapse_the_band() {
    let config = tiny_sweep_config(&["hnn_fd"], &[6], &[3, 3, 3, 3, 3]);
    let outcome = sweep(&config, 1).unwrap();
    let stats = outcome.report.cells["mass_spring"]["0.1"]["hnn_fd"]["6"];
    assert_eq!(stats.runs, 5);
    assert_eq!(stats.failed_runs, 0);
    assert_eq!(stats.mean_log_mse, stats.min_log_mse);
    assert_eq!(stats.mean_log_mse, stats.max_log_mse);
}

#[test]
fn sweep_grid_counts_runs_and_cells() {
    let config = tiny_sweep_config(&["hnn_fd", "hnn_oracle"], &[5, 8, 12], &[0, 1, 2, 3, 4]);
    let outcome = sweep(&config, 2).unwrap();
    assert_eq!(outcome.report.results.len(), 30);
    let by_method = &outcome.report.cells["mass_spring"]["0.1"];
    let cell_count: usize = by_method.values().map(|m| m.len()).sum();
    assert_eq!(cell_count, 6);
    for cells in by_method.values() {
        for stats in cells.values() {
            let (mean, min, max) = (
                stats.mean_log_mse.unwrap(),
                stats.min_log_mse.unwrap(),
                stats.max_log_mse.unwrap(),
            );
            assert!(min <= mean && mean <= max);
        }
    }

    let mut csv = Vec::new();
    write_report_csv(&mut csv, &outcome.report).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 31);
    assert!(text.starts_with("system,method,n_points,sigma,seed,mse,log_mse"));
}

#[test]
fn sweep_reruns_are_bit_identical() {
    let config = tiny_sweep_config(&["hnn_fd"], &[5, 8], &[0, 1]);
    let a = sweep(&config, 2).unwrap();
    let b = sweep(&config, 2).unwrap();
    assert_eq!(
        serde_json::to_string(&a.report).unwrap(),
        serde_json::to_string(&b.report).unwrap()
    );
    assert_eq!(a.charts, b.charts);
}

#[test]
fn ablation_mode_expands_method_variants() {
    let mut config = tiny_sweep_config(&["dhh"], &[5], &[0]);
    config.lambda_extra_multipliers = Some(vec![0.0, 1.0]);
    let outcome = sweep(&config, 1).unwrap();
    let labels: Vec<&str> = outcome.report.results.iter().map(|r| r.method.as_str()).collect();
    assert!(labels.contains(&"dhh@extra=0"));
    assert!(labels.contains(&"dhh@extra=0.01"));
    assert_eq!(outcome.report.results.len(), 2);
}

#[test]
fn failed_runs_are_recorded_not_dropped() {
    // an absurd learning rate reliably drives the residual loss to NaN
    let mut config = tiny_sweep_config(&["dhh"], &[6], &[0, 1]);
    config.overrides.lr_solution = Some(1e12);
    config.overrides.lr_dynamics = Some(1e12);
    config.overrides.steps = Some(60);
    let outcome = sweep(&config, 1).unwrap();
    assert_eq!(outcome.report.results.len(), 2);
    let stats = outcome.report.cells["mass_spring"]["0.1"]["dhh"]["6"];
    if stats.failed_runs > 0 {
        assert!(stats.max_log_mse.is_none(), "failure must set the infinity marker");
        for r in &outcome.report.results {
            if r.failed {
                assert!(r.mse.is_infinite());
            }
        }
    } else {
        // divergence did not trigger; the report must still be well-formed
        assert!(stats.max_log_mse.is_some());
    }
}
