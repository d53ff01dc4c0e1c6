use dhh::data::{generate_dataset, SampleMode};
use dhh::evaluate::{
    check_hidden_coordinate, compare_hamiltonian, evaluation_grid, reconstruct_trajectory,
    trajectory_error, ReconstructionMode,
};
use dhh::integrators::Scheme;
use dhh::nets::LearnedHamiltonian;
use dhh::systems::SystemSpec;
use dhh::training::{train, Method, TrainConfig};
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "clean".into());
    let system = SystemSpec::mass_spring();
    match which.as_str() {
        "clean" => {
            // criterion 4 + 6 quantities
            let dataset = generate_dataset(&system, 20, SampleMode::Regular, 0.0, 1, None).unwrap();
            let config = TrainConfig::for_system(Method::Dhh, &system);
            let t = Instant::now();
            let model = train(&config, &dataset).unwrap();
            println!("trained in {:.0}s", t.elapsed().as_secs_f64());
            let times = evaluation_grid(&dataset, 500);
            let sol = reconstruct_trajectory(&model, &dataset, &times, ReconstructionMode::SolutionNet).unwrap();
            let (mse_sol, log_sol) = trajectory_error(&sol, &dataset.ground_truth).unwrap();
            println!("solution-net mse {mse_sol:.4e} (log {log_sol:.2})");
            let learned = LearnedHamiltonian::new(model.hamiltonian.clone().unwrap()).unwrap();
            let cmp = compare_hamiltonian(&learned, &system, &system, &dataset.ground_truth).unwrap();
            println!("H comparison: rmse {:.4e} cosine {:.4} over {} probes", cmp.offset_corrected_rmse, cmp.gradient_cosine, cmp.probes);
            for scheme in [Scheme::Rk4, Scheme::Euler] {
                let swap = reconstruct_trajectory(&model, &dataset, &times, ReconstructionMode::Integrated(scheme)).unwrap();
                let (mse, log) = trajectory_error(&swap, &dataset.ground_truth).unwrap();
                println!("swap {} mse {mse:.4e} (log {log:.2}); ratio vs solution {:.1}", scheme.name(), mse / mse_sol);
            }
        }
        "hidden" => {
            // criterion 7: noisy q-only
            let dataset = generate_dataset(&system, 20, SampleMode::Regular, 0.1, 2, Some(vec![true, false])).unwrap();
            let config = TrainConfig::for_system(Method::Dhh, &system);
            let t = Instant::now();
            let model = train(&config, &dataset).unwrap();
            println!("trained in {:.0}s", t.elapsed().as_secs_f64());
            let report = check_hidden_coordinate(&model, &dataset).unwrap();
            println!("hidden p: rmse {:.4e} corr {:.4} degenerate {}", report.offset_corrected_rmse, report.correlation, report.degenerate);
        }
        "noisy" => {
            // criterion 5 single cell: dhh vs hnn_fd at sigma=0.1, n=20
            for (seed, name) in [(0u64, "dhh"), (0, "hnn_fd")] {
                let method = Method::by_name(name).unwrap();
                let dataset = generate_dataset(&system, 20, SampleMode::Regular, 0.1, seed, None).unwrap();
                let mut config = TrainConfig::for_system(method, &system);
                config.seed = seed;
                let t = Instant::now();
                let model = train(&config, &dataset).unwrap();
                let times = evaluation_grid(&dataset, 500);
                let traj = reconstruct_trajectory(&model, &dataset, &times, ReconstructionMode::default_for(method)).unwrap();
                let (mse, log) = trajectory_error(&traj, &dataset.ground_truth).unwrap();
                println!("{name}: mse {mse:.4e} (log {log:.2}) in {:.0}s", t.elapsed().as_secs_f64());
            }
        }
        other => panic!("unknown probe {other}"),
    }
}
