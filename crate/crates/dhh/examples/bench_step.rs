use dhh::data::{generate_dataset, SampleMode};
use dhh::systems::SystemSpec;
use dhh::training::{train, Method, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let sigma: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let dataset =
        generate_dataset(&SystemSpec::mass_spring(), 20, SampleMode::Regular, sigma, 1, None)
            .unwrap();
    let mut config = TrainConfig::new(Method::Dhh);
    config.steps = steps;
    let start = Instant::now();
    let model = train(&config, &dataset).unwrap();
    let dt = start.elapsed().as_secs_f64();
    let last = model.loss_curve.last().unwrap();
    println!("{steps} steps in {dt:.2}s => {:.1} ms/step", dt / steps as f64 * 1e3);
    println!("final: total={:.4e} fit={:.4e} ham={:.4e} extra={:.4e}", last.total, last.fit, last.ham, last.extra);

    // crude trajectory error: solution net vs dense truth on a 500-point grid
    let sol = model.solution.as_ref().unwrap();
    let (t0, t1) = (dataset.ground_truth.times[0], *dataset.ground_truth.times.last().unwrap());
    let mut mse = 0.0;
    for i in 0..500 {
        let t = t0 + (t1 - t0) * i as f64 / 499.0;
        let tau = dataset.time_map.to_normalized(t);
        let pred = sol.forward(&[tau]).unwrap();
        let truth = dataset.ground_truth.interpolate(t);
        let tf = truth.flat();
        for (a, b) in pred.iter().zip(&tf) {
            mse += (a - b) * (a - b);
        }
    }
    mse /= 500.0 * 2.0;
    println!("trajectory mse vs truth: {mse:.4e} (log {:.2})", mse.max(1e-12).ln());
}
