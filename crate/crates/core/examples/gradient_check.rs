//! Checks the analytic gradient of the full EM5 network against central
//! finite differences, with dropout masks frozen from one training pass.
//!
//! Run with `cargo run --release --example gradient_check -- [samples]`.

use dvl_calib::dcnet::{DCNetConfig, DCNetModel, ForwardMode};
use dvl_calib::error_models::{BeamErrorTerms, ErrorModelKind};
use dvl_calib::nn::grad_check;
use dvl_calib::seed::{derived_rng, rng_from_seed};
use dvl_calib::simulation::{
    ground_truth_trajectory, run_noising_pipeline, window_series, NoisingConfig, TrajectoryProfile, DEFAULT_MA_WINDOW,
};
use rand::seq::index::sample;

fn main() -> dvl_calib::Result<()> {
    let samples = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let seed = 17;
    let gt = ground_truth_trajectory(
        &TrajectoryProfile::maneuvering(60, 1.5, 0.02, 0),
        DEFAULT_MA_WINDOW,
        &mut derived_rng(seed, "trajectory", 0),
    )?;
    let (dvl, gnss) = run_noising_pipeline(
        &gt,
        &NoisingConfig::new(BeamErrorTerms::from_table_units(1.0, 0.7, 0.05)?, seed),
    )?;
    let windows = window_series(&dvl, &gnss, &gt, 10, 9)?;
    let batch: Vec<_> = windows.iter().take(4).collect();

    let model = DCNetModel::new(DCNetConfig::default(), ErrorModelKind::Em5, seed)?;
    let mut g = dvl_calib::nn::Graph::new();
    let vars: Vec<_> = model.params().iter().map(|p| g.leaf(p.clone(), false)).collect();
    let (_, masks) = model.forward_graph(&mut g, &vars, &batch, ForwardMode::Train(&mut rng_from_seed(seed)))?;

    let weight = 1.0 / batch.len() as f64;
    let (loss, grads) = model.loss_and_grad(&batch, ForwardMode::Frozen(&masks), weight)?;
    let flat_grad: Vec<f64> = grads.concat();
    let theta = model.flat_params();
    println!("EM5 network: {} parameters, loss {loss:.6e}", theta.len());

    let mut probe = model.clone();
    let f = |p: &[f64]| {
        probe.set_flat_params(p).expect("same length");
        probe
            .loss_and_grad(&batch, ForwardMode::Frozen(&masks), weight)
            .expect("forward")
            .0
    };
    let idx = sample(&mut rng_from_seed(seed + 1), theta.len(), samples).into_vec();
    let report = grad_check(f, &theta, &flat_grad, &idx, 1e-6, 1e-5);
    println!(
        "{} sampled parameters: max relative error {:.3e} (tolerance {:.0e}) → {}",
        report.checked,
        report.max_rel_error,
        report.tolerance,
        if report.passed { "pass" } else { "FAIL" }
    );
    Ok(())
}
