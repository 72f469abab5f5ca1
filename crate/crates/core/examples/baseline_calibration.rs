//! Calibrates a noised constant-velocity run with the closed-form scale
//! estimator over each candidate window size and reports the convergence time.
//!
//! Run with `cargo run --example baseline_calibration`.

use dvl_calib::baseline::scale_factor_average;
use dvl_calib::error_models::BeamErrorTerms;
use dvl_calib::evaluation::{calibration_phase, Approach, ModelBank, DEFAULT_WINDOW_SIZES};
use dvl_calib::seed::derived_rng;
use dvl_calib::simulation::{
    ground_truth_trajectory, run_noising_pipeline, NoisingConfig, TrajectoryProfile, DEFAULT_MA_WINDOW,
};

fn main() -> dvl_calib::Result<()> {
    let seed = 3;
    let gt = ground_truth_trajectory(
        &TrajectoryProfile::constant_velocity(200, 1.5, 0.02),
        DEFAULT_MA_WINDOW,
        &mut derived_rng(seed, "trajectory", 0),
    )?;

    let scale_only = BeamErrorTerms::from_table_units(1.0, 0.0, 0.0)?;
    let (dvl, _) = run_noising_pipeline(
        &gt,
        &NoisingConfig {
            gnss_noise_std_mps: 0.0,
            ..NoisingConfig::new(scale_only, seed)
        },
    )?;
    let exact = scale_factor_average(&dvl, &gt)?;
    println!(
        "noiseless 1 % scale: k̄ = {:.12} from {} samples",
        exact.k_bar, exact.samples_used
    );

    for (label, terms) in [
        ("DVL1", BeamErrorTerms::from_table_units(1.0, 0.7, 2.0)?),
        ("DVL2", BeamErrorTerms::from_table_units(1.0, 0.7, 0.02)?),
    ] {
        let (dvl, gnss) = run_noising_pipeline(&gt, &NoisingConfig::new(terms, seed))?;
        let out = calibration_phase(
            &dvl,
            &gnss,
            &gt,
            &[Approach::Baseline],
            &ModelBank::new(),
            &DEFAULT_WINDOW_SIZES,
        )?;
        let o = &out[0];
        println!("{label}:");
        for (w, r) in o.window_sizes.iter().zip(&o.rmse_cmps) {
            println!("  window {w:>3} s → RMSE {r:.3} cm/s");
        }
        println!(
            "  convergence time {} s, RMSE {:.3} cm/s, terms {:?}",
            o.t_conv_s,
            o.best_rmse(),
            o.terms
        );
    }
    Ok(())
}
