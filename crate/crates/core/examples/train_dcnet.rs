//! Trains an EM5 network on a desk corpus and compares its estimate on a
//! fresh calibration run with the planted terms.
//!
//! Run with `cargo run --release --example train_dcnet -- [epochs]`.

use dvl_calib::dcnet::{estimate_terms, train, DCNetConfig, DCNetModel};
use dvl_calib::error_models::{BeamErrorTerms, ErrorModelKind};
use dvl_calib::seed::derived_rng;
use dvl_calib::simulation::{
    build_training_corpus, default_training_profiles, ground_truth_trajectory, run_noising_pipeline, CorpusOptions,
    ErrorGrid, NoisingConfig, TrajectoryProfile, DEFAULT_MA_WINDOW,
};

fn main() -> dvl_calib::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let seed = 7;

    let trajectories = default_training_profiles()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            ground_truth_trajectory(
                p,
                DEFAULT_MA_WINDOW,
                &mut derived_rng(seed, "train-trajectory", i as u64),
            )
        })
        .collect::<dvl_calib::Result<Vec<_>>>()?;
    let corpus = build_training_corpus(&trajectories, &ErrorGrid::desk(), &CorpusOptions::default(), seed)?;
    println!(
        "corpus: {} train / {} eval windows",
        corpus.train.len(),
        corpus.eval.len()
    );

    let config = DCNetConfig {
        epochs,
        ..DCNetConfig::default()
    };
    let mut model = DCNetModel::new(config, ErrorModelKind::Em5, seed)?;
    println!("EM5 network with {} parameters", model.param_count());
    let report = train(&mut model, &corpus.train, &corpus.eval, seed)?;
    for e in 0..report.epochs() {
        println!(
            "epoch {:>3}  train {:.3e}  eval {:.3e}  {:.1} s",
            e + 1,
            report.train_loss[e],
            report.eval_loss[e],
            report.wall_time_s[e]
        );
    }

    let planted = BeamErrorTerms::from_table_units(1.0, 0.7, 0.02)?;
    let alpha = 20f64.to_radians();
    println!(
        "planted: scale {:.4} on every axis, bias z {:.5} m/s",
        planted.scale,
        planted.bias_mps / alpha.cos()
    );
    for speed in [1.0, 1.5, 1.8] {
        let gt = ground_truth_trajectory(
            &TrajectoryProfile::constant_velocity(100, speed, 0.02),
            DEFAULT_MA_WINDOW,
            &mut derived_rng(seed, "calibration", 0),
        )?;
        let (dvl, gnss) = run_noising_pipeline(&gt, &NoisingConfig::new(planted, seed + 1))?;
        let t = estimate_terms(&model, &dvl, &gnss)?;
        let (s, b) = (t.scale_vec(), t.bias_vec());
        println!(
            "{speed} m/s: scale [{:.4}, {:.4}, {:.4}]  bias [{:.5}, {:.5}, {:.5}] m/s",
            s.x, s.y, s.z, b.x, b.y, b.z
        );
    }
    Ok(())
}
