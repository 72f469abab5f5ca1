//! Trains an EM5 network, then runs the Monte Carlo calibration protocol on
//! both DVL presets and prints the report tables.
//!
//! Run with `cargo run --release --example monte_carlo -- [epochs] [iterations]`.

use dvl_calib::dcnet::{train, DCNetConfig, DCNetModel};
use dvl_calib::error_models::ErrorModelKind;
use dvl_calib::evaluation::{monte_carlo, EvaluationSetup, ModelBank, Scenario};
use dvl_calib::seed::derived_rng;
use dvl_calib::simulation::{
    build_training_corpus, default_training_profiles, ground_truth_trajectory, CorpusOptions, ErrorGrid,
    DEFAULT_MA_WINDOW,
};

fn main() -> dvl_calib::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let epochs = args.next().flatten().unwrap_or(100);
    let iterations = args.next().flatten().unwrap_or(20);
    let seed = 2024;

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

    let config = DCNetConfig {
        epochs,
        ..DCNetConfig::default()
    };
    let mut model = DCNetModel::new(config, ErrorModelKind::Em5, seed)?;
    let report = train(&mut model, &corpus.train, &corpus.eval, seed)?;
    println!(
        "trained EM5 for {} epochs on {} windows; best eval loss {:.3e}",
        report.epochs(),
        corpus.train.len(),
        report.best_epoch.map_or(f64::NAN, |e| report.eval_loss[e])
    );

    let mut bank = ModelBank::new();
    bank.insert(model);
    let setup = EvaluationSetup::desk(seed)?;
    let mc = monte_carlo(
        &setup,
        &[Scenario::dvl1(), Scenario::dvl2()],
        &bank.approaches(),
        &bank,
        iterations,
        seed,
    )?;
    print!("{}", mc.render_table());
    Ok(())
}
