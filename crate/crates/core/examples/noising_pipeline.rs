//! Generates a lawnmower trajectory, smooths it into ground truth, runs the
//! DVL and GNSS noising pipeline, and writes the three series as CSV.
//!
//! Run with `cargo run --example noising_pipeline -- [out_dir]`.

use std::path::PathBuf;

use dvl_calib::error_models::BeamErrorTerms;
use dvl_calib::evaluation::rmse;
use dvl_calib::seed::derived_rng;
use dvl_calib::simulation::{
    export_csv, ground_truth_trajectory, run_noising_pipeline, window_series, NoisingConfig, TrajectoryProfile,
    DEFAULT_MA_WINDOW, DEFAULT_STRIDE, DEFAULT_WINDOW,
};

fn main() -> dvl_calib::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "noising_out".into()));
    std::fs::create_dir_all(&out).map_err(|e| dvl_calib::Error::io(&out, e))?;
    let seed = 11;

    let profile = TrajectoryProfile::lawnmower(600, 1.5, 120, 0.02);
    let gt = ground_truth_trajectory(&profile, DEFAULT_MA_WINDOW, &mut derived_rng(seed, "trajectory", 0))?;
    let speeds: Vec<f64> = gt.samples().iter().map(|v| v.norm()).collect();
    let (lo, hi) = speeds
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), s| (a.min(*s), b.max(*s)));
    println!("ground truth: {} s, speed {lo:.2}..{hi:.2} m/s", gt.len());

    for (label, terms) in [
        ("DVL1", BeamErrorTerms::from_table_units(1.0, 0.7, 2.0)?),
        ("DVL2", BeamErrorTerms::from_table_units(1.0, 0.7, 0.02)?),
    ] {
        let (dvl, gnss) = run_noising_pipeline(&gt, &NoisingConfig::new(terms, seed))?;
        println!(
            "{label}: raw DVL RMSE {:.3} cm/s, GNSS RMSE {:.3} cm/s",
            rmse(&dvl, &gt)?,
            rmse(&gnss, &gt)?
        );
        let windows = window_series(&dvl, &gnss, &gt, DEFAULT_WINDOW, DEFAULT_STRIDE)?;
        println!("{label}: {} network windows of {DEFAULT_WINDOW} s", windows.len());
        export_csv(&dvl, &out.join(format!("{label}_dvl.csv")))?;
        export_csv(&gnss, &out.join(format!("{label}_gnss.csv")))?;
    }
    export_csv(&gt, &out.join("gt.csv"))?;
    println!("CSV files written to {}", out.display());
    Ok(())
}
