//! Calibration-phase sweep, test-set scoring and Monte Carlo aggregation.
//!
//! Each approach estimates its terms on the first `w` seconds of the
//! calibration trajectory for every candidate `w`, calibrates the remaining
//! seconds, and keeps the `w` (the convergence time) with the lowest RMSE.
//! The retained terms are then applied to independent test trajectories.

use std::fmt;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::baseline::{baseline_calibrate, scale_factor_average, BaselineEstimate};
use crate::dcnet::{estimate_terms, DCNetModel};
use crate::error::{Error, Result};
use crate::error_models::{calibrate, BeamErrorTerms, BodyErrorTerms, ErrorModelKind, FrameRotation};
use crate::geometry::{BeamGeometry, Velocity3};
use crate::seed::{derive_seed, derived_rng};
use crate::simulation::{
    ground_truth_trajectory, run_noising_pipeline, NoisingConfig, TrajectoryProfile, VelocitySeries,
    DEFAULT_GNSS_NOISE_STD_MPS, DEFAULT_MA_WINDOW,
};

pub const DEFAULT_WINDOW_SIZES: [usize; 5] = [20, 40, 60, 80, 100];
pub const DEFAULT_MC_ITERATIONS: usize = 20;
/// Share of failed Monte Carlo iterations above which the run is rejected.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;
/// Trajectory label of the calibration-phase rows.
pub const CALIBRATION_LABEL: &str = "calibration";

/// `sqrt(mean_t Σ_axes (c − g)²)` in cm/s.
pub fn rmse_cmps(calibrated: &[Velocity3], gt: &[Velocity3]) -> Result<f64> {
    if calibrated.len() != gt.len() {
        return Err(Error::domain("calibrated and GT series are not aligned"));
    }
    if calibrated.is_empty() {
        return Err(Error::domain("cannot score an empty series"));
    }
    let sum: f64 = calibrated.iter().zip(gt).map(|(c, g)| (*c - *g).norm().powi(2)).sum();
    Ok((sum / calibrated.len() as f64).sqrt() * 100.0)
}

pub fn rmse(calibrated: &VelocitySeries, gt: &VelocitySeries) -> Result<f64> {
    rmse_cmps(calibrated.samples(), gt.samples())
}

/// `100 · (baseline − approach) / baseline`.
pub fn improvement_pct(baseline: f64, approach: f64) -> f64 {
    100.0 * (baseline - approach) / baseline
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Approach {
    Baseline,
    Dcnet(ErrorModelKind),
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Approach::Baseline => f.write_str("baseline"),
            Approach::Dcnet(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for Approach {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "baseline" {
            Ok(Approach::Baseline)
        } else {
            s.parse().map(Approach::Dcnet)
        }
    }
}

/// Terms retained by an approach, ready to calibrate DVL samples.
#[derive(Clone, Debug, PartialEq)]
pub enum CalibrationTerms {
    Baseline(BaselineEstimate),
    Body(BodyErrorTerms),
}

impl CalibrationTerms {
    pub fn apply(&self, v: Velocity3) -> Result<Velocity3> {
        match self {
            CalibrationTerms::Baseline(est) => baseline_calibrate(v, est),
            CalibrationTerms::Body(terms) => calibrate(v, terms),
        }
    }

    pub fn apply_all(&self, samples: &[Velocity3]) -> Result<Vec<Velocity3>> {
        samples.iter().map(|v| self.apply(*v)).collect()
    }
}

/// At most one trained model per error model kind.
#[derive(Clone, Debug, Default)]
pub struct ModelBank {
    models: Vec<DCNetModel>,
}

impl ModelBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `model`, replacing any model of the same kind.
    pub fn insert(&mut self, model: DCNetModel) {
        self.models.retain(|m| m.kind() != model.kind());
        self.models.push(model);
        self.models.sort_by_key(DCNetModel::kind);
    }

    pub fn get(&self, kind: ErrorModelKind) -> Option<&DCNetModel> {
        self.models.iter().find(|m| m.kind() == kind)
    }

    pub fn kinds(&self) -> Vec<ErrorModelKind> {
        self.models.iter().map(DCNetModel::kind).collect()
    }

    /// Baseline followed by one approach per stored model.
    pub fn approaches(&self) -> Vec<Approach> {
        std::iter::once(Approach::Baseline)
            .chain(self.kinds().into_iter().map(Approach::Dcnet))
            .collect()
    }
}

/// Estimates an approach's terms from aligned DVL and GNSS segments.
pub fn estimate(
    approach: Approach,
    bank: &ModelBank,
    dvl: &VelocitySeries,
    gnss: &VelocitySeries,
) -> Result<CalibrationTerms> {
    match approach {
        Approach::Baseline => scale_factor_average(dvl, gnss).map(CalibrationTerms::Baseline),
        Approach::Dcnet(kind) => {
            let model = bank
                .get(kind)
                .ok_or_else(|| Error::Evaluation(format!("no trained model for {kind}")))?;
            estimate_terms(model, dvl, gnss).map(CalibrationTerms::Body)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationOutcome {
    pub approach: Approach,
    pub window_sizes: Vec<usize>,
    /// RMSE (cm/s) of the remainder for each window size.
    pub rmse_cmps: Vec<f64>,
    pub t_conv_s: usize,
    pub terms: CalibrationTerms,
}

impl CalibrationOutcome {
    pub fn best_rmse(&self) -> f64 {
        self.rmse_cmps
            .iter()
            .zip(&self.window_sizes)
            .find(|(_, w)| **w == self.t_conv_s)
            .map_or(f64::NAN, |(r, _)| *r)
    }
}

/// Index of the smallest RMSE; exact ties go to the earliest entry.
pub fn select_t_conv(rmse: &[f64]) -> Result<usize> {
    if rmse.is_empty() {
        return Err(Error::domain("no RMSE values to choose from"));
    }
    if let Some(i) = rmse.iter().position(|r| r.is_nan()) {
        return Err(Error::Evaluation(format!("RMSE at position {i} is NaN")));
    }
    let mut best = 0;
    for (i, r) in rmse.iter().enumerate() {
        if *r < rmse[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Window-size sweep over a calibration trajectory.
///
/// For each size `w` the approach sees only samples `0..w` and is scored on
/// samples `w..`, so estimation and scoring data never overlap.
pub fn calibration_phase(
    dvl: &VelocitySeries,
    gnss: &VelocitySeries,
    gt: &VelocitySeries,
    approaches: &[Approach],
    bank: &ModelBank,
    window_sizes: &[usize],
) -> Result<Vec<CalibrationOutcome>> {
    if dvl.len() != gnss.len() || dvl.len() != gt.len() {
        return Err(Error::domain("calibration series are not aligned"));
    }
    let longest = window_sizes
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::domain("no calibration window sizes"))?;
    if dvl.len() <= longest {
        return Err(Error::domain(format!(
            "calibration trajectory of {} s leaves nothing to score after a {longest} s window",
            dvl.len()
        )));
    }
    let n = dvl.len();
    approaches
        .iter()
        .map(|&approach| {
            let mut rmses = Vec::with_capacity(window_sizes.len());
            let mut all_terms = Vec::with_capacity(window_sizes.len());
            for &w in window_sizes {
                let terms = estimate(approach, bank, &dvl.slice(0..w), &gnss.slice(0..w))?;
                let calibrated = terms.apply_all(&dvl.samples()[w..n])?;
                rmses.push(rmse_cmps(&calibrated, &gt.samples()[w..n])?);
                all_terms.push(terms);
            }
            let best = select_t_conv(&rmses)?;
            Ok(CalibrationOutcome {
                approach,
                window_sizes: window_sizes.to_vec(),
                rmse_cmps: rmses,
                t_conv_s: window_sizes[best],
                terms: all_terms.swap_remove(best),
            })
        })
        .collect()
}

/// A noised test trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisedTest {
    pub name: String,
    pub dvl: VelocitySeries,
    pub gt: VelocitySeries,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestScore {
    pub approach: Approach,
    pub trajectory: String,
    pub rmse_cmps: f64,
    /// Relative to the baseline on the same trajectory, when a baseline
    /// outcome is present.
    pub improvement_pct: Option<f64>,
    pub t_conv_s: usize,
}

/// Applies each outcome's terms to every test trajectory.
pub fn evaluate_test(tests: &[NoisedTest], outcomes: &[CalibrationOutcome]) -> Result<Vec<TestScore>> {
    let mut scores = Vec::with_capacity(tests.len() * outcomes.len());
    for test in tests {
        let mut row = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            let calibrated = o.terms.apply_all(test.dvl.samples())?;
            row.push(rmse_cmps(&calibrated, test.gt.samples())?);
        }
        let base = outcomes
            .iter()
            .position(|o| o.approach == Approach::Baseline)
            .map(|i| row[i]);
        for (o, r) in outcomes.iter().zip(row) {
            scores.push(TestScore {
                approach: o.approach,
                trajectory: test.name.clone(),
                rmse_cmps: r,
                improvement_pct: base.map(|b| improvement_pct(b, r)),
                t_conv_s: o.t_conv_s,
            });
        }
    }
    Ok(scores)
}

/// A named DVL error preset.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub beam_terms: BeamErrorTerms,
}

impl Scenario {
    pub fn new(name: impl Into<String>, beam_terms: BeamErrorTerms) -> Self {
        Self {
            name: name.into(),
            beam_terms,
        }
    }

    /// Scale 1.0 %, bias 0.7 cm/s, noise 2.0 cm/s.
    pub fn dvl1() -> Self {
        Self::new(
            "DVL1",
            BeamErrorTerms::from_table_units(1.0, 0.7, 2.0).expect("valid preset"),
        )
    }

    /// Scale 1.0 %, bias 0.7 cm/s, noise 0.02 cm/s.
    pub fn dvl2() -> Self {
        Self::new(
            "DVL2",
            BeamErrorTerms::from_table_units(1.0, 0.7, 0.02).expect("valid preset"),
        )
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "DVL1" => Ok(Self::dvl1()),
            "DVL2" => Ok(Self::dvl2()),
            _ => Err(Error::Config(format!("unknown scenario preset '{name}'"))),
        }
    }
}

/// Ground-truth trajectories and sensor settings shared by every iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationSetup {
    /// Calibration trajectory; the first `calibration_len` samples form the
    /// calibration phase and the rest is scored as a held-out tail.
    pub calibration_gt: VelocitySeries,
    pub calibration_len: usize,
    pub tests: Vec<(String, VelocitySeries)>,
    pub window_sizes: Vec<usize>,
    pub gnss_noise_std_mps: f64,
    pub geometry: BeamGeometry,
    pub rotation: FrameRotation,
}

/// Default desk-scale test plan: four lawnmower surveys of 600 s.
pub fn default_test_profiles() -> Vec<(String, TrajectoryProfile)> {
    [(1.5, 120), (1.2, 90), (1.8, 150), (1.0, 60)]
        .into_iter()
        .enumerate()
        .map(|(i, (speed, leg))| {
            (
                format!("T{}", i + 1),
                TrajectoryProfile::lawnmower(600, speed, leg, 0.02),
            )
        })
        .collect()
}

/// Label of the held-out calibration tail.
pub const TAIL_LABEL: &str = "tail";

impl EvaluationSetup {
    /// Generates ground truth for the calibration trajectory (calibration
    /// segment followed by an optional tail) and each test profile.
    pub fn generate(
        calibration: &TrajectoryProfile,
        tail: Option<&TrajectoryProfile>,
        tests: &[(String, TrajectoryProfile)],
        seed: u64,
    ) -> Result<Self> {
        let mut cal = ground_truth_trajectory(
            calibration,
            DEFAULT_MA_WINDOW,
            &mut derived_rng(seed, "trajectory/calibration", 0),
        )?;
        let calibration_len = cal.len();
        if let Some(t) = tail {
            let tail_gt = ground_truth_trajectory(t, DEFAULT_MA_WINDOW, &mut derived_rng(seed, "trajectory/tail", 0))?;
            cal = cal.concat(&tail_gt);
        }
        let tests = tests
            .iter()
            .enumerate()
            .map(|(i, (name, p))| {
                let gt = ground_truth_trajectory(
                    p,
                    DEFAULT_MA_WINDOW,
                    &mut derived_rng(seed, "trajectory/test", i as u64),
                )?;
                Ok((name.clone(), gt))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            calibration_gt: cal,
            calibration_len,
            tests,
            window_sizes: DEFAULT_WINDOW_SIZES.to_vec(),
            gnss_noise_std_mps: DEFAULT_GNSS_NOISE_STD_MPS,
            geometry: BeamGeometry::default(),
            rotation: FrameRotation::identity(),
        })
    }

    /// 200 s constant-velocity calibration at 1.5 m/s with a 600 s
    /// mixed-legs tail, and [`default_test_profiles`].
    pub fn desk(seed: u64) -> Result<Self> {
        Self::generate(
            &TrajectoryProfile::constant_velocity(200, 1.5, 0.02),
            Some(&TrajectoryProfile::mixed_legs(600, 1.5, 0.02, 3)),
            &default_test_profiles(),
            seed,
        )
    }

    fn noising(&self, scenario: &Scenario, seed: u64) -> NoisingConfig {
        NoisingConfig {
            beam_terms: scenario.beam_terms,
            gnss_noise_std_mps: self.gnss_noise_std_mps,
            geometry: self.geometry,
            rotation: self.rotation,
            seed,
        }
    }
}

/// Everything one Monte Carlo iteration produced.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationResult {
    pub scenario: String,
    pub iteration: usize,
    pub outcomes: Vec<CalibrationOutcome>,
    pub scores: Vec<TestScore>,
}

impl IterationResult {
    pub fn outcome(&self, approach: Approach) -> Option<&CalibrationOutcome> {
        self.outcomes.iter().find(|o| o.approach == approach)
    }

    pub fn score(&self, approach: Approach, trajectory: &str) -> Option<&TestScore> {
        self.scores
            .iter()
            .find(|s| s.approach == approach && s.trajectory == trajectory)
    }
}

/// Noises the calibration and test trajectories with `seed`, runs the
/// calibration phase and scores every test trajectory.
pub fn run_iteration(
    setup: &EvaluationSetup,
    scenario: &Scenario,
    approaches: &[Approach],
    bank: &ModelBank,
    seed: u64,
    iteration: usize,
) -> Result<IterationResult> {
    let cal_cfg = setup.noising(scenario, derive_seed(seed, "calibration", 0));
    let (dvl, gnss) = run_noising_pipeline(&setup.calibration_gt, &cal_cfg)?;
    let n = setup.calibration_len;
    let gt = &setup.calibration_gt;
    let outcomes = calibration_phase(
        &dvl.slice(0..n),
        &gnss.slice(0..n),
        &gt.slice(0..n),
        approaches,
        bank,
        &setup.window_sizes,
    )?;

    let mut tests = Vec::with_capacity(setup.tests.len() + 1);
    for (i, (name, test_gt)) in setup.tests.iter().enumerate() {
        let cfg = setup.noising(scenario, derive_seed(seed, "test", i as u64));
        let (test_dvl, _) = run_noising_pipeline(test_gt, &cfg)?;
        tests.push(NoisedTest {
            name: name.clone(),
            dvl: test_dvl,
            gt: test_gt.clone(),
        });
    }
    if gt.len() > n {
        tests.push(NoisedTest {
            name: TAIL_LABEL.into(),
            dvl: dvl.slice(n..gt.len()),
            gt: gt.slice(n..gt.len()),
        });
    }
    let scores = evaluate_test(&tests, &outcomes)?;
    Ok(IterationResult {
        scenario: scenario.name.clone(),
        iteration,
        outcomes,
        scores,
    })
}

/// One line of the report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub approach: Approach,
    pub trajectory: String,
    /// Representative run: the first successful iteration.
    pub rmse_cmps: f64,
    pub improvement_pct: Option<f64>,
    pub t_conv_s: usize,
    pub mc_mean: f64,
    /// Sample standard deviation (n − 1); zero for a single iteration.
    pub mc_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationFailure {
    pub scenario: String,
    pub iteration: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalibrationReport {
    pub rows: Vec<ReportRow>,
    pub iterations: Vec<IterationResult>,
    pub failures: Vec<IterationFailure>,
}

/// Mean and sample standard deviation (n − 1).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Runs `iterations` independent noise draws per scenario and aggregates.
///
/// Iteration `i` uses sub-seed `derive_seed(seed, "mc", i)` for every
/// scenario. Failed iterations are recorded and excluded; more than
/// [`MAX_FAILURE_FRACTION`] failures in any scenario is an error.
pub fn monte_carlo(
    setup: &EvaluationSetup,
    scenarios: &[Scenario],
    approaches: &[Approach],
    bank: &ModelBank,
    iterations: usize,
    seed: u64,
) -> Result<CalibrationReport> {
    if iterations == 0 {
        return Err(Error::domain("Monte Carlo needs at least one iteration"));
    }
    let mut report = CalibrationReport::default();
    for scenario in scenarios {
        let results: Vec<Result<IterationResult>> = (0..iterations)
            .into_par_iter()
            .map(|i| run_iteration(setup, scenario, approaches, bank, derive_seed(seed, "mc", i as u64), i))
            .collect();
        let mut ok = Vec::with_capacity(iterations);
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(it) => ok.push(it),
                Err(e) => report.failures.push(IterationFailure {
                    scenario: scenario.name.clone(),
                    iteration: i,
                    message: e.to_string(),
                }),
            }
        }
        let failed = iterations - ok.len();
        if failed as f64 > MAX_FAILURE_FRACTION * iterations as f64 {
            let first = report.failures.iter().find(|f| f.scenario == scenario.name);
            return Err(Error::Evaluation(format!(
                "{failed} of {iterations} iterations failed for {}{}",
                scenario.name,
                first.map(|f| format!(" (first: {})", f.message)).unwrap_or_default()
            )));
        }
        report.rows.extend(aggregate(&scenario.name, &ok));
        report.iterations.extend(ok);
    }
    Ok(report)
}

fn aggregate(scenario: &str, its: &[IterationResult]) -> Vec<ReportRow> {
    let Some(first) = its.first() else {
        return Vec::new();
    };
    let mut rows = Vec::new();
    let base_first = first.outcome(Approach::Baseline).map(CalibrationOutcome::best_rmse);
    for o in &first.outcomes {
        let values: Vec<f64> = its
            .iter()
            .filter_map(|it| it.outcome(o.approach).map(CalibrationOutcome::best_rmse))
            .collect();
        let (mc_mean, mc_std) = mean_std(&values);
        rows.push(ReportRow {
            scenario: scenario.into(),
            approach: o.approach,
            trajectory: CALIBRATION_LABEL.into(),
            rmse_cmps: o.best_rmse(),
            improvement_pct: base_first.map(|b| improvement_pct(b, o.best_rmse())),
            t_conv_s: o.t_conv_s,
            mc_mean,
            mc_std,
        });
    }
    for s in &first.scores {
        let values: Vec<f64> = its
            .iter()
            .filter_map(|it| it.score(s.approach, &s.trajectory).map(|x| x.rmse_cmps))
            .collect();
        let (mc_mean, mc_std) = mean_std(&values);
        rows.push(ReportRow {
            scenario: scenario.into(),
            approach: s.approach,
            trajectory: s.trajectory.clone(),
            rmse_cmps: s.rmse_cmps,
            improvement_pct: s.improvement_pct,
            t_conv_s: s.t_conv_s,
            mc_mean,
            mc_std,
        });
    }
    rows
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl CalibrationReport {
    pub const CSV_HEADER: &'static str =
        "scenario,approach,trajectory,rmse_cmps,improvement_pct,t_conv_s,mc_mean,mc_std";

    pub fn row(&self, scenario: &str, approach: Approach, trajectory: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.approach == approach && r.trajectory == trajectory)
    }

    /// Selected convergence times of `approach` per successful iteration.
    pub fn t_conv_per_iteration(&self, scenario: &str, approach: Approach) -> Vec<usize> {
        self.iterations
            .iter()
            .filter(|it| it.scenario == scenario)
            .filter_map(|it| it.outcome(approach).map(|o| o.t_conv_s))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{:.6},{},{},{:.6},{:.6}",
                r.scenario,
                r.approach,
                r.trajectory,
                r.rmse_cmps,
                fmt_opt(r.improvement_pct),
                r.t_conv_s,
                r.mc_mean,
                r.mc_std
            )?;
        }
        Ok(())
    }

    /// Reads the rows written by [`write_csv`](Self::write_csv).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let err = |line: u64, message: String| Error::Ingest {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| err(1, e.to_string()))?;
        let header = reader.headers().map_err(|e| err(1, e.to_string()))?;
        if header.iter().collect::<Vec<_>>().join(",") != Self::CSV_HEADER {
            return Err(err(1, format!("expected header {}", Self::CSV_HEADER)));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            let num = |i: usize| -> Result<f64> {
                record[i]
                    .parse()
                    .map_err(|_| err(line, format!("cannot parse '{}' as a number", &record[i])))
            };
            rows.push(ReportRow {
                scenario: record[0].to_string(),
                approach: record[1].parse().map_err(|e: Error| err(line, e.to_string()))?,
                trajectory: record[2].to_string(),
                rmse_cmps: num(3)?,
                improvement_pct: if record[4].is_empty() { None } else { Some(num(4)?) },
                t_conv_s: record[5]
                    .parse()
                    .map_err(|_| err(line, format!("cannot parse '{}' as a window size", &record[5])))?,
                mc_mean: num(6)?,
                mc_std: num(7)?,
            });
        }
        Ok(Self {
            rows,
            ..Self::default()
        })
    }

    /// Plain-text tables: per scenario, the representative run with the
    /// convergence time (calibration column) or improvement % (test
    /// columns) in parentheses, then the Monte Carlo mean ± std.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let mut scenarios: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !scenarios.contains(&r.scenario.as_str()) {
                scenarios.push(&r.scenario);
            }
        }
        for sc in scenarios {
            let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.scenario == sc).collect();
            let mut cols: Vec<&str> = Vec::new();
            let mut approaches: Vec<Approach> = Vec::new();
            for r in &rows {
                if !cols.contains(&r.trajectory.as_str()) {
                    cols.push(&r.trajectory);
                }
                if !approaches.contains(&r.approach) {
                    approaches.push(r.approach);
                }
            }
            let iters = self.iterations.iter().filter(|it| it.scenario == sc).count();
            let count = if iters > 0 {
                format!(" ({iters} iterations)")
            } else {
                String::new()
            };
            for (title, mc) in [("representative run", false), ("Monte Carlo mean ± std", true)] {
                let _ = writeln!(out, "{sc}: RMSE [cm/s], {title}{count}");
                let _ = write!(out, "{:<10}", "approach");
                for c in &cols {
                    let _ = write!(out, "{c:>18}");
                }
                out.push('\n');
                for a in &approaches {
                    let _ = write!(out, "{:<10}", a.to_string());
                    for c in &cols {
                        let cell = rows.iter().find(|r| r.approach == *a && r.trajectory == *c).map(|r| {
                            if mc {
                                format!("{:.2} ± {:.2}", r.mc_mean, r.mc_std)
                            } else if r.trajectory == CALIBRATION_LABEL {
                                format!("{:.2} ({})", r.rmse_cmps, r.t_conv_s)
                            } else {
                                match r.improvement_pct {
                                    Some(p) if p.abs() < 1.0 => format!("{:.2} (<1)", r.rmse_cmps),
                                    Some(p) => format!("{:.2} ({:.0})", r.rmse_cmps, p),
                                    None => format!("{:.2}", r.rmse_cmps),
                                }
                            }
                        });
                        let _ = write!(out, "{:>18}", cell.unwrap_or_else(|| "-".into()));
                    }
                    out.push('\n');
                }
                out.push('\n');
            }
        }
        if !self.failures.is_empty() {
            let _ = writeln!(out, "{} iteration(s) failed and were excluded", self.failures.len());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::Frame;
    use approx::assert_abs_diff_eq;

    fn series(v: Vec<Velocity3>) -> VelocitySeries {
        VelocitySeries::from_samples(0.0, v, Frame::Body)
    }

    #[test]
    fn rmse_cases() {
        let a = vec![Velocity3::new(1.0, 0.2, -0.1); 7];
        assert_eq!(rmse_cmps(&a, &a).unwrap(), 0.0);
        let off: Vec<_> = a.iter().map(|v| *v + Velocity3::new(0.001, 0.001, 0.001)).collect();
        assert_abs_diff_eq!(rmse_cmps(&off, &a).unwrap(), 3f64.sqrt() * 0.1, epsilon = 1e-10);
        let x: Vec<_> = a.iter().map(|v| *v + Velocity3::new(0.01, 0.0, 0.0)).collect();
        assert_abs_diff_eq!(rmse_cmps(&x, &a).unwrap(), 1.0, epsilon = 1e-10);
        assert!(rmse_cmps(&[], &[]).is_err());
        assert!(rmse(&series(a.clone()), &series(a[..3].to_vec())).is_err());
    }

    #[test]
    fn t_conv_argmin_and_ties() {
        let sizes = DEFAULT_WINDOW_SIZES;
        assert_eq!(sizes[select_t_conv(&[5.0, 4.0, 6.0, 7.0, 8.0]).unwrap()], 40);
        assert_eq!(sizes[select_t_conv(&[1.0, 0.5, 0.5, 0.7, 0.5]).unwrap()], 40);
        assert_eq!(select_t_conv(&[0.0; 5]).unwrap(), 0);
        assert!(select_t_conv(&[]).is_err());
        assert!(select_t_conv(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn improvement_values() {
        assert_abs_diff_eq!(improvement_pct(0.74, 0.21), 71.62, epsilon = 0.01);
        assert!(improvement_pct(5.94, 5.90) < 1.0);
        assert_eq!(improvement_pct(0.5, 0.5), 0.0);
    }

    #[test]
    fn mean_std_sample_convention() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert_abs_diff_eq!(s, (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }

    #[test]
    fn baseline_recovers_noiseless_scale_at_every_window() {
        let gt = series(vec![Velocity3::new(1.5, 0.0, 0.0); 200]);
        let dvl = series(gt.samples().iter().map(|v| *v * 1.01).collect());
        let out = calibration_phase(
            &dvl,
            &gt,
            &gt,
            &[Approach::Baseline],
            &ModelBank::new(),
            &DEFAULT_WINDOW_SIZES,
        )
        .unwrap();
        assert!(out[0].rmse_cmps.iter().all(|r| *r < 1e-10));
        assert_eq!(out[0].t_conv_s, 20);
    }

    #[test]
    fn calibration_phase_needs_samples_after_the_longest_window() {
        let s = series(vec![Velocity3::new(1.5, 0.0, 0.0); 100]);
        assert!(calibration_phase(
            &s,
            &s,
            &s,
            &[Approach::Baseline],
            &ModelBank::new(),
            &DEFAULT_WINDOW_SIZES
        )
        .is_err());
    }

    #[test]
    fn missing_model_is_named() {
        let s = series(vec![Velocity3::new(1.5, 0.0, 0.0); 200]);
        let e = calibration_phase(
            &s,
            &s,
            &s,
            &[Approach::Dcnet(ErrorModelKind::Em3)],
            &ModelBank::new(),
            &[20],
        )
        .unwrap_err();
        assert!(e.to_string().contains("EM3"), "{e}");
    }

    #[test]
    fn approach_names_roundtrip() {
        for a in [Approach::Baseline, Approach::Dcnet(ErrorModelKind::Em4)] {
            assert_eq!(a.to_string().parse::<Approach>().unwrap(), a);
        }
    }
}
