//! Synthetic trajectories, the moving-average ground truth, the DVL/GNSS
//! noising pipeline, windowing and training-corpus assembly.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::Distribution;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::error_models::{apply_beam_errors, gaussian, BeamErrorTerms, FrameRotation};
use crate::geometry::{project_to_beams, BeamGeometry, Velocity3, VelocitySolver};
use crate::seed::{derive_seed, derived_rng, Rng};

/// Allowed deviation of a timestamp step from exactly one second.
pub const SPACING_TOLERANCE_S: f64 = 1e-6;

/// Samples averaged by the ground-truth moving-average filter.
pub const DEFAULT_MA_WINDOW: usize = 5;
pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_STRIDE: usize = 9;
pub const DEFAULT_GNSS_NOISE_STD_MPS: f64 = 0.005;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    Body,
    Navigation,
    Dvl,
}

/// A 1 Hz, 3-axis velocity series.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocitySeries {
    timestamps: Vec<f64>,
    samples: Vec<Velocity3>,
    frame: Frame,
    ground_truth: bool,
}

impl VelocitySeries {
    pub fn new(timestamps: Vec<f64>, samples: Vec<Velocity3>, frame: Frame) -> Result<Self> {
        if timestamps.len() != samples.len() {
            return Err(Error::domain(format!(
                "{} timestamps for {} samples",
                timestamps.len(),
                samples.len()
            )));
        }
        if let Some(i) = spacing_violation(&timestamps) {
            return Err(Error::domain(format!(
                "timestamps must advance by 1 s; violated at sample {i}"
            )));
        }
        Ok(Self {
            timestamps,
            samples,
            frame,
            ground_truth: false,
        })
    }

    /// Series starting at `t0` with one sample per second.
    pub fn from_samples(t0: f64, samples: Vec<Velocity3>, frame: Frame) -> Self {
        let timestamps = (0..samples.len()).map(|i| t0 + i as f64).collect();
        Self {
            timestamps,
            samples,
            frame,
            ground_truth: false,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn samples(&self) -> &[Velocity3] {
        &self.samples
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn is_ground_truth(&self) -> bool {
        self.ground_truth
    }

    /// Marks the series as ground truth.
    pub fn into_ground_truth(mut self) -> Self {
        self.ground_truth = true;
        self
    }

    /// Sub-series over `range` (sample indices).
    pub fn slice(&self, range: std::ops::Range<usize>) -> VelocitySeries {
        VelocitySeries {
            timestamps: self.timestamps[range.clone()].to_vec(),
            samples: self.samples[range].to_vec(),
            frame: self.frame,
            ground_truth: self.ground_truth,
        }
    }

    /// Appends `other`, retiming it to continue at 1 Hz.
    pub fn concat(&self, other: &VelocitySeries) -> VelocitySeries {
        let t0 = self.timestamps.first().copied().unwrap_or(0.0);
        let mut samples = self.samples.clone();
        samples.extend_from_slice(&other.samples);
        let mut out = VelocitySeries::from_samples(t0, samples, self.frame);
        out.ground_truth = self.ground_truth && other.ground_truth;
        out
    }

    /// Same timestamps and frame, new samples.
    pub fn with_samples(&self, samples: Vec<Velocity3>) -> VelocitySeries {
        assert_eq!(samples.len(), self.samples.len());
        VelocitySeries {
            timestamps: self.timestamps.clone(),
            samples,
            frame: self.frame,
            ground_truth: false,
        }
    }
}

fn spacing_violation(ts: &[f64]) -> Option<usize> {
    if let Some(i) = ts.iter().position(|t| !t.is_finite()) {
        return Some(i);
    }
    ts.windows(2)
        .position(|w| ((w[1] - w[0]) - 1.0).abs() > SPACING_TOLERANCE_S)
        .map(|i| i + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryKind {
    ConstantVelocity,
    Lawnmower,
    MixedLegs,
}

/// One straight leg of a heading plan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Leg {
    pub heading_rad: f64,
    pub duration_s: usize,
    /// Fraction of the nominal speed held on this leg.
    pub speed_factor: f64,
}

/// Describes a synthetic trajectory in the body frame.
///
/// Body-frame velocity is dominated by surge. Heading changes show up only
/// as transients: surge dips and a sway (side-slip) pulse proportional to
/// the turn rate while the vehicle turns between legs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryProfile {
    pub kind: TrajectoryKind,
    pub duration_s: usize,
    pub nominal_speed_mps: f64,
    pub legs: Vec<Leg>,
    pub turn_s: usize,
    /// Bound of the uniform per-axis jitter added to every sample.
    pub jitter_mps: f64,
}

const TURN_SURGE_DIP: f64 = 0.3;
const SWAY_GAIN: f64 = 0.6;

impl TrajectoryProfile {
    pub fn constant_velocity(duration_s: usize, speed: f64, jitter: f64) -> Self {
        Self {
            kind: TrajectoryKind::ConstantVelocity,
            duration_s,
            nominal_speed_mps: speed,
            legs: vec![Leg {
                heading_rad: 0.0,
                duration_s,
                speed_factor: 1.0,
            }],
            turn_s: 0,
            jitter_mps: jitter,
        }
    }

    /// Alternating reciprocal legs of `leg_s` seconds joined by 30 s turns.
    pub fn lawnmower(duration_s: usize, speed: f64, leg_s: usize, jitter: f64) -> Self {
        Self {
            kind: TrajectoryKind::Lawnmower,
            duration_s,
            nominal_speed_mps: speed,
            legs: vec![
                Leg {
                    heading_rad: 0.0,
                    duration_s: leg_s,
                    speed_factor: 1.0,
                },
                Leg {
                    heading_rad: PI,
                    duration_s: leg_s,
                    speed_factor: 1.0,
                },
            ],
            turn_s: 30,
            jitter_mps: jitter,
        }
    }

    /// Irregular legs with varying headings and speeds. `variant` rotates
    /// through the plan so different trajectories differ.
    pub fn mixed_legs(duration_s: usize, speed: f64, jitter: f64, variant: usize) -> Self {
        const PLAN: [(f64, usize, f64); 6] = [
            (0.0, 90, 1.0),
            (70.0, 60, 0.8),
            (160.0, 120, 0.9),
            (250.0, 45, 0.7),
            (200.0, 80, 1.0),
            (320.0, 100, 0.85),
        ];
        let legs = (0..PLAN.len())
            .map(|i| {
                let (h, d, s) = PLAN[(i + variant) % PLAN.len()];
                Leg {
                    heading_rad: h.to_radians(),
                    duration_s: d,
                    speed_factor: s,
                }
            })
            .collect();
        Self {
            kind: TrajectoryKind::MixedLegs,
            duration_s,
            nominal_speed_mps: speed,
            legs,
            turn_s: 20,
            jitter_mps: jitter,
        }
    }

    /// Short legs with large speed changes and quick turns, so that most
    /// 10 s windows contain a speed transient.
    pub fn maneuvering(duration_s: usize, speed: f64, jitter: f64, variant: usize) -> Self {
        const PLAN: [(f64, usize, f64); 8] = [
            (0.0, 12, 1.0),
            (90.0, 8, 0.6),
            (180.0, 15, 1.2),
            (45.0, 10, 0.8),
            (300.0, 8, 0.5),
            (210.0, 18, 1.1),
            (120.0, 10, 0.7),
            (20.0, 12, 0.9),
        ];
        let legs = (0..PLAN.len())
            .map(|i| {
                let (h, d, s) = PLAN[(i + variant) % PLAN.len()];
                Leg {
                    heading_rad: h.to_radians(),
                    duration_s: d,
                    speed_factor: s,
                }
            })
            .collect();
        Self {
            kind: TrajectoryKind::MixedLegs,
            duration_s,
            nominal_speed_mps: speed,
            legs,
            turn_s: 8,
            jitter_mps: jitter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration_s < 20 {
            return Err(Error::domain(format!(
                "trajectory duration {} s is below 20 s",
                self.duration_s
            )));
        }
        if !(self.nominal_speed_mps > 0.0 && self.nominal_speed_mps <= 3.0) {
            return Err(Error::domain(format!(
                "nominal speed {} m/s outside (0, 3]",
                self.nominal_speed_mps
            )));
        }
        if self.legs.is_empty() || self.legs.iter().any(|l| l.duration_s == 0) {
            return Err(Error::domain("heading plan needs legs of positive duration"));
        }
        if !(self.jitter_mps >= 0.0) {
            return Err(Error::domain("jitter must be non-negative"));
        }
        Ok(())
    }
}

/// Training trajectories used when none are configured: one mixed-legs
/// survey and two maneuvering runs of 300 s each.
pub fn default_training_profiles() -> Vec<TrajectoryProfile> {
    vec![
        TrajectoryProfile::maneuvering(300, 1.0, 0.02, 0),
        TrajectoryProfile::maneuvering(300, 1.3, 0.02, 2),
        TrajectoryProfile::maneuvering(300, 1.6, 0.02, 4),
        TrajectoryProfile::maneuvering(300, 1.9, 0.02, 6),
    ]
}

/// Wraps a heading difference into (−π, π].
fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Generates a 1 Hz body-frame velocity series for `profile`.
pub fn generate_trajectory(profile: &TrajectoryProfile, rng: &mut Rng) -> Result<VelocitySeries> {
    profile.validate()?;
    let v0 = profile.nominal_speed_mps;
    let mut clean = Vec::with_capacity(profile.duration_s);
    let mut leg_idx = 0;
    while clean.len() < profile.duration_s {
        let leg = profile.legs[leg_idx % profile.legs.len()];
        let next = profile.legs[(leg_idx + 1) % profile.legs.len()];
        for _ in 0..leg.duration_s {
            clean.push(Velocity3::new(v0 * leg.speed_factor, 0.0, 0.0));
        }
        if profile.kind != TrajectoryKind::ConstantVelocity && profile.turn_s > 0 {
            let dpsi = wrap_angle(next.heading_rad - leg.heading_rad);
            let rate = dpsi / profile.turn_s as f64;
            let dip = TURN_SURGE_DIP * dpsi.abs() / PI;
            for k in 0..profile.turn_s {
                let u = (k as f64 + 0.5) / profile.turn_s as f64;
                let pulse = (PI * u).sin();
                let base = v0 * (leg.speed_factor + (next.speed_factor - leg.speed_factor) * u);
                let surge = base * (1.0 - dip * pulse);
                let sway = SWAY_GAIN * rate * base * pulse;
                clean.push(Velocity3::new(surge, sway, 0.0));
            }
        }
        leg_idx += 1;
    }
    clean.truncate(profile.duration_s);

    let j = profile.jitter_mps;
    let samples = clean
        .into_iter()
        .map(|v| {
            if j > 0.0 {
                v + Velocity3::new(
                    rng.random_range(-j..=j),
                    rng.random_range(-j..=j),
                    rng.random_range(-j..=j),
                )
            } else {
                v
            }
        })
        .collect();
    Ok(VelocitySeries::from_samples(0.0, samples, Frame::Body))
}

/// Forward-window moving average; the output is marked as ground truth.
///
/// Sample `i` of the output is the mean of input samples `i..i + window`, so
/// the output has `len − window + 1` samples and no padded edges.
pub fn moving_average(series: &VelocitySeries, window: usize) -> Result<VelocitySeries> {
    if window == 0 {
        return Err(Error::domain("moving-average window must be positive"));
    }
    if series.len() < window {
        return Err(Error::domain(format!(
            "series of {} samples is shorter than the {window}-sample window",
            series.len()
        )));
    }
    let inv = 1.0 / window as f64;
    let samples = series
        .samples
        .windows(window)
        .map(|w| w.iter().fold(Velocity3::ZERO, |acc, v| acc + *v) * inv)
        .collect::<Vec<_>>();
    let n = samples.len();
    Ok(VelocitySeries {
        timestamps: series.timestamps[..n].to_vec(),
        samples,
        frame: series.frame,
        ground_truth: true,
    })
}

/// Generates `profile` with `ma_window − 1` extra samples and smooths it,
/// so the ground truth has exactly `profile.duration_s` samples.
pub fn ground_truth_trajectory(profile: &TrajectoryProfile, ma_window: usize, rng: &mut Rng) -> Result<VelocitySeries> {
    if ma_window == 0 {
        return Err(Error::domain("moving-average window must be positive"));
    }
    profile.validate()?;
    let mut extended = profile.clone();
    extended.duration_s += ma_window - 1;
    moving_average(&generate_trajectory(&extended, rng)?, ma_window)
}

/// Everything the noising pipeline needs besides the ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoisingConfig {
    pub beam_terms: BeamErrorTerms,
    pub gnss_noise_std_mps: f64,
    pub geometry: BeamGeometry,
    /// Body → DVL frame rotation.
    pub rotation: FrameRotation,
    pub seed: u64,
}

impl NoisingConfig {
    pub fn new(beam_terms: BeamErrorTerms, seed: u64) -> Self {
        Self {
            beam_terms,
            gnss_noise_std_mps: DEFAULT_GNSS_NOISE_STD_MPS,
            geometry: BeamGeometry::default(),
            rotation: FrameRotation::identity(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.beam_terms.validate()?;
        if !(self.gnss_noise_std_mps >= 0.0) {
            return Err(Error::domain("GNSS noise std must be non-negative"));
        }
        Ok(())
    }
}

/// Produces noisy DVL and GNSS-RTK series from a ground-truth series.
///
/// Each DVL sample is rotated into the DVL frame, projected onto the beams,
/// corrupted with the planted beam errors, recovered by least squares and
/// rotated back to the body frame. GNSS samples are the ground truth plus
/// white noise.
pub fn run_noising_pipeline(gt: &VelocitySeries, cfg: &NoisingConfig) -> Result<(VelocitySeries, VelocitySeries)> {
    cfg.validate()?;
    if gt.frame != Frame::Body {
        return Err(Error::domain("noising pipeline expects a body-frame series"));
    }
    let h = cfg.geometry.transform()?;
    let solver = VelocitySolver::new(&h)?;
    let mut dvl_rng = derived_rng(cfg.seed, "dvl", 0);
    let mut gnss_rng = derived_rng(cfg.seed, "gnss", 0);
    let gnss_noise = gaussian(cfg.gnss_noise_std_mps);

    let mut dvl = Vec::with_capacity(gt.len());
    let mut gnss = Vec::with_capacity(gt.len());
    for v in &gt.samples {
        let v_d = cfg.rotation.rotate(*v);
        let y = apply_beam_errors(project_to_beams(&h, v_d), &cfg.beam_terms, &mut dvl_rng);
        dvl.push(cfg.rotation.rotate_inverse(solver.solve(y)));
        gnss.push(match &gnss_noise {
            Some(d) => {
                *v + Velocity3::new(
                    d.sample(&mut gnss_rng),
                    d.sample(&mut gnss_rng),
                    d.sample(&mut gnss_rng),
                )
            }
            None => *v,
        });
    }
    Ok((gt.with_samples(dvl), gt.with_samples(gnss)))
}

/// Aligned DVL, GNSS and ground-truth blocks over one window.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    pub dvl: Vec<Velocity3>,
    pub gnss: Vec<Velocity3>,
    pub gt: Vec<Velocity3>,
    pub start_s: f64,
    /// Planted terms that generated this window, for diagnostics only.
    pub terms: Option<BeamErrorTerms>,
}

impl SampleWindow {
    pub fn len(&self) -> usize {
        self.dvl.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dvl.is_empty()
    }

    /// The 6×W network input, row-major: DVL x/y/z rows then GNSS x/y/z rows.
    pub fn network_input(&self) -> Vec<f64> {
        let w = self.len();
        let mut out = vec![0.0; 6 * w];
        for (t, (d, g)) in self.dvl.iter().zip(&self.gnss).enumerate() {
            for a in 0..3 {
                out[a * w + t] = d.axis(a);
                out[(a + 3) * w + t] = g.axis(a);
            }
        }
        out
    }
}

/// Number of windows `window_series` produces for `len` samples.
pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if len < window || window == 0 || stride == 0 {
        0
    } else {
        (len - window) / stride + 1
    }
}

/// Cuts aligned series into windows of `window` samples every `stride` samples.
pub fn window_series(
    dvl: &VelocitySeries,
    gnss: &VelocitySeries,
    gt: &VelocitySeries,
    window: usize,
    stride: usize,
) -> Result<Vec<SampleWindow>> {
    if window == 0 || stride == 0 {
        return Err(Error::domain("window and stride must be positive"));
    }
    if dvl.len() != gnss.len() || dvl.len() != gt.len() {
        return Err(Error::domain("DVL, GNSS and GT series are not aligned"));
    }
    if dvl.len() < window {
        return Err(Error::domain(format!(
            "series of {} samples is shorter than the {window}-sample window",
            dvl.len()
        )));
    }
    let n = window_count(dvl.len(), window, stride);
    Ok((0..n)
        .map(|k| {
            let r = k * stride..k * stride + window;
            SampleWindow {
                dvl: dvl.samples[r.clone()].to_vec(),
                gnss: gnss.samples[r.clone()].to_vec(),
                gt: gt.samples[r.clone()].to_vec(),
                start_s: dvl.timestamps[r.start],
                terms: None,
            }
        })
        .collect())
}

/// Planted beam error values to sweep when building a corpus (SI units).
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorGrid {
    pub scale: Vec<f64>,
    pub bias_mps: Vec<f64>,
    pub noise_std_mps: Vec<f64>,
}

/// Inclusive arithmetic range `lo, lo + step, …, hi`.
pub fn grid_range(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) {
        return Err(Error::domain(format!("bad grid range {lo}..{hi} step {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| lo + i as f64 * step).collect())
}

impl ErrorGrid {
    /// Values given in table units: scale %, bias cm/s, noise cm/s.
    pub fn from_table_units(scale_pct: &[f64], bias_cmps: &[f64], noise_cmps: &[f64]) -> Self {
        let si = |v: &[f64]| v.iter().map(|x| x / 100.0).collect();
        Self {
            scale: si(scale_pct),
            bias_mps: si(bias_cmps),
            noise_std_mps: si(noise_cmps),
        }
    }

    /// The 27-point desk grid.
    pub fn desk() -> Self {
        Self::from_table_units(&[0.4, 0.8, 1.2], &[0.2, 0.5, 0.8], &[0.02, 0.06, 0.1])
    }

    /// The full 14 × 9 × 9 training grid.
    pub fn full() -> Self {
        let scale = grid_range(0.2, 1.5, 0.1).expect("static range");
        let bias = grid_range(0.1, 0.9, 0.1).expect("static range");
        let noise = grid_range(0.02, 0.1, 0.01).expect("static range");
        Self::from_table_units(&scale, &bias, &noise)
    }

    pub fn len(&self) -> usize {
        self.scale.len() * self.bias_mps.len() * self.noise_std_mps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All combinations, scale-major then bias then noise.
    pub fn points(&self) -> Result<Vec<BeamErrorTerms>> {
        let mut out = Vec::with_capacity(self.len());
        for &s in &self.scale {
            for &b in &self.bias_mps {
                for &n in &self.noise_std_mps {
                    out.push(BeamErrorTerms::new(s, b, n)?);
                }
            }
        }
        Ok(out)
    }
}

/// Settings shared by every pipeline run while assembling a corpus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusOptions {
    pub window: usize,
    pub stride: usize,
    pub split_ratio: f64,
    pub gnss_noise_std_mps: f64,
    pub geometry: BeamGeometry,
    pub rotation: FrameRotation,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            split_ratio: DEFAULT_SPLIT_RATIO,
            gnss_noise_std_mps: DEFAULT_GNSS_NOISE_STD_MPS,
            geometry: BeamGeometry::default(),
            rotation: FrameRotation::identity(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: Vec<SampleWindow>,
    pub eval: Vec<SampleWindow>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.train.len() + self.eval.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Noises every ground-truth trajectory with every grid point, windows the
/// results, shuffles, and splits train/eval.
///
/// Each (trajectory, grid point) pair runs on its own sub-seed, so the
/// corpus does not depend on the rayon thread count.
pub fn build_training_corpus(
    trajectories: &[VelocitySeries],
    grid: &ErrorGrid,
    opts: &CorpusOptions,
    seed: u64,
) -> Result<Corpus> {
    if grid.is_empty() {
        return Err(Error::domain("error-term grid is empty"));
    }
    if trajectories.is_empty() {
        return Err(Error::domain("no training trajectories"));
    }
    if !(opts.split_ratio > 0.0 && opts.split_ratio < 1.0) {
        return Err(Error::domain("split ratio must lie in (0, 1)"));
    }
    let points = grid.points()?;
    let jobs: Vec<(usize, usize)> = (0..trajectories.len())
        .flat_map(|t| (0..points.len()).map(move |g| (t, g)))
        .collect();
    let chunks: Vec<Vec<SampleWindow>> = jobs
        .par_iter()
        .map(|&(t, g)| {
            let cfg = NoisingConfig {
                beam_terms: points[g],
                gnss_noise_std_mps: opts.gnss_noise_std_mps,
                geometry: opts.geometry,
                rotation: opts.rotation,
                seed: derive_seed(seed, "corpus", (t * points.len() + g) as u64),
            };
            let gt = &trajectories[t];
            let (dvl, gnss) = run_noising_pipeline(gt, &cfg)?;
            let mut w = window_series(&dvl, &gnss, gt, opts.window, opts.stride)?;
            for s in &mut w {
                s.terms = Some(points[g]);
            }
            Ok(w)
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<SampleWindow> = chunks.into_iter().flatten().collect();
    all.shuffle(&mut derived_rng(seed, "split", 0));
    let n_train = (all.len() as f64 * opts.split_ratio).round() as usize;
    let eval = all.split_off(n_train);
    Ok(Corpus { train: all, eval })
}

/// Writes a series as `t,vx,vy,vz` CSV.
pub fn export_csv(series: &VelocitySeries, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(b"t,vx,vy,vz\n").map_err(io)?;
    for (t, v) in series.timestamps.iter().zip(&series.samples) {
        writeln!(w, "{t},{},{},{}", v.x, v.y, v.z).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads and validates a `t,vx,vy,vz` trajectory CSV as a body-frame series.
pub fn ingest_csv(path: &Path) -> Result<VelocitySeries> {
    let err = |line: u64, message: String| Error::Ingest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| err(1, e.to_string()))?;
    let header = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(["t", "vx", "vy", "vz"]) {
        return Err(err(
            1,
            format!("expected header t,vx,vy,vz, found {:?}", header.as_slice()),
        ));
    }
    let mut timestamps = Vec::new();
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(err(line, format!("expected 4 fields, found {}", record.len())));
        }
        let mut vals = [0.0; 4];
        for (i, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| err(line, format!("cannot parse '{field}' as a number")))?;
            if !v.is_finite() {
                return Err(err(line, format!("non-finite value '{field}'")));
            }
            vals[i] = v;
        }
        if let Some(&prev) = timestamps.last() {
            let dt: f64 = vals[0] - prev;
            if dt <= 0.0 {
                return Err(err(line, format!("timestamp {} does not increase", vals[0])));
            }
            if (dt - 1.0).abs() > SPACING_TOLERANCE_S {
                return Err(err(line, format!("timestamp step {dt} s is not 1 s")));
            }
        }
        timestamps.push(vals[0]);
        samples.push(Velocity3::new(vals[1], vals[2], vals[3]));
    }
    VelocitySeries::new(timestamps, samples, Frame::Body)
}
