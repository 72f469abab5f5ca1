//! TOML workbench configuration and dataset manifests.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Unknown keys are rejected. `validate` checks the whole configuration
//! before any command touches the filesystem.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dcnet::{DCNetConfig, FcActivation, LossTarget};
use crate::error::{Error, Result};
use crate::error_models::{ErrorModelKind, FrameRotation};
use crate::evaluation::{EvaluationSetup, Scenario, DEFAULT_MC_ITERATIONS, DEFAULT_WINDOW_SIZES};
use crate::geometry::{BeamGeometry, DEFAULT_PITCH_DEG};
use crate::seed::derived_rng;
use crate::simulation::{
    ground_truth_trajectory, CorpusOptions, ErrorGrid, TrajectoryProfile, VelocitySeries, DEFAULT_GNSS_NOISE_STD_MPS,
    DEFAULT_MA_WINDOW, DEFAULT_SPLIT_RATIO, DEFAULT_STRIDE, DEFAULT_WINDOW,
};

pub const DEFAULT_SEED: u64 = 2024;

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{what}: {}", e.message())))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub alpha_deg: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            alpha_deg: DEFAULT_PITCH_DEG,
        }
    }
}

/// DVL-to-body rotation: a yaw angle, or a full row-major matrix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotationSection {
    pub yaw_deg: f64,
    pub matrix: Option<Vec<f64>>,
}

impl RotationSection {
    pub fn rotation(&self) -> Result<FrameRotation> {
        match &self.matrix {
            Some(m) if self.yaw_deg != 0.0 => Err(Error::Config(format!(
                "rotation: give either yaw_deg or matrix, not both ({} values)",
                m.len()
            ))),
            Some(m) => FrameRotation::from_row_slice(m).map_err(|e| Error::Config(format!("rotation.matrix: {e}"))),
            None => Ok(FrameRotation::about_z(self.yaw_deg.to_radians())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Constant,
    Lawnmower,
    Mixed,
    Maneuvering,
}

/// One trajectory profile as written in the configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub kind: ProfileKind,
    pub duration_s: usize,
    pub speed_mps: f64,
    #[serde(default)]
    pub jitter_mps: f64,
    /// Straight-leg length for lawnmower profiles.
    #[serde(default = "default_leg_s")]
    pub leg_s: usize,
    /// Plan offset for mixed and maneuvering profiles.
    #[serde(default)]
    pub variant: usize,
}

fn default_leg_s() -> usize {
    120
}

impl ProfileSpec {
    pub fn profile(&self) -> TrajectoryProfile {
        match self.kind {
            ProfileKind::Constant => {
                TrajectoryProfile::constant_velocity(self.duration_s, self.speed_mps, self.jitter_mps)
            }
            ProfileKind::Lawnmower => {
                TrajectoryProfile::lawnmower(self.duration_s, self.speed_mps, self.leg_s, self.jitter_mps)
            }
            ProfileKind::Mixed => {
                TrajectoryProfile::mixed_legs(self.duration_s, self.speed_mps, self.jitter_mps, self.variant)
            }
            ProfileKind::Maneuvering => {
                TrajectoryProfile::maneuvering(self.duration_s, self.speed_mps, self.jitter_mps, self.variant)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoriesSection {
    pub calibration: ProfileSpec,
    /// Held-out continuation of the calibration run, scored as a test.
    pub tail: Option<ProfileSpec>,
    pub test: Vec<ProfileSpec>,
    pub train: Vec<ProfileSpec>,
}

fn spec(
    name: Option<&str>,
    kind: ProfileKind,
    duration_s: usize,
    speed_mps: f64,
    leg_s: usize,
    variant: usize,
) -> ProfileSpec {
    ProfileSpec {
        name: name.map(str::to_string),
        kind,
        duration_s,
        speed_mps,
        jitter_mps: 0.02,
        leg_s,
        variant,
    }
}

impl Default for TrajectoriesSection {
    fn default() -> Self {
        use ProfileKind::*;
        Self {
            calibration: spec(None, Constant, 200, 1.5, 120, 0),
            tail: Some(spec(None, Mixed, 600, 1.5, 120, 3)),
            test: vec![
                spec(Some("T1"), Lawnmower, 600, 1.5, 120, 0),
                spec(Some("T2"), Lawnmower, 600, 1.2, 90, 0),
                spec(Some("T3"), Lawnmower, 600, 1.8, 150, 0),
                spec(Some("T4"), Lawnmower, 600, 1.0, 60, 0),
            ],
            train: vec![
                spec(None, Maneuvering, 300, 1.0, 120, 0),
                spec(None, Maneuvering, 300, 1.3, 120, 2),
                spec(None, Maneuvering, 300, 1.6, 120, 4),
                spec(None, Maneuvering, 300, 1.9, 120, 6),
            ],
        }
    }
}

/// A named grid preset or explicit value lists in table units. With
/// neither, the desk preset applies.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub preset: Option<String>,
    pub scale_pct: Option<Vec<f64>>,
    pub bias_cmps: Option<Vec<f64>>,
    pub noise_cmps: Option<Vec<f64>>,
}

impl GridSection {
    pub fn grid(&self) -> Result<ErrorGrid> {
        let explicit = [&self.scale_pct, &self.bias_cmps, &self.noise_cmps];
        let given = explicit.iter().filter(|v| v.is_some()).count();
        let grid = match (self.preset.as_deref(), given) {
            (Some(_), n) if n > 0 => {
                return Err(Error::Config("grid: give a preset or explicit lists, not both".into()))
            }
            (Some("desk"), _) => ErrorGrid::desk(),
            (Some("full"), _) => ErrorGrid::full(),
            (Some(p), _) => return Err(Error::Config(format!("grid.preset: unknown preset '{p}'"))),
            (None, 0) => ErrorGrid::desk(),
            (None, 3) => ErrorGrid::from_table_units(
                self.scale_pct.as_deref().unwrap_or_default(),
                self.bias_cmps.as_deref().unwrap_or_default(),
                self.noise_cmps.as_deref().unwrap_or_default(),
            ),
            (None, _) => {
                return Err(Error::Config(
                    "grid: scale_pct, bias_cmps and noise_cmps are all required".into(),
                ))
            }
        };
        if grid.is_empty() {
            return Err(Error::Config("grid: no combinations".into()));
        }
        grid.points().map_err(|e| Error::Config(format!("grid: {e}")))?;
        Ok(grid)
    }

    pub fn from_grid(grid: &ErrorGrid) -> Self {
        Self {
            preset: None,
            scale_pct: Some(grid.scale.iter().map(|v| v * 100.0).collect()),
            bias_cmps: Some(grid.bias_mps.iter().map(|v| v * 100.0).collect()),
            noise_cmps: Some(grid.noise_std_mps.iter().map(|v| v * 100.0).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnssSection {
    pub noise_std_mps: f64,
}

impl Default for GnssSection {
    fn default() -> Self {
        Self {
            noise_std_mps: DEFAULT_GNSS_NOISE_STD_MPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub window: usize,
    pub stride: usize,
    pub split_ratio: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            split_ratio: DEFAULT_SPLIT_RATIO,
        }
    }
}

/// Per-kind overrides of the shared network settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcnetOverride {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcnetSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub fc_activation: String,
    pub loss_target: String,
    pub sub_gain: f64,
    pub output_gain: f64,
    pub learning_rate: Option<f64>,
    pub em1: DcnetOverride,
    pub em2: DcnetOverride,
    pub em3: DcnetOverride,
    pub em4: DcnetOverride,
    pub em5: DcnetOverride,
}

impl Default for DcnetSection {
    fn default() -> Self {
        let d = DCNetConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            dropout: d.dropout,
            fc_activation: d.fc_activation.to_string(),
            loss_target: d.loss_target.to_string(),
            sub_gain: d.sub_gain,
            output_gain: d.output_gain,
            learning_rate: None,
            em1: DcnetOverride::default(),
            em2: DcnetOverride::default(),
            em3: DcnetOverride::default(),
            em4: DcnetOverride::default(),
            em5: DcnetOverride::default(),
        }
    }
}

impl DcnetSection {
    fn override_for(&self, kind: ErrorModelKind) -> &DcnetOverride {
        match kind {
            ErrorModelKind::Em1 => &self.em1,
            ErrorModelKind::Em2 => &self.em2,
            ErrorModelKind::Em3 => &self.em3,
            ErrorModelKind::Em4 => &self.em4,
            ErrorModelKind::Em5 => &self.em5,
        }
    }

    /// Network configuration for `kind`, with the window taken from the corpus.
    pub fn config_for(&self, kind: ErrorModelKind, window: usize) -> Result<DCNetConfig> {
        let o = self.override_for(kind);
        let cfg = DCNetConfig {
            window,
            epochs: o.epochs.unwrap_or(self.epochs),
            batch_size: self.batch_size,
            dropout: self.dropout,
            fc_activation: self.fc_activation.parse::<FcActivation>()?,
            loss_target: self.loss_target.parse::<LossTarget>()?,
            sub_gain: self.sub_gain,
            output_gain: self.output_gain,
            learning_rate: o.learning_rate.or(self.learning_rate),
            ..DCNetConfig::default()
        };
        cfg.validate()
            .map_err(|e| Error::Config(format!("dcnet ({kind}): {e}")))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub window_sizes: Vec<usize>,
    pub mc_iterations: usize,
    pub scenarios: Vec<String>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            window_sizes: DEFAULT_WINDOW_SIZES.to_vec(),
            mc_iterations: DEFAULT_MC_ITERATIONS,
            scenarios: vec!["DVL1".into(), "DVL2".into()],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Directory holding `dataset.toml`; defaults to the output directory.
    pub corpus_dir: Option<PathBuf>,
    /// Directory holding trained models; defaults to the output directory.
    pub models_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkbenchConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub geometry: GeometrySection,
    pub rotation: RotationSection,
    pub trajectories: TrajectoriesSection,
    pub grid: GridSection,
    pub gnss: GnssSection,
    pub corpus: CorpusSection,
    pub dcnet: DcnetSection,
    pub evaluation: EvaluationSection,
    pub paths: PathsSection,
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            threads: 0,
            geometry: GeometrySection::default(),
            rotation: RotationSection::default(),
            trajectories: TrajectoriesSection::default(),
            grid: GridSection::default(),
            gnss: GnssSection::default(),
            corpus: CorpusSection::default(),
            dcnet: DcnetSection::default(),
            evaluation: EvaluationSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl WorkbenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        parse_toml(text, "config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn geometry(&self) -> Result<BeamGeometry> {
        BeamGeometry::from_degrees(self.geometry.alpha_deg)
            .map_err(|e| Error::Config(format!("geometry.alpha_deg: {e}")))
    }

    pub fn corpus_options(&self) -> Result<CorpusOptions> {
        Ok(CorpusOptions {
            window: self.corpus.window,
            stride: self.corpus.stride,
            split_ratio: self.corpus.split_ratio,
            gnss_noise_std_mps: self.gnss.noise_std_mps,
            geometry: self.geometry()?,
            rotation: self.rotation.rotation()?,
        })
    }

    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        self.evaluation.scenarios.iter().map(|s| Scenario::preset(s)).collect()
    }

    /// Checks every section; called before any command has side effects.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Error::Config(m);
        self.geometry()?;
        self.rotation.rotation()?;
        if !(self.gnss.noise_std_mps >= 0.0 && self.gnss.noise_std_mps.is_finite()) {
            return Err(cfg(format!(
                "gnss.noise_std_mps {} must be non-negative",
                self.gnss.noise_std_mps
            )));
        }
        let t = &self.trajectories;
        let named = std::iter::once(("calibration", &t.calibration))
            .chain(t.tail.iter().map(|p| ("tail", p)))
            .chain(t.test.iter().map(|p| ("test", p)))
            .chain(t.train.iter().map(|p| ("train", p)));
        for (section, p) in named {
            p.profile()
                .validate()
                .map_err(|e| cfg(format!("trajectories.{section}: {e}")))?;
        }
        if t.train.is_empty() {
            return Err(cfg(
                "trajectories.train: at least one training trajectory is required".into()
            ));
        }
        self.grid.grid()?;
        let c = &self.corpus;
        if c.window == 0 || c.stride == 0 {
            return Err(cfg("corpus.window and corpus.stride must be positive".into()));
        }
        if !(c.split_ratio > 0.0 && c.split_ratio < 1.0) {
            return Err(cfg(format!("corpus.split_ratio {} outside (0, 1)", c.split_ratio)));
        }
        for p in &t.train {
            if p.duration_s < c.window {
                return Err(cfg(
                    "trajectories.train: trajectory shorter than the corpus window".into()
                ));
            }
        }
        for kind in ErrorModelKind::ALL {
            self.dcnet.config_for(kind, c.window)?;
        }
        let e = &self.evaluation;
        if e.window_sizes.is_empty() || e.window_sizes.contains(&0) {
            return Err(cfg(
                "evaluation.window_sizes must be a non-empty list of positive sizes".into(),
            ));
        }
        let longest = e.window_sizes.iter().copied().max().unwrap_or(0);
        if longest < c.window {
            return Err(cfg(
                "evaluation.window_sizes: every size must hold one network window".into()
            ));
        }
        if t.calibration.duration_s <= longest {
            return Err(cfg(format!(
                "trajectories.calibration: {} s leaves nothing to score after a {longest} s window",
                t.calibration.duration_s
            )));
        }
        if e.mc_iterations == 0 {
            return Err(cfg("evaluation.mc_iterations must be positive".into()));
        }
        self.scenarios()?;
        Ok(())
    }

    /// Ground-truth training trajectories, one sub-seed per index.
    pub fn training_trajectories(&self) -> Result<Vec<VelocitySeries>> {
        self.trajectories
            .train
            .iter()
            .enumerate()
            .map(|(i, p)| {
                ground_truth_trajectory(
                    &p.profile(),
                    DEFAULT_MA_WINDOW,
                    &mut derived_rng(self.seed, "trajectory/train", i as u64),
                )
            })
            .collect()
    }

    pub fn test_names(&self) -> Vec<String> {
        self.trajectories
            .test
            .iter()
            .enumerate()
            .map(|(i, p)| p.name.clone().unwrap_or_else(|| format!("T{}", i + 1)))
            .collect()
    }

    pub fn evaluation_setup(&self) -> Result<EvaluationSetup> {
        let t = &self.trajectories;
        let tests: Vec<(String, TrajectoryProfile)> = self
            .test_names()
            .into_iter()
            .zip(t.test.iter().map(ProfileSpec::profile))
            .collect();
        let mut setup = EvaluationSetup::generate(
            &t.calibration.profile(),
            t.tail.as_ref().map(ProfileSpec::profile).as_ref(),
            &tests,
            self.seed,
        )?;
        setup.window_sizes = self.evaluation.window_sizes.clone();
        setup.gnss_noise_std_mps = self.gnss.noise_std_mps;
        setup.geometry = self.geometry()?;
        setup.rotation = self.rotation.rotation()?;
        Ok(setup)
    }
}

/// Describes a training dataset on disk: ground-truth trajectory CSVs
/// (relative to the manifest) plus everything needed to rebuild the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub window: usize,
    pub stride: usize,
    #[serde(default = "default_split")]
    pub split_ratio: f64,
    #[serde(default = "default_gnss")]
    pub gnss_noise_std_mps: f64,
    #[serde(default = "default_alpha")]
    pub alpha_deg: f64,
    #[serde(default)]
    pub rotation: RotationSection,
    pub trajectories: Vec<PathBuf>,
    pub grid: GridSection,
}

fn default_split() -> f64 {
    DEFAULT_SPLIT_RATIO
}

fn default_gnss() -> f64 {
    DEFAULT_GNSS_NOISE_STD_MPS
}

fn default_alpha() -> f64 {
    DEFAULT_PITCH_DEG
}

pub const MANIFEST_FILE: &str = "dataset.toml";

impl DatasetManifest {
    pub fn from_config(cfg: &WorkbenchConfig, trajectory_files: Vec<PathBuf>) -> Result<Self> {
        cfg.grid.grid()?;
        Ok(Self {
            seed: cfg.seed,
            window: cfg.corpus.window,
            stride: cfg.corpus.stride,
            split_ratio: cfg.corpus.split_ratio,
            gnss_noise_std_mps: cfg.gnss.noise_std_mps,
            alpha_deg: cfg.geometry.alpha_deg,
            rotation: cfg.rotation.clone(),
            trajectories: trajectory_files,
            grid: cfg.grid.clone(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = parse_toml(text, "manifest")?;
        m.grid.grid()?;
        m.options()?;
        if m.trajectories.is_empty() {
            return Err(Error::Config("manifest lists no trajectories".into()));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn options(&self) -> Result<CorpusOptions> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Config("manifest window and stride must be positive".into()));
        }
        Ok(CorpusOptions {
            window: self.window,
            stride: self.stride,
            split_ratio: self.split_ratio,
            gnss_noise_std_mps: self.gnss_noise_std_mps,
            geometry: BeamGeometry::from_degrees(self.alpha_deg)?,
            rotation: self.rotation.rotation()?,
        })
    }

    /// Trajectory paths resolved against the manifest directory.
    pub fn trajectory_paths(&self, base: &Path) -> Vec<PathBuf> {
        self.trajectories.iter().map(|p| base.join(p)).collect()
    }
}
