//! The two-head convolutional calibration regressor.
//!
//! A 1-D head reads the DVL − GNSS difference (3 × W); a 2-D head reads the
//! stacked 6 × W velocities, its first kernel dilated (3, 1) so every tap
//! pairs a DVL axis with the same GNSS axis. Both heads are flattened,
//! concatenated and passed through four fully connected layers that emit the
//! raw error terms of one [`ErrorModelKind`].
//!
//! Training minimizes a closed-loop loss: the emitted terms calibrate the
//! window's DVL samples and the loss is the squared velocity error against
//! the reference block, not an error on the terms themselves.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::error_models::{terms_dimension, terms_from_vector, BodyErrorTerms, ErrorModelKind};
use crate::geometry::Velocity3;
use crate::nn::graph::{CustomBackward, Graph, Var};
use crate::nn::ops::dropout_mask;
use crate::nn::serialize::{parse_param_line, write_params};
use crate::nn::{RmsProp, Tensor};
use crate::seed::{derived_rng, Rng};
use crate::simulation::{window_series, SampleWindow, VelocitySeries, DEFAULT_STRIDE, DEFAULT_WINDOW};

/// Lower bound applied to each raw scale term inside the loss.
pub const LOSS_SCALE_FLOOR: f64 = -1.0 + 1e-3;

/// Windows per autodiff graph; batches are split into chunks of this size
/// and the chunk gradients summed in order, so results never depend on the
/// number of worker threads.
const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FcActivation {
    Tanh,
    LeakyRelu,
}

impl fmt::Display for FcActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FcActivation::Tanh => "tanh",
            FcActivation::LeakyRelu => "leaky_relu",
        })
    }
}

impl FromStr for FcActivation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(FcActivation::Tanh),
            "leaky_relu" => Ok(FcActivation::LeakyRelu),
            _ => Err(Error::Config(format!("unknown activation '{s}'"))),
        }
    }
}

/// Which block the closed-loop loss compares the calibrated DVL against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTarget {
    GroundTruth,
    Gnss,
}

impl fmt::Display for LossTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossTarget::GroundTruth => "gt",
            LossTarget::Gnss => "gnss",
        })
    }
}

impl FromStr for LossTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(LossTarget::GroundTruth),
            "gnss" => Ok(LossTarget::Gnss),
            _ => Err(Error::Config(format!("unknown loss target '{s}'"))),
        }
    }
}

/// Learning rate used for `kind` when none is configured.
pub fn default_learning_rate(kind: ErrorModelKind) -> f64 {
    match kind {
        ErrorModelKind::Em5 => 5e-4,
        _ => 5e-5,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DCNetConfig {
    pub window: usize,
    pub conv1d_channels: [usize; 2],
    pub conv1d_kernel: usize,
    pub conv2d_channels: [usize; 3],
    pub conv2d_kernel: (usize, usize),
    pub conv2d_dilations: [(usize, usize); 3],
    pub fc_widths: [usize; 3],
    pub conv1d_slope: f64,
    pub conv2d_slope: f64,
    pub fc_activation: FcActivation,
    /// Negative slope when `fc_activation` is LeakyReLU.
    pub fc_slope: f64,
    pub dropout: f64,
    /// Multiplier on the subtraction vector before the 1-D head.
    pub sub_gain: f64,
    /// Multiplier on the final linear layer, fixing the units of the raw
    /// outputs (0.01: network units of percent and cm/s).
    pub output_gain: f64,
    /// `None` selects [`default_learning_rate`].
    pub learning_rate: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_target: LossTarget,
}

impl Default for DCNetConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            conv1d_channels: [16, 32],
            conv1d_kernel: 2,
            conv2d_channels: [16, 32, 64],
            conv2d_kernel: (2, 2),
            conv2d_dilations: [(3, 1), (1, 1), (1, 1)],
            fc_widths: [256, 128, 64],
            conv1d_slope: 0.05,
            conv2d_slope: 0.05,
            fc_activation: FcActivation::Tanh,
            fc_slope: 0.05,
            dropout: 0.3,
            sub_gain: 100.0,
            output_gain: 0.01,
            learning_rate: None,
            epochs: 100,
            batch_size: 256,
            loss_target: LossTarget::GroundTruth,
        }
    }
}

impl DCNetConfig {
    pub fn learning_rate_for(&self, kind: ErrorModelKind) -> f64 {
        self.learning_rate.unwrap_or_else(|| default_learning_rate(kind))
    }

    /// Flattened widths of the 1-D and 2-D heads.
    pub fn head_widths(&self) -> Result<(usize, usize)> {
        let k1 = self.conv1d_kernel;
        if k1 == 0 || self.window < 2 * (k1 - 1) + 1 {
            return Err(Error::Config(format!(
                "window {} too short for two conv1d layers of kernel {k1}",
                self.window
            )));
        }
        let w1 = self.conv1d_channels[1] * (self.window - 2 * (k1 - 1));
        let (kh, kw) = self.conv2d_kernel;
        let (mut h, mut w) = (6usize, self.window);
        for &(dh, dw) in &self.conv2d_dilations {
            if kh == 0 || kw == 0 || dh == 0 || dw == 0 {
                return Err(Error::Config("conv2d kernel and dilation must be positive".into()));
            }
            let (eh, ew) = ((kh - 1) * dh + 1, (kw - 1) * dw + 1);
            if eh > h || ew > w {
                return Err(Error::Config(format!(
                    "conv2d kernel extent {eh}×{ew} exceeds feature map {h}×{w}"
                )));
            }
            h -= eh - 1;
            w -= ew - 1;
        }
        Ok((w1, self.conv2d_channels[2] * h * w))
    }

    pub fn validate(&self) -> Result<()> {
        self.head_widths()?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.sub_gain.is_finite() && self.sub_gain > 0.0 && self.output_gain.is_finite() && self.output_gain > 0.0)
        {
            return Err(Error::Config("input and output gains must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning rate {lr} must be non-negative")));
            }
        }
        let widths_ok = self
            .conv1d_channels
            .iter()
            .chain(&self.conv2d_channels)
            .chain(&self.fc_widths)
            .all(|c| *c > 0);
        if !widths_ok {
            return Err(Error::Config("channel counts and widths must be positive".into()));
        }
        Ok(())
    }

    /// `(name, shape, fan_in)` of every parameter, in storage order.
    fn param_layout(&self, kind: ErrorModelKind) -> Result<Vec<(String, Vec<usize>, usize)>> {
        let (w1, w2) = self.head_widths()?;
        let mut out = Vec::new();
        let mut cin = 3;
        for (i, &c) in self.conv1d_channels.iter().enumerate() {
            let fan = cin * self.conv1d_kernel;
            out.push((format!("conv1d.{i}.weight"), vec![c, cin, self.conv1d_kernel], fan));
            out.push((format!("conv1d.{i}.bias"), vec![c], fan));
            cin = c;
        }
        let (kh, kw) = self.conv2d_kernel;
        let mut cin = 1;
        for (i, &c) in self.conv2d_channels.iter().enumerate() {
            let fan = cin * kh * kw;
            out.push((format!("conv2d.{i}.weight"), vec![c, cin, kh, kw], fan));
            out.push((format!("conv2d.{i}.bias"), vec![c], fan));
            cin = c;
        }
        let mut nin = w1 + w2;
        let widths = self.fc_widths.iter().copied().chain([terms_dimension(kind)]);
        for (i, nout) in widths.enumerate() {
            out.push((format!("fc.{i}.weight"), vec![nout, nin], nin));
            out.push((format!("fc.{i}.bias"), vec![nout], nin));
            nin = nout;
        }
        Ok(out)
    }
}

/// Network parameters plus the configuration and error model they serve.
#[derive(Clone, Debug, PartialEq)]
pub struct DCNetModel {
    config: DCNetConfig,
    kind: ErrorModelKind,
    names: Vec<String>,
    params: Vec<Tensor>,
}

/// Dropout behaviour for one forward pass.
pub enum ForwardMode<'a> {
    Eval,
    /// Fresh masks from the stream.
    Train(&'a mut Rng),
    /// Reuse masks (one per FC dropout layer) from an earlier pass.
    Frozen(&'a [Vec<f64>]),
}

impl DCNetModel {
    /// Uniform `±1/√fan_in` initialization from `seed`.
    pub fn new(config: DCNetConfig, kind: ErrorModelKind, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = derived_rng(seed, "dcnet-init", u64::from(kind.number()));
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape, fan_in) in config.param_layout(kind)? {
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.push(Tensor::from_fn(&shape, |_| rng.random_range(-bound..bound)));
            names.push(name);
        }
        Ok(Self {
            config,
            kind,
            names,
            params,
        })
    }

    pub fn config(&self) -> &DCNetConfig {
        &self.config
    }

    pub fn kind(&self) -> ErrorModelKind {
        self.kind
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// All parameters concatenated in storage order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::domain("flat parameter vector has the wrong length"));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.numel();
            p.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn check_window(&self, w: &SampleWindow) -> Result<()> {
        if w.len() != self.config.window || w.gnss.len() != w.len() {
            return Err(Error::domain(format!(
                "window holds {} samples, model expects {}",
                w.len(),
                self.config.window
            )));
        }
        Ok(())
    }

    /// Records the forward pass for `windows` on `g`, returning the raw
    /// output `[batch, dim]` and the dropout masks used.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        params: &[Var],
        windows: &[&SampleWindow],
        mut mode: ForwardMode<'_>,
    ) -> Result<(Var, Vec<Vec<f64>>)> {
        let c = &self.config;
        let w = c.window;
        let batch = windows.len();
        let mut stacked = Vec::with_capacity(batch * 6 * w);
        let mut sub = Vec::with_capacity(batch * 3 * w);
        for win in windows {
            self.check_window(win)?;
            stacked.extend(win.network_input());
            sub.extend(subtraction_vector(win).into_data().into_iter().map(|v| v * c.sub_gain));
        }
        let x2 = g.leaf(Tensor::new(vec![batch, 1, 6, w], stacked)?, false);
        let x1 = g.leaf(Tensor::new(vec![batch, 3, w], sub)?, false);

        let mut p = params.iter().copied();
        let mut next = || p.next().ok_or_else(|| Error::domain("too few parameters"));

        let mut h1 = x1;
        for _ in 0..2 {
            let (k, b) = (next()?, next()?);
            h1 = g.conv1d(h1, k, b)?;
            h1 = g.leaky_relu(h1, c.conv1d_slope);
        }
        let mut h2 = x2;
        for dil in c.conv2d_dilations {
            let (k, b) = (next()?, next()?);
            h2 = g.conv2d(h2, k, b, dil)?;
            h2 = g.leaky_relu(h2, c.conv2d_slope);
        }
        let f1 = g.flatten(h1)?;
        let f2 = g.flatten(h2)?;
        let mut h = g.concat(f1, f2)?;

        let mut masks = Vec::new();
        for layer in 0..4 {
            let (wt, b) = (next()?, next()?);
            h = g.affine(h, wt, b)?;
            if layer == 3 {
                if c.output_gain != 1.0 {
                    let n = g.value(h).numel();
                    h = g.mask(h, vec![c.output_gain; n])?;
                }
                break;
            }
            h = match c.fc_activation {
                FcActivation::Tanh => g.tanh(h),
                FcActivation::LeakyRelu => g.leaky_relu(h, c.fc_slope),
            };
            let n = g.value(h).numel();
            let mask = match &mut mode {
                ForwardMode::Eval => None,
                ForwardMode::Train(rng) => (c.dropout > 0.0).then(|| dropout_mask(n, c.dropout, rng)),
                ForwardMode::Frozen(m) => m.get(layer).cloned(),
            };
            if let Some(m) = mask {
                h = g.mask(h, m.clone())?;
                masks.push(m);
            }
        }
        Ok((h, masks))
    }

    /// Raw term vectors for a batch of windows.
    pub fn forward(&self, windows: &[SampleWindow], mode: ForwardMode<'_>) -> Result<Vec<Vec<f64>>> {
        let refs: Vec<&SampleWindow> = windows.iter().collect();
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.iter().map(|p| g.leaf(p.clone(), false)).collect();
        let (out, _) = self.forward_graph(&mut g, &vars, &refs, mode)?;
        let dim = terms_dimension(self.kind);
        Ok(g.value(out).data().chunks(dim).map(<[f64]>::to_vec).collect())
    }

    /// Eval-mode forward in parallel chunks.
    pub fn infer(&self, windows: &[SampleWindow]) -> Result<Vec<Vec<f64>>> {
        let parts: Vec<Vec<Vec<f64>>> = windows
            .par_chunks(CHUNK)
            .map(|ch| self.forward(ch, ForwardMode::Eval))
            .collect::<Result<_>>()?;
        Ok(parts.into_iter().flatten().collect())
    }

    /// Mean closed-loop loss and its parameter gradient over `windows`,
    /// with the loss scaled by `weight`.
    pub fn loss_and_grad(
        &self,
        windows: &[&SampleWindow],
        mode: ForwardMode<'_>,
        weight: f64,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.iter().map(|p| g.leaf(p.clone(), true)).collect();
        let (raw, _) = self.forward_graph(&mut g, &vars, windows, mode)?;
        let loss = closed_loop_node(&mut g, raw, windows, self.kind, self.config.loss_target, weight)?;
        let value = g.value(loss).data()[0];
        g.backward(loss)?;
        let grads = vars
            .iter()
            .zip(&self.params)
            .map(|(v, p)| g.grad(*v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
            .collect();
        Ok((value, grads))
    }

    /// Mean closed-loop loss with dropout disabled.
    pub fn evaluate_loss(&self, windows: &[SampleWindow]) -> Result<f64> {
        if windows.is_empty() {
            return Err(Error::domain("no windows to evaluate"));
        }
        let raw = self.infer(windows)?;
        let mut sum = 0.0;
        for (r, w) in raw.iter().zip(windows) {
            sum += closed_loop_loss(r, w, self.kind, self.config.loss_target)?;
        }
        Ok(sum / windows.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let c = &self.config;
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        writeln!(w, "dcnet-model v1")?;
        writeln!(w, "kind {}", self.kind)?;
        writeln!(w, "window {}", c.window)?;
        writeln!(w, "conv1d_channels {}", list(&c.conv1d_channels))?;
        writeln!(w, "conv1d_kernel {}", c.conv1d_kernel)?;
        writeln!(w, "conv2d_channels {}", list(&c.conv2d_channels))?;
        writeln!(w, "conv2d_kernel {},{}", c.conv2d_kernel.0, c.conv2d_kernel.1)?;
        let dil: Vec<String> = c.conv2d_dilations.iter().map(|(a, b)| format!("{a}x{b}")).collect();
        writeln!(w, "conv2d_dilations {}", dil.join(","))?;
        writeln!(w, "fc_widths {}", list(&c.fc_widths))?;
        writeln!(w, "conv1d_slope {:?}", c.conv1d_slope)?;
        writeln!(w, "conv2d_slope {:?}", c.conv2d_slope)?;
        writeln!(w, "fc_activation {}", c.fc_activation)?;
        writeln!(w, "fc_slope {:?}", c.fc_slope)?;
        writeln!(w, "dropout {:?}", c.dropout)?;
        writeln!(w, "sub_gain {:?}", c.sub_gain)?;
        writeln!(w, "output_gain {:?}", c.output_gain)?;
        writeln!(w, "learning_rate {:?}", c.learning_rate_for(self.kind))?;
        writeln!(w, "epochs {}", c.epochs)?;
        writeln!(w, "batch_size {}", c.batch_size)?;
        writeln!(w, "loss_target {}", c.loss_target)?;
        writeln!(w, "end-header")?;
        let named: Vec<(String, Tensor)> = self.names.iter().cloned().zip(self.params.iter().cloned()).collect();
        write_params(w, &named)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: String| Error::ModelFormat(m);
        let mut lines = r.lines();
        let mut next_line = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file".into()))?
                .map_err(|e| bad(e.to_string()))
        };
        if next_line()?.trim() != "dcnet-model v1" {
            return Err(bad("missing 'dcnet-model v1' header".into()));
        }
        let mut c = DCNetConfig::default();
        let mut kind = None;
        loop {
            let line = next_line()?;
            let line = line.trim();
            if line == "end-header" {
                break;
            }
            let (key, val) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("malformed header line '{line}'")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number for {key}")));
            let int = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("bad integer for {key}")));
            let ints = |v: &str| v.split(',').map(int).collect::<Result<Vec<_>>>();
            let fixed = |v: Vec<usize>, n: usize| {
                if v.len() == n {
                    Ok(v)
                } else {
                    Err(bad(format!("{key} needs {n} entries")))
                }
            };
            match key {
                "kind" => kind = Some(val.parse::<ErrorModelKind>()?),
                "window" => c.window = int(val)?,
                "conv1d_channels" => {
                    let v = fixed(ints(val)?, 2)?;
                    c.conv1d_channels = [v[0], v[1]];
                }
                "conv1d_kernel" => c.conv1d_kernel = int(val)?,
                "conv2d_channels" => {
                    let v = fixed(ints(val)?, 3)?;
                    c.conv2d_channels = [v[0], v[1], v[2]];
                }
                "conv2d_kernel" => {
                    let v = fixed(ints(val)?, 2)?;
                    c.conv2d_kernel = (v[0], v[1]);
                }
                "conv2d_dilations" => {
                    let pairs = val
                        .split(',')
                        .map(|p| {
                            let (a, b) = p.split_once('x').ok_or_else(|| bad(format!("bad dilation '{p}'")))?;
                            Ok((int(a)?, int(b)?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if pairs.len() != 3 {
                        return Err(bad("conv2d_dilations needs 3 entries".into()));
                    }
                    c.conv2d_dilations = [pairs[0], pairs[1], pairs[2]];
                }
                "fc_widths" => {
                    let v = fixed(ints(val)?, 3)?;
                    c.fc_widths = [v[0], v[1], v[2]];
                }
                "conv1d_slope" => c.conv1d_slope = num(val)?,
                "conv2d_slope" => c.conv2d_slope = num(val)?,
                "fc_activation" => c.fc_activation = val.parse()?,
                "fc_slope" => c.fc_slope = num(val)?,
                "dropout" => c.dropout = num(val)?,
                "sub_gain" => c.sub_gain = num(val)?,
                "output_gain" => c.output_gain = num(val)?,
                "learning_rate" => c.learning_rate = Some(num(val)?),
                "epochs" => c.epochs = int(val)?,
                "batch_size" => c.batch_size = int(val)?,
                "loss_target" => c.loss_target = val.parse()?,
                other => return Err(bad(format!("unknown header key '{other}'"))),
            }
        }
        let kind = kind.ok_or_else(|| bad("header lacks 'kind'".into()))?;
        c.validate()?;
        let layout = c.param_layout(kind)?;
        let mut names = Vec::with_capacity(layout.len());
        let mut params = Vec::with_capacity(layout.len());
        for (name, shape, _) in layout {
            let line = next_line()?;
            let (got_name, t) = parse_param_line(&line)?;
            if got_name != name || t.shape() != shape.as_slice() {
                return Err(bad(format!(
                    "expected {name} {shape:?}, found {got_name} {:?}",
                    t.shape()
                )));
            }
            names.push(name);
            params.push(t);
        }
        Ok(Self {
            config: c,
            kind,
            names,
            params,
        })
    }
}

/// File name used for a kind's model inside a models directory, e.g. `em5.model`.
pub fn model_file_name(kind: ErrorModelKind) -> String {
    format!("em{}.model", kind.number())
}

/// `ṽ_sub = ṽ_DVL − ṽ_GNSS` as a `[3, W]` tensor.
pub fn subtraction_vector(window: &SampleWindow) -> Tensor {
    let w = window.len();
    let mut out = vec![0.0; 3 * w];
    for (t, (d, g)) in window.dvl.iter().zip(&window.gnss).enumerate() {
        for a in 0..3 {
            out[a * w + t] = d.axis(a) - g.axis(a);
        }
    }
    Tensor::new(vec![3, w], out).expect("3×W layout")
}

fn loss_target_block(window: &SampleWindow, target: LossTarget) -> &[Velocity3] {
    match target {
        LossTarget::GroundTruth => &window.gt,
        LossTarget::Gnss => &window.gnss,
    }
}

/// Per-axis `(scale, bias)` from raw outputs, with the loss guard applied.
fn guarded_axes(kind: ErrorModelKind, raw: &[f64]) -> ([f64; 3], [f64; 3]) {
    let (mut s, mut b) = ([0.0; 3], [0.0; 3]);
    match kind {
        ErrorModelKind::Em1 => s = [raw[0]; 3],
        ErrorModelKind::Em2 => s.copy_from_slice(&raw[..3]),
        ErrorModelKind::Em3 => b = [raw[0]; 3],
        ErrorModelKind::Em4 => b.copy_from_slice(&raw[..3]),
        ErrorModelKind::Em5 => {
            s.copy_from_slice(&raw[..3]);
            b.copy_from_slice(&raw[3..6]);
        }
    }
    (s.map(|v| v.max(LOSS_SCALE_FLOOR)), b)
}

/// Closed-loop loss of one window and its gradient with respect to `raw`.
///
/// The scale guard passes gradients straight through: the derivative is
/// evaluated at the clamped value whether or not the clamp is active.
fn closed_loop_with_grad(
    raw: &[f64],
    window: &SampleWindow,
    kind: ErrorModelKind,
    target: LossTarget,
) -> (f64, Vec<f64>) {
    let (s, b) = guarded_axes(kind, raw);
    let reference = loss_target_block(window, target);
    let n = window.len() as f64;
    let mut loss = 0.0;
    let (mut ds, mut db) = ([0.0; 3], [0.0; 3]);
    for (d, y) in window.dvl.iter().zip(reference) {
        for a in 0..3 {
            let u = 1.0 + s[a];
            let centered = d.axis(a) - b[a];
            let e = centered / u - y.axis(a);
            loss += e * e;
            db[a] += -2.0 * e / u;
            ds[a] += -2.0 * e * centered / (u * u);
        }
    }
    let mut grad = vec![0.0; raw.len()];
    match kind {
        ErrorModelKind::Em1 => grad[0] = ds.iter().sum(),
        ErrorModelKind::Em2 => grad.copy_from_slice(&ds),
        ErrorModelKind::Em3 => grad[0] = db.iter().sum(),
        ErrorModelKind::Em4 => grad.copy_from_slice(&db),
        ErrorModelKind::Em5 => {
            grad[..3].copy_from_slice(&ds);
            grad[3..].copy_from_slice(&db);
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

/// Calibrates the window's DVL samples with the terms in `raw` and returns
/// the mean over samples of the squared error summed over the three axes.
pub fn closed_loop_loss(raw: &[f64], window: &SampleWindow, kind: ErrorModelKind, target: LossTarget) -> Result<f64> {
    if raw.len() != terms_dimension(kind) {
        return Err(Error::domain(format!(
            "{kind} expects {} raw values, got {}",
            terms_dimension(kind),
            raw.len()
        )));
    }
    if window.is_empty() {
        return Err(Error::domain("empty window"));
    }
    Ok(closed_loop_with_grad(raw, window, kind, target).0)
}

struct ClosedLoopRule {
    windows: Vec<SampleWindow>,
    kind: ErrorModelKind,
    target: LossTarget,
    weight: f64,
}

impl CustomBackward for ClosedLoopRule {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>> {
        let dim = terms_dimension(self.kind);
        let mut g = Vec::with_capacity(inputs[0].numel());
        for (raw, w) in inputs[0].data().chunks(dim).zip(&self.windows) {
            let (_, gr) = closed_loop_with_grad(raw, w, self.kind, self.target);
            g.extend(gr.into_iter().map(|v| v * self.weight * grad_out[0]));
        }
        vec![g]
    }
}

/// Appends `weight · Σ_windows closed_loop_loss` to the graph.
fn closed_loop_node(
    g: &mut Graph,
    raw: Var,
    windows: &[&SampleWindow],
    kind: ErrorModelKind,
    target: LossTarget,
    weight: f64,
) -> Result<Var> {
    let dim = terms_dimension(kind);
    let rt = g.value(raw);
    if rt.shape() != [windows.len(), dim] {
        return Err(Error::domain("raw output shape does not match the batch"));
    }
    let mut total = 0.0;
    for (r, w) in rt.data().chunks(dim).zip(windows) {
        total += closed_loop_with_grad(r, w, kind, target).0;
    }
    let rule = ClosedLoopRule {
        windows: windows.iter().map(|w| (*w).clone()).collect(),
        kind,
        target,
        weight,
    };
    Ok(g.custom(&[raw], Tensor::scalar(weight * total), Box::new(rule)))
}

/// Per-epoch losses of one training run. Loss vectors are bit-identical for
/// a fixed seed; wall times are not.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub eval_loss: Vec<f64>,
    pub wall_time_s: Vec<f64>,
    pub seed: u64,
    /// Epoch (0-based) whose parameters were retained.
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    /// Writes `epoch,train_loss,eval_loss,wall_s` CSV.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,eval_loss,wall_s")?;
        for i in 0..self.epochs() {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.3}",
                i + 1,
                self.train_loss[i],
                self.eval_loss.get(i).copied().unwrap_or(f64::NAN),
                self.wall_time_s.get(i).copied().unwrap_or(0.0)
            )?;
        }
        Ok(())
    }
}

/// Trains `model` in place with RMSProp on the closed-loop loss and keeps
/// the parameters of the epoch with the lowest eval loss.
pub fn train(
    model: &mut DCNetModel,
    train_set: &[SampleWindow],
    eval_set: &[SampleWindow],
    seed: u64,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    let cfg = model.config.clone();
    let mut opt = RmsProp::new(cfg.learning_rate_for(model.kind));
    let mut report = TrainReport {
        seed,
        ..Default::default()
    };
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut derived_rng(seed, "shuffle", epoch as u64));
        let mut epoch_loss = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let windows: Vec<&SampleWindow> = batch.iter().map(|&i| &train_set[i]).collect();
            let weight = 1.0 / windows.len() as f64;
            let stream = ((epoch as u64) << 32) | ((bi as u64) << 12);
            let parts: Vec<(f64, Vec<Vec<f64>>)> = windows
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(ci, ch)| {
                    let mut rng = derived_rng(seed, "dropout", stream | ci as u64);
                    model.loss_and_grad(ch, ForwardMode::Train(&mut rng), weight)
                })
                .collect::<Result<_>>()?;
            let mut grads: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.numel()]).collect();
            let mut batch_loss = 0.0;
            for (l, gs) in parts {
                batch_loss += l;
                for (acc, g) in grads.iter_mut().zip(gs) {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            if !batch_loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                report.wall_time_s.push(start.elapsed().as_secs_f64());
                report.train_loss.push(f64::NAN);
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    report: Box::new(report),
                });
            }
            epoch_loss += batch_loss * windows.len() as f64;
            opt.step(&mut model.params, &grads)?;
        }
        report.train_loss.push(epoch_loss / train_set.len() as f64);

        let score = if eval_set.is_empty() {
            report.train_loss[epoch]
        } else {
            let l = model.evaluate_loss(eval_set)?;
            report.eval_loss.push(l);
            l
        };
        report.wall_time_s.push(start.elapsed().as_secs_f64());
        if !score.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                report: Box::new(report),
            });
        }
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, model.params.clone()));
            report.best_epoch = Some(epoch);
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(report)
}

/// Estimates terms over a calibration segment: windows it, runs the model
/// in eval mode, averages the raw outputs and structures the mean.
pub fn estimate_terms(model: &DCNetModel, dvl: &VelocitySeries, gnss: &VelocitySeries) -> Result<BodyErrorTerms> {
    let w = model.config.window;
    if dvl.len() < w {
        return Err(Error::domain(format!(
            "calibration segment of {} s is shorter than the {w}-sample window",
            dvl.len()
        )));
    }
    // Inference ignores the reference block; the GNSS series fills that slot.
    let windows = window_series(dvl, gnss, gnss, w, DEFAULT_STRIDE)?;
    let raw = model.infer(&windows)?;
    let dim = terms_dimension(model.kind);
    let mut mean = vec![0.0; dim];
    for r in &raw {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= raw.len() as f64);
    terms_from_vector(model.kind, &mean)
}
