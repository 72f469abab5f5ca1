//! Command-line front end: simulate data, train networks, evaluate, report.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use dvl_calib::config::{DatasetManifest, WorkbenchConfig, MANIFEST_FILE};
use dvl_calib::dcnet::{model_file_name, train, DCNetModel};
use dvl_calib::error_models::ErrorModelKind;
use dvl_calib::evaluation::{monte_carlo, Approach, CalibrationReport, ModelBank};
use dvl_calib::seed::derive_seed;
use dvl_calib::simulation::{
    build_training_corpus, export_csv, ingest_csv, run_noising_pipeline, NoisingConfig, VelocitySeries,
};
use dvl_calib::Error;

#[derive(Parser)]
#[command(name = "dvlcal", version, about = "DVL calibration workbench")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured worker-thread count (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write ground-truth, DVL and GNSS trajectory CSVs and a training manifest.
    Simulate,
    /// Train one network on the corpus described by a dataset manifest.
    Train {
        /// Error model 1-5.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
        em: u8,
        /// Directory holding dataset.toml (default: paths.corpus_dir, then --out).
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Run the Monte Carlo calibration protocol and write the report.
    Evaluate {
        /// Directory holding em1.model ... em5.model (default: paths.models_dir, then --out).
        #[arg(long)]
        models: Option<PathBuf>,
        /// Evaluate only the closed-form baseline.
        #[arg(long)]
        baseline_only: bool,
    },
    /// Render the plain-text tables of an existing report CSV.
    Report {
        /// Report CSV (default: <out>/report.csv).
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => WorkbenchConfig::load(p)?,
        None => WorkbenchConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Simulate => simulate(&cfg, &cli.out),
        Command::Train { em, corpus } => {
            let dir = corpus
                .or_else(|| cfg.paths.corpus_dir.clone())
                .unwrap_or_else(|| cli.out.clone());
            train_cmd(&cfg, ErrorModelKind::from_number(em)?, &dir, &cli.out)
        }
        Command::Evaluate { models, baseline_only } => {
            let dir = models
                .or_else(|| cfg.paths.models_dir.clone())
                .unwrap_or_else(|| cli.out.clone());
            evaluate(&cfg, &dir, baseline_only, &cli.out)
        }
        Command::Report { input } => {
            let path = input.unwrap_or_else(|| cli.out.join("report.csv"));
            print!("{}", CalibrationReport::read_csv(&path)?.render_table());
            Ok(())
        }
    }
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn emit(series: &VelocitySeries, path: &Path) -> anyhow::Result<()> {
    export_csv(series, path)?;
    println!("wrote {} ({} samples)", path.display(), series.len());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn simulate(cfg: &WorkbenchConfig, out: &Path) -> anyhow::Result<()> {
    let setup = cfg.evaluation_setup()?;
    let train = cfg.training_trajectories()?;
    let scenarios = cfg.scenarios()?;

    create_dir(&out.join("train"))?;
    let mut files = Vec::with_capacity(train.len());
    for (i, gt) in train.iter().enumerate() {
        let rel = PathBuf::from("train").join(format!("train_{}.csv", i + 1));
        emit(gt, &out.join(&rel))?;
        files.push(rel);
    }
    let manifest = DatasetManifest::from_config(cfg, files)?;
    write_text(&out.join(MANIFEST_FILE), &manifest.to_toml())?;

    let n = setup.calibration_len;
    let cal = &setup.calibration_gt;
    let mut named: Vec<(String, VelocitySeries)> = vec![("calibration".into(), cal.slice(0..n))];
    if cal.len() > n {
        named.push(("tail".into(), cal.slice(n..cal.len())));
    }
    named.extend(setup.tests.iter().cloned());
    for (name, gt) in &named {
        emit(gt, &out.join(format!("{name}_gt.csv")))?;
    }

    for sc in &scenarios {
        let dir = out.join(&sc.name);
        create_dir(&dir)?;
        let runs =
            std::iter::once(("calibration".to_string(), cal)).chain(setup.tests.iter().map(|(n, g)| (n.clone(), g)));
        for (i, (name, gt)) in runs.enumerate() {
            let noising = NoisingConfig {
                beam_terms: sc.beam_terms,
                gnss_noise_std_mps: setup.gnss_noise_std_mps,
                geometry: setup.geometry,
                rotation: setup.rotation,
                seed: derive_seed(cfg.seed, &format!("simulate/{}", sc.name), i as u64),
            };
            let (dvl, gnss) = run_noising_pipeline(gt, &noising)?;
            emit(&dvl, &dir.join(format!("{name}_dvl.csv")))?;
            emit(&gnss, &dir.join(format!("{name}_gnss.csv")))?;
        }
    }
    Ok(())
}

fn train_cmd(cfg: &WorkbenchConfig, kind: ErrorModelKind, corpus_dir: &Path, out: &Path) -> anyhow::Result<()> {
    let manifest_path = corpus_dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        bail!(
            "corpus missing: {} not found (run `simulate` first)",
            manifest_path.display()
        );
    }
    let manifest = DatasetManifest::load(&manifest_path)?;
    let trajectories = manifest
        .trajectory_paths(corpus_dir)
        .iter()
        .map(|p| ingest_csv(p).map(VelocitySeries::into_ground_truth))
        .collect::<dvl_calib::Result<Vec<_>>>()?;
    let corpus = build_training_corpus(
        &trajectories,
        &manifest.grid.grid()?,
        &manifest.options()?,
        manifest.seed,
    )?;
    if corpus.train.is_empty() {
        bail!("corpus at {} produced no training windows", corpus_dir.display());
    }
    let net_cfg = cfg.dcnet.config_for(kind, manifest.window)?;
    let mut model = DCNetModel::new(net_cfg, kind, derive_seed(cfg.seed, "model", u64::from(kind.number())))?;
    println!(
        "training {kind}: {} train / {} eval windows, {} parameters",
        corpus.train.len(),
        corpus.eval.len(),
        model.param_count()
    );

    create_dir(out)?;
    let report_path = out.join(format!("em{}_train.csv", kind.number()));
    let write_report = |r: &dvl_calib::dcnet::TrainReport| -> anyhow::Result<()> {
        let mut buf = Vec::new();
        r.write_csv(&mut buf).map_err(|e| Error::io(&report_path, e))?;
        write_text(&report_path, &String::from_utf8(buf).expect("ASCII report"))
    };
    let seed = derive_seed(cfg.seed, "train", u64::from(kind.number()));
    match train(&mut model, &corpus.train, &corpus.eval, seed) {
        Ok(report) => {
            write_report(&report)?;
            if let Some(e) = report.best_epoch {
                println!(
                    "best epoch {} (eval loss {:.4e})",
                    e + 1,
                    report.eval_loss.get(e).copied().unwrap_or(f64::NAN)
                );
            }
        }
        Err(Error::Diverged { epoch, report }) => {
            write_report(&report)?;
            bail!(
                "training {kind} diverged at epoch {epoch}; partial report kept in {}",
                report_path.display()
            );
        }
        Err(e) => return Err(e.into()),
    }
    let model_path = out.join(model_file_name(kind));
    model.save(&model_path)?;
    println!("wrote {}", model_path.display());
    Ok(())
}

fn evaluate(cfg: &WorkbenchConfig, models_dir: &Path, baseline_only: bool, out: &Path) -> anyhow::Result<()> {
    let mut bank = ModelBank::new();
    if !baseline_only {
        for kind in ErrorModelKind::ALL {
            let path = models_dir.join(model_file_name(kind));
            if !path.is_file() {
                bail!("missing model for {kind}: {} not found", path.display());
            }
            let model = DCNetModel::load(&path).with_context(|| format!("loading {kind} model"))?;
            if model.kind() != kind {
                bail!("{} holds a {} model, expected {kind}", path.display(), model.kind());
            }
            bank.insert(model);
        }
    }
    let approaches: Vec<Approach> = if baseline_only {
        vec![Approach::Baseline]
    } else {
        bank.approaches()
    };
    let setup = cfg.evaluation_setup()?;
    let report = monte_carlo(
        &setup,
        &cfg.scenarios()?,
        &approaches,
        &bank,
        cfg.evaluation.mc_iterations,
        cfg.seed,
    )?;

    create_dir(out)?;
    let csv_path = out.join("report.csv");
    let mut buf = Vec::new();
    report.write_csv(&mut buf).map_err(|e| Error::io(&csv_path, e))?;
    write_text(&csv_path, &String::from_utf8(buf).expect("ASCII report"))?;
    let table = report.render_table();
    write_text(&out.join("report.txt"), &table)?;
    print!("{table}");
    std::io::stdout().flush().ok();
    Ok(())
}
