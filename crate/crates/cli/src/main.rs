use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use atmq::analysis::{analyze, build_model, parse_models, AnalysisOptions};
use atmq::presets::{config_hash, desk_scale, preset, PRESET_NAMES};
use atmq::sampling::{export_csv, load_samples, run_simulation_with, save_samples, ChannelConfig, RunOptions};
use atmq::squeezing::{squeezing_vs_threshold, squeezing_vs_threshold_model, threshold_csv, SqueezingInput};
use atmq::verify::{all_passed, verify_aperture, verify_screens, verify_vacuum, Check, ScreenCheckOptions};
use atmq::Error;

#[derive(Parser)]
#[command(name = "atmq", version, about = "Monte Carlo transmittance statistics of turbulent free-space channels")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "ATMQ_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample channel realizations and write a sample file.
    Simulate {
        /// Built-in channel (see `atmq presets`).
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        /// Channel configuration file (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Halve the grid resolution and cap the sample count.
        #[arg(long)]
        desk_scale: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        samples: Option<usize>,
        /// Parent directory of the run directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Also write the records as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Fit the PDT models to a sample file and write the analysis tables.
    Analyze {
        samples: PathBuf,
        /// Comma-separated model list.
        #[arg(long, default_value = "lognormal,beta,wandering,elliptic,total-prob-ln,total-prob-beta")]
        models: String,
        /// Output directory; defaults to `analysis` next to the sample file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        elliptic_draws: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Check the numerical building blocks against closed forms.
    Verify {
        #[arg(value_enum)]
        kind: VerifyKind,
        /// Screens per generator for the structure-function check.
        #[arg(long, default_value_t = 2000)]
        screens: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Squeezing at the receiver as a function of the postselection threshold.
    Squeeze {
        samples: PathBuf,
        #[arg(long, default_value_t = 0)]
        aperture: usize,
        /// Squeezing of the input state (dB, negative when squeezed).
        #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
        input_db: f64,
        /// Mean quadrature of the input state.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        mean_quadrature: f64,
        /// Constant channel loss (dB).
        #[arg(long, default_value_t = 0.0)]
        loss_db: f64,
        /// Comma-separated thresholds; defaults to 0, 0.05, ..., 0.95.
        #[arg(long)]
        thresholds: Option<String>,
        /// Also evaluate these models by quadrature.
        #[arg(long)]
        models: Option<String>,
        /// Output CSV; defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the records of a sample file as CSV.
    Export {
        samples: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in channels or print one as a configuration file.
    Presets {
        name: Option<String>,
        #[arg(long)]
        desk_scale: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyKind {
    Screens,
    Vacuum,
    Aperture,
    All,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_hash: String,
    seed: u64,
    code_version: &'static str,
    desk_scale: bool,
    started_unix: u64,
    finished_unix: u64,
    outputs: Vec<String>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config { .. } => 2,
                Error::Io(_) | Error::Format(_) | Error::Checksum { .. } | Error::Version { .. } => 1,
                _ => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
    }
    3
}

fn load_config(preset_name: Option<&str>, path: Option<&Path>) -> anyhow::Result<ChannelConfig> {
    match (preset_name, path) {
        (Some(name), _) => Ok(preset(name)?),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(Error::from).with_context(|| format!("reading {}", path.display()))?;
            let cfg = ChannelConfig::from_toml(&text)?;
            cfg.validate()?;
            Ok(cfg)
        }
        (None, None) => Err(Error::config("preset", "give --preset or --config").into()),
    }
}

fn load(path: &Path) -> anyhow::Result<atmq::sampling::SampleSet> {
    load_samples(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    fs::write(path, contents).map_err(Error::from).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).map_err(Error::from).with_context(|| format!("creating {}", path.display()))
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    preset_name: Option<String>,
    config: Option<PathBuf>,
    desk: bool,
    seed: Option<u64>,
    samples: Option<usize>,
    out: PathBuf,
    csv: bool,
) -> anyhow::Result<()> {
    let started = now();
    let mut cfg = load_config(preset_name.as_deref(), config.as_deref())?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(m) = samples {
        cfg.samples = m;
    }
    if desk {
        cfg = desk_scale(&cfg);
    }
    cfg.validate()?;
    let hash = config_hash(&cfg)?;
    let dir = out.join(&hash[..16]);
    create_dir(&dir)?;
    write_file(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    eprintln!(
        "simulating `{}`{}: {} samples on {}^2 x {} m, run directory {}",
        cfg.name,
        if cfg.desk_scale { " (desk scale)" } else { "" },
        cfg.samples,
        cfg.grid.points,
        cfg.grid.step,
        dir.display()
    );
    let progress = |done: usize, total: usize| {
        eprint!("\r  {done}/{total}");
        let _ = std::io::stderr().flush();
    };
    let set = run_simulation_with(&cfg, &RunOptions { threads: None, progress: Some(&progress) })?;
    eprintln!();
    let sample_path = dir.join("samples.atmq");
    save_samples(&set, &sample_path)?;
    let mut outputs = vec!["config.toml".to_string(), "samples.atmq".to_string()];
    if csv {
        let mut buf = Vec::new();
        export_csv(&set, &mut buf)?;
        write_file(&dir.join("samples.csv"), &buf)?;
        outputs.push("samples.csv".into());
    }
    for (a, r) in set.apertures().iter().enumerate() {
        let eta = set.eta(a);
        let mean = eta.iter().sum::<f64>() / eta.len() as f64;
        println!("aperture {a}: radius {r:.6e} m, mean transmittance {mean:.6}");
    }
    let manifest = RunManifest {
        command: "simulate".into(),
        config_hash: hash,
        seed: cfg.master_seed,
        code_version: env!("CARGO_PKG_VERSION"),
        desk_scale: cfg.desk_scale,
        started_unix: started,
        finished_unix: now(),
        outputs,
    };
    write_file(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    println!("{}", sample_path.display());
    Ok(())
}

fn run_analyze(
    samples: PathBuf,
    models: String,
    out: Option<PathBuf>,
    elliptic_draws: usize,
    seed: u64,
) -> anyhow::Result<()> {
    let models = parse_models(&models)?;
    let set = load(&samples)?;
    let options = AnalysisOptions { elliptic_draws, seed, ..Default::default() };
    let files = analyze(&set, &models, &options)?;
    let dir = out.unwrap_or_else(|| samples.parent().unwrap_or(Path::new(".")).join("analysis"));
    create_dir(&dir)?;
    for (name, contents) in &files {
        write_file(&dir.join(name), contents.as_bytes())?;
    }
    if let Some((_, ks)) = files.iter().find(|(n, _)| n == "ks.csv") {
        print!("{ks}");
    }
    eprintln!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

fn run_verify(kind: VerifyKind, screens: usize, seed: u64) -> anyhow::Result<bool> {
    let mut checks: Vec<Check> = Vec::new();
    if matches!(kind, VerifyKind::Vacuum | VerifyKind::All) {
        checks.extend(verify_vacuum(None)?);
    }
    if matches!(kind, VerifyKind::Aperture | VerifyKind::All) {
        checks.extend(verify_aperture(None)?);
    }
    if matches!(kind, VerifyKind::Screens | VerifyKind::All) {
        let options = ScreenCheckOptions { screens, seed, ..Default::default() };
        checks.extend(verify_screens(&options)?);
    }
    for c in &checks {
        println!("{c}");
    }
    Ok(all_passed(&checks))
}

fn parse_thresholds(text: Option<&str>) -> anyhow::Result<Vec<f64>> {
    match text {
        None => Ok((0..20).map(|i| i as f64 * 0.05).collect()),
        Some(t) => t
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::config("thresholds", format!("not a number: `{s}`")).into()))
            .collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_squeeze(
    samples: PathBuf,
    aperture: usize,
    input_db: f64,
    mean_quadrature: f64,
    loss_db: f64,
    thresholds: Option<String>,
    models: Option<String>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let thresholds = parse_thresholds(thresholds.as_deref())?;
    let input = SqueezingInput::from_db(input_db, mean_quadrature, loss_db)?;
    let set = load(&samples)?;
    if aperture >= set.apertures().len() {
        return Err(Error::config("aperture", format!("index {aperture} out of range (0..{})", set.apertures().len())).into());
    }
    let eta = set.eta(aperture);
    let table = threshold_csv(&thresholds, &squeezing_vs_threshold(&eta, &thresholds, &input));
    match &out {
        Some(path) => write_file(path, table.as_bytes())?,
        None => print!("{table}"),
    }
    if let Some(list) = models {
        let options = AnalysisOptions::default();
        for kind in parse_models(&list)? {
            let model = build_model(&set, aperture, kind, &options)?;
            let rows = squeezing_vs_threshold_model(&model, &thresholds, &input);
            let text = threshold_csv(&thresholds, &rows);
            match &out {
                Some(path) => {
                    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("squeeze");
                    write_file(&path.with_file_name(format!("{stem}_{}.csv", kind.name())), text.as_bytes())?;
                }
                None => print!("# model {}\n{text}", kind.name()),
            }
        }
    }
    Ok(())
}

fn run_export(samples: PathBuf, out: Option<PathBuf>) -> anyhow::Result<()> {
    let set = load(&samples)?;
    let mut buf = Vec::new();
    export_csv(&set, &mut buf)?;
    match out {
        Some(path) => write_file(&path, &buf),
        None => {
            std::io::stdout().write_all(&buf).map_err(Error::from)?;
            Ok(())
        }
    }
}

fn run_presets(name: Option<String>, desk: bool) -> anyhow::Result<()> {
    match name {
        None => {
            for n in PRESET_NAMES {
                println!("{n}");
            }
        }
        Some(n) => {
            let cfg = preset(&n)?;
            let cfg = if desk { desk_scale(&cfg) } else { cfg };
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().context("configuring worker threads")?;
    }
    match cli.command {
        Command::Simulate { preset, config, desk_scale, seed, samples, out, csv } => {
            simulate(preset, config, desk_scale, seed, samples, out, csv)?
        }
        Command::Analyze { samples, models, out, elliptic_draws, seed } => {
            run_analyze(samples, models, out, elliptic_draws, seed)?
        }
        Command::Verify { kind, screens, seed } => return run_verify(kind, screens, seed),
        Command::Squeeze { samples, aperture, input_db, mean_quadrature, loss_db, thresholds, models, out } => {
            run_squeeze(samples, aperture, input_db, mean_quadrature, loss_db, thresholds, models, out)?
        }
        Command::Export { samples, out } => run_export(samples, out)?,
        Command::Presets { name, desk_scale } => run_presets(name, desk_scale)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
