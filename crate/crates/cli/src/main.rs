//! Command-line front end: synthetic data generation, training, evaluation of
//! a checkpoint, K estimation and report rendering.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adgcd::clustering::KMethod;
use adgcd::dataio::{generate_synthetic, load_dataset, save_dataset, Dataset, Format};
use adgcd::pipeline::{
    benchmark_config, pca_2d, run, run_inference, write_pca_csv, Model, RunReport, TrainConfig,
};
use adgcd::Error;
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "adgcd",
    version,
    about = "Across-domain generalized category discovery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic source/target pair as GCDE files.
    Generate {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        samples_per_class: Option<usize>,
        #[arg(long)]
        rotation_deg: Option<f64>,
        #[arg(long)]
        translation: Option<f64>,
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Train on a source/target pair; writes model.gcdk, report.json and summary.csv.
    Train {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// `key = value` lines overriding the default training config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster a target set with a trained checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Labeled source; without it K must be fixed through `k_override`.
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the report JSON (stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional `index,label,cluster,pc1,pc2` CSV of the target embeddings.
        #[arg(long)]
        pca: Option<PathBuf>,
    },
    /// Estimate the number of target clusters with a trained checkpoint.
    EstimateK {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "brent")]
        method: String,
    },
    /// Print the CSV summary of a report JSON.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
}

fn load(path: &Path) -> adgcd::Result<Dataset> {
    load_dataset(path, Format::from_path(path))
}

fn load_config(path: Option<&Path>) -> adgcd::Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_text(&fs::read_to_string(p)?),
        None => Ok(TrainConfig::default()),
    }
}

fn generate(
    out_dir: &Path,
    seed: u64,
    samples_per_class: Option<usize>,
    rotation_deg: Option<f64>,
    translation: Option<f64>,
    scale: Option<f64>,
) -> adgcd::Result<()> {
    let mut cfg = benchmark_config(seed);
    if let Some(n) = samples_per_class {
        cfg.samples_per_class = n;
    }
    if let Some(r) = rotation_deg {
        cfg.shift.rotation_deg = r;
    }
    if let Some(t) = translation {
        cfg.shift.translation = t;
    }
    if let Some(s) = scale {
        cfg.shift.scale = s;
    }
    cfg.validate()?;
    let (source, target) = generate_synthetic(&cfg)?;
    fs::create_dir_all(out_dir)?;
    save_dataset(&source, &out_dir.join("source.gcde"), Format::Gcde)?;
    save_dataset(&target, &out_dir.join("target.gcde"), Format::Gcde)?;
    println!(
        "wrote {} source and {} target samples to {}",
        source.len(),
        target.len(),
        out_dir.display()
    );
    Ok(())
}

fn print_summary(report: &RunReport) -> adgcd::Result<()> {
    report.write_summary_csv(io::stdout().lock())
}

fn train(source: &Path, target: &Path, config: Option<&Path>, out: &Path) -> adgcd::Result<()> {
    let cfg = load_config(config)?;
    let (source, target) = (load(source)?, load(target)?);
    let output = run(&source, &target, &cfg)?;
    fs::create_dir_all(out)?;
    output.model.save(&out.join("model.gcdk"))?;
    fs::write(out.join("report.json"), output.report.to_json()?)?;
    output
        .report
        .write_summary_csv(fs::File::create(out.join("summary.csv"))?)?;
    print_summary(&output.report)
}

fn eval(
    checkpoint: &Path,
    target: &Path,
    source: Option<&Path>,
    config: Option<&Path>,
    out: Option<&Path>,
    pca: Option<&Path>,
) -> adgcd::Result<()> {
    let cfg = load_config(config)?;
    let model = Model::load(checkpoint)?;
    let target = load(target)?;
    let source = source.map(load).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inference = run_inference(&model, source.as_ref(), &target, &cfg, &mut rng)?;
    let report = RunReport::new(cfg.to_map(), None, Vec::new(), &inference);
    if let Some(path) = pca {
        let coords = pca_2d(&inference.target_embeddings)?;
        write_pca_csv(
            fs::File::create(path)?,
            &coords,
            &target.labels(),
            &inference.target_assignment,
        )?;
    }
    match out {
        Some(path) => {
            fs::write(path, report.to_json()?)?;
            print_summary(&report)
        }
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(report.to_json()?.as_bytes())?;
            Ok(())
        }
    }
}

fn estimate_k(
    checkpoint: &Path,
    source: &Path,
    target: &Path,
    config: Option<&Path>,
    method: &str,
) -> adgcd::Result<()> {
    let mut cfg = load_config(config)?;
    cfg.k_method = method.parse::<KMethod>()?;
    cfg.k_override = 0;
    let model = Model::load(checkpoint)?;
    let (source, target) = (load(source)?, load(target)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inference = run_inference(&model, Some(&source), &target, &cfg, &mut rng)?;
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "k,score")?;
    for (k, s) in &inference.k_probes {
        writeln!(stdout, "{k},{s}")?;
    }
    writeln!(
        stdout,
        "estimated K = {} ({})",
        inference.k, inference.k_source
    )?;
    Ok(())
}

fn report(path: &Path) -> adgcd::Result<()> {
    print_summary(&RunReport::from_json(&fs::read_to_string(path)?)?)
}

fn dispatch(command: Command) -> adgcd::Result<()> {
    match command {
        Command::Generate {
            out_dir,
            seed,
            samples_per_class,
            rotation_deg,
            translation,
            scale,
        } => generate(
            &out_dir,
            seed,
            samples_per_class,
            rotation_deg,
            translation,
            scale,
        ),
        Command::Train {
            source,
            target,
            config,
            out,
        } => train(&source, &target, config.as_deref(), &out),
        Command::Eval {
            checkpoint,
            target,
            source,
            config,
            out,
            pca,
        } => eval(
            &checkpoint,
            &target,
            source.as_deref(),
            config.as_deref(),
            out.as_deref(),
            pca.as_deref(),
        ),
        Command::EstimateK {
            checkpoint,
            source,
            target,
            config,
            method,
        } => estimate_k(&checkpoint, &source, &target, config.as_deref(), &method),
        Command::Report { report: path } => report(&path),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config_error() {
        2
    } else if e.is_data_error() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("GCD_THREADS") {
        let threads = match v.parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                eprintln!("error: GCD_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(2);
            }
        };
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
