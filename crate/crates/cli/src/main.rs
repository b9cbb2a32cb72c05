mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scda::data::{
    generate, load_csv, write_source_csv, write_target_csv, GroundTruth, LabeledSet, Loaded,
    Schema, TargetSet,
};
use scda::eval::{
    ablation_suite, config_hash, evaluate_run_with, feature_scatter_csv, k_trajectory_csv,
    loss_curves_csv, Evaluator, MetricsReport,
};
use scda::net::Checkpoint;
use scda::numkit::Rng;
use scda::Error;

use config::{CliConfig, Overrides};

/// Open-set domain adaptation with implicit-class discovery.
///
/// Settings come from built-in defaults, then `--config FILE` (TOML with
/// `[train]`, `[data]`, `[paths]` and `[ablate]` tables), then flags.
#[derive(Debug, Parser)]
#[command(name = "scda", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic source.csv / target.csv pair
    Generate {
        #[command(flatten)]
        opts: Overrides,
    },
    /// Train and evaluate one configuration
    Run {
        #[command(flatten)]
        opts: Overrides,
        /// Validate config and data, then stop
        #[arg(long)]
        dry_run: bool,
    },
    /// Run several ablation modes over several seeds
    Ablate {
        #[command(flatten)]
        opts: Overrides,
    },
    /// Summarize a report.json
    Report {
        /// Path to a report.json written by `run`
        path: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical { .. } => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { opts } => opts.resolve().and_then(|c| cmd_generate(&c)),
        Command::Run { opts, dry_run } => opts.resolve().and_then(|c| cmd_run(&c, dry_run)),
        Command::Ablate { opts } => opts.resolve().and_then(|c| cmd_ablate(&c)),
        Command::Report { path } => cmd_report(&path),
    };
    match result {
        Ok(artifacts) => {
            if !artifacts.is_empty() {
                let paths: Vec<String> = artifacts.iter().map(|p| p.display().to_string()).collect();
                println!("artifacts: {}", paths.join(" "));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

type Data = (LabeledSet, TargetSet, GroundTruth);

fn load_data(c: &CliConfig, seed: u64) -> Result<Data, Error> {
    let (Some(s), Some(t)) = (&c.paths.source, &c.paths.target) else {
        return generate(&c.data, &mut Rng::new(seed));
    };
    let Loaded::Source(source) = load_csv(s, Schema::Source)? else {
        unreachable!("source schema")
    };
    let Loaded::Target(target, truth) = load_csv(t, Schema::Target)? else {
        unreachable!("target schema")
    };
    let truth = truth.ok_or_else(|| {
        Error::Config(format!("{}: evaluation needs a gt column", t.display()))
    })?;
    if source.dim() != target.dim() {
        return Err(Error::Config(format!(
            "source has {} features but target has {}",
            source.dim(),
            target.dim()
        )));
    }
    Ok((source, target, truth))
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>, out: &mut Vec<PathBuf>) -> Result<(), Error> {
    fs::write(&path, contents)?;
    out.push(path);
    Ok(())
}

fn cmd_generate(c: &CliConfig) -> Result<Vec<PathBuf>, Error> {
    let (source, target, truth) = generate(&c.data, &mut Rng::new(c.train.seed))?;
    fs::create_dir_all(&c.paths.out)?;
    let sp = c.paths.out.join("source.csv");
    let tp = c.paths.out.join("target.csv");
    write_source_csv(&sp, &source)?;
    write_target_csv(&tp, &target, Some(&truth))?;
    println!(
        "source: {} rows, {} classes; target: {} rows, {} implicit classes; dim {}",
        source.len(),
        source.num_classes(),
        target.len(),
        truth.num_implicit(source.num_classes()),
        source.dim()
    );
    Ok(vec![sp, tp])
}

/// Per-run directory, named so that different configs and seeds never clash.
fn run_dir(c: &CliConfig) -> PathBuf {
    let key = (&c.train, &c.data, &c.paths.source, &c.paths.target);
    c.paths.out.join(format!("{}-s{}", config_hash(&key), c.train.seed))
}

fn cmd_run(c: &CliConfig, dry_run: bool) -> Result<Vec<PathBuf>, Error> {
    let (source, mut target, truth) = load_data(c, c.train.seed)?;
    if truth.len() != target.len() {
        return Err(Error::Config("ground truth and target lengths differ".into()));
    }
    if dry_run {
        println!(
            "dry run ok: {} source rows, {} target rows, mode {}",
            source.len(),
            target.len(),
            c.train.ablation_mode
        );
        return Ok(Vec::new());
    }
    let dir = run_dir(c);
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let mut artifacts = Vec::new();
    write(dir.join("config.toml"), toml::to_string(c).map_err(|e| Error::Config(e.to_string()))?, &mut artifacts)?;

    let log_path = dir.join("epochs.jsonl");
    let mut log = String::new();
    let evaluator = Evaluator::new(&truth).with_hook(|entry, model| {
        log.push_str(&serde_json::to_string(entry)?);
        log.push('\n');
        fs::write(&log_path, &log)?;
        Checkpoint::from_model(model).save(&ckpt_dir.join(format!("epoch-{:03}.json", entry.epoch)))
    });
    let (state, report) = evaluate_run_with(&c.train, &source, &mut target, &truth, evaluator)?;
    if log_path.exists() {
        artifacts.push(log_path);
    }

    write(dir.join("report.json"), report.to_json(), &mut artifacts)?;
    let model_path = dir.join("model.json");
    Checkpoint::from_model(&state.model).save(&model_path)?;
    artifacts.push(model_path);
    write(dir.join("loss_curves.csv"), loss_curves_csv(&state), &mut artifacts)?;
    write(dir.join("k_trajectory.csv"), k_trajectory_csv(&state), &mut artifacts)?;
    write(
        dir.join("feature_scatter.csv"),
        feature_scatter_csv(&state.model, &source, &target, &truth)?,
        &mut artifacts,
    )?;
    print_summary(&report);
    Ok(artifacts)
}

fn cmd_ablate(c: &CliConfig) -> Result<Vec<PathBuf>, Error> {
    let seeds: Vec<u64> = (0..c.ablate.seeds).collect();
    if seeds.is_empty() || c.ablate.modes.is_empty() {
        return Err(Error::Config("ablate needs at least one mode and one seed".into()));
    }
    let data = |seed: u64| load_data(c, seed);
    let table = ablation_suite(&c.train, &c.ablate.modes, &seeds, &data)?;

    let key = (&c.train, &c.data, &c.paths.source, &c.paths.target, &c.ablate);
    let dir = c.paths.out.join(format!("ablate-{}", config_hash(&key)));
    fs::create_dir_all(&dir)?;
    let mut artifacts = Vec::new();
    write(dir.join("ablation.json"), table.to_json(), &mut artifacts)?;
    write(dir.join("ablation_rows.csv"), table.rows_csv(), &mut artifacts)?;
    write(dir.join("ablation_summary.csv"), table.summary_csv(), &mut artifacts)?;
    print!("{}", table.summary_csv());
    Ok(artifacts)
}

fn cmd_report(path: &Path) -> Result<Vec<PathBuf>, Error> {
    let report = MetricsReport::from_json(&fs::read_to_string(path)?)?;
    print_summary(&report);
    Ok(Vec::new())
}

fn print_summary(r: &MetricsReport) {
    println!("mode {}  seed {}  config {}", r.mode, r.provenance.seed, r.provenance.config_hash);
    println!("OS {:.4}  OS* {:.4}", r.os, r.os_star);
    println!("k* {}  k_gt {}  k error {}", r.k_star, r.k_gt, r.k_error);
    let corr: Vec<String> = r.correspondence.iter().map(|(n, c)| format!("top{n}={c}")).collect();
    println!("correspondence {}", corr.join(" "));
    let traj: Vec<String> = r.k_trajectory.iter().map(usize::to_string).collect();
    println!("k trajectory {}", traj.join(" "));
    if !r.missing_classes.is_empty() {
        println!("missing target classes {:?}", r.missing_classes);
    }
}
