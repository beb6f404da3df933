use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cfbench::data::Mnist;
use cfbench::protocols::{RunRecord, RunStatus, Stage};
use cfbench::report::{
    load_summaries, read_json, render_svg, run_batch, write_atomic, ConfigLayer, ExperimentConfig, Progress, ReportError,
    ResultTable,
};

#[derive(Parser)]
#[command(name = "cfbench", version, about = "Catastrophic-forgetting benchmark on incremental MNIST tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one (model, task, paradigm) experiment over its hyper-parameter grid.
    Run(ExperimentArgs),
    /// Run every combination of the given models, tasks and paradigms.
    Grid(ExperimentArgs),
    /// Render q* tables from the experiment summaries below a directory.
    Report {
        /// Directory holding experiment summaries (searched recursively).
        dir: PathBuf,
        /// Where to write the table files; defaults to `dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw the accuracy curves of a run record as SVG.
    Plot {
        /// Run record file (`runs/<id>.json`).
        record: PathBuf,
        /// Output file; defaults to the record path with an `.svg` extension.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// Model family (EWC, fc, D-fc, conv, D-conv, LWTA); `grid` also takes a comma list or `all`.
    #[arg(long)]
    model: Option<String>,
    /// Task preset such as D5-5a or DP10-10; `grid` also takes a comma list or `all`.
    #[arg(long)]
    task: Option<String>,
    /// prescient, realistic (or `both` for `grid`).
    #[arg(long)]
    paradigm: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Repeat with seeds seed, seed+1, ...
    #[arg(long)]
    replicas: Option<u64>,
    /// Directory containing the four MNIST IDX files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    tmax: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    fisher_samples: Option<usize>,
    /// Permute the D1 pixels too in permutation tasks.
    #[arg(long)]
    permute_d1: Option<bool>,
    /// Worker threads.
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    lr_d1: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lr_d2: Option<Vec<f64>>,
    /// TOML file with any of the options above (snake_case keys).
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ExperimentArgs {
    fn resolve(self) -> Result<ExperimentConfig> {
        let file = match &self.config {
            Some(p) => ConfigLayer::from_toml_file(p)?,
            None => ConfigLayer::default(),
        };
        let cli = ConfigLayer {
            model: self.model,
            task: self.task,
            paradigm: self.paradigm,
            seed: self.seed,
            replicas: self.replicas,
            data_dir: self.data_dir,
            out_dir: self.out_dir,
            tmax: self.tmax,
            batch_size: self.batch_size,
            eval_every: self.eval_every,
            fisher_samples: self.fisher_samples,
            permute_d1: self.permute_d1,
            parallel: self.parallel,
            layers: self.layers,
            sizes: self.sizes,
            lr_d1: self.lr_d1,
            lr_d2: self.lr_d2,
        };
        Ok(cli.over(ConfigLayer::from_env().over(file)).resolve()?)
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            if cfg.models.len() * cfg.tasks.len() * cfg.paradigms.len() != 1 {
                bail!("`run` takes exactly one model, task and paradigm; use `grid` for combinations");
            }
            experiments(&cfg, false)
        }
        Command::Grid(args) => experiments(&args.resolve()?, true),
        Command::Report { dir, out } => report(&dir, out.as_deref().unwrap_or(&dir)),
        Command::Plot { record, out } => {
            let run: RunRecord = read_json(&record)?;
            let svg = render_svg(&run)?;
            let out = out.unwrap_or_else(|| record.with_extension("svg"));
            write_atomic(&out, svg.as_bytes())?;
            eprintln!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn experiments(cfg: &ExperimentConfig, verbose: bool) -> Result<ExitCode> {
    let mnist = Mnist::load_dir(&cfg.data_dir).with_context(|| format!("loading MNIST from {}", cfg.data_dir.display()))?;
    let progress = |p: Progress<'_>| match p {
        Progress::ExperimentStarted { label } => eprintln!("[{label}] started"),
        Progress::RunFinished { label, record } => {
            let k = &record.key;
            let what = match (k.stage, k.lr_d2) {
                (Stage::Retrain, Some(r)) => format!("{} ε_D1={} ε_D2={r}", k.topology, k.lr_d1),
                _ => format!("{} ε_D1={}", k.topology, k.lr_d1),
            };
            match &record.status {
                RunStatus::Failed { reason } => eprintln!("[{label}] run {} {what} failed: {reason}", record.run_id),
                RunStatus::Completed if verbose || record.quality.is_some() => eprintln!(
                    "[{label}] run {} {what} done{}",
                    record.run_id,
                    record.quality.map_or(String::new(), |q| format!(", quality {q:.4}"))
                ),
                RunStatus::Completed => {}
            }
        }
        Progress::ExperimentFinished { label, summary, executed } => {
            eprintln!("[{label}] q* = {:.4} ({executed} runs executed)", summary.q_star)
        }
    };
    let result = run_batch(cfg, &mnist, &progress)?;
    for (s, path) in &result.summaries {
        println!("{} {} {} seed {}: q* = {:.4}  ({})", s.model, s.task, s.paradigm, s.seed, s.q_star, path.display());
    }
    for f in &result.failures {
        eprintln!("error: {f}");
    }
    Ok(if result.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn report(dir: &Path, out: &Path) -> Result<ExitCode> {
    let (summaries, bad) = load_summaries(dir)?;
    for (path, err) in &bad {
        eprintln!("skipping unreadable record {}: {err}", path.display());
    }
    if summaries.is_empty() {
        return Err(ReportError::NoRecords(dir.to_path_buf()).into());
    }
    for table in ResultTable::build(&summaries) {
        let text = table.render_text();
        println!("{text}");
        write_atomic(&out.join(format!("table_{}.txt", table.paradigm)), text.as_bytes())?;
        write_atomic(&out.join(format!("table_{}.csv", table.paradigm)), table.render_csv().as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}
