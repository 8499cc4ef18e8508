use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lineage_core::classifiers::ClassifierKind;
use lineage_core::metrics::{EvalReport, Task};
use lineage_core::pipeline::{self, RunConfig, Subset};
use lineage_core::{Error, Result};

#[derive(Parser)]
#[command(name = "lineage", version, about = "Latent-embedding classifiers and zero-shot lineage transfer")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "LINEAGE_OUT", default_value = "lineage-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the three synthetic populations.
    Synth,
    /// Train the autoencoder on a progenitor dataset.
    TrainAe {
        input: PathBuf,
        /// Accept a dataset of any cell type.
        #[arg(long)]
        allow_any_celltype: bool,
    },
    /// Embed a dataset with a trained autoencoder.
    Embed { checkpoint: PathBuf, input: PathBuf },
    /// Train a classifier (ffn, attn or gcn) on an embedding file.
    TrainClf {
        kind: ClassifierKind,
        embedding: PathBuf,
        /// Overrides the configured task (multiclass-7 or binary).
        #[arg(long)]
        task: Option<Task>,
    },
    /// Apply a trained classifier to another population without updates.
    ZeroShot {
        checkpoint: PathBuf,
        embedding: PathBuf,
        /// Rows to score: all, train or test (split as in training).
        #[arg(long, default_value = "all")]
        subset: Subset,
        /// Require a two-class checkpoint instead of binarizing seven-class predictions.
        #[arg(long)]
        binary_head: bool,
    },
    /// Aggregate reports and PCA coordinates of a run directory.
    Report {
        /// Defaults to --out.
        run_dir: Option<PathBuf>,
    },
    /// Every stage in order on synthetic data, then the report.
    Run,
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = match g.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    cfg.validate()?;
    for w in cfg.range_warnings() {
        eprintln!("lineage: warning: {w}");
    }
    Ok(cfg)
}

fn print_report(r: &EvalReport, path: &std::path::Path) {
    let train = r.train_accuracy.map(|a| format!("train accuracy {a:.4}, ")).unwrap_or_default();
    println!(
        "{} {} {} ({}): {train}test accuracy {:.4}, binary F1 {:.4} on {} rows",
        r.model, r.cell_type, r.mode, r.task, r.test_accuracy, r.binary_f1.value, r.test_count
    );
    println!("report: {}", path.display());
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let out = &cli.global.out;
    match cli.command {
        Command::Synth => {
            for p in pipeline::cmd_synth(&cfg, out)? {
                println!("{}", p.display());
            }
        }
        Command::TrainAe {
            input,
            allow_any_celltype,
        } => {
            let r = pipeline::cmd_train_ae(&cfg, &input, out, allow_any_celltype)?;
            println!(
                "checkpoint: {} (latent width {})",
                r.checkpoint.display(),
                cfg.autoencoder.latent_width
            );
            println!("reconstruction mse: train {:.6}, test {:.6}", r.train_mse, r.test_mse);
        }
        Command::Embed { checkpoint, input } => {
            println!("{}", pipeline::cmd_embed(&cfg, &checkpoint, &input, out)?.display());
        }
        Command::TrainClf { kind, embedding, task } => {
            let cfg = RunConfig {
                task: task.unwrap_or(cfg.task),
                ..cfg
            };
            let r = pipeline::cmd_train_clf(&cfg, kind, &embedding, out)?;
            for n in &r.report.notes {
                if n.contains("absent") {
                    eprintln!("lineage: warning: {n}");
                }
            }
            println!("checkpoint: {}", r.checkpoint.display());
            print_report(&r.report, &r.report_path);
        }
        Command::ZeroShot {
            checkpoint,
            embedding,
            subset,
            binary_head,
        } => {
            let r = pipeline::cmd_zero_shot(&cfg, &checkpoint, &embedding, out, subset, binary_head)?;
            print_report(&r.report, &r.report_path);
        }
        Command::Report { run_dir } => {
            let dir = run_dir.unwrap_or_else(|| out.clone());
            let s = pipeline::cmd_report(&dir)?;
            print!("{}", std::fs::read_to_string(&s.tables)?);
            println!("results: {}", s.results_csv.display());
        }
        Command::Run => {
            let s = pipeline::cmd_run(&cfg, out)?;
            print!("{}", std::fs::read_to_string(&s.tables)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lineage: error: {e}");
            ExitCode::from(Error::exit_code(&e) as u8)
        }
    }
}
