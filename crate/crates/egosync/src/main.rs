use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use egosync::commands::{self, Analysis, Layout};
use egosync::config::RunConfig;
use egosync::{AppError, Result};

#[derive(Parser, Debug)]
#[command(name = "egosync", version, about = "Synchronization embeddings for egocentric pose, on synthetic multi-view data")]
struct Cli {
    /// Flat `section.key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; overrides `paths.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic multi-view corpus.
    SynthData,
    /// Train the two-stream embedding network.
    TrainEmbed,
    /// Write per-frame embeddings and base features of first-view clips.
    Extract,
    /// Train baseline and embedding-augmented pose regressors plus vocabularies.
    TrainPose,
    /// Held-out synchronization accuracy and per-joint pose errors.
    Eval,
    /// Interpretability analyses.
    Analyze {
        #[arg(value_enum)]
        what: Which,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Which {
    Cca,
    Pca,
    Transversal,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    let out = cli
        .out
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| AppError::Config("no run directory: pass --out or set paths.out".into()))?;
    let layout = Layout::new(std::path::absolute(&out).unwrap_or(out));
    match cli.command {
        Command::SynthData => {
            let c = commands::synth_data(&cfg, &layout)?;
            println!("wrote {} clips to {}", c.clips.len(), layout.root.display());
        }
        Command::TrainEmbed => {
            let m = commands::train_embed(&cfg, &layout)?;
            println!("model checksum {:016x}", m.checksum());
        }
        Command::Extract => {
            let f = commands::extract(&cfg, &layout)?;
            println!("extracted {} first-view clips", f.len());
        }
        Command::TrainPose => {
            commands::train_pose(&cfg, &layout)?;
            println!("trained baseline and augmented regressors");
        }
        Command::Eval => {
            let (sync, pose) = commands::eval(&cfg, &layout)?;
            println!(
                "synchronization: held-out balanced accuracy {:.3}, margin ratio {:.2}",
                sync.test_balanced_accuracy,
                sync.margin_ratio()
            );
            print!("{}", commands::format_pose_table(&pose));
        }
        Command::Analyze { what } => {
            let what = match what {
                Which::Cca => Analysis::Cca,
                Which::Pca => Analysis::Pca,
                Which::Transversal => Analysis::Transversal,
            };
            let report = commands::analyze(&cfg, &layout, what)?;
            for t in &report.tables {
                if t.rows.len() <= 12 {
                    print!("{}", t.render());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
