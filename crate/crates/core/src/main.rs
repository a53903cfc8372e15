use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use storyrewrite::config::PipelineConfig;
use storyrewrite::pipeline::{self, Method, Run};
use storyrewrite::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "storyrewrite", version, about = "Counterfactual story rewriting: sketch a skeleton, then customize it")]
struct Cli {
    /// TOML (or JSON) pipeline config.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set tagger.lambda=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary, LCS skeletons and augmented skeletons.
    Prepare,
    /// Train the skeleton tagger.
    TrainSketch,
    /// Train the ending generator.
    TrainCustomize,
    /// Write one counterfactual ending per test pair.
    Infer {
        /// sc, lcs, copy or reference.
        #[arg(long, default_value = "sc")]
        method: String,
    },
    /// Score the tagger's labels on the test split.
    Eval,
    /// Compare generation files with automatic metrics.
    Report {
        /// Generations to compare, as NAME=PATH or PATH. The first one is the
        /// t-test baseline. Defaults to every generations file of the run.
        #[arg(long = "run", value_name = "NAME=PATH")]
        runs: Vec<String>,
    },
    /// Human evaluation sheets.
    Sheets {
        #[command(subcommand)]
        command: SheetsCommand,
    },
}

#[derive(Subcommand)]
enum SheetsCommand {
    /// Write blind annotation sheets and the un-blinding key.
    Make {
        #[arg(long = "run", value_name = "NAME=PATH")]
        runs: Vec<String>,
        /// Number of test items to sample.
        #[arg(long, default_value_t = 100)]
        items: usize,
        #[arg(long, default_value_t = 3)]
        annotators: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average filled sheets per method.
    Aggregate {
        #[arg(long)]
        key: PathBuf,
        #[arg(required = true)]
        sheets: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 3,
        ErrorKind::Io => 4,
        ErrorKind::Data => 5,
        ErrorKind::Model => 6,
        ErrorKind::Invalid => 7,
    }
}

fn load_run(cli: &Cli) -> Result<Run> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    if !path.exists() {
        return Err(Error::Config(format!("config {} does not exist", path.display())));
    }
    let mut config = PipelineConfig::load(path)?;
    for s in &cli.overrides {
        config.set(s)?;
    }
    Run::new(config)
}

fn parse_runs(specs: &[String]) -> Vec<(String, PathBuf)> {
    specs
        .iter()
        .map(|s| match s.split_once('=') {
            Some((name, path)) => (name.to_string(), PathBuf::from(path)),
            None => {
                let p = PathBuf::from(s);
                let stem = p.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default();
                let name = stem.strip_prefix("generations-").unwrap_or(&stem).to_string();
                (name, p)
            }
        })
        .collect()
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare => {
            let run = load_run(cli)?;
            let report = pipeline::cmd_prepare(&run)?;
            print!("{}", report.summary());
            println!("run directory: {}", show(&run.dir));
        }
        Command::TrainSketch => {
            let run = load_run(cli)?;
            let r = pipeline::cmd_train_sketch(&run)?;
            for e in &r.epochs {
                match &e.dev {
                    Some(m) => println!("epoch {}: loss {:.4}, dev CF1 {:.4}", e.epoch, e.train_loss, m.cf1),
                    None => println!("epoch {}: loss {:.4}", e.epoch, e.train_loss),
                }
            }
            println!("kept epoch {}", r.best_epoch);
        }
        Command::TrainCustomize => {
            let run = load_run(cli)?;
            let r = pipeline::cmd_train_customize(&run)?;
            for e in &r.epochs {
                match e.dev_loss {
                    Some(d) => println!("epoch {}: loss {:.4}, dev loss {:.4}", e.epoch, e.train_loss, d),
                    None => println!("epoch {}: loss {:.4}", e.epoch, e.train_loss),
                }
            }
            println!("kept epoch {}", r.best_epoch);
        }
        Command::Infer { method } => {
            let run = load_run(cli)?;
            let method: Method = method.parse()?;
            println!("{}", show(&pipeline::cmd_infer(&run, method)?));
        }
        Command::Eval => {
            let run = load_run(cli)?;
            print!("{}", pipeline::cmd_eval(&run)?.table());
        }
        Command::Report { runs } => {
            let run = load_run(cli)?;
            print!("{}", pipeline::cmd_report(&run, &parse_runs(runs))?.table());
        }
        Command::Sheets { command } => match command {
            SheetsCommand::Make {
                runs,
                items,
                annotators,
                out,
            } => {
                let run = load_run(cli)?;
                let (dir, sheets) =
                    pipeline::cmd_sheets_make(&run, &parse_runs(runs), *items, *annotators, out.as_deref())?;
                println!("{} sheets in {}", sheets.sheets.len(), show(&dir));
            }
            SheetsCommand::Aggregate { key, sheets, out } => {
                let means = pipeline::cmd_sheets_aggregate(key, sheets, out.as_deref())?;
                for (m, h) in &means {
                    println!(
                        "{m}: PRE {:.3} CF {:.3} PLOT {:.3} avg {:.3} ({} items)",
                        h.pre, h.cf, h.plot, h.avg, h.items
                    );
                }
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
