use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wpod_cli::commands::{self, EVAL_SEED_OFFSET};
use wpod_cli::{comparison_table, CliError, DataSource};
use wpod_core::config::AppConfig;

#[derive(Parser)]
#[command(name = "wpod", version, about = "Edge-augmented warped planar object detection")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads. Everything runs on one thread; other values are
    /// accepted for compatibility and ignored.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct DataArgs {
    /// Annotation file (image paths relative to it).
    #[arg(long, conflicts_with = "synthetic")]
    annotations: Option<PathBuf>,
    /// Number of generated scenes to use instead of files.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Seed of the first generated scene.
    #[arg(long)]
    synth_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a CSV loss log.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Print every n-th loss line (0 = silent).
        #[arg(long, default_value_t = 50)]
        print_every: usize,
    },
    /// Mean qIoU of one or more checkpoints; two or more give a comparison.
    Eval {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        nms_threshold: Option<f64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Detect plates; write quads, an overlay and rectified crops.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Finite-difference check of the network gradients on a 32x32 model.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 1e-5)]
        perturbation: f64,
    },
    /// Write Sobel x, y and magnitude maps as PGM images.
    Edges {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        presmooth: bool,
        /// Also dump raw responses as text.
        #[arg(long)]
        raw: bool,
    },
    /// Write synthetic scenes and their annotation file.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
    },
}

fn load_config(path: Option<&Path>) -> Result<AppConfig, CliError> {
    match path {
        Some(p) => AppConfig::load(p).map_err(|e| CliError::Usage(e.to_string())),
        None => Ok(AppConfig::default()),
    }
}

fn data_source(d: &DataArgs, default_count: usize, default_seed: u64) -> DataSource {
    match &d.annotations {
        Some(p) => DataSource::Annotations(p.clone()),
        None => DataSource::Synthetic {
            count: d.synthetic.unwrap_or(default_count),
            first_seed: d.synth_seed.unwrap_or(default_seed),
        },
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(cli.common.config.as_deref())?;
    let seed = cli.common.seed;
    if cli.common.threads != 1 {
        eprintln!("note: running single-threaded; --threads {} ignored", cli.common.threads);
    }
    match cli.command {
        Command::Train {
            data,
            out,
            iterations,
            log,
            print_every,
        } => {
            let args = commands::TrainArgs {
                data: data_source(&data, cfg.train.synthetic_scenes, 0),
                config: cfg,
                out,
                iterations,
                seed,
                log,
            };
            let outcome = commands::cmd_train(&args, |r| {
                if print_every > 0 && r.iter % print_every == 0 {
                    println!("{}", r.to_csv());
                }
            })?;
            println!("loss log: {}", outcome.log_path.display());
            for c in &outcome.checkpoints {
                println!("checkpoint: {}", c.display());
            }
        }
        Command::Eval {
            checkpoints,
            data,
            threshold,
            nms_threshold,
            csv,
        } => {
            let args = commands::EvalArgs {
                checkpoints,
                data: data_source(&data, 50, EVAL_SEED_OFFSET),
                synth: cfg.synth.clone(),
                threshold,
                nms_threshold,
                csv,
            };
            let outcome = commands::cmd_eval(&args)?;
            for (label, r) in &outcome.reports {
                println!("== {label}\n{}", r.summary());
                if r.skipped > 0 {
                    eprintln!("warning: {} image(s) could not be read and were skipped", r.skipped);
                }
            }
            if outcome.reports.len() > 1 {
                let rows: Vec<(String, f64)> = outcome.reports.iter().map(|(l, r)| (l.clone(), r.mean_qiou)).collect();
                print!("\n{}", comparison_table(&rows));
            }
        }
        Command::Detect {
            checkpoint,
            image,
            out_dir,
            threshold,
        } => {
            let outcome = commands::cmd_detect(&commands::DetectArgs {
                checkpoint,
                image,
                out_dir,
                threshold,
            })?;
            println!("{} detection(s)", outcome.detections.len());
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Gradcheck { samples, perturbation } => {
            let outcome = commands::cmd_gradcheck(&commands::GradCheckArgs {
                config: cfg,
                seed,
                samples_per_param: samples,
                perturbation,
                corrupt_gradients: None,
            })?;
            print!("{}", outcome.table());
            println!(
                "max relative error: trainable {:.3e}, frozen {:.3e}",
                outcome.max_trainable_error, outcome.max_frozen_error
            );
            if !outcome.passed {
                return Err(CliError::Validation(format!(
                    "gradient check failed (tolerance {:e})",
                    commands::GRADCHECK_TOLERANCE
                )));
            }
            println!("gradient check passed");
        }
        Command::Edges {
            image,
            out_dir,
            presmooth,
            raw,
        } => {
            let outcome = commands::cmd_edges(&image, &out_dir, presmooth, raw)?;
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Synth {
            count,
            out_dir,
            first_seed,
        } => {
            let ann = commands::cmd_synth(&cfg.synth, count, first_seed, &out_dir)?;
            println!("wrote {count} scene(s) and {}", ann.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
