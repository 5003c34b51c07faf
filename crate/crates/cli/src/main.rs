use std::path::PathBuf;
use std::process::ExitCode;

use axialnet::explain::CamMethod;
use axialnet_cli::commands::{
    cmd_build_gt, cmd_evaluate, cmd_explain, cmd_parse_reports, cmd_run_experiment, cmd_segment,
    cmd_synth, cmd_train,
};
use axialnet_cli::error::EXIT_USAGE;
use axialnet_cli::{CliError, ExperimentConfig, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "axialnet",
    version,
    about = "Phantom CT pipeline: labels, masks, heads, explanations, metrics"
)]
struct Cli {
    /// JSON experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Hirescam,
    Gradcam,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the phantom corpus, reports and split manifest.
    Synth,
    /// Label every report.
    ParseReports,
    /// Segment lungs and mediastinum with QC fallback.
    Segment,
    /// Build allowed-region ground truth into the cache.
    BuildGt,
    /// Train heads.
    Train {
        /// Train only this mask weight instead of every configured one.
        #[arg(long)]
        mask_weight: Option<f64>,
    },
    /// Export heat maps and top slices for one scan and abnormality.
    Explain {
        #[arg(long)]
        scan: String,
        #[arg(long)]
        abnormality: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "hirescam")]
        method: Method,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// OrganIoU, AUROC and per-slice summaries of checkpoints.
    Evaluate {
        /// Checkpoint headers; defaults to the configured models.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
    /// Every stage, comparing models with and without the mask loss.
    RunExperiment,
    /// Print the full default configuration, or write it to PATH.
    InitConfig { path: Option<PathBuf> },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Command::InitConfig { path } = &cli.command {
        let json = ExperimentConfig::default().to_json() + "\n";
        return match path {
            Some(p) => std::fs::write(p, json).map_err(|e| CliError::io(p, e)),
            None => {
                print!("{json}");
                Ok(())
            }
        };
    }
    let cfg = load_config(&cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Synth => {
            let s = cmd_synth(&cfg)?;
            println!(
                "wrote {} scans (train {}, val {}, test {})",
                s.n_scans, s.train, s.val, s.test
            );
            Ok(())
        }
        Command::ParseReports => {
            let records = cmd_parse_reports(&cfg)?;
            let pairs: usize = records.iter().map(|r| r.pairs.len()).sum();
            println!(
                "labeled {} reports, {pairs} (abnormality, location) pairs",
                records.len()
            );
            Ok(())
        }
        Command::Segment => {
            let lines = cmd_segment(&cfg)?;
            let failed = lines.iter().filter(|l| l.heuristic).count();
            println!(
                "segmented {} scans, {failed} fell back to heuristic masks",
                lines.len()
            );
            Ok(())
        }
        Command::BuildGt => {
            println!("ground truth ready for {} scans", cmd_build_gt(&cfg)?);
            Ok(())
        }
        Command::Train { mask_weight } => {
            for m in cmd_train(&cfg, mask_weight)? {
                let last = m.history.last().expect("epoch 0 is always recorded");
                println!(
                    "{} (total loss {:.6})",
                    m.checkpoint.display(),
                    last.total_loss
                );
            }
            Ok(())
        }
        Command::Explain {
            scan,
            abnormality,
            checkpoint,
            method,
            top_k,
        } => {
            let method = match method {
                Method::Hirescam => CamMethod::HiResCam,
                Method::Gradcam => CamMethod::GradCam,
            };
            let out = cmd_explain(
                &cfg,
                &scan,
                &abnormality,
                &checkpoint,
                method,
                top_k.unwrap_or(cfg.eval.top_k),
            )?;
            println!("{}", out.dir.display());
            println!("top slices: {:?}", out.top_slices);
            Ok(())
        }
        Command::Evaluate { checkpoint } => {
            for e in cmd_evaluate(&cfg, &checkpoint)? {
                println!(
                    "{}: Grad-CAM OrganIoU {:.4}, HiResCAM OrganIoU {:.4}, median AUROC {}",
                    e.model,
                    e.gradcam.mean,
                    e.hirescam.mean,
                    e.auroc
                        .median
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_else(|| "n/a".into())
                );
            }
            Ok(())
        }
        Command::RunExperiment => {
            let report = cmd_run_experiment(&cfg)?;
            print!("{}", report.table_markdown());
            Ok(())
        }
        Command::InitConfig { .. } => unreachable!("handled above"),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(EXIT_USAGE as u8),
            };
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
