use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reliscope::ingest::Split;
use reliscope::pipeline::{render_summary, Overrides, PipelineConfig, Run};
use reliscope::{Error, Result, SaliencyMethod};

/// Saliency-cluster reliability scoring for binary image classifiers.
#[derive(Parser)]
#[command(name = "reliscope", version)]
struct Cli {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config value.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Saliency method: gradcam, osm or lime.
    #[arg(long, global = true)]
    method: Option<SaliencyMethod>,
    /// Data split: train, val or test.
    #[arg(long, global = true)]
    split: Option<Split>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic planted-error dataset.
    Synth,
    /// Train the classifier and write checkpoints.
    Train {
        /// Continue from checkpoints/last.ckpt.
        #[arg(long)]
        resume: bool,
    },
    /// Compute saliency maps (val and test unless --split is given).
    Explain,
    /// Fit PCA and spectral clustering on validation maps.
    Cluster,
    /// Score clusters on validation data and store the swap decision.
    Reliability,
    /// Apply the stored swap decision to a split (default test).
    Adjust,
    /// Summarize validation and test results.
    Report,
    /// Run every stage in order.
    Run,
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out,
        method: cli.method,
    };
    let cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    let run = Run::open(cfg)?;
    run.log(&format!("command: {}", std::env::args().collect::<Vec<_>>().join(" ")));
    match cli.command {
        Command::Synth => {
            let m = run.synth()?;
            println!("wrote {} images and {}", m.entries.len(), run.layout.synthetic_manifest().display());
        }
        Command::Train { resume } => {
            let metrics = run.train(resume)?;
            for m in metrics {
                println!(
                    "epoch {:>2}  lr {:.0e}  train loss {:.4} acc {:.4}  val loss {:.4} acc {:.4}",
                    m.epoch, m.learning_rate, m.train_loss, m.train_accuracy, m.val_loss, m.val_overall_accuracy
                );
            }
            println!("checkpoints in {}", run.layout.checkpoints().display());
        }
        Command::Explain => {
            let splits = match cli.split {
                Some(s) => vec![s],
                None => vec![Split::Val, Split::Test],
            };
            for s in splits {
                let n = run.explain(s)?;
                println!("{s}: {n} maps");
            }
        }
        Command::Cluster => {
            let m = run.cluster()?;
            println!("{} maps in {} clusters -> {}", m.labels.len(), m.q(), run.layout.cluster_model().display());
        }
        Command::Reliability => {
            let rep = run.reliability()?;
            for c in &rep.clusters {
                println!("cluster {}  n {:>4}  r {:.3}", c.cluster_id, c.total, c.r);
            }
            println!("swap set {:?} at t = {}", rep.swap_set, rep.threshold);
        }
        Command::Adjust => {
            let split = cli.split.unwrap_or(Split::Test);
            let rep = run.adjust(split)?;
            println!(
                "{split}: overall accuracy {:.2}% -> {:.2}% ({:+.2} pp)",
                100.0 * rep.before.overall_accuracy,
                100.0 * rep.after.overall_accuracy,
                rep.delta_overall_pp
            );
        }
        Command::Report => print!("{}", render_summary(&run.report()?)),
        Command::Run => print!("{}", render_summary(&run.run_all()?)),
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RELISCOPE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::invalid(format!("RELISCOPE_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
