use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use flowlearn::embed::EmbedderKind;
use flowlearn::pipeline::{self, PipelineConfig, StageOutcome};

#[derive(Parser, Debug)]
#[command(name = "flowlearn", version, about = "Representation learning and kNN anomaly scoring over per-user flow weeks")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML pipeline config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    workdir: Option<PathBuf>,

    /// pca, ae or as2s.
    #[arg(long, global = true)]
    embedder: Option<String>,

    /// Abort on the first malformed input line.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate synthetic flows and labels.
    Synth,
    /// Parse input records into user-week examples.
    Extract,
    /// Segment users into behaviour clusters.
    Cluster,
    /// Fit one embedder per cluster on the training users.
    Train,
    /// kNN-score the test weeks.
    Score,
    /// PR curves and PR-AUC, pooled and per cluster.
    Eval,
    /// Run every stage for all embedders and print the summary.
    Repro,
    /// Print the effective config as TOML.
    Config,
}

fn load(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = &cli.workdir {
        cfg.workdir = w.clone();
    }
    if let Some(e) = &cli.embedder {
        cfg.embed.embedder = EmbedderKind::parse(e)?;
    }
    if cli.strict {
        cfg.data.strict = true;
    }
    Ok(cfg)
}

fn report(stage: &str, outcome: StageOutcome) {
    match outcome {
        StageOutcome::Ran => println!("{stage}: done"),
        StageOutcome::UpToDate => println!("{stage}: up to date"),
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load(cli)?;
    let kind = cfg.embed.embedder;
    match cli.command {
        Command::Synth => report("synth", pipeline::cmd_synth(&cfg)?),
        Command::Extract => report("extract", pipeline::cmd_extract(&cfg)?),
        Command::Cluster => report("cluster", pipeline::cmd_cluster(&cfg)?),
        Command::Train => report(&format!("train {kind}"), pipeline::cmd_train(&cfg)?),
        Command::Score => report(&format!("score {kind}"), pipeline::cmd_score(&cfg)?),
        Command::Eval => {
            report(&format!("eval {kind}"), pipeline::cmd_eval(&cfg)?);
            let path = cfg.workdir.join(pipeline::eval_dir(kind)).join("summary.json");
            let s: pipeline::EvalSummary = serde_json::from_reader(std::fs::File::open(&path)?)
                .with_context(|| format!("reading {}", path.display()))?;
            match s.pooled.pr_auc {
                Some(a) => println!("{kind} PR-AUC {a:.4} ({} anomalies in {} weeks)", s.pooled.positives, s.pooled.total),
                None => println!("{kind} PR-AUC undefined: no anomalous test weeks"),
            }
        }
        Command::Repro => {
            let summary = pipeline::cmd_repro(&cfg)?;
            print!("{}", summary.table());
            println!("config hash {}", summary.config_hash);
        }
        Command::Config => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
