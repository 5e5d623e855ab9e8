use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use topicscan::clustering::TopicId;
use topicscan::pipeline::{run_pipeline, PipelineConfig, RunSummary, Stage, Target};
use topicscan::synth::{generate, SynthParams};
use topicscan::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

/// Discover outcome-predictive topics in an embedded text corpus.
#[derive(Debug, Parser)]
#[command(name = "topicscan", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Recompute stages even when their cache is fresh.
    #[arg(long, global = true)]
    force: bool,
    /// Override the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the worker thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the whole pipeline, or everything up to `--stage`.
    Run {
        #[arg(long)]
        stage: Option<String>,
    },
    /// Embed, reduce and cluster.
    Cluster,
    /// Stepwise topic selection (needs `cluster`).
    Select,
    /// TF-IDF terms and labelling prompts (needs `select`).
    Label {
        /// Topic to write a prompt for, in addition to the selected topics.
        #[arg(long)]
        topic: Option<u32>,
        /// Posts sampled into each prompt.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Questionnaire similarity against a random baseline (needs `select`).
    Similarity,
    /// Candidate pools and accept-list merge (needs `select`).
    Enrich {
        /// Reviewed accept list, one post id per line.
        #[arg(long)]
        accept: Option<PathBuf>,
    },
    /// Mediation path analysis (needs `enrich`).
    Mediate {
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        m: Option<String>,
        #[arg(long)]
        y: Option<String>,
        #[arg(long)]
        n_boot: Option<usize>,
    },
    /// Write a synthetic corpus, outcomes, scales and a config into a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        users: usize,
        #[arg(long, default_value_t = 10_000)]
        posts: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<Error>() {
                Some(Error::Config(_)) => EXIT_CONFIG,
                _ => EXIT_STAGE,
            };
            ExitCode::from(code)
        }
    }
}

fn load_config(global: &GlobalArgs) -> anyhow::Result<PipelineConfig> {
    let path = global
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(threads) = global.threads {
        config.threads = Some(threads);
    }
    Ok(config)
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    if let Command::Synth { out, users, posts } = &cli.command {
        return synth(out, *users, *posts, cli.global.seed.unwrap_or(0));
    }
    let mut config = load_config(&cli.global)?;
    let target = match cli.command {
        Command::Run { stage: None } => Target::All,
        Command::Run { stage: Some(name) } => Target::Through(name.parse::<Stage>()?),
        Command::Cluster => Target::Through(Stage::Cluster),
        Command::Select => Target::Only(Stage::Select),
        Command::Label { topic, n } => {
            if let Some(t) = topic {
                config.target_topic = Some(TopicId(t));
            }
            if let Some(n) = n {
                config.labeling.n_samples = n;
            }
            Target::Only(Stage::Label)
        }
        Command::Similarity => Target::Only(Stage::Similarity),
        Command::Enrich { accept } => {
            if accept.is_some() {
                config.paths.accept_list = accept;
            }
            Target::Only(Stage::Enrich)
        }
        Command::Mediate { x, m, y, n_boot } => {
            let med = &mut config.mediation;
            for (slot, value) in [(&mut med.x, x), (&mut med.m, m), (&mut med.y, y)] {
                if let Some(v) = value {
                    *slot = v;
                }
            }
            if let Some(n) = n_boot {
                med.n_boot = n;
            }
            Target::Only(Stage::Mediate)
        }
        Command::Synth { .. } => unreachable!("handled above"),
    };
    let summary = run_pipeline(&config, target, cli.global.force)?;
    report(&summary, &config.paths.output_dir);
    Ok(())
}

fn report(summary: &RunSummary, out: &Path) {
    let names = |stages: &[Stage]| {
        if stages.is_empty() {
            "-".to_string()
        } else {
            stages.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
        }
    };
    println!("recomputed: {}", names(&summary.recomputed));
    println!("cached:     {}", names(&summary.reused));
    println!("output:     {}", out.display());
}

fn synth(out: &Path, users: usize, posts: usize, seed: u64) -> anyhow::Result<()> {
    let data = generate(&SynthParams {
        n_users: users,
        n_posts: posts,
        seed,
        ..Default::default()
    })?;
    data.write(out)?;
    let scales: Vec<String> = data.scales.iter().map(|s| format!("scales/{}.json", s.name)).collect();
    let config = serde_json::json!({
        "_notes": "generated by `topicscan synth`; paths are relative to this file",
        "seed": seed,
        "paths": {
            "corpus": "corpus.jsonl",
            "outcomes": "outcomes.csv",
            "output_dir": "out",
            "scales": scales,
        },
    });
    let path = out.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config)? + "\n")?;
    println!("wrote {} posts for {} users to {}", data.posts.len(), data.users.len(), out.display());
    Ok(())
}
