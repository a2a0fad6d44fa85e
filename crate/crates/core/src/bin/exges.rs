use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use exges_core::pipeline::{run_all, run_stage, RunConfig, Stage, StageOutcome};

#[derive(Parser)]
#[command(name = "exges", version, about = "Retrieval-enhanced gesture synthesis pipeline")]
struct Cli {
    /// TOML config file; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dotted config override, e.g. `retrieval.steps=2000`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenData,
    /// Segment the training split into the motion base.
    BuildBase,
    /// Train the audio-motion retrieval encoders and embed the base.
    TrainRetrieval,
    /// Train the conditional denoiser.
    TrainDiffusion,
    /// Retrieve keyframes and sample gestures for the test windows.
    Synthesize {
        /// Synthesize windows of this corpus clip only.
        #[arg(long)]
        clip: Option<u64>,
        /// Conditions, e.g. `retrieval,frames:0..3`.
        #[arg(long)]
        control: Option<String>,
    },
    /// Compute metrics for every synthesized condition.
    Evaluate,
    /// Render loss curves, similarity heatmap and error curves.
    Report,
    /// Run every stage, reusing completed ones.
    All,
    /// Print the effective config and its hash.
    Config,
}

fn load_config(cli: &Cli) -> exges_core::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Command::Synthesize { clip, control } = &cli.command {
        if let Some(id) = clip {
            cfg.apply_override(&format!("synthesis.clip={id}"))?;
        }
        if let Some(spec) = control {
            cfg.apply_override(&format!("synthesis.control=\"{spec}\""))?;
        }
    }
    Ok(cfg)
}

fn print_outcome(o: &StageOutcome) {
    println!("{:<16} {} ({:.1} s, {} files)", o.stage.name(), o.dir.display(), o.manifest.elapsed_s, o.manifest.artifacts.len());
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::GenData => Stage::GenData,
            Command::BuildBase => Stage::BuildBase,
            Command::TrainRetrieval => Stage::TrainRetrieval,
            Command::TrainDiffusion => Stage::TrainDiffusion,
            Command::Synthesize { .. } => Stage::Synthesize,
            Command::Evaluate => Stage::Evaluate,
            Command::Report => Stage::Report,
            Command::All | Command::Config => return None,
        })
    }

    fn name(&self) -> &'static str {
        match self {
            Command::All => "all",
            Command::Config => "config",
            other => other.stage().expect("stage command").name(),
        }
    }
}

fn run(cli: &Cli) -> exges_core::Result<()> {
    let cfg = load_config(cli)?;
    match (&cli.command, cli.command.stage()) {
        (_, Some(stage)) => print_outcome(&run_stage(&cfg, stage)?),
        (Command::All, _) => {
            let outcomes = run_all(&cfg, |s, cached| {
                if !cached {
                    eprintln!("running {}", s.name());
                }
            })?;
            outcomes.iter().for_each(print_outcome);
        }
        _ => {
            print!("{}", cfg.to_toml()?);
            println!("# hash {}", cfg.hash()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code() as u8;
            eprintln!("error: {:#}", anyhow::Error::new(e).context(format!("exges {} failed", cli.command.name())));
            ExitCode::from(code)
        }
    }
}
