use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nsgrl_cli::config::{self, AgentKind};
use nsgrl_cli::error::CliError;
use nsgrl_cli::manifest::Invocation;
use nsgrl_cli::runner;

#[derive(Parser)]
#[command(name = "nsgrl", version, about = "Train, evaluate and explain PRB allocation agents")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single seed; replaces `run.seeds` for training commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to `run.output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `key.path=value` override, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent for every configured seed.
    Train {
        #[arg(long)]
        agent: Option<AgentKind>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Also write per-step logs (graph agents only).
        #[arg(long)]
        steps: bool,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Accuracy across the configured noise levels.
    Robustness {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Train and evaluate at each configured chunk size.
    Scalability {
        #[arg(long)]
        agent: Option<AgentKind>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Explain the greedy action of a graph policy on one state.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        /// snr_db,traffic,residual,gap
        #[arg(long, value_parser = parse_state, conflicts_with = "sample")]
        state: Option<[f64; 4]>,
        /// Use a freshly reset environment state.
        #[arg(long)]
        sample: bool,
    },
    /// Train and compare several agents on the same seeds.
    Bench {
        #[arg(long, value_delimiter = ',')]
        agents: Option<Vec<AgentKind>>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Re-run a recorded manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn parse_state(s: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"))).collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected 4 comma-separated values, got {}", v.len()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    let mut overrides = g.overrides;
    let training = matches!(cli.command, Command::Train { .. } | Command::Scalability { .. } | Command::Bench { .. });
    if let (true, Some(seed)) = (training, g.seed) {
        overrides.push(format!("run.seeds=[{seed}]"));
    }
    match &cli.command {
        Command::Train { agent, episodes, .. } | Command::Scalability { agent, episodes } => {
            if let Some(a) = agent {
                overrides.push(format!("run.agent=\"{a}\""));
            }
            if let Some(n) = episodes {
                overrides.push(format!("run.episodes={n}"));
            }
        }
        Command::Bench { episodes: Some(n), .. } => overrides.push(format!("run.episodes={n}")),
        _ => {}
    }
    if let Command::Replay { manifest } = &cli.command {
        let out = g.out.ok_or_else(|| CliError::Config("replay requires --out".into()))?;
        return runner::replay(manifest, &out);
    }

    let cfg = config::load(g.config.as_deref(), &overrides)?;
    let seed = if training { None } else { g.seed };
    let invocation = match cli.command {
        Command::Train { steps, .. } => Invocation::Train { agent: cfg.run.agent, record_steps: steps },
        Command::Eval { checkpoint, noise, trials } => {
            Invocation::Eval { checkpoint, seed, noise, trials: trials.unwrap_or(cfg.run.eval_trials) }
        }
        Command::Robustness { checkpoint, trials } => {
            Invocation::Robustness { checkpoint, seed, trials: trials.unwrap_or(cfg.run.eval_trials) }
        }
        Command::Scalability { .. } => Invocation::Scalability,
        Command::Explain { checkpoint, state, sample } => {
            let state = match (state, sample) {
                (Some(v), _) => Some(v),
                (None, true) => None,
                (None, false) => return Err(CliError::Config("explain needs --state or --sample".into())),
            };
            Invocation::Explain { checkpoint, seed, state }
        }
        Command::Bench { agents, .. } => Invocation::Bench { agents: agents.unwrap_or_else(|| AgentKind::ALL.to_vec()) },
        Command::Replay { .. } => unreachable!("handled above"),
    };
    let out = runner::output_dir(&cfg, g.out);
    runner::execute(&invocation, &cfg, &out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
