//! `emoe`: one executable for the whole pipeline.
//!
//! generate → label → anchors → train → gradcheck → simulate → report, plus
//! ablate. Each command writes its artifacts atomically and prints a one-line
//! summary. Failures print a single JSON object on stderr and exit 1
//! (runtime) or 2 (usage, bad config, missing prerequisite).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::{Config, CONFIG_ENV};

#[derive(Parser, Debug)]
#[command(name = "emoe", version, about = "Scene-routed mixture-of-experts motion planner pipeline")]
struct Cli {
    /// Pipeline config (TOML). Defaults apply when absent.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate labeled synthetic training and evaluation scenes.
    Generate {
        #[arg(long)]
        seed: Option<u64>,
        /// Training scenes per scenario type.
        #[arg(long)]
        per_type: Option<usize>,
        /// Evaluation scenes per scenario type.
        #[arg(long)]
        eval_per_type: Option<usize>,
    },
    /// Assign rule-derived scenario labels.
    Label {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster ground-truth endpoints into the per-type anchor bank.
    Anchors {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the planner on the labeled dataset.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Train and evaluate ablated variants next to the full model.
    Ablate {
        /// Component to switch off; repeat for several. Default: each in turn.
        #[arg(long = "switch", value_enum)]
        switches: Vec<Switch>,
    },
    /// Finite-difference check of every parameter gradient on a small network.
    Gradcheck {
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Closed-loop simulation on the evaluation scenes.
    Simulate {
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        replan_hz: Option<f64>,
        #[arg(long)]
        per_type: Option<usize>,
        #[arg(long, value_enum, default_value_t = PlannerKind::Net)]
        planner: PlannerKind,
    },
    /// Per-scenario score table from the last simulation.
    Report {
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    Emoe,
    Ssq,
    Iloss,
}

impl Switch {
    fn name(self) -> &'static str {
        match self {
            Switch::Emoe => "emoe",
            Switch::Ssq => "ssq",
            Switch::Iloss => "iloss",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PlannerKind {
    Net,
    Replay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Svg,
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<Config> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let (cfg, unknown) = Config::load(path)?;
    if !unknown.is_empty() {
        eprintln!("warning: ignoring unknown config keys: {}", unknown.join(", "));
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<String> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(commands::usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = load_config(cli.config.as_ref())?;
    match cli.command {
        Command::Generate {
            seed,
            per_type,
            eval_per_type,
        } => {
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.generate.per_type = per_type.unwrap_or(cfg.generate.per_type);
            cfg.generate.eval_per_type = eval_per_type.unwrap_or(cfg.generate.eval_per_type);
            commands::generate(&cfg)
        }
        Command::Label { input, out } => {
            let input = input.unwrap_or_else(|| cfg.paths.dataset.clone());
            let out = out.unwrap_or_else(|| cfg.paths.labeled.clone());
            commands::label(&input, &out)
        }
        Command::Anchors { k, seed } => {
            cfg.network.anchors = k.unwrap_or(cfg.network.anchors);
            cfg.seed = seed.unwrap_or(cfg.seed);
            commands::anchors(&cfg)
        }
        Command::Train { epochs, max_steps } => {
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.max_steps = max_steps.or(cfg.train.max_steps);
            commands::train(&cfg)
        }
        Command::Ablate { switches } => {
            let names: Vec<&str> = switches.iter().map(|s| s.name()).collect();
            commands::ablate(&cfg, &names)
        }
        Command::Gradcheck { tol, seed } => {
            cfg.gradcheck.tol = tol.unwrap_or(cfg.gradcheck.tol);
            cfg.gradcheck.seed = seed.unwrap_or(cfg.gradcheck.seed);
            commands::gradcheck(&cfg)
        }
        Command::Simulate {
            horizon,
            replan_hz,
            per_type,
            planner,
        } => {
            cfg.sim.horizon_s = horizon.unwrap_or(cfg.sim.horizon_s);
            cfg.sim.replan_hz = replan_hz.unwrap_or(cfg.sim.replan_hz);
            cfg.sim.scenes_per_type = per_type.unwrap_or(cfg.sim.scenes_per_type);
            commands::simulate(&cfg, planner == PlannerKind::Replay)
        }
        Command::Report { format } => commands::report(&cfg, format == Format::Svg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version go to stdout with exit 0.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = commands::exit_code(&e);
            eprintln!("{}", commands::error_json(&e, code));
            ExitCode::from(code)
        }
    }
}
