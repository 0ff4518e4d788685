use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use moment_cli::config::ExperimentConfig;
use moment_cli::{parse_config, pipeline, presets, ConfigError, RunError, Stage};

#[derive(Parser)]
#[command(name = "moments", version, about = "Moment-reduction experiments for large agent systems")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: out/<name>].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shrinks agent counts, grids and (if enabled) horizons, in (0, 1].
    #[arg(long, global = true, default_value_t = 1.0)]
    scale: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the agents and record true moments.
    Simulate,
    /// Fit the reduced models.
    Fit,
    /// Integrate the reduced models.
    Flow,
    /// Error bounds against the simulation.
    Bound,
    /// TV-regularized density reconstructions.
    Reconstruct,
    /// Mass bounds on regions.
    Massbounds,
    /// Best-approximation checks.
    Convergence,
    /// Every configured stage.
    Run,
    /// Run a figure preset (fig1..fig9).
    Reproduce { figure: String },
    /// Validate a config and print it back in canonical form.
    Check,
    /// List or print presets.
    Presets { name: Option<String> },
}

fn load(cli: &Cli, preset: Option<&str>) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match (preset, &cli.config) {
        (Some(p), _) => presets::load(p)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::new("--config", "a readable UTF-8 file", format!("{}: {e}", path.display())))?;
            parse_config(&text)?
        }
        (None, None) => return Err(ConfigError::new("--config", "a config path", "none")),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.scaled(cli.scale)
}

fn execute(cli: &Cli) -> Result<i32, RunError> {
    let (stages, preset): (Vec<Stage>, Option<&str>) = match &cli.command {
        Command::Simulate => (vec![Stage::Simulate], None),
        Command::Fit => (vec![Stage::Fit], None),
        Command::Flow => (vec![Stage::Flow], None),
        Command::Bound => (vec![Stage::Bound], None),
        Command::Reconstruct => (vec![Stage::Reconstruct], None),
        Command::Massbounds => (vec![Stage::Massbounds], None),
        Command::Convergence => (vec![Stage::Convergence], None),
        Command::Run => (vec![], None),
        Command::Reproduce { figure } => (vec![], Some(figure.as_str())),
        Command::Check => {
            print!("{}", moment_cli::config::to_toml(&load(cli, None)?));
            return Ok(0);
        }
        Command::Presets { name: None } => {
            for n in presets::NAMES {
                println!("{n}");
            }
            return Ok(0);
        }
        Command::Presets { name: Some(n) } => {
            let text = presets::text(n).ok_or_else(|| {
                ConfigError::new("<preset>", format!("one of {}", presets::NAMES.join(", ")), format!("{n:?}"))
            })?;
            print!("{text}");
            return Ok(0);
        }
    };
    let cfg = load(cli, preset)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    let manifest = pipeline::run(&cfg, &stages, &out, cli.scale)?;
    for s in &manifest.stages {
        eprintln!("{:<12} {:?} {:>8.2}s {}", s.stage, s.status, s.wall_time_s, s.diagnostics.join("; "));
    }
    eprintln!("outputs in {}", out.display());
    Ok(manifest.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
