mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::commands::Results;
use crate::config::{BrwConfig, GapConfig, OccupancyConfig, PlanConfig, RenewalConfig, VanishConfig};
use crate::error::CliError;
use crate::output::{sha256_hex, Outputs, RunManifest};

#[derive(Parser)]
#[command(
    name = "nestocc",
    version,
    about = "Nested occupancy and branching random walk experiments"
)]
struct Cli {
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the nested scheme and its Y decomposition.
    Occupancy,
    /// Count branching random walk positions by generation.
    Brw,
    /// Tabulate U, G and the V ladder and run the bound checks.
    Renewal,
    /// Occupancy central limit experiment.
    Clt21,
    /// Shot-noise central limit experiment.
    Clt32,
    /// Weak law of large numbers experiment.
    Wlln,
    /// Second moments of a remainder term.
    Vanish,
    /// Gap bound terms over a list of n.
    Gap,
    /// Run the acceptance criteria.
    Acceptance {
        /// Comma-separated criterion ids.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Occupancy => "occupancy",
            Command::Brw => "brw",
            Command::Renewal => "renewal",
            Command::Clt21 => "clt21",
            Command::Clt32 => "clt32",
            Command::Wlln => "wlln",
            Command::Vanish => "vanish",
            Command::Gap => "gap",
            Command::Acceptance { .. } => "acceptance",
        }
    }
}

struct Loaded<T> {
    cfg: T,
    seed: Option<u64>,
}

fn load<T: DeserializeOwned>(path: Option<&Path>) -> Result<T, CliError> {
    let path = path.ok_or_else(|| CliError::Usage("this subcommand needs --config".into()))?;
    config::load(path)
}

/// Stores the effective config and returns its hash.
fn store<T: Serialize>(cfg: &T, out: &mut Outputs) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(cfg).expect("configs serialize");
    s.push('\n');
    out.write("config.json", s.as_bytes())?;
    Ok(sha256_hex(s.as_bytes()))
}

fn prepare<T: DeserializeOwned>(
    cli: &Cli,
    schema: impl Fn(&T) -> u32,
    seed: impl Fn(&mut T) -> &mut u64,
) -> Result<Loaded<T>, CliError> {
    let mut cfg: T = load(cli.config.as_deref())?;
    config::check_schema(schema(&cfg))?;
    if let Some(s) = cli.seed {
        *seed(&mut cfg) = s;
    }
    let s = *seed(&mut cfg);
    Ok(Loaded { cfg, seed: Some(s) })
}

fn execute(cli: &Cli, out: &mut Outputs) -> Result<(Results, Option<String>, Option<u64>), CliError> {
    macro_rules! run {
        ($ty:ty, $seed:expr, $f:path) => {{
            let l: Loaded<$ty> = prepare(cli, |c: &$ty| c.schema, $seed)?;
            let hash = store(&l.cfg, out)?;
            let r = $f(&l.cfg, out)?;
            (r, Some(hash), l.seed)
        }};
    }
    Ok(match &cli.command {
        Command::Occupancy => run!(
            OccupancyConfig,
            |c: &mut OccupancyConfig| &mut c.seed,
            commands::occupancy
        ),
        Command::Brw => run!(BrwConfig, |c: &mut BrwConfig| &mut c.seed, commands::brw),
        Command::Renewal => {
            let cfg: RenewalConfig = load(cli.config.as_deref())?;
            config::check_schema(cfg.schema)?;
            let hash = store(&cfg, out)?;
            (commands::renewal(&cfg, out)?, Some(hash), None)
        }
        Command::Clt21 => run!(PlanConfig, |c: &mut PlanConfig| &mut c.plan.seed, commands::clt21),
        Command::Clt32 => run!(PlanConfig, |c: &mut PlanConfig| &mut c.plan.seed, commands::clt32),
        Command::Wlln => run!(PlanConfig, |c: &mut PlanConfig| &mut c.plan.seed, commands::wlln),
        Command::Vanish => run!(VanishConfig, |c: &mut VanishConfig| &mut c.plan.seed, commands::vanish),
        Command::Gap => {
            let cfg: GapConfig = load(cli.config.as_deref())?;
            config::check_schema(cfg.schema)?;
            let hash = store(&cfg, out)?;
            (commands::gap(&cfg, out)?, Some(hash), None)
        }
        Command::Acceptance { only } => (commands::run_acceptance(only, out)?, None, None),
    })
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let started = now();
    let mut out = Outputs::new(&cli.out)?;
    let (results, config_hash, seed) = execute(cli, &mut out)?;
    let passed = results.iter().all(|(_, ok)| *ok);
    for (name, ok) in &results {
        if !ok {
            eprintln!("failed: {name}");
        }
    }
    let manifest = RunManifest {
        tool: "nestocc".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: cli.command.name().into(),
        config_hash,
        seed,
        started,
        finished: now(),
        outputs: out.written().to_vec(),
        results,
        passed,
    };
    out.json("manifest.json", &manifest)?;
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
