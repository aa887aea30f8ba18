use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mimotrack::harness::{self, run_seed, Scenario, ScenarioConfig};
use mimotrack::{Error, Result};

#[derive(Parser)]
#[command(name = "mimotrack", version, about = "Multi-radar localization and tracking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One realization; writes tracks without RMSE.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also dump every radar's observation at this pulse.
        #[arg(long)]
        dump_pulse: Option<usize>,
    },
    /// Monte Carlo runs with RMSE and coverage.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: Option<usize>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Per-radar and combined SNR over the configured grid.
    SnrMap {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Parses and validates a config, printing the resolved form.
    ValidateConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    algo: Option<Algo>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Mrblat,
    Kf,
    Both,
}

fn load(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::from_path(p),
        None => Ok(ScenarioConfig::default()),
    }
}

fn apply(cfg: &mut ScenarioConfig, common: &Common) -> Result<()> {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(algo) = common.algo {
        cfg.algorithms.mrblat = matches!(algo, Algo::Mrblat | Algo::Both);
        cfg.algorithms.kf = matches!(algo, Algo::Kf | Algo::Both);
    }
    cfg.validate()
}

fn write_outputs(out: &Path, cfg: &ScenarioConfig, result: &harness::RunResult) -> Result<()> {
    let model = cfg.sensor_model()?;
    let map = harness::snr_map(&cfg.radars, &model, &cfg.link, &cfg.snr_grid)?;
    harness::write_experiment(out, cfg, result, &map)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, dump_pulse } => {
            let mut cfg = load(common.config.as_deref())?;
            apply(&mut cfg, &common)?;
            cfg.runs = 1;
            eprintln!("simulate: single run, RMSE is not computed");
            let scenario = Scenario::new(cfg.clone())?;
            let result = scenario.execute(1, 1)?;
            write_outputs(&common.out, &cfg, &result)?;
            if let Some(pulse) = dump_pulse {
                if pulse >= scenario.truth.len() {
                    return Err(Error::Config(format!("dump pulse {pulse} beyond track of {} pulses", scenario.truth.len())));
                }
                for (k, obs) in scenario.observe(run_seed(cfg.seed, 0), pulse)?.iter().enumerate() {
                    obs.write_dump(BufWriter::new(File::create(common.out.join(format!("obs_r{k}_p{pulse}.bin")))?))?;
                }
            }
            print_summary(&common.out)
        }
        Command::Montecarlo { common, runs, workers } => {
            let mut cfg = load(common.config.as_deref())?;
            if let Some(runs) = runs {
                cfg.runs = runs;
            }
            apply(&mut cfg, &common)?;
            let result = harness::run_montecarlo(&cfg, workers)?;
            write_outputs(&common.out, &cfg, &result)?;
            print_summary(&common.out)
        }
        Command::SnrMap { config, out } => {
            let cfg = load(config.as_deref())?;
            let model = cfg.sensor_model()?;
            let map = harness::snr_map(&cfg.radars, &model, &cfg.link, &cfg.snr_grid)?;
            std::fs::create_dir_all(&out)?;
            harness::write_snr_map(&out.join("snr_map.csv"), &map)
        }
        Command::ValidateConfig { config } => {
            let cfg = load(config.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }
    }
}

fn print_summary(out: &Path) -> Result<()> {
    print!("{}", std::fs::read_to_string(out.join("summary.json"))?);
    Ok(())
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail("usage", e.to_string()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
