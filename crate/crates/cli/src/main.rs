use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dagconv::experiment::{
    self, gen_data, parse_config_with_overrides, run_experiment, run_sweep, write_sweep_csv,
    ModelKind,
};
use dagconv::{transitive_closure, Error};

/// Worker-pool size override for trial and batch parallelism.
const WORKERS_ENV: &str = "DAGCONV_WORKERS";

#[derive(Parser)]
#[command(name = "dagconv", version, about = "Convolutional learning on directed acyclic graphs")]
struct Cli {
    /// Override a config key, e.g. `--set train.epochs=20` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of an experiment and write the results bundle.
    Run {
        config: PathBuf,
        /// Results directory (defaults to the config's `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run an experiment over values of one config key.
    Sweep {
        config: PathBuf,
        /// Dotted config key to vary, e.g. `data.noise`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated model kinds (default: the configured model).
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        /// Output CSV (defaults to `<output_dir>/sweep.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the generated graphs and datasets without training.
    GenData {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check that an edge-list file describes a DAG.
    Validate { graph: PathBuf },
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, Error> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Parse(format!("override `{s}` is not KEY=VALUE")))
        })
        .collect()
}

fn load(path: &Path, overrides: &[String]) -> Result<experiment::ExperimentConfig, Error> {
    parse_config_with_overrides(path, &parse_overrides(overrides)?)
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load(&config, &cli.overrides)?;
            let bundle = run_experiment(&cfg)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            bundle.write(&dir)?;
            print!("{}", bundle.summary_table());
            println!("results written to {}", dir.display());
        }
        Command::Sweep {
            config,
            param,
            values,
            models,
            out,
        } => {
            let cfg = load(&config, &cli.overrides)?;
            let kinds = models
                .iter()
                .map(|m| ModelKind::parse(m.trim()))
                .collect::<Result<Vec<_>, _>>()?;
            let rows = run_sweep(&cfg, &param, &values, &kinds)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.join("sweep.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            write_sweep_csv(&path, &rows)?;
            println!("{:<8} {:>10} {:>12} {:>12} {:>12}", "model", param, "median", "q25", "q75");
            for r in &rows {
                println!(
                    "{:<8} {:>10} {:>12.5e} {:>12.5e} {:>12.5e}",
                    r.model, r.x, r.median, r.q25, r.q75
                );
            }
            println!("sweep written to {}", path.display());
        }
        Command::GenData { config, out } => {
            let cfg = load(&config, &cli.overrides)?;
            gen_data(&cfg, &out)?;
            println!("{} trial dataset(s) written to {}", cfg.trials, out.display());
        }
        Command::Validate { graph } => {
            let d = experiment::ingest_graph_csv(&graph)?;
            let c = transitive_closure(&d);
            let reach = (0..d.n())
                .flat_map(|i| (0..d.n()).map(move |j| (i, j)))
                .filter(|&(i, j)| i != j && c.precedes(j, i))
                .count();
            println!(
                "valid DAG: {} nodes, {} edges, {} reachable pairs",
                d.n(),
                d.edges().len(),
                reach
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => dagconv::par::init_workers(n),
            _ => log::warn!("ignoring {WORKERS_ENV}={v}: expected a positive integer"),
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
