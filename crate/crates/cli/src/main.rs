use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use pointsource::Error;
use pointsource_cli::config::{Purpose, RunConfig};
use pointsource_cli::experiment::{run_experiment, ExperimentSpec};
use pointsource_cli::pipeline::{self, AtStage, Stage};
use pointsource_cli::sim::{DesignConfig, Setting};

#[derive(Parser)]
#[command(
    name = "pointsource",
    version,
    about = "Date and place of a pathogen introduction from surveillance data"
)]
struct Cli {
    /// Master seed; overrides the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with known truth and a config that fits it.
    Simulate {
        #[arg(long, default_value = "a")]
        setting: Setting,
        /// TOML file with a design table (landscape and sampling design).
        #[arg(long)]
        design: Option<PathBuf>,
    },
    /// Fit the model and write chains, summaries and maps.
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summaries and maps from an existing chains file.
    Summarize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        chains: PathBuf,
    },
    /// Forecast the holdout records and score them against the baselines.
    Forecast {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        chains: PathBuf,
    },
    /// Coverage experiment over simulated replicates.
    Experiment {
        /// Configuration file; defaults apply without one.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides experiment.replicates.
        #[arg(long)]
        replicates: Option<usize>,
        /// Overrides experiment.settings.
        #[arg(long, value_delimiter = ',')]
        settings: Option<Vec<Setting>>,
    },
    /// Check a configuration file without running anything.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "fit")]
        purpose: PurposeArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PurposeArg {
    Fit,
    Forecast,
    Experiment,
}

impl From<PurposeArg> for Purpose {
    fn from(p: PurposeArg) -> Self {
        match p {
            PurposeArg::Fit => Purpose::Fit,
            PurposeArg::Forecast => Purpose::Forecast,
            PurposeArg::Experiment => Purpose::Experiment,
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> pipeline::StageResult<RunConfig> {
    let mut cfg = RunConfig::load(path).at(Stage::Config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let out = &cli.out_dir;
    match cli.command {
        Command::Simulate { setting, design } => {
            let design = match design {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| Error::io(&p, e))
                        .at(Stage::Config)?;
                    toml::from_str::<DesignConfig>(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
                        .at(Stage::Config)?
                }
                None => DesignConfig::default(),
            };
            let cfg = RunConfig::default();
            let path = pipeline::simulate(
                setting,
                design,
                &cfg.solver,
                cli.seed.unwrap_or(cfg.seed),
                out,
            )?;
            println!("wrote {}", path.display());
        }
        Command::Fit { config } => {
            let cfg = load_config(&config, cli.seed)?;
            let chains = pipeline::fit(&cfg, out)?;
            let n: usize = chains.iter().map(|c| c.draws.len()).sum();
            println!(
                "{n} draws from {} chains; see {}",
                chains.len(),
                out.join("report.txt").display()
            );
        }
        Command::Summarize { config, chains } => {
            let cfg = load_config(&config, cli.seed)?;
            pipeline::summarize(&cfg, &chains, out)?;
            println!("wrote {}", out.join("report.txt").display());
        }
        Command::Forecast { config, chains } => {
            let cfg = load_config(&config, cli.seed)?;
            let c = pipeline::forecast_holdout(&cfg, &chains, out)?;
            println!(
                "misclassification over {} records: model {:.3}, GLM {:.3}, majority class {:.3}",
                c.n_scored, c.model, c.glm, c.majority
            );
        }
        Command::Experiment {
            config,
            replicates,
            settings,
        } => {
            let mut cfg = match &config {
                Some(p) => load_config(p, cli.seed)?,
                None => RunConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(r) = replicates {
                cfg.experiment.replicates = r;
            }
            if let Some(s) = settings {
                cfg.experiment.settings = s;
            }
            cfg.validate(Purpose::Experiment).at(Stage::Config)?;
            let e = &cfg.experiment;
            let spec = ExperimentSpec {
                settings: e.settings.clone(),
                replicates: e.replicates,
                design: e.design.clone(),
                mcmc: e.mcmc.clone(),
                solver: cfg.solver,
                level: cfg.output.level,
                smooth_location_map: e.smooth_location_map,
                truth: e.truth,
                seed: cfg.seed,
            };
            let report = run_experiment(&spec).at(Stage::Experiment)?;
            report.write(out).at(Stage::Experiment)?;
            print!("{}", report.render());
        }
        Command::ValidateConfig { config, purpose } => {
            let cfg = load_config(&config, cli.seed)?;
            cfg.validate(purpose.into()).at(Stage::Config)?;
            println!("{}: ok", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
