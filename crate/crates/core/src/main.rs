use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use catsynth::pipeline::{
    fig1_curves, run_scenario, sweep_theta, tomo_from_samples, wigner_from_density, Fig1Config, RunError, RunManifest,
    ScenarioConfig, TomoConfig, WignerBlock, MANIFEST_NAME, SCHEMA_VERSION,
};
use catsynth::Error;

#[derive(Parser)]
#[command(name = "catsynth", version, about = "Heralded squeezed cat-state synthesis: simulation and analysis runs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's output_dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Tomography seed override
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for grid and sweep evaluation
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Per-mode photon-number cutoff override
    #[arg(long, global = true)]
    cutoff: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one heralding scenario
    Run,
    /// Run the scenario for a list of half-wave-plate angles
    SweepTheta {
        /// Comma-separated angles in degrees; defaults to the config's thetas_deg
        #[arg(long, value_delimiter = ',')]
        thetas: Vec<f64>,
    },
    /// Best-fit fidelity against the ratio ε/λ for an n-photon core state
    Fig1 {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Comma-separated ratios; defaults to 0, 0.02, ..., 1
        #[arg(long, value_delimiter = ',')]
        ratios: Vec<f64>,
    },
    /// Maximum-likelihood reconstruction from a phase_rad,quadrature CSV
    Tomo {
        #[arg(long)]
        samples: PathBuf,
    },
    /// Wigner function of a density-operator JSON file
    Wigner {
        #[arg(long)]
        density: PathBuf,
        #[arg(long, default_value_t = 6.0)]
        range: f64,
        #[arg(long, default_value_t = 121)]
        points: usize,
    },
}

fn config_error(e: impl Into<Error>) -> RunError {
    RunError {
        stage: "config".into(),
        error: e.into(),
    }
}

fn read(path: &PathBuf) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(config_error)
}

fn scenario_config(g: &Global) -> Result<ScenarioConfig, RunError> {
    let path = g.config.as_ref().ok_or_else(|| config_error(Error::param("--config is required")))?;
    let mut cfg: ScenarioConfig = serde_json::from_str(&read(path)?).map_err(config_error)?;
    if let Some(c) = g.cutoff {
        cfg.set_cutoff(c);
    }
    if let Some(s) = g.seed {
        cfg.set_seed(s);
    }
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

fn out_dir(g: &Global, from_config: Option<&PathBuf>) -> Result<PathBuf, RunError> {
    g.out
        .clone()
        .or_else(|| from_config.cloned())
        .ok_or_else(|| config_error(Error::param("--out is required")))
}

fn execute(cli: &Cli) -> Result<(PathBuf, RunManifest), RunError> {
    let g = &cli.global;
    match &cli.command {
        Command::Run => {
            let cfg = scenario_config(g)?;
            let out = out_dir(g, cfg.output_dir.as_ref())?;
            let (m, s) = run_scenario(&cfg, &out)?;
            eprintln!(
                "herald probability {:.4e}, best fit {:?}",
                s.herald_probability,
                s.best_fit.map(|o| (o.alpha_sq, o.db, o.fidelity))
            );
            Ok((out, m))
        }
        Command::SweepTheta { thetas } => {
            let cfg = scenario_config(g)?;
            let out = out_dir(g, cfg.output_dir.as_ref())?;
            let thetas = if thetas.is_empty() {
                cfg.thetas_deg
                    .clone()
                    .ok_or_else(|| config_error(Error::param("give --thetas or thetas_deg in the config")))?
            } else {
                thetas.clone()
            };
            let (m, _) = sweep_theta(&cfg, &thetas, &out)?;
            for f in &m.failures {
                eprintln!("{}: stage {}: {}", f.label, f.stage, f.error);
            }
            Ok((out, m))
        }
        Command::Fig1 { n, lambda, ratios } => {
            let mut cfg = match &g.config {
                Some(p) => serde_json::from_str::<Fig1Config>(&read(p)?).map_err(config_error)?,
                None => Fig1Config {
                    schema_version: SCHEMA_VERSION,
                    n: 2,
                    lambda: 0.1,
                    ratios: (0..=50).map(|i| i as f64 * 0.02).collect(),
                    grid: Default::default(),
                },
            };
            if let Some(n) = n {
                cfg.n = *n;
            }
            if let Some(l) = lambda {
                cfg.lambda = *l;
            }
            if !ratios.is_empty() {
                cfg.ratios = ratios.clone();
            }
            let out = out_dir(g, None)?;
            Ok((out.clone(), fig1_curves(&cfg, &out)?))
        }
        Command::Tomo { samples } => {
            let path = g.config.as_ref().ok_or_else(|| config_error(Error::param("--config is required")))?;
            let mut cfg: TomoConfig = serde_json::from_str(&read(path)?).map_err(config_error)?;
            if let Some(c) = g.cutoff {
                cfg.mle.cutoff = catsynth::fock::Cutoff::new(c).map_err(config_error)?;
            }
            let out = out_dir(g, None)?;
            Ok((out.clone(), tomo_from_samples(&read(samples)?, &cfg, &out)?))
        }
        Command::Wigner { density, range, points } => {
            let out = out_dir(g, None)?;
            let block = WignerBlock {
                range: *range,
                points: *points,
            };
            Ok((out.clone(), wigner_from_density(&read(density)?, &block, &out)?))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok((out, m)) => {
            println!("{}", out.join(MANIFEST_NAME).display());
            if m.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
