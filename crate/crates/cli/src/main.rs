use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use cdl_core::data::CovariateKind;
use cdl_core::diagnostics::{psrf_table, write_summary};
use cdl_core::draws::DrawSet;
use cdl_core::run::{export_plot_data, fit, summarize_run, ModelKind, Paths, RunConfig};
use cdl_core::simulate::{self, SimulationConfig};
use clap::{Parser, Subcommand, ValueEnum};

const SEED_ENV: &str = "CDLCR_SEED";

#[derive(Parser)]
#[command(name = "cdlcr", version, about = "Open-population capture-recapture by complete-data likelihood")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Vole,
    Finch,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a data set with known truth.
    Simulate {
        /// Simulation settings (TOML); overrides --preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "vole")]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Augmentation bound of the simulated population.
        #[arg(long = "M")]
        m: Option<usize>,
    },
    /// Fit a model and write a run directory.
    Fit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        adapt: Option<usize>,
        #[arg(long)]
        iter: Option<usize>,
        #[arg(long, value_parser = parse_model)]
        model: Option<ModelKind>,
        #[arg(long, value_parser = parse_covariate)]
        covariate: Option<CovariateKind>,
        #[arg(long = "M")]
        m: Option<usize>,
        /// Report acceptance rates every this many iterations.
        #[arg(long)]
        progress: Option<usize>,
    },
    /// Posterior medians and credible intervals of a run.
    Summarize {
        /// Run directory.
        dir: PathBuf,
        /// Restrict to these columns.
        #[arg(long, value_delimiter = ',')]
        names: Option<Vec<String>>,
    },
    /// Potential scale reduction factor of every column of a run.
    Diag {
        dir: PathBuf,
    },
    /// Tidy plot-ready CSV of one quantity.
    Export {
        dir: PathBuf,
        #[arg(long)]
        quantity: String,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: cdl_core::Error| e.to_string())
}

fn parse_covariate(s: &str) -> Result<CovariateKind, String> {
    s.parse().map_err(|e: cdl_core::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<cdl_core::Error>().map_or(2, |c| c.exit_code());
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Simulate { config, preset, out, seed, m } => run_simulate(config, preset, &out, seed, m),
        Command::Fit { config, data, out, seed, chains, adapt, iter, model, covariate, m, progress } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            cfg.sampler.seed = resolve_seed(seed, config.as_deref())?.unwrap_or(cfg.sampler.seed);
            if let Some(v) = chains {
                cfg.sampler.n_chains = v;
            }
            if let Some(v) = adapt {
                cfg.sampler.n_adapt = v;
            }
            if let Some(v) = iter {
                cfg.sampler.n_iter = v;
            }
            if let Some(v) = progress {
                cfg.sampler.progress_every = v;
            }
            if let Some(v) = model {
                cfg.model.kind = v;
            }
            if let Some(v) = covariate {
                cfg.model.covariate = v;
            }
            if m.is_some() {
                cfg.model.m = m;
            }
            if data.is_some() {
                cfg.paths.data = data;
            }
            let out = out.or_else(|| cfg.paths.out.clone()).context("no output directory given (--out or paths.out)")?;
            let res = fit(&cfg, &out)?;
            for w in &res.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("wrote {}", res.dir.display());
            Ok(())
        }
        Command::Summarize { dir, names } => {
            let rows = summarize_run(&dir, names.as_deref())?;
            let draws = DrawSet::read_dir(&dir)?;
            if draws.n_chains() < 2 {
                eprintln!("note: psrf reported as NA because the run has a single chain; fit with --chains 2 or more");
            }
            write_summary(&rows, std::io::stdout().lock())?;
            Ok(())
        }
        Command::Diag { dir } => {
            let draws = DrawSet::read_dir(&dir)?;
            let table = psrf_table(&draws)?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "name,psrf")?;
            let mut worst: Option<(String, f64)> = None;
            for (name, r) in &table {
                match r {
                    Some(v) => {
                        writeln!(stdout, "{name},{}", fmt_psrf(*v))?;
                        if worst.as_ref().is_none_or(|(_, w)| v > w) {
                            worst = Some((name.clone(), *v));
                        }
                    }
                    None => writeln!(stdout, "{name},NA")?,
                }
            }
            if let Some((name, v)) = worst {
                eprintln!("largest psrf: {name} = {}", fmt_psrf(v));
            }
            Ok(())
        }
        Command::Export { dir, quantity, out } => {
            let text = export_plot_data(&dir, &quantity)?;
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => std::io::stdout().lock().write_all(text.as_bytes())?,
            }
            Ok(())
        }
    }
}

fn fmt_psrf(v: f64) -> String {
    if v.is_infinite() {
        "Inf".into()
    } else {
        format!("{v:.4}")
    }
}

/// Seed precedence: flag, then the config file, then the environment.
fn resolve_seed(flag: Option<u64>, config: Option<&Path>) -> anyhow::Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    if let Some(p) = config {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let value: toml::Table = text.parse().map_err(|e| cdl_core::Error::Config(format!("{}: {e}", p.display())))?;
        if value.get("sampler").and_then(|s| s.get("seed")).is_some() {
            return Ok(None);
        }
    }
    match std::env::var(SEED_ENV) {
        Ok(s) => match s.trim().parse() {
            Ok(v) => Ok(Some(v)),
            Err(_) => Err(cdl_core::Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer")).into()),
        },
        Err(_) => Ok(None),
    }
}

fn run_simulate(config: Option<PathBuf>, preset: Preset, out: &Path, seed: Option<u64>, m: Option<usize>) -> anyhow::Result<()> {
    let mut sim: SimulationConfig = match &config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).map_err(|e| cdl_core::Error::Config(format!("{}: {e}", p.display())))?
        }
        None => match preset {
            Preset::Vole => simulate::vole_like(),
            Preset::Finch => simulate::finch_like(),
        },
    };
    if let Some(m) = m {
        sim.m = m;
    }
    let seed = match seed {
        Some(s) => s,
        None => resolve_seed(None, None)?.unwrap_or(1),
    };
    let (truth, data) = simulate::generate(&sim, seed)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    data.write_csv(&out.join("captures.csv"))?;
    let truth_json = serde_json::to_string_pretty(&truth)?;
    std::fs::write(out.join("truth.json"), truth_json)?;
    std::fs::write(out.join("simulation.toml"), toml::to_string_pretty(&sim)?)?;

    // a fit configuration matching the simulated design
    let mut run = RunConfig::default();
    run.model.kind = if sim.robust { ModelKind::Robust } else { ModelKind::Standard };
    run.model.covariate = sim.covariate;
    run.model.k2 = Some(sim.k2.clone());
    run.model.m = Some(sim.m);
    run.model.mass_max = sim.mass_max;
    run.model.standardization = sim.standardization;
    run.paths = Paths { data: Some(PathBuf::from("captures.csv")), out: None };
    std::fs::write(out.join("config.toml"), run.to_toml()?)?;
    if data.n_observed() == 0 {
        eprintln!("warning: simulation produced no captures");
    }
    eprintln!(
        "simulated {} individuals ({} observed) into {}",
        truth.n_total,
        data.n_observed(),
        out.display()
    );
    Ok(())
}
