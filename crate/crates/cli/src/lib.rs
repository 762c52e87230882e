//! Argument parsing for the `ifad` binary. Each subcommand loads an optional
//! TOML configuration, applies flag overrides and hands the result to
//! [`ifad::harness::commands`].

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ifad::harness::{commands, RunConfig};
use ifad::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "ifad",
    version,
    about = "Differentiable particle filtering and iterated filtering for POMP models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the MOP-alpha filter and report the log-likelihood.
    Filter(Common),
    /// Estimate the log-likelihood and its gradient.
    Score(Common),
    /// Score bias, variance and MSE across discounts.
    Biasvar(BiasvarArgs),
    /// Iterated filtering from a swarm.
    If2(If2Args),
    /// IF2 warm start plus gradient refinement, or a paired search campaign.
    Ifad(IfadArgs),
    /// Sample the posterior with NUTS.
    Nuts(NutsArgs),
    /// Simulate a dataset from the model.
    Simulate(Common),
    /// Check AD scores against closed-form tangent scores.
    Selftest(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `lgssm` or `cholera`.
    #[arg(long)]
    model: Option<String>,
    /// Use simulated data instead of a dataset file.
    #[arg(long)]
    simulate: bool,
    /// Number of simulated observations (implies --simulate).
    #[arg(long)]
    n: Option<usize>,
    /// Dataset CSV with columns `time,obs`.
    #[arg(long, conflicts_with_all = ["simulate", "n"])]
    data: Option<PathBuf>,
    /// Covariate CSV with columns `time,population`.
    #[arg(long)]
    covariate: Option<PathBuf>,
    /// Particles per filter.
    #[arg(long)]
    j: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parameter values as `name=value` pairs, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_pair)]
    theta: Vec<(String, f64)>,
}

#[derive(Debug, Args)]
struct BiasvarArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Debug, Args)]
struct If2Args {
    #[command(flatten)]
    common: Common,
    /// Number of IF2 passes.
    #[arg(long)]
    iterations: Option<usize>,
    /// Starting swarm checkpoint.
    #[arg(long)]
    swarm: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IfadArgs {
    #[command(flatten)]
    common: Common,
    /// Number of uniform starts in the search box.
    #[arg(long)]
    starts: Option<usize>,
    /// IF2 warm-start passes.
    #[arg(long)]
    warm: Option<usize>,
    /// Maximum gradient iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Run once from this swarm checkpoint instead of a campaign.
    #[arg(long)]
    swarm: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NutsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    chains: Option<usize>,
    /// Post-warmup draws per chain.
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    /// Swarm checkpoint whose KDE is the prior.
    #[arg(long)]
    swarm: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("`{s}` is not name=value"))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| format!("`{value}` is not a number"))?;
    Ok((name.trim().to_string(), value))
}

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::read(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(m) = &self.model {
            cfg.model.id = m.clone();
        }
        if self.simulate || self.n.is_some() {
            cfg.data = None;
            let mut sim = cfg.simulate.take().unwrap_or_default();
            if let Some(n) = self.n {
                sim.n = n;
            }
            cfg.simulate = Some(sim);
        }
        if let Some(d) = &self.data {
            cfg.simulate = None;
            cfg.data = Some(ifad::harness::config::DataSection { path: d.clone() });
        }
        if let Some(c) = &self.covariate {
            cfg.model.covariate = Some(c.clone());
        }
        if let Some(j) = self.j {
            cfg.mop.particles = j;
            cfg.ifad.particles = j;
        }
        if let Some(a) = self.alpha {
            cfg.mop.alpha = a;
            cfg.ifad.alpha = a;
        }
        if let Some(o) = &self.out {
            cfg.run.output_dir = o.clone();
        }
        for (name, value) in &self.theta {
            cfg.model.theta.insert(name.clone(), *value);
        }
        Ok(cfg)
    }
}

fn dispatch(command: Command) -> Result<String, Error> {
    match command {
        Command::Filter(c) => commands::filter(&c.load()?),
        Command::Score(c) => commands::score(&c.load()?),
        Command::Simulate(c) => commands::simulate_data(&c.load()?),
        Command::Selftest(c) => commands::selftest(&c.load()?),
        Command::Biasvar(a) => {
            let mut cfg = a.common.load()?;
            if let Some(al) = a.alphas {
                cfg.run.alphas = al;
            }
            if let Some(r) = a.replicates {
                cfg.run.replicates = r;
            }
            commands::biasvar(&cfg)
        }
        Command::If2(a) => {
            let mut cfg = a.common.load()?;
            if let Some(i) = a.iterations {
                cfg.run.iterations = i;
            }
            if a.swarm.is_some() {
                cfg.run.swarm = a.swarm;
            }
            commands::if2(&cfg)
        }
        Command::Ifad(a) => {
            let mut cfg = a.common.load()?;
            if let Some(s) = a.starts {
                cfg.run.starts = s;
            }
            if let Some(w) = a.warm {
                cfg.ifad.warm_start_iterations = w;
            }
            if let Some(i) = a.iterations {
                cfg.ifad.max_iterations = i;
            }
            if a.swarm.is_some() {
                cfg.run.swarm = a.swarm;
            }
            commands::ifad(&cfg)
        }
        Command::Nuts(a) => {
            let mut cfg = a.common.load()?;
            if let Some(c) = a.chains {
                cfg.nuts.chains = c;
            }
            if let Some(d) = a.draws {
                cfg.nuts.iterations = d;
            }
            if let Some(w) = a.warmup {
                cfg.nuts.warmup = w;
            }
            if a.swarm.is_some() {
                cfg.run.swarm = a.swarm;
            }
            commands::nuts(&cfg)
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}
