//! Run configuration read from a sectioned TOML file.
//!
//! ```toml
//! [model]
//! id = "lgssm"            # or "cholera"
//! theta = { a = 0.8, sigma = 1.0, tau = 0.5 }
//!
//! [simulate]              # or [data] path = "series.csv"
//! n = 100
//! seed = 1
//!
//! [mop]
//! alpha = 0.97
//! particles = 1000
//!
//! [run]
//! seed = 7
//! output_dir = "out"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bayes::NutsConfig;
use crate::error::{Error, Result};
use crate::ifad::IfadConfig;
use crate::mif2::CoolingSchedule;
use crate::mop::MopConfig;
use crate::pomp::{simulate, Cholera, Covariate, Dataset, LgSsm, Model, ParamSpace, Theta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `lgssm` or `cholera`.
    pub id: String,
    /// Initial-state mean and sd of the linear-Gaussian model.
    pub mu0: f64,
    pub s0: f64,
    /// Euler step of the cholera model, in years.
    pub dt: f64,
    /// CSV with columns `time,population`; constant `population` otherwise.
    pub covariate: Option<PathBuf>,
    pub population: f64,
    /// Natural-scale parameter values; missing entries take model defaults.
    pub theta: BTreeMap<String, f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            id: "lgssm".into(),
            mu0: 0.0,
            s0: 1.0,
            dt: 1.0 / 36.0,
            covariate: None,
            population: 1.0e6,
            theta: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n: usize,
    pub seed: u64,
    /// Spacing of observation times; defaults to 1 for the linear-Gaussian
    /// model and 1/12 (monthly) for cholera.
    pub interval: Option<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            n: 100,
            seed: 1,
            interval: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    /// Shared random-walk scale on the unconstrained axis.
    pub sigma0: f64,
    /// Per-parameter multipliers of `sigma0`; model defaults when absent.
    pub magnitudes: BTreeMap<String, f64>,
    pub multiplier: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            sigma0: CoolingSchedule::DEFAULT_SIGMA0,
            magnitudes: BTreeMap::new(),
            multiplier: CoolingSchedule::DEFAULT_MULTIPLIER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub replicates: usize,
    pub output_dir: PathBuf,
    pub alphas: Vec<f64>,
    /// Number of IF2 passes for the standalone `if2` command.
    pub iterations: usize,
    pub starts: usize,
    /// Natural-scale search box per parameter.
    pub bounds: BTreeMap<String, [f64; 2]>,
    /// Parameters allowed to move; all when empty.
    pub free: Vec<String>,
    /// Swarm checkpoint used as the IF2/IFAD starting swarm and the NUTS prior.
    pub swarm: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            replicates: 100,
            output_dir: PathBuf::from("out"),
            alphas: vec![0.0, 0.9, 0.97, 1.0],
            iterations: 40,
            starts: 1,
            bounds: BTreeMap::new(),
            free: Vec::new(),
            swarm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub data: Option<DataSection>,
    pub simulate: Option<SimulateSection>,
    pub mop: MopConfig,
    pub ifad: IfadConfig,
    pub schedule: ScheduleSection,
    pub nuts: NutsConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.is_some() && self.simulate.is_some() {
            return Err(Error::usage("[data] and [simulate] are mutually exclusive"));
        }
        if let Some(d) = &self.data {
            if !d.path.exists() {
                return Err(Error::usage(format!(
                    "dataset {} does not exist",
                    d.path.display()
                )));
            }
        }
        if let Some(c) = &self.model.covariate {
            if !c.exists() {
                return Err(Error::usage(format!(
                    "covariate file {} does not exist",
                    c.display()
                )));
            }
        }
        if let Some(c) = &self.run.swarm {
            if !c.exists() {
                return Err(Error::usage(format!(
                    "swarm checkpoint {} does not exist",
                    c.display()
                )));
            }
        }
        self.mop.validate()?;
        self.ifad.validate()?;
        Ok(())
    }
}

/// A model selected by id.
#[derive(Debug, Clone)]
pub enum AnyModel {
    LgSsm(LgSsm),
    Cholera(Cholera),
}

impl AnyModel {
    pub fn space(&self) -> &std::sync::Arc<ParamSpace> {
        match self {
            AnyModel::LgSsm(m) => m.space(),
            AnyModel::Cholera(m) => m.space(),
        }
    }

    fn default_theta(&self) -> Theta {
        match self {
            AnyModel::LgSsm(m) => m.theta(0.8, 1.0, 0.5).expect("valid defaults"),
            AnyModel::Cholera(m) => m.reference_theta(),
        }
    }

    /// Random-walk multipliers used when the configuration gives none.
    pub fn default_magnitudes(&self) -> Vec<f64> {
        match self {
            AnyModel::LgSsm(m) => vec![1.0; m.space().len()],
            AnyModel::Cholera(m) => m.rw_magnitudes(),
        }
    }

    /// Search box used when the configuration gives none.
    pub fn default_bounds(&self) -> Vec<(f64, f64)> {
        match self {
            AnyModel::LgSsm(_) => vec![(-0.5, 0.99), (0.2, 3.0), (0.1, 2.0)],
            AnyModel::Cholera(_) => {
                let mut b = vec![
                    (5.0, 20.0),
                    (0.5, 3.0),
                    (0.1, 1.0),
                    (0.1, 1.0),
                    (0.05, 0.5),
                    (-0.05, 0.05),
                ];
                b.extend([(1.5, 4.0); 6]);
                b.extend([(-11.0, -7.0); 6]);
                b
            }
        }
    }
}

/// Evaluates `$body` with `$m` bound to the concrete model.
#[macro_export]
macro_rules! with_model {
    ($any:expr, $m:ident => $body:expr) => {
        match $any {
            $crate::harness::AnyModel::LgSsm($m) => $body,
            $crate::harness::AnyModel::Cholera($m) => $body,
        }
    };
}

/// Everything a command needs, resolved from a configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: AnyModel,
    pub theta: Theta,
    pub data: Dataset,
    pub free: Vec<bool>,
    pub bounds: Vec<(f64, f64)>,
    pub schedule: CoolingSchedule,
}

impl Setup {
    pub fn resolve(config: &RunConfig) -> Result<Setup> {
        config.validate()?;
        let m = &config.model;
        let model = match m.id.as_str() {
            "lgssm" => AnyModel::LgSsm(LgSsm::new(m.mu0, m.s0)),
            "cholera" => {
                let population = match &m.covariate {
                    Some(path) => {
                        let cols = crate::harness::io::read_columns(path, &["time", "population"])?;
                        let mut cols = cols.into_iter();
                        Covariate::new(
                            cols.next().unwrap_or_default(),
                            cols.next().unwrap_or_default(),
                        )?
                    }
                    None => Covariate::constant(m.population),
                };
                if !(m.dt > 0.0) {
                    return Err(Error::usage("model.dt must be positive"));
                }
                AnyModel::Cholera(Cholera::new(m.dt, population))
            }
            other => {
                return Err(Error::usage(format!(
                    "unknown model `{other}` (expected lgssm or cholera)"
                )))
            }
        };
        let space = model.space().clone();
        let mut theta = model.default_theta();
        for (name, &value) in &m.theta {
            theta = theta.with(name, value)?;
        }
        let data = match (&config.data, &config.simulate) {
            (Some(d), None) => Dataset::read_csv(&d.path)?,
            (None, sim) => {
                let sim = sim.clone().unwrap_or_default();
                let interval = sim.interval.unwrap_or(match model {
                    AnyModel::LgSsm(_) => 1.0,
                    AnyModel::Cholera(_) => 1.0 / 12.0,
                });
                let times: Vec<f64> = (1..=sim.n).map(|i| i as f64 * interval).collect();
                with_model!(&model, md => simulate(md, &theta, &times, sim.seed)?.data)
            }
            (Some(_), Some(_)) => unreachable!("rejected by validate"),
        };
        let free = if config.run.free.is_empty() {
            vec![true; space.len()]
        } else {
            let mut f = vec![false; space.len()];
            for name in &config.run.free {
                f[space.require(name)?] = true;
            }
            f
        };
        let mut bounds = model.default_bounds();
        for (name, b) in &config.run.bounds {
            bounds[space.require(name)?] = (b[0], b[1]);
        }
        let s = &config.schedule;
        let mut magnitudes = model.default_magnitudes();
        for (name, &v) in &s.magnitudes {
            magnitudes[space.require(name)?] = v;
        }
        let schedule = CoolingSchedule::scaled(s.sigma0, &magnitudes, s.multiplier)?.masked(&free);
        Ok(Setup {
            model,
            theta,
            data,
            free,
            bounds,
            schedule,
        })
    }
}
