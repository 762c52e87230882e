//! Partially observed Markov process models.
//!
//! A [`Model`] supplies an initializer, a one-step simulator driven by
//! parameter-free noise (so that, at a fixed seed, the simulated path is a
//! differentiable function of the parameters), and a measurement log-density.
//! Methods are generic over [`Scalar`] so the same code runs on `f64` and on
//! tape variables.

mod cholera;
mod lgssm;
mod params;

use std::fmt;
use std::path::Path;

pub use cholera::{
    cholera_dmeasure, spline_basis, Cholera, Covariate, CHOLERA_PARAMS, CHOLERA_STATES,
};
pub use lgssm::{lgssm_dmeasure, lgssm_step, LgSsm};
pub use params::{ParamSpace, Theta, Transform};

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::prng::{Purpose, StreamKey};

/// A POMP model in plug-and-play form: it can be simulated but its
/// transition density is never evaluated.
pub trait Model: Sync {
    fn name(&self) -> &str;

    fn space(&self) -> &std::sync::Arc<ParamSpace>;

    fn state_names(&self) -> &[&'static str];

    fn state_dim(&self) -> usize {
        self.state_names().len()
    }

    /// Time of the initial state, before the first observation.
    fn t0(&self) -> f64;

    /// Writes an initial state drawn with `key` into `state`.
    fn rinit<R: Scalar>(&self, theta: &[R], key: StreamKey, state: &mut [R]) -> Result<()>;

    /// Advances `state` from `t_from` to `t_to` using the noise addressed by
    /// `key`. Deterministic for fixed `(state, theta, key)`.
    fn rprocess<R: Scalar>(
        &self,
        state: &mut [R],
        t_from: f64,
        t_to: f64,
        theta: &[R],
        key: StreamKey,
    ) -> Result<()>;

    /// Log-density of observation `y` given the latent state.
    fn dmeasure<R: Scalar>(&self, y: f64, state: &[R], theta: &[R]) -> Result<R>;

    /// Draws an observation given the latent state.
    fn rmeasure(&self, state: &[f64], theta: &[f64], key: StreamKey) -> Result<f64>;
}

/// Observed time series `y*_{1:N}` at times `t_{1:N}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub times: Vec<f64>,
    pub obs: Vec<f64>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, times: Vec<f64>, obs: Vec<f64>) -> Result<Self> {
        if times.len() != obs.len() {
            return Err(Error::usage(format!(
                "dataset has {} times but {} observations",
                times.len(),
                obs.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::usage(
                "observation times must be strictly increasing",
            ));
        }
        Ok(Dataset {
            name: name.into(),
            times,
            obs,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// First `n` observations.
    pub fn truncated(&self, n: usize) -> Dataset {
        Dataset {
            name: self.name.clone(),
            times: self.times[..n].to_vec(),
            obs: self.obs[..n].to_vec(),
        }
    }

    /// Reads a `time,obs` CSV file.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let cols = crate::harness::io::read_columns(path, &["time", "obs"])?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut cols = cols.into_iter();
        let times = cols.next().unwrap_or_default();
        let obs = cols.next().unwrap_or_default();
        Dataset::new(name, times, obs)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = self.times.iter().zip(&self.obs).map(|(t, y)| {
            vec![
                crate::harness::io::fmt_f64(*t),
                crate::harness::io::fmt_f64(*y),
            ]
        });
        crate::harness::io::write_rows(path.as_ref(), &["time", "obs"], rows)
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} observations)", self.name, self.len())
    }
}

/// Simulated latent path and observations.
#[derive(Debug, Clone)]
pub struct Simulation {
    /// Latent states at `t0` followed by each observation time.
    pub states: Vec<Vec<f64>>,
    pub data: Dataset,
}

/// Simulates the model at `theta` and draws observations at `times`.
pub fn simulate<M: Model>(
    model: &M,
    theta: &Theta,
    times: &[f64],
    seed: u64,
) -> Result<Simulation> {
    let p = theta.natural();
    let d = model.state_dim();
    let mut x = vec![0.0; d];
    model.rinit(p, StreamKey::new(seed, 0, 0, Purpose::Init), &mut x)?;
    let mut states = vec![x.clone()];
    let mut obs = Vec::with_capacity(times.len());
    let mut t = model.t0();
    for (i, &tn) in times.iter().enumerate() {
        let n = i as u64 + 1;
        model.rprocess(
            &mut x,
            t,
            tn,
            p,
            StreamKey::new(seed, n, 0, Purpose::Process),
        )?;
        obs.push(model.rmeasure(&x, p, StreamKey::new(seed, n, 0, Purpose::Observation))?);
        states.push(x.clone());
        t = tn;
    }
    Ok(Simulation {
        states,
        data: Dataset::new(format!("{}-sim-{seed}", model.name()), times.to_vec(), obs)?,
    })
}
