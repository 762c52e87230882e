//! Iterated filtering (IF2): a particle filter in which every particle
//! carries its own parameter vector, perturbed by a random walk before each
//! observation with a step size that shrinks geometrically across passes.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::io::{fmt_f64, read_table, write_rows};
use crate::mop::log_sum_exp;
use crate::pomp::{Dataset, Model, ParamSpace, Theta};
use crate::prng::{derive_seed, Purpose, StreamKey};
use crate::resample::offparam_indices;

/// Random-walk sd `sigma0 * multiplier^m` at pass `m`, per unconstrained
/// coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoolingSchedule {
    pub sigma0: Vec<f64>,
    pub multiplier: f64,
}

impl CoolingSchedule {
    pub const DEFAULT_SIGMA0: f64 = 0.02;
    pub const DEFAULT_MULTIPLIER: f64 = 0.95;

    pub fn new(sigma0: Vec<f64>, multiplier: f64) -> Result<Self> {
        if !(multiplier > 0.0 && multiplier < 1.0) {
            return Err(Error::usage(format!(
                "cooling multiplier {multiplier} is outside (0, 1)"
            )));
        }
        if sigma0.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::usage(
                "random-walk sds must be finite and nonnegative",
            ));
        }
        Ok(CoolingSchedule { sigma0, multiplier })
    }

    /// The same sd for every coordinate.
    pub fn shared(dim: usize, sigma0: f64, multiplier: f64) -> Result<Self> {
        Self::new(vec![sigma0; dim], multiplier)
    }

    /// A shared scale times per-coordinate magnitudes.
    pub fn scaled(scale: f64, magnitudes: &[f64], multiplier: f64) -> Result<Self> {
        Self::new(magnitudes.iter().map(|m| scale * m).collect(), multiplier)
    }

    /// Sets the sd of coordinates not flagged in `free` to zero.
    pub fn masked(mut self, free: &[bool]) -> Self {
        for (s, &f) in self.sigma0.iter_mut().zip(free) {
            if !f {
                *s = 0.0;
            }
        }
        self
    }

    pub fn sd(&self, m: usize) -> Vec<f64> {
        let factor = self.multiplier.powi(m as i32);
        self.sigma0.iter().map(|s| s * factor).collect()
    }
}

/// `J` parameter vectors on the unconstrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSwarm {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ParameterSwarm {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::usage("a swarm needs at least one row"));
        }
        if rows.iter().any(|r| r.len() != names.len()) {
            return Err(Error::usage("swarm rows must have one value per parameter"));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("swarm contains non-finite values".into()));
        }
        Ok(ParameterSwarm { names, rows })
    }

    /// `j` copies of `theta`.
    pub fn replicate(theta: &Theta, j: usize) -> Self {
        ParameterSwarm {
            names: theta.space().names().to_vec(),
            rows: vec![theta.unconstrained(); j],
        }
    }

    /// Rows drawn uniformly from the box `[lo_i, hi_i]` given on the natural
    /// scale.
    pub fn uniform_box(
        space: &ParamSpace,
        bounds: &[(f64, f64)],
        j: usize,
        seed: u64,
    ) -> Result<Self> {
        if bounds.len() != space.len() {
            return Err(Error::usage("one bound pair per parameter is required"));
        }
        let rows = (0..j)
            .map(|r| {
                let key = StreamKey::new(seed, 0, r as u64, Purpose::Init);
                bounds
                    .iter()
                    .zip(space.transforms())
                    .zip(space.names())
                    .enumerate()
                    .map(|(i, ((&(lo, hi), t), name))| {
                        let x = lo + (hi - lo) * key.uniform(i as u64);
                        t.to_unconstrained(x).ok_or_else(|| Error::ParameterDomain {
                            name: name.clone(),
                            value: x,
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        ParameterSwarm::new(space.names().to_vec(), rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let j = self.rows.len() as f64;
        let mut m = vec![0.0; self.dim()];
        for row in &self.rows {
            for (mi, x) in m.iter_mut().zip(row) {
                *mi += x;
            }
        }
        m.iter_mut().for_each(|x| *x /= j);
        m
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let (names, rows) = read_table(path.as_ref())?;
        ParameterSwarm::new(names, rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let headers: Vec<&str> = self.names.iter().map(String::as_str).collect();
        let rows = self
            .rows
            .iter()
            .map(|r| r.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>());
        write_rows(path.as_ref(), &headers, rows)
    }
}

fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::Blowup { .. } | Error::Ad(_) | Error::ParameterDomain { .. }
    )
}

/// One IF2 pass over the data. Before observation `n`, coordinate `i` of
/// particle `j` moves by `sd_i * normal(key(Perturb, n, j), i)`; states and
/// parameters are resampled together. Particles whose simulation fails get
/// zero weight. Returns the end-of-pass swarm and the log-likelihood
/// estimate of the pass.
pub fn if2_iteration<M: Model>(
    model: &M,
    data: &Dataset,
    swarm: &ParameterSwarm,
    sd: &[f64],
    seed: u64,
) -> Result<(ParameterSwarm, f64)> {
    let space = model.space();
    if swarm.dim() != space.len() || sd.len() != space.len() {
        return Err(Error::usage(
            "swarm and sd must match the model's parameters",
        ));
    }
    if sd.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::usage("random-walk sds must be nonnegative"));
    }
    if data.is_empty() {
        return Err(Error::usage("dataset has no observations"));
    }
    let jn = swarm.len();
    let d = model.state_dim();
    let p = space.len();
    let mut thetas: Vec<f64> = swarm.rows.concat();
    let mut x = vec![0.0; jn * d];
    x.par_chunks_mut(d)
        .zip(thetas.par_chunks(p))
        .enumerate()
        .map(|(j, (s, u))| {
            let natural = space.to_natural(u);
            model.rinit(
                &natural,
                StreamKey::new(seed, 0, j as u64, Purpose::Init),
                s,
            )
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<()>>()?;
    let ln_j = (jn as f64).ln();
    let mut loglik = 0.0;
    let mut t = model.t0();
    let mut next_x = vec![0.0; jn * d];
    let mut next_theta = vec![0.0; jn * p];
    for (i, (&tn, &y)) in data.times.iter().zip(&data.obs).enumerate() {
        let n = i + 1;
        let lg: Vec<Result<f64>> = x
            .par_chunks_mut(d)
            .zip(thetas.par_chunks_mut(p))
            .enumerate()
            .with_min_len(32)
            .map(|(j, (s, u))| {
                let key = StreamKey::new(seed, n as u64, j as u64, Purpose::Perturb);
                for (c, (ui, si)) in u.iter_mut().zip(sd).enumerate() {
                    *ui += si * key.normal(c as u64);
                }
                let natural = space.to_natural(u);
                let step = model
                    .rprocess(
                        s,
                        t,
                        tn,
                        &natural,
                        StreamKey::new(seed, n as u64, j as u64, Purpose::Process),
                    )
                    .and_then(|_| model.dmeasure(y, s, &natural));
                match step {
                    Ok(v) if v.is_nan() => Ok(f64::NEG_INFINITY),
                    Err(e) if recoverable(&e) => Ok(f64::NEG_INFINITY),
                    other => other,
                }
            })
            .collect();
        let lg: Vec<f64> = lg.into_iter().collect::<Result<_>>()?;
        let lse = log_sum_exp(&lg);
        if lse == f64::NEG_INFINITY {
            return Err(Error::Degenerate { step: n });
        }
        loglik += lse - ln_j;
        let k = offparam_indices(&lg, StreamKey::new(seed, n as u64, 0, Purpose::Resample))?;
        for (j, &kj) in k.iter().enumerate() {
            next_x[j * d..(j + 1) * d].copy_from_slice(&x[kj * d..(kj + 1) * d]);
            next_theta[j * p..(j + 1) * p].copy_from_slice(&thetas[kj * p..(kj + 1) * p]);
        }
        std::mem::swap(&mut x, &mut next_x);
        std::mem::swap(&mut thetas, &mut next_theta);
        t = tn;
    }
    let rows = thetas.chunks(p).map(<[f64]>::to_vec).collect();
    Ok((ParameterSwarm::new(swarm.names.clone(), rows)?, loglik))
}

#[derive(Debug, Clone)]
pub struct If2Output {
    pub swarm: ParameterSwarm,
    /// Swarm mean, reported on the natural scale.
    pub theta_hat: Theta,
    /// Log-likelihood estimate of each pass.
    pub logliks: Vec<f64>,
}

/// `iterations` IF2 passes with sd cooled by `schedule`; pass `m` uses seed
/// `derive_seed(seed, m)`.
pub fn run_if2<M: Model>(
    model: &M,
    data: &Dataset,
    swarm0: &ParameterSwarm,
    schedule: &CoolingSchedule,
    iterations: usize,
    seed: u64,
) -> Result<If2Output> {
    run_if2_from(model, data, swarm0, schedule, 0, iterations, seed)
}

/// Continues a cooling schedule from pass `first` for `iterations` passes.
pub fn run_if2_from<M: Model>(
    model: &M,
    data: &Dataset,
    swarm0: &ParameterSwarm,
    schedule: &CoolingSchedule,
    first: usize,
    iterations: usize,
    seed: u64,
) -> Result<If2Output> {
    let mut swarm = swarm0.clone();
    let mut logliks = Vec::with_capacity(iterations);
    for m in first..first + iterations {
        let (next, ll) = if2_iteration(
            model,
            data,
            &swarm,
            &schedule.sd(m),
            derive_seed(seed, m as u64),
        )?;
        swarm = next;
        logliks.push(ll);
    }
    let theta_hat = Theta::from_unconstrained(model.space().clone(), &swarm.mean())?;
    Ok(If2Output {
        swarm,
        theta_hat,
        logliks,
    })
}
