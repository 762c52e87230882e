//! The measurement off-parameter particle filter (MOP-alpha) and the plain
//! bootstrap filter it reduces to.
//!
//! MOP-alpha resamples by the measurement densities of a baseline parameter
//! `phi` and carries importance weights `g(theta) / g(phi)` for the target
//! parameter `theta`, discounted by `alpha` at every step. At a fixed seed the
//! resulting log-likelihood estimate is a smooth function of `theta`, and its
//! derivative at `theta = phi` is a usable score estimate: `alpha = 0` gives a
//! low-variance, biased score and `alpha = 1` an unbiased, high-variance one.
//!
//! All weights are held as log-weights. Per observation `n`:
//!
//! ```text
//! log wP  = alpha * log wF                           (discount)
//! x       = rprocess(x, theta, key(Process, n, j))   (same noise as the phi pass)
//! log LB  = lse(log g + log wP) - lse(log wP)
//! log Lphi = lse(log gphi) - ln J
//! k       = systematic(log gphi, key(Resample, n, 0))
//! log wF  = log wP[k] + log g[k] - log gphi[k]
//! log LA  = log Lphi + lse(log wF) - lse(log wP)
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ad::{Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::pomp::{Dataset, Model, Theta};
use crate::prng::{derive_seed, Purpose, StreamKey};
use crate::resample::offparam_indices;

/// Which conditional-likelihood estimate is accumulated into the log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Weighted average of the measurement densities before resampling.
    #[default]
    BeforeResampling,
    /// Baseline likelihood times the ratio of weight totals after resampling.
    AfterResampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MopConfig {
    /// Weight discount in `[0, 1]`.
    pub alpha: f64,
    pub particles: usize,
    /// Set per run rather than read from configuration files.
    #[serde(skip)]
    pub seed: u64,
    pub estimator: Estimator,
    /// Keep only the last `k` log-ratio increments of each lineage instead of
    /// discounting; `Some(1)` behaves like `alpha = 0`.
    pub truncation_lag: Option<usize>,
    /// Keep the filtering cloud of every step in the output.
    pub save_clouds: bool,
}

impl Default for MopConfig {
    fn default() -> Self {
        MopConfig {
            alpha: 0.97,
            particles: 1000,
            seed: 0,
            estimator: Estimator::default(),
            truncation_lag: None,
            save_clouds: false,
        }
    }
}

impl MopConfig {
    pub fn new(alpha: f64, particles: usize, seed: u64) -> Self {
        MopConfig {
            alpha,
            particles,
            seed,
            ..Default::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        MopConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        MopConfig {
            alpha,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::usage(format!(
                "alpha = {} is outside [0, 1]",
                self.alpha
            )));
        }
        if self.particles < 2 {
            return Err(Error::usage("MOP needs at least 2 particles"));
        }
        if self.truncation_lag == Some(0) {
            return Err(Error::usage("truncation lag must be at least 1"));
        }
        Ok(())
    }
}

/// Filtering particles and their log-weights after the resampling step.
#[derive(Debug, Clone, PartialEq)]
pub struct Cloud {
    pub dim: usize,
    /// Row-major `J x dim` states.
    pub states: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl Cloud {
    pub fn particle(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub loglik: f64,
    /// Log conditional likelihoods under the configured estimator.
    pub cond_logliks: Vec<f64>,
    /// Log conditional likelihoods of the baseline (`phi`) filter.
    pub phi_cond_logliks: Vec<f64>,
    /// Filtering log-weights after the last step.
    pub final_log_weights: Vec<f64>,
    pub clouds: Option<Vec<Cloud>>,
    /// Gradient of `loglik` in unconstrained coordinates.
    pub score: Option<Vec<f64>>,
}

/// Measurement densities and resampling indices of a baseline filter run,
/// replayed by the off-parameter pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiPass {
    pub seed: u64,
    pub particles: usize,
    pub log_g: Vec<Vec<f64>>,
    pub indices: Vec<Vec<usize>>,
}

/// `m + ln sum exp(x - m)` with `m` the largest value, summed in order.
pub fn log_sum_exp<R: Scalar>(xs: &[R]) -> R {
    let m = xs
        .iter()
        .map(|x| x.value())
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return R::constant(m);
    }
    let mut s = R::constant(0.0);
    for &x in xs {
        s = s + (x - m).exp();
    }
    s.ln() + m
}

fn log_count(j: usize) -> f64 {
    log_sum_exp(&vec![0.0; j])
}

fn init_key(seed: u64, j: usize) -> StreamKey {
    StreamKey::new(seed, 0, j as u64, Purpose::Init)
}

fn process_key(seed: u64, n: usize, j: usize) -> StreamKey {
    StreamKey::new(seed, n as u64, j as u64, Purpose::Process)
}

fn resample_key(seed: u64, n: usize) -> StreamKey {
    StreamKey::new(seed, n as u64, 0, Purpose::Resample)
}

fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

fn check_data(data: &Dataset, t0: f64) -> Result<()> {
    if data.is_empty() {
        return Err(Error::usage("dataset has no observations"));
    }
    if data.times[0] <= t0 {
        return Err(Error::usage(format!(
            "first observation time {} is not after the model's initial time {t0}",
            data.times[0]
        )));
    }
    Ok(())
}

fn bootstrap_pass<M: Model>(
    model: &M,
    data: &Dataset,
    theta: &Theta,
    particles: usize,
    seed: u64,
    record: bool,
    save_clouds: bool,
) -> Result<(FilterOutput, Option<PhiPass>)> {
    if particles == 0 {
        return Err(Error::usage("the filter needs at least one particle"));
    }
    check_data(data, model.t0())?;
    let p = theta.natural();
    let d = model.state_dim();
    let jn = particles;
    let mut x = vec![0.0; jn * d];
    first_error(
        x.par_chunks_mut(d)
            .enumerate()
            .map(|(j, s)| model.rinit(p, init_key(seed, j), s))
            .collect(),
    )?;
    let ln_j = log_count(jn);
    let mut cond = Vec::with_capacity(data.len());
    let mut pass = record.then(|| PhiPass {
        seed,
        particles,
        log_g: Vec::new(),
        indices: Vec::new(),
    });
    let mut clouds = save_clouds.then(Vec::new);
    let mut t = model.t0();
    let mut next = vec![0.0; jn * d];
    for (i, (&tn, &y)) in data.times.iter().zip(&data.obs).enumerate() {
        let n = i + 1;
        let lg = first_error(
            x.par_chunks_mut(d)
                .enumerate()
                .with_min_len(32)
                .map(|(j, s)| {
                    model.rprocess(s, t, tn, p, process_key(seed, n, j))?;
                    model.dmeasure(y, s, p)
                })
                .collect(),
        )?;
        let lse = log_sum_exp(&lg);
        if lse == f64::NEG_INFINITY {
            return Err(Error::Degenerate { step: n });
        }
        cond.push(lse - ln_j);
        let k = offparam_indices(&lg, resample_key(seed, n))?;
        for (j, &kj) in k.iter().enumerate() {
            next[j * d..(j + 1) * d].copy_from_slice(&x[kj * d..(kj + 1) * d]);
        }
        std::mem::swap(&mut x, &mut next);
        if let Some(c) = clouds.as_mut() {
            c.push(Cloud {
                dim: d,
                states: x.clone(),
                log_weights: vec![0.0; jn],
            });
        }
        if let Some(pass) = pass.as_mut() {
            pass.log_g.push(lg);
            pass.indices.push(k);
        }
        t = tn;
    }
    let out = FilterOutput {
        loglik: cond.iter().sum(),
        phi_cond_logliks: cond.clone(),
        cond_logliks: cond,
        final_log_weights: vec![0.0; jn],
        clouds,
        score: None,
    };
    Ok((out, pass))
}

/// The bootstrap particle filter: propagate, weight, resample systematically
/// at every observation. `config.alpha` and `config.estimator` are ignored.
pub fn run_bootstrap<M: Model>(
    model: &M,
    data: &Dataset,
    theta: &Theta,
    config: &MopConfig,
) -> Result<FilterOutput> {
    Ok(bootstrap_pass(
        model,
        data,
        theta,
        config.particles,
        config.seed,
        false,
        config.save_clouds,
    )?
    .0)
}

/// Runs the bootstrap filter at `phi` and records what the off-parameter
/// pass needs to replay it.
pub fn record_phi_pass<M: Model>(
    model: &M,
    data: &Dataset,
    phi: &Theta,
    config: &MopConfig,
) -> Result<PhiPass> {
    let (_, pass) = bootstrap_pass(model, data, phi, config.particles, config.seed, true, false)?;
    Ok(pass.expect("recording requested"))
}

struct EngineOutput<R> {
    loglik: R,
    cond: Vec<f64>,
    phi_cond: Vec<f64>,
    final_log_weights: Vec<f64>,
    clouds: Option<Vec<Cloud>>,
}

/// Per-lineage weight memory: either the discounted sum or the last `k`
/// increments.
enum Memory<R> {
    Discounted { alpha: f64, log_wf: Vec<R> },
    Truncated { lag: usize, history: Vec<Vec<R>> },
}

impl<R: Scalar> Memory<R> {
    fn new(config: &MopConfig) -> Self {
        let jn = config.particles;
        match config.truncation_lag {
            None => Memory::Discounted {
                alpha: config.alpha,
                log_wf: vec![R::constant(0.0); jn],
            },
            Some(lag) => Memory::Truncated {
                lag,
                history: vec![Vec::new(); jn],
            },
        }
    }

    fn prediction_weights(&self) -> Vec<R> {
        match self {
            Memory::Discounted { alpha, log_wf } => log_wf.iter().map(|&w| w * *alpha).collect(),
            Memory::Truncated { lag, history } => history
                .iter()
                .map(|h| {
                    let skip = (h.len() + 1).saturating_sub(*lag);
                    h[skip..].iter().fold(R::constant(0.0), |acc, &x| acc + x)
                })
                .collect(),
        }
    }

    /// Resamples the memory and appends the increments; returns the new
    /// filtering log-weights.
    fn update(&mut self, log_wp: &[R], k: &[usize], increments: &[R]) -> Vec<R> {
        match self {
            Memory::Discounted { log_wf, .. } => {
                *log_wf = k
                    .iter()
                    .zip(increments)
                    .map(|(&kj, &inc)| log_wp[kj] + inc)
                    .collect();
                log_wf.clone()
            }
            Memory::Truncated { lag, history } => {
                let new: Vec<Vec<R>> = k
                    .iter()
                    .zip(increments)
                    .map(|(&kj, &inc)| {
                        let old = &history[kj];
                        let skip = (old.len() + 1).saturating_sub(*lag);
                        let mut h = old[skip..].to_vec();
                        h.push(inc);
                        h
                    })
                    .collect();
                *history = new;
                k.iter()
                    .zip(increments)
                    .map(|(&kj, &inc)| log_wp[kj] + inc)
                    .collect()
            }
        }
    }
}

fn mop_engine<M: Model, R: Scalar>(
    model: &M,
    data: &Dataset,
    theta: &[R],
    config: &MopConfig,
    phi: Option<&PhiPass>,
) -> Result<EngineOutput<R>> {
    config.validate()?;
    check_data(data, model.t0())?;
    if let Some(pass) = phi {
        if pass.particles != config.particles || pass.log_g.len() != data.len() {
            return Err(Error::usage(
                "baseline pass does not match the filter configuration",
            ));
        }
    }
    let seed = config.seed;
    let jn = config.particles;
    let d = model.state_dim();
    let ln_j = log_count(jn);
    let mut x = vec![R::constant(0.0); jn * d];
    for j in 0..jn {
        model.rinit(theta, init_key(seed, j), &mut x[j * d..(j + 1) * d])?;
    }
    let mut memory = Memory::new(config);
    let mut loglik = R::constant(0.0);
    let mut cond = Vec::with_capacity(data.len());
    let mut phi_cond = Vec::with_capacity(data.len());
    let mut clouds = config.save_clouds.then(Vec::new);
    let mut final_log_weights = vec![0.0; jn];
    let mut t = model.t0();
    let mut lg = Vec::with_capacity(jn);
    let mut next = vec![R::constant(0.0); jn * d];
    for (i, (&tn, &y)) in data.times.iter().zip(&data.obs).enumerate() {
        let n = i + 1;
        let log_wp = memory.prediction_weights();
        lg.clear();
        for j in 0..jn {
            let s = &mut x[j * d..(j + 1) * d];
            model.rprocess(s, t, tn, theta, process_key(seed, n, j))?;
            lg.push(model.dmeasure(y, s, theta)?);
        }
        let (lg_phi, k) = match phi {
            Some(pass) => (pass.log_g[i].clone(), pass.indices[i].clone()),
            None => {
                let lg_phi: Vec<f64> = lg.iter().map(|g| g.stop_gradient().value()).collect();
                let k = offparam_indices(&lg_phi, resample_key(seed, n))?;
                (lg_phi, k)
            }
        };
        let lse_wp = log_sum_exp(&log_wp);
        let log_lphi = log_sum_exp(&lg_phi) - ln_j;
        if log_lphi == f64::NEG_INFINITY {
            return Err(Error::Degenerate { step: n });
        }
        let increments: Vec<R> = k.iter().map(|&kj| lg[kj] - lg_phi[kj]).collect();
        let log_wf = memory.update(&log_wp, &k, &increments);
        let step = match config.estimator {
            Estimator::BeforeResampling => {
                let joint: Vec<R> = lg.iter().zip(&log_wp).map(|(&g, &w)| g + w).collect();
                log_sum_exp(&joint) - lse_wp
            }
            Estimator::AfterResampling => log_sum_exp(&log_wf) - lse_wp + log_lphi,
        };
        if !step.value().is_finite() {
            return Err(Error::Numerical(format!(
                "conditional log-likelihood at observation {n} is {}",
                step.value()
            )));
        }
        loglik = loglik + step;
        cond.push(step.value());
        phi_cond.push(log_lphi);
        for (j, &kj) in k.iter().enumerate() {
            next[j * d..(j + 1) * d].copy_from_slice(&x[kj * d..(kj + 1) * d]);
        }
        std::mem::swap(&mut x, &mut next);
        if let Some(c) = clouds.as_mut() {
            c.push(Cloud {
                dim: d,
                states: x.iter().map(|s| s.value()).collect(),
                log_weights: log_wf.iter().map(|w| w.value()).collect(),
            });
        }
        if n == data.len() {
            final_log_weights = log_wf.iter().map(|w| w.value()).collect();
        }
        t = tn;
    }
    Ok(EngineOutput {
        loglik,
        cond,
        phi_cond,
        final_log_weights,
        clouds,
    })
}

fn engine_output(e: EngineOutput<f64>, score: Option<Vec<f64>>) -> FilterOutput {
    FilterOutput {
        loglik: e.loglik,
        cond_logliks: e.cond,
        phi_cond_logliks: e.phi_cond,
        final_log_weights: e.final_log_weights,
        clouds: e.clouds,
        score,
    }
}

/// MOP-alpha log-likelihood estimate at `theta` with resampling driven by
/// `phi`. When `theta == phi` a single pass is made.
pub fn run_mop<M: Model>(
    model: &M,
    data: &Dataset,
    theta: &Theta,
    phi: &Theta,
    config: &MopConfig,
) -> Result<FilterOutput> {
    config.validate()?;
    if theta == phi {
        let e = mop_engine(model, data, theta.natural(), config, None)?;
        return Ok(engine_output(e, None));
    }
    let pass = record_phi_pass(model, data, phi, config)?;
    run_mop_with_pass(model, data, theta, &pass, config)
}

/// MOP-alpha at `theta` replaying a recorded baseline pass.
pub fn run_mop_with_pass<M: Model>(
    model: &M,
    data: &Dataset,
    theta: &Theta,
    pass: &PhiPass,
    config: &MopConfig,
) -> Result<FilterOutput> {
    if pass.seed != config.seed {
        return Err(Error::usage(
            "baseline pass was recorded with a different seed",
        ));
    }
    let e = mop_engine(model, data, theta.natural(), config, Some(pass))?;
    Ok(engine_output(e, None))
}

fn differentiate<M: Model>(
    model: &M,
    data: &Dataset,
    theta: &Theta,
    config: &MopConfig,
    pass: Option<&PhiPass>,
) -> Result<FilterOutput> {
    let tape = Tape::with_capacity(1 << 16);
    let u: Vec<Var<'_>> = theta
        .unconstrained()
        .iter()
        .map(|&v| tape.input(v))
        .collect();
    let natural = theta.space().to_natural(&u);
    let e = mop_engine(model, data, &natural, config, pass)?;
    tape.check()?;
    let score = tape.backward(e.loglik)?;
    if score.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!("non-finite score {score:?}")));
    }
    Ok(FilterOutput {
        loglik: e.loglik.value(),
        cond_logliks: e.cond,
        phi_cond_logliks: e.phi_cond,
        final_log_weights: e.final_log_weights,
        clouds: e.clouds,
        score: Some(score),
    })
}

/// Single-pass MOP-alpha at `theta = phi` with its score in unconstrained
/// coordinates.
pub fn mop_score<M: Model>(
    model: &M,
    data: &Dataset,
    theta: &Theta,
    config: &MopConfig,
) -> Result<FilterOutput> {
    differentiate(model, data, theta, config, None)
}

/// Score of the off-parameter estimate at `theta` with resampling driven by
/// a recorded baseline pass.
pub fn mop_score_with_pass<M: Model>(
    model: &M,
    data: &Dataset,
    theta: &Theta,
    pass: &PhiPass,
    config: &MopConfig,
) -> Result<FilterOutput> {
    differentiate(model, data, theta, config, Some(pass))
}

/// Central differences of the fixed-seed MOP-alpha estimate in each
/// unconstrained coordinate, with the baseline pass held at `theta`.
pub fn fixed_seed_fd_score<M: Model>(
    model: &M,
    data: &Dataset,
    theta: &Theta,
    config: &MopConfig,
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::usage("finite-difference step must be positive"));
    }
    config.validate()?;
    let pass = record_phi_pass(model, data, theta, config)?;
    let u = theta.unconstrained();
    let space = theta.space().clone();
    let eval = |v: &[f64]| -> Result<f64> {
        let th = Theta::from_unconstrained(space.clone(), v)?;
        Ok(mop_engine(model, data, th.natural(), config, Some(&pass))?.loglik)
    };
    (0..u.len())
        .map(|i| {
            let mut up = u.clone();
            up[i] += h;
            let mut down = u.clone();
            down[i] -= h;
            Ok((eval(&up)? - eval(&down)?) / (2.0 * h))
        })
        .collect()
}

/// One row of a bias-variance sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub coord: String,
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
}

/// Seeds `derive_seed(seed0, r)` for `r = 0..replicates`.
pub fn replicate_seeds(seed0: u64, replicates: usize) -> Vec<u64> {
    (0..replicates as u64)
        .map(|r| derive_seed(seed0, r))
        .collect()
}

/// Score estimates at `theta` for each `alpha` and seed; the same seeds are
/// used for every `alpha`. Returns `scores[alpha][replicate][coord]`.
pub fn score_replicates<M: Model>(
    model: &M,
    data: &Dataset,
    theta: &Theta,
    alphas: &[f64],
    config: &MopConfig,
    seeds: &[u64],
) -> Result<Vec<Vec<Vec<f64>>>> {
    alphas
        .iter()
        .map(|&alpha| {
            let cfg = config.with_alpha(alpha);
            let runs: Vec<Result<Vec<f64>>> = seeds
                .par_iter()
                .map(|&s| {
                    Ok(mop_score(model, data, theta, &cfg.with_seed(s))?
                        .score
                        .expect("score requested"))
                })
                .collect();
            first_error(runs)
        })
        .collect()
}

/// Empirical mean, bias, variance and MSE of the MOP-alpha score against a
/// reference score, per `alpha` and coordinate.
pub fn score_sweep<M: Model>(
    model: &M,
    data: &Dataset,
    theta: &Theta,
    alphas: &[f64],
    config: &MopConfig,
    seeds: &[u64],
    reference: &[f64],
) -> Result<Vec<SweepRow>> {
    if seeds.len() < 2 {
        return Err(Error::usage("a sweep needs at least 2 replicates"));
    }
    if reference.len() != theta.len() {
        return Err(Error::usage("reference score has the wrong length"));
    }
    let scores = score_replicates(model, data, theta, alphas, config, seeds)?;
    Ok(summarize_sweep(
        alphas,
        &scores,
        reference,
        theta.space().names(),
    ))
}

pub fn summarize_sweep(
    alphas: &[f64],
    scores: &[Vec<Vec<f64>>],
    reference: &[f64],
    names: &[String],
) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for (&alpha, reps) in alphas.iter().zip(scores) {
        let r = reps.len() as f64;
        for (c, name) in names.iter().enumerate() {
            let xs: Vec<f64> = reps.iter().map(|s| s[c]).collect();
            let mean = xs.iter().sum::<f64>() / r;
            let variance = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0);
            let mse = xs.iter().map(|x| (x - reference[c]).powi(2)).sum::<f64>() / r;
            rows.push(SweepRow {
                alpha,
                coord: name.clone(),
                mean,
                bias: mean - reference[c],
                variance,
                mse,
            });
        }
    }
    rows
}
