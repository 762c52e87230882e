//! Iterated filtering with automatic differentiation: an IF2 warm start
//! followed by gradient (or floored Newton) ascent on the MOP-alpha score.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::io::{fmt_f64, write_rows};
use crate::mif2::{run_if2, CoolingSchedule, ParameterSwarm};
use crate::mop::{mop_score, mop_score_with_pass, record_phi_pass, run_bootstrap, MopConfig};
use crate::pomp::{Dataset, Model, Theta};
use crate::prng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Gradient,
    FlooredNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IfadConfig {
    pub warm_start_iterations: usize,
    pub alpha: f64,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub stop_sigma: f64,
    pub stop_epsilon: f64,
    pub method: Method,
    /// Smallest eigenvalue allowed in the Newton matrix.
    pub hessian_floor: f64,
    /// Particles for the score filter.
    pub particles: usize,
    /// Particles and seed of the common-seed re-evaluation of iterates.
    pub eval_particles: usize,
    pub eval_seed: u64,
    /// Stop stage 2 when the estimate sits this far below the best one for
    /// [`IfadConfig::DIVERGENCE_STEPS`] consecutive steps.
    pub divergence_guard: f64,
}

impl Default for IfadConfig {
    fn default() -> Self {
        IfadConfig {
            warm_start_iterations: 40,
            alpha: 0.97,
            learning_rate: 0.2,
            max_iterations: 60,
            stop_sigma: 0.1,
            stop_epsilon: 1e-3,
            method: Method::Gradient,
            hessian_floor: 1.0,
            particles: 1000,
            eval_particles: 5000,
            eval_seed: 0x5eed,
            divergence_guard: 50.0,
        }
    }
}

impl IfadConfig {
    pub const DIVERGENCE_STEPS: usize = 5;

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::usage("learning rate must be positive"));
        }
        if !((1.0 + self.stop_sigma) * self.stop_epsilon > 0.0) {
            return Err(Error::usage(
                "stopping threshold (1 + sigma) epsilon must be positive",
            ));
        }
        if !(self.hessian_floor > 0.0) {
            return Err(Error::usage("Hessian floor must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::usage("alpha must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn threshold(&self) -> f64 {
        (1.0 + self.stop_sigma) * self.stop_epsilon
    }
}

/// Log-likelihood estimates and scores on the unconstrained scale.
pub trait ScoreSource {
    fn dim(&self) -> usize;

    /// Estimate and score at `u` from the filter seeded with `seed`.
    fn loglik_score(&self, u: &[f64], seed: u64) -> Result<(f64, Vec<f64>)>;

    /// Hessian of the negative log-likelihood by central differences of the
    /// score at a fixed seed.
    fn neg_hessian(&self, u: &[f64], seed: u64, h: f64) -> Result<DMatrix<f64>> {
        fd_neg_hessian(u, h, |v| Ok(self.loglik_score(v, seed)?.1))
    }
}

fn fd_neg_hessian(
    u: &[f64],
    h: f64,
    score: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<DMatrix<f64>> {
    let p = u.len();
    let mut hess = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut up = u.to_vec();
        up[j] += h;
        let mut down = u.to_vec();
        down[j] -= h;
        let (su, sd) = (score(&up)?, score(&down)?);
        for i in 0..p {
            hess[(i, j)] = -(su[i] - sd[i]) / (2.0 * h);
        }
    }
    Ok(hess)
}

/// A model, dataset and the parameters allowed to move.
pub struct Problem<'a, M: Model> {
    pub model: &'a M,
    pub data: &'a Dataset,
    /// Values of the fixed coordinates.
    pub base: Theta,
    pub free: Vec<bool>,
    pub mop: MopConfig,
}

impl<'a, M: Model> Problem<'a, M> {
    pub fn new(model: &'a M, data: &'a Dataset, base: Theta, alpha: f64, particles: usize) -> Self {
        let free = vec![true; base.len()];
        Problem {
            model,
            data,
            base,
            free,
            mop: MopConfig::new(alpha, particles, 0),
        }
    }

    pub fn with_free(mut self, free: Vec<bool>) -> Self {
        self.free = free;
        self
    }

    /// Full parameter at unconstrained `u`, with fixed coordinates reset.
    pub fn theta(&self, u: &[f64]) -> Result<Theta> {
        let mut full = self.base.unconstrained();
        for ((f, &free), &v) in full.iter_mut().zip(&self.free).zip(u) {
            if free {
                *f = v;
            }
        }
        Theta::from_unconstrained(self.base.space().clone(), &full)
    }

    fn mask(&self, mut g: Vec<f64>) -> Vec<f64> {
        for (gi, &free) in g.iter_mut().zip(&self.free) {
            if !free {
                *gi = 0.0;
            }
        }
        g
    }

    /// Bootstrap estimate at a common seed.
    pub fn evaluate(&self, u: &[f64], particles: usize, seed: u64) -> Result<f64> {
        Ok(run_bootstrap(
            self.model,
            self.data,
            &self.theta(u)?,
            &MopConfig::new(1.0, particles, seed),
        )?
        .loglik)
    }
}

impl<M: Model> ScoreSource for Problem<'_, M> {
    fn dim(&self) -> usize {
        self.base.len()
    }

    fn loglik_score(&self, u: &[f64], seed: u64) -> Result<(f64, Vec<f64>)> {
        let out = mop_score(
            self.model,
            self.data,
            &self.theta(u)?,
            &self.mop.with_seed(seed),
        )?;
        Ok((out.loglik, self.mask(out.score.expect("score requested"))))
    }

    /// Differences of the off-parameter score with resampling held at `u`.
    fn neg_hessian(&self, u: &[f64], seed: u64, h: f64) -> Result<DMatrix<f64>> {
        let cfg = self.mop.with_seed(seed);
        let pass = record_phi_pass(self.model, self.data, &self.theta(u)?, &cfg)?;
        let mut hess = fd_neg_hessian(u, h, |v| {
            let out = mop_score_with_pass(self.model, self.data, &self.theta(v)?, &pass, &cfg)?;
            Ok(self.mask(out.score.expect("score requested")))
        })?;
        for (i, &free) in self.free.iter().enumerate() {
            if !free {
                hess.row_mut(i).fill(0.0);
                hess.column_mut(i).fill(0.0);
                hess[(i, i)] = 1.0;
            }
        }
        Ok(hess)
    }
}

/// Symmetrizes `h` and raises every eigenvalue below `c` to `c`.
pub fn hessian_floor(h: &DMatrix<f64>, c: f64) -> Result<DMatrix<f64>> {
    let (v, floored) = floored_eigen(h, c)?;
    Ok(&v * DMatrix::from_diagonal(&floored) * v.transpose())
}

/// Solves `hessian_floor(h, c) d = g` through the eigendecomposition.
pub fn floored_solve(h: &DMatrix<f64>, c: f64, g: &[f64]) -> Result<Vec<f64>> {
    let (v, floored) = floored_eigen(h, c)?;
    let mut coef = v.transpose() * DVector::from_column_slice(g);
    coef.component_div_assign(&floored);
    Ok((v * coef).iter().copied().collect())
}

fn floored_eigen(h: &DMatrix<f64>, c: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if !h.is_square() {
        return Err(Error::usage("Hessian must be square"));
    }
    if !(c > 0.0) {
        return Err(Error::usage("Hessian floor must be positive"));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("Hessian has non-finite entries".into()));
    }
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("eigendecomposition did not converge".into()))?;
    let floored = eig.eigenvalues.map(|l| l.max(c));
    Ok((eig.eigenvectors, floored))
}

/// One row of an optimization trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub stage: Stage,
    pub loglik: f64,
    pub score_norm: f64,
    /// Natural-scale parameters at this iterate; empty for IF2 passes other
    /// than the last.
    pub theta: Vec<f64>,
    /// Euclidean length of the unconstrained step taken from this iterate.
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    If2,
    Gradient,
}

impl Stage {
    fn as_str(self) -> &'static str {
        match self {
            Stage::If2 => "if2",
            Stage::Gradient => "gradient",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptTrace {
    pub names: Vec<String>,
    pub records: Vec<TraceRecord>,
}

impl OptTrace {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut headers = vec!["iteration", "stage", "loglik", "score_norm"];
        headers.extend(self.names.iter().map(String::as_str));
        let rows = self.records.iter().map(|r| {
            let mut row = vec![
                r.iteration.to_string(),
                r.stage.as_str().to_string(),
                fmt_f64(r.loglik),
                fmt_f64(r.score_norm),
            ];
            if r.theta.len() == self.names.len() {
                row.extend(r.theta.iter().map(|&x| fmt_f64(x)));
            } else {
                row.extend(std::iter::repeat_n("NaN".to_string(), self.names.len()));
            }
            row
        });
        write_rows(path.as_ref(), &headers, rows)
    }
}

/// Why stage 2 stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterations,
    Diverged,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `u - eta H^-1 g` with `g` the gradient of the negative log-likelihood.
pub fn ifad_step<S: ScoreSource>(
    source: &S,
    u: &[f64],
    config: &IfadConfig,
    seed: u64,
) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let (ll, score) = source.loglik_score(u, seed)?;
    let g: Vec<f64> = score.iter().map(|s| -s).collect();
    if g.iter().any(|x| !x.is_finite()) || !ll.is_finite() {
        return Err(Error::OptimizationAbort {
            iteration: 0,
            reason: format!("non-finite score or log-likelihood at {u:?}"),
        });
    }
    let direction = newton_direction(source, u, &g, config, seed)?;
    let next = u
        .iter()
        .zip(&direction)
        .map(|(x, d)| x - config.learning_rate * d)
        .collect();
    Ok((next, ll, score))
}

fn newton_direction<S: ScoreSource>(
    source: &S,
    u: &[f64],
    g: &[f64],
    config: &IfadConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    match config.method {
        Method::Gradient => Ok(g.to_vec()),
        Method::FlooredNewton => {
            floored_solve(&source.neg_hessian(u, seed, 1e-5)?, config.hessian_floor, g)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    /// Iterate with the highest re-evaluated log-likelihood.
    pub best: Vec<f64>,
    pub best_loglik: f64,
    pub iterates: Vec<Vec<f64>>,
    pub records: Vec<(f64, f64, f64)>,
    pub status: Status,
}

/// Gradient stage: iteration `m` draws its filter seed as
/// `derive_seed(seed, m)`. Every iterate is scored by `evaluate` and the best
/// one returned.
pub fn run_stage2<S: ScoreSource>(
    source: &S,
    u0: &[f64],
    config: &IfadConfig,
    seed: u64,
    evaluate: &dyn Fn(&[f64]) -> Result<f64>,
) -> Result<Stage2Output> {
    config.validate()?;
    let mut u = u0.to_vec();
    let mut iterates = vec![u.clone()];
    let mut records = Vec::new();
    let mut status = Status::MaxIterations;
    let mut best_estimate = f64::NEG_INFINITY;
    let mut below = 0;
    for m in 0..=config.max_iterations {
        let s = derive_seed(seed, m as u64);
        let (ll, score) = source.loglik_score(&u, s)?;
        let g: Vec<f64> = score.iter().map(|x| -x).collect();
        let gnorm = norm(&g);
        if !gnorm.is_finite() || !ll.is_finite() {
            return Err(Error::OptimizationAbort {
                iteration: m,
                reason: format!("non-finite score or log-likelihood at {u:?}"),
            });
        }
        if gnorm <= config.threshold() {
            records.push((ll, gnorm, 0.0));
            status = Status::Converged;
            break;
        }
        if ll < best_estimate - config.divergence_guard {
            below += 1;
            if below >= IfadConfig::DIVERGENCE_STEPS {
                records.push((ll, gnorm, 0.0));
                status = Status::Diverged;
                break;
            }
        } else {
            below = 0;
        }
        best_estimate = best_estimate.max(ll);
        if m == config.max_iterations {
            records.push((ll, gnorm, 0.0));
            break;
        }
        let d = newton_direction(source, &u, &g, config, s)?;
        let next: Vec<f64> = u
            .iter()
            .zip(&d)
            .map(|(x, di)| x - config.learning_rate * di)
            .collect();
        let step = norm(&next.iter().zip(&u).map(|(a, b)| a - b).collect::<Vec<_>>());
        records.push((ll, gnorm, step));
        u = next;
        iterates.push(u.clone());
    }
    let mut best = iterates[0].clone();
    let mut best_loglik = f64::NEG_INFINITY;
    for it in &iterates {
        let v = evaluate(it).unwrap_or(f64::NEG_INFINITY);
        if v > best_loglik {
            best_loglik = v;
            best = it.clone();
        }
    }
    Ok(Stage2Output {
        best,
        best_loglik,
        iterates,
        records,
        status,
    })
}

#[derive(Debug, Clone)]
pub struct IfadOutput {
    pub theta_hat: Theta,
    /// Re-evaluated log-likelihood at `theta_hat`.
    pub loglik: f64,
    pub swarm: ParameterSwarm,
    pub trace: OptTrace,
    pub status: Status,
}

/// Scores a candidate by its log-likelihood.
pub type Evaluator<'a> = &'a dyn Fn(&Theta) -> Result<f64>;

/// IF2 warm start from `swarm0` followed by the gradient stage. The warm
/// start uses `derive_seed(seed, 0)` and the gradient stage
/// `derive_seed(seed, 1)`. Iterates are compared by `evaluate`, or by a
/// bootstrap estimate at `config.eval_seed` when none is given.
pub fn run_ifad<M: Model>(
    problem: &Problem<'_, M>,
    swarm0: &ParameterSwarm,
    config: &IfadConfig,
    schedule: &CoolingSchedule,
    seed: u64,
    evaluate: Option<Evaluator<'_>>,
) -> Result<IfadOutput> {
    config.validate()?;
    let schedule = schedule.clone().masked(&problem.free);
    let warm = run_if2(
        problem.model,
        problem.data,
        swarm0,
        &schedule,
        config.warm_start_iterations,
        derive_seed(seed, 0),
    )?;
    let names = problem.base.space().names().to_vec();
    let mut trace = OptTrace {
        names,
        records: Vec::new(),
    };
    for (m, &ll) in warm.logliks.iter().enumerate() {
        trace.records.push(TraceRecord {
            iteration: m,
            stage: Stage::If2,
            loglik: ll,
            score_norm: f64::NAN,
            theta: Vec::new(),
            step: f64::NAN,
        });
    }
    if let Some(last) = trace.records.last_mut() {
        last.theta = warm.theta_hat.natural().to_vec();
    }
    let source = Problem {
        model: problem.model,
        data: problem.data,
        base: problem.base.clone(),
        free: problem.free.clone(),
        mop: MopConfig {
            alpha: config.alpha,
            particles: config.particles,
            ..problem.mop.clone()
        },
    };
    let eval = |u: &[f64]| -> Result<f64> {
        match evaluate {
            Some(f) => f(&source.theta(u)?),
            None => source.evaluate(u, config.eval_particles, config.eval_seed),
        }
    };
    let start = warm.swarm.mean();
    let stage2 = run_stage2(&source, &start, config, derive_seed(seed, 1), &eval)?;
    let offset = warm.logliks.len();
    for (k, (it, &(ll, gnorm, step))) in stage2.iterates.iter().zip(&stage2.records).enumerate() {
        trace.records.push(TraceRecord {
            iteration: offset + k,
            stage: Stage::Gradient,
            loglik: ll,
            score_norm: gnorm,
            theta: source.theta(it)?.natural().to_vec(),
            step,
        });
    }
    Ok(IfadOutput {
        theta_hat: source.theta(&stage2.best)?,
        loglik: stage2.best_loglik,
        swarm: warm.swarm,
        trace,
        status: stage2.status,
    })
}
