//! Bayesian inference driven by the MOP-alpha score: a kernel density prior
//! fitted to an IF2 swarm, the No-U-Turn sampler, and chain diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mif2::ParameterSwarm;
use crate::mop::{log_sum_exp, mop_score_with_pass, record_phi_pass, MopConfig};
use crate::pomp::{Dataset, Model, Theta};
use crate::prng::{derive_seed, Purpose, StreamKey};

/// Bandwidth used for coordinates in which the swarm has no spread: the sd
/// of a random walk with sd `0.02 * 0.95^40` accumulated over 600 steps.
pub fn fallback_bandwidth() -> f64 {
    ((0.02 * 0.95f64.powi(40)).powi(2) * 600.0).sqrt()
}

/// Product-Gaussian kernel density estimate on the unconstrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct KdePrior {
    pub centers: Vec<Vec<f64>>,
    pub bandwidths: Vec<f64>,
    /// True when every coordinate fell back to [`fallback_bandwidth`].
    pub degenerate: bool,
}

/// Fits a KDE with per-coordinate Silverman bandwidth `1.06 sd J^(-1/5)`.
pub fn kde_fit(rows: &[Vec<f64>]) -> Result<KdePrior> {
    let j = rows.len();
    if j == 0 {
        return Err(Error::usage("cannot fit a density to an empty swarm"));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::usage("swarm rows have different lengths"));
    }
    let jf = j as f64;
    let mut bandwidths = Vec::with_capacity(p);
    let mut fallbacks = 0;
    for i in 0..p {
        let mean = rows.iter().map(|r| r[i]).sum::<f64>() / jf;
        let var = if j > 1 {
            rows.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / (jf - 1.0)
        } else {
            0.0
        };
        let h = 1.06 * var.sqrt() * jf.powf(-0.2);
        if h > 0.0 && h.is_finite() {
            bandwidths.push(h);
        } else {
            fallbacks += 1;
            bandwidths.push(fallback_bandwidth());
        }
    }
    Ok(KdePrior {
        centers: rows.to_vec(),
        bandwidths,
        degenerate: fallbacks == p,
    })
}

/// Fits a KDE to the swarm columns listed in `coords`.
pub fn kde_fit_swarm(swarm: &ParameterSwarm, coords: &[usize]) -> Result<KdePrior> {
    let rows: Vec<Vec<f64>> = swarm
        .rows
        .iter()
        .map(|r| coords.iter().map(|&c| r[c]).collect())
        .collect();
    kde_fit(&rows)
}

impl KdePrior {
    pub fn dim(&self) -> usize {
        self.bandwidths.len()
    }

    fn kernel_logs(&self, theta: &[f64]) -> Vec<f64> {
        let norm: f64 = self
            .bandwidths
            .iter()
            .map(|h| -0.5 * (2.0 * std::f64::consts::PI * h * h).ln())
            .sum();
        self.centers
            .iter()
            .map(|c| {
                norm - c
                    .iter()
                    .zip(theta)
                    .zip(&self.bandwidths)
                    .map(|((ci, ti), h)| (ti - ci).powi(2) / (2.0 * h * h))
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn logpdf(&self, theta: &[f64]) -> f64 {
        log_sum_exp(&self.kernel_logs(theta)) - (self.centers.len() as f64).ln()
    }

    /// Log-density and its gradient, `-sum_k r_k (theta - c_k) / h^2` with
    /// responsibilities `r_k`.
    pub fn logpdf_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let logs = self.kernel_logs(theta);
        let lse = log_sum_exp(&logs);
        let mut grad = vec![0.0; self.dim()];
        for (c, l) in self.centers.iter().zip(&logs) {
            let r = (l - lse).exp();
            for ((g, (ci, ti)), h) in grad
                .iter_mut()
                .zip(c.iter().zip(theta))
                .zip(&self.bandwidths)
            {
                *g -= r * (ti - ci) / (h * h);
            }
        }
        (lse - (self.centers.len() as f64).ln(), grad)
    }
}

/// `kde_logpdf_grad(prior, theta)`.
pub fn kde_logpdf_grad(prior: &KdePrior, theta: &[f64]) -> (f64, Vec<f64>) {
    prior.logpdf_grad(theta)
}

/// Log-density and gradient as a function of the position.
pub type Surface<'a> = Box<dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)> + 'a>;

/// A target density for the sampler. A stochastic target may return a
/// different deterministic surface for every `(anchor, seed)`; the sampler
/// asks for one surface per iteration, anchored at the current position.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn surface(&self, anchor: &[f64], seed: u64) -> Result<Surface<'_>>;
}

/// A deterministic target given by a closure.
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F> FnDensity<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnDensity { dim, f }
    }
}

impl<F> LogDensity for FnDensity<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn surface(&self, _anchor: &[f64], _seed: u64) -> Result<Surface<'_>> {
        Ok(Box::new(move |x: &[f64]| Ok((self.f)(x))))
    }
}

/// Posterior over a subset of unconstrained coordinates, with MOP-alpha
/// log-likelihood and score plus a KDE prior. The surface of an iteration is
/// the off-parameter estimate with resampling fixed by a baseline pass at the
/// anchor, so it is smooth in the position.
pub struct MopPosterior<'a, M: Model> {
    pub model: &'a M,
    pub data: &'a Dataset,
    pub base: Theta,
    pub coords: Vec<usize>,
    pub prior: Option<KdePrior>,
    pub mop: MopConfig,
}

impl<M: Model> MopPosterior<'_, M> {
    pub fn theta_at(&self, x: &[f64]) -> Result<Theta> {
        let mut u = self.base.unconstrained();
        for (&c, &v) in self.coords.iter().zip(x) {
            u[c] = v;
        }
        Theta::from_unconstrained(self.base.space().clone(), &u)
    }

    pub fn position(&self, theta: &Theta) -> Vec<f64> {
        let u = theta.unconstrained();
        self.coords.iter().map(|&c| u[c]).collect()
    }
}

impl<M: Model> LogDensity for MopPosterior<'_, M> {
    fn dim(&self) -> usize {
        self.coords.len()
    }

    fn surface(&self, anchor: &[f64], seed: u64) -> Result<Surface<'_>> {
        let cfg = self.mop.with_seed(seed);
        let pass = record_phi_pass(self.model, self.data, &self.theta_at(anchor)?, &cfg)?;
        Ok(Box::new(move |x: &[f64]| {
            let theta = self.theta_at(x)?;
            let out = mop_score_with_pass(self.model, self.data, &theta, &pass, &cfg)?;
            let score = out.score.expect("score requested");
            let mut lp = out.loglik;
            let mut grad: Vec<f64> = self.coords.iter().map(|&c| score[c]).collect();
            if let Some(prior) = &self.prior {
                let (l, g) = prior.logpdf_grad(x);
                lp += l;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            Ok((lp, grad))
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NutsConfig {
    pub chains: usize,
    /// Post-warmup draws per chain.
    pub iterations: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_depth: usize,
    /// Initial step size; found by the doubling heuristic when absent.
    pub step_size: Option<f64>,
}

impl Default for NutsConfig {
    fn default() -> Self {
        NutsConfig {
            chains: 4,
            iterations: 500,
            warmup: 500,
            target_accept: 0.8,
            max_depth: 10,
            step_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSet {
    /// `draws[chain][iteration][coord]`, post-warmup, unconstrained.
    pub draws: Vec<Vec<Vec<f64>>>,
    /// Mean acceptance statistic per post-warmup iteration.
    pub accept_stats: Vec<Vec<f64>>,
    /// Step size per iteration, warmup included.
    pub step_sizes: Vec<Vec<f64>>,
    pub divergences: Vec<usize>,
    pub tree_depths: Vec<Vec<usize>>,
}

impl ChainSet {
    pub fn dim(&self) -> usize {
        self.draws
            .first()
            .and_then(|c| c.first())
            .map_or(0, Vec::len)
    }

    /// Draws of coordinate `coord`, one vector per chain.
    pub fn coordinate(&self, coord: usize) -> Vec<Vec<f64>> {
        self.draws
            .iter()
            .map(|c| c.iter().map(|d| d[coord]).collect())
            .collect()
    }

    pub fn mean(&self, coord: usize) -> f64 {
        let all: Vec<f64> = self.coordinate(coord).concat();
        all.iter().sum::<f64>() / all.len() as f64
    }

    pub fn sd(&self, coord: usize) -> f64 {
        let all: Vec<f64> = self.coordinate(coord).concat();
        let m = all.iter().sum::<f64>() / all.len() as f64;
        (all.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (all.len() as f64 - 1.0)).sqrt()
    }

    pub fn total_divergences(&self) -> usize {
        self.divergences.iter().sum()
    }
}

/// Counter-based draws for one sampler iteration.
struct Draws {
    key: StreamKey,
    counter: u64,
}

impl Draws {
    fn new(seed: u64, chain: usize, iteration: usize) -> Self {
        Draws {
            key: StreamKey::new(seed, iteration as u64, chain as u64, Purpose::Proposal),
            counter: 0,
        }
    }

    fn uniform(&mut self) -> f64 {
        self.counter += 1;
        self.key.uniform_open(self.counter)
    }

    fn normal(&mut self) -> f64 {
        self.counter += 1;
        self.key.normal(self.counter)
    }
}

const MAX_ENERGY_ERROR: f64 = 1000.0;

#[derive(Clone)]
struct Point {
    theta: Vec<f64>,
    momentum: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn kinetic(p: &[f64]) -> f64 {
    0.5 * dot(p, p)
}

fn leapfrog(surface: &Surface<'_>, point: &Point, eps: f64) -> Option<Point> {
    let half: Vec<f64> = point
        .momentum
        .iter()
        .zip(&point.grad)
        .map(|(p, g)| p + 0.5 * eps * g)
        .collect();
    let theta: Vec<f64> = point
        .theta
        .iter()
        .zip(&half)
        .map(|(t, p)| t + eps * p)
        .collect();
    let (logp, grad) = surface(&theta).ok()?;
    if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return None;
    }
    let momentum = half
        .iter()
        .zip(&grad)
        .map(|(p, g)| p + 0.5 * eps * g)
        .collect();
    Some(Point {
        theta,
        momentum,
        logp,
        grad,
    })
}

struct Tree {
    minus: Point,
    plus: Point,
    proposal: Point,
    n: f64,
    ok: bool,
    alpha: f64,
    n_alpha: f64,
    divergent: bool,
}

fn no_u_turn(minus: &Point, plus: &Point) -> bool {
    let span: Vec<f64> = plus
        .theta
        .iter()
        .zip(&minus.theta)
        .map(|(a, b)| a - b)
        .collect();
    dot(&span, &minus.momentum) >= 0.0 && dot(&span, &plus.momentum) >= 0.0
}

#[allow(clippy::too_many_arguments)]
fn build_tree(
    surface: &Surface<'_>,
    point: &Point,
    log_u: f64,
    direction: f64,
    depth: usize,
    eps: f64,
    h0: f64,
    draws: &mut Draws,
) -> Tree {
    if depth == 0 {
        let Some(next) = leapfrog(surface, point, direction * eps) else {
            return Tree {
                minus: point.clone(),
                plus: point.clone(),
                proposal: point.clone(),
                n: 0.0,
                ok: false,
                alpha: 0.0,
                n_alpha: 1.0,
                divergent: true,
            };
        };
        let h = next.logp - kinetic(&next.momentum);
        let n = if log_u <= h { 1.0 } else { 0.0 };
        let ok = log_u < h + MAX_ENERGY_ERROR;
        let alpha = (h - h0).exp().min(1.0);
        return Tree {
            minus: next.clone(),
            plus: next.clone(),
            proposal: next,
            n,
            ok,
            alpha: if alpha.is_nan() { 0.0 } else { alpha },
            n_alpha: 1.0,
            divergent: !ok,
        };
    }
    let mut tree = build_tree(surface, point, log_u, direction, depth - 1, eps, h0, draws);
    if !tree.ok {
        return tree;
    }
    let edge = if direction < 0.0 {
        &tree.minus
    } else {
        &tree.plus
    };
    let sub = build_tree(
        surface,
        &edge.clone(),
        log_u,
        direction,
        depth - 1,
        eps,
        h0,
        draws,
    );
    if direction < 0.0 {
        tree.minus = sub.minus;
    } else {
        tree.plus = sub.plus;
    }
    let total = tree.n + sub.n;
    if total > 0.0 && draws.uniform() < sub.n / total {
        tree.proposal = sub.proposal;
    }
    tree.alpha += sub.alpha;
    tree.n_alpha += sub.n_alpha;
    tree.divergent |= sub.divergent;
    tree.ok = sub.ok && no_u_turn(&tree.minus, &tree.plus);
    tree.n = total;
    tree
}

/// Dual-averaging step-size adaptation.
struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps_bar: f64,
    m: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps0: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps0).ln(),
            target,
            h_bar: 0.0,
            log_eps_bar: 0.0,
            m: 0.0,
        }
    }

    fn update(&mut self, accept: f64) -> f64 {
        self.m += 1.0;
        let w = 1.0 / (self.m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept);
        let log_eps = self.mu - self.m.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.m.powf(-Self::KAPPA);
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

fn initial_step(surface: &Surface<'_>, start: &Point, draws: &mut Draws) -> f64 {
    let mut p = start.clone();
    p.momentum = (0..p.theta.len()).map(|_| draws.normal()).collect();
    let h0 = p.logp - kinetic(&p.momentum);
    let log_ratio = |eps: f64| match leapfrog(surface, &p, eps) {
        Some(q) => q.logp - kinetic(&q.momentum) - h0,
        None => f64::NEG_INFINITY,
    };
    let mut eps = 1.0;
    let mut ratio = log_ratio(eps);
    let up = ratio > 0.5f64.ln();
    for _ in 0..60 {
        if up != (ratio > 0.5f64.ln()) {
            break;
        }
        eps = if up { eps * 2.0 } else { eps * 0.5 };
        ratio = log_ratio(eps);
    }
    eps
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    accept: Vec<f64>,
    steps: Vec<f64>,
    depths: Vec<usize>,
    divergences: usize,
}

fn run_chain<D: LogDensity>(
    target: &D,
    start: &[f64],
    config: &NutsConfig,
    seed: u64,
    chain: usize,
) -> Result<ChainOutput> {
    let total = config.warmup + config.iterations;
    let mut theta = start.to_vec();
    let mut eps = config.step_size.unwrap_or(0.0);
    let mut adapt = None;
    let mut out = ChainOutput {
        draws: Vec::with_capacity(config.iterations),
        accept: Vec::with_capacity(config.iterations),
        steps: Vec::with_capacity(total),
        depths: Vec::with_capacity(total),
        divergences: 0,
    };
    for it in 0..total {
        let iter_seed = derive_seed(derive_seed(seed, chain as u64), it as u64);
        let surface = target.surface(&theta, iter_seed)?;
        let (logp, grad) = surface(&theta)?;
        if !logp.is_finite() {
            if it == 0 {
                return Err(Error::usage(
                    "log density is not finite at the initial point",
                ));
            }
            return Err(Error::Numerical(format!(
                "log density is not finite at iteration {it} of chain {chain}"
            )));
        }
        let mut draws = Draws::new(seed, chain, it);
        let mut point = Point {
            theta: theta.clone(),
            momentum: vec![],
            logp,
            grad,
        };
        if it == 0 {
            if config.step_size.is_none() {
                eps = initial_step(&surface, &point, &mut draws);
            }
            adapt = Some(DualAveraging::new(eps, config.target_accept));
        }
        point.momentum = (0..theta.len()).map(|_| draws.normal()).collect();
        let h0 = point.logp - kinetic(&point.momentum);
        let log_u = h0 + draws.uniform().ln();
        let mut minus = point.clone();
        let mut plus = point.clone();
        let mut n = 1.0;
        let mut depth = 0;
        let mut alpha = 0.0;
        let mut n_alpha = 0.0;
        let mut divergent = false;
        while depth < config.max_depth {
            let direction = if draws.uniform() < 0.5 { -1.0 } else { 1.0 };
            let edge = if direction < 0.0 { &minus } else { &plus };
            let tree = build_tree(
                &surface,
                &edge.clone(),
                log_u,
                direction,
                depth,
                eps,
                h0,
                &mut draws,
            );
            if direction < 0.0 {
                minus = tree.minus;
            } else {
                plus = tree.plus;
            }
            alpha = tree.alpha;
            n_alpha = tree.n_alpha;
            divergent |= tree.divergent;
            if tree.ok && draws.uniform() < (tree.n / n).min(1.0) {
                theta = tree.proposal.theta.clone();
            }
            n += tree.n;
            depth += 1;
            if !tree.ok || !no_u_turn(&minus, &plus) {
                break;
            }
        }
        let accept = if n_alpha > 0.0 { alpha / n_alpha } else { 0.0 };
        out.steps.push(eps);
        out.depths.push(depth);
        if divergent {
            out.divergences += 1;
        }
        if let Some(da) = adapt.as_mut() {
            if it < config.warmup {
                if n_alpha > 0.0 {
                    eps = da.update(accept);
                }
                if it + 1 == config.warmup {
                    eps = da.final_step();
                }
            }
        }
        if it >= config.warmup {
            out.draws.push(theta.clone());
            out.accept.push(accept);
        }
    }
    Ok(out)
}

/// Runs `config.chains` NUTS chains in parallel from `starts` (one per chain,
/// or a single start shared by all). Chain `c`, iteration `i` uses the
/// surface seed `derive_seed(derive_seed(seed, c), i)`.
pub fn nuts_sample<D: LogDensity>(
    target: &D,
    starts: &[Vec<f64>],
    config: &NutsConfig,
    seed: u64,
) -> Result<ChainSet> {
    if starts.is_empty() || config.chains == 0 {
        return Err(Error::usage(
            "NUTS needs at least one chain and a starting point",
        ));
    }
    if starts.iter().any(|s| s.len() != target.dim()) {
        return Err(Error::usage("starting point has the wrong dimension"));
    }
    if !(config.target_accept > 0.0 && config.target_accept < 1.0) {
        return Err(Error::usage("target acceptance must lie in (0, 1)"));
    }
    let runs: Vec<Result<ChainOutput>> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, &starts[c % starts.len()], config, seed, c))
        .collect();
    let runs: Vec<ChainOutput> = runs.into_iter().collect::<Result<_>>()?;
    let mut set = ChainSet {
        draws: Vec::new(),
        accept_stats: Vec::new(),
        step_sizes: Vec::new(),
        divergences: Vec::new(),
        tree_depths: Vec::new(),
    };
    for r in runs {
        set.draws.push(r.draws);
        set.accept_stats.push(r.accept);
        set.step_sizes.push(r.steps);
        set.divergences.push(r.divergences);
        set.tree_depths.push(r.depths);
    }
    Ok(set)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0),
    )
}

fn split(chains: &[Vec<f64>]) -> Result<Vec<&[f64]>> {
    if chains.len() < 2 && chains.first().is_none_or(|c| c.len() < 4) {
        return Err(Error::usage("R-hat needs at least 2 chains of 4 draws"));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 {
        return Err(Error::usage("R-hat needs at least 4 draws per chain"));
    }
    let half = n / 2;
    Ok(chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..n]])
        .collect())
}

/// Split R-hat `sqrt((W + B/n) / W)` over half-chains, where `W` is the mean
/// within-half variance and `B/n` the variance of the half means. It is at
/// least 1 and equals 1 when all halves have the same mean. Zero
/// within-chain variance gives `+inf`.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let halves = split(chains)?;
    let stats: Vec<(f64, f64)> = halves.iter().map(|h| mean_var(h)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let (_, b_over_n) = mean_var(&means);
    if !(w > 0.0) {
        return Ok(f64::INFINITY);
    }
    Ok(((w + b_over_n) / w).sqrt())
}

fn autocovariance(xs: &[f64], max_lag: usize) -> Vec<f64> {
    let n = xs.len();
    let m = xs.iter().sum::<f64>() / n as f64;
    (0..=max_lag)
        .map(|t| {
            (0..n - t)
                .map(|i| (xs[i] - m) * (xs[i + t] - m))
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

/// Multi-chain effective sample size with Geyer's initial monotone
/// sequence estimator on split chains.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    let halves = split(chains)?;
    let m = halves.len() as f64;
    let n = halves[0].len();
    let nf = n as f64;
    let stats: Vec<(f64, f64)> = halves.iter().map(|h| mean_var(h)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let (_, b_over_n) = mean_var(&means);
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if !(var_plus > 0.0) {
        return Ok(f64::NAN);
    }
    let acov: Vec<Vec<f64>> = halves.iter().map(|h| autocovariance(h, n - 1)).collect();
    let rho = |t: usize| {
        let mean_acov = acov.iter().map(|a| a[t]).sum::<f64>() / m;
        1.0 - (w - mean_acov) / var_plus
    };
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        pair = pair.min(prev);
        sum += pair;
        prev = pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / (m * nf).log10().max(1.0));
    Ok(m * nf / tau)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub divergences: usize,
    pub step_size: Vec<f64>,
}

pub fn diagnostics(set: &ChainSet) -> Result<Diagnostics> {
    let dim = set.dim();
    let mut r = Vec::with_capacity(dim);
    let mut e = Vec::with_capacity(dim);
    for c in 0..dim {
        let coord = set.coordinate(c);
        r.push(rhat(&coord)?);
        e.push(ess(&coord)?);
    }
    Ok(Diagnostics {
        rhat: r,
        ess: e,
        divergences: set.total_divergences(),
        step_size: set
            .step_sizes
            .iter()
            .map(|s| s.last().copied().unwrap_or(f64::NAN))
            .collect(),
    })
}
