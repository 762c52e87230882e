//! Acceptance criteria. Prints one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=3,7` runs a subset (the determinism rerun is skipped
//! unless 12 is listed).

use std::io::Write;
use std::time::{Duration, Instant};

use ifad::ad::{gradient, Scalar, Tape, Var};
use ifad::bayes::{kde_fit_swarm, nuts_sample, rhat, MopPosterior, NutsConfig};
use ifad::harness::{search_campaign, CampaignSpec, SearchMethod};
use ifad::ifad::{run_ifad, run_stage2, IfadConfig, Problem, ScoreSource};
use ifad::mif2::{run_if2, CoolingSchedule, ParameterSwarm};
use ifad::mop::{
    fixed_seed_fd_score, log_sum_exp, mop_score, replicate_seeds, run_bootstrap, run_mop,
    score_sweep, Estimator, MopConfig,
};
use ifad::oracle::{grid_posterior, kalman_loglik, kalman_mle, kalman_score_fd, KalmanParams};
use ifad::pomp::{
    cholera_dmeasure, lgssm_dmeasure, lgssm_step, simulate, spline_basis, Cholera, Covariate,
    Dataset, LgSsm, Theta, Transform,
};
use ifad::prng::{Purpose, StreamKey};
use ifad::resample::systematic_resample;

struct Outcome {
    pass: bool,
    detail: String,
    /// Every number the criterion computed, for the determinism rerun.
    numbers: Vec<f64>,
}

fn lgssm_fixture(n: usize, data_seed: u64) -> (LgSsm, Dataset, Theta) {
    let model = LgSsm::new(0.0, 1.0);
    let theta = model.theta(0.8, 1.0, 0.5).unwrap();
    let times: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    let data = simulate(&model, &theta, &times, data_seed).unwrap().data;
    (model, data, theta)
}

fn kalman(model: &LgSsm, data: &Dataset, theta: &Theta) -> f64 {
    kalman_loglik(data, &KalmanParams::new(model, theta)).unwrap()
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt(),
    )
}

// ---------------------------------------------------------------- 1

/// Five-point central difference.
fn fd5(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let at = |d: f64| {
        let mut p = x.to_vec();
        p[i] += d;
        f(&p)
    };
    (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h)
}

macro_rules! expressions {
    ($( $name:literal, [$($p:expr),+], |$x:ident| $body:expr; )+) => {{
        let mut out: Vec<(&'static str, Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
        $(
            let point = vec![$($p),+];
            let (_, ad) = gradient(|$x: &[Var]| $body, &point).unwrap();
            let f = |$x: &[f64]| -> f64 { $body };
            let fd: Vec<f64> = (0..point.len()).map(|i| fd5(&f, &point, i, 1e-3)).collect();
            out.push(($name, point, ad, fd));
        )+
        out
    }};
}

fn criterion_1() -> Outcome {
    let cholera = Cholera::default();
    let cases = expressions! {
        "polynomial", [1.3, -0.7], |x| x[0] * x[0] * x[1] + x[1] * 3.0 - x[0];
        "quotient", [2.0, 0.5], |x| (x[0] + 1.0) / (x[1] * x[1] + 0.5);
        "exp-ln", [0.4, 1.7], |x| (x[0] * x[1]).exp().ln() + x[1].ln() * x[0];
        "sqrt chain", [3.0, 1.2], |x| (x[0] * x[0] + x[1].exp()).sqrt();
        "tanh", [0.3, -0.8], |x| (x[0] - x[1]).tanh() * x[0];
        "powf", [1.5, 2.3], |x| x[0].powf(x[1]);
        "powi", [0.9, 1.1], |x| x[0].powi(3) - x[1].powi(2) * x[0];
        "softplus high", [4.0, 1.0], |x| (x[0] * x[1]).softplus();
        "softplus low", [-3.0, 0.5], |x| (x[0] - x[1]).softplus();
        "square", [0.7, -1.4], |x| (x[0] + x[1]).square() / (x[0].square() + 1.0);
        "negation", [0.2, 0.9], |x| -(x[0] * x[1]) - (-x[1]).exp();
        "logistic", [0.6, -0.2], |x| (x[0] * 2.0 + x[1]).exp() / ((x[0] * 2.0 + x[1]).exp() + 1.0);
        "gaussian log-density", [0.3, 1.1, 0.6], |x| -(x[2].ln()) - (x[0] - x[1]).square() / (x[2].square() * 2.0);
        "nested exp", [0.1, 0.4], |x| (x[0].exp() * x[1]).exp();
        "select upper", [1.2, 0.5], |x| Scalar::select(x[0].value() > 1.0, x[0] * x[1], x[1] / x[0]);
        "select lower", [0.8, 0.5], |x| Scalar::select(x[0].value() > 1.0, x[0] * x[1], x[1] / x[0]);
        "log-sum-exp", [0.5, -1.0, 2.0], |x| log_sum_exp(x);
        "lgssm step", [0.4, 0.8, 1.1], |x| lgssm_step(x[0], x[1], x[2], 0.37).square();
        "lgssm dmeasure", [0.3, 0.6], |x| lgssm_dmeasure(1.1, x[0], x[1]).unwrap();
        "cholera dmeasure", [120.0, 0.25], |x| cholera_dmeasure(130.0, x[0], x[1]).unwrap();
        "log transform", [0.2, -0.4], |x| Transform::Log.to_natural(x[0]) * Transform::Log.to_natural(x[1]);
        "cholera euler step", [10.0, 0.5, 2.9], |x| {
            let mut p: Vec<_> = cholera.reference_theta().natural().iter().map(|&v| Scalar::constant(v)).collect();
            p[0] = x[0];
            p[3] = x[1];
            p[6] = x[2];
            let mut s: Vec<_> = [5.0e5, 300.0, 1.0e5, 1.0e5, 1.0e5, 0.0].iter().map(|&v| Scalar::constant(v)).collect();
            cholera.euler_step(&mut s, 0.3, 1.0 / 52.0, &p, 0.4).unwrap();
            s[1] * 2.0 + s[5]
        };
    };
    let mut worst: f64 = 0.0;
    let mut worst_name = "";
    let mut numbers = Vec::new();
    for (name, _, ad, fd) in &cases {
        for (a, f) in ad.iter().zip(fd) {
            let rel = (a - f).abs() / f.abs().max(1e-8);
            if rel > worst {
                worst = rel;
                worst_name = name;
            }
            numbers.push(*a);
        }
    }
    // stop-gradient: identical value, zero derivative
    let tape = Tape::new();
    let x = tape.input(1.7);
    let sg = x.stop_gradient();
    let value_ok = sg.value().to_bits() == x.value().to_bits();
    let y = x * sg + (x - sg).exp();
    let g = tape.backward(y).unwrap();
    let ratio_ok = (x - sg).exp().value() == 1.0;
    let deriv_ok = g[0] == 1.7 + 1.0;
    let (_, g0) = gradient(|v: &[Var]| v[0].stop_gradient() * 3.0, &[0.4]).unwrap();
    let zero_ok = g0[0] == 0.0;
    let sg_ok = value_ok && ratio_ok && deriv_ok && zero_ok;
    Outcome {
        pass: cases.len() >= 20 && worst < 1e-6 && sg_ok,
        detail: format!(
            "{} expressions, max rel error {worst:.2e} ({worst_name}); stop-gradient exact: {sg_ok}",
            cases.len()
        ),
        numbers,
    }
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let (model, data, theta) = lgssm_fixture(50, 1);
    let seed = 42;
    let boot = run_bootstrap(&model, &data, &theta, &MopConfig::new(1.0, 500, seed))
        .unwrap()
        .loglik;
    let mut numbers = vec![boot];
    let mut all = true;
    for estimator in [Estimator::BeforeResampling, Estimator::AfterResampling] {
        for alpha in [0.0, 0.5, 0.97, 1.0] {
            let cfg = MopConfig {
                estimator,
                ..MopConfig::new(alpha, 500, seed)
            };
            let ll = run_mop(&model, &data, &theta, &theta, &cfg).unwrap().loglik;
            all &= ll.to_bits() == boot.to_bits();
            numbers.push(ll);
        }
    }
    Outcome {
        pass: all,
        detail: format!("bootstrap loglik {boot:.6}; 8 MOP runs bitwise equal: {all}"),
        numbers,
    }
}

// ---------------------------------------------------------------- 3

/// Closed-form scores by forward tangents. Returns the cloud-average form
/// and the ancestral-path form, both on the unconstrained scale.
fn tangent_scores(
    model: &LgSsm,
    data: &Dataset,
    theta: &Theta,
    jn: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let p = theta.natural();
    let (a, sigma, tau) = (p[0], p[1], p[2]);
    // (x, dx/da, dx/dsigma)
    let mut particles: Vec<[f64; 3]> = (0..jn)
        .map(|j| {
            [
                model.mu0 + model.s0 * StreamKey::new(seed, 0, j as u64, Purpose::Init).normal(0),
                0.0,
                0.0,
            ]
        })
        .collect();
    let mut paths = vec![[0.0f64; 3]; jn];
    let mut cloud = [0.0f64; 3];
    for (i, &y) in data.obs.iter().enumerate() {
        let n = (i + 1) as u64;
        let mut log_g = Vec::with_capacity(jn);
        let mut grads = Vec::with_capacity(jn);
        for (j, part) in particles.iter_mut().enumerate() {
            let z = StreamKey::new(seed, n, j as u64, Purpose::Process).normal(0);
            let [x, da, ds] = *part;
            let xn = a * x + sigma * z;
            *part = [xn, x + a * da, z + a * ds];
            let r = y - xn;
            log_g.push(
                -tau.ln() - r * r / (2.0 * tau * tau) - 0.5 * (2.0 * std::f64::consts::PI).ln(),
            );
            let w = r / (tau * tau);
            grads.push([w * part[1], w * part[2], -1.0 / tau + r * r / tau.powi(3)]);
        }
        let u = StreamKey::new(seed, n, 0, Purpose::Resample).uniform(0);
        let k = systematic_resample(&log_g, u, n as usize).unwrap();
        particles = k.iter().map(|&kj| particles[kj]).collect();
        paths = k
            .iter()
            .map(|&kj| std::array::from_fn(|c| paths[kj][c] + grads[kj][c]))
            .collect();
        for &kj in &k {
            for c in 0..3 {
                cloud[c] += grads[kj][c] / jn as f64;
            }
        }
    }
    let mut ancestral = [0.0; 3];
    for path in &paths {
        for c in 0..3 {
            ancestral[c] += path[c] / jn as f64;
        }
    }
    let chain = |g: [f64; 3]| vec![g[0], sigma * g[1], tau * g[2]];
    (chain(cloud), chain(ancestral))
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn theorem1_fixture() -> (LgSsm, Dataset, Theta) {
    lgssm_fixture(20, 2)
}

fn after(alpha: f64, seed: u64) -> MopConfig {
    MopConfig {
        estimator: Estimator::AfterResampling,
        ..MopConfig::new(alpha, 100, seed)
    }
}

fn criterion_3() -> Outcome {
    let (model, data, theta) = theorem1_fixture();
    let (mut e0, mut e1) = (0.0f64, 0.0f64);
    let mut numbers = Vec::new();
    for seed in 1..=5 {
        let (cloud, ancestral) = tangent_scores(&model, &data, &theta, 100, seed);
        let s0 = mop_score(&model, &data, &theta, &after(0.0, seed))
            .unwrap()
            .score
            .unwrap();
        let s1 = mop_score(&model, &data, &theta, &after(1.0, seed))
            .unwrap()
            .score
            .unwrap();
        e0 = e0.max(max_abs(&s0, &cloud));
        e1 = e1.max(max_abs(&s1, &ancestral));
        numbers.extend(s0.iter().chain(&s1).chain(&cloud).chain(&ancestral));
    }
    Outcome {
        pass: e0 < 1e-8 && e1 < 1e-8,
        detail: format!(
            "5 seeds: discount 0 max abs error {e0:.2e}, discount 1 max abs error {e1:.2e}"
        ),
        numbers,
    }
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let (model, data, theta) = theorem1_fixture();
    let mut worst: f64 = 0.0;
    let mut numbers = Vec::new();
    for alpha in [0.97, 1.0] {
        for seed in 1..=3 {
            let cfg = MopConfig::new(alpha, 100, seed);
            let ad = mop_score(&model, &data, &theta, &cfg)
                .unwrap()
                .score
                .unwrap();
            let fd = fixed_seed_fd_score(&model, &data, &theta, &cfg, 1e-5).unwrap();
            for (a, f) in ad.iter().zip(&fd) {
                worst = worst.max((a - f).abs() / a.abs().max(1e-8));
            }
            numbers.extend(ad.iter().chain(&fd));
        }
    }
    Outcome {
        pass: worst < 1e-4,
        detail: format!("alpha in {{0.97, 1}}, 3 seeds: max rel error {worst:.2e}"),
        numbers,
    }
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let (model, data, theta) = lgssm_fixture(100, 5);
    let exact = kalman(&model, &data, &theta);
    let seeds = replicate_seeds(500, 20);
    let mut mean_abs = Vec::new();
    let mut last = (0.0, 0.0);
    let mut numbers = vec![exact];
    for jn in [100, 1000, 10_000] {
        let errs: Vec<f64> = seeds
            .iter()
            .map(|&s| {
                run_bootstrap(&model, &data, &theta, &MopConfig::new(1.0, jn, s))
                    .unwrap()
                    .loglik
                    - exact
            })
            .collect();
        numbers.extend(&errs);
        mean_abs.push(errs.iter().map(|e| e.abs()).sum::<f64>() / errs.len() as f64);
        let (m, sd) = mean_sd(&errs);
        last = (m, sd / (errs.len() as f64).sqrt());
    }
    let monotone = mean_abs.windows(2).all(|w| w[1] < w[0]);
    let within = last.0.abs() <= 3.0 * last.1;
    Outcome {
        pass: monotone && within,
        detail: format!(
            "mean |error| over J = 1e2, 1e3, 1e4: {:.4}, {:.4}, {:.4}; J = 1e4 mean error {:.4} (SE {:.4})",
            mean_abs[0], mean_abs[1], mean_abs[2], last.0, last.1
        ),
        numbers,
    }
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let (model, data, theta) = lgssm_fixture(50, 6);
    let exact = kalman_score_fd(&model, &data, &theta, 1e-5).unwrap();
    let seeds = replicate_seeds(600, 20);
    let mut mse = Vec::new();
    let mut numbers = exact.clone();
    for jn in [100, 1000, 10_000] {
        let errs: Vec<f64> = seeds
            .iter()
            .map(|&s| {
                let sc = mop_score(&model, &data, &theta, &MopConfig::new(1.0, jn, s))
                    .unwrap()
                    .score
                    .unwrap();
                numbers.extend(&sc);
                sc.iter()
                    .zip(&exact)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
            })
            .collect();
        mse.push(errs.iter().sum::<f64>() / errs.len() as f64);
    }
    Outcome {
        pass: mse.windows(2).all(|w| w[1] < w[0]),
        detail: format!(
            "score MSE over J = 1e2, 1e3, 1e4: {:.4}, {:.4}, {:.4}",
            mse[0], mse[1], mse[2]
        ),
        numbers,
    }
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let (model, data, theta) = lgssm_fixture(100, 7);
    let reference = kalman_score_fd(&model, &data, &theta, 1e-5).unwrap();
    let alphas = [0.0, 0.9, 0.97, 1.0];
    let replicates = 100;
    let seeds = replicate_seeds(700, replicates);
    let rows = score_sweep(
        &model,
        &data,
        &theta,
        &alphas,
        &MopConfig::new(1.0, 1000, 0),
        &seeds,
        &reference,
    )
    .unwrap();
    let p = theta.len();
    let at = |a: usize, c: usize| &rows[a * p + c];
    let se_var = |v: f64| v * (2.0 / (replicates as f64 - 1.0)).sqrt();
    let mut variance_ok = true;
    for c in 0..p {
        for a in 1..alphas.len() {
            let (lo, hi) = (at(a - 1, c).variance, at(a, c).variance);
            let slack = 2.0 * (se_var(lo).powi(2) + se_var(hi).powi(2)).sqrt();
            variance_ok &= hi >= lo - slack;
        }
    }
    let last = alphas.len() - 1;
    let interior: Vec<String> = (0..p)
        .filter(|&c| {
            (1..last).any(|a| at(a, c).mse < at(0, c).mse && at(a, c).mse < at(last, c).mse)
        })
        .map(|c| at(0, c).coord.clone())
        .collect();
    let numbers = rows
        .iter()
        .flat_map(|r| [r.mean, r.bias, r.variance, r.mse])
        .collect();
    let mse = |c: usize| {
        (0..alphas.len())
            .map(|a| format!("{:.1}", at(a, c).mse))
            .collect::<Vec<_>>()
            .join("/")
    };
    let table = (0..p)
        .map(|c| format!("{} {}", at(0, c).coord, mse(c)))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome {
        pass: variance_ok && !interior.is_empty(),
        detail: format!(
            "variance nondecreasing in alpha (2 SE): {variance_ok}; MSE at alpha 0/0.9/0.97/1: {table}; interior minimum for {interior:?}"
        ),
        numbers,
    }
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let (model, data, theta) = theorem1_fixture();
    let mut worst: f64 = 0.0;
    let mut numbers = Vec::new();
    for seed in 1..=5 {
        let zero = mop_score(&model, &data, &theta, &after(0.0, seed))
            .unwrap()
            .score
            .unwrap();
        let lag1 = MopConfig {
            truncation_lag: Some(1),
            ..after(1.0, seed)
        };
        let trunc = mop_score(&model, &data, &theta, &lag1)
            .unwrap()
            .score
            .unwrap();
        worst = worst.max(max_abs(&zero, &trunc));
        numbers.extend(zero.iter().chain(&trunc));
    }
    Outcome {
        pass: worst < 1e-8,
        detail: format!("lag-1 truncation vs discount 0, 5 seeds: max abs difference {worst:.2e}"),
        numbers,
    }
}

// ---------------------------------------------------------------- 9

/// `l(u) = -1/2 sum_i lambda_i (u_i - c_i)^2`, exact score.
struct Quadratic {
    curvature: Vec<f64>,
    center: Vec<f64>,
}

impl Quadratic {
    fn loglik(&self, u: &[f64]) -> f64 {
        -0.5 * u
            .iter()
            .zip(&self.center)
            .zip(&self.curvature)
            .map(|((x, c), l)| l * (x - c).powi(2))
            .sum::<f64>()
    }
}

impl ScoreSource for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn loglik_score(&self, u: &[f64], _seed: u64) -> ifad::Result<(f64, Vec<f64>)> {
        let g = u
            .iter()
            .zip(&self.center)
            .zip(&self.curvature)
            .map(|((x, c), l)| -l * (x - c))
            .collect();
        Ok((self.loglik(u), g))
    }
}

fn criterion_9a() -> (bool, String, Vec<f64>) {
    let (gamma, big_gamma, beta, c) = (0.5, 4.0, 0.5, 1.0);
    let q = Quadratic {
        curvature: vec![gamma, 1.0, 2.5, big_gamma],
        center: vec![1.0, -2.0, 0.5, 3.0],
    };
    let eta = c * (1.0 - beta) / (2.0 * big_gamma);
    let factor = 1.0 - eta * beta * 8.0 * gamma / (9.0 * c);
    let cfg = IfadConfig {
        learning_rate: eta,
        max_iterations: 200,
        stop_epsilon: 1e-300,
        ..IfadConfig::default()
    };
    let u0 = vec![-3.0, 4.0, 2.0, -1.0];
    let out = run_stage2(&q, &u0, &cfg, 0, &|u| Ok(q.loglik(u))).unwrap();
    let gaps: Vec<f64> = out.iterates.iter().map(|u| -q.loglik(u)).collect();
    let worst = gaps.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    (
        worst <= factor && gaps.len() > 100,
        format!(
            "{} steps, worst gap ratio {worst:.5} <= bound {factor:.5}",
            gaps.len() - 1
        ),
        gaps,
    )
}

fn criterion_9() -> Outcome {
    let (ok_a, detail_a, mut numbers) = criterion_9a();
    let (model, data, truth) = lgssm_fixture(100, 9);
    let (mle, mle_ll) = kalman_mle(&model, &data, &truth, &[true; 3]).unwrap();
    let spec = CampaignSpec {
        starts: 20,
        bounds: vec![(0.0, 0.95), (0.3, 2.5), (0.1, 1.5)],
        free: vec![true; 3],
        schedule: CoolingSchedule::shared(3, 0.02, 0.95).unwrap(),
        ifad: IfadConfig {
            warm_start_iterations: 40,
            max_iterations: 30,
            learning_rate: 5e-4,
            particles: 1000,
            alpha: 0.97,
            ..IfadConfig::default()
        },
        seed: 99,
    };
    let evaluate =
        |t: &Theta| -> ifad::Result<f64> { kalman_loglik(&data, &KalmanParams::new(&model, t)) };
    let campaign = search_campaign(&model, &data, &truth, &spec, &evaluate).unwrap();
    let best = campaign
        .best(SearchMethod::Ifad)
        .map_or(f64::NEG_INFINITY, |r| r.loglik);
    let paired = campaign.paired_summary();
    numbers.extend(mle.natural());
    numbers.push(mle_ll);
    for r in &campaign.results {
        numbers.push(r.loglik);
        numbers.extend(&r.theta);
    }
    let ok_b = mle_ll - best <= 0.2
        && paired.pairs == spec.starts
        && paired.fraction_not_worse >= 0.6
        && paired.median_improvement > 0.0;
    Outcome {
        pass: ok_a && ok_b,
        detail: format!(
            "(a) {detail_a}; (b) MLE loglik {mle_ll:.3}, best IFAD {best:.3} (gap {:.3}), IFAD >= IF2 in {}/{}, median improvement {:.3}, {} failed",
            mle_ll - best,
            paired.ifad_not_worse,
            paired.pairs,
            paired.median_improvement,
            campaign.n_failed()
        ),
        numbers,
    }
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let mut numbers = Vec::new();
    let mut pou: f64 = 0.0;
    for i in 0..100 {
        let t = -1.3 + 0.0371 * i as f64;
        let s: f64 = (1..=6).map(|j| spline_basis(t, j).unwrap()).sum();
        pou = pou.max((s - 1.0).abs());
    }
    // Jacobian of one Euler step with respect to all 18 parameters.
    let model = Cholera::new(1.0 / 365.25, Covariate::constant(1.0e6));
    let lo = [5.0, 0.5, 0.1, 0.1, 0.05, -0.05];
    let hi = [20.0, 3.0, 1.0, 1.0, 0.5, 0.05];
    let mut worst: f64 = 0.0;
    for r in 0..5u64 {
        let key = StreamKey::new(10, 0, r, Purpose::Init);
        let theta: Vec<f64> = (0..18)
            .map(|i| {
                let u = key.uniform(i as u64);
                match i {
                    0..=5 => lo[i] + (hi[i] - lo[i]) * u,
                    6..=11 => 1.5 + 2.5 * u,
                    _ => -11.0 + 4.0 * u,
                }
            })
            .collect();
        let state0 = [5.0e5, 2.0e3, 1.5e5, 1.5e5, 1.5e5, 10.0];
        let t = key.uniform(20);
        let z = key.normal(21);
        let step = |p: &[f64]| -> Vec<f64> {
            let mut s = state0.to_vec();
            model.euler_step(&mut s, t, model.dt, p, z).unwrap();
            s
        };
        for out in 0..6 {
            let tape = Tape::new();
            let vars: Vec<Var> = theta.iter().map(|&v| tape.input(v)).collect();
            let mut s: Vec<Var> = state0.iter().map(|&v| Var::constant(v)).collect();
            model.euler_step(&mut s, t, model.dt, &vars, z).unwrap();
            let ad = tape.backward(s[out]).unwrap();
            let fd: Vec<f64> = (0..18)
                .map(|i| {
                    let h = 1e-6 * theta[i].abs().max(1.0);
                    let f = |p: &[f64]| step(p)[out];
                    fd5(&f, &theta, i, h)
                })
                .collect();
            let norm = ad.iter().map(|x| x * x).sum::<f64>().sqrt();
            let err = ad
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 {
                worst = worst.max(err / norm);
            }
            numbers.extend(&ad);
        }
    }
    // simulate ten years of monthly data, then fit from the truth
    let fit_model = Cholera::new(1.0 / 36.0, Covariate::constant(1.0e6));
    let truth = fit_model.reference_theta();
    let times: Vec<f64> = (1..=120).map(|i| i as f64 / 12.0).collect();
    let data = simulate(&fit_model, &truth, &times, 1010).unwrap().data;
    let eval_cfg = MopConfig::new(1.0, 2000, 0x5eed);
    let evaluate = |t: &Theta| -> ifad::Result<f64> {
        Ok(run_bootstrap(&fit_model, &data, t, &eval_cfg)?.loglik)
    };
    let truth_ll = evaluate(&truth).unwrap();
    let cfg = IfadConfig {
        warm_start_iterations: 20,
        max_iterations: 30,
        particles: 500,
        learning_rate: 1e-6,
        ..IfadConfig::default()
    };
    let problem = Problem::new(&fit_model, &data, truth.clone(), cfg.alpha, cfg.particles);
    let swarm0 = ParameterSwarm::replicate(&truth, cfg.particles);
    let schedule = CoolingSchedule::scaled(0.02, &fit_model.rw_magnitudes(), 0.95).unwrap();
    let out = run_ifad(&problem, &swarm0, &cfg, &schedule, 1011, Some(&evaluate)).unwrap();
    numbers.push(truth_ll);
    numbers.push(out.loglik);
    numbers.extend(out.theta_hat.natural());
    let fit_ok = out.loglik >= truth_ll - 5.0;
    Outcome {
        pass: pou < 1e-10 && worst < 1e-4 && fit_ok,
        detail: format!(
            "partition of unity max error {pou:.1e}; step Jacobian max rel error {worst:.1e}; fit loglik {:.2} vs truth {truth_ll:.2}",
            out.loglik
        ),
        numbers,
    }
}

// ---------------------------------------------------------------- 11

fn criterion_11() -> Outcome {
    let (model, data, truth) = lgssm_fixture(50, 11);
    let free = [true, false, true];
    let coords = [0usize, 2];
    let schedule = CoolingSchedule::shared(3, 0.02, 0.95)
        .unwrap()
        .masked(&free);
    let swarm = run_if2(
        &model,
        &data,
        &ParameterSwarm::replicate(&truth, 500),
        &schedule,
        20,
        1100,
    )
    .unwrap()
    .swarm;
    let prior = kde_fit_swarm(&swarm, &coords).unwrap();
    let target = MopPosterior {
        model: &model,
        data: &data,
        base: truth.clone(),
        coords: coords.to_vec(),
        prior: Some(prior.clone()),
        mop: MopConfig::new(0.97, 200, 0),
    };
    let cfg = NutsConfig {
        chains: 4,
        iterations: 500,
        warmup: 500,
        ..NutsConfig::default()
    };
    let starts: Vec<Vec<f64>> = (0..4)
        .map(|c| coords.iter().map(|&i| swarm.rows[c * 100][i]).collect())
        .collect();
    let set = nuts_sample(&target, &starts, &cfg, 1101).unwrap();
    let r: Vec<f64> = (0..2).map(|c| rhat(&set.coordinate(c)).unwrap()).collect();
    let bounds: Vec<(f64, f64)> = (0..2)
        .map(|c| {
            let (m, s) = (set.mean(c), set.sd(c));
            (m - 8.0 * s, m + 8.0 * s)
        })
        .collect();
    let grid = grid_posterior(&model, &data, &truth, &coords, Some(&prior), &bounds, 201).unwrap();
    let (gm, gs) = (grid.mean(), grid.sd());
    let z: Vec<f64> = (0..2)
        .map(|c| (set.mean(c) - gm[c]).abs() / gs[c])
        .collect();
    let mut numbers: Vec<f64> = set.draws.iter().flatten().flatten().copied().collect();
    numbers.extend(&r);
    Outcome {
        pass: r.iter().all(|&x| x < 1.1) && z.iter().all(|&x| x < 3.0),
        detail: format!(
            "rhat {:.3}, {:.3}; |mean - grid mean| / grid sd {:.2}, {:.2}; {} divergences",
            r[0],
            r[1],
            z[0],
            z[1],
            set.total_divergences()
        ),
        numbers,
    }
}

// ---------------------------------------------------------------- driver

type Criterion = (u32, &'static str, fn() -> Outcome, Duration);

fn criteria() -> Vec<Criterion> {
    let s = Duration::from_secs;
    vec![
        (1, "AD correctness", criterion_1 as fn() -> Outcome, s(1)),
        (2, "reduction to the bootstrap filter", criterion_2, s(5)),
        (3, "score identities", criterion_3, s(5)),
        (
            4,
            "smoothness of the fixed-seed estimate",
            criterion_4,
            s(10),
        ),
        (5, "likelihood consistency", criterion_5, s(120)),
        (6, "score consistency", criterion_6, s(120)),
        (7, "bias-variance tradeoff", criterion_7, s(300)),
        (8, "lag-1 truncation equals discount 0", criterion_8, s(5)),
        (9, "IFAD optimization", criterion_9, s(600)),
        (10, "cholera model plumbing", criterion_10, s(600)),
        (11, "Bayes end-to-end", criterion_11, s(900)),
    ]
}

fn selected() -> Option<Vec<u32>> {
    std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect())
}

/// Writes past the test harness capture so results show without `--nocapture`.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

#[test]
fn acceptance() {
    let only = selected();
    let wanted = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut lines = Vec::new();
    let mut all_pass = true;
    let mut fingerprints = Vec::new();
    for (id, name, run, limit) in criteria() {
        if !wanted(id) {
            continue;
        }
        let clock = Instant::now();
        let out = run();
        let elapsed = clock.elapsed();
        let pass = out.pass && elapsed < limit;
        all_pass &= pass;
        let line = format!(
            "criterion {id:>2} {}: {name}: {} [{:.2}s, limit {}s]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
        report(&line);
        lines.push(line);
        fingerprints.push((id, run, out.numbers));
    }
    if wanted(12) {
        let threads = rayon::current_num_threads() + 3;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let mut mismatched = Vec::new();
        for (id, run, numbers) in &fingerprints {
            let again = pool.install(run).numbers;
            let same = again.len() == numbers.len()
                && again
                    .iter()
                    .zip(numbers)
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                mismatched.push(*id);
            }
        }
        let pass = mismatched.is_empty() && !fingerprints.is_empty();
        all_pass &= pass;
        let line = format!(
            "criterion 12 {}: determinism: {} criteria rerun with {threads} threads (first run {}), mismatches: {mismatched:?}",
            if pass { "PASS" } else { "FAIL" },
            fingerprints.len(),
            rayon::current_num_threads()
        );
        report(&line);
        lines.push(line);
    }
    assert!(all_pass, "failed criteria:\n{}", lines.join("\n"));
}
