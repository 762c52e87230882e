//! Checks the AD score of the off-parameter filter against closed forms
//! obtained by carrying state tangents along every particle.
//!
//! With `alpha = 0` the score is the average over the filtering cloud of the
//! total derivative of `log g(y_n | x_n; theta)`, summed over `n`. With
//! `alpha = 1` it is the same average taken along each surviving lineage.

use serde::Serialize;

use crate::error::Result;
use crate::mop::{mop_score, Estimator, MopConfig};
use crate::pomp::{lgssm_dmeasure, lgssm_step, simulate, Dataset, LgSsm, Theta};
use crate::prng::{Purpose, StreamKey};
use crate::resample::offparam_indices;

/// Largest per-coordinate absolute error allowed by [`run_selftest`].
pub const TOLERANCE: f64 = 1e-8;

/// Which closed form to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lineage {
    /// Sum over steps of the cloud average.
    Cloud,
    /// Cloud average of the sums along each final ancestral path.
    Ancestral,
}

/// Score of the linear-Gaussian model on the unconstrained scale from
/// explicit tangents, replaying the filter's random numbers.
pub fn tangent_score(
    model: &LgSsm,
    data: &Dataset,
    theta: &Theta,
    particles: usize,
    seed: u64,
    lineage: Lineage,
) -> Result<Vec<f64>> {
    let p = theta.natural();
    let (a, sigma, tau) = (p[LgSsm::A], p[LgSsm::SIGMA], p[LgSsm::TAU]);
    let jn = particles;
    let mut x: Vec<f64> = (0..jn)
        .map(|j| model.mu0 + model.s0 * StreamKey::new(seed, 0, j as u64, Purpose::Init).normal(0))
        .collect();
    // d x / d (a, sigma)
    let mut dx = vec![[0.0; 2]; jn];
    let mut lineage_sum = vec![[0.0; 3]; jn];
    let mut total = [0.0; 3];
    for (i, &y) in data.obs.iter().enumerate() {
        let n = i + 1;
        let mut lg = Vec::with_capacity(jn);
        let mut grad = Vec::with_capacity(jn);
        for j in 0..jn {
            let z = StreamKey::new(seed, n as u64, j as u64, Purpose::Process).normal(0);
            let prev = x[j];
            x[j] = lgssm_step(prev, a, sigma, z);
            dx[j] = [prev + a * dx[j][0], z + a * dx[j][1]];
            lg.push(lgssm_dmeasure(y, x[j], tau)?);
            let r = y - x[j];
            let dldx = r / (tau * tau);
            grad.push([
                dldx * dx[j][0],
                dldx * dx[j][1],
                -1.0 / tau + r * r / (tau * tau * tau),
            ]);
        }
        let k = offparam_indices(&lg, StreamKey::new(seed, n as u64, 0, Purpose::Resample))?;
        x = k.iter().map(|&kj| x[kj]).collect();
        dx = k.iter().map(|&kj| dx[kj]).collect();
        lineage_sum = k
            .iter()
            .map(|&kj| {
                let (s, g) = (lineage_sum[kj], grad[kj]);
                [s[0] + g[0], s[1] + g[1], s[2] + g[2]]
            })
            .collect();
        if lineage == Lineage::Cloud {
            for &kj in &k {
                for c in 0..3 {
                    total[c] += grad[kj][c] / jn as f64;
                }
            }
        }
    }
    if lineage == Lineage::Ancestral {
        for s in &lineage_sum {
            for c in 0..3 {
                total[c] += s[c] / jn as f64;
            }
        }
    }
    Ok(vec![total[0], sigma * total[1], tau * total[2]])
}

/// One comparison of the suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub seed: u64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<IdentityCheck>,
    pub tolerance: f64,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks
            .iter()
            .all(|c| c.max_abs_error <= self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.max_abs_error)
            .fold(0.0, f64::max)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// The linear-Gaussian fixture: 20 observations simulated at
/// `(a, sigma, tau) = (0.8, 1, 0.5)`.
pub fn fixture() -> Result<(LgSsm, Dataset, Theta)> {
    let model = LgSsm::new(0.0, 1.0);
    let theta = model.theta(0.8, 1.0, 0.5)?;
    let times: Vec<f64> = (1..=20).map(f64::from).collect();
    let data = simulate(&model, &theta, &times, 2024)?.data;
    Ok((model, data, theta))
}

/// Runs the identity suite on [`fixture`] with `J = 100` for each of `seeds`:
/// discount 0 against the cloud form, discount 1 against the ancestral form,
/// and lag-one truncation against discount 0.
pub fn run_selftest(seeds: &[u64]) -> Result<SelftestReport> {
    let (model, data, theta) = fixture()?;
    let jn = 100;
    let mut checks = Vec::new();
    for &seed in seeds {
        let cfg = MopConfig {
            estimator: Estimator::AfterResampling,
            ..MopConfig::new(0.0, jn, seed)
        };
        let mop0 = mop_score(&model, &data, &theta, &cfg)?
            .score
            .unwrap_or_default();
        let mop1 = mop_score(&model, &data, &theta, &cfg.with_alpha(1.0))?
            .score
            .unwrap_or_default();
        let lag1 = mop_score(
            &model,
            &data,
            &theta,
            &MopConfig {
                truncation_lag: Some(1),
                alpha: 1.0,
                ..cfg.clone()
            },
        )?
        .score
        .unwrap_or_default();
        let cloud = tangent_score(&model, &data, &theta, jn, seed, Lineage::Cloud)?;
        let ancestral = tangent_score(&model, &data, &theta, jn, seed, Lineage::Ancestral)?;
        checks.push(IdentityCheck {
            name: "discount 0 vs cloud tangents",
            seed,
            max_abs_error: max_abs_diff(&mop0, &cloud),
        });
        checks.push(IdentityCheck {
            name: "discount 1 vs ancestral tangents",
            seed,
            max_abs_error: max_abs_diff(&mop1, &ancestral),
        });
        checks.push(IdentityCheck {
            name: "lag-1 truncation vs discount 0",
            seed,
            max_abs_error: max_abs_diff(&lag1, &mop0),
        });
    }
    Ok(SelftestReport {
        checks,
        tolerance: TOLERANCE,
    })
}
