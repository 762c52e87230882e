//! Exact references for the linear-Gaussian model: the Kalman filter
//! likelihood, its maximizer and a quadrature posterior.

use crate::bayes::KdePrior;
use crate::error::{Error, Result};
use crate::pomp::{Dataset, LgSsm, Model, Theta};

/// Gaussian filtering distribution of the latent state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub mean: f64,
    pub variance: f64,
}

/// Parameters of the scalar linear-Gaussian model on the natural scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanParams {
    pub a: f64,
    pub sigma: f64,
    pub tau: f64,
    pub mu0: f64,
    pub s0: f64,
}

impl KalmanParams {
    pub fn new(model: &LgSsm, theta: &Theta) -> Self {
        let p = theta.natural();
        KalmanParams {
            a: p[LgSsm::A],
            sigma: p[LgSsm::SIGMA],
            tau: p[LgSsm::TAU],
            mu0: model.mu0,
            s0: model.s0,
        }
    }
}

/// Exact log-likelihood `sum_n log N(y_n; predicted mean, predicted var + tau^2)`.
pub fn kalman_loglik(data: &Dataset, params: &KalmanParams) -> Result<f64> {
    Ok(kalman_filter(data, params)?.0)
}

/// Log-likelihood and the filtering distributions after each observation.
pub fn kalman_filter(data: &Dataset, params: &KalmanParams) -> Result<(f64, Vec<KalmanState>)> {
    // the standard deviations enter only through their squares
    let KalmanParams {
        a,
        sigma,
        tau,
        mu0,
        s0,
    } = *params;
    let mut state = KalmanState {
        mean: mu0,
        variance: s0 * s0,
    };
    let mut ll = 0.0;
    let mut states = Vec::with_capacity(data.len());
    for (n, &y) in data.obs.iter().enumerate() {
        let mean = a * state.mean;
        let var = a * a * state.variance + sigma * sigma;
        let total = var + tau * tau;
        if !(total > 0.0) {
            return Err(Error::Numerical(format!(
                "observation {} has zero predictive variance",
                n + 1
            )));
        }
        let r = y - mean;
        ll += -0.5 * (2.0 * std::f64::consts::PI * total).ln() - r * r / (2.0 * total);
        let gain = var / total;
        state = KalmanState {
            mean: mean + gain * r,
            variance: var * (1.0 - gain),
        };
        states.push(state);
    }
    Ok((ll, states))
}

fn loglik_at(model: &LgSsm, data: &Dataset, theta: &Theta) -> Result<f64> {
    kalman_loglik(data, &KalmanParams::new(model, theta))
}

fn loglik_unconstrained(model: &LgSsm, data: &Dataset, u: &[f64]) -> Result<f64> {
    let theta = Theta::from_unconstrained(model.space().clone(), u)?;
    loglik_at(model, data, &theta)
}

/// Central-difference gradient of the exact log-likelihood in unconstrained
/// coordinates.
pub fn kalman_score_fd(model: &LgSsm, data: &Dataset, theta: &Theta, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::usage("finite-difference step must be positive"));
    }
    let u = theta.unconstrained();
    (0..u.len())
        .map(|i| {
            let mut up = u.clone();
            up[i] += h;
            let mut down = u.clone();
            down[i] -= h;
            Ok((loglik_unconstrained(model, data, &up)?
                - loglik_unconstrained(model, data, &down)?)
                / (2.0 * h))
        })
        .collect()
}

/// Maximizes the exact log-likelihood over the coordinates flagged in `free`
/// by damped Newton iterations with finite-difference derivatives.
pub fn kalman_mle(
    model: &LgSsm,
    data: &Dataset,
    start: &Theta,
    free: &[bool],
) -> Result<(Theta, f64)> {
    let idx: Vec<usize> = (0..start.len())
        .filter(|&i| free.get(i).copied().unwrap_or(true))
        .collect();
    let mut u = start.unconstrained();
    let f = |v: &[f64]| loglik_unconstrained(model, data, v);
    let h = 1e-4;
    let mut ll = f(&u)?;
    for _ in 0..500 {
        let k = idx.len();
        let mut grad = vec![0.0; k];
        let mut hess = nalgebra::DMatrix::zeros(k, k);
        for (a, &i) in idx.iter().enumerate() {
            let mut up = u.clone();
            up[i] += h;
            let mut down = u.clone();
            down[i] -= h;
            let (fu, fd) = (f(&up)?, f(&down)?);
            grad[a] = (fu - fd) / (2.0 * h);
            hess[(a, a)] = (fu - 2.0 * ll + fd) / (h * h);
            for (b, &j) in idx.iter().enumerate().take(a) {
                let mut pp = u.clone();
                pp[i] += h;
                pp[j] += h;
                let mut pm = u.clone();
                pm[i] += h;
                pm[j] -= h;
                let mut mp = u.clone();
                mp[i] -= h;
                mp[j] += h;
                let mut mm = u.clone();
                mm[i] -= h;
                mm[j] -= h;
                let v = (f(&pp)? - f(&pm)? - f(&mp)? + f(&mm)?) / (4.0 * h * h);
                hess[(a, b)] = v;
                hess[(b, a)] = v;
            }
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < 1e-8 {
            break;
        }
        let g = nalgebra::DVector::from_vec(grad.clone());
        let neg = -hess;
        let direction = match neg.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => g.clone(),
        };
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-12 {
            let mut cand = u.clone();
            for (a, &i) in idx.iter().enumerate() {
                cand[i] += step * direction[a];
            }
            if let Ok(v) = f(&cand) {
                if v >= ll {
                    let moved = direction.norm() * step;
                    u = cand;
                    ll = v;
                    improved = true;
                    if moved < 1e-10 {
                        step = 0.0;
                    }
                    break;
                }
            }
            step *= 0.5;
        }
        if !improved || step == 0.0 {
            break;
        }
    }
    let theta = Theta::from_unconstrained(model.space().clone(), &u)?;
    Ok((theta, ll))
}

/// Posterior mass on a tensor grid over one or two unconstrained
/// coordinates, with the remaining parameters held at their base values.
#[derive(Debug, Clone)]
pub struct GridPosterior {
    pub coords: Vec<usize>,
    pub axes: Vec<Vec<f64>>,
    /// Normalized masses in row-major order over `axes`.
    pub mass: Vec<f64>,
}

impl GridPosterior {
    fn points(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        let n1 = self.axes.get(1).map_or(1, Vec::len);
        self.mass.iter().enumerate().map(move |(k, &m)| {
            let (i, j) = (k / n1, k % n1);
            let mut p = vec![self.axes[0][i]];
            if self.axes.len() == 2 {
                p.push(self.axes[1][j]);
            }
            (p, m)
        })
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.axes.len()];
        for (p, w) in self.points() {
            for (mi, pi) in m.iter_mut().zip(p) {
                *mi += w * pi;
            }
        }
        m
    }

    pub fn sd(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut v = vec![0.0; self.axes.len()];
        for (p, w) in self.points() {
            for ((vi, pi), mi) in v.iter_mut().zip(p).zip(&mean) {
                *vi += w * (pi - mi) * (pi - mi);
            }
        }
        v.into_iter().map(f64::sqrt).collect()
    }
}

fn trapezoid_weights(n: usize, step: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i == 0 || i + 1 == n {
                0.5 * step
            } else {
                step
            }
        })
        .collect()
}

/// Quadrature posterior of the free coordinates `coords` (unconstrained)
/// with optional KDE prior over those coordinates; `bounds` are per-coordinate
/// `(lo, hi)` on the unconstrained scale.
pub fn grid_posterior(
    model: &LgSsm,
    data: &Dataset,
    base: &Theta,
    coords: &[usize],
    prior: Option<&KdePrior>,
    bounds: &[(f64, f64)],
    resolution: usize,
) -> Result<GridPosterior> {
    if coords.is_empty() || coords.len() > 2 {
        return Err(Error::usage(
            "grid posterior supports one or two parameters",
        ));
    }
    if bounds.len() != coords.len() {
        return Err(Error::usage("one bound pair per coordinate is required"));
    }
    if resolution < 50 {
        return Err(Error::usage("grid resolution must be at least 50"));
    }
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            (0..resolution)
                .map(|i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64)
                .collect()
        })
        .collect();
    let weights: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| trapezoid_weights(resolution, (hi - lo) / (resolution - 1) as f64))
        .collect();
    let u0 = base.unconstrained();
    let n1 = if coords.len() == 2 { resolution } else { 1 };
    let mut logpost = Vec::with_capacity(resolution * n1);
    for i in 0..resolution {
        for j in 0..n1 {
            let mut u = u0.clone();
            let mut point = vec![axes[0][i]];
            u[coords[0]] = axes[0][i];
            let mut w = weights[0][i];
            if coords.len() == 2 {
                u[coords[1]] = axes[1][j];
                point.push(axes[1][j]);
                w *= weights[1][j];
            }
            let mut lp = loglik_unconstrained(model, data, &u)?;
            if let Some(prior) = prior {
                lp += prior.logpdf(&point);
            }
            logpost.push(lp + w.ln());
        }
    }
    let max = logpost.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut mass: Vec<f64> = logpost.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= total);
    Ok(GridPosterior {
        coords: coords.to_vec(),
        axes,
        mass,
    })
}
