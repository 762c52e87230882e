//! Stochastic SIRS cholera transmission model with three graded immunity
//! classes, seasonal transmission and an environmental reservoir.
//!
//! State `(S, I, R1, R2, R3, M)`, where `M` accumulates `gamma * I dt` over the
//! current observation interval and is the mean of the monthly death count.
//! The dynamics are integrated by Euler-Maruyama:
//!
//! ```text
//! lambda = exp(beta_trend (t - t0) + sum_j beta_j s_j(t)) I / P + exp(sum_j omega_j s_j(t))
//! dS  = (k eps R3 + delta (P - S) - lambda S) dt + dP - (sigma S I / P) dB
//! dI  = (lambda S - (m + delta + gamma) I) dt + (sigma S I / P) dB
//! dR1 = (gamma I - (k eps + delta) R1) dt
//! dRi = (k eps R(i-1) - (k eps + delta) Ri) dt,   i = 2, 3
//! dM  = gamma I dt
//! ```
//!
//! with `k = 3`, `delta = 0.02` per year and `s_1..s_6` periodic cubic
//! B-splines with period one year.

use std::f64::consts::PI;
use std::sync::Arc;

use super::{Model, ParamSpace, Theta, Transform};
use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::prng::StreamKey;

/// Estimated parameters, in order.
pub const CHOLERA_PARAMS: [&str; 18] = [
    "gamma",
    "eps",
    "m",
    "sigma",
    "tau",
    "beta_trend",
    "beta1",
    "beta2",
    "beta3",
    "beta4",
    "beta5",
    "beta6",
    "omega1",
    "omega2",
    "omega3",
    "omega4",
    "omega5",
    "omega6",
];

pub const CHOLERA_STATES: [&str; 6] = ["S", "I", "R1", "R2", "R3", "M"];

const GAMMA: usize = 0;
const EPS: usize = 1;
const MORT: usize = 2;
const SIGMA: usize = 3;
const TAU: usize = 4;
const TREND: usize = 5;
const BETA: usize = 6;
const OMEGA: usize = 12;

const DELTA: f64 = 0.02;
const IMMUNE_CLASSES: f64 = 3.0;
const NUM_SPLINES: usize = 6;

/// Compartments are kept above this by a smooth clamp.
const COMPARTMENT_FLOOR: f64 = 1e-10;
/// Width of the softplus transition of the clamp.
const CLAMP_SCALE: f64 = 1e-10;
/// The measurement sd is `tau * max(M, MEASUREMENT_FLOOR)`.
const MEASUREMENT_FLOOR: f64 = 1.0;

/// `j`-th (1-based) normalized periodic cubic B-spline on a one-year period
/// with six equally spaced knots.
pub fn spline_basis(t: f64, j: usize) -> Result<f64> {
    if !(1..=NUM_SPLINES).contains(&j) {
        return Err(Error::usage(format!(
            "spline index {j} outside 1..={NUM_SPLINES}"
        )));
    }
    let k = NUM_SPLINES as f64;
    let v = (t * k - (j - 1) as f64).rem_euclid(k);
    Ok(cardinal_cubic(v))
}

/// Cubic B-spline with integer knots 0..4.
fn cardinal_cubic(u: f64) -> f64 {
    if u < 1.0 {
        u * u * u / 6.0
    } else if u < 2.0 {
        (((-3.0 * u + 12.0) * u - 12.0) * u + 4.0) / 6.0
    } else if u < 3.0 {
        (((3.0 * u - 24.0) * u + 60.0) * u - 44.0) / 6.0
    } else if u < 4.0 {
        (4.0 - u).powi(3) / 6.0
    } else {
        0.0
    }
}

fn splines(t: f64) -> [f64; NUM_SPLINES] {
    std::array::from_fn(|j| spline_basis(t, j + 1).expect("index in range"))
}

/// Piecewise-linear covariate series, held constant outside its range.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Covariate {
    pub fn constant(value: f64) -> Self {
        Covariate {
            times: vec![0.0],
            values: vec![value],
        }
    }

    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::usage(
                "covariate needs matching, non-empty time and value columns",
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::usage("covariate times must be strictly increasing"));
        }
        Ok(Covariate { times, values })
    }

    pub fn at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let i = self.times.partition_point(|&s| s <= t);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

/// Gaussian log-density of `y` with mean `m` and sd `tau * max(m, 1)`.
pub fn cholera_dmeasure<R: Scalar>(y: f64, m: R, tau: R) -> Result<R> {
    if !(tau.value() > 0.0) {
        return Err(Error::ParameterDomain {
            name: "tau".into(),
            value: tau.value(),
        });
    }
    let scale = R::select(
        m.value() > MEASUREMENT_FLOOR,
        m,
        R::constant(MEASUREMENT_FLOOR),
    );
    let sd = tau * scale;
    let resid = -m + y;
    Ok(-sd.ln() - resid.square() / (sd.square() * 2.0) - 0.5 * (2.0 * PI).ln())
}

fn soft_clamp<R: Scalar>(x: R) -> R {
    ((x - COMPARTMENT_FLOOR) / CLAMP_SCALE).softplus() * CLAMP_SCALE + COMPARTMENT_FLOOR
}

/// The cholera model with a fixed initial condition and population series.
#[derive(Debug, Clone)]
pub struct Cholera {
    space: Arc<ParamSpace>,
    /// Euler-Maruyama step in years.
    pub dt: f64,
    pub t0: f64,
    pub population: Covariate,
    /// Initial fractions of the population in S and I; the remainder is
    /// split evenly across R1..R3.
    pub s0_frac: f64,
    pub i0_frac: f64,
}

impl Default for Cholera {
    fn default() -> Self {
        Cholera::new(1.0 / 365.25, Covariate::constant(1.0e6))
    }
}

impl Cholera {
    pub fn new(dt: f64, population: Covariate) -> Self {
        let transforms = CHOLERA_PARAMS.iter().enumerate().map(|(i, name)| {
            let t = if i <= TAU {
                Transform::Log
            } else {
                Transform::Identity
            };
            (*name, t)
        });
        Cholera {
            space: ParamSpace::new(transforms),
            dt,
            t0: 0.0,
            population,
            s0_frac: 0.55,
            i0_frac: 2.0e-4,
        }
    }

    /// Random-walk multipliers for IF2, relative to a shared sd on the
    /// unconstrained scale. The trend multiplies time in years and is
    /// identified far more sharply than the rest, so it takes much smaller
    /// steps.
    pub fn rw_magnitudes(&self) -> Vec<f64> {
        let mut m = vec![0.25, 1.0, 1.0, 1.0, 1.0, 0.02];
        m.extend([0.5; 6]);
        m.extend([1.0; 6]);
        m
    }

    /// Parameter values used for synthetic-data experiments.
    pub fn reference_theta(&self) -> Theta {
        let mut p = vec![0.0; 18];
        p[GAMMA] = 10.0;
        p[EPS] = 1.0;
        p[MORT] = 0.5;
        p[SIGMA] = 0.5;
        p[TAU] = 0.2;
        p[TREND] = -0.01;
        let beta = [2.9, 3.1, 2.8, 2.4, 2.3, 2.6];
        let omega = [-9.0, -8.5, -9.0, -9.5, -10.0, -9.5];
        p[BETA..BETA + 6].copy_from_slice(&beta);
        p[OMEGA..OMEGA + 6].copy_from_slice(&omega);
        Theta::new(self.space.clone(), p).expect("reference values are in range")
    }

    /// One Euler-Maruyama step of length `dt` from time `t`, driven by the
    /// standard normal draw `z` (the Brownian increment is `sqrt(dt) z`).
    pub fn euler_step<R: Scalar>(
        &self,
        state: &mut [R],
        t: f64,
        dt: f64,
        theta: &[R],
        z: f64,
    ) -> Result<()> {
        let pop = self.population.at(t);
        let dpop = self.population.at(t + dt) - pop;
        let s = splines(t);
        let mut log_beta = theta[TREND] * (t - self.t0);
        let mut log_omega = R::constant(0.0);
        for j in 0..NUM_SPLINES {
            log_beta = log_beta + theta[BETA + j] * s[j];
            log_omega = log_omega + theta[OMEGA + j] * s[j];
        }
        let [sus, inf, r1, r2, r3, deaths] =
            [state[0], state[1], state[2], state[3], state[4], state[5]];
        let lambda = log_beta.exp() * inf / pop + log_omega.exp();
        let k_eps = theta[EPS] * IMMUNE_CLASSES;
        let gamma = theta[GAMMA];
        let noise = theta[SIGMA] * sus * inf / pop * (dt.sqrt() * z);
        let infections = lambda * sus;

        let d_s = (k_eps * r3 + (-sus + pop) * DELTA - infections) * dt + dpop - noise;
        let d_i = (infections - (theta[MORT] + gamma + DELTA) * inf) * dt + noise;
        let out = k_eps + DELTA;
        let d_r1 = (gamma * inf - out * r1) * dt;
        let d_r2 = (k_eps * r1 - out * r2) * dt;
        let d_r3 = (k_eps * r2 - out * r3) * dt;

        state[0] = soft_clamp(sus + d_s);
        state[1] = soft_clamp(inf + d_i);
        state[2] = soft_clamp(r1 + d_r1);
        state[3] = soft_clamp(r2 + d_r2);
        state[4] = soft_clamp(r3 + d_r3);
        state[5] = deaths + gamma * inf * dt;

        for (name, x) in CHOLERA_STATES.iter().zip(state.iter()) {
            if !x.value().is_finite() {
                return Err(Error::Blowup {
                    component: name,
                    value: x.value(),
                    time: t + dt,
                });
            }
        }
        Ok(())
    }
}

impl Model for Cholera {
    fn name(&self) -> &str {
        "cholera"
    }

    fn space(&self) -> &Arc<ParamSpace> {
        &self.space
    }

    fn state_names(&self) -> &[&'static str] {
        &CHOLERA_STATES
    }

    fn t0(&self) -> f64 {
        self.t0
    }

    fn rinit<R: Scalar>(&self, _theta: &[R], _key: StreamKey, state: &mut [R]) -> Result<()> {
        let pop = self.population.at(self.t0);
        let r = (1.0 - self.s0_frac - self.i0_frac) / 3.0 * pop;
        let init = [self.s0_frac * pop, self.i0_frac * pop, r, r, r, 0.0];
        for (x, v) in state.iter_mut().zip(init) {
            *x = R::constant(v);
        }
        Ok(())
    }

    fn rprocess<R: Scalar>(
        &self,
        state: &mut [R],
        t_from: f64,
        t_to: f64,
        theta: &[R],
        key: StreamKey,
    ) -> Result<()> {
        let span = t_to - t_from;
        if !(span > 0.0) || !(self.dt > 0.0) {
            return Err(Error::usage("cholera step needs t_to > t_from and dt > 0"));
        }
        let steps = (span / self.dt - 1e-9).ceil().max(1.0) as u64;
        let h = span / steps as f64;
        state[5] = R::constant(0.0);
        for i in 0..steps {
            let t = t_from + i as f64 * h;
            self.euler_step(state, t, h, theta, key.normal(i))?;
        }
        Ok(())
    }

    fn dmeasure<R: Scalar>(&self, y: f64, state: &[R], theta: &[R]) -> Result<R> {
        cholera_dmeasure(y, state[5], theta[TAU])
    }

    fn rmeasure(&self, state: &[f64], theta: &[f64], key: StreamKey) -> Result<f64> {
        let m = state[5];
        Ok(m + theta[TAU] * m.max(MEASUREMENT_FLOOR) * key.normal(0))
    }
}
