use std::f64::consts::PI;
use std::sync::Arc;

use super::{Model, ParamSpace, Theta, Transform};
use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::prng::StreamKey;

/// Scalar linear-Gaussian state-space model
///
/// ```text
/// X_0 ~ N(mu0, s0^2)
/// X_n = a X_{n-1} + sigma Z_n
/// Y_n ~ N(X_n, tau^2)
/// ```
///
/// with parameters `(a, sigma, tau)`; `mu0` and `s0` are fixed. The exact
/// likelihood is available from [`crate::oracle::kalman_loglik`].
#[derive(Debug, Clone)]
pub struct LgSsm {
    space: Arc<ParamSpace>,
    pub mu0: f64,
    pub s0: f64,
}

impl LgSsm {
    pub const A: usize = 0;
    pub const SIGMA: usize = 1;
    pub const TAU: usize = 2;

    /// Model with `a` unconstrained and `sigma`, `tau` on the log scale.
    pub fn new(mu0: f64, s0: f64) -> Self {
        Self::with_transforms(
            mu0,
            s0,
            [Transform::Identity, Transform::Log, Transform::Log],
        )
    }

    /// Model with custom transforms, e.g. `sigma` on the identity scale so
    /// that the deterministic case `sigma = 0` is representable.
    pub fn with_transforms(mu0: f64, s0: f64, transforms: [Transform; 3]) -> Self {
        LgSsm {
            space: ParamSpace::new(["a", "sigma", "tau"].into_iter().zip(transforms)),
            mu0,
            s0,
        }
    }

    pub fn theta(&self, a: f64, sigma: f64, tau: f64) -> Result<Theta> {
        Theta::new(self.space.clone(), vec![a, sigma, tau])
    }
}

/// One transition `a x + sigma z` for a given standard normal draw `z`.
pub fn lgssm_step<R: Scalar>(x: R, a: R, sigma: R, z: f64) -> R {
    a * x + sigma * z
}

/// `log N(y; x, tau^2)`.
pub fn lgssm_dmeasure<R: Scalar>(y: f64, x: R, tau: R) -> Result<R> {
    if !(tau.value() > 0.0) {
        return Err(Error::ParameterDomain {
            name: "tau".into(),
            value: tau.value(),
        });
    }
    let resid = -x + y;
    Ok(-tau.ln() - resid.square() / (tau.square() * 2.0) - 0.5 * (2.0 * PI).ln())
}

impl Model for LgSsm {
    fn name(&self) -> &str {
        "lgssm"
    }

    fn space(&self) -> &Arc<ParamSpace> {
        &self.space
    }

    fn state_names(&self) -> &[&'static str] {
        &["x"]
    }

    fn t0(&self) -> f64 {
        0.0
    }

    fn rinit<R: Scalar>(&self, _theta: &[R], key: StreamKey, state: &mut [R]) -> Result<()> {
        state[0] = R::constant(self.mu0 + self.s0 * key.normal(0));
        Ok(())
    }

    fn rprocess<R: Scalar>(
        &self,
        state: &mut [R],
        _t_from: f64,
        _t_to: f64,
        theta: &[R],
        key: StreamKey,
    ) -> Result<()> {
        if theta[Self::SIGMA].value() < 0.0 {
            return Err(Error::ParameterDomain {
                name: "sigma".into(),
                value: theta[Self::SIGMA].value(),
            });
        }
        state[0] = lgssm_step(state[0], theta[Self::A], theta[Self::SIGMA], key.normal(0));
        Ok(())
    }

    fn dmeasure<R: Scalar>(&self, y: f64, state: &[R], theta: &[R]) -> Result<R> {
        lgssm_dmeasure(y, state[0], theta[Self::TAU])
    }

    fn rmeasure(&self, state: &[f64], theta: &[f64], key: StreamKey) -> Result<f64> {
        Ok(state[0] + theta[Self::TAU] * key.normal(0))
    }
}
