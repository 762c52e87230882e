use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};

/// Map between a parameter's natural scale and the unconstrained real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    /// Positive parameters: `u = ln x`.
    Log,
    /// Parameters in `(lo, hi)`: `u = ln((x - lo) / (hi - x))`.
    Logit {
        lo: f64,
        hi: f64,
    },
}

impl Transform {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Transform::Identity => x.is_finite(),
            Transform::Log => x.is_finite() && x > 0.0,
            Transform::Logit { lo, hi } => x > lo && x < hi,
        }
    }

    pub fn to_unconstrained(&self, x: f64) -> Option<f64> {
        if !self.contains(x) {
            return None;
        }
        Some(match *self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Logit { lo, hi } => ((x - lo) / (hi - x)).ln(),
        })
    }

    pub fn to_natural<R: Scalar>(&self, u: R) -> R {
        match *self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Logit { lo, hi } => R::constant(hi - lo) / (-u).exp().add_one() + lo,
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Identity => f.write_str("identity"),
            Transform::Log => f.write_str("log"),
            Transform::Logit { lo, hi } => write!(f, "logit({lo},{hi})"),
        }
    }
}

/// Names and transforms of a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpace {
    names: Vec<String>,
    transforms: Vec<Transform>,
}

impl ParamSpace {
    pub fn new<S: Into<String>>(params: impl IntoIterator<Item = (S, Transform)>) -> Arc<Self> {
        let (names, transforms) = params.into_iter().map(|(n, t)| (n.into(), t)).unzip();
        Arc::new(ParamSpace { names, transforms })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::usage(format!("unknown parameter `{name}`")))
    }

    /// Natural-scale values for an unconstrained vector of scalars.
    pub fn to_natural<R: Scalar>(&self, unconstrained: &[R]) -> Vec<R> {
        self.transforms
            .iter()
            .zip(unconstrained)
            .map(|(t, &u)| t.to_natural(u))
            .collect()
    }
}

/// A parameter vector on its natural scale, tied to its [`ParamSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    space: Arc<ParamSpace>,
    natural: Vec<f64>,
}

impl Theta {
    pub fn new(space: Arc<ParamSpace>, natural: Vec<f64>) -> Result<Self> {
        if natural.len() != space.len() {
            return Err(Error::usage(format!(
                "expected {} parameters, got {}",
                space.len(),
                natural.len()
            )));
        }
        for ((name, t), &x) in space.names.iter().zip(&space.transforms).zip(&natural) {
            if !t.contains(x) {
                return Err(Error::ParameterDomain {
                    name: name.clone(),
                    value: x,
                });
            }
        }
        Ok(Theta { space, natural })
    }

    pub fn from_unconstrained(space: Arc<ParamSpace>, unconstrained: &[f64]) -> Result<Self> {
        if unconstrained.iter().any(|u| !u.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite unconstrained parameter vector {unconstrained:?}"
            )));
        }
        let natural = space.to_natural(unconstrained);
        Theta::new(space, natural)
    }

    pub fn space(&self) -> &Arc<ParamSpace> {
        &self.space
    }

    pub fn natural(&self) -> &[f64] {
        &self.natural
    }

    pub fn unconstrained(&self) -> Vec<f64> {
        self.space
            .transforms
            .iter()
            .zip(&self.natural)
            .map(|(t, &x)| t.to_unconstrained(x).expect("validated on construction"))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.natural.len()
    }

    pub fn is_empty(&self) -> bool {
        self.natural.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.space.index_of(name).map(|i| self.natural[i])
    }

    /// Copy with one natural-scale component replaced.
    pub fn with(&self, name: &str, value: f64) -> Result<Self> {
        let i = self.space.require(name)?;
        let mut natural = self.natural.clone();
        natural[i] = value;
        Theta::new(self.space.clone(), natural)
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, x)) in self.space.names.iter().zip(&self.natural).enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{name}={x:.6}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn transform_examples() {
        assert_eq!(Transform::Log.to_unconstrained(1.0), Some(0.0));
        assert_eq!(Transform::Log.to_natural(0.0), 1.0);
        let logit = Transform::Logit { lo: 0.0, hi: 1.0 };
        assert_eq!(logit.to_unconstrained(0.5), Some(0.0));
        assert_eq!(logit.to_natural(0.0), 0.5);
        assert_eq!(Transform::Log.to_unconstrained(-1.0), None);
        assert_eq!(logit.to_unconstrained(1.0), None);
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let space = ParamSpace::new([("s", Transform::Log)]);
        assert!(matches!(
            Theta::new(space, vec![0.0]),
            Err(Error::ParameterDomain { .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip(a in -5.0f64..5.0, b in 1e-3f64..1e3, c in -0.999f64..0.999) {
            let space = ParamSpace::new([
                ("a", Transform::Identity),
                ("b", Transform::Log),
                ("c", Transform::Logit { lo: -1.0, hi: 1.0 }),
            ]);
            let theta = Theta::new(space.clone(), vec![a, b, c]).unwrap();
            let back = Theta::from_unconstrained(space, &theta.unconstrained()).unwrap();
            for (x, y) in theta.natural().iter().zip(back.natural()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }

        #[test]
        fn constraints_hold_for_finite_unconstrained(u in -30.0f64..30.0) {
            let space = ParamSpace::new([
                ("b", Transform::Log),
                ("c", Transform::Logit { lo: 2.0, hi: 3.0 }),
            ]);
            let theta = Theta::from_unconstrained(space, &[u, u / 10.0]).unwrap();
            prop_assert!(theta.natural()[0] > 0.0);
            prop_assert!(theta.natural()[1] > 2.0 && theta.natural()[1] < 3.0);
        }
    }
}
