//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every differentiable operation as a node holding at most
//! two parent ids and the local partial derivative with respect to each
//! parent. Partials are computed eagerly during the forward pass, so
//! [`Tape::backward`] is a single sweep over the nodes in reverse id order.
//!
//! [`Var`] is the value type flowing through model code. A `Var` either points
//! at a tape node or is a constant; arithmetic between constants never touches
//! a tape. [`Var::stop_gradient`] produces a constant with the same value,
//! which is how the filter builds its baseline-parameter copies of quantities
//! computed at the evaluation parameter.
//!
//! ```
//! use ifad::ad::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.input(3.0);
//! let y = x * x.stop_gradient();
//! let grad = tape.backward(y).unwrap();
//! assert_eq!(y.value(), 9.0);
//! assert_eq!(grad[0], 3.0);
//! ```
//!
//! Model code is written once against the [`Scalar`] trait and runs either on
//! plain `f64` (fast filtering, finite differences) or on `Var` (scores).

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use thiserror::Error;

const NO_PARENT: u32 = u32::MAX;

/// Kind of a recorded operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Pow,
    Sqrt,
    Tanh,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            OpKind::Input => "input",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Neg => "neg",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Pow => "pow",
            OpKind::Sqrt => "sqrt",
            OpKind::Tanh => "tanh",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("differentiation domain error: {op} at argument {value}")]
    Domain { op: OpKind, value: f64 },
    #[error("{op} expects {expected} argument(s), got {got}")]
    Arity {
        op: OpKind,
        expected: usize,
        got: usize,
    },
    #[error("output variable does not belong to this tape")]
    ForeignOutput,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Append-only record of differentiable scalar operations.
///
/// A tape is single-writer: it is not `Sync`, and one filter run owns one
/// tape. Independent tapes may live on different threads.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    kinds: RefCell<Vec<OpKind>>,
    inputs: RefCell<Vec<u32>>,
    fault: RefCell<Option<AdError>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("inputs", &self.num_inputs())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(nodes)),
            kinds: RefCell::new(Vec::with_capacity(nodes)),
            ..Default::default()
        }
    }

    /// Registers a new independent variable. Gradients returned by
    /// [`Tape::backward`] are ordered by input registration.
    pub fn input(&self, value: f64) -> Var<'_> {
        let id = self.push(OpKind::Input, [NO_PARENT; 2], [0.0; 2]);
        self.inputs.borrow_mut().push(id);
        Var {
            value,
            slot: Some((self, id)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs.borrow().len()
    }

    /// Applies `op` to `args`, checking the argument domain.
    ///
    /// This is the checked entry point; the operator overloads and
    /// [`Scalar`] methods record the first domain violation on the tape
    /// instead (see [`Tape::check`]).
    pub fn apply<'t>(&'t self, op: OpKind, args: &[Var<'t>]) -> Result<Var<'t>, AdError> {
        let arity = match op {
            OpKind::Input => 0,
            OpKind::Neg | OpKind::Exp | OpKind::Log | OpKind::Sqrt | OpKind::Tanh => 1,
            _ => 2,
        };
        if op == OpKind::Input || args.len() != arity {
            return Err(AdError::Arity {
                op,
                expected: arity,
                got: args.len(),
            });
        }
        let x = args[0];
        match op {
            OpKind::Log if x.value <= 0.0 => return Err(AdError::Domain { op, value: x.value }),
            OpKind::Sqrt if x.value <= 0.0 => return Err(AdError::Domain { op, value: x.value }),
            OpKind::Div if args[1].value == 0.0 => {
                return Err(AdError::Domain {
                    op,
                    value: args[1].value,
                })
            }
            OpKind::Pow if x.value <= 0.0 && args[1].slot.is_some() => {
                return Err(AdError::Domain { op, value: x.value })
            }
            _ => {}
        }
        Ok(match op {
            OpKind::Add => x + args[1],
            OpKind::Sub => x - args[1],
            OpKind::Mul => x * args[1],
            OpKind::Div => x / args[1],
            OpKind::Neg => -x,
            OpKind::Exp => x.exp(),
            OpKind::Log => x.ln(),
            OpKind::Pow => x.powf(args[1]),
            OpKind::Sqrt => x.sqrt(),
            OpKind::Tanh => x.tanh(),
            OpKind::Input => unreachable!(),
        })
    }

    /// Returns and clears the first domain violation recorded by an
    /// unchecked operation, if any.
    pub fn check(&self) -> Result<(), AdError> {
        match self.fault.borrow_mut().take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Derivative of `output` with respect to every input, in registration
    /// order. One reverse sweep; the tape itself is not modified.
    pub fn backward(&self, output: Var<'_>) -> Result<Vec<f64>, AdError> {
        let inputs = self.inputs.borrow();
        let Some((tape, out)) = output.slot else {
            return Ok(vec![0.0; inputs.len()]);
        };
        if !std::ptr::eq(tape, self) {
            return Err(AdError::ForeignOutput);
        }
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; out as usize + 1];
        adjoint[out as usize] = 1.0;
        for id in (0..=out as usize).rev() {
            let a = adjoint[id];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[id];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NO_PARENT {
                    adjoint[p as usize] += a * node.partials[k];
                }
            }
        }
        Ok(inputs
            .iter()
            .map(|&i| adjoint.get(i as usize).copied().unwrap_or(0.0))
            .collect())
    }

    /// Number of recorded nodes of each kind, for diagnostics.
    pub fn op_counts(&self) -> Vec<(OpKind, usize)> {
        let mut counts: Vec<(OpKind, usize)> = Vec::new();
        for k in self.kinds.borrow().iter() {
            match counts.iter_mut().find(|(c, _)| c == k) {
                Some((_, n)) => *n += 1,
                None => counts.push((*k, 1)),
            }
        }
        counts
    }

    fn push(&self, kind: OpKind, parents: [u32; 2], partials: [f64; 2]) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let id = u32::try_from(nodes.len()).expect("tape exceeds u32::MAX nodes");
        assert!(id != NO_PARENT, "tape exceeds u32::MAX nodes");
        nodes.push(Node { parents, partials });
        self.kinds.borrow_mut().push(kind);
        id
    }

    fn record_fault(&self, op: OpKind, value: f64) {
        let mut fault = self.fault.borrow_mut();
        if fault.is_none() {
            *fault = Some(AdError::Domain { op, value });
        }
    }
}

/// A differentiable scalar: a value plus, unless it is a constant, the id of
/// the tape node that produced it.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    value: f64,
    slot: Option<(&'t Tape, u32)>,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot {
            Some((_, id)) => write!(f, "Var({} @ {})", self.value, id),
            None => write!(f, "Var({} const)", self.value),
        }
    }
}

impl<'t> Var<'t> {
    pub fn constant(value: f64) -> Self {
        Var { value, slot: None }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn is_constant(&self) -> bool {
        self.slot.is_none()
    }

    /// Same value, no derivative.
    pub fn stop_gradient(self) -> Self {
        Var::constant(self.value)
    }

    fn unary(self, kind: OpKind, value: f64, partial: f64) -> Self {
        match self.slot {
            None => Var::constant(value),
            Some((tape, id)) => Var {
                value,
                slot: Some((tape, tape.push(kind, [id, NO_PARENT], [partial, 0.0]))),
            },
        }
    }

    fn binary(self, other: Self, kind: OpKind, value: f64, da: f64, db: f64) -> Self {
        let slot = match (self.slot, other.slot) {
            (None, None) => None,
            (Some((t, a)), None) => Some((t, t.push(kind, [a, NO_PARENT], [da, 0.0]))),
            (None, Some((t, b))) => Some((t, t.push(kind, [b, NO_PARENT], [db, 0.0]))),
            (Some((t, a)), Some((u, b))) => {
                assert!(std::ptr::eq(t, u), "variables from different tapes");
                Some((t, t.push(kind, [a, b], [da, db])))
            }
        };
        Var { value, slot }
    }

    fn fault(&self, op: OpKind) {
        if let Some((tape, _)) = self.slot {
            tape.record_fault(op, self.value);
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, OpKind::Add, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, OpKind::Sub, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.binary(
            rhs,
            OpKind::Mul,
            self.value * rhs.value,
            rhs.value,
            self.value,
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        if rhs.value == 0.0 {
            rhs.fault(OpKind::Div);
        }
        let q = self.value / rhs.value;
        self.binary(rhs, OpKind::Div, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(OpKind::Neg, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.unary(OpKind::Add, self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.unary(OpKind::Sub, self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.unary(OpKind::Mul, self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        if rhs == 0.0 {
            self.fault(OpKind::Div);
        }
        self.unary(OpKind::Div, self.value / rhs, 1.0 / rhs)
    }
}

impl<'t> AddAssign for Var<'t> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

/// Arithmetic shared by `f64` and [`Var`], so model code is written once.
///
/// For `f64` every method is the plain floating-point operation; for `Var`
/// the value is computed by exactly the same operation, so both paths produce
/// bitwise-identical values.
pub trait Scalar:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(value: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn powf(self, exponent: Self) -> Self;
    fn stop_gradient(self) -> Self;

    fn square(self) -> Self {
        self * self
    }

    fn powi(self, n: i32) -> Self {
        self.powf(Self::constant(n as f64))
    }

    /// `ln(1 + exp(x))` without overflow.
    fn softplus(self) -> Self {
        if self.value() > 0.0 {
            self + (-self).exp().add_one().ln()
        } else {
            self.exp().add_one().ln()
        }
    }

    fn add_one(self) -> Self {
        self + 1.0
    }

    /// Picks `a` when `cond` holds; the derivative follows the chosen branch.
    fn select(cond: bool, a: Self, b: Self) -> Self {
        if cond {
            a
        } else {
            b
        }
    }
}

impl Scalar for f64 {
    fn constant(value: f64) -> Self {
        value
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn powf(self, exponent: Self) -> Self {
        f64::powf(self, exponent)
    }
    fn powi(self, n: i32) -> Self {
        f64::powf(self, n as f64)
    }
    fn stop_gradient(self) -> Self {
        self
    }
}

impl<'t> Scalar for Var<'t> {
    fn constant(value: f64) -> Self {
        Var::constant(value)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn exp(self) -> Self {
        let v = self.value.exp();
        self.unary(OpKind::Exp, v, v)
    }
    fn ln(self) -> Self {
        if self.value <= 0.0 {
            self.fault(OpKind::Log);
        }
        self.unary(OpKind::Log, self.value.ln(), 1.0 / self.value)
    }
    fn sqrt(self) -> Self {
        if self.value <= 0.0 && !self.is_constant() {
            self.fault(OpKind::Sqrt);
        }
        let v = self.value.sqrt();
        self.unary(OpKind::Sqrt, v, 0.5 / v)
    }
    fn tanh(self) -> Self {
        let v = self.value.tanh();
        self.unary(OpKind::Tanh, v, 1.0 - v * v)
    }
    fn powf(self, exponent: Self) -> Self {
        let (x, y) = (self.value, exponent.value);
        let v = x.powf(y);
        let dx = if y == 0.0 { 0.0 } else { y * x.powf(y - 1.0) };
        let dy = if exponent.is_constant() {
            0.0
        } else {
            if x <= 0.0 {
                self.fault(OpKind::Pow);
                exponent.fault(OpKind::Pow);
            }
            v * x.ln()
        };
        self.binary(exponent, OpKind::Pow, v, dx, dy)
    }
    fn powi(self, n: i32) -> Self {
        self.powf(Var::constant(n as f64))
    }
    fn stop_gradient(self) -> Self {
        Var::stop_gradient(self)
    }
}

/// Value and gradient of `f` at `x`.
pub fn gradient<F>(f: F, x: &[f64]) -> Result<(f64, Vec<f64>), AdError>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = x.iter().map(|&v| tape.input(v)).collect();
    let y = f(&vars);
    tape.check()?;
    let g = tape.backward(y)?;
    Ok((y.value(), g))
}

/// Largest coordinate-wise discrepancy between the tape gradient of `f` and
/// central differences with step `h`, measured as
/// `|g_ad - g_fd| / max(1, |g_fd|)`.
pub fn finite_diff_check<F>(f: F, x: &[f64], h: f64) -> Result<f64, AdError>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let (_, g_ad) = gradient(&f, x)?;
    let eval = |point: &[f64]| -> Result<f64, AdError> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = point.iter().map(|&v| tape.input(v)).collect();
        let y = f(&vars);
        tape.check()?;
        Ok(y.value())
    };
    let mut worst: f64 = 0.0;
    let mut point = x.to_vec();
    for i in 0..x.len() {
        point[i] = x[i] + h;
        let up = eval(&point)?;
        point[i] = x[i] - h;
        let down = eval(&point)?;
        point[i] = x[i];
        let g_fd = (up - down) / (2.0 * h);
        worst = worst.max((g_ad[i] - g_fd).abs() / g_fd.abs().max(1.0));
    }
    Ok(worst)
}
