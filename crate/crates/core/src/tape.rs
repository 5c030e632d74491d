//! Reverse-mode automatic differentiation over a scalar computation tape.
//!
//! A [`Tape`] records every arithmetic operation as it happens; a [`Scalar`]
//! is a handle to one recorded node and behaves like a real number in
//! arithmetic. Calling [`backward`] propagates adjoints from a root node to
//! every node below it, so the derivative of the root with respect to any
//! input can be read off afterwards.
//!
//! The tape is append-only, so recorded nodes are already in topological
//! order and the backward pass is a single reverse sweep. Values are
//! computed eagerly at record time, which also lets local partial
//! derivatives be cached on the node.
//!
//! A tape is single-threaded; use one tape per thread. Mixing scalars from
//! two different tapes in one operation is a bug and panics.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{DomainError, Result};

#[derive(Clone, Copy)]
struct Node {
    value: f64,
    parents: [u32; 2],
    partials: [f64; 2],
    arity: u8,
}

/// Append-only record of a scalar computation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(1024)),
        }
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(capacity)),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a differentiable input leaf.
    pub fn input(&self, value: f64) -> Scalar<'_> {
        self.leaf(value)
    }

    /// Records a constant leaf. Structurally identical to an input; the
    /// distinction is documentation for the caller.
    pub fn constant(&self, value: f64) -> Scalar<'_> {
        self.leaf(value)
    }

    fn leaf(&self, value: f64) -> Scalar<'_> {
        let idx = self.push(Node {
            value,
            parents: [0, 0],
            partials: [0.0, 0.0],
            arity: 0,
        });
        Scalar { tape: self, idx }
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx <= u32::MAX as usize, "tape overflow");
        nodes.push(node);
        idx as u32
    }

    fn unary(&self, parent: u32, value: f64, partial: f64) -> Scalar<'_> {
        let idx = self.push(Node {
            value,
            parents: [parent, 0],
            partials: [partial, 0.0],
            arity: 1,
        });
        Scalar { tape: self, idx }
    }

    fn binary(&self, a: u32, b: u32, value: f64, pa: f64, pb: f64) -> Scalar<'_> {
        let idx = self.push(Node {
            value,
            parents: [a, b],
            partials: [pa, pb],
            arity: 2,
        });
        Scalar { tape: self, idx }
    }

    fn value_of(&self, idx: u32) -> f64 {
        self.nodes.borrow()[idx as usize].value
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Handle to one node of a [`Tape`]; behaves like a real number.
#[derive(Clone, Copy)]
pub struct Scalar<'t> {
    tape: &'t Tape,
    idx: u32,
}

fn same_tape(a: &Scalar<'_>, b: &Scalar<'_>) -> bool {
    std::ptr::eq(a.tape, b.tape)
}

pub(crate) fn sigmoid_f64(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl<'t> Scalar<'t> {
    pub fn value(self) -> f64 {
        self.tape.value_of(self.idx)
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn exp(self) -> Scalar<'t> {
        let v = self.value().exp();
        self.tape.unary(self.idx, v, v)
    }

    pub fn sin(self) -> Scalar<'t> {
        let x = self.value();
        self.tape.unary(self.idx, x.sin(), x.cos())
    }

    pub fn cos(self) -> Scalar<'t> {
        let x = self.value();
        self.tape.unary(self.idx, x.cos(), -x.sin())
    }

    pub fn tan(self) -> Scalar<'t> {
        let v = self.value().tan();
        self.tape.unary(self.idx, v, 1.0 + v * v)
    }

    pub fn tanh(self) -> Scalar<'t> {
        let v = self.value().tanh();
        self.tape.unary(self.idx, v, 1.0 - v * v)
    }

    pub fn sigmoid(self) -> Scalar<'t> {
        let v = sigmoid_f64(self.value());
        self.tape.unary(self.idx, v, v * (1.0 - v))
    }

    pub fn try_ln(self) -> Result<Scalar<'t>> {
        let x = self.value();
        if x <= 0.0 {
            return Err(DomainError::LogNonPositive.into());
        }
        Ok(self.tape.unary(self.idx, x.ln(), 1.0 / x))
    }

    pub fn try_sqrt(self) -> Result<Scalar<'t>> {
        let x = self.value();
        if x < 0.0 {
            return Err(DomainError::SqrtNegative.into());
        }
        let v = x.sqrt();
        Ok(self.tape.unary(self.idx, v, 0.5 / v))
    }

    pub fn try_div(self, rhs: Scalar<'t>) -> Result<Scalar<'t>> {
        if rhs.value() == 0.0 {
            return Err(DomainError::DivisionByZero.into());
        }
        Ok(self / rhs)
    }

    /// Power with a constant exponent.
    pub fn powc(self, k: f64) -> Result<Scalar<'t>> {
        let x = self.value();
        if x < 0.0 && k.fract() != 0.0 {
            return Err(DomainError::PowNegativeBase.into());
        }
        if x == 0.0 && k < 0.0 {
            return Err(DomainError::DivisionByZero.into());
        }
        let v = x.powf(k);
        let partial = if k == 0.0 { 0.0 } else { k * x.powf(k - 1.0) };
        Ok(self.tape.unary(self.idx, v, partial))
    }
}

macro_rules! impl_binary {
    ($trait:ident, $method:ident, |$a:ident, $b:ident| $value:expr, |$av:ident, $bv:ident| ($pa:expr, $pb:expr)) => {
        impl<'t> $trait for Scalar<'t> {
            type Output = Scalar<'t>;
            fn $method(self, rhs: Scalar<'t>) -> Scalar<'t> {
                assert!(same_tape(&self, &rhs), "scalars belong to different tapes");
                let $a = self.value();
                let $b = rhs.value();
                let value = $value;
                let ($av, $bv) = ($a, $b);
                let _ = ($av, $bv);
                self.tape
                    .binary(self.idx, rhs.idx, value, $pa, $pb)
            }
        }

        impl<'t> $trait<f64> for Scalar<'t> {
            type Output = Scalar<'t>;
            fn $method(self, rhs: f64) -> Scalar<'t> {
                $trait::$method(self, self.tape.constant(rhs))
            }
        }

        impl<'t> $trait<Scalar<'t>> for f64 {
            type Output = Scalar<'t>;
            fn $method(self, rhs: Scalar<'t>) -> Scalar<'t> {
                $trait::$method(rhs.tape.constant(self), rhs)
            }
        }
    };
}

impl_binary!(Add, add, |a, b| a + b, |av, bv| (1.0, 1.0));
impl_binary!(Sub, sub, |a, b| a - b, |av, bv| (1.0, -1.0));
impl_binary!(Mul, mul, |a, b| a * b, |av, bv| (bv, av));
// IEEE semantics: dividing by a zero-valued scalar yields inf/NaN. Use
// `try_div` where the denominator is not known to be non-zero.
impl_binary!(Div, div, |a, b| a / b, |av, bv| (1.0 / bv, -av / (bv * bv)));

impl<'t> Neg for Scalar<'t> {
    type Output = Scalar<'t>;
    fn neg(self) -> Scalar<'t> {
        self.tape.unary(self.idx, -self.value(), -1.0)
    }
}

/// Adjoints of every tape node with respect to one root.
pub struct Gradients<'t> {
    tape: &'t Tape,
    adjoints: Vec<f64>,
}

impl<'t> Gradients<'t> {
    /// Derivative of the root with respect to `input`.
    pub fn wrt(&self, input: Scalar<'t>) -> f64 {
        assert!(
            std::ptr::eq(self.tape, input.tape),
            "gradient queried with a scalar from another tape"
        );
        self.adjoints[input.idx as usize]
    }
}

/// Propagates adjoints from `root` back to every node it depends on.
///
/// Each node is visited exactly once, in reverse recording order. Repeated
/// calls on the same tape (e.g. two objectives sharing one rollout) are
/// independent: every call starts from a fresh adjoint buffer.
pub fn backward(root: Scalar<'_>) -> Gradients<'_> {
    let nodes = root.tape.nodes.borrow();
    let mut adjoints = vec![0.0f64; nodes.len()];
    adjoints[root.idx as usize] = 1.0;
    for i in (0..=root.idx as usize).rev() {
        let a = adjoints[i];
        if a == 0.0 {
            continue;
        }
        let node = &nodes[i];
        for slot in 0..node.arity as usize {
            adjoints[node.parents[slot] as usize] += node.partials[slot] * a;
        }
    }
    drop(nodes);
    Gradients {
        tape: root.tape,
        adjoints,
    }
}

/// Compares the backward pass against central finite differences for a
/// scalar function of `at.len()` inputs, returning the largest relative
/// error. Relative error uses a `max(1, |analytic|)` denominator.
pub fn check_gradient<F>(build: F, at: &[f64], h: f64) -> f64
where
    F: for<'a> Fn(&'a Tape, &[Scalar<'a>]) -> Result<Scalar<'a>>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let eval = |point: &[f64]| -> f64 {
        let tape = Tape::new();
        let inputs: Vec<Scalar<'_>> = point.iter().map(|&v| tape.input(v)).collect();
        build(&tape, &inputs)
            .expect("gradient check function failed to evaluate")
            .value()
    };

    let tape = Tape::new();
    let inputs: Vec<Scalar<'_>> = at.iter().map(|&v| tape.input(v)).collect();
    let root = build(&tape, &inputs).expect("gradient check function failed to evaluate");
    let grads = backward(root);

    let mut worst = 0.0f64;
    let mut point = at.to_vec();
    for i in 0..at.len() {
        let analytic = grads.wrt(inputs[i]);
        point[i] = at[i] + h;
        let up = eval(&point);
        point[i] = at[i] - h;
        let down = eval(&point);
        point[i] = at[i];
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}

/// Abstraction over plain `f64` and tape [`Scalar`] values so that
/// expression evaluation, controller forward passes and plant rollouts are
/// written once and behave bit-identically on both paths.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn value(self) -> f64;
    fn try_div(self, rhs: Self) -> Result<Self>;
    fn powc(self, k: f64) -> Result<Self>;
    fn exp(self) -> Self;
    fn try_ln(self) -> Result<Self>;
    fn try_sqrt(self) -> Result<Self>;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn tanh(self) -> Self;
    fn sigmoid(self) -> Self;
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }

    fn try_div(self, rhs: f64) -> Result<f64> {
        if rhs == 0.0 {
            return Err(DomainError::DivisionByZero.into());
        }
        Ok(self / rhs)
    }

    fn powc(self, k: f64) -> Result<f64> {
        if self < 0.0 && k.fract() != 0.0 {
            return Err(DomainError::PowNegativeBase.into());
        }
        if self == 0.0 && k < 0.0 {
            return Err(DomainError::DivisionByZero.into());
        }
        Ok(self.powf(k))
    }

    fn exp(self) -> f64 {
        f64::exp(self)
    }

    fn try_ln(self) -> Result<f64> {
        if self <= 0.0 {
            return Err(DomainError::LogNonPositive.into());
        }
        Ok(f64::ln(self))
    }

    fn try_sqrt(self) -> Result<f64> {
        if self < 0.0 {
            return Err(DomainError::SqrtNegative.into());
        }
        Ok(f64::sqrt(self))
    }

    fn sin(self) -> f64 {
        f64::sin(self)
    }

    fn cos(self) -> f64 {
        f64::cos(self)
    }

    fn tan(self) -> f64 {
        f64::tan(self)
    }

    fn tanh(self) -> f64 {
        f64::tanh(self)
    }

    fn sigmoid(self) -> f64 {
        sigmoid_f64(self)
    }
}

impl<'t> Real for Scalar<'t> {
    fn value(self) -> f64 {
        Scalar::value(self)
    }

    fn try_div(self, rhs: Self) -> Result<Self> {
        Scalar::try_div(self, rhs)
    }

    fn powc(self, k: f64) -> Result<Self> {
        Scalar::powc(self, k)
    }

    fn exp(self) -> Self {
        Scalar::exp(self)
    }

    fn try_ln(self) -> Result<Self> {
        Scalar::try_ln(self)
    }

    fn try_sqrt(self) -> Result<Self> {
        Scalar::try_sqrt(self)
    }

    fn sin(self) -> Self {
        Scalar::sin(self)
    }

    fn cos(self) -> Self {
        Scalar::cos(self)
    }

    fn tan(self) -> Self {
        Scalar::tan(self)
    }

    fn tanh(self) -> Self {
        Scalar::tanh(self)
    }

    fn sigmoid(self) -> Self {
        Scalar::sigmoid(self)
    }
}
