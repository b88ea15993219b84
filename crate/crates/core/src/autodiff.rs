//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as a node holding its operands and cached
//! value. [`Tape::backward`] sweeps the tape once in reverse and returns the
//! partial derivative of the root with respect to every parameter leaf.
//!
//! Model code is written once against the [`Real`] trait and runs either on
//! plain `f64` (exact evaluation, search baselines) or on tape variables
//! (gradients). [`Context`] supplies constants in the matching representation.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::AdError;

/// Arithmetic shared by `f64` and tape variables.
pub trait Real:
    Copy
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
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powf(self, e: f64) -> Self;
    /// Exact maximum; on ties the receiver wins and receives the gradient.
    fn max(self, other: Self) -> Self;
    /// `max(0, x)²`.
    fn relu_sq(self) -> Self;
    /// Forward value `hard`, derivative 1 with respect to `self`.
    fn straight_through(self, hard: f64) -> Self;

    fn sigmoid(self) -> Self {
        ((-self).exp() + 1.0).powf(-1.0)
    }
}

/// Produces constants of a [`Real`] type.
pub trait Context {
    type R: Real;
    fn constant(&self, v: f64) -> Self::R;
    /// A leaf that gradients are taken with respect to. Plain evaluation has
    /// no gradients, so this is just the value there.
    fn variable(&self, v: f64) -> Self::R;
}

/// Evaluation on bare `f64`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Plain;

impl Context for Plain {
    type R = f64;
    fn constant(&self, v: f64) -> f64 {
        v
    }
    fn variable(&self, v: f64) -> f64 {
        v
    }
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> f64 {
        libm::exp(self)
    }
    fn ln(self) -> f64 {
        libm::log(self)
    }
    fn powf(self, e: f64) -> f64 {
        libm::pow(self, e)
    }
    fn max(self, other: f64) -> f64 {
        if self >= other {
            self
        } else {
            other
        }
    }
    fn relu_sq(self) -> f64 {
        if self > 0.0 {
            self * self
        } else {
            0.0
        }
    }
    fn straight_through(self, hard: f64) -> f64 {
        hard
    }
    fn sigmoid(self) -> f64 {
        1.0 / (1.0 + libm::exp(-self))
    }
}

/// Maximum of a non-empty list with first-wins ties. `None` when empty.
pub fn hard_max<R: Real>(operands: &[R]) -> Option<R> {
    let (&first, rest) = operands.split_first()?;
    Some(rest.iter().fold(first, |acc, &x| acc.max(x)))
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Param,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Exp(u32),
    Ln(u32),
    Powf(u32, f64),
    Max(u32, u32),
    ReluSq(u32),
    Through(u32),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    value: f64,
}

/// Append-only expression tape.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<u32>>,
    error: Cell<Option<AdError>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("params", &self.params.borrow().len())
            .field("error", &self.error.get())
            .finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.value())
    }
}

fn eval(op: Op, vals: &[Node], current: f64) -> f64 {
    let v = |i: u32| vals[i as usize].value;
    match op {
        Op::Leaf | Op::Param | Op::Through(_) => current,
        Op::Add(a, b) => v(a) + v(b),
        Op::Sub(a, b) => v(a) - v(b),
        Op::Mul(a, b) => v(a) * v(b),
        Op::Div(a, b) => v(a) / v(b),
        Op::Neg(a) => -v(a),
        Op::Exp(a) => libm::exp(v(a)),
        Op::Ln(a) => libm::log(v(a)),
        Op::Powf(a, e) => libm::pow(v(a), e),
        Op::Max(a, b) => {
            if v(a) >= v(b) {
                v(a)
            } else {
                v(b)
            }
        }
        Op::ReluSq(a) => {
            let x = v(a);
            if x > 0.0 {
                x * x
            } else {
                0.0
            }
        }
    }
}

fn domain_error(op: Op, vals: &[Node], value: f64, node: u32) -> Option<AdError> {
    let v = |i: u32| vals[i as usize].value;
    match op {
        Op::Div(_, b) if v(b) == 0.0 => Some(AdError::DivisionByZero { node }),
        Op::Ln(a) if v(a) <= 0.0 => Some(AdError::LogDomain { node }),
        Op::Leaf | Op::Param if !value.is_finite() => Some(AdError::NonFiniteInput { node }),
        _ if !value.is_finite() => Some(AdError::NonFinite { node }),
        _ => None,
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, op: Op, value: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        let value = match op {
            Op::Leaf | Op::Param | Op::Through(_) => value,
            _ => eval(op, &nodes, value),
        };
        if self.error.get().is_none() {
            if let Some(err) = domain_error(op, &nodes, value, idx) {
                self.error.set(Some(err));
            }
        }
        nodes.push(Node { op, value });
        Var { tape: self, idx }
    }

    /// Constant leaf; not a gradient target.
    pub fn constant(&self, v: f64) -> Result<Var<'_>, AdError> {
        if !v.is_finite() {
            return Err(AdError::NonFiniteInput { node: self.len() as u32 });
        }
        Ok(self.push(Op::Leaf, v))
    }

    /// Trainable leaf.
    pub fn param(&self, v: f64) -> Result<Var<'_>, AdError> {
        if !v.is_finite() {
            return Err(AdError::NonFiniteInput { node: self.len() as u32 });
        }
        let var = self.push(Op::Param, v);
        self.params.borrow_mut().push(var.idx);
        Ok(var)
    }

    /// Constant leaf that records an error on the tape instead of failing.
    pub fn lit(&self, v: f64) -> Var<'_> {
        self.push(Op::Leaf, v)
    }

    /// First domain error raised while building or re-evaluating the tape.
    pub fn check(&self) -> Result<(), AdError> {
        match self.error.get() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.borrow().len()
    }

    /// Overwrite a parameter leaf. Call [`Tape::forward`] afterwards to refresh
    /// dependent values.
    ///
    /// # Panics
    /// If `var` is not a parameter of this tape.
    pub fn set_param(&self, var: Var<'_>, v: f64) {
        assert!(core::ptr::eq(var.tape, self), "variable from another tape");
        let mut nodes = self.nodes.borrow_mut();
        let node = &mut nodes[var.idx as usize];
        assert!(matches!(node.op, Op::Param), "not a parameter");
        node.value = v;
    }

    /// Recompute every cached value in recording order.
    pub fn forward(&self) {
        let mut nodes = self.nodes.borrow_mut();
        self.error.set(None);
        for i in 0..nodes.len() {
            let Node { op, value } = nodes[i];
            let value = eval(op, &nodes[..i], value);
            if self.error.get().is_none() {
                if let Some(err) = domain_error(op, &nodes[..i], value, i as u32) {
                    self.error.set(Some(err));
                }
            }
            nodes[i].value = value;
        }
    }

    /// Reverse sweep from `root`. Adjoints of shared subexpressions accumulate.
    pub fn backward(&self, root: Var<'_>) -> GradientMap {
        assert!(core::ptr::eq(root.tape, self), "root from another tape");
        let nodes = self.nodes.borrow();
        let n = root.idx as usize + 1;
        let mut adj = vec![0.0f64; n];
        adj[n - 1] = 1.0;
        for i in (0..n).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let v = |j: u32| nodes[j as usize].value;
            match nodes[i].op {
                Op::Leaf | Op::Param => {}
                Op::Add(x, y) => {
                    adj[x as usize] += a;
                    adj[y as usize] += a;
                }
                Op::Sub(x, y) => {
                    adj[x as usize] += a;
                    adj[y as usize] -= a;
                }
                Op::Mul(x, y) => {
                    adj[x as usize] += a * v(y);
                    adj[y as usize] += a * v(x);
                }
                Op::Div(x, y) => {
                    let d = v(y);
                    adj[x as usize] += a / d;
                    adj[y as usize] -= a * v(x) / (d * d);
                }
                Op::Neg(x) => adj[x as usize] -= a,
                Op::Exp(x) => adj[x as usize] += a * nodes[i].value,
                Op::Ln(x) => adj[x as usize] += a / v(x),
                Op::Powf(x, e) => adj[x as usize] += a * e * libm::pow(v(x), e - 1.0),
                Op::Max(x, y) => {
                    if v(x) >= v(y) {
                        adj[x as usize] += a;
                    } else {
                        adj[y as usize] += a;
                    }
                }
                Op::ReluSq(x) => adj[x as usize] += a * 2.0 * v(x).max(0.0),
                Op::Through(x) => adj[x as usize] += a,
            }
        }
        let entries = self
            .params
            .borrow()
            .iter()
            .map(|&p| (p, adj.get(p as usize).copied().unwrap_or(0.0)))
            .collect();
        GradientMap { entries }
    }
}

impl<'t> Context for &'t Tape {
    type R = Var<'t>;
    fn constant(&self, v: f64) -> Var<'t> {
        self.lit(v)
    }
    fn variable(&self, v: f64) -> Var<'t> {
        let var = self.push(Op::Param, v);
        self.params.borrow_mut().push(var.idx);
        var
    }
}

/// Partial derivatives of a root with respect to every parameter on the tape,
/// in parameter-creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    entries: Vec<(u32, f64)>,
}

impl GradientMap {
    /// Derivative with respect to `var`; zero for anything that is not a
    /// parameter of the differentiated tape.
    pub fn get(&self, var: Var<'_>) -> f64 {
        self.entries
            .binary_search_by_key(&var.idx, |&(n, _)| n)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Gradients in parameter-creation order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|&(_, g)| g)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, op: Op) -> Self {
        self.tape.push(op, 0.0)
    }

    fn binary(self, other: Self, f: fn(u32, u32) -> Op) -> Self {
        assert!(core::ptr::eq(self.tape, other.tape), "operands on different tapes");
        self.tape.push(f(self.idx, other.idx), 0.0)
    }
}

impl Real for Var<'_> {
    fn value(self) -> f64 {
        self.tape.nodes.borrow()[self.idx as usize].value
    }
    fn exp(self) -> Self {
        self.unary(Op::Exp(self.idx))
    }
    fn ln(self) -> Self {
        self.unary(Op::Ln(self.idx))
    }
    fn powf(self, e: f64) -> Self {
        self.unary(Op::Powf(self.idx, e))
    }
    fn max(self, other: Self) -> Self {
        self.binary(other, Op::Max)
    }
    fn relu_sq(self) -> Self {
        self.unary(Op::ReluSq(self.idx))
    }
    fn straight_through(self, hard: f64) -> Self {
        self.tape.push(Op::Through(self.idx), hard)
    }
}

macro_rules! var_binop {
    ($trait:ident, $method:ident, $op:ident) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.binary(rhs, Op::$op)
            }
        }
        impl<'t> $trait<f64> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: f64) -> Var<'t> {
                let c = self.tape.lit(rhs);
                self.binary(c, Op::$op)
            }
        }
        impl<'t> $trait<Var<'t>> for f64 {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                let c = rhs.tape.lit(self);
                c.binary(rhs, Op::$op)
            }
        }
    };
}

var_binop!(Add, add, Add);
var_binop!(Sub, sub, Sub);
var_binop!(Mul, mul, Mul);
var_binop!(Div, div, Div);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn leaves() {
        let t = Tape::new();
        let c = t.constant(3.0).unwrap();
        assert_eq!(c.value(), 3.0);
        let p = t.param(2.0).unwrap();
        let g = t.backward(p);
        assert_eq!(g.get(p), 1.0);
        let g = t.backward(c + p * 0.0);
        assert_eq!(g.get(c), 0.0);
        assert!(t.constant(f64::NAN).is_err());
        assert!(t.param(f64::INFINITY).is_err());
    }

    #[test]
    fn product_and_exp_rules() {
        let t = Tape::new();
        let x = t.param(2.0).unwrap();
        let y = t.param(5.0).unwrap();
        let g = t.backward(x * y);
        assert_eq!(g.get(x), 5.0);
        let z = t.param(0.0).unwrap();
        assert_eq!(t.backward(z.exp()).get(z), 1.0);
    }

    #[test]
    fn composite_polynomial() {
        let t = Tape::new();
        let x = t.param(3.0).unwrap();
        let y = t.param(4.0).unwrap();
        let f = x * x * y + y;
        assert_eq!(f.value(), 40.0);
        let g = t.backward(f);
        assert_eq!(g.get(y), 10.0);
        assert_eq!(g.get(x), 24.0);
    }

    #[test]
    fn sums_and_squares() {
        let t = Tape::new();
        let p1 = t.param(1.5).unwrap();
        let p2 = t.param(-0.5).unwrap();
        let g = t.backward(p1 + p2);
        assert_eq!((g.get(p1), g.get(p2)), (1.0, 1.0));
        let q = t.param(3.0).unwrap();
        assert_eq!(t.backward(q * q).get(q), 6.0);
    }

    #[test]
    fn hard_max_routes_to_argmax() {
        let t = Tape::new();
        let xs = [t.param(3.0).unwrap(), t.param(7.0).unwrap(), t.param(5.0).unwrap()];
        let m = hard_max(&xs).unwrap();
        assert_eq!(m.value(), 7.0);
        let g = t.backward(m);
        assert_eq!([g.get(xs[0]), g.get(xs[1]), g.get(xs[2])], [0.0, 1.0, 0.0]);

        let single = t.param(2.5).unwrap();
        let m = hard_max(&[single]).unwrap();
        assert_eq!(t.backward(m).get(single), 1.0);

        let a = t.param(4.0).unwrap();
        let b = t.param(4.0).unwrap();
        let g = t.backward(hard_max(&[a, b]).unwrap());
        assert_eq!((g.get(a), g.get(b)), (1.0, 0.0));

        assert!(hard_max::<f64>(&[]).is_none());
    }

    #[test]
    fn relu_sq_values_and_slopes() {
        for (x, v, d) in [(-2.0, 0.0, 0.0), (3.0, 9.0, 6.0), (0.0, 0.0, 0.0)] {
            let t = Tape::new();
            let p = t.param(x).unwrap();
            let r = p.relu_sq();
            assert_eq!(r.value(), v);
            assert_eq!(t.backward(r).get(p), d);
        }
    }

    #[test]
    fn division_and_log_domain_errors() {
        let t = Tape::new();
        let x = t.param(1.0).unwrap();
        let zero = t.constant(0.0).unwrap();
        let _ = x / zero;
        assert!(matches!(t.check(), Err(AdError::DivisionByZero { .. })));

        let t = Tape::new();
        let x = t.param(-1.0).unwrap();
        let _ = x.ln();
        assert!(matches!(t.check(), Err(AdError::LogDomain { .. })));
    }

    #[test]
    fn quotient_power_and_log_rules() {
        let t = Tape::new();
        let x = t.param(2.0).unwrap();
        let y = t.param(3.0).unwrap();
        let g = t.backward(x / y);
        assert!(close(g.get(x), 1.0 / 3.0));
        assert!(close(g.get(y), -2.0 / 9.0));
        let g = t.backward(x.powf(3.0));
        assert!(close(g.get(x), 12.0));
        let g = t.backward(y.ln());
        assert!(close(g.get(y), 1.0 / 3.0));
        let g = t.backward(-x - 1.0);
        assert_eq!(g.get(x), -1.0);
    }

    #[test]
    fn straight_through_passes_gradient() {
        let t = Tape::new();
        let x = t.param(2.0).unwrap();
        let soft = x * x;
        let st = soft.straight_through(10.0);
        assert_eq!(st.value(), 10.0);
        assert_eq!(t.backward(st).get(x), 4.0);
    }

    #[test]
    fn reevaluation_matches_rebuild() {
        fn build(t: &Tape, a: f64, b: f64) -> (Var<'_>, Var<'_>, Var<'_>) {
            let x = t.param(a).unwrap();
            let y = t.param(b).unwrap();
            let f = (x * y).exp() / (y + 1.0) + x.max(y).relu_sq();
            (x, y, f)
        }
        let t = Tape::new();
        let (x, y, f) = build(&t, 0.3, 0.7);
        t.set_param(x, 0.9);
        t.set_param(y, -0.2);
        t.forward();
        let fresh = Tape::new();
        let (_, _, g) = build(&fresh, 0.9, -0.2);
        assert_eq!(f.value(), g.value());
        assert_eq!(t.backward(f).values().collect::<Vec<_>>(), fresh.backward(g).values().collect::<Vec<_>>());
    }

    #[test]
    fn sigmoid_matches_plain() {
        let t = Tape::new();
        let x = t.param(0.7).unwrap();
        let s = x.sigmoid();
        assert!(close(s.value(), 0.7f64.sigmoid()));
        let sv = s.value();
        assert!(close(t.backward(s).get(x), sv * (1.0 - sv)));
    }
}
