//! Reverse-mode automatic differentiation on a scalar tape.
//!
//! Gradients produced by [`Tape::grad`] are recorded on the same tape, so they can be
//! differentiated again. The recursive relevance functions need this: each layer's relevance
//! is built from gradients of the layer above, evaluated at root points that may themselves
//! depend on the layer input.
//!
//! Values that do not depend on any leaf are kept off the tape (`idx == None`), which keeps
//! graphs small when root points are constant.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    /// `c / x` for a constant `c`.
    Recip(u32),
    /// `k * x + c` for constants `k`, `c`.
    Affine(u32, f64),
    Softplus(u32, f64),
    /// `sigmoid(β x)`
    Sigmoid(u32, f64),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    value: f64,
}

#[derive(Debug, Default)]
pub(crate) struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub(crate) struct Var<'t> {
    tape: &'t Tape,
    idx: Option<u32>,
    value: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.idx {
            Some(i) => write!(f, "Var#{i}({})", self.value),
            None => write!(f, "Const({})", self.value),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[allow(dead_code)]
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        Var {
            tape: self,
            idx: None,
            value,
        }
    }

    pub fn leaf(&self, value: f64) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    fn push(&self, op: Op, value: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = u32::try_from(nodes.len()).expect("tape exceeds u32 nodes");
        nodes.push(Node { op, value });
        Var {
            tape: self,
            idx: Some(idx),
            value,
        }
    }

    fn var(&self, idx: u32) -> Var<'_> {
        let value = self.nodes.borrow()[idx as usize].value;
        Var {
            tape: self,
            idx: Some(idx),
            value,
        }
    }

    /// Partial derivatives of `out` with respect to each node in `wrt`, recorded on the tape.
    ///
    /// Nodes in `wrt` are treated as independent: adjoints are not propagated through them.
    /// Every path from `out` back to the inputs of interest must pass through `wrt`.
    pub fn grad<'t>(&'t self, out: Var<'t>, wrt: &[Var<'t>]) -> Vec<Var<'t>> {
        let zeros = || wrt.iter().map(|_| self.constant(0.0)).collect();
        let Some(out_idx) = out.idx else {
            return zeros();
        };
        let Some(lo) = wrt.iter().filter_map(|v| v.idx).min() else {
            return zeros();
        };
        if lo > out_idx {
            return zeros();
        }
        let targets: std::collections::HashSet<u32> = wrt.iter().filter_map(|v| v.idx).collect();
        let mut adjoint: HashMap<u32, Var<'t>> = HashMap::new();
        let mut found: HashMap<u32, Var<'t>> = HashMap::new();
        adjoint.insert(out_idx, self.constant(1.0));

        let accumulate = |adjoint: &mut HashMap<u32, Var<'t>>, idx: u32, contribution: Var<'t>| {
            if idx < lo {
                return;
            }
            adjoint
                .entry(idx)
                .and_modify(|acc| *acc = *acc + contribution)
                .or_insert(contribution);
        };

        for i in (lo..=out_idx).rev() {
            let Some(g) = adjoint.remove(&i) else {
                continue;
            };
            if targets.contains(&i) {
                found.insert(i, g);
                continue;
            }
            if g.idx.is_none() && g.value == 0.0 {
                continue;
            }
            let op = self.nodes.borrow()[i as usize].op;
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut adjoint, a, g);
                    accumulate(&mut adjoint, b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adjoint, a, g);
                    if b >= lo {
                        accumulate(&mut adjoint, b, -g);
                    }
                }
                Op::Mul(a, b) => {
                    if a >= lo {
                        accumulate(&mut adjoint, a, g * self.var(b));
                    }
                    if b >= lo {
                        accumulate(&mut adjoint, b, g * self.var(a));
                    }
                }
                Op::Div(a, b) => {
                    if a >= lo {
                        accumulate(&mut adjoint, a, g / self.var(b));
                    }
                    if b >= lo {
                        accumulate(&mut adjoint, b, -(g * self.var(i) / self.var(b)));
                    }
                }
                Op::Recip(b) => {
                    if b >= lo {
                        accumulate(&mut adjoint, b, -(g * self.var(i) / self.var(b)));
                    }
                }
                Op::Affine(a, k) => {
                    if a >= lo {
                        accumulate(&mut adjoint, a, g.scale(k));
                    }
                }
                Op::Softplus(a, beta) => {
                    if a >= lo {
                        accumulate(&mut adjoint, a, g * self.var(a).sigmoid(beta));
                    }
                }
                Op::Sigmoid(a, beta) => {
                    if a >= lo {
                        let s = self.var(i);
                        let slope = (s * (-s + 1.0)).scale(beta);
                        accumulate(&mut adjoint, a, g * slope);
                    }
                }
            }
        }

        wrt.iter()
            .map(|v| {
                v.idx
                    .and_then(|i| found.get(&i).copied())
                    .unwrap_or_else(|| self.constant(0.0))
            })
            .collect()
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.value
    }

    fn affine(self, k: f64, c: f64) -> Self {
        let value = k * self.value + c;
        match self.idx {
            None => self.tape.constant(value),
            Some(_) if k == 0.0 => self.tape.constant(value),
            Some(_) if k == 1.0 && c == 0.0 => self,
            Some(a) => self.tape.push(Op::Affine(a, k), value),
        }
    }

    pub fn scale(self, k: f64) -> Self {
        self.affine(k, 0.0)
    }

    /// A new tape node equal to `self`, so it can serve as an independent `wrt` target.
    pub fn fresh(self) -> Self {
        match self.idx {
            None => self.tape.leaf(self.value),
            Some(a) => self.tape.push(Op::Affine(a, 1.0), self.value),
        }
    }

    pub fn softplus(self, beta: f64) -> Self {
        let value = crate::net::softplus(beta, self.value);
        match self.idx {
            None => self.tape.constant(value),
            Some(a) => self.tape.push(Op::Softplus(a, beta), value),
        }
    }

    pub fn sigmoid(self, beta: f64) -> Self {
        let value = crate::net::sigmoid(beta * self.value);
        match self.idx {
            None => self.tape.constant(value),
            Some(a) => self.tape.push(Op::Sigmoid(a, beta), value),
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        match (self.idx, rhs.idx) {
            (None, None) => self.tape.constant(self.value + rhs.value),
            (Some(_), None) => self.affine(1.0, rhs.value),
            (None, Some(_)) => rhs.affine(1.0, self.value),
            (Some(a), Some(b)) => self.tape.push(Op::Add(a, b), self.value + rhs.value),
        }
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.affine(1.0, rhs)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        match (self.idx, rhs.idx) {
            (None, None) => self.tape.constant(self.value - rhs.value),
            (Some(_), None) => self.affine(1.0, -rhs.value),
            (None, Some(_)) => rhs.affine(-1.0, self.value),
            (Some(a), Some(b)) => self.tape.push(Op::Sub(a, b), self.value - rhs.value),
        }
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        match (self.idx, rhs.idx) {
            (None, None) => self.tape.constant(self.value * rhs.value),
            (Some(_), None) => self.scale(rhs.value),
            (None, Some(_)) => rhs.scale(self.value),
            (Some(a), Some(b)) => self.tape.push(Op::Mul(a, b), self.value * rhs.value),
        }
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let value = self.value / rhs.value;
        match (self.idx, rhs.idx) {
            (None, None) => self.tape.constant(value),
            (Some(_), None) => self.scale(1.0 / rhs.value),
            (None, Some(_)) if self.value == 0.0 => self.tape.constant(value),
            (None, Some(b)) => self.tape.push(Op::Recip(b), value),
            (Some(a), Some(b)) => self.tape.push(Op::Div(a, b), value),
        }
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.affine(-1.0, 0.0)
    }
}

/// Arithmetic shared by plain `f64` evaluation and taped evaluation, so that root-point
/// formulas have one implementation used both for numbers and for differentiation.
pub(crate) trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn value(self) -> f64;
    /// A constant living in the same context as `self`.
    fn lift(self, v: f64) -> Self;
    fn scale(self, k: f64) -> Self;
    fn softplus(self, beta: f64) -> Self;
}

impl Scalar for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, v: f64) -> Self {
        v
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
    fn softplus(self, beta: f64) -> Self {
        crate::net::softplus(beta, self)
    }
}

impl Scalar for Var<'_> {
    fn value(self) -> f64 {
        self.value
    }
    fn lift(self, v: f64) -> Self {
        self.tape.constant(v)
    }
    fn scale(self, k: f64) -> Self {
        Var::scale(self, k)
    }
    fn softplus(self, beta: f64) -> Self {
        Var::softplus(self, beta)
    }
}

/// `Σ_i w_i a_i` with constant weights.
pub(crate) fn dot_const<S: Scalar>(w: &[f64], a: &[S]) -> S {
    let mut terms = w.iter().zip(a).map(|(&wi, &ai)| ai.scale(wi));
    let first = terms.next().expect("dot of empty vectors");
    terms.fold(first, |acc, t| acc + t)
}
