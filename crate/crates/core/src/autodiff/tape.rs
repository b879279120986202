use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::{self, BinaryKind, Op, ReduceKind, UnaryKind};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Stable identity of a trainable array across tapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

static NEXT_PARAM: AtomicU64 = AtomicU64::new(0);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_PARAM.fetch_add(1, Ordering::Relaxed))
    }
}

/// A trainable array. Its id links gradients and optimizer state to it.
#[derive(Clone, Debug)]
pub struct Param {
    id: ParamId,
    pub value: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Param {
            id: ParamId::fresh(),
            value,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }
}

pub(crate) struct Node {
    pub value: Rc<Tensor>,
    pub op: Op,
    pub tracked: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    params: HashMap<ParamId, usize>,
    frozen: HashSet<ParamId>,
}

/// Define-by-run gradient record. Build a fresh tape for every forward pass.
///
/// Nodes are appended in evaluation order, so parents always precede
/// children and the backward sweep is a single reverse pass.
pub struct Tape {
    inner: RefCell<Inner>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.inner.borrow().nodes.len())
            .field("grad_enabled", &self.grad_enabled)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner::default()),
            grad_enabled: true,
        }
    }

    /// A tape on which parameters are bound as constants; nothing is tracked.
    pub fn no_grad() -> Self {
        Tape {
            inner: RefCell::new(Inner::default()),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Untracked input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Tracked leaf that is not a model parameter (inputs under test, etc.).
    pub fn var(&self, value: Tensor) -> Var<'_> {
        let tracked = self.grad_enabled;
        self.push(value, Op::Leaf, tracked)
    }

    /// Bind a parameter. Repeated binds of the same parameter return the same
    /// node, so every use contributes to one gradient.
    pub fn param(&self, p: &Param) -> Var<'_> {
        if let Some(&id) = self.inner.borrow().params.get(&p.id) {
            return Var { tape: self, id };
        }
        let tracked = self.grad_enabled && !self.inner.borrow().frozen.contains(&p.id);
        let v = self.push(p.value.clone(), Op::Leaf, tracked);
        self.inner.borrow_mut().params.insert(p.id, v.id);
        v
    }

    /// Bind these parameters as constants on this tape. Must be called
    /// before they are first used.
    pub fn freeze<'a>(&self, params: impl IntoIterator<Item = &'a Param>) {
        let mut inner = self.inner.borrow_mut();
        for p in params {
            debug_assert!(!inner.params.contains_key(&p.id), "freeze after bind");
            inner.frozen.insert(p.id);
        }
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value: Rc::new(value),
            op,
            tracked,
        });
        Var { tape: self, id }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.inner.borrow().nodes[id].value)
    }

    pub(crate) fn tracked(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].tracked
    }

    /// Record an operation whose forward value and vector-Jacobian product
    /// are supplied by the caller. `backward` maps the upstream gradient
    /// (shaped like `value`) to one gradient per parent, in order.
    pub fn custom<'t>(
        &'t self,
        name: &'static str,
        parents: &[Var<'t>],
        value: Tensor,
        backward: impl Fn(&Tensor) -> Result<Vec<Tensor>> + 'static,
    ) -> Result<Var<'t>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let tracked = ids.iter().any(|&i| self.tracked(i));
        Ok(self.push(
            value,
            Op::Custom {
                parents: ids,
                backward: Rc::new(backward),
            },
            tracked,
        ))
    }

    fn record(&self, name: &'static str, value: Tensor, op: Op) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let tracked = {
            let inner = self.inner.borrow();
            op.parents().iter().any(|&p| inner.nodes[p].tracked)
        };
        Ok(self.push(value, op, tracked))
    }

    fn backward_from(&self, root: usize) -> Result<Gradients> {
        let inner = self.inner.borrow();
        let root_node = &inner.nodes[root];
        if root_node.value.len() != 1 {
            return Err(Error::RootNotScalar(root_node.value.shape().to_vec()));
        }
        if !root_node.tracked {
            return Err(Error::RootNotTracked);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root + 1];
        grads[root] = Some(Tensor::from_parts(
            root_node.value.shape().to_vec(),
            vec![1.0],
        ));
        for id in (0..=root).rev() {
            let node = &inner.nodes[id];
            if !node.tracked {
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let parents = node.op.parents();
            if parents.is_empty() {
                grads[id] = Some(upstream);
                continue;
            }
            let contributions = ops::backward(&node.op, &inner.nodes, &node.value, &upstream)?;
            for (p, g) in parents.iter().zip(contributions) {
                if !inner.nodes[*p].tracked {
                    continue;
                }
                match &mut grads[*p] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
            // Interior gradients are only kept for leaves.
        }
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(Gradients {
            grads,
            params: inner.params.clone(),
        })
    }
}

/// Gradients of a scalar root with respect to every tracked leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, usize>,
}

impl Gradients {
    /// Gradient with respect to a leaf; zeros when the root does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match self.grads.get(v.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(v.shape()),
        }
    }

    /// Gradient for a parameter bound on the tape, if it was bound and tracked.
    pub fn param(&self, p: &Param) -> Option<Tensor> {
        let &node = self.params.get(&p.id)?;
        Some(match self.grads.get(node).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(p.value.shape()),
        })
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn backward(&self) -> Result<Gradients> {
        self.tape.backward_from(self.id)
    }

    fn binary(self, kind: BinaryKind, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let value = ops::binary_forward(kind, &a, &b)?;
        self.tape.record(
            kind.name(),
            value,
            Op::Binary {
                kind,
                a: self.id,
                b: other.id,
            },
        )
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Add, other)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Sub, other)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Mul, other)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Div, other)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.value().matmul(&other.value())?;
        self.tape.record(
            "matmul",
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
            },
        )
    }

    fn unary(self, kind: UnaryKind) -> Result<Var<'t>> {
        let value = ops::unary_forward(kind, &self.value())?;
        self.tape
            .record(kind.name(), value, Op::Unary { kind, a: self.id })
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Tanh)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Exp)
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Log)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Neg)
    }

    pub fn softplus(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Softplus)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Relu)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Square)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Sqrt)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Sigmoid)
    }

    /// `scale · x + shift` with constant coefficients.
    pub fn affine(self, scale: f64, shift: f64) -> Result<Var<'t>> {
        let value = self.value().map(|v| scale * v + shift);
        self.tape.record("affine", value, Op::Affine { a: self.id, scale })
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.affine(c, 0.0)
    }

    pub fn shift(self, c: f64) -> Result<Var<'t>> {
        self.affine(1.0, c)
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'t>> {
        let value = self.value().map(|v| v.clamp(lo, hi));
        self.tape
            .record("clamp", value, Op::Clamp { a: self.id, lo, hi })
    }

    fn reduce(self, kind: ReduceKind, axis: Option<usize>) -> Result<Var<'t>> {
        let value = ops::reduce_forward(kind, &self.value(), axis)?;
        self.tape.record(
            kind.name(),
            value,
            Op::Reduce {
                kind,
                a: self.id,
                axis,
            },
        )
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Sum, None)
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Mean, None)
    }

    pub fn sum_of_squares(self) -> Result<Var<'t>> {
        self.reduce(ReduceKind::SumOfSquares, None)
    }

    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Sum, Some(axis))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Mean, Some(axis))
    }

    pub fn sum_of_squares_axis(self, axis: usize) -> Result<Var<'t>> {
        self.reduce(ReduceKind::SumOfSquares, Some(axis))
    }

    /// Add a length-`cols` vector to every row of a matrix (bias add).
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), bias.value());
        let (r, c) = a.dims2()?;
        if b.len() != c {
            return Err(Error::shape("add_row", a.shape(), b.shape()));
        }
        let mut out = a.data().to_vec();
        for i in 0..r {
            for (o, bv) in out[i * c..(i + 1) * c].iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        self.tape.record(
            "add_row",
            Tensor::from_parts(vec![r, c], out),
            Op::AddRow {
                a: self.id,
                b: bias.id,
            },
        )
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let value = self.value().transpose()?;
        self.tape
            .record("transpose", value, Op::Transpose { a: self.id })
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let value = self.value().slice_cols(start, end)?;
        self.tape.record(
            "slice_cols",
            value,
            Op::SliceCols {
                a: self.id,
                start,
                end,
            },
        )
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let Some(first) = parts.first() else {
            return Err(Error::Empty { op: "concat_cols" });
        };
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let value = Tensor::concat_cols(&refs)?;
        first.tape.record(
            "concat_cols",
            value,
            Op::ConcatCols {
                parts: parts.iter().map(|p| p.id).collect(),
            },
        )
    }

    /// Per-row `I + W2 · diag(act_i) · W1`, shaped `n × d × d`.
    ///
    /// `self` is `W2` (`d × h`), `act` is `n × h`, `w1` is `h × d`.
    pub fn residual_jacobian(self, act: Var<'t>, w1: Var<'t>) -> Result<Var<'t>> {
        let value = ops::residual_jacobian_forward(&self.value(), &act.value(), &w1.value())?;
        self.tape.record(
            "residual_jacobian",
            value,
            Op::ResidualJacobian {
                w2: self.id,
                act: act.id,
                w1: w1.id,
            },
        )
    }

    /// `log|det J_i|` for a stack of square matrices `n × d × d`.
    pub fn log_abs_det(self) -> Result<Var<'t>> {
        let (value, inv_t) = ops::log_abs_det_forward(&self.value())?;
        self.tape.record(
            "log_abs_det",
            value,
            Op::LogAbsDet {
                a: self.id,
                inv_t: Rc::new(inv_t),
            },
        )
    }

    /// Squared Euclidean distances between the rows of two matrices.
    pub fn pairwise_sq_dist(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = ops::pairwise_sq_dist_forward(&self.value(), &other.value())?;
        self.tape.record(
            "pairwise_sq_dist",
            value,
            Op::PairwiseSqDist {
                a: self.id,
                b: other.id,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let x = tape.var(Tensor::vector(vec![1.5]));
        let y = x.add(x).unwrap().sum().unwrap();
        let g = y.backward().unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0]);
    }

    #[test]
    fn untouched_leaf_gets_zero() {
        let tape = Tape::new();
        let x = tape.var(Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.var(Tensor::vector(vec![3.0]));
        let y = x.square().unwrap().sum().unwrap();
        let g = y.backward().unwrap();
        assert_eq!(g.wrt(unused).data(), &[0.0]);
    }

    #[test]
    fn root_checks() {
        let tape = Tape::new();
        let x = tape.var(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(x.backward(), Err(Error::RootNotScalar(_))));
        let c = tape.constant(Tensor::vector(vec![1.0]));
        let s = c.sum().unwrap();
        assert!(matches!(s.backward(), Err(Error::RootNotTracked)));
    }

    #[test]
    fn root_gradient_is_one() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(4.0));
        let g = x.backward().unwrap();
        assert_eq!(g.wrt(x).item(), 1.0);
    }

    #[test]
    fn params_bind_once() {
        let p = Param::new(Tensor::vector(vec![2.0]));
        let tape = Tape::new();
        let a = tape.param(&p);
        let b = tape.param(&p);
        let y = a.mul(b).unwrap().sum().unwrap();
        let g = y.backward().unwrap();
        assert_eq!(g.param(&p).unwrap().data(), &[4.0]);
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let a = Param::new(Tensor::vector(vec![2.0]));
        let b = Param::new(Tensor::vector(vec![3.0]));
        let tape = Tape::new();
        tape.freeze([&b]);
        let y = tape.param(&a).mul(tape.param(&b)).unwrap().sum().unwrap();
        let g = y.backward().unwrap();
        assert_eq!(g.param(&a).unwrap().data(), &[3.0]);
        assert_eq!(g.param(&b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn no_grad_tape_tracks_nothing() {
        let p = Param::new(Tensor::vector(vec![2.0]));
        let tape = Tape::no_grad();
        let y = tape.param(&p).square().unwrap().sum().unwrap();
        assert!(!y.is_tracked());
        assert_eq!(y.item(), 4.0);
    }
}
