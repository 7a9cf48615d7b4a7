use super::array::{gemm, Array};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operation kinds understood by [`Tape::forward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    /// `x · W + 1 bᵀ` with `b` a `1×out` row, i.e. a dense layer.
    Linear,
    Tanh,
    Exp,
    Ln,
    Square,
    Sqrt,
    Relu,
    /// Elementwise minimum; ties route the gradient to the first operand.
    Minimum,
    Sum,
    Mean,
    Scale(f64),
    ConcatCols,
    SliceCols(usize, usize),
}

impl OpKind {
    fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::MatMul => "matmul",
            OpKind::Linear => "linear",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Ln => "ln",
            OpKind::Square => "square",
            OpKind::Sqrt => "sqrt",
            OpKind::Relu => "relu",
            OpKind::Minimum => "minimum",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Scale(_) => "scale",
            OpKind::ConcatCols => "concat_cols",
            OpKind::SliceCols(..) => "slice_cols",
        }
    }

    fn arity(self) -> usize {
        match self {
            OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::Div
            | OpKind::MatMul
            | OpKind::Minimum
            | OpKind::ConcatCols => 2,
            OpKind::Linear => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Array,
    kind: Option<OpKind>,
    operands: [usize; 3],
}

/// Append-only record of a computation for reverse-mode differentiation.
///
/// Nodes are stored in creation order, so every operand precedes its
/// consumers and a single reverse sweep visits each node once.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Array> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, or zeros shaped like `like` when the output does
    /// not depend on it.
    pub fn get_or_zeros(&self, id: NodeId, like: &Array) -> Array {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Array::zeros(like.shape()))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf (parameter, input or constant).
    pub fn leaf(&mut self, value: Array) -> NodeId {
        self.nodes.push(Node {
            value,
            kind: None,
            operands: [0; 3],
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.leaf(Array::scalar(value))
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    /// Evaluates `kind` on `operands` and records the result.
    pub fn forward(&mut self, kind: OpKind, operands: &[NodeId]) -> Result<NodeId> {
        if operands.len() != kind.arity() {
            return Err(Error::contract(format!(
                "{} takes {} operands, got {}",
                kind.name(),
                kind.arity(),
                operands.len()
            )));
        }
        for id in operands {
            if id.0 >= self.nodes.len() {
                return Err(Error::contract(format!(
                    "{}: operand {} is not on this tape",
                    kind.name(),
                    id.0
                )));
            }
        }
        let value = self.evaluate(kind, operands)?;
        let mut ops = [0; 3];
        for (slot, id) in ops.iter_mut().zip(operands) {
            *slot = id.0;
        }
        self.nodes.push(Node {
            value,
            kind: Some(kind),
            operands: ops,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn evaluate(&self, kind: OpKind, operands: &[NodeId]) -> Result<Array> {
        let name = kind.name();
        let a = &self.nodes[operands[0].0].value;
        let b = operands.get(1).map(|id| &self.nodes[id.0].value);
        match kind {
            OpKind::Add => a.zip_broadcast(b.unwrap(), name, |x, y| x + y),
            OpKind::Sub => a.zip_broadcast(b.unwrap(), name, |x, y| x - y),
            OpKind::Mul => a.zip_broadcast(b.unwrap(), name, |x, y| x * y),
            OpKind::Div => {
                let b = b.unwrap();
                if let Some(i) = b.data().iter().position(|&v| v == 0.0) {
                    return Err(Error::Domain {
                        op: name,
                        index: i,
                        value: 0.0,
                    });
                }
                a.zip_broadcast(b, name, |x, y| x / y)
            }
            OpKind::Minimum => a.zip_broadcast(b.unwrap(), name, f64::min),
            OpKind::MatMul => a.matmul(b.unwrap()),
            OpKind::Linear => a.affine(b.unwrap(), &self.nodes[operands[2].0].value),
            OpKind::Tanh => Ok(a.map(f64::tanh)),
            OpKind::Exp => Ok(a.map(f64::exp)),
            OpKind::Ln => {
                check_positive(a, name)?;
                Ok(a.map(f64::ln))
            }
            OpKind::Square => Ok(a.map(|x| x * x)),
            OpKind::Sqrt => {
                check_positive(a, name)?;
                Ok(a.map(f64::sqrt))
            }
            OpKind::Relu => Ok(a.map(|x| if x > 0.0 { x } else { 0.0 })),
            OpKind::Sum => Ok(Array::scalar(a.sum())),
            OpKind::Mean => {
                if a.is_empty() {
                    return Err(Error::contract("mean of an empty array"));
                }
                Ok(Array::scalar(a.sum() / a.len() as f64))
            }
            OpKind::Scale(c) => Ok(a.map(|x| c * x)),
            OpKind::ConcatCols => {
                let b = b.unwrap();
                let (ra, ca) = a.require_matrix(name)?;
                let (rb, cb) = b.require_matrix(name)?;
                if ra != rb {
                    return Err(Error::Shape {
                        op: name,
                        lhs: a.shape().to_vec(),
                        rhs: b.shape().to_vec(),
                    });
                }
                let mut data = Vec::with_capacity(ra * (ca + cb));
                for r in 0..ra {
                    data.extend_from_slice(a.row(r));
                    data.extend_from_slice(b.row(r));
                }
                Array::matrix(ra, ca + cb, data)
            }
            OpKind::SliceCols(start, end) => {
                let (r, c) = a.require_matrix(name)?;
                if start >= end || end > c {
                    return Err(Error::Shape {
                        op: name,
                        lhs: a.shape().to_vec(),
                        rhs: vec![start, end],
                    });
                }
                let mut data = Vec::with_capacity(r * (end - start));
                for i in 0..r {
                    data.extend_from_slice(&a.row(i)[start..end]);
                }
                Array::matrix(r, end - start, data)
            }
        }
    }

    /// Reverse sweep from a scalar `output`.
    ///
    /// The tape is not consumed; calling this twice gives identical results.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if !out.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Array::full(out.shape(), 1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let Some(kind) = node.kind else { continue };
            let Some(g) = grads[i].take() else { continue };
            self.propagate(kind, node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, kind: OpKind, node: &Node, g: &Array, grads: &mut [Option<Array>]) {
        let ia = node.operands[0];
        let ib = node.operands[1];
        let a = &self.nodes[ia].value;
        let y = &node.value;
        match kind {
            OpKind::Add => {
                accumulate(grads, ia, reduce_to(g.clone(), a));
                accumulate(grads, ib, reduce_to(g.clone(), &self.nodes[ib].value));
            }
            OpKind::Sub => {
                accumulate(grads, ia, reduce_to(g.clone(), a));
                accumulate(grads, ib, reduce_to(g.map(|v| -v), &self.nodes[ib].value));
            }
            OpKind::Mul => {
                let b = &self.nodes[ib].value;
                let ga = bmul(g, b, |gv, bv| gv * bv);
                let gb = bmul(g, a, |gv, av| gv * av);
                accumulate(grads, ia, reduce_to(ga, a));
                accumulate(grads, ib, reduce_to(gb, b));
            }
            OpKind::Div => {
                let b = &self.nodes[ib].value;
                let ga = bmul(g, b, |gv, bv| gv / bv);
                // d(a/b)/db = -y / b
                let gy = bmul(g, y, |gv, yv| gv * yv);
                let gb = bmul(&gy, b, |v, bv| -v / bv);
                accumulate(grads, ia, reduce_to(ga, a));
                accumulate(grads, ib, reduce_to(gb, b));
            }
            OpKind::Minimum => {
                let b = &self.nodes[ib].value;
                let full_a = expand(a, y);
                let full_b = expand(b, y);
                let mut ga = g.clone();
                let mut gb = g.clone();
                for ((pa, pb), (&av, &bv)) in ga
                    .data_mut()
                    .iter_mut()
                    .zip(gb.data_mut().iter_mut())
                    .zip(full_a.data().iter().zip(full_b.data()))
                {
                    if av <= bv {
                        *pb = 0.0;
                    } else {
                        *pa = 0.0;
                    }
                }
                accumulate(grads, ia, reduce_to(ga, a));
                accumulate(grads, ib, reduce_to(gb, b));
            }
            OpKind::MatMul | OpKind::Linear => {
                let w = &self.nodes[ib].value;
                let (m, k) = (a.rows(), a.cols());
                let n = w.cols();
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, w.data(), true, &mut ga, false);
                let mut gw = vec![0.0; k * n];
                gemm(k, m, n, a.data(), true, g.data(), false, &mut gw, false);
                accumulate(grads, ia, Array::new(a.shape().to_vec(), ga).unwrap());
                accumulate(grads, ib, Array::new(w.shape().to_vec(), gw).unwrap());
                if kind == OpKind::Linear {
                    let ic = node.operands[2];
                    let bias = &self.nodes[ic].value;
                    let mut gb = vec![0.0; n];
                    for r in 0..m {
                        for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(grads, ic, Array::new(bias.shape().to_vec(), gb).unwrap());
                }
            }
            OpKind::Tanh => {
                let ga = bmul(g, y, |gv, yv| gv * (1.0 - yv * yv));
                accumulate(grads, ia, ga);
            }
            OpKind::Exp => accumulate(grads, ia, bmul(g, y, |gv, yv| gv * yv)),
            OpKind::Ln => accumulate(grads, ia, bmul(g, a, |gv, av| gv / av)),
            OpKind::Square => accumulate(grads, ia, bmul(g, a, |gv, av| 2.0 * gv * av)),
            OpKind::Sqrt => accumulate(grads, ia, bmul(g, y, |gv, yv| 0.5 * gv / yv)),
            OpKind::Relu => accumulate(
                grads,
                ia,
                bmul(g, a, |gv, av| if av > 0.0 { gv } else { 0.0 }),
            ),
            OpKind::Sum => {
                let gv = g.data()[0];
                accumulate(grads, ia, Array::full(a.shape(), gv));
            }
            OpKind::Mean => {
                let gv = g.data()[0] / a.len() as f64;
                accumulate(grads, ia, Array::full(a.shape(), gv));
            }
            OpKind::Scale(c) => accumulate(grads, ia, g.map(|v| c * v)),
            OpKind::ConcatCols => {
                let b = &self.nodes[ib].value;
                let (ca, cb) = (a.cols(), b.cols());
                let mut ga = Vec::with_capacity(a.len());
                let mut gb = Vec::with_capacity(b.len());
                for r in 0..a.rows() {
                    let row = g.row(r);
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..ca + cb]);
                }
                accumulate(grads, ia, Array::new(a.shape().to_vec(), ga).unwrap());
                accumulate(grads, ib, Array::new(b.shape().to_vec(), gb).unwrap());
            }
            OpKind::SliceCols(start, end) => {
                let c = a.cols();
                let mut ga = vec![0.0; a.len()];
                for r in 0..a.rows() {
                    ga[r * c + start..r * c + end].copy_from_slice(g.row(r));
                }
                accumulate(grads, ia, Array::new(a.shape().to_vec(), ga).unwrap());
            }
        }
    }

    // Convenience wrappers; shape errors surface through `forward`.

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Mul, &[a, b])
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Div, &[a, b])
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward(OpKind::MatMul, &[a, b])
    }
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Linear, &[x, w, b])
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Tanh, &[a])
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Exp, &[a])
    }
    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Ln, &[a])
    }
    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Square, &[a])
    }
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Sqrt, &[a])
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Relu, &[a])
    }
    pub fn minimum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Minimum, &[a, b])
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Sum, &[a])
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.forward(OpKind::Mean, &[a])
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.forward(OpKind::Scale(c), &[a])
    }
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.forward(OpKind::ConcatCols, &[a, b])
    }
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.forward(OpKind::SliceCols(start, end), &[a])
    }

    /// Row sums of a matrix as a column, via a product with a ones vector.
    pub fn row_sums(&mut self, a: NodeId) -> Result<NodeId> {
        let cols = self.value(a).cols();
        let ones = self.leaf(Array::ones(&[cols, 1]));
        self.matmul(a, ones)
    }
}

fn check_positive(a: &Array, op: &'static str) -> Result<()> {
    match a.data().iter().position(|&v| v <= 0.0 || v.is_nan()) {
        Some(index) => Err(Error::Domain {
            op,
            index,
            value: a.data()[index],
        }),
        None => Ok(()),
    }
}

/// Elementwise `f(g, x)` where `x` may be a broadcast scalar.
fn bmul(g: &Array, x: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    if x.len() == g.len() {
        let data = g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect();
        Array::new(g.shape().to_vec(), data).unwrap()
    } else {
        let xv = x.data()[0];
        g.map(|a| f(a, xv))
    }
}

fn expand(x: &Array, like: &Array) -> Array {
    if x.len() == like.len() {
        x.clone()
    } else {
        Array::full(like.shape(), x.data()[0])
    }
}

/// Sums a broadcast gradient back down to the operand's shape.
fn reduce_to(g: Array, operand: &Array) -> Array {
    if g.len() == operand.len() {
        if g.shape() == operand.shape() {
            g
        } else {
            Array::new(operand.shape().to_vec(), g.into_data()).unwrap()
        }
    } else {
        Array::full(operand.shape(), g.sum())
    }
}

fn accumulate(grads: &mut [Option<Array>], idx: usize, g: Array) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_and_derivative_at_three() {
        let mut t = Tape::new();
        let x = t.scalar(3.0);
        let y = t.square(x).unwrap();
        assert_eq!(t.value(y).item().unwrap(), 9.0);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn tanh_at_origin() {
        let mut t = Tape::new();
        let x = t.scalar(0.0);
        let y = t.tanh(x).unwrap();
        assert_eq!(t.value(y).item().unwrap(), 0.0);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 1.0);
    }

    #[test]
    fn matmul_of_ones() {
        let mut t = Tape::new();
        let a = t.leaf(Array::ones(&[2, 3]));
        let b = t.leaf(Array::ones(&[3, 1]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).shape(), &[2, 1]);
        assert_eq!(t.value(c).data(), &[3.0, 3.0]);
    }

    #[test]
    fn shape_error_names_op_and_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Array::ones(&[2, 3]));
        let b = t.leaf(Array::ones(&[2, 1]));
        match t.matmul(a, b) {
            Err(Error::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 1]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        let c = t.leaf(Array::ones(&[3, 2]));
        assert!(matches!(t.add(a, c), Err(Error::Shape { op: "add", .. })));
    }

    #[test]
    fn log_and_sqrt_reject_non_positive() {
        let mut t = Tape::new();
        let x = t.leaf(Array::vector(vec![1.0, 0.0]));
        assert!(matches!(t.ln(x), Err(Error::Domain { op: "ln", index: 1, .. })));
        let y = t.leaf(Array::vector(vec![-1.0]));
        assert!(matches!(t.sqrt(y), Err(Error::Domain { op: "sqrt", .. })));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Array::ones(&[2]));
        let y = t.square(x).unwrap();
        assert!(matches!(t.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_leaf_accumulates() {
        // f = x*x + 3x at x = 2: f' = 2x + 3 = 7
        let mut t = Tape::new();
        let x = t.scalar(2.0);
        let a = t.mul(x, x).unwrap();
        let b = t.scale(x, 3.0).unwrap();
        let f = t.add(a, b).unwrap();
        let g = t.backward(f).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 7.0);
    }

    #[test]
    fn backward_twice_identical() {
        let mut t = Tape::new();
        let x = t.leaf(Array::vector(vec![0.3, -1.2, 2.0]));
        let y = t.tanh(x).unwrap();
        let z = t.exp(y).unwrap();
        let s = t.sum(z).unwrap();
        let g1 = t.backward(s).unwrap();
        let g2 = t.backward(s).unwrap();
        assert_eq!(g1.get(x), g2.get(x));
    }

    #[test]
    fn scalar_broadcast_gradient_reduces() {
        // f = sum(c * v), df/dc = sum(v)
        let mut t = Tape::new();
        let c = t.scalar(2.0);
        let v = t.leaf(Array::vector(vec![1.0, 2.0, 3.0]));
        let p = t.mul(c, v).unwrap();
        let s = t.sum(p).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(c).unwrap().item().unwrap(), 6.0);
        assert_eq!(g.get(v).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn minimum_routes_to_smaller() {
        let mut t = Tape::new();
        let a = t.leaf(Array::vector(vec![2.0, 5.0]));
        let b = t.leaf(Array::vector(vec![3.0, 1.0]));
        let m = t.minimum(a, b).unwrap();
        assert_eq!(t.value(m).data(), &[2.0, 1.0]);
        let s = t.sum(m).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(g.get(b).unwrap().data(), &[0.0, 1.0]);
    }
}
