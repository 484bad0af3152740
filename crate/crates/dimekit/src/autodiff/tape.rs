//! Append-only computation record with eager evaluation and recordable
//! adjoints.

use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Ordering follows creation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
// Some fields (scalar factors, shape parameters) are consumed when the
// forward value is computed and never read again; they stay in the record
// so a debug-printed tape fully describes each operation.
#[allow(dead_code)]
enum Op {
    /// Leaf the caller may differentiate with respect to.
    Input,
    /// Leaf treated as fixed data.
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Sin(NodeId),
    Cos(NodeId),
    Sqrt(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Abs(NodeId),
    Sign(NodeId),
    BesselJ(NodeId, usize),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    ConcatCols(Rc<Vec<NodeId>>),
    SliceCols(NodeId, usize, usize),
    /// Embed into a wider zero matrix starting at the given column.
    PadCols { src: NodeId, start: usize, total: usize },
    SumAll(NodeId),
    SumRows(NodeId),
    SumCols(NodeId),
    Broadcast(NodeId, usize, usize),
    RepeatRows(NodeId, usize),
    RepeatCols(NodeId, usize),
    AddRow(NodeId, NodeId),
    Gather(NodeId, Rc<Vec<usize>>),
    SegmentSum(NodeId, Rc<Vec<usize>>, usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of primitive applications. Values are computed
/// eagerly; [`Tape::grad`] appends the adjoint computation to the same
/// record so its outputs are ordinary, further-differentiable nodes.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf node intended as a differentiation target.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Leaf node holding fixed data.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip(self.value(b), |x, y| x / y);
        self.push(v, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a, c))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::sin);
        self.push(v, Op::Sin(a))
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::cos);
        self.push(v, Op::Cos(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(stable_sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        self.push(v, Op::Softplus(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    /// Elementwise sign with sign(0) = 0; gradient zero everywhere.
    pub fn sign(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        self.push(v, Op::Sign(a))
    }

    /// Self-gated sigmoid-linear activation x * sigmoid(x), composed from
    /// primitives so its derivatives need no special casing.
    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let s = self.sigmoid(a);
        self.mul(a, s)
    }

    /// Elementwise spherical Bessel function j_l; entries must be > 0.
    pub fn bessel_j(&mut self, a: NodeId, l: usize) -> NodeId {
        let v = self.value(a).map(|z| crate::basis::spherical_bessel_j(l, z));
        self.push(v, Op::BesselJ(a, l))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::Matmul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Concatenate along columns; all parts must share the row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), rows, "concat_cols row count mismatch");
                data.extend_from_slice(t.row_slice(r));
            }
        }
        self.push(Tensor::new(rows, total, data), Op::ConcatCols(Rc::new(parts.to_vec())))
    }

    /// Columns [start, end) of a.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let t = self.value(a);
        assert!(start <= end && end <= t.cols(), "slice_cols [{start}, {end}) out of range");
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let v = Tensor::new(rows, end - start, data);
        self.push(v, Op::SliceCols(a, start, end))
    }

    /// Embed a into a [rows, total] zero matrix with its first column at
    /// `start`. Adjoint counterpart of slice_cols.
    pub fn pad_cols(&mut self, a: NodeId, start: usize, total: usize) -> NodeId {
        let t = self.value(a);
        assert!(start + t.cols() <= total, "pad_cols out of range");
        let rows = t.rows();
        let mut out = Tensor::zeros(rows, total);
        for r in 0..rows {
            let src = t.row_slice(r).to_vec();
            out.data_mut()[r * total + start..r * total + start + src.len()]
                .copy_from_slice(&src);
        }
        self.push(out, Op::PadCols { src: a, start, total })
    }

    /// Sum of all entries, a [1, 1] tensor.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(v, Op::SumAll(a))
    }

    /// Sum over rows: [R, C] -> [1, C].
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let (rows, cols) = t.shape();
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, &x) in out.iter_mut().zip(t.row_slice(r)) {
                *o += x;
            }
        }
        self.push(Tensor::new(1, cols, out), Op::SumRows(a))
    }

    /// Sum over columns: [R, C] -> [R, 1].
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let rows = t.rows();
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            out.push(t.row_slice(r).iter().sum());
        }
        self.push(Tensor::new(rows, 1, out), Op::SumCols(a))
    }

    /// Fill [rows, cols] with the value of a [1, 1] tensor.
    pub fn broadcast(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let v = Tensor::full(rows, cols, self.value(a).scalar_value());
        self.push(v, Op::Broadcast(a, rows, cols))
    }

    /// Tile a [1, C] row vector to [rows, C].
    pub fn repeat_rows(&mut self, a: NodeId, rows: usize) -> NodeId {
        let t = self.value(a);
        assert_eq!(t.rows(), 1, "repeat_rows needs a row vector");
        let row = t.row_slice(0).to_vec();
        let mut data = Vec::with_capacity(rows * row.len());
        for _ in 0..rows {
            data.extend_from_slice(&row);
        }
        self.push(Tensor::new(rows, row.len(), data), Op::RepeatRows(a, rows))
    }

    /// Tile a [R, 1] column vector to [R, cols].
    pub fn repeat_cols(&mut self, a: NodeId, cols: usize) -> NodeId {
        let t = self.value(a);
        assert_eq!(t.cols(), 1, "repeat_cols needs a column vector");
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let x = t.get(r, 0);
            data.extend(std::iter::repeat(x).take(cols));
        }
        self.push(Tensor::new(rows, cols, data), Op::RepeatCols(a, cols))
    }

    /// Add a [1, C] row vector to every row of a [R, C] matrix (bias add).
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let ta = self.value(a);
        let tb = self.value(b);
        assert_eq!(tb.rows(), 1, "add_row bias must be a row vector");
        assert_eq!(ta.cols(), tb.cols(), "add_row width mismatch");
        let (rows, cols) = ta.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (x, y) in ta.row_slice(r).iter().zip(tb.row_slice(0)) {
                data.push(x + y);
            }
        }
        self.push(Tensor::new(rows, cols, data), Op::AddRow(a, b))
    }

    /// Select rows of a by index, with repetition allowed.
    pub fn gather(&mut self, a: NodeId, indices: Rc<Vec<usize>>) -> NodeId {
        let t = self.value(a);
        let cols = t.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices.iter() {
            assert!(i < t.rows(), "gather index {i} out of range for {} rows", t.rows());
            data.extend_from_slice(t.row_slice(i));
        }
        let v = Tensor::new(indices.len(), cols, data);
        self.push(v, Op::Gather(a, indices))
    }

    /// Scatter-add rows of a into `num_segments` output rows; empty
    /// segments stay zero. Rows are accumulated in ascending input order,
    /// so the reduction order is deterministic.
    pub fn segment_sum(
        &mut self,
        a: NodeId,
        segment_ids: Rc<Vec<usize>>,
        num_segments: usize,
    ) -> NodeId {
        let t = self.value(a);
        assert_eq!(t.rows(), segment_ids.len(), "segment id count must match rows");
        let cols = t.cols();
        let mut out = Tensor::zeros(num_segments, cols);
        for (r, &s) in segment_ids.iter().enumerate() {
            assert!(s < num_segments, "segment id {s} out of range [0, {num_segments})");
            let row = t.row_slice(r).to_vec();
            for (o, x) in out.data_mut()[s * cols..(s + 1) * cols].iter_mut().zip(row) {
                *o += x;
            }
        }
        self.push(out, Op::SegmentSum(a, segment_ids, num_segments))
    }

    /// Reverse-mode gradients of a scalar output with respect to `inputs`.
    ///
    /// The adjoint computation is appended to this tape; the returned ids
    /// are ordinary nodes, so any scalar function of them can be
    /// differentiated again. Inputs the output does not depend on get
    /// zero gradients.
    pub fn grad(&mut self, output: NodeId, inputs: &[NodeId]) -> Result<Vec<NodeId>> {
        if output.0 >= self.nodes.len() {
            return Err(Error::Contract(format!("grad output id {} not on record", output.0)));
        }
        for id in inputs {
            if id.0 >= self.nodes.len() {
                return Err(Error::Contract(format!("grad input id {} not on record", id.0)));
            }
        }
        if self.value(output).shape() != (1, 1) {
            let (r, c) = self.value(output).shape();
            return Err(Error::Contract(format!(
                "grad output must be a scalar, got shape [{r}, {c}]"
            )));
        }

        let n = output.0 + 1;
        let mut adjoint: Vec<Option<NodeId>> = vec![None; n];
        adjoint[output.0] = Some(self.constant(Tensor::scalar(1.0)));

        for id in (0..n).rev() {
            let Some(g) = adjoint[id] else { continue };
            let y = NodeId(id);
            let op = self.nodes[id].op.clone();
            match op {
                Op::Input | Op::Constant => {}
                Op::Add(a, b) => {
                    accumulate(self, &mut adjoint, a, g);
                    accumulate(self, &mut adjoint, b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(self, &mut adjoint, a, g);
                    let gb = self.neg(g);
                    accumulate(self, &mut adjoint, b, gb);
                }
                Op::Mul(a, b) => {
                    let ga = self.mul(g, b);
                    accumulate(self, &mut adjoint, a, ga);
                    let gb = self.mul(g, a);
                    accumulate(self, &mut adjoint, b, gb);
                }
                Op::Div(a, b) => {
                    let ga = self.div(g, b);
                    accumulate(self, &mut adjoint, a, ga);
                    // d/db (a/b) = -y/b with y = a/b
                    let yb = self.div(y, b);
                    let gyb = self.mul(g, yb);
                    let gb = self.neg(gyb);
                    accumulate(self, &mut adjoint, b, gb);
                }
                Op::Neg(a) => {
                    let ga = self.neg(g);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::Scale(a, c) => {
                    let ga = self.scale(g, c);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::AddScalar(a, _) => {
                    accumulate(self, &mut adjoint, a, g);
                }
                Op::Sin(a) => {
                    let ca = self.cos(a);
                    let ga = self.mul(g, ca);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::Cos(a) => {
                    let sa = self.sin(a);
                    let gsa = self.mul(g, sa);
                    let ga = self.neg(gsa);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::Sqrt(a) => {
                    // d/da sqrt(a) = 1/(2 y)
                    let gy = self.div(g, y);
                    let ga = self.scale(gy, 0.5);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::Exp(a) => {
                    let ga = self.mul(g, y);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::Ln(a) => {
                    let ga = self.div(g, a);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::Sigmoid(a) => {
                    // y (1 - y)
                    let ny = self.neg(y);
                    let one_minus = self.add_scalar(ny, 1.0);
                    let d = self.mul(y, one_minus);
                    let ga = self.mul(g, d);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::Softplus(a) => {
                    let s = self.sigmoid(a);
                    let ga = self.mul(g, s);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::Abs(a) => {
                    let s = self.sign(a);
                    let ga = self.mul(g, s);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::Sign(_) => {}
                Op::BesselJ(a, l) => {
                    // j_0' = -j_1; j_l' = j_{l-1} - (l+1)/z * j_l
                    let ga = if l == 0 {
                        let j1 = self.bessel_j(a, 1);
                        let gj = self.mul(g, j1);
                        self.neg(gj)
                    } else {
                        let jm1 = self.bessel_j(a, l - 1);
                        let y_over_z = self.div(y, a);
                        let scaled = self.scale(y_over_z, (l + 1) as f64);
                        let d = self.sub(jm1, scaled);
                        self.mul(g, d)
                    };
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::Matmul(a, b) => {
                    let bt = self.transpose(b);
                    let ga = self.matmul(g, bt);
                    accumulate(self, &mut adjoint, a, ga);
                    let at = self.transpose(a);
                    let gb = self.matmul(at, g);
                    accumulate(self, &mut adjoint, b, gb);
                }
                Op::Transpose(a) => {
                    let ga = self.transpose(g);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts.iter() {
                        let w = self.value(p).cols();
                        let gp = self.slice_cols(g, offset, offset + w);
                        accumulate(self, &mut adjoint, p, gp);
                        offset += w;
                    }
                }
                Op::SliceCols(a, start, _) => {
                    let total = self.value(a).cols();
                    let ga = self.pad_cols(g, start, total);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::PadCols { src, start, .. } => {
                    let w = self.value(src).cols();
                    let ga = self.slice_cols(g, start, start + w);
                    accumulate(self, &mut adjoint, src, ga);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.value(a).shape();
                    let ga = self.broadcast(g, r, c);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::SumRows(a) => {
                    let r = self.value(a).rows();
                    let ga = self.repeat_rows(g, r);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::SumCols(a) => {
                    let c = self.value(a).cols();
                    let ga = self.repeat_cols(g, c);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::Broadcast(a, _, _) => {
                    let ga = self.sum_all(g);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::RepeatRows(a, _) => {
                    let ga = self.sum_rows(g);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::RepeatCols(a, _) => {
                    let ga = self.sum_cols(g);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::AddRow(a, b) => {
                    accumulate(self, &mut adjoint, a, g);
                    let gb = self.sum_rows(g);
                    accumulate(self, &mut adjoint, b, gb);
                }
                Op::Gather(a, indices) => {
                    let rows = self.value(a).rows();
                    let ga = self.segment_sum(g, indices, rows);
                    accumulate(self, &mut adjoint, a, ga);
                }
                Op::SegmentSum(a, ids, _) => {
                    let ga = self.gather(g, ids);
                    accumulate(self, &mut adjoint, a, ga);
                }
            }
        }

        Ok(inputs
            .iter()
            .map(|&i| match adjoint.get(i.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let (r, c) = self.value(i).shape();
                    self.constant(Tensor::zeros(r, c))
                }
            })
            .collect())
    }
}

fn accumulate(tape: &mut Tape, adjoint: &mut [Option<NodeId>], target: NodeId, contrib: NodeId) {
    adjoint[target.0] = Some(match adjoint[target.0] {
        Some(existing) => tape.add(existing, contrib),
        None => contrib,
    });
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
