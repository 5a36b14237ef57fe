//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over
//! the node list visits every consumer before its producers.

use crate::error::{NcdError, Result};
use crate::numerics::ops;
use crate::numerics::{Param, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    L2Normalize(Var),
    Softmax(Var),
    ConcatCols(Var, Var),
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    /// Scalar with gradients already computed against each input.
    Objective {
        inputs: Vec<Var>,
        grads: Vec<Tensor>,
    },
    WeightedSum(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf bound to `params[index]`; see [`Tape::accumulate`].
    pub fn param(&mut self, index: usize, params: &[Param]) -> Var {
        self.push(params[index].value.clone(), Op::Param(index))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::affine_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(out, Op::Affine { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let out = ops::l2_normalize(self.value(x))?;
        Ok(self.push(out, Op::L2Normalize(x)))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = ops::softmax(self.value(x))?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_cols(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    pub fn select_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let n = self.value(x).rows();
        if rows.is_empty() {
            return Err(NcdError::Dimension("row selection is empty".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(NcdError::Dimension(format!(
                "row {bad} out of range for {n} rows"
            )));
        }
        let out = self.value(x).select_rows(&rows);
        Ok(self.push(out, Op::SelectRows { x, rows }))
    }

    /// Records a scalar objective whose local gradients the caller already
    /// computed. `grads[k]` must have the shape of `inputs[k]`.
    pub fn objective(&mut self, value: f64, inputs: Vec<Var>, grads: Vec<Tensor>) -> Result<Var> {
        if inputs.len() != grads.len() {
            return Err(NcdError::Dimension(
                "objective: inputs and gradients differ in count".into(),
            ));
        }
        for (v, g) in inputs.iter().zip(&grads) {
            self.value(*v).same_shape(g, "objective gradient")?;
        }
        if !value.is_finite() {
            return Err(NcdError::Numeric(format!("objective value {value}")));
        }
        Ok(self.push(Tensor::scalar(value), Op::Objective { inputs, grads }))
    }

    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Result<Var> {
        let mut total = 0.0;
        for (v, w) in &terms {
            let t = self.value(*v);
            if t.len() != 1 {
                return Err(NcdError::Dimension(
                    "weighted_sum expects scalar terms".into(),
                ));
            }
            total += w * t.data()[0];
        }
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms)))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(NcdError::Dimension("backward root must be a scalar".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        fn add(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::Affine { x, w, b } => {
                    let (dx, dw, db) = ops::affine_grads(self.value(*x), self.value(*w), &g)?;
                    add(&mut grads, *x, dx);
                    add(&mut grads, *w, dw);
                    add(&mut grads, *b, db);
                }
                Op::Relu(x) => add(&mut grads, *x, ops::relu_backward(self.value(*x), &g)),
                Op::L2Normalize(x) => {
                    let dx = ops::l2_normalize_backward(self.value(*x), &node.value, &g);
                    add(&mut grads, *x, dx);
                }
                Op::Softmax(x) => add(&mut grads, *x, ops::softmax_backward(&node.value, &g)),
                Op::ConcatCols(a, b) => {
                    let (ga, gb) = ops::split_cols(&g, self.value(*a).cols());
                    add(&mut grads, *a, ga);
                    add(&mut grads, *b, gb);
                }
                Op::SelectRows { x, rows } => {
                    let mut dx = Tensor::zeros(self.value(*x).shape());
                    for (k, &r) in rows.iter().enumerate() {
                        for (d, &gv) in dx.row_mut(r).iter_mut().zip(g.row(k)) {
                            *d += gv;
                        }
                    }
                    add(&mut grads, *x, dx);
                }
                Op::Objective {
                    inputs,
                    grads: local,
                } => {
                    let upstream = g.data()[0];
                    if upstream != 0.0 {
                        for (v, lg) in inputs.iter().zip(local) {
                            let mut scaled = lg.clone();
                            scaled.scale(upstream);
                            add(&mut grads, *v, scaled);
                        }
                    }
                }
                Op::WeightedSum(terms) => {
                    let upstream = g.data()[0];
                    for (v, w) in terms {
                        add(&mut grads, *v, Tensor::scalar(upstream * w));
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Adds the gradient of every parameter leaf into `params[index].grad`.
    pub fn accumulate(&self, grads: &Gradients, params: &mut [Param]) -> Result<()> {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(p), Some(g)) = (&node.op, &grads.grads[idx]) {
                params[*p].accumulate(g)?;
            }
        }
        Ok(())
    }
}
