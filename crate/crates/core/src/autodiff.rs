//! Differentiation engine: forward-mode second-order jets for spatial
//! derivatives and a reverse-mode tape for parameter gradients.
//!
//! A [`JetBatch`] carries, for every scalar in a batch, its value, its three
//! first derivatives, and its three pure second derivatives with respect to
//! the spatial coordinates. Pushing jets through the trunk network yields
//! ∂T/∂yₐ and ∂²T/∂yₐ² alongside T itself — exactly the terms the PDE
//! residual needs, without mixed seconds.
//!
//! The [`Tape`] records tensor-level ops during a forward pass and applies
//! the chain rule in reverse to produce gradients with respect to parameter
//! leaves. Jet-valued nodes participate like any other: their adjoints carry
//! the same seven components, so losses built on second derivatives give
//! correct (third-order) parameter gradients. Coordinates enter as jet
//! constants, so no gradient flows into them.

use crate::tensor::Tensor;

/// Numerically stable logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Swish activation x·σ(x).
#[inline]
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Swish value and its first three derivatives, via the sigmoid derivative
/// chain s' = s(1−s), s'' = s'(1−2s), s''' = s''(1−2s) − 2s'².
#[inline]
pub fn swish_derivs(x: f64) -> (f64, f64, f64, f64) {
    let s = sigmoid(x);
    let s1 = s * (1.0 - s);
    let s2 = s1 * (1.0 - 2.0 * s);
    let s3 = s2 * (1.0 - 2.0 * s) - 2.0 * s1 * s1;
    let f = x * s;
    let f1 = s + x * s1;
    let f2 = 2.0 * s1 + x * s2;
    let f3 = 3.0 * s2 + x * s3;
    (f, f1, f2, f3)
}

/// Batch of second-order jets: value, first and pure second spatial
/// derivatives, each a tensor of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct JetBatch {
    pub v: Tensor,
    pub d: [Tensor; 3],
    pub dd: [Tensor; 3],
}

impl JetBatch {
    /// A jet with zero derivatives (a spatial constant).
    pub fn constant(v: Tensor) -> Self {
        let z = || Tensor::zeros(v.rows, v.cols);
        JetBatch { d: [z(), z(), z()], dd: [z(), z(), z()], v }
    }

    pub fn rows(&self) -> usize {
        self.v.rows
    }

    pub fn cols(&self) -> usize {
        self.v.cols
    }

    fn zeros_like(&self) -> Self {
        let z = || Tensor::zeros(self.v.rows, self.v.cols);
        JetBatch { v: z(), d: [z(), z(), z()], dd: [z(), z(), z()] }
    }

    fn add_assign(&mut self, other: &JetBatch) {
        self.v.add_assign(&other.v);
        for a in 0..3 {
            self.d[a].add_assign(&other.d[a]);
            self.dd[a].add_assign(&other.dd[a]);
        }
    }

    /// The seven components in a fixed order: v, d×3, dd×3.
    fn components(&self) -> [&Tensor; 7] {
        [&self.v, &self.d[0], &self.d[1], &self.d[2], &self.dd[0], &self.dd[1], &self.dd[2]]
    }
}

/// Which jet component to extract into a plain tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JetComp {
    Value,
    D(usize),
    DD(usize),
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Value {
    T(Tensor),
    J(JetBatch),
}

impl Value {
    fn tensor(&self) -> &Tensor {
        match self {
            Value::T(t) => t,
            Value::J(_) => panic!("expected tensor value, found jet"),
        }
    }

    fn jet(&self) -> &JetBatch {
        match self {
            Value::J(j) => j,
            Value::T(_) => panic!("expected jet value, found tensor"),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param,
    Const,
    JetConst,
    /// x·Wᵀ (+ b row-broadcast). W is (out × in), b is (1 × out).
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Swish { x: NodeId },
    /// Linear applied to every jet component; bias touches the value only.
    LinearJet { x: NodeId, w: NodeId, b: Option<NodeId> },
    SwishJet { x: NodeId },
    /// Out_c = P·(T_c)ᵀ for each jet component; scalar bias on the value.
    /// P is (F × p), T a jet batch (n × p), Out a jet batch (F × n).
    CombineCross { p: NodeId, t: NodeId, bias: Option<NodeId> },
    Mul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    Square { a: NodeId },
    MeanAll { a: NodeId },
    SumAll { a: NodeId },
    Component { a: NodeId, comp: JetComp },
}

struct Node {
    op: Op,
    value: Value,
}

/// Reverse-mode tape. Build the forward pass through the methods, then call
/// [`Tape::backward`] on a 1×1 loss node and read parameter gradients back
/// with [`Tape::grad`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    adjoints: Vec<Option<Value>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Value) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn param(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Param, Value::T(t))
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Const, Value::T(t))
    }

    pub fn jet_const(&mut self, j: JetBatch) -> NodeId {
        self.push(Op::JetConst, Value::J(j))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        self.nodes[id].value.tensor()
    }

    pub fn jet_value(&self, id: NodeId) -> &JetBatch {
        self.nodes[id].value.jet()
    }

    /// Replaces a parameter leaf's value (used by the optimizer between
    /// iterations when reusing a tape structure is not worth it; primarily
    /// a test convenience).
    pub fn set_value(&mut self, id: NodeId, t: Tensor) {
        assert!(matches!(self.nodes[id].op, Op::Param | Op::Const));
        self.nodes[id].value = Value::T(t);
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(xv.cols, wv.cols, "linear: input width must match W's in-dim");
        let mut y = xv.matmul_nt(wv);
        if let Some(b) = b {
            let bv = self.value(b);
            assert!(bv.rows == 1 && bv.cols == wv.rows, "linear: bias must be 1×out");
            y.add_row_broadcast(bv);
        }
        self.push(Op::Linear { x, w, b }, Value::T(y))
    }

    pub fn swish(&mut self, x: NodeId) -> NodeId {
        let y = self.value(x).map(swish);
        self.push(Op::Swish { x }, Value::T(y))
    }

    pub fn linear_jet(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let xj = self.jet_value(x);
        let wv = self.value(w);
        assert_eq!(xj.v.cols, wv.cols, "linear_jet: input width must match W's in-dim");
        let mut v = xj.v.matmul_nt(wv);
        if let Some(b) = b {
            let bv = self.value(b);
            assert!(bv.rows == 1 && bv.cols == wv.rows, "linear_jet: bias must be 1×out");
            v.add_row_broadcast(bv);
        }
        let d = [
            xj.d[0].matmul_nt(wv),
            xj.d[1].matmul_nt(wv),
            xj.d[2].matmul_nt(wv),
        ];
        let dd = [
            xj.dd[0].matmul_nt(wv),
            xj.dd[1].matmul_nt(wv),
            xj.dd[2].matmul_nt(wv),
        ];
        self.push(Op::LinearJet { x, w, b }, Value::J(JetBatch { v, d, dd }))
    }

    pub fn swish_jet(&mut self, x: NodeId) -> NodeId {
        let xj = self.jet_value(x);
        let mut out = xj.zeros_like();
        let n = xj.v.len();
        for i in 0..n {
            let (f, f1, f2, _) = swish_derivs(xj.v.data[i]);
            out.v.data[i] = f;
            for a in 0..3 {
                let d = xj.d[a].data[i];
                let dd = xj.dd[a].data[i];
                out.d[a].data[i] = f1 * d;
                out.dd[a].data[i] = f2 * d * d + f1 * dd;
            }
        }
        self.push(Op::SwishJet { x }, Value::J(out))
    }

    pub fn combine_cross(&mut self, p: NodeId, t: NodeId, bias: Option<NodeId>) -> NodeId {
        let pv = self.value(p);
        let tj = self.jet_value(t);
        assert_eq!(pv.cols, tj.v.cols, "combine: branch and trunk widths must match");
        let mut v = pv.matmul_nt(&tj.v);
        if let Some(bias) = bias {
            let bv = self.value(bias);
            assert!(bv.rows == 1 && bv.cols == 1, "combine: bias must be a 1×1 scalar");
            let b = bv.data[0];
            for e in v.data.iter_mut() {
                *e += b;
            }
        }
        let d = [
            pv.matmul_nt(&tj.d[0]),
            pv.matmul_nt(&tj.d[1]),
            pv.matmul_nt(&tj.d[2]),
        ];
        let dd = [
            pv.matmul_nt(&tj.dd[0]),
            pv.matmul_nt(&tj.dd[1]),
            pv.matmul_nt(&tj.dd[2]),
        ];
        self.push(Op::CombineCross { p, t, bias }, Value::J(JetBatch { v, d, dd }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = self.value(a).mul(self.value(b));
        self.push(Op::Mul { a, b }, Value::T(y))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = self.value(a).add(self.value(b));
        self.push(Op::Add { a, b }, Value::T(y))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = self.value(a).sub(self.value(b));
        self.push(Op::Sub { a, b }, Value::T(y))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let y = self.value(a).scale(c);
        self.push(Op::Scale { a, c }, Value::T(y))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let y = av.mul(av);
        self.push(Op::Square { a }, Value::T(y))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        assert!(!av.is_empty(), "mean of an empty tensor");
        let y = Tensor::filled(1, 1, av.mean());
        self.push(Op::MeanAll { a }, Value::T(y))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let y = Tensor::filled(1, 1, self.value(a).sum());
        self.push(Op::SumAll { a }, Value::T(y))
    }

    pub fn component(&mut self, a: NodeId, comp: JetComp) -> NodeId {
        let j = self.jet_value(a);
        let y = match comp {
            JetComp::Value => j.v.clone(),
            JetComp::D(axis) => j.d[axis].clone(),
            JetComp::DD(axis) => j.dd[axis].clone(),
        };
        self.push(Op::Component { a, comp }, Value::T(y))
    }

    fn tensor_slot(&mut self, id: NodeId) -> &mut Tensor {
        if self.adjoints[id].is_none() {
            let v = self.nodes[id].value.tensor();
            self.adjoints[id] = Some(Value::T(Tensor::zeros(v.rows, v.cols)));
        }
        match self.adjoints[id].as_mut().unwrap() {
            Value::T(t) => t,
            Value::J(_) => unreachable!(),
        }
    }

    fn jet_slot(&mut self, id: NodeId) -> &mut JetBatch {
        if self.adjoints[id].is_none() {
            let j = self.nodes[id].value.jet().zeros_like();
            self.adjoints[id] = Some(Value::J(j));
        }
        match self.adjoints[id].as_mut().unwrap() {
            Value::J(j) => j,
            Value::T(_) => unreachable!(),
        }
    }

    /// Reverse pass from a 1×1 scalar node. Gradients accumulate for every
    /// node; read them with [`Tape::grad`].
    pub fn backward(&mut self, root: NodeId) {
        {
            let rv = self.nodes[root].value.tensor();
            assert!(rv.rows == 1 && rv.cols == 1, "backward root must be a 1×1 scalar");
        }
        self.adjoints = Vec::new();
        self.adjoints.resize_with(self.nodes.len(), || None);
        self.adjoints[root] = Some(Value::T(Tensor::filled(1, 1, 1.0)));

        for i in (0..=root).rev() {
            let Some(g) = self.adjoints[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Param | Op::Const | Op::JetConst => {}
                Op::Linear { x, w, b } => {
                    let gy = g.tensor();
                    let delta_x = gy.matmul_nn(self.nodes[w].value.tensor());
                    let delta_w = gy.matmul_tn(self.nodes[x].value.tensor());
                    self.tensor_slot(x).add_assign(&delta_x);
                    self.tensor_slot(w).add_assign(&delta_w);
                    if let Some(b) = b {
                        let delta_b = gy.column_sum();
                        self.tensor_slot(b).add_assign(&delta_b);
                    }
                }
                Op::Swish { x } => {
                    let gy = g.tensor();
                    let xv = self.nodes[x].value.tensor();
                    let mut delta = Tensor::zeros(xv.rows, xv.cols);
                    for e in 0..xv.len() {
                        let (_, f1, _, _) = swish_derivs(xv.data[e]);
                        delta.data[e] = gy.data[e] * f1;
                    }
                    self.tensor_slot(x).add_assign(&delta);
                }
                Op::LinearJet { x, w, b } => {
                    let gj = g.jet().clone();
                    let wv = self.nodes[w].value.tensor().clone();
                    let xj = self.nodes[x].value.jet().clone();
                    let mut delta_w = Tensor::zeros(wv.rows, wv.cols);
                    for (gc, xc) in gj.components().iter().zip(xj.components().iter()) {
                        delta_w.add_assign(&gc.matmul_tn(xc));
                    }
                    self.tensor_slot(w).add_assign(&delta_w);
                    if let Some(b) = b {
                        let delta_b = gj.v.column_sum();
                        self.tensor_slot(b).add_assign(&delta_b);
                    }
                    let dx = JetBatch {
                        v: gj.v.matmul_nn(&wv),
                        d: [
                            gj.d[0].matmul_nn(&wv),
                            gj.d[1].matmul_nn(&wv),
                            gj.d[2].matmul_nn(&wv),
                        ],
                        dd: [
                            gj.dd[0].matmul_nn(&wv),
                            gj.dd[1].matmul_nn(&wv),
                            gj.dd[2].matmul_nn(&wv),
                        ],
                    };
                    self.jet_slot(x).add_assign(&dx);
                }
                Op::SwishJet { x } => {
                    let gj = g.jet();
                    let xj = self.nodes[x].value.jet();
                    let mut dx = xj.zeros_like();
                    for e in 0..xj.v.len() {
                        let (_, f1, f2, f3) = swish_derivs(xj.v.data[e]);
                        let mut gv = gj.v.data[e] * f1;
                        for a in 0..3 {
                            let d = xj.d[a].data[e];
                            let dd = xj.dd[a].data[e];
                            let gd = gj.d[a].data[e];
                            let gdd = gj.dd[a].data[e];
                            gv += gd * f2 * d + gdd * (f3 * d * d + f2 * dd);
                            dx.d[a].data[e] = gd * f1 + gdd * 2.0 * f2 * d;
                            dx.dd[a].data[e] = gdd * f1;
                        }
                        dx.v.data[e] = gv;
                    }
                    self.jet_slot(x).add_assign(&dx);
                }
                Op::CombineCross { p, t, bias } => {
                    let gj = g.jet().clone();
                    let pv = self.nodes[p].value.tensor().clone();
                    let tj = self.nodes[t].value.jet().clone();
                    let mut delta_p = Tensor::zeros(pv.rows, pv.cols);
                    for (gc, tc) in gj.components().iter().zip(tj.components().iter()) {
                        delta_p.add_assign(&gc.matmul_nn(tc));
                    }
                    self.tensor_slot(p).add_assign(&delta_p);
                    let dt = JetBatch {
                        v: gj.v.matmul_tn(&pv),
                        d: [
                            gj.d[0].matmul_tn(&pv),
                            gj.d[1].matmul_tn(&pv),
                            gj.d[2].matmul_tn(&pv),
                        ],
                        dd: [
                            gj.dd[0].matmul_tn(&pv),
                            gj.dd[1].matmul_tn(&pv),
                            gj.dd[2].matmul_tn(&pv),
                        ],
                    };
                    self.jet_slot(t).add_assign(&dt);
                    if let Some(bias) = bias {
                        let delta = Tensor::filled(1, 1, gj.v.sum());
                        self.tensor_slot(bias).add_assign(&delta);
                    }
                }
                Op::Mul { a, b } => {
                    let gy = g.tensor();
                    let delta_a = gy.mul(self.nodes[b].value.tensor());
                    let delta_b = gy.mul(self.nodes[a].value.tensor());
                    self.tensor_slot(a).add_assign(&delta_a);
                    self.tensor_slot(b).add_assign(&delta_b);
                }
                Op::Add { a, b } => {
                    let gy = g.tensor().clone();
                    self.tensor_slot(a).add_assign(&gy);
                    self.tensor_slot(b).add_assign(&gy);
                }
                Op::Sub { a, b } => {
                    let gy = g.tensor().clone();
                    self.tensor_slot(a).add_assign(&gy);
                    self.tensor_slot(b).axpy(-1.0, &gy);
                }
                Op::Scale { a, c } => {
                    let gy = g.tensor().clone();
                    self.tensor_slot(a).axpy(c, &gy);
                }
                Op::Square { a } => {
                    let delta = g.tensor().mul(self.nodes[a].value.tensor()).scale(2.0);
                    self.tensor_slot(a).add_assign(&delta);
                }
                Op::MeanAll { a } => {
                    let av = self.nodes[a].value.tensor();
                    let c = g.tensor().data[0] / av.len() as f64;
                    let delta = Tensor::filled(av.rows, av.cols, c);
                    self.tensor_slot(a).add_assign(&delta);
                }
                Op::SumAll { a } => {
                    let av = self.nodes[a].value.tensor();
                    let delta = Tensor::filled(av.rows, av.cols, g.tensor().data[0]);
                    self.tensor_slot(a).add_assign(&delta);
                }
                Op::Component { a, comp } => {
                    let gy = g.tensor().clone();
                    let slot = self.jet_slot(a);
                    match comp {
                        JetComp::Value => slot.v.add_assign(&gy),
                        JetComp::D(axis) => slot.d[axis].add_assign(&gy),
                        JetComp::DD(axis) => slot.dd[axis].add_assign(&gy),
                    }
                }
            }
            self.adjoints[i] = Some(g);
        }
    }

    /// Accumulated gradient of the last [`Tape::backward`] root with respect
    /// to `id`. None when no gradient reached the node.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        match self.adjoints.get(id)? {
            Some(Value::T(t)) => Some(t),
            _ => None,
        }
    }
}
