//! Static computation graph with a reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the node list doubles as the
//! tape. Shapes are fixed when a node is added; `forward` evaluates every
//! node and keeps the values that `backward` needs.

use std::collections::BTreeMap;

use super::Array;
use crate::error::{Error, Result};

pub type NodeId = usize;
pub type ParamStore = BTreeMap<String, Array>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative given the input `x` and the output `y = f(x)`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input(String),
    Param(String),
    /// `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    Affine { x: NodeId, w: NodeId, b: NodeId },
    /// NHWC input, `w: [kh, kw, cin, cout]`, `b: [cout]`.
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    /// Nearest-neighbor spatial upsampling of an NHWC tensor.
    Upsample { x: NodeId, factor: usize },
    Act { x: NodeId, act: Activation },
    Reshape { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sum { x: NodeId },
    Mean { x: NodeId },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Affine { .. } => "affine",
            Op::Conv2d { .. } => "conv2d",
            Op::Upsample { .. } => "upsample",
            Op::Act { .. } => "activation",
            Op::Reshape { .. } => "reshape",
            Op::Add { .. } => "add",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub params: ParamStore,
    pub inputs: BTreeMap<String, Array>,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: ParamStore,
    outputs: BTreeMap<String, NodeId>,
    values: Option<Vec<Array>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Replaces parameter values; names and shapes must match exactly.
    pub fn set_params(&mut self, params: ParamStore) -> Result<()> {
        check_same_layout(&self.params, &params)?;
        self.params = params;
        self.values = None;
        Ok(())
    }

    pub fn shape(&self, node: NodeId) -> &[usize] {
        &self.nodes[node].shape
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.values = None;
        self.nodes.push(Node { op, shape });
        self.nodes.len() - 1
    }

    fn fail<T>(&self, op: &'static str, message: impl Into<String>) -> Result<T> {
        Err(Error::Graph {
            node: self.nodes.len(),
            op,
            message: message.into(),
        })
    }

    fn check_node(&self, op: &'static str, id: NodeId) -> Result<&[usize]> {
        match self.nodes.get(id) {
            Some(n) => Ok(&n.shape),
            None => self.fail(op, format!("unknown operand node {id}")),
        }
    }

    pub fn input(&mut self, name: &str, shape: Vec<usize>) -> Result<NodeId> {
        if shape.is_empty() || shape.contains(&0) {
            return self.fail("input", format!("invalid shape {shape:?} for `{name}`"));
        }
        let taken = self
            .nodes
            .iter()
            .any(|n| matches!(&n.op, Op::Input(existing) if existing == name));
        if taken {
            return self.fail("input", format!("duplicate input `{name}`"));
        }
        Ok(self.push(Op::Input(name.to_string()), shape))
    }

    pub fn param(&mut self, name: &str, value: Array) -> Result<NodeId> {
        if self.params.contains_key(name) {
            return self.fail("param", format!("duplicate parameter `{name}`"));
        }
        let shape = value.shape.clone();
        self.params.insert(name.to_string(), value);
        Ok(self.push(Op::Param(name.to_string()), shape))
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.check_node("affine", x)?.to_vec(),
            self.check_node("affine", w)?.to_vec(),
            self.check_node("affine", b)?.to_vec(),
        );
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[1] || bs != [ws[0]] {
            return self.fail(
                "affine",
                format!("incompatible shapes x {xs:?}, w {ws:?}, b {bs:?}"),
            );
        }
        Ok(self.push(Op::Affine { x, w, b }, vec![xs[0], ws[0]]))
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.check_node("conv2d", x)?.to_vec(),
            self.check_node("conv2d", w)?.to_vec(),
            self.check_node("conv2d", b)?.to_vec(),
        );
        if xs.len() != 4 || ws.len() != 4 || ws[2] != xs[3] || bs != [ws[3]] || stride == 0 {
            return self.fail(
                "conv2d",
                format!("incompatible shapes x {xs:?}, w {ws:?}, b {bs:?}, stride {stride}"),
            );
        }
        if xs[1] + 2 * pad < ws[0] || xs[2] + 2 * pad < ws[1] {
            return self.fail("conv2d", format!("kernel {ws:?} larger than padded input {xs:?}"));
        }
        let oh = (xs[1] + 2 * pad - ws[0]) / stride + 1;
        let ow = (xs[2] + 2 * pad - ws[1]) / stride + 1;
        Ok(self.push(
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            vec![xs[0], oh, ow, ws[3]],
        ))
    }

    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let xs = self.check_node("upsample", x)?.to_vec();
        if xs.len() != 4 || factor == 0 {
            return self.fail("upsample", format!("needs an NHWC input, got {xs:?}"));
        }
        Ok(self.push(
            Op::Upsample { x, factor },
            vec![xs[0], xs[1] * factor, xs[2] * factor, xs[3]],
        ))
    }

    pub fn act(&mut self, x: NodeId, act: Activation) -> Result<NodeId> {
        let shape = self.check_node("activation", x)?.to_vec();
        Ok(self.push(Op::Act { x, act }, shape))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let xs = self.check_node("reshape", x)?;
        let (from, to): (usize, usize) = (xs.iter().product(), shape.iter().product());
        if from != to || shape.contains(&0) {
            return self.fail("reshape", format!("cannot reshape {xs:?} into {shape:?}"));
        }
        Ok(self.push(Op::Reshape { x }, shape))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (
            self.check_node("add", a)?.to_vec(),
            self.check_node("add", b)?.to_vec(),
        );
        if sa != sb {
            return self.fail("add", format!("operand shapes {sa:?} and {sb:?} differ"));
        }
        Ok(self.push(Op::Add { a, b }, sa))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_node("sum", x)?;
        Ok(self.push(Op::Sum { x }, vec![1]))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_node("mean", x)?;
        Ok(self.push(Op::Mean { x }, vec![1]))
    }

    pub fn mark_output(&mut self, name: &str, node: NodeId) -> Result<()> {
        self.check_node("output", node)?;
        self.outputs.insert(name.to_string(), node);
        Ok(())
    }

    pub fn output_node(&self, name: &str) -> Option<NodeId> {
        self.outputs.get(name).copied()
    }

    /// Evaluates the graph in tape order and returns the marked outputs.
    pub fn forward(&mut self, inputs: &BTreeMap<String, Array>) -> Result<BTreeMap<String, Array>> {
        let mut values: Vec<Array> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let err = |message: String| Error::Graph {
                node: id,
                op: node.op.name(),
                message,
            };
            let value = match &node.op {
                Op::Input(name) => {
                    let v = inputs
                        .get(name)
                        .ok_or_else(|| Error::UnboundInput(name.clone()))?;
                    if v.shape != node.shape {
                        return Err(err(format!(
                            "input `{name}` bound with shape {:?}, declared {:?}",
                            v.shape, node.shape
                        )));
                    }
                    v.clone()
                }
                Op::Param(name) => {
                    let v = &self.params[name];
                    if v.shape != node.shape {
                        return Err(err(format!("parameter `{name}` has shape {:?}", v.shape)));
                    }
                    v.clone()
                }
                Op::Affine { x, w, b } => affine_forward(&values[*x], &values[*w], &values[*b]),
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => conv_forward(&values[*x], &values[*w], &values[*b], *stride, *pad, &node.shape),
                Op::Upsample { x, factor } => upsample_forward(&values[*x], *factor, &node.shape),
                Op::Act { x, act } => Array {
                    shape: node.shape.clone(),
                    data: values[*x].data.iter().map(|&v| act.apply(v)).collect(),
                },
                Op::Reshape { x } => Array {
                    shape: node.shape.clone(),
                    data: values[*x].data.clone(),
                },
                Op::Add { a, b } => Array {
                    shape: node.shape.clone(),
                    data: values[*a]
                        .data
                        .iter()
                        .zip(&values[*b].data)
                        .map(|(p, q)| p + q)
                        .collect(),
                },
                Op::Sum { x } => Array::scalar(values[*x].data.iter().sum()),
                Op::Mean { x } => {
                    let v = &values[*x];
                    Array::scalar(v.data.iter().sum::<f64>() / v.len() as f64)
                }
            };
            values.push(value);
        }
        let out = self
            .outputs
            .iter()
            .map(|(name, &id)| (name.clone(), values[id].clone()))
            .collect();
        self.values = Some(values);
        Ok(out)
    }

    /// Reverse pass from the named output, seeded with `output_grad`.
    pub fn backward(&self, output: &str, output_grad: &Array) -> Result<Gradients> {
        let values = self.values.as_ref().ok_or(Error::BackwardBeforeForward)?;
        let out = self
            .output_node(output)
            .ok_or_else(|| Error::UnboundInput(format!("output `{output}`")))?;
        if output_grad.shape != self.nodes[out].shape {
            return Err(Error::Graph {
                node: out,
                op: self.nodes[out].op.name(),
                message: format!(
                    "seed gradient shape {:?} does not match output {:?}",
                    output_grad.shape, self.nodes[out].shape
                ),
            });
        }
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        grads[out] = Some(output_grad.clone());

        for id in (0..=out).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input(_) | Op::Param(_) => {
                    grads[id] = Some(g);
                }
                Op::Affine { x, w, b } => {
                    let (gx, gw, gb) = affine_backward(&values[*x], &values[*w], &g);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let (gx, gw, gb) = conv_backward(&values[*x], &values[*w], &g, *stride, *pad);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Upsample { x, factor } => {
                    let gx = upsample_backward(&g, *factor, &values[*x].shape);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Act { x, act } => {
                    let input = &values[*x];
                    let output = &values[id];
                    let data = g
                        .data
                        .iter()
                        .zip(&input.data)
                        .zip(&output.data)
                        .map(|((gv, &xv), &yv)| gv * act.derivative(xv, yv))
                        .collect();
                    accumulate(
                        &mut grads,
                        *x,
                        Array {
                            shape: input.shape.clone(),
                            data,
                        },
                    );
                }
                Op::Reshape { x } => {
                    let shape = values[*x].shape.clone();
                    accumulate(&mut grads, *x, Array { shape, data: g.data });
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sum { x } => {
                    let shape = values[*x].shape.clone();
                    let n = values[*x].len();
                    accumulate(
                        &mut grads,
                        *x,
                        Array {
                            shape,
                            data: vec![g.data[0]; n],
                        },
                    );
                }
                Op::Mean { x } => {
                    let shape = values[*x].shape.clone();
                    let n = values[*x].len();
                    accumulate(
                        &mut grads,
                        *x,
                        Array {
                            shape,
                            data: vec![g.data[0] / n as f64; n],
                        },
                    );
                }
            }
        }

        let mut out = Gradients::default();
        for (id, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Input(name) => {
                    let g = grads[id]
                        .take()
                        .unwrap_or_else(|| Array::zeros(node.shape.clone()));
                    out.inputs.insert(name.clone(), g);
                }
                Op::Param(name) => {
                    let g = grads[id]
                        .take()
                        .unwrap_or_else(|| Array::zeros(node.shape.clone()));
                    out.params.insert(name.clone(), g);
                }
                _ => {}
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_same_layout(expected: &ParamStore, given: &ParamStore) -> Result<()> {
    if expected.len() != given.len() || expected.keys().zip(given.keys()).any(|(a, b)| a != b) {
        return Err(Error::ParamMismatch(format!(
            "expected names {:?}, got {:?}",
            expected.keys().collect::<Vec<_>>(),
            given.keys().collect::<Vec<_>>()
        )));
    }
    for (name, v) in expected {
        if given[name].shape != v.shape {
            return Err(Error::ParamMismatch(format!(
                "`{name}` has shape {:?}, expected {:?}",
                given[name].shape, v.shape
            )));
        }
    }
    Ok(())
}

fn accumulate(grads: &mut [Option<Array>], id: NodeId, g: Array) {
    match &mut grads[id] {
        Some(existing) => {
            for (a, b) in existing.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn affine_forward(x: &Array, w: &Array, b: &Array) -> Array {
    let (n, input) = (x.shape[0], x.shape[1]);
    let out = w.shape[0];
    let mut data = vec![0.0; n * out];
    for r in 0..n {
        let xr = &x.data[r * input..(r + 1) * input];
        for o in 0..out {
            let wr = &w.data[o * input..(o + 1) * input];
            let mut acc = b.data[o];
            for (xi, wi) in xr.iter().zip(wr) {
                acc += xi * wi;
            }
            data[r * out + o] = acc;
        }
    }
    Array {
        shape: vec![n, out],
        data,
    }
}

fn affine_backward(x: &Array, w: &Array, g: &Array) -> (Array, Array, Array) {
    let (n, input) = (x.shape[0], x.shape[1]);
    let out = w.shape[0];
    let mut gx = Array::zeros(x.shape.clone());
    let mut gw = Array::zeros(w.shape.clone());
    let mut gb = Array::zeros(vec![out]);
    for r in 0..n {
        for o in 0..out {
            let go = g.data[r * out + o];
            if go == 0.0 {
                continue;
            }
            gb.data[o] += go;
            for i in 0..input {
                gx.data[r * input + i] += go * w.data[o * input + i];
                gw.data[o * input + i] += go * x.data[r * input + i];
            }
        }
    }
    (gx, gw, gb)
}

/// Calls `f(x_offset, w_offset, out_offset)` for every multiply-accumulate
/// term of an NHWC convolution.
fn conv_visit(
    xs: &[usize],
    ws: &[usize],
    stride: usize,
    pad: usize,
    mut f: impl FnMut(usize, usize, usize),
) {
    let (n, h, w, cin) = (xs[0], xs[1], xs[2], xs[3]);
    let (kh, kw, cout) = (ws[0], ws[1], ws[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let out_base = ((b * oh + oy) * ow + ox) * cout;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let x_base = ((b * h + iy as usize) * w + ix as usize) * cin;
                        let w_base = (ky * kw + kx) * cin * cout;
                        for ci in 0..cin {
                            f(x_base + ci, w_base + ci * cout, out_base);
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(x: &Array, w: &Array, b: &Array, stride: usize, pad: usize, shape: &[usize]) -> Array {
    let cout = w.shape[3];
    let mut out = Array::zeros(shape.to_vec());
    for cell in out.data.chunks_exact_mut(cout) {
        cell.copy_from_slice(&b.data);
    }
    conv_visit(&x.shape, &w.shape, stride, pad, |xo, wo, oo| {
        let xv = x.data[xo];
        let wr = &w.data[wo..wo + cout];
        for (o, wv) in out.data[oo..oo + cout].iter_mut().zip(wr) {
            *o += xv * wv;
        }
    });
    out
}

fn conv_backward(x: &Array, w: &Array, g: &Array, stride: usize, pad: usize) -> (Array, Array, Array) {
    let cout = w.shape[3];
    let mut gx = Array::zeros(x.shape.clone());
    let mut gw = Array::zeros(w.shape.clone());
    let mut gb = Array::zeros(vec![cout]);
    for cell in g.data.chunks_exact(cout) {
        for (acc, v) in gb.data.iter_mut().zip(cell) {
            *acc += v;
        }
    }
    conv_visit(&x.shape, &w.shape, stride, pad, |xo, wo, oo| {
        let xv = x.data[xo];
        let gr = &g.data[oo..oo + cout];
        let mut gxv = 0.0;
        for c in 0..cout {
            gxv += gr[c] * w.data[wo + c];
            gw.data[wo + c] += gr[c] * xv;
        }
        gx.data[xo] += gxv;
    });
    (gx, gw, gb)
}

fn upsample_forward(x: &Array, factor: usize, shape: &[usize]) -> Array {
    let (h, w, c) = (x.shape[1], x.shape[2], x.shape[3]);
    let (oh, ow) = (shape[1], shape[2]);
    let mut out = Array::zeros(shape.to_vec());
    for b in 0..shape[0] {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = ((b * h + oy / factor) * w + ox / factor) * c;
                let dst = ((b * oh + oy) * ow + ox) * c;
                out.data[dst..dst + c].copy_from_slice(&x.data[src..src + c]);
            }
        }
    }
    out
}

fn upsample_backward(g: &Array, factor: usize, in_shape: &[usize]) -> Array {
    let (h, w, c) = (in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (g.shape[1], g.shape[2]);
    let mut gx = Array::zeros(in_shape.to_vec());
    for b in 0..g.shape[0] {
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = ((b * h + oy / factor) * w + ox / factor) * c;
                let src = ((b * oh + oy) * ow + ox) * c;
                for ch in 0..c {
                    gx.data[dst + ch] += g.data[src + ch];
                }
            }
        }
    }
    gx
}
