//! Reverse-mode automatic differentiation on dynamically-shaped `f64` arrays.
//!
//! A [`Graph`] is a tape: every operation appends a node holding the computed
//! value and enough context to push gradients back to its inputs. Values are
//! computed eagerly, so a graph can also serve as a plain forward pass by
//! never calling [`Graph::backward`].
//!
//! The op set is deliberately small: elementwise arithmetic with trailing-axis
//! broadcasting, a handful of nonlinearities, axis/global sums, reshape,
//! convolution, nearest-neighbor upsampling, group normalization, and the
//! gradient-reversal op used for adversarial training.

mod conv;

pub use conv::conv2d_shape;

use ndarray::{ArrayD, Dimension, IxDyn};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Ln(Var),
    Relu(Var),
    Softplus(Var),
    LogSigmoid(Var),
    /// Elementwise minimum; ties route the gradient to the first input.
    MinElem(Var, Var),
    ClampMin(Var, f64),
    SumAll(Var),
    /// Sum over one axis, keeping it as a length-1 axis.
    SumAxis(Var, usize),
    Reshape(Var),
    /// Contiguous slice along axis 0.
    SliceAxis0 {
        input: Var,
        start: usize,
        len: usize,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: (usize, usize),
        /// im2col matrix cached for the backward pass (absent in no-grad mode).
        cols: Option<ndarray::Array2<f64>>,
    },
    UpsampleNearest2(Var),
    GroupNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        /// Per-group (mean, inv_std) cached by the forward pass.
        stats: Vec<(f64, f64)>,
    },
    /// Identity forward; backward multiplies the gradient by `-lambda`.
    Grl(Var, f64),
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    requires_grad: bool,
}

/// Gradient tape. Append-only; [`Graph::backward`] walks it in reverse.
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A graph that skips all backward bookkeeping (pure forward pass).
    pub fn no_grad() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, requires_grad: bool) -> Var {
        let rg = requires_grad && self.grad_enabled;
        self.nodes.push(Node {
            value,
            op: if rg { op } else { Op::Leaf },
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    /// Insert a differentiable leaf (a parameter).
    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Insert a non-differentiable constant.
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A 0-dimensional constant.
    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    /// Extract a 0-dim (or single-element) node as an `f64`.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        debug_assert_eq!(val.len(), 1);
        *val.iter().next().expect("scalar node is empty")
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // Elementwise binary ops with trailing-axis broadcasting on either side.

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast_zip(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast_zip(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast_zip(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast_zip(self.value(a), self.value(b), |x, y| x / y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Div(a, b), rg)
    }

    pub fn min_elem(&mut self, a: Var, b: Var) -> Var {
        let value = broadcast_zip(self.value(a), self.value(b), f64::min);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MinElem(a, b), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| -x);
        let rg = self.rg(a);
        self.push(value, Op::Neg(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| c * x);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x + c);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        let rg = self.rg(a);
        self.push(value, Op::Ln(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    /// `slope*x + (1-slope)*relu(x)`, the leaky rectifier.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let r = self.relu(a);
        let pos = self.scale(r, 1.0 - slope);
        let lin = self.scale(a, slope);
        self.add(pos, lin)
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(softplus_stable);
        let rg = self.rg(a);
        self.push(value, Op::Softplus(a), rg)
    }

    /// `ln(sigmoid(x))`, evaluated stably.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| -softplus_stable(-x));
        let rg = self.rg(a);
        self.push(value, Op::LogSigmoid(a), rg)
    }

    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x.max(c));
        let rg = self.rg(a);
        self.push(value, Op::ClampMin(a, c), rg)
    }

    /// Sum of all elements, producing a 0-dim node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).sum();
        let rg = self.rg(a);
        self.push(ArrayD::from_elem(IxDyn(&[]), s), Op::SumAll(a), rg)
    }

    /// Sum over `axis`, keeping it with length 1.
    pub fn sum_axis_keep(&mut self, a: Var, axis: usize) -> Var {
        let value = self
            .value(a)
            .sum_axis(ndarray::Axis(axis))
            .insert_axis(ndarray::Axis(axis));
        let rg = self.rg(a);
        self.push(value, Op::SumAxis(a, axis), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self
            .value(a)
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count mismatch");
        let rg = self.rg(a);
        self.push(value, Op::Reshape(a), rg)
    }

    /// Contiguous slice `[start, start+len)` along the first axis.
    pub fn slice_axis0(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self
            .value(a)
            .slice_axis(ndarray::Axis(0), ndarray::Slice::from(start..start + len))
            .to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceAxis0 { input: a, start, len }, rg)
    }

    /// Cut the tape: same value, no gradient flow.
    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::Leaf, false)
    }

    /// Gradient reversal: identity forward, `-lambda`-scaled gradient backward.
    pub fn grl(&mut self, a: Var, lambda: f64) -> Var {
        let value = self.value(a).clone();
        let rg = self.rg(a);
        self.push(value, Op::Grl(a, lambda), rg)
    }

    /// 2D convolution over a CHW tensor with zero padding.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Var {
        let kh = self.value(weight).shape()[2];
        let kw = self.value(weight).shape()[3];
        // "same"-style padding for odd kernels at stride 1/2.
        let pad = (kh / 2, kw / 2);
        self.conv2d_padded(input, weight, bias, stride, pad)
    }

    pub fn conv2d_padded(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: (usize, usize),
    ) -> Var {
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        let keep_cols = rg && self.grad_enabled;
        let (value, cols) = conv::conv2d_forward(
            self.value(input),
            self.value(weight),
            self.value(bias),
            stride,
            pad,
            keep_cols,
        );
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
                cols,
            },
            rg,
        )
    }

    /// Nearest-neighbor 2x upsampling of a CHW tensor, cropped to `(out_h, out_w)`.
    pub fn upsample_nearest2(&mut self, a: Var, out_h: usize, out_w: usize) -> Var {
        let value = conv::upsample2_forward(self.value(a), out_h, out_w);
        let rg = self.rg(a);
        self.push(value, Op::UpsampleNearest2(a), rg)
    }

    /// Group normalization over a CHW tensor with per-channel affine terms.
    pub fn group_norm(&mut self, input: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Var {
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        let (value, stats) =
            conv::group_norm_forward(self.value(input), self.value(gamma), self.value(beta), groups, eps);
        self.push(
            value,
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                stats,
            },
            rg,
        )
    }

    /// Numerically-stable log-softmax over `axis` (shift by the detached max).
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Var {
        let maxes = axis_max_keep(self.value(a), axis);
        let m = self.constant(maxes);
        let shifted = self.sub(a, m);
        let e = self.exp(shifted);
        let s = self.sum_axis_keep(e, axis);
        let ls = self.ln(s);
        self.sub(shifted, ls)
    }

    /// Softmax over `axis` via the stable log-softmax.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Var {
        let ls = self.log_softmax(a, axis);
        self.exp(ls)
    }

    /// Binary cross-entropy with logits against a constant target, elementwise.
    pub fn bce_with_logits(&mut self, logits: Var, target: Var) -> Var {
        // softplus(z) - z*y is the stable form of -[y ln s(z) + (1-y) ln(1-s(z))].
        let sp = self.softplus(logits);
        let zy = self.mul(logits, target);
        self.sub(sp, zy)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Number of nodes currently on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Backpropagate from a scalar `root`; returns per-node gradients.
    ///
    /// Gradients are only materialized for nodes on a differentiable path.
    pub fn backward(&self, root: Var) -> Gradients {
        assert!(self.grad_enabled, "backward on a no-grad graph");
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(ArrayD::from_elem(self.nodes[root.0].value.raw_dim(), 1.0));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.accumulate_inputs(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate_inputs(&self, idx: usize, g: &ArrayD<f64>, grads: &mut [Option<ArrayD<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                let ga = broadcast_zip(g, self.value(*b), |gv, bv| gv * bv);
                let gb = broadcast_zip(g, self.value(*a), |gv, av| gv * av);
                self.accum(grads, *a, ga);
                self.accum(grads, *b, gb);
            }
            Op::Div(a, b) => {
                let ga = broadcast_zip(g, self.value(*b), |gv, bv| gv / bv);
                let out = &node.value;
                let gb_full = broadcast_zip(out, self.value(*b), |ov, bv| -ov / bv);
                let gb = broadcast_zip(g, &gb_full, |gv, t| gv * t);
                self.accum(grads, *a, ga);
                self.accum(grads, *b, gb);
            }
            Op::MinElem(a, b) => {
                // grad flows to whichever side achieved the min; ties go to `a`.
                let av = self.value(*a).broadcast(g.raw_dim()).unwrap().to_owned();
                let bv = self.value(*b).broadcast(g.raw_dim()).unwrap().to_owned();
                let mut ga = g.clone();
                let mut gb = g.clone();
                ndarray::Zip::from(&mut ga)
                    .and(&mut gb)
                    .and(&av)
                    .and(&bv)
                    .for_each(|ga_e, gb_e, &a_e, &b_e| {
                        if a_e <= b_e {
                            *gb_e = 0.0;
                        } else {
                            *ga_e = 0.0;
                        }
                    });
                self.accum(grads, *a, ga);
                self.accum(grads, *b, gb);
            }
            Op::Neg(a) => self.accum(grads, *a, g.mapv(|x| -x)),
            Op::Scale(a, c) => self.accum(grads, *a, g.mapv(|x| c * x)),
            Op::AddScalar(a) => self.accum(grads, *a, g.clone()),
            Op::Exp(a) => {
                let ga = ndarray::Zip::from(g).and(&node.value).map_collect(|&gv, &ov| gv * ov);
                self.accum(grads, *a, ga);
            }
            Op::Ln(a) => {
                let ga = ndarray::Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&gv, &av| gv / av);
                self.accum(grads, *a, ga);
            }
            Op::Relu(a) => {
                let ga = ndarray::Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&gv, &av| if av > 0.0 { gv } else { 0.0 });
                self.accum(grads, *a, ga);
            }
            Op::Softplus(a) => {
                let ga = ndarray::Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&gv, &av| gv * sigmoid(av));
                self.accum(grads, *a, ga);
            }
            Op::LogSigmoid(a) => {
                let ga = ndarray::Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&gv, &av| gv * sigmoid(-av));
                self.accum(grads, *a, ga);
            }
            Op::ClampMin(a, c) => {
                let ga = ndarray::Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&gv, &av| if av > *c { gv } else { 0.0 });
                self.accum(grads, *a, ga);
            }
            Op::SumAll(a) => {
                let gv = g[IxDyn(&[])];
                let ga = ArrayD::from_elem(self.value(*a).raw_dim(), gv);
                self.accum(grads, *a, ga);
            }
            Op::SumAxis(a, _axis) => {
                let ga = g
                    .broadcast(self.value(*a).raw_dim())
                    .expect("sum_axis backward broadcast")
                    .to_owned();
                self.accum(grads, *a, ga);
            }
            Op::Reshape(a) => {
                let ga = g
                    .clone()
                    .into_shape_with_order(self.value(*a).raw_dim())
                    .expect("reshape backward");
                self.accum(grads, *a, ga);
            }
            Op::SliceAxis0 { input, start, len } => {
                let mut ga = ArrayD::zeros(self.value(*input).raw_dim());
                ga.slice_axis_mut(ndarray::Axis(0), ndarray::Slice::from(*start..*start + *len))
                    .assign(g);
                self.accum(grads, *input, ga);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
                cols,
            } => {
                let (gi, gw, gb) = conv::conv2d_backward(
                    g,
                    self.value(*input),
                    self.value(*weight),
                    *stride,
                    *pad,
                    cols.as_ref(),
                    self.rg(*input),
                );
                if let Some(gi) = gi {
                    self.accum(grads, *input, gi);
                }
                self.accum(grads, *weight, gw);
                self.accum(grads, *bias, gb);
            }
            Op::UpsampleNearest2(a) => {
                let ga = conv::upsample2_backward(g, self.value(*a).raw_dim());
                self.accum(grads, *a, ga);
            }
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                stats,
            } => {
                let (gi, gg, gb) = conv::group_norm_backward(
                    g,
                    self.value(*input),
                    self.value(*gamma),
                    *groups,
                    stats,
                );
                self.accum(grads, *input, gi);
                self.accum(grads, *gamma, gg);
                self.accum(grads, *beta, gb);
            }
            Op::Grl(a, lambda) => {
                self.accum(grads, *a, g.mapv(|x| -lambda * x));
            }
        }
    }

    fn accum(&self, grads: &mut [Option<ArrayD<f64>>], v: Var, g: ArrayD<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let target_shape = self.nodes[v.0].value.raw_dim();
        let g = reduce_to_shape(g, &target_shape);
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of a leaf, or zeros if it never received one.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> ArrayD<f64> {
        match self.grads[v.0] {
            Some(ref g) => g.clone(),
            None => ArrayD::zeros(IxDyn(shape)),
        }
    }
}

/// Numerically-stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus_stable(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Elementwise combine with mutual broadcasting (NumPy-style right alignment).
fn broadcast_zip(a: &ArrayD<f64>, b: &ArrayD<f64>, f: impl Fn(f64, f64) -> f64) -> ArrayD<f64> {
    if a.shape() == b.shape() {
        return ndarray::Zip::from(a).and(b).map_collect(|&x, &y| f(x, y));
    }
    let shape = broadcast_shape(a.shape(), b.shape());
    let av = a.broadcast(shape.clone()).expect("lhs not broadcastable");
    let bv = b.broadcast(shape).expect("rhs not broadcastable");
    ndarray::Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y))
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> IxDyn {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let ad = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let bd = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        assert!(
            ad == bd || ad == 1 || bd == 1,
            "incompatible broadcast shapes {:?} vs {:?}",
            a,
            b
        );
        out[i] = ad.max(bd);
    }
    IxDyn(&out)
}

/// Sum a gradient down to `shape` (the reverse of broadcasting).
fn reduce_to_shape(g: ArrayD<f64>, shape: &IxDyn) -> ArrayD<f64> {
    if g.shape() == shape.slice() {
        return g;
    }
    let mut g = g;
    // Collapse leading axes that the target lacks.
    while g.ndim() > shape.ndim() {
        g = g.sum_axis(ndarray::Axis(0));
    }
    // Sum axes where the target has length 1.
    for ax in 0..shape.ndim() {
        if shape[ax] == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(ndarray::Axis(ax)).insert_axis(ndarray::Axis(ax));
        }
    }
    debug_assert_eq!(g.shape(), shape.slice());
    g
}

/// Per-slice maximum along `axis`, kept as a length-1 axis (plain values).
pub fn axis_max_keep(a: &ArrayD<f64>, axis: usize) -> ArrayD<f64> {
    a.fold_axis(ndarray::Axis(axis), f64::NEG_INFINITY, |&acc, &x| acc.max(x))
        .insert_axis(ndarray::Axis(axis))
}

/// Central finite-difference gradient of `f` at `x`.
///
/// Independent of the tape: evaluates `f` at perturbed copies of `x` only.
pub fn finite_difference(
    f: &mut dyn FnMut(&ArrayD<f64>) -> f64,
    x: &ArrayD<f64>,
    eps: f64,
) -> ArrayD<f64> {
    let mut grad = ArrayD::zeros(x.raw_dim());
    let mut xp = x.clone();
    for idx in 0..x.len() {
        let orig = x.as_slice().unwrap()[idx];
        xp.as_slice_mut().unwrap()[idx] = orig + eps;
        let fp = f(&xp);
        xp.as_slice_mut().unwrap()[idx] = orig - eps;
        let fm = f(&xp);
        xp.as_slice_mut().unwrap()[idx] = orig;
        grad.as_slice_mut().unwrap()[idx] = (fp - fm) / (2.0 * eps);
    }
    grad
}

/// Max relative error between an analytic and a reference gradient.
pub fn max_relative_error(analytic: &ArrayD<f64>, reference: &ArrayD<f64>) -> f64 {
    let mut worst = 0.0f64;
    for (a, r) in analytic.iter().zip(reference.iter()) {
        let denom = a.abs().max(r.abs()).max(1e-4);
        worst = worst.max((a - r).abs() / denom);
    }
    worst
}
