//! A small reverse-mode autodiff tape over [`Tensor`].
//!
//! Each forward pass builds a fresh `Graph`; `backward` walks the tape in
//! reverse creation order (parents always precede children, so creation
//! order is a topological order). Ops are plain enum variants with an
//! explicit derivative in one `match` — easy to audit against the
//! finite-difference oracles in the tests.

mod conv;

use crate::tensor::Tensor;

pub use conv::conv2d_fwd;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Powf(Var, f64),
    ClampMin(Var, f64),
    LeakyRelu(Var, f64),
    /// x[b,c,h,w] + v[c]
    AddChannel(Var, Var),
    /// x[b,c,h,w] * v[c]
    MulChannel(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    },
    ConvT2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    AvgPool2(Var),
    Mean(Var),
    Sum(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of a node that participated in the loss.
    pub fn wrt(&self, v: Var) -> &Tensor {
        self.grads[v.0]
            .as_ref()
            .expect("no gradient recorded for this node")
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Differentiable input (a parameter or a tensor under test).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Non-differentiable input (data, fixed weights, stop-gradient values).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), v, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), v, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), v, ng)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x / y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Div(a, b), v, ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        let ng = self.needs(a);
        self.push(Op::AddScalar(a), v, ng)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        let ng = self.needs(a);
        self.push(Op::MulScalar(a, s), v, ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let ng = self.needs(a);
        self.push(Op::Exp(a), v, ng)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        let ng = self.needs(a);
        self.push(Op::Ln(a), v, ng)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        let ng = self.needs(a);
        self.push(Op::Sqrt(a), v, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(Op::Tanh(a), v, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), v, ng)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        let ng = self.needs(a);
        self.push(Op::Softplus(a), v, ng)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let v = self.value(a).map(|x| x.powf(p));
        let ng = self.needs(a);
        self.push(Op::Powf(a, p), v, ng)
    }

    pub fn clamp_min(&mut self, a: Var, m: f64) -> Var {
        let v = self.value(a).map(|x| x.max(m));
        let ng = self.needs(a);
        self.push(Op::ClampMin(a, m), v, ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.needs(a);
        self.push(Op::LeakyRelu(a, slope), v, ng)
    }

    pub fn add_channel(&mut self, x: Var, per_c: Var) -> Var {
        let v = self.channel_zip(x, per_c, |a, b| a + b);
        let ng = self.needs(x) || self.needs(per_c);
        self.push(Op::AddChannel(x, per_c), v, ng)
    }

    pub fn mul_channel(&mut self, x: Var, per_c: Var) -> Var {
        let v = self.channel_zip(x, per_c, |a, b| a * b);
        let ng = self.needs(x) || self.needs(per_c);
        self.push(Op::MulChannel(x, per_c), v, ng)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Var {
        let v = conv::conv2d_fwd(
            self.value(x),
            self.value(w),
            b.map(|bv| self.value(bv)),
            stride,
            pad,
            groups,
        );
        let ng = self.needs(x) || self.needs(w) || b.map(|bv| self.needs(bv)).unwrap_or(false);
        self.push(
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                groups,
            },
            v,
            ng,
        )
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        outpad: usize,
    ) -> Var {
        let v = conv::convt2d_fwd(
            self.value(x),
            self.value(w),
            b.map(|bv| self.value(bv)),
            stride,
            pad,
            outpad,
        );
        let ng = self.needs(x) || self.needs(w) || b.map(|bv| self.needs(bv)).unwrap_or(false);
        self.push(Op::ConvT2d { x, w, b, stride, pad }, v, ng)
    }

    /// 2x2 average pooling with stride 2; a trailing odd row/column is dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let (b, c, h, w) = self.value(x).dims4();
        let (ho, wo) = (h / 2, w / 2);
        let xs = self.value(x).data();
        let mut out = Tensor::zeros(&[b, c, ho, wo]);
        {
            let od = out.data_mut();
            for p in 0..b * c {
                let xp = &xs[p * h * w..][..h * w];
                let op = &mut od[p * ho * wo..][..ho * wo];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let (iy, ix) = (oy * 2, ox * 2);
                        op[oy * wo + ox] = 0.25
                            * (xp[iy * w + ix]
                                + xp[iy * w + ix + 1]
                                + xp[(iy + 1) * w + ix]
                                + xp[(iy + 1) * w + ix + 1]);
                    }
                }
            }
        }
        let ng = self.needs(x);
        self.push(Op::AvgPool2(x), out, ng)
    }

    /// Mean over all elements, producing a `[1]` tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let ng = self.needs(x);
        self.push(Op::Mean(x), Tensor::scalar(m), ng)
    }

    /// Sum over all elements, producing a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum::<f64>();
        let ng = self.needs(x);
        self.push(Op::Sum(x), Tensor::scalar(s), ng)
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(
            ta.shape(),
            tb.shape(),
            "elementwise op on mismatched shapes {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let data = ta
            .data()
            .iter()
            .zip(tb.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_vec(ta.shape(), data)
    }

    fn channel_zip(&self, x: Var, per_c: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let t = self.value(x);
        let v = self.value(per_c);
        let (b, c, h, w) = t.dims4();
        assert_eq!(v.shape(), &[c], "per-channel vector must have shape [{c}]");
        let mut out = t.clone();
        let od = out.data_mut();
        let vd = v.data();
        for bi in 0..b {
            for ci in 0..c {
                let s = vd[ci];
                for e in od[(bi * c + ci) * h * w..][..h * w].iter_mut() {
                    *e = f(*e, s);
                }
            }
        }
        out
    }

    /// Reverse-mode sweep from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.accumulate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn accumulate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, self.zip_g(g, self.value(*b), |gv, bv| gv * bv));
                }
                if self.needs(*b) {
                    self.acc(grads, *b, self.zip_g(g, self.value(*a), |gv, av| gv * av));
                }
            }
            Op::Div(a, b) => {
                let bt = self.value(*b);
                if self.needs(*a) {
                    self.acc(grads, *a, self.zip_g(g, bt, |gv, bv| gv / bv));
                }
                if self.needs(*b) {
                    let at = self.value(*a);
                    let data: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(at.data().iter().zip(bt.data().iter()))
                        .map(|(&gv, (&av, &bv))| -gv * av / (bv * bv))
                        .collect();
                    self.acc(grads, *b, Tensor::from_vec(bt.shape(), data));
                }
            }
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::MulScalar(a, s) => {
                let s = *s;
                self.acc(grads, *a, g.map(|x| x * s));
            }
            Op::Exp(a) => {
                let out = &self.nodes[i].value;
                self.acc(grads, *a, self.zip_g(g, out, |gv, ov| gv * ov));
            }
            Op::Ln(a) => {
                self.acc(grads, *a, self.zip_g(g, self.value(*a), |gv, xv| gv / xv));
            }
            Op::Sqrt(a) => {
                let out = &self.nodes[i].value;
                self.acc(grads, *a, self.zip_g(g, out, |gv, ov| 0.5 * gv / ov));
            }
            Op::Tanh(a) => {
                let out = &self.nodes[i].value;
                self.acc(grads, *a, self.zip_g(g, out, |gv, ov| gv * (1.0 - ov * ov)));
            }
            Op::Sigmoid(a) => {
                let out = &self.nodes[i].value;
                self.acc(grads, *a, self.zip_g(g, out, |gv, ov| gv * ov * (1.0 - ov)));
            }
            Op::Softplus(a) => {
                self.acc(
                    grads,
                    *a,
                    self.zip_g(g, self.value(*a), |gv, xv| gv * sigmoid(xv)),
                );
            }
            Op::Powf(a, p) => {
                let p = *p;
                self.acc(
                    grads,
                    *a,
                    self.zip_g(g, self.value(*a), |gv, xv| gv * p * xv.powf(p - 1.0)),
                );
            }
            Op::ClampMin(a, m) => {
                let m = *m;
                self.acc(
                    grads,
                    *a,
                    self.zip_g(g, self.value(*a), |gv, xv| if xv > m { gv } else { 0.0 }),
                );
            }
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                self.acc(
                    grads,
                    *a,
                    self.zip_g(g, self.value(*a), |gv, xv| {
                        if xv > 0.0 {
                            gv
                        } else {
                            gv * slope
                        }
                    }),
                );
            }
            Op::AddChannel(x, v) => {
                self.acc(grads, *x, g.clone());
                if self.needs(*v) {
                    self.acc(grads, *v, self.reduce_channel(g));
                }
            }
            Op::MulChannel(x, v) => {
                if self.needs(*x) {
                    let vt = self.value(*v);
                    let (b, c, h, w) = g.dims4();
                    let mut gx = g.clone();
                    let gd = gx.data_mut();
                    for bi in 0..b {
                        for ci in 0..c {
                            let s = vt.data()[ci];
                            for e in gd[(bi * c + ci) * h * w..][..h * w].iter_mut() {
                                *e *= s;
                            }
                        }
                    }
                    self.acc(grads, *x, gx);
                }
                if self.needs(*v) {
                    let xt = self.value(*x);
                    let (b, c, h, w) = g.dims4();
                    let mut gv = Tensor::zeros(&[c]);
                    let gvd = gv.data_mut();
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * h * w;
                            let mut acc = 0.0;
                            for k in 0..h * w {
                                acc += g.data()[base + k] * xt.data()[base + k];
                            }
                            gvd[ci] += acc;
                        }
                    }
                    self.acc(grads, *v, gv);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                groups,
            } => {
                if self.needs(*x) {
                    self.acc(
                        grads,
                        *x,
                        conv::conv2d_bwd_x(g, self.value(*w), self.value(*x).shape(), *stride, *pad, *groups),
                    );
                }
                if self.needs(*w) {
                    self.acc(
                        grads,
                        *w,
                        conv::conv2d_bwd_w(g, self.value(*x), self.value(*w).shape(), *stride, *pad, *groups),
                    );
                }
                if let Some(bv) = b {
                    if self.needs(*bv) {
                        self.acc(grads, *bv, conv::conv2d_bwd_b(g));
                    }
                }
            }
            Op::ConvT2d { x, w, b, stride, pad } => {
                if self.needs(*x) {
                    self.acc(
                        grads,
                        *x,
                        conv::convt2d_bwd_x(g, self.value(*w), self.value(*x).shape(), *stride, *pad),
                    );
                }
                if self.needs(*w) {
                    self.acc(
                        grads,
                        *w,
                        conv::convt2d_bwd_w(g, self.value(*x), self.value(*w).shape(), *stride, *pad),
                    );
                }
                if let Some(bv) = b {
                    if self.needs(*bv) {
                        self.acc(grads, *bv, conv::conv2d_bwd_b(g));
                    }
                }
            }
            Op::AvgPool2(x) => {
                let xs = self.value(*x).shape().to_vec();
                let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (ho, wo) = (h / 2, w / 2);
                let mut gx = Tensor::zeros(&xs);
                {
                    let gd = gx.data_mut();
                    for p in 0..b * c {
                        let gp = &g.data()[p * ho * wo..][..ho * wo];
                        let gxp = &mut gd[p * h * w..][..h * w];
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let gv = 0.25 * gp[oy * wo + ox];
                                let (iy, ix) = (oy * 2, ox * 2);
                                gxp[iy * w + ix] += gv;
                                gxp[iy * w + ix + 1] += gv;
                                gxp[(iy + 1) * w + ix] += gv;
                                gxp[(iy + 1) * w + ix + 1] += gv;
                            }
                        }
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::Mean(x) => {
                let xt = self.value(*x);
                let gv = g.item() / xt.numel() as f64;
                self.acc(grads, *x, Tensor::full(xt.shape(), gv));
            }
            Op::Sum(x) => {
                let xt = self.value(*x);
                self.acc(grads, *x, Tensor::full(xt.shape(), g.item()));
            }
        }
    }

    fn zip_g(&self, g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(g.shape(), other.shape());
        let data = g
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&gv, &ov)| f(gv, ov))
            .collect();
        Tensor::from_vec(g.shape(), data)
    }

    fn reduce_channel(&self, g: &Tensor) -> Tensor {
        let (b, c, h, w) = g.dims4();
        let mut out = Tensor::zeros(&[c]);
        let od = out.data_mut();
        for bi in 0..b {
            for ci in 0..c {
                od[ci] += g.data()[(bi * c + ci) * h * w..][..h * w].iter().sum::<f64>();
            }
        }
        out
    }
}
