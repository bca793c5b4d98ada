//! Minimal reverse-mode autodiff over [`Tensor`].
//!
//! One [`Tape`] holds the computation graph of a single forward pass. Ops
//! compute their value eagerly when recorded; [`Tape::backward`] walks the
//! graph in reverse and accumulates gradients into leaf nodes. Only leaf
//! gradients are retained, which keeps per-sample memory proportional to the
//! parameter count rather than the activation count.

pub mod conv;
pub mod warp;

use crate::tensor::{Real, Tensor};

pub use conv::{ConvGeom, DeconvGeom};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub usize);

enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Abs(Var),
    Charbonnier(Var, F),
    Sigmoid(Var),
    PRelu { x: Var, alpha: Var },
    MeanAll(Var),
    SumAll(Var),
    ChannelNorm(Var),
    Concat(Vec<Var>),
    SliceC { x: Var, c0: usize, len: usize },
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    Deconv { x: Var, w: Var, b: Var, geom: DeconvGeom },
    Warp { src: Var, flow: Var },
    Detach,
}

struct Node<F> {
    value: Tensor<F>,
    needs: bool,
    leaf_grad: Option<Tensor<F>>,
    op: Op<F>,
}

pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<F>, needs: bool, op: Op<F>) -> Var {
        self.nodes.push(Node {
            value,
            needs,
            leaf_grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated into a leaf by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.nodes[v.0].leaf_grad.as_ref()
    }

    /// Trainable leaf: receives a gradient on backward.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Non-trainable input: no gradient is tracked through it.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = zip(self.value(a), self.value(b), |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        self.push(v, needs, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = zip(self.value(a), self.value(b), |x, y| x - y);
        let needs = self.needs(a) || self.needs(b);
        self.push(v, needs, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = zip(self.value(a), self.value(b), |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        self.push(v, needs, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let v = self.value(a).map(|x| x * c);
        let needs = self.needs(a);
        self.push(v, needs, Op::Scale(a, c))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.abs());
        let needs = self.needs(a);
        self.push(v, needs, Op::Abs(a))
    }

    /// Charbonnier penalty rho(x) = sqrt(x^2 + eps^2), elementwise.
    pub fn charbonnier(&mut self, a: Var, eps: F) -> Var {
        let e2 = eps * eps;
        let v = self.value(a).map(|x| (x * x + e2).sqrt());
        let needs = self.needs(a);
        self.push(v, needs, Op::Charbonnier(a, eps))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = F::one();
        let v = self.value(a).map(|x| one / (one + (-x).exp()));
        let needs = self.needs(a);
        self.push(v, needs, Op::Sigmoid(a))
    }

    /// PReLU with a single learnable slope (shape `[1]`).
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Var {
        let a = self.value(alpha).item();
        let v = self.value(x).map(|t| if t > F::zero() { t } else { a * t });
        let needs = self.needs(x) || self.needs(alpha);
        self.push(v, needs, Op::PRelu { x, alpha })
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = F::of(t.len() as f64);
        let sum = t.iter().fold(F::zero(), |acc, &x| acc + x);
        let needs = self.needs(a);
        self.push(Tensor::scalar(sum / n), needs, Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let sum = self.value(a).iter().fold(F::zero(), |acc, &x| acc + x);
        let needs = self.needs(a);
        self.push(Tensor::scalar(sum), needs, Op::SumAll(a))
    }

    /// Per-cell Euclidean norm over the channel axis: `[C,D,H,W] -> [1,D,H,W]`.
    pub fn channel_norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let [c, d, h, w] = t.dims4();
        let sp = d * h * w;
        let mut out = vec![F::zero(); sp];
        for ch in 0..c {
            let row = &t.data()[ch * sp..(ch + 1) * sp];
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x * x;
            }
        }
        for o in out.iter_mut() {
            *o = o.sqrt();
        }
        let needs = self.needs(a);
        self.push(Tensor::from_vec(&[1, d, h, w], out), needs, Op::ChannelNorm(a))
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let [_, d, h, w] = self.value(parts[0]).dims4();
        let sp = d * h * w;
        let mut c_total = 0;
        for &p in parts {
            let [c, pd, ph, pw] = self.value(p).dims4();
            assert_eq!((pd, ph, pw), (d, h, w), "concat spatial mismatch");
            c_total += c;
        }
        let mut data = Vec::with_capacity(c_total * sp);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            Tensor::from_vec(&[c_total, d, h, w], data),
            needs,
            Op::Concat(parts.to_vec()),
        )
    }

    /// Channel slice `[c0, c0+len)`.
    pub fn slice_c(&mut self, x: Var, c0: usize, len: usize) -> Var {
        let t = self.value(x);
        let [c, d, h, w] = t.dims4();
        assert!(c0 + len <= c, "slice_c out of range");
        let sp = d * h * w;
        let data = t.data()[c0 * sp..(c0 + len) * sp].to_vec();
        let needs = self.needs(x);
        // Reuse Concat bookkeeping in reverse via a dedicated op.
        self.push(
            Tensor::from_vec(&[len, d, h, w], data),
            needs,
            Op::SliceC { x, c0, len },
        )
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Var, stride: [usize; 3]) -> Var {
        let geom = ConvGeom::new(self.value(x), self.value(w), stride);
        let v = conv::conv_forward(self.value(x), self.value(w), self.value(b), &geom);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(v, needs, Op::Conv { x, w, b, geom })
    }

    pub fn deconv(&mut self, x: Var, w: Var, b: Var, stride: [usize; 3], out_sp: [usize; 3]) -> Var {
        let geom = DeconvGeom::new(self.value(x), self.value(w), stride, out_sp);
        let v = conv::deconv_forward(self.value(x), self.value(w), self.value(b), &geom);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(v, needs, Op::Deconv { x, w, b, geom })
    }

    /// Differentiable backward warp (bilinear for 2-channel flow, trilinear
    /// for 3-channel flow).
    pub fn warp(&mut self, src: Var, flow: Var) -> Var {
        let v = warp::warp_forward(self.value(src), self.value(flow));
        let needs = self.needs(src) || self.needs(flow);
        self.push(v, needs, Op::Warp { src, flow })
    }

    /// Stop-gradient: value passes through, gradient does not.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(v, false, Op::Detach)
    }

    /// Convenience: `1 - x`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -F::one());
        let ones = self.constant(Tensor::full(self.value(neg).shape(), F::one()));
        self.add(neg, ones)
    }

    /// Reverse pass from a rank-0 root. Leaf gradients accumulate into the
    /// tape and are readable via [`Tape::grad`].
    pub fn backward(&mut self, root: Var) {
        assert_eq!(
            self.nodes[root.0].value.len(),
            1,
            "backward root must be a scalar"
        );
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<F>>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[root.0] = Some(Tensor::scalar(F::one()));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    match &mut self.nodes[i].leaf_grad {
                        Some(acc) => accumulate(acc, &g),
                        slot => *slot = Some(g),
                    }
                    continue;
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        add_grad(&mut grads, a, g.clone());
                    }
                    if self.needs(b) {
                        add_grad(&mut grads, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        add_grad(&mut grads, a, g.clone());
                    }
                    if self.needs(b) {
                        add_grad(&mut grads, b, g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        let ga = zip(&g, self.value(b), |gi, bi| gi * bi);
                        add_grad(&mut grads, a, ga);
                    }
                    if self.needs(b) {
                        let gb = zip(&g, self.value(a), |gi, ai| gi * ai);
                        add_grad(&mut grads, b, gb);
                    }
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    add_grad(&mut grads, a, g.map(|x| x * c));
                }
                Op::Abs(a) => {
                    let a = *a;
                    let ga = zip(&g, self.value(a), |gi, xi| {
                        if xi > F::zero() {
                            gi
                        } else if xi < F::zero() {
                            -gi
                        } else {
                            F::zero()
                        }
                    });
                    add_grad(&mut grads, a, ga);
                }
                Op::Charbonnier(a, _) => {
                    let a = *a;
                    // value holds rho(x); d rho/dx = x / rho
                    let ga = {
                        let rho = &self.nodes[i].value;
                        let x = self.value(a);
                        let mut out = g.clone();
                        for ((o, &xv), &rv) in out.data_mut().iter_mut().zip(x.data()).zip(rho.data()) {
                            *o = *o * xv / rv;
                        }
                        out
                    };
                    add_grad(&mut grads, a, ga);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let ga = {
                        let y = &self.nodes[i].value;
                        zip(&g, y, |gi, yi| gi * yi * (F::one() - yi))
                    };
                    add_grad(&mut grads, a, ga);
                }
                Op::PRelu { x, alpha } => {
                    let (x, alpha) = (*x, *alpha);
                    let av = self.value(alpha).item();
                    if self.needs(x) {
                        let gx = zip(&g, self.value(x), |gi, xi| {
                            if xi > F::zero() {
                                gi
                            } else {
                                gi * av
                            }
                        });
                        add_grad(&mut grads, x, gx);
                    }
                    if self.needs(alpha) {
                        let mut s = F::zero();
                        for (&gi, &xi) in g.data().iter().zip(self.value(x).data()) {
                            if xi <= F::zero() {
                                s += gi * xi;
                            }
                        }
                        add_grad(&mut grads, alpha, Tensor::from_vec(&[1], vec![s]));
                    }
                }
                Op::MeanAll(a) => {
                    let a = *a;
                    let n = F::of(self.value(a).len() as f64);
                    let gv = g.item() / n;
                    let ga = Tensor::full(self.value(a).shape(), gv);
                    add_grad(&mut grads, a, ga);
                }
                Op::SumAll(a) => {
                    let a = *a;
                    let ga = Tensor::full(self.value(a).shape(), g.item());
                    add_grad(&mut grads, a, ga);
                }
                Op::ChannelNorm(a) => {
                    let a = *a;
                    let ga = {
                        let x = self.value(a);
                        let norm = &self.nodes[i].value;
                        let [c, d, h, w] = x.dims4();
                        let sp = d * h * w;
                        let mut out = Tensor::zeros(x.shape());
                        for ch in 0..c {
                            for p in 0..sp {
                                let nv = norm.data()[p];
                                if nv > F::zero() {
                                    out.data_mut()[ch * sp + p] =
                                        g.data()[p] * x.data()[ch * sp + p] / nv;
                                }
                            }
                        }
                        out
                    };
                    add_grad(&mut grads, a, ga);
                }
                Op::Concat(parts) => {
                    let parts = parts.clone();
                    let [_, d, h, w] = self.nodes[i].value.dims4();
                    let sp = d * h * w;
                    let mut off = 0;
                    for p in parts {
                        let c = self.value(p).dims4()[0];
                        if self.needs(p) {
                            let gp = Tensor::from_vec(
                                self.value(p).shape(),
                                g.data()[off * sp..(off + c) * sp].to_vec(),
                            );
                            add_grad(&mut grads, p, gp);
                        }
                        off += c;
                    }
                }
                Op::SliceC { x, c0, len } => {
                    let (x, c0, len) = (*x, *c0, *len);
                    let t = self.value(x);
                    let [_, d, h, w] = t.dims4();
                    let sp = d * h * w;
                    let mut gx = Tensor::zeros(t.shape());
                    gx.data_mut()[c0 * sp..(c0 + len) * sp].copy_from_slice(g.data());
                    add_grad(&mut grads, x, gx);
                }
                Op::Conv { x, w, b, geom } => {
                    let (x, w, b) = (*x, *w, *b);
                    let geom = geom.clone();
                    if self.needs(x) {
                        let gx = conv::conv_backward_data(&g, self.value(w), &geom);
                        add_grad(&mut grads, x, gx);
                    }
                    if self.needs(w) {
                        let gw = conv::conv_backward_weight(&g, self.value(x), &geom);
                        add_grad(&mut grads, w, gw);
                    }
                    if self.needs(b) {
                        let gb = conv::bias_grad(&g);
                        add_grad(&mut grads, b, gb);
                    }
                }
                Op::Deconv { x, w, b, geom } => {
                    let (x, w, b) = (*x, *w, *b);
                    let geom = geom.clone();
                    if self.needs(x) {
                        let gx = conv::deconv_backward_data(&g, self.value(w), &geom);
                        add_grad(&mut grads, x, gx);
                    }
                    if self.needs(w) {
                        let gw = conv::deconv_backward_weight(&g, self.value(x), &geom);
                        add_grad(&mut grads, w, gw);
                    }
                    if self.needs(b) {
                        let gb = conv::bias_grad(&g);
                        add_grad(&mut grads, b, gb);
                    }
                }
                Op::Warp { src, flow } => {
                    let (src, flow) = (*src, *flow);
                    let (gsrc, gflow) =
                        warp::warp_backward(&g, self.value(src), self.value(flow));
                    if self.needs(src) {
                        add_grad(&mut grads, src, gsrc);
                    }
                    if self.needs(flow) {
                        add_grad(&mut grads, flow, gflow);
                    }
                }
                Op::Detach => {}
            }
        }
    }
}

fn zip<F: Real>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape(), data)
}

fn accumulate<F: Real>(acc: &mut Tensor<F>, g: &Tensor<F>) {
    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

fn add_grad<F: Real>(grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
    match &mut grads[v.0] {
        Some(acc) => accumulate(acc, &g),
        slot => *slot = Some(g),
    }
}
