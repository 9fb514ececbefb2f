//! A small define-by-run autodiff tape over `ArrayD<f64>`.
//!
//! Losses here span several networks at once (generators, critics, and a
//! frozen substitute), and the critic regularizer differentiates a gradient,
//! so the tape exposes the convolution adjoints as first-class ops: a
//! gradient graph built from `conv_input_grad` / `linear_input_grad` nodes is
//! itself differentiable.

use ndarray::{Array1, Array2, ArrayD, Axis, IxDyn};

use super::ops;

pub type Arr = ArrayD<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ConvInputGrad { gy: Var, w: Var, stride: usize, pad: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    LinearInputGrad { gy: Var, w: Var },
    Upsample2 { x: Var },
    DepthToSpace2 { x: Var },
    LeakyRelu { x: Var, alpha: f64 },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Exp { x: Var },
    Neg { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MulNoGradRhs { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddScalar { x: Var },
    Clamp01 { x: Var },
    Reshape { x: Var },
    ConcatChannels { a: Var, b: Var },
    MeanAll { x: Var },
    SumAll { x: Var },
    MeanAbs { x: Var },
    SumPerSample { x: Var },
    Sqrt { x: Var },
    Square { x: Var },
}

pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<Arr>,
    tracked: Vec<bool>,
}

/// Gradients keyed by tape variable.
pub struct Grads {
    grads: Vec<Option<Arr>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Arr> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Arr> {
        self.grads[v.0].take()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            values: Vec::new(),
            tracked: Vec::new(),
        }
    }

    fn push(&mut self, node: Node, value: Arr, tracked: bool) -> Var {
        self.nodes.push(node);
        self.values.push(value);
        self.tracked.push(tracked);
        Var(self.nodes.len() - 1)
    }

    fn is_tracked(&self, v: Var) -> bool {
        self.tracked[v.0]
    }

    pub fn value(&self, v: Var) -> &Arr {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.values[v.0].len(), 1);
        *self.values[v.0].iter().next().expect("scalar node")
    }

    /// A leaf that participates in differentiation.
    pub fn leaf(&mut self, value: Arr) -> Var {
        self.push(Node::Leaf, value, true)
    }

    /// A leaf treated as a constant: no gradient is propagated to it.
    pub fn constant(&mut self, value: Arr) -> Var {
        self.push(Node::Leaf, value, false)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let value = ops::conv_fwd(
            &self.values[x.0].view().into_dimensionality().unwrap(),
            &self.values[w.0].view().into_dimensionality().unwrap(),
            b.map(|bv| {
                Array1::from_iter(self.values[bv.0].iter().cloned())
            })
            .as_ref(),
            stride,
            pad,
        );
        let tracked = self.is_tracked(x)
            || self.is_tracked(w)
            || b.map(|bv| self.is_tracked(bv)).unwrap_or(false);
        self.push(
            Node::Conv2d { x, w, b, stride, pad },
            value.into_dyn(),
            tracked,
        )
    }

    /// The input-adjoint of a convolution as a differentiable op. `gy` plays
    /// the output-gradient role; the result has spatial size `(h, wd)`.
    pub fn conv_input_grad(
        &mut self,
        gy: Var,
        w: Var,
        stride: usize,
        pad: usize,
        h: usize,
        wd: usize,
    ) -> Var {
        let value = ops::conv_dx(
            &self.values[gy.0].view().into_dimensionality().unwrap(),
            &self.values[w.0].view().into_dimensionality().unwrap(),
            stride,
            pad,
            h,
            wd,
        );
        let tracked = self.is_tracked(gy) || self.is_tracked(w);
        self.push(
            Node::ConvInputGrad { gy, w, stride, pad },
            value.into_dyn(),
            tracked,
        )
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv: Array2<f64> = self.values[x.0].view().into_dimensionality().unwrap().to_owned();
        let wv: Array2<f64> = self.values[w.0].view().into_dimensionality().unwrap().to_owned();
        let bv = b.map(|bv| Array1::from_iter(self.values[bv.0].iter().cloned()));
        let value = ops::linear_fwd(&xv, &wv, bv.as_ref());
        let tracked = self.is_tracked(x)
            || self.is_tracked(w)
            || b.map(|bv| self.is_tracked(bv)).unwrap_or(false);
        self.push(Node::Linear { x, w, b }, value.into_dyn(), tracked)
    }

    /// `gy · W`: the input-adjoint of `linear` as a differentiable op.
    pub fn linear_input_grad(&mut self, gy: Var, w: Var) -> Var {
        let gv: Array2<f64> = self.values[gy.0].view().into_dimensionality().unwrap().to_owned();
        let wv: Array2<f64> = self.values[w.0].view().into_dimensionality().unwrap().to_owned();
        let value = gv.dot(&wv);
        let tracked = self.is_tracked(gy) || self.is_tracked(w);
        self.push(Node::LinearInputGrad { gy, w }, value.into_dyn(), tracked)
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let value = ops::upsample2(&self.values[x.0].view().into_dimensionality().unwrap());
        let tracked = self.is_tracked(x);
        self.push(Node::Upsample2 { x }, value.into_dyn(), tracked)
    }

    pub fn depth_to_space2(&mut self, x: Var) -> Var {
        let value = ops::depth_to_space2(&self.values[x.0].view().into_dimensionality().unwrap());
        let tracked = self.is_tracked(x);
        self.push(Node::DepthToSpace2 { x }, value.into_dyn(), tracked)
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        let value = self.values[x.0].mapv(|v| if v > 0.0 { v } else { alpha * v });
        let tracked = self.is_tracked(x);
        self.push(Node::LeakyRelu { x, alpha }, value, tracked)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.values[x.0].mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let tracked = self.is_tracked(x);
        self.push(Node::Sigmoid { x }, value, tracked)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.values[x.0].mapv(f64::tanh);
        let tracked = self.is_tracked(x);
        self.push(Node::Tanh { x }, value, tracked)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.values[x.0].mapv(f64::exp);
        let tracked = self.is_tracked(x);
        self.push(Node::Exp { x }, value, tracked)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let value = self.values[x.0].mapv(|v| -v);
        let tracked = self.is_tracked(x);
        self.push(Node::Neg { x }, value, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.values[a.0].shape(), self.values[b.0].shape());
        let value = &self.values[a.0] + &self.values[b.0];
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        self.push(Node::Add { a, b }, value, tracked)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.values[a.0].shape(), self.values[b.0].shape());
        let value = &self.values[a.0] - &self.values[b.0];
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        self.push(Node::Sub { a, b }, value, tracked)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.values[a.0].shape(), self.values[b.0].shape());
        let value = &self.values[a.0] * &self.values[b.0];
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        self.push(Node::Mul { a, b }, value, tracked)
    }

    /// Elementwise product where the right factor is held constant during
    /// differentiation (stop-gradient on `b`).
    pub fn mul_no_grad_rhs(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.values[a.0].shape(), self.values[b.0].shape());
        let value = &self.values[a.0] * &self.values[b.0];
        let tracked = self.is_tracked(a);
        self.push(Node::MulNoGradRhs { a, b }, value, tracked)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.values[x.0].mapv(|v| v * c);
        let tracked = self.is_tracked(x);
        self.push(Node::Scale { x, c }, value, tracked)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.values[x.0].mapv(|v| v + c);
        let tracked = self.is_tracked(x);
        self.push(Node::AddScalar { x }, value, tracked)
    }

    pub fn clamp01(&mut self, x: Var) -> Var {
        let value = self.values[x.0].mapv(|v| v.clamp(0.0, 1.0));
        let tracked = self.is_tracked(x);
        self.push(Node::Clamp01 { x }, value, tracked)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.values[x.0]
            .to_shape(IxDyn(shape))
            .expect("reshape size mismatch")
            .to_owned();
        let tracked = self.is_tracked(x);
        self.push(Node::Reshape { x }, value, tracked)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let av = &self.values[a.0];
        let bv = &self.values[b.0];
        let value = ndarray::concatenate(Axis(1), &[av.view(), bv.view()])
            .expect("channel concat shape mismatch");
        let tracked = self.is_tracked(a) || self.is_tracked(b);
        self.push(Node::ConcatChannels { a, b }, value, tracked)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.values[x.0].len() as f64;
        let s: f64 = self.values[x.0].iter().sum();
        let value = ArrayD::from_elem(IxDyn(&[]), s / n);
        let tracked = self.is_tracked(x);
        self.push(Node::MeanAll { x }, value, tracked)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.values[x.0].iter().sum();
        let value = ArrayD::from_elem(IxDyn(&[]), s);
        let tracked = self.is_tracked(x);
        self.push(Node::SumAll { x }, value, tracked)
    }

    /// Mean absolute value over every element.
    pub fn mean_abs(&mut self, x: Var) -> Var {
        let n = self.values[x.0].len() as f64;
        let s: f64 = self.values[x.0].iter().map(|v| v.abs()).sum();
        let value = ArrayD::from_elem(IxDyn(&[]), s / n);
        let tracked = self.is_tracked(x);
        self.push(Node::MeanAbs { x }, value, tracked)
    }

    /// Sum over all axes except the first: `[n, ...] -> [n]`.
    pub fn sum_per_sample(&mut self, x: Var) -> Var {
        let v = &self.values[x.0];
        let n = v.shape()[0];
        let per = v.len() / n;
        let flat = v.to_shape(IxDyn(&[n, per])).expect("flatten");
        let mut out = ndarray::Array1::<f64>::zeros(n);
        for i in 0..n {
            out[i] = flat.index_axis(Axis(0), i).sum();
        }
        let tracked = self.is_tracked(x);
        self.push(Node::SumPerSample { x }, out.into_dyn(), tracked)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.values[x.0].mapv(f64::sqrt);
        let tracked = self.is_tracked(x);
        self.push(Node::Sqrt { x }, value, tracked)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.values[x.0].mapv(|v| v * v);
        let tracked = self.is_tracked(x);
        self.push(Node::Square { x }, value, tracked)
    }

    /// Convenience: `mean_abs(a - b)`, the mean-reduced L1 distance.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        self.mean_abs(d)
    }

    /// Reverse-mode sweep from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.values[loss.0].len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<Arr>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(ArrayD::from_elem(self.values[loss.0].raw_dim(), 1.0));

        for idx in (0..self.nodes.len()).rev() {
            if !self.tracked[idx] {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn acc(&self, grads: &mut [Option<Arr>], v: Var, delta: Arr) {
        if !self.tracked[v.0] {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, idx: usize, g: &Arr, grads: &mut [Option<Arr>]) {
        match &self.nodes[idx] {
            Node::Leaf => {}
            Node::Conv2d { x, w, b, stride, pad } => {
                let g4 = g.view().into_dimensionality().unwrap();
                if self.is_tracked(*x) {
                    let xs = self.values[x.0].shape();
                    let gx = ops::conv_dx(
                        &g4,
                        &self.values[w.0].view().into_dimensionality().unwrap(),
                        *stride,
                        *pad,
                        xs[2],
                        xs[3],
                    );
                    self.acc(grads, *x, gx.into_dyn());
                }
                if self.is_tracked(*w) {
                    let ws = self.values[w.0].shape();
                    let gw = ops::conv_dw(
                        &self.values[x.0].view().into_dimensionality().unwrap(),
                        &g4,
                        *stride,
                        *pad,
                        ws[2],
                        ws[3],
                    );
                    self.acc(grads, *w, gw.into_dyn());
                }
                if let Some(bv) = b {
                    if self.is_tracked(*bv) {
                        let gb = ops::conv_db(&g4);
                        self.acc(grads, *bv, gb.into_dyn());
                    }
                }
            }
            Node::ConvInputGrad { gy, w, stride, pad, .. } => {
                // value = conv_dx(gy, w); by the adjoint identity
                // <u, conv_dx(a, w)> = <conv_fwd(u, w), a> = <conv_dw(u, a), w>.
                let u = g.view().into_dimensionality().unwrap();
                if self.is_tracked(*gy) {
                    let ga = ops::conv_fwd(
                        &u,
                        &self.values[w.0].view().into_dimensionality().unwrap(),
                        None,
                        *stride,
                        *pad,
                    );
                    self.acc(grads, *gy, ga.into_dyn());
                }
                if self.is_tracked(*w) {
                    let ws = self.values[w.0].shape();
                    let gw = ops::conv_dw(
                        &u,
                        &self.values[gy.0].view().into_dimensionality().unwrap(),
                        *stride,
                        *pad,
                        ws[2],
                        ws[3],
                    );
                    self.acc(grads, *w, gw.into_dyn());
                }
            }
            Node::Linear { x, w, b } => {
                let g2: Array2<f64> = g.view().into_dimensionality().unwrap().to_owned();
                if self.is_tracked(*x) {
                    let wv: Array2<f64> =
                        self.values[w.0].view().into_dimensionality().unwrap().to_owned();
                    self.acc(grads, *x, g2.dot(&wv).into_dyn());
                }
                if self.is_tracked(*w) {
                    let xv: Array2<f64> =
                        self.values[x.0].view().into_dimensionality().unwrap().to_owned();
                    self.acc(grads, *w, g2.t().dot(&xv).into_dyn());
                }
                if let Some(bv) = b {
                    if self.is_tracked(*bv) {
                        let gb = g2.sum_axis(Axis(0));
                        self.acc(grads, *bv, gb.into_dyn());
                    }
                }
            }
            Node::LinearInputGrad { gy, w } => {
                // value = gy · W; <u, gy·W> = <u·W^T, gy> = <gy^T·u, W>.
                let u: Array2<f64> = g.view().into_dimensionality().unwrap().to_owned();
                if self.is_tracked(*gy) {
                    let wv: Array2<f64> =
                        self.values[w.0].view().into_dimensionality().unwrap().to_owned();
                    self.acc(grads, *gy, u.dot(&wv.t()).into_dyn());
                }
                if self.is_tracked(*w) {
                    let gyv: Array2<f64> =
                        self.values[gy.0].view().into_dimensionality().unwrap().to_owned();
                    self.acc(grads, *w, gyv.t().dot(&u).into_dyn());
                }
            }
            Node::Upsample2 { x } => {
                let gx = ops::upsample2_adjoint(&g.view().into_dimensionality().unwrap());
                self.acc(grads, *x, gx.into_dyn());
            }
            Node::DepthToSpace2 { x } => {
                let gx = ops::space_to_depth2(&g.view().into_dimensionality().unwrap());
                self.acc(grads, *x, gx.into_dyn());
            }
            Node::LeakyRelu { x, alpha } => {
                let mask = self.values[x.0].mapv(|v| if v > 0.0 { 1.0 } else { *alpha });
                self.acc(grads, *x, g * &mask);
            }
            Node::Sigmoid { x } => {
                let y = &self.values[idx];
                let dy = y.mapv(|v| v * (1.0 - v));
                self.acc(grads, *x, g * &dy);
            }
            Node::Tanh { x } => {
                let y = &self.values[idx];
                let dy = y.mapv(|v| 1.0 - v * v);
                self.acc(grads, *x, g * &dy);
            }
            Node::Exp { x } => {
                let y = &self.values[idx];
                self.acc(grads, *x, g * y);
            }
            Node::Neg { x } => {
                self.acc(grads, *x, g.mapv(|v| -v));
            }
            Node::Add { a, b } => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Node::Sub { a, b } => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.mapv(|v| -v));
            }
            Node::Mul { a, b } => {
                if self.is_tracked(*a) {
                    self.acc(grads, *a, g * &self.values[b.0]);
                }
                if self.is_tracked(*b) {
                    self.acc(grads, *b, g * &self.values[a.0]);
                }
            }
            Node::MulNoGradRhs { a, b } => {
                self.acc(grads, *a, g * &self.values[b.0]);
            }
            Node::Scale { x, c } => {
                self.acc(grads, *x, g.mapv(|v| v * c));
            }
            Node::AddScalar { x } => {
                self.acc(grads, *x, g.clone());
            }
            Node::Clamp01 { x } => {
                let mask = self.values[x.0].mapv(|v| if v > 0.0 && v < 1.0 { 1.0 } else { 0.0 });
                self.acc(grads, *x, g * &mask);
            }
            Node::Reshape { x } => {
                let gx = g
                    .to_shape(self.values[x.0].raw_dim())
                    .expect("reshape grad")
                    .to_owned();
                self.acc(grads, *x, gx);
            }
            Node::ConcatChannels { a, b } => {
                let ca = self.values[a.0].shape()[1];
                let ga = g.slice_axis(Axis(1), ndarray::Slice::from(0..ca)).to_owned();
                let gb = g.slice_axis(Axis(1), ndarray::Slice::from(ca..)).to_owned();
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Node::MeanAll { x } => {
                let gs = g.iter().next().copied().unwrap();
                let n = self.values[x.0].len() as f64;
                let gx = ArrayD::from_elem(self.values[x.0].raw_dim(), gs / n);
                self.acc(grads, *x, gx);
            }
            Node::SumAll { x } => {
                let gs = g.iter().next().copied().unwrap();
                let gx = ArrayD::from_elem(self.values[x.0].raw_dim(), gs);
                self.acc(grads, *x, gx);
            }
            Node::MeanAbs { x } => {
                let gs = g.iter().next().copied().unwrap();
                let n = self.values[x.0].len() as f64;
                let gx = self.values[x.0].mapv(|v| {
                    if v > 0.0 {
                        gs / n
                    } else if v < 0.0 {
                        -gs / n
                    } else {
                        0.0
                    }
                });
                self.acc(grads, *x, gx);
            }
            Node::SumPerSample { x } => {
                let xs = self.values[x.0].shape().to_vec();
                let n = xs[0];
                let mut gx = ArrayD::zeros(self.values[x.0].raw_dim());
                let per = gx.len() / n;
                {
                    let mut flat = gx.view_mut().into_shape_with_order((n, per)).unwrap();
                    for i in 0..n {
                        let gi = g[[i]];
                        flat.row_mut(i).fill(gi);
                    }
                }
                self.acc(grads, *x, gx);
            }
            Node::Sqrt { x } => {
                let y = &self.values[idx];
                let dy = y.mapv(|v| 0.5 / v.max(1e-300));
                self.acc(grads, *x, g * &dy);
            }
            Node::Square { x } => {
                let dx = self.values[x.0].mapv(|v| 2.0 * v);
                self.acc(grads, *x, g * &dx);
            }
        }
    }
}
