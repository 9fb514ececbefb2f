//! Parameterized layers and the conv-stack building block shared by the
//! substitute, the swap target, the adversary generators, and the critics.

use ndarray::{Array4, ArrayD, IxDyn};
use rand::Rng;

use super::ops;
use super::tape::{Arr, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    None,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply_tape(&self, t: &mut Tape, x: Var) -> Var {
        match self {
            Activation::None => x,
            Activation::Relu => t.leaky_relu(x, 0.0),
            Activation::LeakyRelu(a) => t.leaky_relu(x, *a),
            Activation::Sigmoid => t.sigmoid(x),
            Activation::Tanh => t.tanh(x),
        }
    }

    pub fn apply_array(&self, x: &mut ArrayD<f64>) {
        match self {
            Activation::None => {}
            Activation::Relu => x.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::LeakyRelu(a) => {
                let a = *a;
                x.mapv_inplace(move |v| if v > 0.0 { v } else { a * v })
            }
            Activation::Sigmoid => x.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp())),
            Activation::Tanh => x.mapv_inplace(f64::tanh),
        }
    }
}

/// One convolution stage. `upsample` doubles the spatial size with nearest
/// interpolation before the convolution, which is how decoders upsample.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub upsample: bool,
    /// Upsample by convolving to 4x channels and rearranging depth to
    /// space (pixel shuffle) instead of nearest interpolation.
    #[serde(default)]
    pub pixel_shuffle: bool,
    pub act: Activation,
}

impl ConvSpec {
    pub fn down(in_ch: usize, out_ch: usize, act: Activation) -> Self {
        Self { in_ch, out_ch, kernel: 3, stride: 2, pad: 1, upsample: false, pixel_shuffle: false, act }
    }

    /// Stride-2 stage with a kernel of 4: every input pixel is covered the
    /// same number of times, so input gradients carry no checkerboard.
    pub fn down4(in_ch: usize, out_ch: usize, act: Activation) -> Self {
        Self { in_ch, out_ch, kernel: 4, stride: 2, pad: 1, upsample: false, pixel_shuffle: false, act }
    }

    pub fn same(in_ch: usize, out_ch: usize, act: Activation) -> Self {
        Self { in_ch, out_ch, kernel: 3, stride: 1, pad: 1, upsample: false, pixel_shuffle: false, act }
    }

    pub fn up(in_ch: usize, out_ch: usize, act: Activation) -> Self {
        Self { in_ch, out_ch, kernel: 3, stride: 1, pad: 1, upsample: true, pixel_shuffle: false, act }
    }

    /// Pixel-shuffle upsampling stage: conv to `4 * out_ch`, then
    /// depth-to-space by 2.
    pub fn up_shuffle(in_ch: usize, out_ch: usize, act: Activation) -> Self {
        Self { in_ch, out_ch: out_ch * 4, kernel: 3, stride: 1, pad: 1, upsample: false, pixel_shuffle: true, act }
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub w: Arr,
    pub b: Arr,
}

impl ConvLayer {
    pub fn init(spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let fan_in = (spec.in_ch * spec.kernel * spec.kernel) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let mut w = ArrayD::zeros(IxDyn(&[spec.out_ch, spec.in_ch, spec.kernel, spec.kernel]));
        for v in w.iter_mut() {
            *v = rng.gen_range(-limit..limit);
        }
        let b = ArrayD::zeros(IxDyn(&[spec.out_ch]));
        Self { spec, w, b }
    }

    pub fn forward_infer(&self, x: &Array4<f64>) -> Array4<f64> {
        let input = if self.spec.upsample {
            ops::upsample2(&x.view())
        } else {
            x.clone()
        };
        let b = ndarray::Array1::from_iter(self.b.iter().cloned());
        let mut y = ops::conv_fwd(
            &input.view(),
            &self.w.view().into_dimensionality().unwrap(),
            Some(&b),
            self.spec.stride,
            self.spec.pad,
        );
        if self.spec.pixel_shuffle {
            y = ops::depth_to_space2(&y.view());
        }
        let mut y = y.into_dyn();
        self.spec.act.apply_array(&mut y);
        y.into_dimensionality().unwrap()
    }

    /// Forward on the tape against already-bound parameter vars.
    pub fn forward_tape(&self, t: &mut Tape, x: Var, w: Var, b: Var) -> Var {
        let input = if self.spec.upsample { t.upsample2(x) } else { x };
        let mut y = t.conv2d(input, w, Some(b), self.spec.stride, self.spec.pad);
        if self.spec.pixel_shuffle {
            y = t.depth_to_space2(y);
        }
        self.spec.act.apply_tape(t, y)
    }
}

/// A plain sequence of conv stages.
#[derive(Debug, Clone)]
pub struct ConvStack {
    pub layers: Vec<ConvLayer>,
}

/// Tape bindings of one stack's parameters, in layer order.
pub struct StackBinding {
    pub vars: Vec<(Var, Var)>,
}

impl ConvStack {
    pub fn init(specs: Vec<ConvSpec>, rng: &mut impl Rng) -> Self {
        let layers = specs.into_iter().map(|s| ConvLayer::init(s, rng)).collect();
        Self { layers }
    }

    pub fn forward_infer(&self, x: &Array4<f64>) -> Array4<f64> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward_infer(&cur);
        }
        cur
    }

    /// Bind parameters into the tape. `trainable` decides whether gradients
    /// flow to the parameters (they always flow through them).
    pub fn bind(&self, t: &mut Tape, trainable: bool) -> StackBinding {
        let vars = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (t.leaf(l.w.clone()), t.leaf(l.b.clone()))
                } else {
                    (t.constant(l.w.clone()), t.constant(l.b.clone()))
                }
            })
            .collect();
        StackBinding { vars }
    }

    pub fn forward_tape(&self, t: &mut Tape, x: Var, binding: &StackBinding) -> Var {
        let mut cur = x;
        for (layer, &(w, b)) in self.layers.iter().zip(binding.vars.iter()) {
            cur = layer.forward_tape(t, cur, w, b);
        }
        cur
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Named views of every parameter, `prefix.N.{w,b}`.
    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Arr)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.w"), &l.w));
            out.push((format!("{prefix}.{i}.b"), &l.b));
        }
        out
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Arr)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}.{i}.w"), &mut l.w));
            out.push((format!("{prefix}.{i}.b"), &mut l.b));
        }
        out
    }
}

/// Fully-connected head used by the critics.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub w: Arr,
    pub b: Arr,
}

impl LinearLayer {
    pub fn init(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / in_features as f64).sqrt();
        let mut w = ArrayD::zeros(IxDyn(&[out_features, in_features]));
        for v in w.iter_mut() {
            *v = rng.gen_range(-limit..limit);
        }
        let b = ArrayD::zeros(IxDyn(&[out_features]));
        Self { w, b }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn infer_and_tape_paths_agree() {
        let mut rng = substream(3, "init", 0);
        let stack = ConvStack::init(
            vec![
                ConvSpec::down(3, 4, Activation::LeakyRelu(0.2)),
                ConvSpec::up(4, 2, Activation::Sigmoid),
            ],
            &mut rng,
        );
        let mut x = Array4::zeros((2, 3, 8, 8));
        for (k, v) in x.iter_mut().enumerate() {
            *v = ((k % 7) as f64) / 7.0;
        }
        let infer = stack.forward_infer(&x);

        let mut t = Tape::new();
        let xv = t.constant(x.into_dyn());
        let binding = stack.bind(&mut t, false);
        let y = stack.forward_tape(&mut t, xv, &binding);
        for (a, b) in infer.iter().zip(t.value(y).iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let mk = || {
            let mut rng = substream(11, "init", 4);
            ConvStack::init(vec![ConvSpec::down(3, 8, Activation::Relu)], &mut rng)
        };
        let a = mk();
        let b = mk();
        assert_eq!(a.layers[0].w, b.layers[0].w);
    }

    #[test]
    fn stride2_halves_and_upsample_doubles() {
        let mut rng = substream(1, "init", 0);
        let down = ConvLayer::init(ConvSpec::down(1, 2, Activation::None), &mut rng);
        let up = ConvLayer::init(ConvSpec::up(2, 1, Activation::None), &mut rng);
        let x = Array4::zeros((1, 1, 16, 16));
        let y = down.forward_infer(&x);
        assert_eq!(y.dim(), (1, 2, 8, 8));
        let z = up.forward_infer(&y);
        assert_eq!(z.dim(), (1, 1, 16, 16));
    }
}
