//! The semi-Siamese two-stream embedding network.
//!
//! Each stream maps a 23-channel frame stack through its own backbone and its
//! own 100-D projection; a single 64-D projection is shared by both streams.
//! Gradients are computed by hand, layer by layer, and accumulated inside the
//! layers until [`SemiSiameseModel::zero_grad`].

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::flow::{ChannelStats, FrameStack, STACK_CHANNELS};
use crate::math;

pub const HIDDEN_DIM: usize = 100;
pub const EMBED_DIM: usize = 64;
const SHARED_INIT_GAIN: f64 = 0.1;

/// A point in the joint first/third embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        math::dist(&self.0, &other.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackboneKind {
    /// Four 3×3 convolutions (strides 2, 2, 1, 2) with ReLU, then flatten.
    Tiny,
    /// Residual network: strided stem, then two stages of one basic residual
    /// block followed by a strided convolution.
    Residual,
    /// No convolutions: the stack itself is the feature vector. Leaves only
    /// the projections trainable.
    Flatten,
}

impl BackboneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::Tiny => "tiny",
            BackboneKind::Residual => "residual",
            BackboneKind::Flatten => "flatten",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tiny" => Some(Self::Tiny),
            "residual" => Some(Self::Residual),
            "flatten" => Some(Self::Flatten),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub height: usize,
    pub width: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Scale embeddings to unit length. Off by default.
    pub normalize_embeddings: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::Tiny,
            height: 16,
            width: 16,
            hidden_dim: HIDDEN_DIM,
            embed_dim: EMBED_DIM,
            normalize_embeddings: false,
            seed: 0,
        }
    }
}

fn he_init(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, math::sqrt(2.0 / fan_in as f64)).expect("positive std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// 3×3 convolution with zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    grad_weight: Vec<f64>,
    grad_bias: Vec<f64>,
}

impl Conv2d {
    fn new(rng: &mut ChaCha8Rng, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        let n = out_channels * in_channels * 9;
        Self {
            in_channels,
            out_channels,
            stride,
            weight: he_init(rng, n, in_channels * 9),
            bias: alloc::vec![0.0; out_channels],
            grad_weight: alloc::vec![0.0; n],
            grad_bias: alloc::vec![0.0; out_channels],
        }
    }

    fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    fn forward(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = self.out_size(h, w);
        let mut y = alloc::vec![0.0; self.out_channels * oh * ow];
        for o in 0..self.out_channels {
            let out = &mut y[o * oh * ow..(o + 1) * oh * ow];
            out.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.in_channels {
                let plane = &x[i * h * w..(i + 1) * h * w];
                let k = &self.weight[(o * self.in_channels + i) * 9..][..9];
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = 0.0;
                        for kr in 0..3 {
                            let ir = (r * self.stride + kr) as isize - 1;
                            if ir < 0 || ir >= h as isize {
                                continue;
                            }
                            let row = &plane[ir as usize * w..(ir as usize + 1) * w];
                            for kc in 0..3 {
                                let ic = (c * self.stride + kc) as isize - 1;
                                if ic < 0 || ic >= w as isize {
                                    continue;
                                }
                                acc += k[kr * 3 + kc] * row[ic as usize];
                            }
                        }
                        out[r * ow + c] += acc;
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, x: &[f64], h: usize, w: usize, gy: &[f64]) -> Vec<f64> {
        let (oh, ow) = self.out_size(h, w);
        let mut gx = alloc::vec![0.0; self.in_channels * h * w];
        for o in 0..self.out_channels {
            let g = &gy[o * oh * ow..(o + 1) * oh * ow];
            self.grad_bias[o] += g.iter().sum::<f64>();
            for i in 0..self.in_channels {
                let plane = &x[i * h * w..(i + 1) * h * w];
                let base = (o * self.in_channels + i) * 9;
                let gplane = &mut gx[i * h * w..(i + 1) * h * w];
                for r in 0..oh {
                    for c in 0..ow {
                        let gv = g[r * ow + c];
                        if gv == 0.0 {
                            continue;
                        }
                        for kr in 0..3 {
                            let ir = (r * self.stride + kr) as isize - 1;
                            if ir < 0 || ir >= h as isize {
                                continue;
                            }
                            for kc in 0..3 {
                                let ic = (c * self.stride + kc) as isize - 1;
                                if ic < 0 || ic >= w as isize {
                                    continue;
                                }
                                let idx = ir as usize * w + ic as usize;
                                self.grad_weight[base + kr * 3 + kc] += gv * plane[idx];
                                gplane[idx] += gv * self.weight[base + kr * 3 + kc];
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

/// Fully connected layer, `y = W x + b` with `W` row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    grad_weight: Vec<f64>,
    grad_bias: Vec<f64>,
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: he_init(rng, in_dim * out_dim, in_dim),
            bias: alloc::vec![0.0; out_dim],
            grad_weight: alloc::vec![0.0; in_dim * out_dim],
            grad_bias: alloc::vec![0.0; out_dim],
        }
    }

    pub fn from_weights(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::ShapeMismatch { expected: in_dim * out_dim + out_dim, got: weight.len() + bias.len() });
        }
        Ok(Self {
            in_dim,
            out_dim,
            grad_weight: alloc::vec![0.0; weight.len()],
            grad_bias: alloc::vec![0.0; out_dim],
            weight,
            bias,
        })
    }

    /// Multiplies the initial weights by `gain`.
    pub fn with_gain(mut self, gain: f64) -> Self {
        self.weight.iter_mut().for_each(|w| *w *= gain);
        self
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + math::dot(row, x))
            .collect()
    }

    pub fn backward(&mut self, x: &[f64], gy: &[f64]) -> Vec<f64> {
        let mut gx = alloc::vec![0.0; self.in_dim];
        for (o, g) in gy.iter().enumerate() {
            self.grad_bias[o] += g;
            if *g == 0.0 {
                continue;
            }
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut self.grad_weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                gx[i] += g * row[i];
            }
        }
        gx
    }

    pub(crate) fn visit(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        f(&mut self.weight, &self.grad_weight);
        f(&mut self.bias, &self.grad_bias);
    }

    pub(crate) fn zero_grad(&mut self) {
        self.grad_weight.iter_mut().for_each(|g| *g = 0.0);
        self.grad_bias.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Block {
    /// `relu(conv(x))`
    Conv(Conv2d),
    /// `relu(conv2(relu(conv1(x))) + x)`
    Residual(Conv2d, Conv2d),
}

#[derive(Debug, Clone)]
struct BlockTrace {
    input: Vec<f64>,
    mid: Vec<f64>,
    output: Vec<f64>,
    h: usize,
    w: usize,
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn relu_mask(grad: &mut [f64], activation: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Convolutional feature extractor, `23 × H × W → out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    kind: BackboneKind,
    blocks: Vec<Block>,
    height: usize,
    width: usize,
    out_dim: usize,
}

impl Backbone {
    fn new(kind: BackboneKind, height: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let blocks = match kind {
            BackboneKind::Tiny => alloc::vec![
                Block::Conv(Conv2d::new(rng, STACK_CHANNELS, 8, 2)),
                Block::Conv(Conv2d::new(rng, 8, 16, 2)),
                Block::Conv(Conv2d::new(rng, 16, 16, 1)),
                Block::Conv(Conv2d::new(rng, 16, 16, 2)),
            ],
            BackboneKind::Residual => alloc::vec![
                Block::Conv(Conv2d::new(rng, STACK_CHANNELS, 16, 2)),
                Block::Residual(Conv2d::new(rng, 16, 16, 1), Conv2d::new(rng, 16, 16, 1)),
                Block::Conv(Conv2d::new(rng, 16, 24, 2)),
                Block::Residual(Conv2d::new(rng, 24, 24, 1), Conv2d::new(rng, 24, 24, 1)),
                Block::Conv(Conv2d::new(rng, 24, 24, 2)),
            ],
            BackboneKind::Flatten => Vec::new(),
        };
        let (mut h, mut w, mut c) = (height, width, STACK_CHANNELS);
        for b in &blocks {
            if let Block::Conv(conv) = b {
                (h, w) = conv.out_size(h, w);
                c = conv.out_channels;
            }
        }
        Self { kind, blocks, height, width, out_dim: c * h * w }
    }

    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn forward(&self, x: &[f64], traces: Option<&mut Vec<BlockTrace>>) -> Vec<f64> {
        let (mut h, mut w) = (self.height, self.width);
        let mut cur = x.to_vec();
        let mut record = traces;
        for block in &self.blocks {
            let (out, mid, oh, ow) = match block {
                Block::Conv(conv) => {
                    let mut y = conv.forward(&cur, h, w);
                    relu_in_place(&mut y);
                    let (oh, ow) = conv.out_size(h, w);
                    (y, Vec::new(), oh, ow)
                }
                Block::Residual(c1, c2) => {
                    let mut a = c1.forward(&cur, h, w);
                    relu_in_place(&mut a);
                    let mut y = c2.forward(&a, h, w);
                    y.iter_mut().zip(&cur).for_each(|(v, s)| *v += s);
                    relu_in_place(&mut y);
                    (y, a, h, w)
                }
            };
            if let Some(t) = record.as_deref_mut() {
                t.push(BlockTrace { input: cur, mid, output: out.clone(), h, w });
            }
            cur = out;
            (h, w) = (oh, ow);
        }
        cur
    }

    fn backward(&mut self, traces: &[BlockTrace], grad_out: Vec<f64>) {
        let mut g = grad_out;
        for (block, tr) in self.blocks.iter_mut().zip(traces).rev() {
            relu_mask(&mut g, &tr.output);
            g = match block {
                Block::Conv(conv) => conv.backward(&tr.input, tr.h, tr.w, &g),
                Block::Residual(c1, c2) => {
                    let mut ga = c2.backward(&tr.mid, tr.h, tr.w, &g);
                    relu_mask(&mut ga, &tr.mid);
                    let mut gx = c1.backward(&tr.input, tr.h, tr.w, &ga);
                    gx.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    gx
                }
            };
        }
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        for block in &mut self.blocks {
            let convs: &mut [&mut Conv2d] = match block {
                Block::Conv(c) => &mut [c],
                Block::Residual(a, b) => &mut [a, b],
            };
            for c in convs.iter_mut() {
                f(&mut c.weight, &c.grad_weight);
                f(&mut c.bias, &c.grad_bias);
            }
        }
    }

    fn zero_grad(&mut self) {
        self.visit_grads_mut(&mut |g| g.iter_mut().for_each(|v| *v = 0.0));
    }

    fn visit_grads_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for block in &mut self.blocks {
            let convs: &mut [&mut Conv2d] = match block {
                Block::Conv(c) => &mut [c],
                Block::Residual(a, b) => &mut [a, b],
            };
            for c in convs.iter_mut() {
                f(&mut c.grad_weight);
                f(&mut c.grad_bias);
            }
        }
    }
}

/// Stream-private layers: backbone and the 100-D projection.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamNet {
    pub backbone: Backbone,
    pub projection: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    First,
    Third,
}

/// Intermediate activations of one forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct StreamTrace {
    stream: Stream,
    blocks: Vec<BlockTrace>,
    features: Vec<f64>,
    hidden: Vec<f64>,
    raw: Vec<f64>,
}

/// Read-only view of one stream; the shared projection is the same object for both.
#[derive(Debug, Clone, Copy)]
pub struct StreamHandle<'a> {
    pub private: &'a StreamNet,
    pub shared: &'a Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiSiameseModel {
    config: ModelConfig,
    first: StreamNet,
    third: StreamNet,
    shared: Linear,
    /// Input standardization fitted on the training split.
    pub input_stats: Option<ChannelStats>,
}

impl SemiSiameseModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.height == 0 || config.width == 0 || config.hidden_dim == 0 || config.embed_dim == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let stream = |rng: &mut ChaCha8Rng| {
            let backbone = Backbone::new(config.backbone, config.height, config.width, rng);
            let projection = Linear::new(rng, backbone.out_dim(), config.hidden_dim);
            StreamNet { backbone, projection }
        };
        let first = stream(&mut rng);
        let third = stream(&mut rng);
        // small initial embeddings keep the first hinge gradients from silencing the ReLUs
        let shared = Linear::new(&mut rng, config.hidden_dim, config.embed_dim).with_gain(SHARED_INIT_GAIN);
        Ok(Self { config, first, third, shared, input_stats: None })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn stream(&self, s: Stream) -> StreamHandle<'_> {
        let private = match s {
            Stream::First => &self.first,
            Stream::Third => &self.third,
        };
        StreamHandle { private, shared: &self.shared }
    }

    fn stream_net(&self, s: Stream) -> &StreamNet {
        match s {
            Stream::First => &self.first,
            Stream::Third => &self.third,
        }
    }

    fn check(&self, stack: &FrameStack) -> Result<()> {
        if stack.channels() != STACK_CHANNELS {
            return Err(Error::ShapeMismatch { expected: STACK_CHANNELS, got: stack.channels() });
        }
        let expected = self.config.height * self.config.width;
        if stack.height() != self.config.height || stack.width() != self.config.width {
            return Err(Error::ShapeMismatch { expected, got: stack.height() * stack.width() });
        }
        Ok(())
    }

    pub fn forward(&self, s: Stream, stack: &FrameStack) -> Result<Embedding> {
        self.check(stack)?;
        let net = self.stream_net(s);
        let features = net.backbone.forward(stack.data(), None);
        let mut hidden = net.projection.forward(&features);
        relu_in_place(&mut hidden);
        let raw = self.shared.forward(&hidden);
        Ok(Embedding(self.finish(&raw)))
    }

    pub fn forward_first(&self, stack: &FrameStack) -> Result<Embedding> {
        self.forward(Stream::First, stack)
    }

    pub fn forward_third(&self, stack: &FrameStack) -> Result<Embedding> {
        self.forward(Stream::Third, stack)
    }

    fn finish(&self, raw: &[f64]) -> Vec<f64> {
        if self.config.normalize_embeddings {
            let n = math::norm(raw).max(1e-12);
            raw.iter().map(|v| v / n).collect()
        } else {
            raw.to_vec()
        }
    }

    /// Forward pass that keeps what backward needs.
    pub fn forward_trace(&self, s: Stream, stack: &FrameStack) -> Result<(Embedding, StreamTrace)> {
        self.check(stack)?;
        let net = self.stream_net(s);
        let mut blocks = Vec::new();
        let features = net.backbone.forward(stack.data(), Some(&mut blocks));
        let mut hidden = net.projection.forward(&features);
        relu_in_place(&mut hidden);
        let raw = self.shared.forward(&hidden);
        let z = Embedding(self.finish(&raw));
        Ok((z, StreamTrace { stream: s, blocks, features, hidden, raw }))
    }

    /// Accumulates parameter gradients for `dL/dz` of one traced pass.
    pub fn backward(&mut self, trace: &StreamTrace, grad_z: &[f64]) {
        let grad_raw = if self.config.normalize_embeddings {
            let n = math::norm(&trace.raw).max(1e-12);
            let z: Vec<f64> = trace.raw.iter().map(|v| v / n).collect();
            let proj = math::dot(&z, grad_z);
            grad_z.iter().zip(&z).map(|(g, zi)| (g - proj * zi) / n).collect()
        } else {
            grad_z.to_vec()
        };
        let mut grad_hidden = self.shared.backward(&trace.hidden, &grad_raw);
        relu_mask(&mut grad_hidden, &trace.hidden);
        let net = match trace.stream {
            Stream::First => &mut self.first,
            Stream::Third => &mut self.third,
        };
        let grad_features = net.projection.backward(&trace.features, &grad_hidden);
        net.backbone.backward(&trace.blocks, grad_features);
    }

    pub fn zero_grad(&mut self) {
        for net in [&mut self.first, &mut self.third] {
            net.backbone.zero_grad();
            net.projection.zero_grad();
        }
        self.shared.zero_grad();
    }

    /// Visits every `(parameter, gradient)` buffer in a fixed order:
    /// first stream, third stream, shared projection.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        for net in [&mut self.first, &mut self.third] {
            net.backbone.visit(f);
            net.projection.visit(f);
        }
        self.shared.visit(f);
    }

    /// All parameters, flattened in [`visit_params`](Self::visit_params) order.
    pub fn parameters(&self) -> Vec<f64> {
        let mut copy = self.clone();
        let mut out = Vec::new();
        copy.visit_params(&mut |p, _| out.extend_from_slice(p));
        out
    }

    /// All gradients, flattened in [`visit_params`](Self::visit_params) order.
    pub fn gradients(&self) -> Vec<f64> {
        let mut copy = self.clone();
        let mut out = Vec::new();
        copy.visit_params(&mut |_, g| out.extend_from_slice(g));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().len()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.num_parameters();
        if values.len() != expected {
            return Err(Error::ShapeMismatch { expected, got: values.len() });
        }
        let mut offset = 0;
        self.visit_params(&mut |p, _| {
            p.copy_from_slice(&values[offset..offset + p.len()]);
            offset += p.len();
        });
        Ok(())
    }

    /// Order-sensitive checksum of the parameters' bit patterns.
    pub fn checksum(&self) -> u64 {
        self.parameters().iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_stack(seed: u64, channels: usize, h: usize, w: usize) -> FrameStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FrameStack::new(channels, h, w, (0..channels * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let model = SemiSiameseModel::new(ModelConfig::default()).unwrap();
        let s = random_stack(1, STACK_CHANNELS, 16, 16);
        let a = model.forward_first(&s).unwrap();
        assert_eq!(a, model.forward_first(&s).unwrap());
        assert_eq!(a.dim(), EMBED_DIM);
        assert_eq!(model.forward_third(&s).unwrap(), model.forward_third(&s).unwrap());
        // independently initialized backbones
        assert_ne!(a, model.forward_third(&s).unwrap());
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let model = SemiSiameseModel::new(ModelConfig::default()).unwrap();
        let s = random_stack(1, 22, 16, 16);
        assert_eq!(
            model.forward_first(&s),
            Err(Error::ShapeMismatch { expected: STACK_CHANNELS, got: 22 })
        );
        assert!(model.forward_third(&random_stack(1, STACK_CHANNELS, 8, 8)).is_err());
    }

    #[test]
    fn streams_share_only_the_last_projection() {
        let model = SemiSiameseModel::new(ModelConfig::default()).unwrap();
        let f = model.stream(Stream::First);
        let t = model.stream(Stream::Third);
        assert!(core::ptr::eq(f.shared, t.shared));
        assert_ne!(f.private, t.private);
    }

    #[test]
    fn parameter_round_trip() {
        for kind in [BackboneKind::Tiny, BackboneKind::Residual, BackboneKind::Flatten] {
            let cfg = ModelConfig { backbone: kind, height: 8, width: 8, ..Default::default() };
            let a = SemiSiameseModel::new(cfg.clone()).unwrap();
            let mut b = SemiSiameseModel::new(ModelConfig { seed: 99, ..cfg }).unwrap();
            assert_ne!(a.checksum(), b.checksum());
            b.set_parameters(&a.parameters()).unwrap();
            assert_eq!(a.checksum(), b.checksum());
            let s = random_stack(3, STACK_CHANNELS, 8, 8);
            assert_eq!(a.forward_first(&s).unwrap(), b.forward_first(&s).unwrap());
        }
    }

    /// Central finite differences through every layer type, including the
    /// residual skip and embedding normalization.
    #[test]
    fn backbone_gradients_match_finite_differences() {
        for (kind, normalize) in [(BackboneKind::Tiny, false), (BackboneKind::Residual, true)] {
            let cfg = ModelConfig {
                backbone: kind,
                height: 6,
                width: 6,
                hidden_dim: 12,
                embed_dim: 5,
                normalize_embeddings: normalize,
                seed: 4,
            };
            let mut model = SemiSiameseModel::new(cfg).unwrap();
            let stack = random_stack(8, STACK_CHANNELS, 6, 6);
            let probe: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.5).collect();
            let objective = |m: &SemiSiameseModel| math::dot(m.forward(Stream::Third, &stack).unwrap().as_slice(), &probe);

            let (_, trace) = model.forward_trace(Stream::Third, &stack).unwrap();
            model.zero_grad();
            model.backward(&trace, &probe);
            let grads = model.gradients();
            let params = model.parameters();
            let eps = 1e-6;
            let mut checked = 0;
            for i in (0..params.len()).step_by(params.len() / 97 + 1) {
                let mut plus = params.clone();
                plus[i] += eps;
                let mut minus = params.clone();
                minus[i] -= eps;
                let mut m = model.clone();
                m.set_parameters(&plus).unwrap();
                let fp = objective(&m);
                m.set_parameters(&minus).unwrap();
                let fm = objective(&m);
                let numeric = (fp - fm) / (2.0 * eps);
                let tol = 1e-5 * (1.0 + numeric.abs().max(grads[i].abs()));
                assert!((numeric - grads[i]).abs() < tol, "{kind:?} param {i}: {numeric} vs {}", grads[i]);
                checked += 1;
            }
            assert!(checked > 50);
        }
    }
}
