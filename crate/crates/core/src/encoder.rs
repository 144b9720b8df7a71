//! The pluggable video feature encoder contract, a desk-scale trainable
//! encoder, the affine classification head, and the cross-entropy loss.
//!
//! Heavy pretrained backbones plug in through [`VideoEncoder`] without
//! touching the gate or attention code; [`ToyEncoder`] is the built-in
//! stand-in small enough to train in tests.

use std::any::Any;
use std::collections::BTreeMap;

use ndarray::{Array2, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FloatStack;

/// Opaque forward-pass record handed back to [`VideoEncoder::backward`].
pub type Tape = Box<dyn Any + Send>;

/// Contract for clip encoders: a float frame stack in, one f-dimensional
/// feature vector out, differentiable in both parameters and input pixels.
///
/// Parameter access is flat (a contiguous `f64` run in a fixed documented
/// order) so one optimizer can treat gate, encoder and head uniformly.
pub trait VideoEncoder: Send + Sync {
    fn name(&self) -> &str;
    fn feature_dim(&self) -> usize;
    fn param_count(&self) -> usize;
    fn write_params(&self, out: &mut Vec<f64>);
    /// Returns how many values were consumed.
    fn read_params(&mut self, params: &[f64]) -> Result<usize>;
    /// Evaluation-mode forward, no tape kept.
    fn forward(&self, stack: &FloatStack) -> Result<Vec<f64>>;
    fn forward_tape(&self, stack: &FloatStack) -> Result<(Vec<f64>, Tape)>;
    /// Accumulate parameter gradients into `d_params` (flat, `write_params`
    /// order) and return the gradient w.r.t. the input stack.
    fn backward(
        &self,
        stack: &FloatStack,
        tape: &Tape,
        d_feature: &[f64],
        d_params: &mut [f64],
    ) -> Result<FloatStack>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyEncoderConfig {
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub feature_dim: usize,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        ToyEncoderConfig {
            conv1_channels: 8,
            conv2_channels: 16,
            feature_dim: 64,
        }
    }
}

/// Two conv+pool stages per frame, global average pool, a linear projection
/// to the clip feature width, then a temporal mean over frames.
///
/// Mean pooling over frames is deliberate: attention scales frame pixels, so
/// with a mean-pooled clip feature the attention weights modulate feature
/// magnitude directly and their effect stays observable at desk scale.
/// No batch-dependent normalization anywhere (training runs one clip at a
/// time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    conv1_w: Array4<f64>,
    conv1_b: Vec<f64>,
    conv2_w: Array4<f64>,
    conv2_b: Vec<f64>,
    dense_w: Array2<f64>,
    dense_b: Vec<f64>,
}

const KERNEL: usize = 3;

impl ToyEncoder {
    pub fn new(cfg: ToyEncoderConfig, seed: u64) -> ToyEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal =
            |std: f64, rng: &mut ChaCha8Rng| Normal::new(0.0, std).expect("finite std").sample(rng);
        let (k1, k2, f) = (cfg.conv1_channels, cfg.conv2_channels, cfg.feature_dim);
        let std1 = (2.0 / (3.0 * (KERNEL * KERNEL) as f64)).sqrt();
        let conv1_w =
            Array4::from_shape_fn((k1, 3, KERNEL, KERNEL), |_| normal(std1, &mut rng));
        let std2 = (2.0 / (k1 * KERNEL * KERNEL) as f64).sqrt();
        let conv2_w =
            Array4::from_shape_fn((k2, k1, KERNEL, KERNEL), |_| normal(std2, &mut rng));
        let std3 = (1.0 / k2 as f64).sqrt();
        let dense_w = Array2::from_shape_fn((f, k2), |_| normal(std3, &mut rng));
        ToyEncoder {
            conv1_w,
            conv1_b: vec![0.0; k1],
            conv2_w,
            conv2_b: vec![0.0; k2],
            dense_w,
            dense_b: vec![0.0; f],
        }
    }

    fn frame_forward(&self, x: &Array3<f64>) -> Result<FrameTape> {
        let pre1 = conv_valid(x, &self.conv1_w, &self.conv1_b)?;
        let p1 = avg_pool_ceil(&relu(&pre1));
        let pre2 = conv_valid(&p1, &self.conv2_w, &self.conv2_b)?;
        let p2 = avg_pool_ceil(&relu(&pre2));
        let g = global_avg_pool(&p2);
        let mut embed = self.dense_b.clone();
        for (o, e) in embed.iter_mut().enumerate() {
            for (i, &gv) in g.iter().enumerate() {
                *e += self.dense_w[[o, i]] * gv;
            }
        }
        Ok(FrameTape {
            pre1,
            p1,
            pre2,
            p2_dim: p2.dim(),
            g,
            embed,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn frame_backward(
        &self,
        x: &Array3<f64>,
        tape: &FrameTape,
        d_embed: &[f64],
        grads: &mut ToyGrads,
    ) -> Array3<f64> {
        // dense
        let k2 = self.conv2_b.len();
        let mut d_g = vec![0.0; k2];
        for (o, &de) in d_embed.iter().enumerate() {
            grads.dense_b[o] += de;
            for i in 0..k2 {
                grads.dense_w[[o, i]] += de * tape.g[i];
                d_g[i] += self.dense_w[[o, i]] * de;
            }
        }
        // global average pool
        let (c2, h2, w2) = tape.p2_dim;
        let inv_area = 1.0 / (h2 * w2) as f64;
        let mut d_p2 = Array3::zeros((c2, h2, w2));
        for ch in 0..c2 {
            let dv = d_g[ch] * inv_area;
            d_p2.index_axis_mut(ndarray::Axis(0), ch).fill(dv);
        }
        // stage 2
        let d_r2 = avg_pool_ceil_backward(&d_p2, relu_dim(&tape.pre2));
        let d_pre2 = relu_backward(&d_r2, &tape.pre2);
        let d_p1 = conv_valid_backward(
            &tape.p1,
            &self.conv2_w,
            &d_pre2,
            &mut grads.conv2_w,
            &mut grads.conv2_b,
        );
        // stage 1
        let d_r1 = avg_pool_ceil_backward(&d_p1, relu_dim(&tape.pre1));
        let d_pre1 = relu_backward(&d_r1, &tape.pre1);
        conv_valid_backward(
            x,
            &self.conv1_w,
            &d_pre1,
            &mut grads.conv1_w,
            &mut grads.conv1_b,
        )
    }

    fn grads_zeroed(&self) -> ToyGrads {
        ToyGrads {
            conv1_w: Array4::zeros(self.conv1_w.dim()),
            conv1_b: vec![0.0; self.conv1_b.len()],
            conv2_w: Array4::zeros(self.conv2_w.dim()),
            conv2_b: vec![0.0; self.conv2_b.len()],
            dense_w: Array2::zeros(self.dense_w.dim()),
            dense_b: vec![0.0; self.dense_b.len()],
        }
    }
}

struct FrameTape {
    pre1: Array3<f64>,
    p1: Array3<f64>,
    pre2: Array3<f64>,
    p2_dim: (usize, usize, usize),
    g: Vec<f64>,
    embed: Vec<f64>,
}

struct ToyTape {
    frames: Vec<FrameTape>,
}

struct ToyGrads {
    conv1_w: Array4<f64>,
    conv1_b: Vec<f64>,
    conv2_w: Array4<f64>,
    conv2_b: Vec<f64>,
    dense_w: Array2<f64>,
    dense_b: Vec<f64>,
}

impl ToyGrads {
    fn add_to_flat(&self, out: &mut [f64]) {
        let mut pos = 0;
        for &v in self
            .conv1_w
            .iter()
            .chain(self.conv1_b.iter())
            .chain(self.conv2_w.iter())
            .chain(self.conv2_b.iter())
            .chain(self.dense_w.iter())
            .chain(self.dense_b.iter())
        {
            out[pos] += v;
            pos += 1;
        }
        debug_assert_eq!(pos, out.len());
    }
}

fn relu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

fn relu_dim(x: &Array3<f64>) -> (usize, usize, usize) {
    x.dim()
}

fn relu_backward(d_out: &Array3<f64>, pre: &Array3<f64>) -> Array3<f64> {
    let mut d = d_out.clone();
    d.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    d
}

fn conv_valid(x: &Array3<f64>, w: &Array4<f64>, b: &[f64]) -> Result<Array3<f64>> {
    let (c_in, h, wd) = x.dim();
    let (c_out, c_in_w, kh, kw) = w.dim();
    if c_in != c_in_w {
        return Err(Error::DimMismatch {
            got: c_in,
            want: c_in_w,
        });
    }
    if h < kh || wd < kw {
        return Err(Error::DimMismatch {
            got: h.min(wd),
            want: kh,
        });
    }
    let (oh, ow) = (h - kh + 1, wd - kw + 1);
    let mut out = Array3::zeros((c_out, oh, ow));
    for o in 0..c_out {
        for y in 0..oh {
            for xq in 0..ow {
                let mut acc = b[o];
                for i in 0..c_in {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            acc += w[[o, i, ky, kx]] * x[[i, y + ky, xq + kx]];
                        }
                    }
                }
                out[[o, y, xq]] = acc;
            }
        }
    }
    Ok(out)
}

/// Accumulates weight/bias grads and returns the input gradient.
fn conv_valid_backward(
    x: &Array3<f64>,
    w: &Array4<f64>,
    d_out: &Array3<f64>,
    d_w: &mut Array4<f64>,
    d_b: &mut [f64],
) -> Array3<f64> {
    let (c_in, _, _) = x.dim();
    let (c_out, _, kh, kw) = w.dim();
    let (_, oh, ow) = d_out.dim();
    let mut d_x = Array3::zeros(x.dim());
    for o in 0..c_out {
        for y in 0..oh {
            for xq in 0..ow {
                let g = d_out[[o, y, xq]];
                if g == 0.0 {
                    continue;
                }
                d_b[o] += g;
                for i in 0..c_in {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            d_w[[o, i, ky, kx]] += g * x[[i, y + ky, xq + kx]];
                            d_x[[i, y + ky, xq + kx]] += g * w[[o, i, ky, kx]];
                        }
                    }
                }
            }
        }
    }
    d_x
}

/// 2x2 stride-2 average pooling with ceil-mode output size: windows at the
/// bottom/right borders shrink instead of being dropped, so 1-pixel maps
/// survive (the gradient-check configuration pools 3x3 and 1x1 maps).
fn avg_pool_ceil(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Array3::zeros((c, oh, ow));
    for ch in 0..c {
        for y in 0..oh {
            for xq in 0..ow {
                let (y0, x0) = (y * 2, xq * 2);
                let (y1, x1) = ((y0 + 2).min(h), (x0 + 2).min(w));
                let mut acc = 0.0;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        acc += x[[ch, yy, xx]];
                    }
                }
                out[[ch, y, xq]] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    out
}

fn avg_pool_ceil_backward(
    d_out: &Array3<f64>,
    in_dim: (usize, usize, usize),
) -> Array3<f64> {
    let (c, h, w) = in_dim;
    let (_, oh, ow) = d_out.dim();
    let mut d_in = Array3::zeros(in_dim);
    for ch in 0..c {
        for y in 0..oh {
            for xq in 0..ow {
                let (y0, x0) = (y * 2, xq * 2);
                let (y1, x1) = ((y0 + 2).min(h), (x0 + 2).min(w));
                let share = d_out[[ch, y, xq]] / ((y1 - y0) * (x1 - x0)) as f64;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        d_in[[ch, yy, xx]] += share;
                    }
                }
            }
        }
    }
    d_in
}

fn global_avg_pool(x: &Array3<f64>) -> Vec<f64> {
    let (c, h, w) = x.dim();
    let inv = 1.0 / (h * w) as f64;
    (0..c)
        .map(|ch| x.index_axis(ndarray::Axis(0), ch).sum() * inv)
        .collect()
}

impl VideoEncoder for ToyEncoder {
    fn name(&self) -> &str {
        "toy"
    }

    fn feature_dim(&self) -> usize {
        self.dense_b.len()
    }

    fn param_count(&self) -> usize {
        self.conv1_w.len()
            + self.conv1_b.len()
            + self.conv2_w.len()
            + self.conv2_b.len()
            + self.dense_w.len()
            + self.dense_b.len()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend(self.conv1_w.iter());
        out.extend_from_slice(&self.conv1_b);
        out.extend(self.conv2_w.iter());
        out.extend_from_slice(&self.conv2_b);
        out.extend(self.dense_w.iter());
        out.extend_from_slice(&self.dense_b);
    }

    fn read_params(&mut self, params: &[f64]) -> Result<usize> {
        let want = self.param_count();
        if params.len() < want {
            return Err(Error::ParamLength {
                got: params.len(),
                want,
            });
        }
        let mut it = params.iter();
        let mut take = |dst: &mut f64| {
            *dst = *it.next().expect("length checked above");
        };
        self.conv1_w.iter_mut().for_each(&mut take);
        self.conv1_b.iter_mut().for_each(&mut take);
        self.conv2_w.iter_mut().for_each(&mut take);
        self.conv2_b.iter_mut().for_each(&mut take);
        self.dense_w.iter_mut().for_each(&mut take);
        self.dense_b.iter_mut().for_each(&mut take);
        Ok(want)
    }

    fn forward(&self, stack: &FloatStack) -> Result<Vec<f64>> {
        Ok(self.forward_tape(stack)?.0)
    }

    fn forward_tape(&self, stack: &FloatStack) -> Result<(Vec<f64>, Tape)> {
        if stack.is_empty() {
            return Err(Error::EmptyVideo);
        }
        let tapes = crate::par::map_auto(stack, |x| self.frame_forward(x));
        let mut frames = Vec::with_capacity(tapes.len());
        for t in tapes {
            frames.push(t?);
        }
        let f = self.feature_dim();
        let inv_n = 1.0 / frames.len() as f64;
        let mut feature = vec![0.0; f];
        for t in &frames {
            for (acc, &e) in feature.iter_mut().zip(&t.embed) {
                *acc += e;
            }
        }
        feature.iter_mut().for_each(|v| *v *= inv_n);
        Ok((feature, Box::new(ToyTape { frames })))
    }

    fn backward(
        &self,
        stack: &FloatStack,
        tape: &Tape,
        d_feature: &[f64],
        d_params: &mut [f64],
    ) -> Result<FloatStack> {
        let tape = tape.downcast_ref::<ToyTape>().ok_or(Error::ForeignTape)?;
        if d_feature.len() != self.feature_dim() {
            return Err(Error::DimMismatch {
                got: d_feature.len(),
                want: self.feature_dim(),
            });
        }
        if d_params.len() != self.param_count() {
            return Err(Error::ParamLength {
                got: d_params.len(),
                want: self.param_count(),
            });
        }
        let inv_n = 1.0 / stack.len() as f64;
        let d_embed: Vec<f64> = d_feature.iter().map(|&d| d * inv_n).collect();
        // Per-frame backward runs in parallel; gradient sums stay in frame
        // order, so the result is identical to the sequential lane.
        let per_frame: Vec<(ToyGrads, Array3<f64>)> =
            crate::par::map_indices(stack.len(), |j| {
                let mut grads = self.grads_zeroed();
                let d_x = self.frame_backward(&stack[j], &tape.frames[j], &d_embed, &mut grads);
                (grads, d_x)
            });
        let mut d_stack = Vec::with_capacity(stack.len());
        for (grads, d_x) in per_frame {
            grads.add_to_flat(d_params);
            d_stack.push(d_x);
        }
        Ok(d_stack)
    }
}

/// Affine map from clip features to activity logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub weights: Array2<f64>,
    pub bias: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(feature_dim: usize, num_activities: usize, seed: u64) -> ClassifierHead {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / feature_dim as f64).sqrt()).expect("finite");
        ClassifierHead {
            weights: Array2::from_shape_fn((num_activities, feature_dim), |_| {
                normal.sample(&mut rng)
            }),
            bias: vec![0.0; num_activities],
        }
    }

    pub fn num_activities(&self) -> usize {
        self.bias.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn forward(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.feature_dim() {
            return Err(Error::DimMismatch {
                got: feature.len(),
                want: self.feature_dim(),
            });
        }
        let mut logits = self.bias.clone();
        for (o, l) in logits.iter_mut().enumerate() {
            for (i, &x) in feature.iter().enumerate() {
                *l += self.weights[[o, i]] * x;
            }
        }
        Ok(logits)
    }

    /// Accumulate head grads, return the feature gradient.
    pub fn backward(
        &self,
        feature: &[f64],
        d_logits: &[f64],
        d_weights: &mut Array2<f64>,
        d_bias: &mut [f64],
    ) -> Vec<f64> {
        let mut d_feat = vec![0.0; feature.len()];
        for (o, &dl) in d_logits.iter().enumerate() {
            d_bias[o] += dl;
            for (i, &x) in feature.iter().enumerate() {
                d_weights[[o, i]] += dl * x;
                d_feat[i] += self.weights[[o, i]] * dl;
            }
        }
        d_feat
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend(self.weights.iter());
        out.extend_from_slice(&self.bias);
    }

    pub fn read_params(&mut self, params: &[f64]) -> Result<usize> {
        let want = self.param_count();
        if params.len() < want {
            return Err(Error::ParamLength {
                got: params.len(),
                want,
            });
        }
        for (dst, &src) in self
            .weights
            .iter_mut()
            .chain(self.bias.iter_mut())
            .zip(params)
        {
            *dst = src;
        }
        Ok(want)
    }
}

/// Negative log softmax probability of the true label, via log-sum-exp.
/// Also returns the logit gradient (softmax minus one-hot).
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelRange {
            label,
            num_activities: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let lse = max + sum_exp.ln();
    let loss = lse - logits[label];
    let mut d_logits: Vec<f64> = logits
        .iter()
        .map(|&l| (l - max).exp() / sum_exp)
        .collect();
    d_logits[label] -= 1.0;
    Ok((loss, d_logits))
}

/// Builds encoders by config-file name. "toy" is built in; the common
/// full-scale backbone names are reserved so a future external adapter can
/// claim them without renaming anyone's config.
pub struct EncoderRegistry {
    factories: BTreeMap<String, EncoderFactory>,
}

pub type EncoderFactory =
    Box<dyn Fn(&ToyEncoderConfig, u64) -> Result<Box<dyn VideoEncoder>> + Send + Sync>;

pub const RESERVED_ENCODERS: &[&str] =
    &["mvit", "csn", "i3d", "c2d", "r3d", "mc3d", "r2plus1d"];

impl EncoderRegistry {
    pub fn with_builtin() -> EncoderRegistry {
        let mut reg = EncoderRegistry {
            factories: BTreeMap::new(),
        };
        reg.factories.insert(
            "toy".to_string(),
            Box::new(|cfg, seed| Ok(Box::new(ToyEncoder::new(*cfg, seed)) as Box<_>)),
        );
        reg
    }

    pub fn register(&mut self, name: &str, factory: EncoderFactory) -> Result<()> {
        if self.factories.contains_key(name) {
            return Err(Error::EncoderNameTaken(name.to_string()));
        }
        self.factories.insert(name.to_string(), factory);
        Ok(())
    }

    pub fn build(
        &self,
        name: &str,
        cfg: &ToyEncoderConfig,
        seed: u64,
    ) -> Result<Box<dyn VideoEncoder>> {
        match self.factories.get(name) {
            Some(f) => f(cfg, seed),
            None if RESERVED_ENCODERS.contains(&name) => Err(Error::UnknownEncoder(format!(
                "{name} (reserved for an external adapter; none registered)"
            ))),
            None => Err(Error::UnknownEncoder(name.to_string())),
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(|s| s.as_str()).collect()
    }
}
