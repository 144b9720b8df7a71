//! The adaptive stream-selection block: a learnable decision embedding W and
//! a shared single-hidden-layer MLP, combined through a sigmoid/ReLU rule
//! into a hard raw-vs-masked choice.
//!
//! The same MLP serves two callers: the gate (input: the clip's class array)
//! and frame-wise attention (input: one frame-tensor row per frame). Both
//! paths therefore train the one set of MLP parameters.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ClassArray;
use crate::frames::{FloatStack, FrameStack};

/// Sigmoid clamped into the open interval (0,1).
///
/// Plain `1/(1+exp(-z))` rounds to exactly 1.0 for z above ~37, which would
/// break the strict-range contract on the gate's D1 and on attention
/// weights. Clamping to the nearest representable neighbours of 0 and 1
/// keeps the output strictly inside.
pub fn sigmoid(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamChoice {
    Raw,
    Masked,
}

/// Learnable gate parameters: decision embedding W plus the shared MLP
/// (hidden layer with ReLU, scalar output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateModule {
    pub w: Vec<f64>,
    pub hidden_w: Array2<f64>,
    pub hidden_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: f64,
}

impl GateModule {
    /// Neutral start: hidden weights N(0, sqrt(2/c)), everything else zero,
    /// so the first decision is d1 = 0.5, d2 = 0 and the raw stream wins.
    pub fn init(num_classes: usize, hidden: usize, seed: u64) -> GateModule {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = (2.0 / num_classes as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std is finite and positive");
        let hidden_w =
            Array2::from_shape_fn((hidden, num_classes), |_| normal.sample(&mut rng));
        GateModule {
            w: vec![0.0; num_classes],
            hidden_w,
            hidden_b: vec![0.0; hidden],
            out_w: vec![0.0; hidden],
            out_b: 0.0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.hidden_w.ncols()
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_w.nrows()
    }

    pub fn param_count(&self) -> usize {
        let (h, c) = (self.hidden_width(), self.num_classes());
        c + h * c + h + h + 1
    }

    /// Append parameters in the canonical flat order:
    /// [W, hidden weights row-major, hidden bias, output weights, output bias].
    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w);
        out.extend(self.hidden_w.iter());
        out.extend_from_slice(&self.hidden_b);
        out.extend_from_slice(&self.out_w);
        out.push(self.out_b);
    }

    /// Inverse of [`write_params`]; consumes exactly `param_count` values.
    pub fn read_params(&mut self, params: &[f64]) -> Result<usize> {
        let want = self.param_count();
        if params.len() < want {
            return Err(Error::ParamLength {
                got: params.len(),
                want,
            });
        }
        let (h, c) = (self.hidden_width(), self.num_classes());
        let mut pos = 0;
        self.w.copy_from_slice(&params[pos..pos + c]);
        pos += c;
        for (dst, &src) in self.hidden_w.iter_mut().zip(&params[pos..pos + h * c]) {
            *dst = src;
        }
        pos += h * c;
        self.hidden_b.copy_from_slice(&params[pos..pos + h]);
        pos += h;
        self.out_w.copy_from_slice(&params[pos..pos + h]);
        pos += h;
        self.out_b = params[pos];
        Ok(pos + 1)
    }

    fn check_input(&self, v: &[f64], what: &'static str) -> Result<()> {
        if v.len() != self.num_classes() {
            return Err(Error::DimMismatch {
                got: v.len(),
                want: self.num_classes(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(what));
        }
        Ok(())
    }

    /// The shared MLP: sigma(out_w . relu(hidden_w v + hidden_b) + out_b),
    /// strictly inside (0,1).
    pub fn mlp_forward(&self, v: &[f64]) -> Result<f64> {
        Ok(self.mlp_tape(v)?.output)
    }

    /// Forward pass that keeps the intermediates backprop needs.
    pub fn mlp_tape(&self, v: &[f64]) -> Result<MlpTape> {
        self.check_input(v, "mlp input")?;
        let h = self.hidden_width();
        let mut hidden_pre = vec![0.0; h];
        for (k, row) in self.hidden_w.rows().into_iter().enumerate() {
            let mut z = self.hidden_b[k];
            for (w, x) in row.iter().zip(v) {
                z += w * x;
            }
            hidden_pre[k] = z;
        }
        let hidden_act: Vec<f64> = hidden_pre
            .iter()
            .map(|&z| if z > 0.0 { z } else { 0.0 })
            .collect();
        let mut logit = self.out_b;
        for (w, a) in self.out_w.iter().zip(&hidden_act) {
            logit += w * a;
        }
        let output = sigmoid(logit);
        Ok(MlpTape {
            input: v.to_vec(),
            hidden_pre,
            hidden_act,
            output,
        })
    }

    /// Run the full decision rule on a clip's class array.
    pub fn decide(&self, c_arr: &ClassArray) -> Result<GateOutput> {
        Ok(self.decide_tape(c_arr)?.0)
    }

    pub fn decide_tape(&self, c_arr: &ClassArray) -> Result<(GateOutput, MlpTape)> {
        let v = c_arr.values();
        let tape = self.mlp_tape(v)?;
        let d1 = tape.output;
        let mut d2 = 0.0;
        for (w, x) in self.w.iter().zip(v) {
            d2 += w * x;
        }
        let d = d1 - d2;
        // ReLU of a non-positive float is exactly 0.0; the masked test below
        // is exact, no epsilon.
        let d_hat = if d > 0.0 { d } else { 0.0 };
        let choice = if d_hat == 0.0 {
            StreamChoice::Masked
        } else {
            StreamChoice::Raw
        };
        Ok((
            GateOutput {
                d1,
                d2,
                d,
                d_hat,
                choice,
            },
            tape,
        ))
    }
}

/// Intermediates of one MLP evaluation, consumed by [`MlpTape::backward`].
#[derive(Debug, Clone)]
pub struct MlpTape {
    pub input: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden_act: Vec<f64>,
    pub output: f64,
}

impl MlpTape {
    /// Accumulate parameter gradients for upstream derivative `d_out`
    /// (w.r.t. the sigmoid output). Input gradients are not needed anywhere
    /// (MLP inputs are detection counts, constants) and are not computed.
    pub fn backward(&self, gate: &GateModule, d_out: f64, grads: &mut GateGrads) {
        let d_logit = d_out * self.output * (1.0 - self.output);
        grads.out_b += d_logit;
        for (k, &a) in self.hidden_act.iter().enumerate() {
            grads.out_w[k] += d_logit * a;
            if self.hidden_pre[k] > 0.0 {
                let d_pre = d_logit * gate.out_w[k];
                grads.hidden_b[k] += d_pre;
                for (i, &x) in self.input.iter().enumerate() {
                    grads.hidden_w[[k, i]] += d_pre * x;
                }
            }
        }
    }
}

/// One decision's intermediate values. `d_hat` drives the hard selection;
/// the straight-through coupling reuses it for the gradient path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateOutput {
    pub d1: f64,
    pub d2: f64,
    pub d: f64,
    pub d_hat: f64,
    pub choice: StreamChoice,
}

/// Gradient accumulator shaped like [`GateModule`].
#[derive(Debug, Clone, PartialEq)]
pub struct GateGrads {
    pub w: Vec<f64>,
    pub hidden_w: Array2<f64>,
    pub hidden_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: f64,
}

impl GateGrads {
    pub fn zeros_like(gate: &GateModule) -> GateGrads {
        GateGrads {
            w: vec![0.0; gate.w.len()],
            hidden_w: Array2::zeros(gate.hidden_w.dim()),
            hidden_b: vec![0.0; gate.hidden_b.len()],
            out_w: vec![0.0; gate.out_w.len()],
            out_b: 0.0,
        }
    }

    /// Flat layout matching [`GateModule::write_params`].
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w);
        out.extend(self.hidden_w.iter());
        out.extend_from_slice(&self.hidden_b);
        out.extend_from_slice(&self.out_w);
        out.push(self.out_b);
    }
}

/// Pick the stack the decision selected. Stacks must agree in length and
/// size; the choice never mixes frames.
pub fn select_stream<'a>(
    out: &GateOutput,
    raw: &'a FrameStack,
    masked: &'a FrameStack,
) -> Result<&'a FrameStack> {
    if raw.len() != masked.len()
        || raw.width() != masked.width()
        || raw.height() != masked.height()
    {
        return Err(Error::DimMismatch {
            got: masked.len(),
            want: raw.len(),
        });
    }
    Ok(match out.choice {
        StreamChoice::Raw => raw,
        StreamChoice::Masked => masked,
    })
}

/// Scalar factor of the straight-through coupling.
///
/// In a live forward pass the detached copy equals the current value, so the
/// factor collapses to exactly 1.0 and the stack passes through bit-identical.
/// A finite-difference harness freezes the detached copy at the base point
/// (`frozen_ref`), which turns the coupling into the smooth surrogate
/// `1 + (d_hat - ref)` whose derivative in the model parameters is real.
pub fn coupling_scale(d_hat: f64, frozen_ref: Option<f64>) -> f64 {
    match frozen_ref {
        None => 1.0,
        Some(r) => 1.0 + (d_hat - r),
    }
}

/// Multiply every pixel of a float stack by the coupling factor.
pub fn apply_coupling(stack: &FloatStack, scale: f64) -> FloatStack {
    stack.iter().map(|f| f * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_gate() -> GateModule {
        // h=1: hidden row = e0, out weight 1, all biases 0
        let mut g = GateModule::init(4, 1, 0);
        g.hidden_w = Array2::from_shape_vec((1, 4), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        g.out_w = vec![1.0];
        g
    }

    #[test]
    fn zero_mlp_outputs_half() {
        let mut g = GateModule::init(80, 128, 3);
        g.hidden_w.fill(0.0);
        let v = vec![0.7; 80];
        assert_eq!(g.mlp_forward(&v).unwrap(), 0.5);
    }

    #[test]
    fn sigma_two_oracle() {
        let g = tiny_gate();
        let out = g.mlp_forward(&[2.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((out - 0.8807970779778823).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_stays_strictly_inside_unit_interval() {
        for z in [-1e6, -745.0, -37.0, 0.0, 37.0, 745.0, 1e6] {
            let s = sigmoid(z);
            assert!(s > 0.0 && s < 1.0, "sigmoid({z}) = {s}");
        }
    }

    #[test]
    fn zero_w_always_chooses_raw() {
        let g = GateModule::init(80, 16, 9);
        for k in 0..20 {
            let vals: Vec<f64> = (0..80).map(|i| ((i * k) % 5) as f64 / 4.0).collect();
            let c_arr = ClassArray::from_values(vals, 4);
            let out = g.decide(&c_arr).unwrap();
            assert_eq!(out.d2, 0.0);
            assert_eq!(out.choice, StreamChoice::Raw);
        }
    }

    #[test]
    fn large_w_forces_masked() {
        let mut g = GateModule::init(4, 2, 1);
        g.w[0] = 10.0;
        let c_arr = ClassArray::from_values(vec![1.0, 0.0, 0.0, 0.0], 1);
        let out = g.decide(&c_arr).unwrap();
        assert_eq!(out.d2, 10.0);
        assert_eq!(out.d_hat, 0.0);
        assert_eq!(out.choice, StreamChoice::Masked);
    }

    #[test]
    fn empty_scene_chooses_raw_regardless_of_w() {
        let mut g = GateModule::init(4, 2, 1);
        g.w = vec![1e9, -1e9, 42.0, -42.0];
        let c_arr = ClassArray::from_values(vec![0.0; 4], 8);
        let out = g.decide(&c_arr).unwrap();
        assert_eq!(out.choice, StreamChoice::Raw);
    }

    #[test]
    fn dim_mismatch_and_nonfinite_rejected() {
        let g = GateModule::init(4, 2, 1);
        assert!(matches!(
            g.mlp_forward(&[0.0; 3]),
            Err(Error::DimMismatch { got: 3, want: 4 })
        ));
        assert!(matches!(
            g.mlp_forward(&[0.0, f64::NAN, 0.0, 0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn coupling_is_value_identity_without_frozen_ref() {
        assert_eq!(coupling_scale(0.37, None), 1.0);
        let stack: FloatStack = vec![ndarray::Array3::from_shape_fn(
            (3, 2, 2),
            |(c, y, x)| (c + 2 * y + x) as f64 * 0.1737,
        )];
        let out = apply_coupling(&stack, 1.0);
        for (a, b) in stack[0].iter().zip(out[0].iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn frozen_coupling_moves_with_d_hat() {
        let s = coupling_scale(0.6, Some(0.5));
        assert!((s - 1.1).abs() < 1e-15);
    }

    #[test]
    fn param_round_trip() {
        let g = GateModule::init(7, 5, 42);
        let mut flat = Vec::new();
        g.write_params(&mut flat);
        assert_eq!(flat.len(), g.param_count());
        let mut g2 = GateModule::init(7, 5, 1);
        let used = g2.read_params(&flat).unwrap();
        assert_eq!(used, flat.len());
        assert_eq!(g, g2);
    }

    proptest! {
        #[test]
        fn decision_invariants_hold(seed in 0u64..1000, scale in 0.0f64..3.0) {
            let mut g = GateModule::init(16, 8, seed);
            // give W and the output layer non-trivial values
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b9);
            let normal = Normal::new(0.0, scale + 0.1).unwrap();
            for w in g.w.iter_mut().chain(g.out_w.iter_mut()) {
                *w = normal.sample(&mut rng);
            }
            let vals: Vec<f64> = (0..16).map(|_| {
                let n: f64 = normal.sample(&mut rng);
                n.abs().min(5.0)
            }).collect();
            let c_arr = ClassArray::from_values(vals, 4);
            let out = g.decide(&c_arr).unwrap();
            prop_assert!(out.d1 > 0.0 && out.d1 < 1.0);
            prop_assert!(out.d_hat >= 0.0);
            prop_assert_eq!(out.d_hat, (out.d1 - out.d2).max(0.0));
            prop_assert_eq!(out.choice == StreamChoice::Masked, out.d_hat == 0.0);
        }

        #[test]
        fn masked_choice_is_stable_under_w_scaling(seed in 0u64..500) {
            let mut g = GateModule::init(8, 4, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.5, 1.0).unwrap();
            for w in g.w.iter_mut() {
                *w = normal.sample(&mut rng);
            }
            let vals: Vec<f64> = (0..8).map(|_| {
                let n: f64 = normal.sample(&mut rng);
                n.abs().min(4.0)
            }).collect();
            let c_arr = ClassArray::from_values(vals, 2);
            let out = g.decide(&c_arr).unwrap();
            if out.choice == StreamChoice::Masked {
                for k in [1.0, 1.5, 4.0, 100.0] {
                    let mut scaled = g.clone();
                    for w in scaled.w.iter_mut() {
                        *w *= k;
                    }
                    let out_k = scaled.decide(&c_arr).unwrap();
                    prop_assert_eq!(out_k.choice, StreamChoice::Masked);
                }
            }
        }
    }
}
