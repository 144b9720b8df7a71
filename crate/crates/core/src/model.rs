//! The end-to-end per-clip pipeline: featurize, gate-select, couple, attend,
//! encode, classify — with a hand-written backward pass over the whole chain.
//!
//! Ablation variants switch pipeline stages on and off:
//!
//! | variant | stacks        | gate | attention |
//! |---------|---------------|------|-----------|
//! | rd      | raw only      | no   | no        |
//! | md      | masked only   | no   | no        |
//! | de      | raw + masked  | yes  | no        |
//! | full    | raw + masked  | yes  | yes       |
//!
//! The gate's hard selection is non-differentiable, so its gradient path is
//! a straight-through coupling: the selected stack is multiplied by
//! `s = 1 + (d_hat - detached(d_hat))`, which is exactly 1 in live forward
//! passes but carries `d(s)/d(params) = d(d_hat)/d(params)` into backprop.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attention::{apply_attention, attention_tapes, AttentionVector};
use crate::detections::ClipDetections;
use crate::encoder::{cross_entropy, ClassifierHead, Tape, VideoEncoder};
use crate::error::{Error, Result};
use crate::features::{build_class_array, build_frame_tensor, ClassArray, FrameTensor};
use crate::frames::{
    render_masked_stack, resize_stack, subsample_indices, FloatStack, Frame, FrameKind,
    FrameStack, Palette,
};
use crate::gate::{coupling_scale, GateGrads, GateModule, GateOutput, MlpTape, StreamChoice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Rd,
    Md,
    De,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Rd, Variant::Md, Variant::De, Variant::Full];

    /// Row label in the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Rd => "RD",
            Variant::Md => "MD",
            Variant::De => "RD+MD+DE",
            Variant::Full => "RD+MD+DE+FA",
        }
    }

    /// Short name used on the command line and in file names.
    pub fn key(self) -> &'static str {
        match self {
            Variant::Rd => "rd",
            Variant::Md => "md",
            Variant::De => "de",
            Variant::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "rd" => Ok(Variant::Rd),
            "md" => Ok(Variant::Md),
            "de" => Ok(Variant::De),
            "full" => Ok(Variant::Full),
            other => Err(Error::Config {
                key: "variant".to_string(),
                reason: format!("'{other}' is not one of rd|md|de|full"),
            }),
        }
    }

    pub fn uses_masked(self) -> bool {
        !matches!(self, Variant::Rd)
    }

    pub fn uses_gate(self) -> bool {
        matches!(self, Variant::De | Variant::Full)
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, Variant::Full)
    }
}

/// Which pipeline stages actually executed for one clip. Lets tests assert,
/// for example, that the rd variant never rendered a masked stack.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineTrace {
    pub rendered_masked: bool,
    pub gate_invoked: bool,
    pub attention_applied: bool,
    pub choice: Option<StreamChoice>,
}

/// One clip, preprocessed to the model boundary.
pub struct ClipInput {
    pub clip_id: u64,
    pub label: usize,
    pub raw: FrameStack,
    pub masked: Option<FrameStack>,
    pub class_array: Option<ClassArray>,
    pub frame_tensor: Option<FrameTensor>,
    pub trace: PipelineTrace,
}

/// Sub-sample, align detections, render the masked stack (when the variant
/// needs it) at native resolution, then resize both stacks and featurize.
#[allow(clippy::too_many_arguments)]
pub fn prepare_clip(
    clip_id: u64,
    label: usize,
    video: &[Frame],
    dets: &ClipDetections,
    variant: Variant,
    pp: &PreprocessConfig,
    palette: &Palette,
) -> Result<ClipInput> {
    let idx = subsample_indices(video.len(), pp.frames_per_clip, pp.sampling_rate)?;
    if dets.frames.len() != video.len() {
        return Err(Error::DimMismatch {
            got: dets.frames.len(),
            want: video.len(),
        });
    }
    let raw_native = FrameStack::new(
        FrameKind::Raw,
        idx.iter().map(|&i| video[i].clone()).collect(),
    )?;
    let sub_dets = ClipDetections::new(
        clip_id,
        idx.iter().map(|&i| dets.frames[i].clone()).collect(),
    )?;

    let mut trace = PipelineTrace::default();
    // Masking happens at the native resolution where the instance masks are
    // pixel-accurate; both stacks are resized afterwards.
    let masked = if variant.uses_masked() {
        trace.rendered_masked = true;
        let m = render_masked_stack(&raw_native, &sub_dets, palette, pp.score_threshold)?;
        Some(resize_stack(&m, pp.resize_h, pp.resize_w))
    } else {
        None
    };
    let raw = resize_stack(&raw_native, pp.resize_h, pp.resize_w);

    let class_array = if variant.uses_gate() {
        Some(build_class_array(
            &sub_dets,
            pp.score_threshold,
            pp.num_classes,
        )?)
    } else {
        None
    };
    let frame_tensor = if variant.uses_attention() {
        Some(build_frame_tensor(
            &sub_dets,
            pp.score_threshold,
            pp.num_classes,
        )?)
    } else {
        None
    };

    Ok(ClipInput {
        clip_id,
        label,
        raw,
        masked,
        class_array,
        frame_tensor,
        trace,
    })
}

/// Preprocessing knobs shared by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub frames_per_clip: usize,
    pub sampling_rate: usize,
    pub resize_h: u32,
    pub resize_w: u32,
    pub score_threshold: f64,
    pub num_classes: usize,
}

/// Forward-pass switches used only by gradient-verification harnesses.
///
/// A live forward pass multiplies the selected stack by exactly 1.0, so the
/// true loss is locally constant in W: finite differences on it would
/// measure nothing. Freezing the coupling's detached copy at the base-point
/// value (`frozen_coupling_ref`) turns the coupling into the smooth
/// surrogate the analytic backward differentiates, and `force_choice` keeps
/// the hard branch fixed while parameters are wiggled.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOpts {
    pub frozen_coupling_ref: Option<f64>,
    pub force_choice: Option<StreamChoice>,
}

/// Gate + encoder + head, with the variant wiring.
pub struct Model {
    pub gate: GateModule,
    pub encoder: Box<dyn VideoEncoder>,
    pub head: ClassifierHead,
    pub variant: Variant,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCtx {
    pub loss: f64,
    pub logits: Vec<f64>,
    pub prediction: usize,
    pub gate_out: Option<GateOutput>,
    pub attention: Option<AttentionVector>,
    pub trace: PipelineTrace,
    // tape internals
    selected: FloatStack,
    coupled: FloatStack,
    attended: FloatStack,
    gate_tape: Option<MlpTape>,
    att_tapes: Option<Vec<MlpTape>>,
    enc_tape: Tape,
    feature: Vec<f64>,
    d_logits: Vec<f64>,
    c_values: Option<Vec<f64>>,
}

/// Gradients for every trainable parameter group, accumulated across clips.
pub struct ModelGrads {
    pub gate: GateGrads,
    pub encoder: Vec<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros_like(model: &Model) -> ModelGrads {
        ModelGrads {
            gate: GateGrads::zeros_like(&model.gate),
            encoder: vec![0.0; model.encoder.param_count()],
            head_w: Array2::zeros(model.head.weights.dim()),
            head_b: vec![0.0; model.head.bias.len()],
        }
    }

    /// Flat layout matching [`Model::params_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.gate.write_flat(&mut out);
        out.extend_from_slice(&self.encoder);
        out.extend(self.head_w.iter());
        out.extend_from_slice(&self.head_b);
        out
    }
}

impl Model {
    pub fn new(
        gate: GateModule,
        encoder: Box<dyn VideoEncoder>,
        head: ClassifierHead,
        variant: Variant,
    ) -> Result<Model> {
        if encoder.feature_dim() != head.feature_dim() {
            return Err(Error::DimMismatch {
                got: head.feature_dim(),
                want: encoder.feature_dim(),
            });
        }
        Ok(Model {
            gate,
            encoder,
            head,
            variant,
        })
    }

    pub fn param_count(&self) -> usize {
        self.gate.param_count() + self.encoder.param_count() + self.head.param_count()
    }

    /// Canonical flat parameter order: gate, encoder, head.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.gate.write_params(&mut out);
        self.encoder.write_params(&mut out);
        self.head.write_params(&mut out);
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ParamLength {
                got: params.len(),
                want: self.param_count(),
            });
        }
        let mut pos = self.gate.read_params(params)?;
        pos += self.encoder.read_params(&params[pos..])?;
        self.head.read_params(&params[pos..])?;
        Ok(())
    }

    pub fn forward(&self, input: &ClipInput, opts: &ForwardOpts) -> Result<ForwardCtx> {
        let mut trace = input.trace;
        let mut gate_out = None;
        let mut gate_tape = None;
        let mut c_values = None;

        let selected_stack: &FrameStack = if self.variant.uses_gate() {
            let c_arr = input
                .class_array
                .as_ref()
                .expect("gate variants preprocess the class array");
            let (out, tape) = self.gate.decide_tape(c_arr)?;
            trace.gate_invoked = true;
            trace.choice = Some(out.choice);
            gate_out = Some(out);
            gate_tape = Some(tape);
            c_values = Some(c_arr.values().to_vec());
            let masked = input
                .masked
                .as_ref()
                .expect("gate variants preprocess the masked stack");
            let effective = opts.force_choice.unwrap_or(out.choice);
            match effective {
                StreamChoice::Raw => &input.raw,
                StreamChoice::Masked => masked,
            }
        } else {
            match self.variant {
                Variant::Rd => &input.raw,
                Variant::Md => {
                    let m = input
                        .masked
                        .as_ref()
                        .expect("md preprocesses the masked stack");
                    trace.choice = Some(StreamChoice::Masked);
                    m
                }
                _ => unreachable!("gate variants handled above"),
            }
        };
        if self.variant == Variant::Rd {
            trace.choice = Some(StreamChoice::Raw);
        }

        let selected = selected_stack.to_float();

        // Straight-through coupling: identity in live passes, smooth
        // surrogate when a harness froze the reference.
        let coupled = if let Some(out) = &gate_out {
            let s = coupling_scale(out.d_hat, opts.frozen_coupling_ref);
            if s == 1.0 {
                selected.clone()
            } else {
                crate::gate::apply_coupling(&selected, s)
            }
        } else {
            selected.clone()
        };

        let (attention, att_tapes, attended) = if self.variant.uses_attention() {
            let ft = input
                .frame_tensor
                .as_ref()
                .expect("full variant preprocesses the frame tensor");
            let tapes = attention_tapes(ft, &self.gate)?;
            let a = AttentionVector {
                weights: tapes.iter().map(|t| t.output).collect(),
            };
            trace.attention_applied = true;
            let attended = apply_attention(&coupled, &a)?;
            (Some(a), Some(tapes), attended)
        } else {
            (None, None, coupled.clone())
        };

        let (feature, enc_tape) = self.encoder.forward_tape(&attended)?;
        let logits = self.head.forward(&feature)?;
        let (loss, d_logits) = cross_entropy(&logits, input.label)?;
        let prediction = argmax(&logits);

        Ok(ForwardCtx {
            loss,
            logits,
            prediction,
            gate_out,
            attention,
            trace,
            selected,
            coupled,
            attended,
            gate_tape,
            att_tapes,
            enc_tape,
            feature,
            d_logits,
            c_values,
        })
    }

    /// Evaluation-mode forward: loss, prediction and trace only.
    pub fn evaluate(&self, input: &ClipInput) -> Result<ForwardCtx> {
        self.forward(input, &ForwardOpts::default())
    }

    /// Accumulate gradients of `ctx.loss` into `grads`.
    pub fn backward(&self, ctx: &ForwardCtx, grads: &mut ModelGrads) -> Result<()> {
        // head
        let d_feature = self.head.backward(
            &ctx.feature,
            &ctx.d_logits,
            &mut grads.head_w,
            &mut grads.head_b,
        );
        // encoder (also yields pixel gradients for the attention weights)
        let d_attended =
            self.encoder
                .backward(&ctx.attended, &ctx.enc_tape, &d_feature, &mut grads.encoder)?;

        // attention: dL/da_j is the inner product of the frame's pixel
        // gradient with the frame that was scaled (the coupled stack)
        let d_coupled: FloatStack = if let (Some(a), Some(tapes)) =
            (&ctx.attention, &ctx.att_tapes)
        {
            for (j, tape) in tapes.iter().enumerate() {
                let d_weight: f64 = d_attended[j]
                    .iter()
                    .zip(ctx.coupled[j].iter())
                    .map(|(g, x)| g * x)
                    .sum();
                tape.backward(&self.gate, d_weight, &mut grads.gate);
            }
            d_attended
                .iter()
                .zip(&a.weights)
                .map(|(g, &w)| g * w)
                .collect()
        } else {
            d_attended
        };

        // coupling: dL/ds summed over all pixels, then through the ReLU of
        // the decision (flat side contributes nothing, matching the choice
        // of giving the masked branch no gate gradient)
        if let (Some(out), Some(tape), Some(c_values)) =
            (&ctx.gate_out, &ctx.gate_tape, &ctx.c_values)
        {
            let d_s: f64 = d_coupled
                .iter()
                .zip(&ctx.selected)
                .map(|(g, x)| g.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            let d_d = if out.d > 0.0 { d_s } else { 0.0 };
            if d_d != 0.0 {
                // d = d1 - d2; d2 = c . W
                for (gw, &cv) in grads.gate.w.iter_mut().zip(c_values) {
                    *gw += d_d * (-cv);
                }
                tape.backward(&self.gate, d_d, &mut grads.gate);
            }
        }
        Ok(())
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::{Detection, MaskRegion};
    use crate::encoder::{ToyEncoder, ToyEncoderConfig};
    use crate::frames::default_palette;

    fn tiny_pp() -> PreprocessConfig {
        PreprocessConfig {
            frames_per_clip: 4,
            sampling_rate: 1,
            resize_h: 8,
            resize_w: 8,
            score_threshold: 0.25,
            num_classes: 6,
        }
    }

    fn tiny_model(variant: Variant) -> Model {
        let gate = GateModule::init(6, 4, 3);
        let enc = ToyEncoder::new(
            ToyEncoderConfig {
                conv1_channels: 2,
                conv2_channels: 3,
                feature_dim: 5,
            },
            4,
        );
        let head = ClassifierHead::new(5, 3, 5);
        Model::new(gate, Box::new(enc), head, variant).unwrap()
    }

    fn toy_video() -> (Vec<Frame>, ClipDetections) {
        let mut video = Vec::new();
        let mut det_frames = Vec::new();
        for t in 0..6u32 {
            let mut f = Frame::filled(8, 8, [40, 80, 120]);
            let x = t % 6;
            f.set(x, 3, [250, 10, 10]);
            video.push(f);
            let mut fg = vec![false; 64];
            fg[(3 * 8 + x) as usize] = true;
            det_frames.push(vec![Detection::with_mask(
                2,
                1.0,
                MaskRegion::from_bitmap(8, 8, &fg),
            )]);
        }
        (video, ClipDetections::new(0, det_frames).unwrap())
    }

    fn prepared(variant: Variant) -> ClipInput {
        let (video, dets) = toy_video();
        let palette = default_palette(6, 0);
        prepare_clip(0, 1, &video, &dets, variant, &tiny_pp(), &palette).unwrap()
    }

    #[test]
    fn rd_never_renders_masks_or_gates() {
        let model = tiny_model(Variant::Rd);
        let input = prepared(Variant::Rd);
        assert!(input.masked.is_none());
        let ctx = model.evaluate(&input).unwrap();
        assert!(!ctx.trace.rendered_masked);
        assert!(!ctx.trace.gate_invoked);
        assert!(!ctx.trace.attention_applied);
        assert_eq!(ctx.trace.choice, Some(StreamChoice::Raw));
    }

    #[test]
    fn md_masks_but_never_gates() {
        let model = tiny_model(Variant::Md);
        let input = prepared(Variant::Md);
        let ctx = model.evaluate(&input).unwrap();
        assert!(ctx.trace.rendered_masked);
        assert!(!ctx.trace.gate_invoked);
        assert_eq!(ctx.trace.choice, Some(StreamChoice::Masked));
    }

    #[test]
    fn de_gates_without_attention() {
        let model = tiny_model(Variant::De);
        let input = prepared(Variant::De);
        let ctx = model.evaluate(&input).unwrap();
        assert!(ctx.trace.gate_invoked);
        assert!(!ctx.trace.attention_applied);
        assert!(ctx.gate_out.is_some());
        assert!(ctx.attention.is_none());
    }

    #[test]
    fn full_applies_everything() {
        let model = tiny_model(Variant::Full);
        let input = prepared(Variant::Full);
        let ctx = model.evaluate(&input).unwrap();
        assert!(ctx.trace.rendered_masked);
        assert!(ctx.trace.gate_invoked);
        assert!(ctx.trace.attention_applied);
        assert_eq!(ctx.attention.as_ref().unwrap().len(), 4);
    }

    #[test]
    fn forward_is_deterministic() {
        let model = tiny_model(Variant::Full);
        let input = prepared(Variant::Full);
        let a = model.evaluate(&input).unwrap();
        let b = model.evaluate(&input).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn coupling_leaves_forward_values_bit_identical() {
        // Same pipeline with the gate hard-wired off vs on (W=0 keeps the
        // raw choice): losses must agree bit-for-bit because the coupling
        // factor is exactly 1.
        let rd_model = tiny_model(Variant::Rd);
        let de_model = tiny_model(Variant::De); // same seeds, W = 0 -> raw
        let rd_ctx = rd_model.evaluate(&prepared(Variant::Rd)).unwrap();
        let de_ctx = de_model.evaluate(&prepared(Variant::De)).unwrap();
        assert_eq!(de_ctx.trace.choice, Some(StreamChoice::Raw));
        assert_eq!(rd_ctx.loss.to_bits(), de_ctx.loss.to_bits());
    }

    #[test]
    fn param_flat_round_trip() {
        let mut model = tiny_model(Variant::Full);
        let flat = model.params_flat();
        assert_eq!(flat.len(), model.param_count());
        let mut mutated = flat.clone();
        mutated[0] += 1.5;
        mutated[flat.len() - 1] -= 2.5;
        model.set_params_flat(&mutated).unwrap();
        assert_eq!(model.params_flat(), mutated);
        assert!(model.set_params_flat(&flat[1..]).is_err());
    }

    #[test]
    fn variant_parsing_round_trips() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.key()).unwrap(), v);
        }
        assert!(Variant::parse("raw").is_err());
    }
}
