//! Frame-wise attention: one sigmoid weight per frame, produced by the
//! gate's shared MLP from that frame's detection counts, multiplied into the
//! frame's pixels before encoding.
//!
//! No cross-frame normalization: weights are independent sigmoids, each
//! strictly in (0,1).

use crate::error::{Error, Result};
use crate::features::FrameTensor;
use crate::frames::FloatStack;
use crate::gate::{GateModule, MlpTape};

/// Per-frame attention weights for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionVector {
    pub weights: Vec<f64>,
}

impl AttentionVector {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Weight j = the shared MLP applied to frame j's count row.
pub fn attention_vector(ft: &FrameTensor, gate: &GateModule) -> Result<AttentionVector> {
    Ok(AttentionVector {
        weights: attention_tapes(ft, gate)?
            .iter()
            .map(|t| t.output)
            .collect(),
    })
}

/// Tape-returning variant for the backward pass: one MLP tape per frame.
pub fn attention_tapes(ft: &FrameTensor, gate: &GateModule) -> Result<Vec<MlpTape>> {
    let mut tapes = Vec::with_capacity(ft.num_frames());
    let mut row_buf = vec![0.0; ft.num_classes()];
    for j in 0..ft.num_frames() {
        for (b, &v) in row_buf.iter_mut().zip(ft.row(j).iter()) {
            *b = v;
        }
        tapes.push(gate.mlp_tape(&row_buf)?);
    }
    Ok(tapes)
}

/// Scale frame j by weights[j]. Linear in the stack and in each weight.
pub fn apply_attention(stack: &FloatStack, a: &AttentionVector) -> Result<FloatStack> {
    if stack.len() != a.weights.len() {
        return Err(Error::DimMismatch {
            got: a.weights.len(),
            want: stack.len(),
        });
    }
    Ok(stack
        .iter()
        .zip(&a.weights)
        .map(|(f, &w)| f * w)
        .collect())
}
