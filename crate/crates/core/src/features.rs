//! Detection-count featurization: the per-clip class array and the per-frame
//! count tensor.
//!
//! The class array holds each class's total instance count over the clip's
//! n frames, divided by n. The frame tensor keeps the same counts per frame,
//! unnormalized. Counting is per detection record: two overlapping detections
//! of the same class count twice.

use ndarray::{Array2, ArrayView1};

use crate::detections::ClipDetections;
use crate::error::{Error, Result};

/// Per-clip normalized class counts (the 1×c summary the gate consumes).
///
/// Integer totals are kept alongside the normalized values so downstream
/// consistency checks (`n · values == frame-tensor column sums`) can run in
/// integer arithmetic; the division happens once, here.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassArray {
    counts: Vec<u64>,
    num_frames: usize,
    values: Vec<f64>,
}

impl ClassArray {
    /// Normalized counts: entry i = total instances of class i / n.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Integer instance total for class i over all frames.
    pub fn count(&self, class: usize) -> u64 {
        self.counts[class]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    /// Vocabulary size c.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Build directly from values already divided by n. Used by property
    /// tests that sample gate inputs without constructing detections.
    pub fn from_values(values: Vec<f64>, num_frames: usize) -> ClassArray {
        let counts = values
            .iter()
            .map(|&v| (v * num_frames as f64).round() as u64)
            .collect();
        ClassArray {
            counts,
            num_frames,
            values,
        }
    }
}

/// Per-frame instance counts, one row per frame, unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    rows: Array2<f64>,
}

impl FrameTensor {
    pub fn num_frames(&self) -> usize {
        self.rows.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, frame: usize) -> ArrayView1<'_, f64> {
        self.rows.row(frame)
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    /// Column totals as exact integers (every entry is a small count).
    pub fn column_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.num_classes()];
        for row in self.rows.rows() {
            for (t, &v) in totals.iter_mut().zip(row.iter()) {
                *t += v as u64;
            }
        }
        totals
    }
}

fn count_frame(
    dets: &[crate::detections::Detection],
    score_threshold: f64,
    num_classes: usize,
    out: &mut [u64],
) -> Result<()> {
    for det in dets {
        if det.class_index >= num_classes {
            return Err(Error::InvalidClassIndex {
                index: det.class_index,
                num_classes,
            });
        }
        if det.score >= score_threshold {
            out[det.class_index] += 1;
        }
    }
    Ok(())
}

/// Count instances per class over all frames and divide by n.
pub fn build_class_array(
    dets: &ClipDetections,
    score_threshold: f64,
    num_classes: usize,
) -> Result<ClassArray> {
    if dets.frames.is_empty() {
        return Err(Error::EmptyClip {
            clip_id: dets.clip_id,
        });
    }
    let n = dets.frames.len();
    let mut counts = vec![0u64; num_classes];
    for frame in &dets.frames {
        count_frame(frame, score_threshold, num_classes, &mut counts)?;
    }
    let values = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(ClassArray {
        counts,
        num_frames: n,
        values,
    })
}

/// Count instances per class, one row per frame, no normalization.
pub fn build_frame_tensor(
    dets: &ClipDetections,
    score_threshold: f64,
    num_classes: usize,
) -> Result<FrameTensor> {
    if dets.frames.is_empty() {
        return Err(Error::EmptyClip {
            clip_id: dets.clip_id,
        });
    }
    let n = dets.frames.len();
    let mut rows = Array2::zeros((n, num_classes));
    let mut buf = vec![0u64; num_classes];
    for (j, frame) in dets.frames.iter().enumerate() {
        buf.iter_mut().for_each(|b| *b = 0);
        count_frame(frame, score_threshold, num_classes, &mut buf)?;
        for (i, &c) in buf.iter().enumerate() {
            rows[[j, i]] = c as f64;
        }
    }
    Ok(FrameTensor { rows })
}
