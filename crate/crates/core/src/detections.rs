//! Object-detection records for one clip, plus the per-frame class-index map
//! they compose into.
//!
//! Detections arrive from an external detector (or the synthetic generator)
//! already aligned with the sub-sampled frames that enter the pipeline. The
//! library never runs a detector; it only consumes these records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detector vocabulary size. The class-index conventions used throughout
/// (0 person, 4 TV, 15 keyboard, 45 handbag, 60 cell phone, 78 mouse,
/// 79 cup) assume this vocabulary.
pub const NUM_CLASSES: usize = 80;

/// Class indices the synthetic activities use. Kept here rather than in the
/// generator so featurization tests and activity scripts agree on one source.
pub mod classes {
    pub const PERSON: usize = 0;
    pub const TV: usize = 4;
    pub const KEYBOARD: usize = 15;
    pub const HANDBAG: usize = 45;
    pub const CELL_PHONE: usize = 60;
    pub const MOUSE: usize = 78;
    pub const CUP: usize = 79;
}

/// Pixel value marking "no detection" in a composed class-index map.
pub const BACKGROUND_INDEX: u8 = 255;

/// Run-length encoded instance mask covering a full frame.
///
/// `rle` alternates background/foreground run lengths in row-major pixel
/// order, always starting with a background run (possibly 0). Runs sum to
/// `width * height`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRegion {
    pub width: u32,
    pub height: u32,
    pub rle: Vec<u32>,
}

impl MaskRegion {
    /// Encode a row-major foreground bitmap.
    pub fn from_bitmap(width: u32, height: u32, fg: &[bool]) -> MaskRegion {
        assert_eq!(fg.len(), (width as usize) * (height as usize));
        let mut rle = Vec::new();
        let mut current = false; // encoding position starts in background
        let mut run: u32 = 0;
        for &px in fg {
            if px == current {
                run += 1;
            } else {
                rle.push(run);
                current = px;
                run = 1;
            }
        }
        rle.push(run);
        if fg.is_empty() {
            rle.clear();
        }
        MaskRegion { width, height, rle }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.width as u64 * self.height as u64;
        let sum: u64 = self.rle.iter().map(|&r| r as u64).sum();
        if sum != expected {
            return Err(Error::MaskRunLength {
                width: self.width,
                height: self.height,
                sum,
                expected,
            });
        }
        Ok(())
    }

    /// Decode to a row-major foreground bitmap.
    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.width as usize * self.height as usize);
        let mut fg = false;
        for &run in &self.rle {
            out.extend(std::iter::repeat(fg).take(run as usize));
            fg = !fg;
        }
        out
    }

    /// Visit row-major pixel indices inside the mask.
    pub fn for_each_foreground(&self, mut f: impl FnMut(usize)) {
        let mut pos = 0usize;
        let mut fg = false;
        for &run in &self.rle {
            if fg {
                for p in pos..pos + run as usize {
                    f(p);
                }
            }
            pos += run as usize;
            fg = !fg;
        }
    }

    /// Foreground pixel count.
    pub fn area(&self) -> u64 {
        let mut area = 0u64;
        let mut fg = false;
        for &run in &self.rle {
            if fg {
                area += run as u64;
            }
            fg = !fg;
        }
        area
    }
}

/// One detected object instance in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_index: usize,
    pub score: f64,
    /// Instance mask; needed only for masked-frame rendering, not counting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskRegion>,
}

impl Detection {
    pub fn new(class_index: usize, score: f64) -> Detection {
        Detection {
            class_index,
            score,
            mask: None,
        }
    }

    pub fn with_mask(class_index: usize, score: f64, mask: MaskRegion) -> Detection {
        Detection {
            class_index,
            score,
            mask: Some(mask),
        }
    }
}

/// All detections for one clip, aligned with its sub-sampled frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipDetections {
    pub clip_id: u64,
    pub num_frames: usize,
    pub frames: Vec<Vec<Detection>>,
}

impl ClipDetections {
    pub fn new(clip_id: u64, frames: Vec<Vec<Detection>>) -> Result<ClipDetections> {
        if frames.is_empty() {
            return Err(Error::EmptyClip { clip_id });
        }
        Ok(ClipDetections {
            clip_id,
            num_frames: frames.len(),
            frames,
        })
    }

    /// Check structural invariants: frame count, class range, mask run sums.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::EmptyClip {
                clip_id: self.clip_id,
            });
        }
        if self.frames.len() != self.num_frames {
            return Err(Error::Jsonl {
                path: String::new(),
                line: 0,
                reason: format!(
                    "clip {}: num_frames {} but {} frame lists",
                    self.clip_id,
                    self.num_frames,
                    self.frames.len()
                ),
            });
        }
        for dets in &self.frames {
            for det in dets {
                if det.class_index >= num_classes {
                    return Err(Error::InvalidClassIndex {
                        index: det.class_index,
                        num_classes,
                    });
                }
                if let Some(mask) = &det.mask {
                    mask.validate()?;
                }
            }
        }
        Ok(())
    }
}

/// Compose one frame's detections into a class-index map: each pixel holds
/// the class of the front-most instance covering it, or
/// [`BACKGROUND_INDEX`] where nothing was detected.
///
/// Front-most = higher score, ties broken by lower class index. Detections
/// below `score_threshold` are ignored. `frame` is only for error context.
pub fn compose_class_map(
    dets: &[Detection],
    width: u32,
    height: u32,
    score_threshold: f64,
    num_classes: usize,
    frame: usize,
) -> Result<Vec<u8>> {
    assert!(num_classes <= BACKGROUND_INDEX as usize);
    let mut map = vec![BACKGROUND_INDEX; width as usize * height as usize];

    // Paint in ascending priority so the highest-priority instance lands last.
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[a]
            .score
            .partial_cmp(&dets[b].score)
            .expect("detection scores are finite")
            .then(dets[b].class_index.cmp(&dets[a].class_index))
    });

    for idx in order {
        let det = &dets[idx];
        if det.class_index >= num_classes {
            return Err(Error::InvalidClassIndex {
                index: det.class_index,
                num_classes,
            });
        }
        if det.score < score_threshold {
            continue;
        }
        let mask = det.mask.as_ref().ok_or(Error::MaskMissing {
            clip_id: 0,
            frame,
            detection: idx,
        })?;
        if mask.width != width || mask.height != height {
            return Err(Error::FrameSizeMismatch {
                frame,
                got_w: mask.width,
                got_h: mask.height,
                want_w: width,
                want_h: height,
            });
        }
        mask.validate()?;
        let class = det.class_index as u8;
        mask.for_each_foreground(|p| map[p] = class);
    }
    Ok(map)
}
