//! Frame-stack plumbing: sub-sampling, bilinear resize, masked-stack
//! rendering, and the per-class color palette.
//!
//! Stacks store u8 RGB; conversion to the [0,1] reals the encoder consumes
//! happens at the model boundary via [`Frame::to_chw_f64`].

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detections::{compose_class_map, ClipDetections, BACKGROUND_INDEX};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Raw,
    Masked,
}

/// One RGB frame, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Frame {
        assert_eq!(data.len(), width as usize * height as usize * 3);
        Frame {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Frame {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&rgb);
        }
        Frame {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel-first float planes scaled to [0,1], the encoder input layout.
    pub fn to_chw_f64(&self) -> Array3<f64> {
        let (h, w) = (self.height as usize, self.width as usize);
        let mut out = Array3::zeros((3, h, w));
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) * 3;
                for ch in 0..3 {
                    out[[ch, y, x]] = self.data[i + ch] as f64 / 255.0;
                }
            }
        }
        out
    }
}

/// Model-input representation: one channel-first [0,1] tensor per frame.
pub type FloatStack = Vec<Array3<f64>>;

/// Ordered frames of uniform size, tagged raw or masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameStack {
    pub kind: FrameKind,
    frames: Vec<Frame>,
}

impl FrameStack {
    pub fn new(kind: FrameKind, frames: Vec<Frame>) -> Result<FrameStack> {
        if frames.is_empty() {
            return Err(Error::EmptyVideo);
        }
        let (w, h) = (frames[0].width, frames[0].height);
        for (i, f) in frames.iter().enumerate() {
            if f.width != w || f.height != h {
                return Err(Error::FrameSizeMismatch {
                    frame: i,
                    got_w: f.width,
                    got_h: f.height,
                    want_w: w,
                    want_h: h,
                });
            }
        }
        Ok(FrameStack { kind, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn width(&self) -> u32 {
        self.frames[0].width
    }

    pub fn height(&self) -> u32 {
        self.frames[0].height
    }

    pub fn to_float(&self) -> FloatStack {
        self.frames.iter().map(Frame::to_chw_f64).collect()
    }
}

/// Frame indices selected by the fixed-rate sampler: i·rate, wrapping
/// modulo the video length when the video is too short (loop-pad).
pub fn subsample_indices(video_len: usize, n: usize, rate: usize) -> Result<Vec<usize>> {
    if video_len == 0 {
        return Err(Error::EmptyVideo);
    }
    Ok((0..n).map(|i| (i * rate) % video_len).collect())
}

pub fn subsample_frames(video: &[Frame], n: usize, rate: usize) -> Result<FrameStack> {
    let idx = subsample_indices(video.len(), n, rate)?;
    FrameStack::new(FrameKind::Raw, idx.into_iter().map(|i| video[i].clone()).collect())
}

fn resize_frame(src: &Frame, h: u32, w: u32) -> Frame {
    if src.width == w && src.height == h {
        return src.clone();
    }
    let sx = src.width as f64 / w as f64;
    let sy = src.height as f64 / h as f64;
    let mut out = vec![0u8; w as usize * h as usize * 3];
    for oy in 0..h {
        // Pixel centers at +0.5 keep the mapping symmetric at both borders.
        let fy = ((oy as f64 + 0.5) * sy - 0.5).max(0.0);
        let y0 = (fy.floor() as u32).min(src.height - 1);
        let y1 = (y0 + 1).min(src.height - 1);
        let wy = fy - y0 as f64;
        for ox in 0..w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).max(0.0);
            let x0 = (fx.floor() as u32).min(src.width - 1);
            let x1 = (x0 + 1).min(src.width - 1);
            let wx = fx - x0 as f64;
            let (p00, p10) = (src.get(x0, y0), src.get(x1, y0));
            let (p01, p11) = (src.get(x0, y1), src.get(x1, y1));
            let o = (oy as usize * w as usize + ox as usize) * 3;
            for ch in 0..3 {
                let top = p00[ch] as f64 * (1.0 - wx) + p10[ch] as f64 * wx;
                let bot = p01[ch] as f64 * (1.0 - wx) + p11[ch] as f64 * wx;
                let v = top * (1.0 - wy) + bot * wy;
                out[o + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Frame::new(w, h, out)
}

/// Bilinear resize of every frame; kind is preserved. Resizing to the
/// current size is an exact copy.
pub fn resize_stack(stack: &FrameStack, h: u32, w: u32) -> FrameStack {
    FrameStack {
        kind: stack.kind,
        frames: stack.frames.iter().map(|f| resize_frame(f, h, w)).collect(),
    }
}

/// Per-class RGB colors for masked rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    pub colors: Vec<[u8; 3]>,
}

fn hsv_to_rgb(h_deg: f64) -> [u8; 3] {
    // Full saturation and value; only the hue varies.
    let h = h_deg / 60.0;
    let x = 255.0 * (1.0 - (h % 2.0 - 1.0).abs());
    let x = x.round() as u8;
    match h as u32 {
        0 => [255, x, 0],
        1 => [x, 255, 0],
        2 => [0, 255, x],
        3 => [0, x, 255],
        4 => [x, 0, 255],
        _ => [255, 0, x],
    }
}

/// `c` maximally-spread hues at full saturation/value, order shuffled by
/// `seed`. Deterministic; all triples distinct.
pub fn default_palette(c: usize, seed: u64) -> Palette {
    assert!(c >= 1);
    let mut colors: Vec<[u8; 3]> = (0..c)
        .map(|i| hsv_to_rgb(i as f64 * 360.0 / c as f64))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    colors.shuffle(&mut rng);
    Palette { colors }
}

/// Blend rule for detected pixels: elementwise floor of the average of the
/// original color and the class color.
#[inline]
pub fn blend_pixel(orig: [u8; 3], coded: [u8; 3]) -> [u8; 3] {
    [
        ((orig[0] as u16 + coded[0] as u16) / 2) as u8,
        ((orig[1] as u16 + coded[1] as u16) / 2) as u8,
        ((orig[2] as u16 + coded[2] as u16) / 2) as u8,
    ]
}

/// Render the masked stack: detected-object pixels become a 50/50 blend of
/// the original color and the class's palette color, everything else black.
/// Overlaps resolve to the detection with the higher score, ties to the
/// lower class index.
pub fn render_masked_stack(
    raw: &FrameStack,
    dets: &ClipDetections,
    palette: &Palette,
    score_threshold: f64,
) -> Result<FrameStack> {
    assert_eq!(raw.kind, FrameKind::Raw, "masked stacks render from raw frames");
    if dets.frames.len() != raw.len() {
        return Err(Error::FrameSizeMismatch {
            frame: dets.frames.len().min(raw.len()),
            got_w: dets.frames.len() as u32,
            got_h: 0,
            want_w: raw.len() as u32,
            want_h: 0,
        });
    }
    let num_classes = palette.colors.len();
    let (w, h) = (raw.width(), raw.height());
    let masked = crate::par::map_indices(raw.len(), |j| -> Result<Frame> {
        let map = compose_class_map(&dets.frames[j], w, h, score_threshold, num_classes, j)
            .map_err(|e| match e {
                Error::MaskMissing {
                    frame, detection, ..
                } => Error::MaskMissing {
                    clip_id: dets.clip_id,
                    frame,
                    detection,
                },
                other => other,
            })?;
        let src = raw.frame(j);
        let mut data = vec![0u8; w as usize * h as usize * 3];
        for (p, &class) in map.iter().enumerate() {
            if class == BACKGROUND_INDEX {
                continue;
            }
            let o = p * 3;
            let orig = [src.data[o], src.data[o + 1], src.data[o + 2]];
            let px = blend_pixel(orig, palette.colors[class as usize]);
            data[o..o + 3].copy_from_slice(&px);
        }
        Ok(Frame::new(w, h, data))
    });
    let mut frames = Vec::with_capacity(masked.len());
    for f in masked {
        frames.push(f?);
    }
    Ok(FrameStack {
        kind: FrameKind::Masked,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::{Detection, MaskRegion};

    #[test]
    fn sampler_steps_by_rate() {
        let idx = subsample_indices(300, 32, 3).unwrap();
        assert_eq!(idx[0], 0);
        assert_eq!(idx[1], 3);
        assert_eq!(idx[31], 93);
    }

    #[test]
    fn sampler_fits_exactly_without_wrap() {
        let idx = subsample_indices(96, 32, 3).unwrap();
        assert_eq!(idx, (0..32).map(|i| i * 3).collect::<Vec<_>>());
    }

    #[test]
    fn sampler_wraps_short_videos() {
        let idx = subsample_indices(50, 32, 3).unwrap();
        assert_eq!(&idx[..5], &[0, 3, 6, 9, 12]);
        assert_eq!(idx[16], 48);
        assert_eq!(idx[17], 1); // 51 mod 50
        assert_eq!(idx[31], 43); // 93 mod 50
    }

    #[test]
    fn sampler_rejects_empty_video() {
        assert!(matches!(subsample_indices(0, 4, 3), Err(Error::EmptyVideo)));
    }

    #[test]
    fn identity_resize_is_exact() {
        let mut f = Frame::filled(5, 4, [10, 20, 30]);
        f.set(2, 1, [200, 100, 7]);
        let stack = FrameStack::new(FrameKind::Raw, vec![f.clone()]).unwrap();
        let resized = resize_stack(&stack, 4, 5);
        assert_eq!(resized.frame(0), &f);
    }

    #[test]
    fn constant_color_survives_any_resize() {
        let f = Frame::filled(17, 9, [13, 200, 91]);
        let stack = FrameStack::new(FrameKind::Raw, vec![f]).unwrap();
        for (h, w) in [(3, 3), (9, 17), (40, 64)] {
            let r = resize_stack(&stack, h, w);
            assert_eq!(r.height(), h);
            assert_eq!(r.width(), w);
            assert!(r
                .frame(0)
                .data
                .chunks(3)
                .all(|px| px == [13, 200, 91]));
        }
    }

    #[test]
    fn palette_is_deterministic_and_distinct() {
        let a = default_palette(80, 11);
        let b = default_palette(80, 11);
        assert_eq!(a, b);
        let set: std::collections::HashSet<[u8; 3]> = a.colors.iter().copied().collect();
        assert_eq!(set.len(), 80);
        assert_ne!(a.colors, default_palette(80, 12).colors);
    }

    #[test]
    fn blend_matches_worked_example() {
        assert_eq!(blend_pixel([200, 100, 50], [0, 0, 255]), [100, 50, 152]);
    }

    fn one_pixel_mask(w: u32, h: u32, x: u32, y: u32) -> MaskRegion {
        let mut fg = vec![false; (w * h) as usize];
        fg[(y * w + x) as usize] = true;
        MaskRegion::from_bitmap(w, h, &fg)
    }

    #[test]
    fn masked_render_blends_inside_and_blacks_outside() {
        let mut frame = Frame::filled(3, 2, [200, 100, 50]);
        frame.set(0, 0, [9, 9, 9]);
        let raw = FrameStack::new(FrameKind::Raw, vec![frame]).unwrap();
        let dets = ClipDetections::new(
            1,
            vec![vec![Detection::with_mask(0, 1.0, one_pixel_mask(3, 2, 1, 1))]],
        )
        .unwrap();
        let palette = Palette {
            colors: vec![[0, 0, 255]],
        };
        let masked = render_masked_stack(&raw, &dets, &palette, 0.25).unwrap();
        assert_eq!(masked.kind, FrameKind::Masked);
        assert_eq!(masked.frame(0).get(1, 1), [100, 50, 152]);
        assert_eq!(masked.frame(0).get(0, 0), [0, 0, 0]);
        assert_eq!(masked.frame(0).get(2, 0), [0, 0, 0]);
    }

    #[test]
    fn masked_render_without_mask_is_an_error() {
        let raw =
            FrameStack::new(FrameKind::Raw, vec![Frame::filled(2, 2, [1, 2, 3])]).unwrap();
        let dets = ClipDetections::new(5, vec![vec![Detection::new(0, 1.0)]]).unwrap();
        let palette = default_palette(80, 0);
        let err = render_masked_stack(&raw, &dets, &palette, 0.25).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mask required for rendering"), "{msg}");
        assert!(msg.contains("clip 5"), "{msg}");
    }

    #[test]
    fn zero_detections_render_black() {
        let raw =
            FrameStack::new(FrameKind::Raw, vec![Frame::filled(4, 4, [255, 255, 255])])
                .unwrap();
        let dets = ClipDetections::new(0, vec![vec![]]).unwrap();
        let masked =
            render_masked_stack(&raw, &dets, &default_palette(80, 0), 0.25).unwrap();
        assert!(masked.frame(0).data.iter().all(|&b| b == 0));
    }
}
