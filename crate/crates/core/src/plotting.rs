//! Chart rendering without a graphics stack: filled rectangles, Bresenham
//! lines and a 5x7 bitmap font, written straight into PNG frames.

use std::path::Path;

use crate::error::Result;
use crate::eval::{AttentionTrace, ExperimentReport, Metric};
use crate::frames::Frame;
use crate::io::write_frame_png;

const BG: [u8; 3] = [255, 255, 255];
const INK: [u8; 3] = [30, 30, 30];
const GRID: [u8; 3] = [205, 205, 205];
const SEEN_COLOR: [u8; 3] = [70, 110, 180];
const UNSEEN_COLOR: [u8; 3] = [230, 140, 60];
const LINE_PALETTE: [[u8; 3]; 6] = [
    [60, 100, 190],
    [200, 70, 60],
    [50, 150, 90],
    [150, 80, 190],
    [190, 150, 40],
    [70, 170, 190],
];

/// Row-wise 5x7 glyphs; low five bits of each byte are one row, bit 4 left.
const GLYPHS: [(char, [u8; 7]); 52] = [
    ('A', [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11]),
    ('B', [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E]),
    ('C', [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E]),
    ('D', [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E]),
    ('E', [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F]),
    ('F', [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10]),
    ('G', [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0E]),
    ('H', [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11]),
    ('I', [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E]),
    ('J', [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C]),
    ('K', [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11]),
    ('L', [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F]),
    ('M', [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11]),
    ('N', [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11]),
    ('O', [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E]),
    ('P', [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10]),
    ('Q', [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D]),
    ('R', [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11]),
    ('S', [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E]),
    ('T', [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04]),
    ('U', [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E]),
    ('V', [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04]),
    ('W', [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A]),
    ('X', [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11]),
    ('Y', [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04]),
    ('Z', [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F]),
    ('0', [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E]),
    ('1', [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E]),
    ('2', [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F]),
    ('3', [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E]),
    ('4', [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02]),
    ('5', [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E]),
    ('6', [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E]),
    ('7', [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08]),
    ('8', [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E]),
    ('9', [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C]),
    ('.', [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C]),
    (',', [0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08]),
    ('+', [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00]),
    ('-', [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00]),
    ('_', [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F]),
    (':', [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00]),
    ('/', [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10]),
    ('%', [0x19, 0x1A, 0x02, 0x04, 0x08, 0x0B, 0x13]),
    ('(', [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02]),
    (')', [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08]),
    ('=', [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00]),
    ('[', [0x0E, 0x08, 0x08, 0x08, 0x08, 0x08, 0x0E]),
    (']', [0x0E, 0x02, 0x02, 0x02, 0x02, 0x02, 0x0E]),
    ('#', [0x0A, 0x1F, 0x0A, 0x0A, 0x0A, 0x1F, 0x0A]),
    ('*', [0x00, 0x15, 0x0E, 0x1F, 0x0E, 0x15, 0x00]),
    (' ', [0x00; 7]),
];

fn glyph(c: char) -> [u8; 7] {
    let c = c.to_ascii_uppercase();
    GLYPHS
        .iter()
        .find(|(g, _)| *g == c)
        .map(|(_, rows)| *rows)
        // unknown characters render as a filled box
        .unwrap_or([0x1F; 7])
}

pub struct Canvas {
    frame: Frame,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Canvas {
        Canvas {
            frame: Frame::filled(width, height, BG),
        }
    }

    pub fn width(&self) -> u32 {
        self.frame.width
    }

    pub fn height(&self) -> u32 {
        self.frame.height
    }

    pub fn px(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.frame.width && (y as u32) < self.frame.height {
            self.frame.set(x as u32, y as u32, color);
        }
    }

    pub fn pixel_at(&self, x: u32, y: u32) -> [u8; 3] {
        self.frame.get(x, y)
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, color: [u8; 3]) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.px(xx, yy, color);
            }
        }
    }

    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3]) {
        let (mut x, mut y) = (x0, y0);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.px(x, y, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// 5x7 font, `scale` pixels per font pixel, 1-column letter spacing.
    pub fn text(&mut self, x: i64, y: i64, s: &str, color: [u8; 3], scale: i64) {
        let mut cx = x;
        for c in s.chars() {
            let rows = glyph(c);
            for (ry, row) in rows.iter().enumerate() {
                for rx in 0..5 {
                    if row & (0x10 >> rx) != 0 {
                        self.fill_rect(
                            cx + rx as i64 * scale,
                            y + ry as i64 * scale,
                            scale,
                            scale,
                            color,
                        );
                    }
                }
            }
            cx += 6 * scale;
        }
    }

    pub fn text_width(s: &str, scale: i64) -> i64 {
        s.chars().count() as i64 * 6 * scale - scale
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_frame_png(path, &self.frame)
    }
}

struct Axes {
    left: i64,
    right: i64,
    top: i64,
    bottom: i64,
}

impl Axes {
    fn y_of(&self, v: f64) -> i64 {
        let span = (self.bottom - self.top) as f64;
        self.bottom - (v.clamp(0.0, 1.0) * span).round() as i64
    }
}

fn draw_unit_axes(c: &mut Canvas, a: &Axes, y_label: &str) {
    for i in 0..=4 {
        let v = i as f64 * 0.25;
        let y = a.y_of(v);
        c.line(a.left, y, a.right, y, GRID);
        c.text(8, y - 3, &format!("{v:.2}"), INK, 1);
    }
    c.line(a.left, a.top, a.left, a.bottom, INK);
    c.line(a.left, a.bottom, a.right, a.bottom, INK);
    c.text(8, a.top - 14, y_label, INK, 1);
}

/// Grouped bar chart: one group per variant, one bar per split, bar height
/// equal to the chosen metric at that variant's best epoch.
pub fn plot_metric_bars(report: &ExperimentReport, metric: Metric, path: &Path) -> Result<()> {
    let mut c = Canvas::new(640, 400);
    let a = Axes {
        left: 56,
        right: 620,
        top: 48,
        bottom: 330,
    };
    let title = format!("{} by variant", metric.key().replace('_', " "));
    c.text(56, 16, &title, INK, 2);
    draw_unit_axes(&mut c, &a, "");

    let groups = report.variants.len().max(1) as i64;
    let group_w = (a.right - a.left) / groups;
    let colors = [SEEN_COLOR, UNSEEN_COLOR];
    for (gi, v) in report.variants.iter().enumerate() {
        let gx = a.left + gi as i64 * group_w;
        let bar_w = ((group_w - 24) / report.splits.len().max(1) as i64).min(48);
        for (si, split) in report.splits.iter().enumerate() {
            let Some(eval) = v.evals.get(split) else { continue };
            let value = metric.pick(&eval.metrics);
            let x = gx + 12 + si as i64 * (bar_w + 6);
            let y = a.y_of(value);
            c.fill_rect(x, y, bar_w, a.bottom - y, colors[si % colors.len()]);
            c.text(x, y - 10, &format!("{value:.2}"), INK, 1);
        }
        let label = v.variant.label();
        let lx = gx + (group_w - Canvas::text_width(label, 1)) / 2;
        c.text(lx, a.bottom + 10, label, INK, 1);
    }
    // legend
    let mut lx = a.left;
    let ly = a.bottom + 28;
    for (si, split) in report.splits.iter().enumerate() {
        c.fill_rect(lx, ly, 10, 10, colors[si % colors.len()]);
        c.text(lx + 14, ly + 1, split, INK, 1);
        lx += 14 + Canvas::text_width(split, 1) + 24;
    }
    c.save(path)
}

/// Attention weight against frame index, one polyline per clip; frames where
/// the clip's target class is present carry square markers.
pub fn plot_attention_traces(
    traces: &[AttentionTrace],
    path: &Path,
    max_clips: usize,
) -> Result<()> {
    let mut c = Canvas::new(640, 400);
    let a = Axes {
        left: 56,
        right: 600,
        top: 48,
        bottom: 330,
    };
    c.text(56, 16, "attention weight by frame", INK, 2);
    draw_unit_axes(&mut c, &a, "");
    c.text(
        a.right - Canvas::text_width("frame", 1),
        a.bottom + 10,
        "frame",
        INK,
        1,
    );

    let shown = traces.iter().take(max_clips.max(1));
    for (ti, trace) in shown.enumerate() {
        let n = trace.weights.len();
        if n == 0 {
            continue;
        }
        let color = LINE_PALETTE[ti % LINE_PALETTE.len()];
        let x_of = |j: usize| -> i64 {
            if n == 1 {
                (a.left + a.right) / 2
            } else {
                a.left + ((a.right - a.left) as f64 * j as f64 / (n - 1) as f64).round() as i64
            }
        };
        for j in 1..n {
            c.line(
                x_of(j - 1),
                a.y_of(trace.weights[j - 1]),
                x_of(j),
                a.y_of(trace.weights[j]),
                color,
            );
        }
        for j in 0..n {
            if trace.present.get(j).copied().unwrap_or(false) {
                let (x, y) = (x_of(j), a.y_of(trace.weights[j]));
                c.fill_rect(x - 2, y - 2, 5, 5, color);
            }
        }
        c.text(
            a.right + 6,
            a.top + ti as i64 * 12,
            &format!("#{}", trace.clip_id),
            color,
            1,
        );
    }
    c.save(path)
}
