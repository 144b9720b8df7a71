//! Synthetic multi-domain activity clips with ground-truth detections.
//!
//! Each clip is a handful of colored shapes on a noisy background: an actor
//! (or two), plus the objects whose presence and motion define the activity.
//! Domains differ only in appearance (background palette, actor palette,
//! noise level, background jitter); the object script that determines the
//! label is sampled without any domain input, so identical seeds produce
//! identical trajectories in every domain. That separation is what makes the
//! dataset a domain-generalization testbed: labels live in the objects,
//! domain shift lives in the pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detections::{classes, ClipDetections, Detection, MaskRegion};
use crate::error::{Error, Result};
use crate::frames::Frame;

/// splitmix64 finalizer; used to derive independent stream seeds.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub(crate) fn mix2(a: u64, b: u64) -> u64 {
    mix64(a ^ mix64(b))
}

/// Appearance parameters of one domain, fully determined by (id, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub id: usize,
    pub background: [u8; 3],
    pub actor: [u8; 3],
    /// Per-pixel uniform noise amplitude on the background.
    pub noise_amp: u8,
    /// Max per-frame offset of the background pattern, in pixels.
    pub jitter_amp: u32,
    /// How strongly object colors drift toward the domain's actor palette.
    pub tint: f64,
}

fn hsv(h_deg: f64, s: f64, v: f64) -> [u8; 3] {
    let h = (h_deg.rem_euclid(360.0)) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

impl DomainSpec {
    /// Widely separated hues and brightness bands per id, plus a small
    /// seed-dependent wobble, so any two domains differ strongly in pixel
    /// statistics.
    pub fn derive(id: usize, seed: u64) -> DomainSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(mix2(seed, 0xD0_u64 ^ id as u64));
        let wobble: f64 = rng.random_range(-10.0..10.0);
        let hue = 210.0 + id as f64 * 137.5 + wobble;
        let value = [0.35, 0.6, 0.85][id % 3];
        let background = hsv(hue, 0.8, value);
        let actor = hsv(hue + 150.0, 0.7, 0.95 - value * 0.3);
        DomainSpec {
            id,
            background,
            actor,
            noise_amp: 8 + ((id * 7) % 20) as u8,
            jitter_amp: 1 + (id % 3) as u32,
            tint: 0.25,
        }
    }
}

/// One activity's object script. Scripts are indexed 0..6; the label equals
/// the index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivitySpec {
    pub id: usize,
}

pub const ACTIVITY_NAMES: [&str; 6] = ["chat", "drink", "typeset", "phone", "watch", "carry"];

/// The class whose per-frame presence varies most within clips of this
/// activity (used for attention analysis). Only "drink" has one: the cup
/// appears and disappears; every other activity keeps its objects on screen.
pub fn intermittent_class(activity: usize) -> Option<usize> {
    (activity == 1).then_some(classes::CUP)
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    SeenTest,
    UnseenTest,
}

impl Split {
    pub fn key(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::SeenTest => "seen_test",
            Split::UnseenTest => "unseen_test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub clip_id: u64,
    pub domain: usize,
    pub activity: usize,
    pub split: Split,
    /// Relative directory holding this clip's frames (on-disk datasets).
    pub frames_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub video_frames: usize,
    pub num_domains: usize,
    pub unseen_domain: usize,
    pub activities: Vec<String>,
    pub clips: Vec<ClipMeta>,
}

impl DatasetManifest {
    pub fn split_clips(&self, split: Split) -> impl Iterator<Item = &ClipMeta> {
        self.clips.iter().filter(move |c| c.split == split)
    }
}

pub struct GeneratedClip {
    pub meta: ClipMeta,
    pub video: Vec<Frame>,
    pub dets: ClipDetections,
}

/// An in-memory dataset: manifest plus the clips themselves.
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub clips: Vec<GeneratedClip>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub num_domains: usize,
    pub num_activities: usize,
    pub clips_per_cell: usize,
    pub unseen_domain: usize,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub video_frames: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_domains: 3,
            num_activities: 6,
            clips_per_cell: 10,
            unseen_domain: 2,
            seed: 0,
            width: 64,
            height: 64,
            video_frames: 100,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, reason: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config {
                    key: key.to_string(),
                    reason,
                })
            }
        };
        check(
            self.num_domains >= 2,
            "domains",
            format!("need at least 2 domains, got {}", self.num_domains),
        )?;
        check(
            self.unseen_domain < self.num_domains,
            "unseen",
            format!(
                "unseen domain {} out of range 0..{}",
                self.unseen_domain, self.num_domains
            ),
        )?;
        check(
            (1..=ACTIVITY_NAMES.len()).contains(&self.num_activities),
            "activities",
            format!(
                "activity count must be in 1..={}, got {}",
                ACTIVITY_NAMES.len(),
                self.num_activities
            ),
        )?;
        check(
            self.clips_per_cell >= 1,
            "clips",
            "clips per cell must be at least 1".to_string(),
        )?;
        check(
            self.video_frames >= 1 && self.width >= 16 && self.height >= 16,
            "geometry",
            format!(
                "need video_frames >= 1 and frames at least 16x16, got {} frames at {}x{}",
                self.video_frames, self.width, self.height
            ),
        )?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// shapes and scripts

#[derive(Debug, Clone)]
enum Shape {
    /// Union of axis-aligned boxes in relative [x0, y0, x1, y1] coordinates.
    Rects(Vec<[f64; 4]>),
    Circle { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    fn bbox(&self) -> [f64; 4] {
        match self {
            Shape::Rects(rs) => {
                let mut b = [1.0f64, 1.0, 0.0, 0.0];
                for r in rs {
                    b[0] = b[0].min(r[0]);
                    b[1] = b[1].min(r[1]);
                    b[2] = b[2].max(r[2]);
                    b[3] = b[3].max(r[3]);
                }
                b
            }
            Shape::Circle { cx, cy, r } => [cx - r, cy - r, cx + r, cy + r],
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Rects(rs) => rs
                .iter()
                .any(|r| x >= r[0] && x < r[2] && y >= r[1] && y < r[3]),
            Shape::Circle { cx, cy, r } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= r * r
            }
        }
    }
}

struct Instance {
    class: usize,
    shape: Shape,
    /// Actor instances take the domain's actor palette; objects take their
    /// class color, tinted toward the domain palette.
    is_actor: bool,
}

fn person(cx: f64, cy: f64) -> Shape {
    // torso plus a head block; proportions relative to the frame
    let (bw, bh) = (0.16, 0.30);
    let head = 0.10;
    Shape::Rects(vec![
        [cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0],
        [
            cx - head / 2.0,
            cy - bh / 2.0 - head,
            cx + head / 2.0,
            cy - bh / 2.0,
        ],
    ])
}

fn boxy(cx: f64, cy: f64, w: f64, h: f64) -> Shape {
    Shape::Rects(vec![[cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]])
}

/// Fixed base colors per object class; recognizable across domains.
fn class_color(class: usize) -> [u8; 3] {
    match class {
        classes::TV => [25, 25, 35],
        classes::KEYBOARD => [55, 55, 65],
        classes::HANDBAG => [150, 95, 40],
        classes::CELL_PHONE => [20, 22, 30],
        classes::MOUSE => [145, 145, 155],
        classes::CUP => [215, 45, 45],
        _ => [128, 128, 128],
    }
}

/// Per-clip script parameters, sampled once from the script RNG.
struct Script {
    activity: usize,
    sway_phase: f64,
    sway_freq: f64,
    bob_phase: f64,
    cup_period: f64,
    cup_duty: f64,
    cup_phase: f64,
    drift_phase: f64,
    pos_jitter: (f64, f64),
}

impl Script {
    fn sample(activity: usize, rng: &mut ChaCha8Rng) -> Script {
        Script {
            activity,
            sway_phase: rng.random_range(0.0..std::f64::consts::TAU),
            sway_freq: rng.random_range(0.05..0.12),
            bob_phase: rng.random_range(0.0..std::f64::consts::TAU),
            cup_period: rng.random_range(12.0..20.0),
            cup_duty: rng.random_range(0.40..0.50),
            cup_phase: rng.random_range(0.0..1.0),
            drift_phase: rng.random_range(0.0..std::f64::consts::TAU),
            pos_jitter: (
                rng.random_range(-0.03..0.03),
                rng.random_range(-0.03..0.03),
            ),
        }
    }

    /// Instances present in frame `t`, front-most last.
    fn frame_instances(&self, t: usize) -> Vec<Instance> {
        let tf = t as f64;
        let sway = 0.03 * (self.sway_freq * std::f64::consts::TAU * tf + self.sway_phase).sin();
        let bob = 0.02 * (0.9 * self.sway_freq * std::f64::consts::TAU * tf + self.bob_phase).sin();
        let (jx, jy) = self.pos_jitter;
        let px = 0.30 + jx + sway;
        let py = 0.55 + jy + bob;
        let mut out = Vec::new();
        let actor = |cx: f64, cy: f64| Instance {
            class: classes::PERSON,
            shape: person(cx, cy),
            is_actor: true,
        };
        let object = |class: usize, shape: Shape| Instance {
            class,
            shape,
            is_actor: false,
        };
        match self.activity {
            // chat: two people facing each other, mirrored sway
            0 => {
                out.push(actor(0.28 + jx + sway, py));
                out.push(actor(0.72 + jx - sway, py));
            }
            // drink: a cup cycles between a rest position and the actor's
            // head, visible for cup_duty of each period
            1 => {
                out.push(actor(px, py));
                let u = (tf / self.cup_period + self.cup_phase).fract();
                if u < self.cup_duty {
                    let lift = (std::f64::consts::PI * u / self.cup_duty).sin();
                    let cx = 0.78 + (px + 0.17 - 0.78) * lift;
                    let cy = 0.72 + (py - 0.28 - 0.72) * lift;
                    out.push(object(classes::CUP, Shape::Circle { cx, cy, r: 0.06 }));
                }
            }
            // typeset: keyboard ahead of the actor, mouse beside it
            2 => {
                out.push(actor(px, py));
                let kb_jit = 0.01 * (1.7 * tf + self.drift_phase).sin();
                out.push(object(
                    classes::KEYBOARD,
                    boxy(0.58 + kb_jit, 0.82, 0.26, 0.10),
                ));
                let mx = 0.82 + 0.04 * (0.08 * std::f64::consts::TAU * tf + self.drift_phase).sin();
                out.push(object(classes::MOUSE, boxy(mx, 0.82, 0.07, 0.06)));
            }
            // phone: handset held next to the head, moving with the sway
            3 => {
                out.push(actor(px, py));
                out.push(object(
                    classes::CELL_PHONE,
                    boxy(px + 0.13, py - 0.32, 0.06, 0.12),
                ));
            }
            // watch: actor at the side, large static screen
            4 => {
                out.push(actor(0.20 + jx + sway * 0.3, py));
                let tv_jit = 0.004 * (2.3 * tf + self.drift_phase).sin();
                out.push(object(classes::TV, boxy(0.68 + tv_jit, 0.38, 0.34, 0.28)));
            }
            // carry: actor walks a slow horizontal arc, bag swings beside
            5 => {
                let walk = 0.30
                    + 0.15
                        * (0.03 * std::f64::consts::TAU * tf + self.drift_phase).sin();
                out.push(actor(walk + jx, py));
                let swing = 0.03 * (0.15 * std::f64::consts::TAU * tf + self.sway_phase).sin();
                out.push(object(
                    classes::HANDBAG,
                    boxy(walk + jx + 0.17, 0.72 + swing, 0.10, 0.12),
                ));
            }
            other => unreachable!("activity {other} has no script"),
        }
        out
    }
}

// ---------------------------------------------------------------------------
// rendering

fn blend_toward(base: [u8; 3], toward: [u8; 3], t: f64) -> [u8; 3] {
    let mix = |a: u8, b: u8| ((a as f64) * (1.0 - t) + (b as f64) * t).round() as u8;
    [
        mix(base[0], toward[0]),
        mix(base[1], toward[1]),
        mix(base[2], toward[2]),
    ]
}

fn add_noise(c: [u8; 3], amp: u8, rng: &mut ChaCha8Rng) -> [u8; 3] {
    if amp == 0 {
        return c;
    }
    let a = amp as i16;
    let mut out = [0u8; 3];
    for (o, &ch) in out.iter_mut().zip(&c) {
        let n: i16 = rng.random_range(-a..=a);
        *o = (ch as i16 + n).clamp(0, 255) as u8;
    }
    out
}

/// Generate one clip. The script stream is seeded from `seed` and the
/// activity only; the appearance stream additionally mixes in the domain id.
/// Two domains given the same seed therefore share trajectories exactly.
pub fn generate_clip(
    domain: &DomainSpec,
    activity: ActivitySpec,
    seed: u64,
    width: u32,
    height: u32,
    video_frames: usize,
) -> (Vec<Frame>, ClipDetections, usize) {
    let mut script_rng =
        ChaCha8Rng::seed_from_u64(mix2(seed, 0x5C21_u64 ^ activity.id as u64));
    let script = Script::sample(activity.id, &mut script_rng);

    let mut app_rng =
        ChaCha8Rng::seed_from_u64(mix2(mix2(seed, domain.id as u64), 0xA44E));
    // per-clip appearance: background/actor wobble around the domain palette
    let bg = add_noise(domain.background, 12, &mut app_rng);
    let actor_color = add_noise(domain.actor, 12, &mut app_rng);

    // background noise field, larger than the frame so per-frame jitter can
    // shift the sampling window (the "camera" wobbles over a static scene)
    let j = domain.jitter_amp;
    let (fw, fh) = ((width + 2 * j) as usize, (height + 2 * j) as usize);
    let mut field = Vec::with_capacity(fw * fh);
    for _ in 0..fw * fh {
        field.push(add_noise(bg, domain.noise_amp, &mut app_rng));
    }

    let mut frames = Vec::with_capacity(video_frames);
    let mut det_frames = Vec::with_capacity(video_frames);
    for t in 0..video_frames {
        let (ox, oy) = if j == 0 {
            (0, 0)
        } else {
            (
                app_rng.random_range(0..=2 * j) as usize,
                app_rng.random_range(0..=2 * j) as usize,
            )
        };
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height as usize {
            for x in 0..width as usize {
                let px = field[(y + oy) * fw + (x + ox)];
                data.extend_from_slice(&px);
            }
        }
        let mut frame = Frame::new(width, height, data);

        let instances = script.frame_instances(t);
        // front-most instance per pixel; later instances draw over earlier
        let mut owner = vec![usize::MAX; width as usize * height as usize];
        for (i, inst) in instances.iter().enumerate() {
            let b = inst.shape.bbox();
            let x0 = ((b[0] * width as f64).floor().max(0.0)) as u32;
            let y0 = ((b[1] * height as f64).floor().max(0.0)) as u32;
            let x1 = ((b[2] * width as f64).ceil()).min(width as f64) as u32;
            let y1 = ((b[3] * height as f64).ceil()).min(height as f64) as u32;
            for y in y0..y1 {
                for x in x0..x1 {
                    // sample at the pixel center
                    let rx = (x as f64 + 0.5) / width as f64;
                    let ry = (y as f64 + 0.5) / height as f64;
                    if inst.shape.contains(rx, ry) {
                        owner[(y * width + x) as usize] = i;
                    }
                }
            }
        }
        let mut bitmaps: Vec<Vec<bool>> =
            vec![vec![false; owner.len()]; instances.len()];
        for (p, &o) in owner.iter().enumerate() {
            if o == usize::MAX {
                continue;
            }
            let inst = &instances[o];
            let color = if inst.is_actor {
                actor_color
            } else {
                blend_toward(class_color(inst.class), domain.actor, domain.tint)
            };
            let shaded = add_noise(color, 5, &mut app_rng);
            let (x, y) = ((p as u32) % width, (p as u32) / width);
            frame.set(x, y, shaded);
            bitmaps[o][p] = true;
        }

        let dets: Vec<Detection> = instances
            .iter()
            .zip(&bitmaps)
            .filter(|(_, bm)| bm.iter().any(|&b| b))
            .map(|(inst, bm)| {
                Detection::with_mask(inst.class, 1.0, MaskRegion::from_bitmap(width, height, bm))
            })
            .collect();
        det_frames.push(dets);
        frames.push(frame);
    }

    let dets = ClipDetections::new(0, det_frames).expect("video_frames >= 1");
    (frames, dets, activity.id)
}

/// Generate the full dataset. Per-clip seeds mix the dataset seed with the
/// clip's (activity, slot) cell position — not the domain — so sibling clips
/// across domains share scripts, and generation order (or parallelism) can
/// never change any clip's content.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let holdout = (cfg.clips_per_cell / 4).max(1).min(cfg.clips_per_cell);

    struct Cell {
        clip_id: u64,
        domain: usize,
        activity: usize,
        slot: usize,
    }
    let mut cells = Vec::new();
    let mut clip_id = 0u64;
    for domain in 0..cfg.num_domains {
        for activity in 0..cfg.num_activities {
            for slot in 0..cfg.clips_per_cell {
                cells.push(Cell {
                    clip_id,
                    domain,
                    activity,
                    slot,
                });
                clip_id += 1;
            }
        }
    }

    let domains: Vec<DomainSpec> = (0..cfg.num_domains)
        .map(|id| DomainSpec::derive(id, cfg.seed))
        .collect();

    let clips: Vec<GeneratedClip> = crate::par::map_auto(&cells, |cell| {
        let clip_seed = mix2(cfg.seed, mix2(cell.activity as u64, cell.slot as u64));
        let (video, mut dets, _) = generate_clip(
            &domains[cell.domain],
            ActivitySpec { id: cell.activity },
            clip_seed,
            cfg.width,
            cfg.height,
            cfg.video_frames,
        );
        dets.clip_id = cell.clip_id;
        let split = if cell.domain == cfg.unseen_domain {
            Split::UnseenTest
        } else if cell.slot >= cfg.clips_per_cell - holdout {
            Split::SeenTest
        } else {
            Split::Train
        };
        GeneratedClip {
            meta: ClipMeta {
                clip_id: cell.clip_id,
                domain: cell.domain,
                activity: cell.activity,
                split,
                frames_dir: format!("clips/{:05}", cell.clip_id),
            },
            video,
            dets,
        }
    });

    let manifest = DatasetManifest {
        seed: cfg.seed,
        width: cfg.width,
        height: cfg.height,
        video_frames: cfg.video_frames,
        num_domains: cfg.num_domains,
        unseen_domain: cfg.unseen_domain,
        activities: ACTIVITY_NAMES[..cfg.num_activities]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        clips: clips.iter().map(|c| c.meta.clone()).collect(),
    };
    Ok(Dataset { manifest, clips })
}
