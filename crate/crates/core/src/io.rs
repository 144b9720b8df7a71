//! On-disk formats: datasets (PNG frames plus JSON index files), flat TOML
//! configs, per-epoch checkpoints, run manifests, reports, attention traces.
//!
//! A dataset directory is the loader interface: anything that writes the
//! same layout (manifest.json, detections.jsonl, one frame directory per
//! clip) can be trained on, wherever the clips came from.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detections::ClipDetections;
use crate::error::{Error, Result};
use crate::eval::{AttentionTrace, ExperimentReport, Metrics};
use crate::frames::Frame;
use crate::model::Model;
use crate::par;
use crate::synth::{Dataset, DatasetManifest, GeneratedClip};
use crate::train::{EpochRecord, TrainConfig, TrainOutcome};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const TRACES_FILE: &str = "attention_traces.jsonl";

// ---------------------------------------------------------------------------
// JSON / JSONL

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = BufReader::new(fs::File::open(path)?);
    Ok(serde_json::from_reader(file)?)
}

pub fn write_jsonl<'a, T, I>(path: &Path, items: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut out = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a line-per-record file; the error names the offending line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Jsonl {
            path: path.display().to_string(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// PNG frames

pub fn write_frame_png(path: &Path, frame: &Frame) -> Result<()> {
    let img = image::RgbImage::from_raw(frame.width, frame.height, frame.data.clone())
        .expect("frame buffer matches its dimensions");
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_frame_png(path: &Path) -> Result<Frame> {
    let img = image::open(path)?.to_rgb8();
    Ok(Frame::new(img.width(), img.height(), img.into_raw()))
}

fn frame_file(index: usize) -> String {
    format!("{index:04}.png")
}

// ---------------------------------------------------------------------------
// datasets

/// Write manifest, detection index and every clip's frames under `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(MANIFEST_FILE), &ds.manifest)?;
    write_jsonl(&dir.join(DETECTIONS_FILE), ds.clips.iter().map(|c| &c.dets))?;
    let results: Vec<Result<()>> = par::map_auto(&ds.clips, |clip| {
        let clip_dir = dir.join(&clip.meta.frames_dir);
        fs::create_dir_all(&clip_dir)?;
        for (i, frame) in clip.video.iter().enumerate() {
            write_frame_png(&clip_dir.join(frame_file(i)), frame)?;
        }
        Ok(())
    });
    results.into_iter().collect()
}

/// Load a dataset directory written by [`save_dataset`] or by anything else
/// that follows the same layout.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let det_list: Vec<ClipDetections> = read_jsonl(&dir.join(DETECTIONS_FILE))?;
    let mut by_id: HashMap<u64, ClipDetections> =
        det_list.into_iter().map(|d| (d.clip_id, d)).collect();
    let metas = manifest.clips.clone();
    let loaded: Vec<Result<Vec<Frame>>> = par::map_auto(&metas, |meta| {
        let clip_dir = dir.join(&meta.frames_dir);
        let mut video = Vec::with_capacity(manifest.video_frames);
        for i in 0..manifest.video_frames {
            video.push(read_frame_png(&clip_dir.join(frame_file(i)))?);
        }
        Ok(video)
    });
    let mut clips = Vec::with_capacity(metas.len());
    for (meta, video) in metas.into_iter().zip(loaded) {
        let dets = by_id.remove(&meta.clip_id).ok_or_else(|| Error::Jsonl {
            path: dir.join(DETECTIONS_FILE).display().to_string(),
            line: 0,
            reason: format!("no detections recorded for clip {}", meta.clip_id),
        })?;
        clips.push(GeneratedClip {
            meta,
            video: video?,
            dets,
        });
    }
    Ok(Dataset { manifest, clips })
}

// ---------------------------------------------------------------------------
// configs

/// Flat key-value TOML; missing keys fall back to defaults, and the result
/// is validated before use.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: TrainConfig = toml::from_str(&text).map_err(|e| Error::Config {
        key: path.display().to_string(),
        reason: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(path: &Path, cfg: &TrainConfig) -> Result<()> {
    let text = toml::to_string_pretty(cfg).map_err(|e| Error::Config {
        key: path.display().to_string(),
        reason: e.to_string(),
    })?;
    fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// checkpoints and run manifests

fn checkpoint_file(epoch: usize) -> String {
    format!("checkpoint_{epoch:03}.json")
}

/// One JSON checkpoint per epoch; returns the written paths in epoch order.
pub fn save_checkpoints(outcome: &TrainOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(outcome.epochs.len());
    for rec in &outcome.epochs {
        let path = dir.join(checkpoint_file(rec.epoch));
        write_json(&path, rec)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn load_checkpoint(path: &Path) -> Result<EpochRecord> {
    read_json(path)
}

/// Restore a snapshot into a model built from the same configuration.
pub fn apply_checkpoint(model: &mut Model, rec: &EpochRecord, origin: &Path) -> Result<()> {
    if rec.params.len() != model.param_count() {
        return Err(Error::CheckpointMismatch {
            path: origin.display().to_string(),
            reason: format!(
                "{} parameters stored, model expects {}",
                rec.params.len(),
                model.param_count()
            ),
        });
    }
    model.set_params_flat(&rec.params)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub updates: usize,
    pub metrics: BTreeMap<String, Metrics>,
}

impl From<&EpochRecord> for EpochSummary {
    fn from(rec: &EpochRecord) -> EpochSummary {
        EpochSummary {
            epoch: rec.epoch,
            train_loss: rec.train_loss,
            updates: rec.updates,
            metrics: rec
                .evals
                .iter()
                .map(|(k, v)| (k.clone(), v.metrics))
                .collect(),
        }
    }
}

/// Everything needed to audit or reproduce one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub variant: String,
    pub dataset: String,
    pub best_epoch: usize,
    pub epochs: Vec<EpochSummary>,
}

pub fn save_run_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    write_json(&dir.join(RUN_MANIFEST_FILE), manifest)
}

pub fn load_run_manifest(dir: &Path) -> Result<RunManifest> {
    read_json(&dir.join(RUN_MANIFEST_FILE))
}

// ---------------------------------------------------------------------------
// run directories, reports, traces

/// Create `dir` if needed. A directory that already holds files is refused
/// unless `force`, in which case it is wiped and recreated.
pub fn ensure_run_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        if !force {
            return Err(Error::RunDirOccupied(dir.display().to_string()));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Write both renderings of the experiment report.
pub fn save_report(dir: &Path, report: &ExperimentReport) -> Result<()> {
    write_json(&dir.join(REPORT_JSON_FILE), report)?;
    fs::write(dir.join(REPORT_TEXT_FILE), crate::eval::format_report(report))?;
    Ok(())
}

pub fn load_report(dir: &Path) -> Result<ExperimentReport> {
    read_json(&dir.join(REPORT_JSON_FILE))
}

pub fn save_attention_traces(path: &Path, traces: &[AttentionTrace]) -> Result<()> {
    write_jsonl(path, traces.iter())
}

pub fn load_attention_traces(path: &Path) -> Result<Vec<AttentionTrace>> {
    read_jsonl(path)
}
