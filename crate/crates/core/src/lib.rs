//! Adaptive pre-processing for domain-robust video activity recognition.
//!
//! The pipeline in front of the encoder: per-clip detection counts feed a
//! learnable gate that picks the raw or masked frame stack, per-frame counts
//! feed an attention weight on every frame, and both reuse one shared MLP.
//! The crate also ships the training engine, a synthetic multi-domain
//! dataset generator, and the evaluation/ablation harness used to exercise
//! the whole thing end to end.

pub mod attention;
pub mod detections;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod frames;
pub mod gate;
pub mod io;
pub mod model;
pub mod par;
pub mod plotting;
pub mod synth;
pub mod train;

pub use attention::{apply_attention, attention_vector, AttentionVector};
pub use detections::{ClipDetections, Detection, MaskRegion, NUM_CLASSES};
pub use encoder::{
    cross_entropy, ClassifierHead, EncoderRegistry, ToyEncoder, ToyEncoderConfig, VideoEncoder,
};
pub use error::{Error, Result};
pub use features::{build_class_array, build_frame_tensor, ClassArray, FrameTensor};
pub use frames::{
    default_palette, render_masked_stack, resize_stack, subsample_frames, subsample_indices,
    FloatStack, Frame, FrameKind, FrameStack, Palette,
};
pub use gate::{select_stream, GateGrads, GateModule, GateOutput, StreamChoice};
pub use io::{load_config, load_dataset, save_config, save_dataset, RunManifest};
pub use model::{
    prepare_clip, ClipInput, ForwardOpts, Model, ModelGrads, PipelineTrace, PreprocessConfig,
    Variant,
};
pub use eval::{
    collect_attention_traces, compute_metrics, degradation_report, evaluate, format_report,
    run_ablation, AttentionTrace, ConfusionMatrix, EvalResult, ExperimentReport, Metric, Metrics,
    VariantOutcome, SEEN_SPLIT, UNSEEN_SPLIT,
};
pub use plotting::{plot_attention_traces, plot_metric_bars};
pub use synth::{
    generate_clip, generate_dataset, ActivitySpec, ClipMeta, Dataset, DatasetManifest,
    DomainSpec, GenConfig, GeneratedClip, Split, ACTIVITY_NAMES,
};
pub use train::{
    build_model, prepare_clips, prepare_dataset, select_best_epoch, train, updates_per_epoch,
    Adam, EpochRecord, PreparedDataset, TrainConfig, TrainOutcome,
};
