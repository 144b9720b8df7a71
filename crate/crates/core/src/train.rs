//! Training engine: clip-at-a-time gradient descent with summed gradient
//! accumulation, Adam updates, and a parameter snapshot after every epoch.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detections::NUM_CLASSES;
use crate::encoder::{ClassifierHead, EncoderRegistry, ToyEncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{self, EvalResult, Metric};
use crate::frames::{default_palette, Palette};
use crate::gate::GateModule;
use crate::model::{prepare_clip, ClipInput, ForwardOpts, Model, ModelGrads, PreprocessConfig, Variant};
use crate::par;
use crate::synth::{mix2, Dataset, GeneratedClip, Split};

/// Flat experiment configuration. Every stochastic choice in a run (model
/// init, epoch shuffling) derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub accumulation_steps: usize,
    pub epochs: usize,
    pub frames_per_clip: usize,
    pub sampling_rate: usize,
    pub resize_height: u32,
    pub resize_width: u32,
    pub score_threshold: f64,
    pub hidden_width: usize,
    pub encoder: String,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub feature_dim: usize,
    pub num_activities: usize,
    pub best_metric: String,
    pub best_split: String,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 1,
            accumulation_steps: 32,
            epochs: 15,
            frames_per_clip: 32,
            sampling_rate: 3,
            resize_height: 224,
            resize_width: 224,
            score_threshold: 0.25,
            hidden_width: 128,
            encoder: "toy".to_string(),
            conv1_channels: 8,
            conv2_channels: 16,
            feature_dim: 64,
            num_activities: 6,
            best_metric: "accuracy".to_string(),
            best_split: eval::UNSEEN_SPLIT.to_string(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset: small frames and a step size that lets the toy
    /// encoder make visible progress within tens of updates.
    pub fn toy() -> TrainConfig {
        TrainConfig {
            resize_height: 64,
            resize_width: 64,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("accumulation_steps", self.accumulation_steps),
            ("epochs", self.epochs),
            ("frames_per_clip", self.frames_per_clip),
            ("sampling_rate", self.sampling_rate),
            ("hidden_width", self.hidden_width),
            ("conv1_channels", self.conv1_channels),
            ("conv2_channels", self.conv2_channels),
            ("feature_dim", self.feature_dim),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config {
                    key: key.to_string(),
                    reason: "must be positive".to_string(),
                });
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config {
                key: "learning_rate".to_string(),
                reason: format!("must be a positive finite number, got {}", self.learning_rate),
            });
        }
        if self.num_activities < 2 {
            return Err(Error::Config {
                key: "num_activities".to_string(),
                reason: "need at least two activity classes".to_string(),
            });
        }
        // two valid 3x3 convolutions with pooling need at least 8x8 input
        if self.resize_height < 8 || self.resize_width < 8 {
            return Err(Error::Config {
                key: "resize".to_string(),
                reason: format!(
                    "resize target {}x{} below the 8x8 encoder minimum",
                    self.resize_width, self.resize_height
                ),
            });
        }
        Metric::parse(&self.best_metric)?;
        if self.best_split.is_empty() {
            return Err(Error::Config {
                key: "best_split".to_string(),
                reason: "must name an evaluation split".to_string(),
            });
        }
        Ok(())
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            frames_per_clip: self.frames_per_clip,
            sampling_rate: self.sampling_rate,
            resize_h: self.resize_height,
            resize_w: self.resize_width,
            score_threshold: self.score_threshold,
            num_classes: NUM_CLASSES,
        }
    }

    fn encoder_config(&self) -> ToyEncoderConfig {
        ToyEncoderConfig {
            conv1_channels: self.conv1_channels,
            conv2_channels: self.conv2_channels,
            feature_dim: self.feature_dim,
        }
    }
}

/// Build the full model for one variant. Gate, encoder and head draw
/// independent init streams from the config seed.
pub fn build_model(cfg: &TrainConfig, variant: Variant) -> Result<Model> {
    cfg.validate()?;
    let registry = EncoderRegistry::with_builtin();
    let encoder = registry.build(&cfg.encoder, &cfg.encoder_config(), mix2(cfg.seed, 0xE2))?;
    let gate = GateModule::init(NUM_CLASSES, cfg.hidden_width, mix2(cfg.seed, 0xE1));
    let head = ClassifierHead::new(encoder.feature_dim(), cfg.num_activities, mix2(cfg.seed, 0xE3));
    Model::new(gate, encoder, head, variant)
}

/// Run the pre-processing pipeline over a set of clips. Clips that fail are
/// skipped with a warning; more than 10% failing aborts the run.
pub fn prepare_clips(
    clips: &[&GeneratedClip],
    variant: Variant,
    pp: &PreprocessConfig,
    palette: &Palette,
) -> Result<Vec<ClipInput>> {
    let results: Vec<Result<ClipInput>> = par::map_auto(clips, |clip| {
        prepare_clip(
            clip.meta.clip_id,
            clip.meta.activity,
            &clip.video,
            &clip.dets,
            variant,
            pp,
            palette,
        )
    });
    let total = results.len();
    let mut ok = Vec::with_capacity(total);
    let mut failed = 0usize;
    for (r, clip) in results.into_iter().zip(clips) {
        match r {
            Ok(input) => ok.push(input),
            Err(e) => {
                failed += 1;
                log::warn!("skipping clip {}: {e}", clip.meta.clip_id);
            }
        }
    }
    if failed * 10 > total {
        return Err(Error::TooManyFailures { failed, total });
    }
    Ok(ok)
}

pub struct PreparedDataset {
    pub train: Vec<ClipInput>,
    pub seen_test: Vec<ClipInput>,
    pub unseen_test: Vec<ClipInput>,
    pub palette: Palette,
}

/// Prepare all three splits of a dataset for one variant.
pub fn prepare_dataset(ds: &Dataset, variant: Variant, cfg: &TrainConfig) -> Result<PreparedDataset> {
    let pp = cfg.preprocess();
    let palette = default_palette(pp.num_classes, mix2(cfg.seed, 0x9A1E));
    let collect = |split: Split| -> Vec<&GeneratedClip> {
        ds.clips.iter().filter(|c| c.meta.split == split).collect()
    };
    Ok(PreparedDataset {
        train: prepare_clips(&collect(Split::Train), variant, &pp, &palette)?,
        seen_test: prepare_clips(&collect(Split::SeenTest), variant, &pp, &palette)?,
        unseen_test: prepare_clips(&collect(Split::UnseenTest), variant, &pp, &palette)?,
        palette,
    })
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(learning_rate: f64, dim: usize) -> Adam {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ParamLength {
                got: params.len().max(grads.len()),
                want: self.m.len(),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss per training clip over this epoch.
    pub train_loss: f64,
    pub updates: usize,
    pub evals: BTreeMap<String, EvalResult>,
    /// Parameter snapshot in canonical flat order, taken at epoch end.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
}

/// Optimizer updates one epoch performs: full groups plus the final partial
/// group, which is flushed so every clip contributes to some update.
pub fn updates_per_epoch(num_clips: usize, cfg: &TrainConfig) -> usize {
    let group = cfg.batch_size * cfg.accumulation_steps;
    num_clips.div_ceil(group)
}

fn apply_update(model: &mut Model, adam: &mut Adam, grads: &[f64]) -> Result<()> {
    let mut params = model.params_flat();
    adam.step(&mut params, grads)?;
    model.set_params_flat(&params)
}

/// Train in place. Gradients are summed (not averaged) across each
/// accumulation group, and each group triggers exactly one Adam update.
/// Clip order reshuffles every epoch from the config seed.
pub fn train(
    model: &mut Model,
    cfg: &TrainConfig,
    train_set: &[ClipInput],
    eval_sets: &[(&str, &[ClipInput])],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptySplit("train".to_string()));
    }
    let group = cfg.batch_size * cfg.accumulation_steps;
    let mut adam = Adam::new(cfg.learning_rate, model.param_count());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix2(cfg.seed, 0xEF0C ^ epoch as u64));
        order.shuffle(&mut rng);

        let mut grads = ModelGrads::zeros_like(model);
        let mut pending = 0usize;
        let mut updates = 0usize;
        let mut loss_sum = 0.0;
        for &i in &order {
            let ctx = model.forward(&train_set[i], &ForwardOpts::default())?;
            loss_sum += ctx.loss;
            model.backward(&ctx, &mut grads)?;
            pending += 1;
            if pending == group {
                apply_update(model, &mut adam, &grads.to_flat())?;
                grads = ModelGrads::zeros_like(model);
                pending = 0;
                updates += 1;
            }
        }
        if pending > 0 {
            apply_update(model, &mut adam, &grads.to_flat())?;
            updates += 1;
        }

        let mut evals = BTreeMap::new();
        for (name, set) in eval_sets {
            evals.insert(
                name.to_string(),
                eval::evaluate(model, set, cfg.num_activities)?,
            );
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            updates,
            evals,
            params: model.params_flat(),
        });
    }
    Ok(TrainOutcome { epochs })
}

/// Epoch whose stored evaluation maximizes the metric; ties go to the
/// earliest epoch. Unknown metrics or splits are errors.
pub fn select_best_epoch(outcome: &TrainOutcome, metric: &str, split: &str) -> Result<usize> {
    let metric = Metric::parse(metric)?;
    if outcome.epochs.is_empty() {
        return Err(Error::EmptySplit("epochs".to_string()));
    }
    let mut best: Option<(usize, f64)> = None;
    for rec in &outcome.epochs {
        let eval = rec.evals.get(split).ok_or_else(|| Error::Config {
            key: "split".to_string(),
            reason: format!("no evaluation recorded for split {split:?}"),
        })?;
        let value = metric.pick(&eval.metrics);
        if best.map_or(true, |(_, b)| value > b) {
            best = Some((rec.epoch, value));
        }
    }
    Ok(best.expect("epochs nonempty").0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::classes;
    use crate::synth::{generate_clip, ActivitySpec, ClipMeta, DomainSpec};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            accumulation_steps: 4,
            epochs: 2,
            frames_per_clip: 2,
            sampling_rate: 1,
            resize_height: 16,
            resize_width: 16,
            hidden_width: 4,
            conv1_channels: 2,
            conv2_channels: 3,
            feature_dim: 8,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    fn tiny_clip(activity: usize, seed: u64) -> GeneratedClip {
        let domain = DomainSpec::derive(0, 1);
        let (video, mut dets, _) =
            generate_clip(&domain, ActivitySpec { id: activity }, seed, 24, 24, 4);
        dets.clip_id = seed;
        GeneratedClip {
            meta: ClipMeta {
                clip_id: seed,
                domain: 0,
                activity,
                split: Split::Train,
                frames_dir: String::new(),
            },
            video,
            dets,
        }
    }

    fn tiny_inputs(variant: Variant, cfg: &TrainConfig, activities: &[usize]) -> Vec<ClipInput> {
        let palette = default_palette(NUM_CLASSES, 3);
        let pp = cfg.preprocess();
        activities
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let clip = tiny_clip(a, i as u64);
                prepare_clip(
                    clip.meta.clip_id,
                    a,
                    &clip.video,
                    &clip.dets,
                    variant,
                    &pp,
                    &palette,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn adam_matches_an_independent_scalar_version() {
        // reference: plain local variables, no shared code
        let (lr, b1, b2, eps) = (0.05f64, 0.9f64, 0.999f64, 1e-8f64);
        let mut w_ref = 5.0f64;
        let mut m = 0.0f64;
        let mut v = 0.0f64;

        let mut adam = Adam::new(lr, 1);
        let mut w = vec![5.0f64];
        for t in 1..=200u32 {
            let g = 2.0 * (w_ref - 3.0) + (t as f64 * 0.7).sin();
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t as i32));
            let v_hat = v / (1.0 - b2.powi(t as i32));
            w_ref -= lr * m_hat / (v_hat.sqrt() + eps);

            let g_vec = [2.0 * (w[0] - 3.0) + (t as f64 * 0.7).sin()];
            adam.step(&mut w, &g_vec).unwrap();
            assert!(
                (w[0] - w_ref).abs() <= 1e-12,
                "step {t}: {} vs {}",
                w[0],
                w_ref
            );
        }
        assert!((w_ref - 3.0).abs() < 1.0, "optimizer failed to move toward the minimum");
        assert_eq!(adam.steps_taken(), 200);
    }

    #[test]
    fn adam_rejects_mismatched_lengths() {
        let mut adam = Adam::new(0.1, 3);
        let mut params = vec![0.0; 3];
        assert!(adam.step(&mut params, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn accumulated_gradients_match_one_summed_batch() {
        let cfg = TrainConfig {
            epochs: 1,
            accumulation_steps: 4,
            ..tiny_cfg()
        };
        // four copies of one clip: order independence for free
        let inputs = tiny_inputs(Variant::Full, &cfg, &[1, 1, 1, 1]);

        let mut trained = build_model(&cfg, Variant::Full).unwrap();
        let outcome = train(&mut trained, &cfg, &inputs, &[]).unwrap();
        assert_eq!(outcome.epochs[0].updates, 1);

        // manual: sum the four clip gradients at the initial point, one step
        let manual = build_model(&cfg, Variant::Full).unwrap();
        let mut grads = ModelGrads::zeros_like(&manual);
        for input in &inputs {
            let ctx = manual.forward(input, &ForwardOpts::default()).unwrap();
            manual.backward(&ctx, &mut grads).unwrap();
        }
        let mut adam = Adam::new(cfg.learning_rate, manual.param_count());
        let mut params = manual.params_flat();
        adam.step(&mut params, &grads.to_flat()).unwrap();

        let got = trained.params_flat();
        for (a, b) in got.iter().zip(&params) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn partial_groups_flush_into_one_extra_update() {
        let cfg = TrainConfig {
            epochs: 1,
            accumulation_steps: 4,
            ..tiny_cfg()
        };
        let inputs = tiny_inputs(Variant::Rd, &cfg, &[0, 1, 2, 3, 4, 5]);
        let mut model = build_model(&cfg, Variant::Rd).unwrap();
        let outcome = train(&mut model, &cfg, &inputs, &[]).unwrap();
        // 6 clips, groups of 4: one full group plus a flushed partial
        assert_eq!(outcome.epochs[0].updates, 2);
        assert_eq!(updates_per_epoch(6, &cfg), 2);
        assert_eq!(updates_per_epoch(8, &cfg), 2);
        assert_eq!(updates_per_epoch(9, &cfg), 3);
        assert_eq!(
            updates_per_epoch(64, &TrainConfig::default()),
            2
        );
    }

    #[test]
    fn one_checkpoint_per_epoch_with_evals() {
        let cfg = TrainConfig {
            epochs: 3,
            ..tiny_cfg()
        };
        let inputs = tiny_inputs(Variant::De, &cfg, &[0, 1, 2, 3]);
        let mut model = build_model(&cfg, Variant::De).unwrap();
        let outcome = train(
            &mut model,
            &cfg,
            &inputs,
            &[("train_again", &inputs)],
        )
        .unwrap();
        assert_eq!(outcome.epochs.len(), 3);
        for (i, rec) in outcome.epochs.iter().enumerate() {
            assert_eq!(rec.epoch, i);
            assert_eq!(rec.params.len(), model.param_count());
            let eval = &rec.evals["train_again"];
            assert_eq!(eval.confusion.total(), 4);
        }
        // restoring a snapshot reproduces that epoch's evaluation
        let mid = &outcome.epochs[1];
        model.set_params_flat(&mid.params).unwrap();
        let again = eval::evaluate(&model, &inputs, cfg.num_activities).unwrap();
        assert_eq!(again.metrics.accuracy, mid.evals["train_again"].metrics.accuracy);
    }

    #[test]
    fn best_epoch_takes_the_earliest_argmax() {
        let mk = |acc_hits: u64| {
            let cm = crate::eval::ConfusionMatrix::from_rows(&[
                vec![acc_hits, 4 - acc_hits],
                vec![0, 4],
            ]);
            let metrics = crate::eval::compute_metrics(&cm).unwrap();
            EvalResult {
                confusion: cm,
                metrics,
            }
        };
        let outcome = TrainOutcome {
            epochs: [1u64, 3, 3, 2]
                .iter()
                .enumerate()
                .map(|(epoch, &hits)| EpochRecord {
                    epoch,
                    train_loss: 1.0,
                    updates: 1,
                    evals: BTreeMap::from([("val".to_string(), mk(hits))]),
                    params: vec![],
                })
                .collect(),
        };
        assert_eq!(select_best_epoch(&outcome, "accuracy", "val").unwrap(), 1);
        assert!(select_best_epoch(&outcome, "auc", "val").is_err());
        assert!(select_best_epoch(&outcome, "accuracy", "test").is_err());
    }

    #[test]
    fn single_clip_overfits_within_a_hundred_epochs() {
        let cfg = TrainConfig {
            epochs: 100,
            accumulation_steps: 1,
            ..tiny_cfg()
        };
        let inputs = tiny_inputs(Variant::Full, &cfg, &[2]);
        let mut model = build_model(&cfg, Variant::Full).unwrap();
        let outcome = train(&mut model, &cfg, &inputs, &[]).unwrap();
        let first = outcome.epochs.first().unwrap().train_loss;
        let last = outcome.epochs.last().unwrap().train_loss;
        assert!(
            last < 0.1,
            "loss only fell from {first} to {last} after 100 epochs"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_cfg();
        let inputs = tiny_inputs(Variant::Full, &cfg, &[0, 1, 2]);
        let run = || {
            let mut model = build_model(&cfg, Variant::Full).unwrap();
            train(&mut model, &cfg, &inputs, &[]).unwrap();
            model.params_flat()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
    }

    #[test]
    fn empty_training_split_is_rejected() {
        let cfg = tiny_cfg();
        let mut model = build_model(&cfg, Variant::Rd).unwrap();
        assert!(matches!(
            train(&mut model, &cfg, &[], &[]),
            Err(Error::EmptySplit(_))
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = tiny_cfg();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.learning_rate = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.best_metric = "auc".to_string();
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.resize_height = 4;
        assert!(cfg.validate().is_err());
        assert!(tiny_cfg().validate().is_ok());
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::toy().validate().is_ok());
    }

    #[test]
    fn failing_clips_are_skipped_until_the_budget_runs_out() {
        let cfg = tiny_cfg();
        let pp = cfg.preprocess();
        let palette = default_palette(NUM_CLASSES, 3);
        // a maskless detection above threshold breaks masked rendering
        let bad = || {
            let mut clip = tiny_clip(0, 99);
            clip.dets.frames[0].push(crate::detections::Detection::new(classes::CUP, 0.9));
            clip
        };
        let good: Vec<GeneratedClip> = (0..11).map(|i| tiny_clip(i % 6, i as u64)).collect();

        // 1 bad of 12 (8.3%): skipped with a warning
        let mut clips: Vec<&GeneratedClip> = good.iter().collect();
        let bad_clip = bad();
        clips.push(&bad_clip);
        let prepared = prepare_clips(&clips, Variant::Full, &pp, &palette).unwrap();
        assert_eq!(prepared.len(), 11);

        // 1 bad of 5 (20%): aborts
        let clips: Vec<&GeneratedClip> = good[..4].iter().chain([&bad_clip]).collect();
        let err = prepare_clips(&clips, Variant::Full, &pp, &palette).err().unwrap();
        assert!(matches!(err, Error::TooManyFailures { failed: 1, total: 5 }));

        // the raw-only variant never renders masks, so the same clip passes
        let clips: Vec<&GeneratedClip> = vec![&bad_clip];
        assert_eq!(
            prepare_clips(&clips, Variant::Rd, &pp, &palette).unwrap().len(),
            1
        );
    }

    #[test]
    fn loss_decreases_over_training() {
        let cfg = TrainConfig {
            epochs: 8,
            accumulation_steps: 2,
            ..tiny_cfg()
        };
        let inputs = tiny_inputs(Variant::Full, &cfg, &[0, 1, 2, 3]);
        let mut model = build_model(&cfg, Variant::Full).unwrap();
        let outcome = train(&mut model, &cfg, &inputs, &[]).unwrap();
        let first = outcome.epochs.first().unwrap().train_loss;
        let last = outcome.epochs.last().unwrap().train_loss;
        assert!(last < first, "loss went from {first} to {last}");
    }

}
