//! Evaluation: confusion matrices, macro-averaged metrics, the
//! variant-ablation experiment, and its report table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionVector;
use crate::error::{Error, Result};
use crate::model::{ClipInput, Model, Variant};
use crate::par;
use crate::synth::{Dataset, Split};
use crate::train::{self, TrainConfig};

pub const SEEN_SPLIT: &str = "seen_test";
pub const UNSEEN_SPLIT: &str = "unseen_test";

/// Scalar metrics selectable for checkpointing decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    MacroPrecision,
    MacroRecall,
    MacroF1,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Accuracy,
        Metric::MacroPrecision,
        Metric::MacroRecall,
        Metric::MacroF1,
    ];

    pub fn parse(name: &str) -> Result<Metric> {
        match name {
            "accuracy" => Ok(Metric::Accuracy),
            "macro_precision" => Ok(Metric::MacroPrecision),
            "macro_recall" => Ok(Metric::MacroRecall),
            "macro_f1" => Ok(Metric::MacroF1),
            other => Err(Error::Config {
                key: "metric".to_string(),
                reason: format!(
                    "unknown metric {other:?}; expected accuracy, macro_precision, macro_recall or macro_f1"
                ),
            }),
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::MacroPrecision => "macro_precision",
            Metric::MacroRecall => "macro_recall",
            Metric::MacroF1 => "macro_f1",
        }
    }

    pub fn pick(self, m: &Metrics) -> f64 {
        match self {
            Metric::Accuracy => m.accuracy,
            Metric::MacroPrecision => m.macro_precision,
            Metric::MacroRecall => m.macro_recall,
            Metric::MacroF1 => m.macro_f1,
        }
    }
}

/// Integer confusion counts; rows are true labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> ConfusionMatrix {
        let k = rows.len();
        let mut cm = ConfusionMatrix::new(k);
        for (t, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), k);
            for (p, &n) in row.iter().enumerate() {
                cm.counts[t * k + p] = n;
            }
        }
        cm
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn record(&mut self, truth: usize, prediction: usize) -> Result<()> {
        if truth >= self.num_classes || prediction >= self.num_classes {
            return Err(Error::LabelRange {
                label: truth.max(prediction),
                num_activities: self.num_classes,
            });
        }
        self.counts[truth * self.num_classes + prediction] += 1;
        Ok(())
    }

    pub fn count(&self, truth: usize, prediction: usize) -> u64 {
        self.counts[truth * self.num_classes + prediction]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn diagonal_total(&self) -> u64 {
        (0..self.num_classes).map(|i| self.count(i, i)).sum()
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        (0..self.num_classes).map(|p| self.count(truth, p)).sum()
    }

    pub fn col_total(&self, prediction: usize) -> u64 {
        (0..self.num_classes).map(|t| self.count(t, prediction)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Macro averages run over all classes; a class with no predictions (or no
/// instances) contributes 0 to its mean rather than being dropped.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptySplit("confusion matrix".to_string()));
    }
    let k = cm.num_classes();
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for i in 0..k {
        let hit = cm.count(i, i) as f64;
        let col = cm.col_total(i);
        let row = cm.row_total(i);
        let p = if col == 0 { 0.0 } else { hit / col as f64 };
        let r = if row == 0 { 0.0 } else { hit / row as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        p_sum += p;
        r_sum += r;
        f_sum += f;
    }
    Ok(Metrics {
        accuracy: cm.diagonal_total() as f64 / total as f64,
        macro_precision: p_sum / k as f64,
        macro_recall: r_sum / k as f64,
        macro_f1: f_sum / k as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

/// Run the model over a prepared split and score it.
pub fn evaluate(model: &Model, set: &[ClipInput], num_activities: usize) -> Result<EvalResult> {
    if set.is_empty() {
        return Err(Error::EmptySplit("evaluation".to_string()));
    }
    let outcomes: Vec<Result<(usize, usize)>> = par::map_auto(set, |clip| {
        let ctx = model.evaluate(clip)?;
        Ok((clip.label, ctx.prediction))
    });
    let mut cm = ConfusionMatrix::new(num_activities);
    for o in outcomes {
        let (truth, pred) = o?;
        cm.record(truth, pred)?;
    }
    let metrics = compute_metrics(&cm)?;
    Ok(EvalResult {
        confusion: cm,
        metrics,
    })
}

/// Per-clip attention weights paired with per-frame presence of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub clip_id: u64,
    pub label: usize,
    pub target_class: usize,
    pub weights: Vec<f64>,
    pub present: Vec<bool>,
}

/// Collect attention traces over a prepared split. Only meaningful for a
/// variant that applies frame attention.
pub fn collect_attention_traces(
    model: &Model,
    set: &[ClipInput],
    target_class: usize,
) -> Result<Vec<AttentionTrace>> {
    if !model.variant.uses_attention() {
        return Err(Error::Config {
            key: "variant".to_string(),
            reason: format!(
                "attention traces require frame attention; variant {} has none",
                model.variant.label()
            ),
        });
    }
    let traces: Vec<Result<AttentionTrace>> = par::map_auto(set, |clip| {
        let ctx = model.evaluate(clip)?;
        let att: AttentionVector = ctx.attention.ok_or(Error::Config {
            key: "variant".to_string(),
            reason: "forward pass produced no attention weights".to_string(),
        })?;
        let ft = clip.frame_tensor.as_ref().ok_or(Error::Config {
            key: "variant".to_string(),
            reason: "clip was prepared without per-frame counts".to_string(),
        })?;
        let present = (0..ft.num_frames())
            .map(|j| ft.row(j)[target_class] > 0.0)
            .collect();
        Ok(AttentionTrace {
            clip_id: clip.clip_id,
            label: clip.label,
            target_class,
            weights: att.weights.clone(),
            present,
        })
    });
    traces.into_iter().collect()
}

// ---------------------------------------------------------------------------
// ablation experiment

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub best_epoch: usize,
    pub epoch_train_loss: Vec<f64>,
    /// Metrics of the best epoch, per split.
    pub evals: BTreeMap<String, EvalResult>,
    /// Parameters of the best epoch (flat canonical order).
    pub best_params: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub splits: Vec<String>,
    pub variants: Vec<VariantOutcome>,
}

/// Train and score each requested variant on the same dataset and seed.
/// Variants run one after another; each gets a freshly initialized model
/// from the shared seed, so differences come from the pipeline alone.
pub fn run_ablation(
    ds: &Dataset,
    cfg: &TrainConfig,
    variants: &[Variant],
) -> Result<ExperimentReport> {
    let mut outcomes = Vec::with_capacity(variants.len());
    for &variant in variants {
        let prepared = train::prepare_dataset(ds, variant, cfg)?;
        let mut model = train::build_model(cfg, variant)?;
        let eval_sets = [
            (SEEN_SPLIT, prepared.seen_test.as_slice()),
            (UNSEEN_SPLIT, prepared.unseen_test.as_slice()),
        ];
        let outcome = train::train(&mut model, cfg, &prepared.train, &eval_sets)?;
        let best = train::select_best_epoch(&outcome, &cfg.best_metric, &cfg.best_split)?;
        let rec = &outcome.epochs[best];
        outcomes.push(VariantOutcome {
            variant,
            best_epoch: best,
            epoch_train_loss: outcome.epochs.iter().map(|e| e.train_loss).collect(),
            evals: rec.evals.clone(),
            best_params: rec.params.clone(),
        });
    }
    Ok(ExperimentReport {
        seed: cfg.seed,
        splits: vec![SEEN_SPLIT.to_string(), UNSEEN_SPLIT.to_string()],
        variants: outcomes,
    })
}

/// Per-variant drop from seen-domain to unseen-domain accuracy.
pub fn degradation_report(report: &ExperimentReport) -> Vec<(Variant, f64)> {
    report
        .variants
        .iter()
        .filter_map(|v| {
            let seen = v.evals.get(SEEN_SPLIT)?.metrics.accuracy;
            let unseen = v.evals.get(UNSEEN_SPLIT)?.metrics.accuracy;
            Some((v.variant, seen - unseen))
        })
        .collect()
}

/// Fixed-width text table: one row per variant, metric columns grouped by
/// split, then the seen-to-unseen degradation lines.
pub fn format_report(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let name_w = 12usize;
    let _ = write!(out, "{:<name_w$}", "variant");
    for split in &report.splits {
        let _ = write!(out, " | {:^31}", split);
    }
    out.push('\n');
    let _ = write!(out, "{:<name_w$}", "");
    for _ in &report.splits {
        let _ = write!(out, " | {:>7}{:>8}{:>8}{:>8}", "acc", "prec", "rec", "f1");
    }
    out.push('\n');
    for v in &report.variants {
        let _ = write!(out, "{:<name_w$}", v.variant.label());
        for split in &report.splits {
            match v.evals.get(split) {
                Some(e) => {
                    let m = &e.metrics;
                    let _ = write!(
                        out,
                        " | {:>7.4}{:>8.4}{:>8.4}{:>8.4}",
                        m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1
                    );
                }
                None => {
                    let _ = write!(out, " | {:^31}", "-");
                }
            }
        }
        let _ = writeln!(out, "  (best epoch {})", v.best_epoch);
    }
    out.push('\n');
    out.push_str("degradation (seen accuracy minus unseen accuracy):\n");
    for (variant, gap) in degradation_report(report) {
        let _ = writeln!(out, "{:<name_w$} {:+.4}", variant.label(), gap);
    }
    out
}

/// Convenience census used by reporting code and tests.
pub fn split_sizes(ds: &Dataset) -> BTreeMap<Split, usize> {
    let mut out = BTreeMap::new();
    for c in &ds.manifest.clips {
        *out.entry(c.split).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn worked_two_class_example() {
        let cm = ConfusionMatrix::from_rows(&[vec![8, 2], vec![4, 6]]);
        let m = compute_metrics(&cm).unwrap();
        assert!((m.accuracy - 0.7).abs() < 1e-15);
        let p0: f64 = 8.0 / 12.0;
        let p1: f64 = 6.0 / 8.0;
        assert!((m.macro_precision - (p0 + p1) / 2.0).abs() < 1e-15);
        let (r0, r1) = (0.8, 0.6);
        assert!((m.macro_recall - (r0 + r1) / 2.0).abs() < 1e-15);
        let f0 = 2.0 * p0 * r0 / (p0 + r0);
        let f1 = 2.0 * p1 * r1 / (p1 + r1);
        assert!((m.macro_f1 - (f0 + f1) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_matrix_scores_one_everywhere() {
        let cm = ConfusionMatrix::from_rows(&[
            vec![5, 0, 0],
            vec![0, 3, 0],
            vec![0, 0, 9],
        ]);
        let m = compute_metrics(&cm).unwrap();
        for v in [m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn absent_class_contributes_zero_to_macro_means() {
        // class 2 never occurs and is never predicted
        let cm = ConfusionMatrix::from_rows(&[
            vec![4, 0, 0],
            vec![0, 4, 0],
            vec![0, 0, 0],
        ]);
        let m = compute_metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!((m.macro_precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.macro_recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    /// Independent re-derivation with explicit double loops.
    fn brute_metrics(cm: &ConfusionMatrix) -> Metrics {
        let k = cm.num_classes();
        let mut correct = 0u64;
        let mut total = 0u64;
        for t in 0..k {
            for p in 0..k {
                total += cm.count(t, p);
                if t == p {
                    correct += cm.count(t, p);
                }
            }
        }
        let mut ps = 0.0;
        let mut rs = 0.0;
        let mut fs = 0.0;
        for i in 0..k {
            let mut pred_i = 0u64;
            let mut true_i = 0u64;
            for j in 0..k {
                pred_i += cm.count(j, i);
                true_i += cm.count(i, j);
            }
            let p = if pred_i > 0 {
                cm.count(i, i) as f64 / pred_i as f64
            } else {
                0.0
            };
            let r = if true_i > 0 {
                cm.count(i, i) as f64 / true_i as f64
            } else {
                0.0
            };
            ps += p;
            rs += r;
            fs += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        Metrics {
            accuracy: correct as f64 / total as f64,
            macro_precision: ps / k as f64,
            macro_recall: rs / k as f64,
            macro_f1: fs / k as f64,
        }
    }

    #[test]
    fn random_matrices_match_brute_force_and_micro_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let k = rng.random_range(2..8);
            let mut cm = ConfusionMatrix::new(k);
            for _ in 0..rng.random_range(1..200) {
                cm.record(rng.random_range(0..k), rng.random_range(0..k))
                    .unwrap();
            }
            let m = compute_metrics(&cm).unwrap();
            let b = brute_metrics(&cm);
            assert!((m.accuracy - b.accuracy).abs() < 1e-12);
            assert!((m.macro_precision - b.macro_precision).abs() < 1e-12);
            assert!((m.macro_recall - b.macro_recall).abs() < 1e-12);
            assert!((m.macro_f1 - b.macro_f1).abs() < 1e-12);
            // micro precision and micro recall both reduce to accuracy
            let micro_r: f64 = cm.diagonal_total() as f64 / cm.total() as f64;
            assert!((m.accuracy - micro_r).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_random_predictions_sit_near_chance() {
        let k = 4;
        let n_per_class = 1000u32;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cm = ConfusionMatrix::new(k);
        for truth in 0..k {
            for _ in 0..n_per_class {
                cm.record(truth, rng.random_range(0..k)).unwrap();
            }
        }
        let m = compute_metrics(&cm).unwrap();
        let n = (k as u32 * n_per_class) as f64;
        let p = 1.0 / k as f64;
        let sigma = (p * (1.0 - p) / n).sqrt();
        assert!(
            (m.accuracy - p).abs() <= 3.0 * sigma,
            "accuracy {} vs chance {p} (3 sigma = {})",
            m.accuracy,
            3.0 * sigma
        );
    }

    #[test]
    fn empty_matrix_is_rejected() {
        let cm = ConfusionMatrix::new(3);
        assert!(matches!(compute_metrics(&cm), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(cm.record(2, 0).is_err());
        assert!(cm.record(0, 5).is_err());
        assert!(cm.record(1, 1).is_ok());
    }

    #[test]
    fn metric_parsing() {
        assert_eq!(Metric::parse("accuracy").unwrap(), Metric::Accuracy);
        assert_eq!(Metric::parse("macro_f1").unwrap(), Metric::MacroF1);
        assert!(Metric::parse("auc").is_err());
        for m in Metric::ALL {
            assert_eq!(Metric::parse(m.key()).unwrap(), m);
        }
    }

    #[test]
    fn report_table_lists_every_variant_and_split() {
        let metrics = Metrics {
            accuracy: 0.75,
            macro_precision: 0.7,
            macro_recall: 0.65,
            macro_f1: 0.6,
        };
        let eval = EvalResult {
            confusion: ConfusionMatrix::from_rows(&[vec![3, 1], vec![1, 3]]),
            metrics,
        };
        let mut evals = BTreeMap::new();
        evals.insert(SEEN_SPLIT.to_string(), eval.clone());
        evals.insert(UNSEEN_SPLIT.to_string(), eval.clone());
        let report = ExperimentReport {
            seed: 0,
            splits: vec![SEEN_SPLIT.to_string(), UNSEEN_SPLIT.to_string()],
            variants: Variant::ALL
                .iter()
                .map(|&variant| VariantOutcome {
                    variant,
                    best_epoch: 3,
                    epoch_train_loss: vec![1.0, 0.5],
                    evals: evals.clone(),
                    best_params: vec![],
                })
                .collect(),
        };
        let text = format_report(&report);
        for v in Variant::ALL {
            assert!(text.contains(v.label()), "missing {}", v.label());
        }
        assert!(text.contains(SEEN_SPLIT) && text.contains(UNSEEN_SPLIT));
        assert!(text.contains("0.7500"));
        assert!(text.contains("degradation"));
        let gaps = degradation_report(&report);
        assert_eq!(gaps.len(), 4);
        assert!(gaps.iter().all(|(_, g)| g.abs() < 1e-12));
    }
}
