//! Training loop, evaluation metrics and the eight-row ablation runner.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::augment_window;
use crate::error::{Error, Result};
use crate::model::{loss_and_grads, predict_batch, step_lr, ModelConfig, ModelParams, Sgd};
use crate::pipeline::{Pipeline, Toggles};
use crate::rng::{derive_seed, rng_for};
use crate::skeleton::{ClassTable, SkeletonSequence};
use crate::windowing::WindowTensor;

pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs (0-based) at which the learning rate is multiplied by 0.1.
    pub milestones: Vec<usize>,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 30,
            milestones: vec![20],
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be > 0"));
        }
        self.validate_schedule()
    }

    /// Everything except the strict positivity of the learning rate, which a
    /// frozen (lr = 0) run may relax.
    pub fn validate_schedule(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.momentum", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Center windows of labeled sequences, checked against `num_classes`.
pub fn prepare_windows(pipeline: &Pipeline, data: &[SkeletonSequence], num_classes: usize) -> Result<Vec<(WindowTensor, usize)>> {
    data.iter()
        .map(|seq| {
            let label = seq
                .label
                .ok_or_else(|| Error::Data(format!("{}: sequence has no label", seq.source)))?;
            if label >= num_classes {
                return Err(Error::Data(format!(
                    "{}: label {label} outside {num_classes} classes",
                    seq.source
                )));
            }
            Ok((pipeline.sequence_window(seq)?, label))
        })
        .collect()
}

/// Shuffled minibatch SGD. Augmentation and noise run only here, per sample,
/// seeded by (augmentation seed, train seed, epoch, sample).
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    pipeline: &Pipeline,
    data: &[SkeletonSequence],
) -> Result<(ModelParams<f32>, TrainHistory)> {
    let windows = prepare_windows(pipeline, data, model_cfg.num_classes)?;
    train_windows(model_cfg, train_cfg, pipeline, &windows, ModelParams::init(model_cfg, train_cfg.seed)?)
}

/// Train from prepared windows and explicit initial parameters.
pub fn train_windows(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    pipeline: &Pipeline,
    windows: &[(WindowTensor, usize)],
    init: ModelParams<f32>,
) -> Result<(ModelParams<f32>, TrainHistory)> {
    model_cfg.validate()?;
    train_cfg.validate_schedule()?;
    pipeline.validate()?;
    if windows.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if let Some((w, _)) = windows.iter().find(|(w, _)| w.channels() != model_cfg.input_channels) {
        return Err(Error::Shape {
            what: "input channels D".into(),
            expected: model_cfg.input_channels,
            actual: w.channels(),
        });
    }
    let aug = &pipeline.augmentation;
    let augmenting = aug.noise || aug.augmentation;
    let mut params = init;
    let mut opt = Sgd::new(&params, train_cfg.momentum);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..windows.len()).collect();

    for epoch in 0..train_cfg.epochs {
        let lr = step_lr(train_cfg.learning_rate, &train_cfg.milestones, epoch);
        order.sort_unstable();
        order.shuffle(&mut rng_for(&[train_cfg.seed, 0x5407, epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let augmented: Vec<WindowTensor> = if augmenting {
                chunk
                    .iter()
                    .map(|&i| {
                        let mut rng = rng_for(&[aug.seed, train_cfg.seed, epoch as u64, i as u64]);
                        augment_window(&windows[i].0, aug, &mut rng)
                    })
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let batch: Vec<(&WindowTensor, usize)> = chunk
                .iter()
                .enumerate()
                .map(|(k, &i)| (if augmenting { &augmented[k] } else { &windows[i].0 }, windows[i].1))
                .collect();
            let dropout_seed = derive_seed(&[train_cfg.seed, epoch as u64, step as u64]);
            let out = loss_and_grads(&params, &batch, train_cfg.weight_decay, dropout_seed)
                .map_err(|e| match e {
                    Error::NonFinite { layer } => Error::NonFinite {
                        layer: format!("{layer} (epoch {epoch}, step {step})"),
                    },
                    other => other,
                })?;
            loss_sum += out.loss * chunk.len() as f64;
            for (col, (_, label)) in out.logits.columns().into_iter().zip(&batch) {
                let l: Vec<f64> = col.iter().map(|v| f64::from(*v)).collect();
                if crate::model::network::argmax(&l) == *label {
                    correct += 1;
                }
            }
            opt.step(&mut params, &out.grads, lr);
            params.update_running_stats(&out.moments, BN_MOMENTUM);
            if !params.all_finite() {
                return Err(Error::NonFinite {
                    layer: format!("parameters after epoch {epoch}, step {step}"),
                });
            }
        }
        history.epochs.push(EpochStats {
            epoch,
            learning_rate: lr,
            loss: loss_sum / windows.len() as f64,
            train_accuracy: correct as f64 / windows.len() as f64,
        });
    }
    Ok((params, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub fingerprint: String,
    pub total: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// `None` for classes with no samples.
    pub per_class_recall: Vec<Option<f64>>,
    pub predictions: Vec<usize>,
}

impl EvalReport {
    pub fn from_predictions(dataset: &str, fingerprint: &str, num_classes: usize, labels: &[usize], predicted: &[usize]) -> Result<Self> {
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&l, &p) in labels.iter().zip(predicted) {
            if l >= num_classes || p >= num_classes {
                return Err(Error::Data(format!("label {} outside {num_classes} classes", l.max(p))));
            }
            confusion[l][p] += 1;
        }
        let total = labels.len();
        let trace: usize = (0..num_classes).map(|k| confusion[k][k]).sum();
        let per_class_recall = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[k] as f64 / n as f64)
            })
            .collect();
        Ok(EvalReport {
            dataset: dataset.to_string(),
            fingerprint: fingerprint.to_string(),
            total,
            accuracy: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
            confusion,
            per_class_recall,
            predictions: predicted.to_vec(),
        })
    }

    /// Human-readable summary with the confusion matrix.
    pub fn render(&self, classes: &ClassTable) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset      {}", self.dataset);
        let _ = writeln!(s, "fingerprint  {}", self.fingerprint);
        let _ = writeln!(s, "samples      {}", self.total);
        let _ = writeln!(s, "accuracy     {:.4}", self.accuracy);
        let width = classes.names().iter().map(|n| n.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(s, "\n{:width$}  recall  confusion (row = true)", "class");
        for (k, row) in self.confusion.iter().enumerate() {
            let name = classes.name(k).unwrap_or("?");
            let recall = self.per_class_recall[k].map_or("   -  ".to_string(), |r| format!("{r:.4}"));
            let cells: Vec<String> = row.iter().map(|c| format!("{c:3}")).collect();
            let _ = writeln!(s, "{name:width$}  {recall}  {}", cells.join(" "));
        }
        s
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3))
}

/// Stable hash of everything that shapes evaluation.
pub fn fingerprint(model: &ModelConfig, pipeline: &Pipeline) -> String {
    let doc = serde_json::json!({
        "model": model,
        "normalization": pipeline.normalization,
        "window": pipeline.window,
    });
    format!("{:016x}", fnv1a(doc.to_string().as_bytes()))
}

/// EVAL-mode prediction on each sequence's center window. Noise and
/// augmentation settings are ignored.
pub fn evaluate(params: &ModelParams<f32>, data: &[SkeletonSequence], pipeline: &Pipeline, dataset: &str) -> Result<EvalReport> {
    let k = params.config.num_classes;
    let windows = prepare_windows(pipeline, data, k)?;
    evaluate_windows(params, &windows, pipeline, dataset)
}

pub fn evaluate_windows(params: &ModelParams<f32>, windows: &[(WindowTensor, usize)], pipeline: &Pipeline, dataset: &str) -> Result<EvalReport> {
    let mut predicted = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(32) {
        let refs: Vec<&WindowTensor> = chunk.iter().map(|(w, _)| w).collect();
        predicted.extend(predict_batch(params, &refs)?.into_iter().map(|(c, _)| c));
    }
    let labels: Vec<usize> = windows.iter().map(|(_, l)| *l).collect();
    EvalReport::from_predictions(dataset, &fingerprint(&params.config, pipeline), params.config.num_classes, &labels, &predicted)
}

/// Relabel `data` (labelled by `from`) into the ids of `to`.
pub fn align_labels(data: &[SkeletonSequence], from: &ClassTable, to: &ClassTable) -> Result<Vec<SkeletonSequence>> {
    let map = from.map_onto(to)?;
    data.iter()
        .map(|s| {
            let label = match s.label {
                Some(l) => Some(*map.get(l).ok_or_else(|| Error::Data(format!("{}: label {l} outside class table", s.source)))?),
                None => None,
            };
            Ok(s.clone().with_label(label))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    pub toggles: Toggles,
    /// Reference (in-domain, shifted) accuracies in percent.
    pub reference: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationGrid {
    pub rows: Vec<AblationRow>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        let row = |name, noise, augmentation, normalization, reference| AblationRow {
            name,
            toggles: Toggles { noise, augmentation, normalization },
            reference,
        };
        AblationGrid {
            rows: vec![
                row("Baseline", false, false, false, (74.0, 20.98)),
                row("Baseline + noise", true, false, false, (75.17, 23.45)),
                row("Baseline + augmentation", false, true, false, (75.3, 16.04)),
                row("Baseline + augmentation + noise", true, true, false, (74.3, 25.92)),
                row("Baseline + normalization", false, false, true, (74.6, 40.71)),
                row("Baseline + normalization + noise", true, false, true, (71.6, 37.03)),
                row("Baseline + normalization + augmentation", false, true, true, (70.0, 49.38)),
                row("Baseline + normalization + augmentation + noise", true, true, true, (68.9, 46.91)),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub row: AblationRow,
    pub in_domain: EvalReport,
    pub shifted: EvalReport,
}

/// Train one model per row from a shared initialization and evaluate it on
/// both test sets.
pub fn run_ablation(
    grid: &AblationGrid,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    pipeline: &Pipeline,
    train_data: &[SkeletonSequence],
    in_domain: &[SkeletonSequence],
    shifted: &[SkeletonSequence],
    mut progress: impl FnMut(&AblationResult),
) -> Result<Vec<AblationResult>> {
    let init = ModelParams::init(model_cfg, train_cfg.seed)?;
    let mut out = Vec::with_capacity(grid.rows.len());
    for row in &grid.rows {
        let p = pipeline.with_toggles(row.toggles);
        let windows = prepare_windows(&p, train_data, model_cfg.num_classes)?;
        let (params, _) = train_windows(model_cfg, train_cfg, &p, &windows, init.clone())?;
        let result = AblationResult {
            row: row.clone(),
            in_domain: evaluate(&params, in_domain, &p, "in_domain")?,
            shifted: evaluate(&params, shifted, &p, "shifted")?,
        };
        progress(&result);
        out.push(result);
    }
    Ok(out)
}

pub const ABLATION_CSV_HEADER: &str = "config,noise,augmentation,normalization,acc_in_domain,acc_shifted";

pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut s = format!("{ABLATION_CSV_HEADER}\n");
    for r in results {
        let t = r.row.toggles;
        let _ = writeln!(
            s,
            "{},{},{},{},{:.4},{:.4}",
            r.row.name, t.noise, t.augmentation, t.normalization, r.in_domain.accuracy, r.shifted.accuracy
        );
    }
    s
}

/// Aligned text table with the reference figures alongside.
pub fn ablation_table(results: &[AblationResult]) -> String {
    let width = results.iter().map(|r| r.row.name.len()).max().unwrap_or(6).max(6);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:width$}  {:>9}  {:>9}  {:>13}  {:>13}",
        "config", "in-domain", "shifted", "ref in-domain", "ref recorded"
    );
    for r in results {
        let _ = writeln!(
            s,
            "{:width$}  {:>8.2}%  {:>8.2}%  {:>12.2}%  {:>12.2}%",
            r.row.name,
            100.0 * r.in_domain.accuracy,
            100.0 * r.shifted.accuracy,
            r.row.reference.0,
            r.row.reference.1
        );
    }
    s
}
