//! Seeded training loop, Adam optimizer, evaluation and the four-variant
//! ablation driver.

use crate::backbone::{GruNet, ModelConfig, Variant};
use crate::data::{make_batch, Sample};
use crate::error::{Error, Result};
use crate::gdam::Mode;
use crate::loss::hybrid_loss;
use crate::metrics::{confusion, metrics, threshold, ConfusionCounts, MetricsReport};
use crate::scalar::Scalar;
use ndarray::{Array2, ArrayD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: String,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Optional hard cap on total optimizer steps (for toy runs).
    pub max_steps: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // the published recipe: Adam, lr 1e-4, batch 2, 100 epochs
        TrainConfig {
            lr: 1e-4,
            batch_size: 2,
            epochs: 100,
            optimizer: "adam".to_string(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 42,
            max_steps: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.optimizer != "adam" {
            return Err(Error::Config(format!(
                "unsupported optimizer {:?} (only adam)",
                self.optimizer
            )));
        }
        Ok(())
    }
}

/// Adam with bias correction; state keyed by parameter name.
pub struct Adam<F: Scalar> {
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    t: u64,
    m: BTreeMap<String, ArrayD<F>>,
    v: BTreeMap<String, ArrayD<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam {
            lr: F::of_f64(cfg.lr),
            beta1: F::of_f64(cfg.beta1),
            beta2: F::of_f64(cfg.beta2),
            eps: F::of_f64(cfg.eps),
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, model: &mut GruNet<F>, grads: &BTreeMap<String, ArrayD<F>>) {
        self.t += 1;
        let one = F::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        for (name, value) in model.params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            ndarray::Zip::from(value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = self.beta1 * *m + (one - self.beta1) * g;
                    *v = self.beta2 * *v + (one - self.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w = *w - self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<EvalReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_dice: Option<f64>,
    pub steps: usize,
}

impl TrainingRecord {
    /// JSON-lines form, one record per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Both evaluation protocols: per-sample mean (headline) and pooled counts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sample_mean: MetricsReport,
    pub pooled: MetricsReport,
    pub n_samples: usize,
}

fn noise_seed(seed: u64, epoch: usize, step: usize) -> u64 {
    seed.wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add((epoch as u64) << 20)
        .wrapping_add(step as u64)
}

/// Deterministic seeded training. Returns the per-epoch record; when
/// `checkpoint_dir` is set, writes `best.ckpt.json` (best validation Dice)
/// and `last.ckpt.json`.
pub fn train<F: Scalar>(
    model: &mut GruNet<F>,
    tcfg: &TrainConfig,
    train_samples: &[Sample],
    val_samples: &[Sample],
    text_raw: Option<&Array2<f64>>,
) -> Result<TrainingRecord> {
    tcfg.validate()?;
    model.cfg.validate()?;
    if train_samples.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if let Some(dir) = &tcfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut opt = Adam::<F>::new(tcfg);
    let mut record = TrainingRecord {
        epochs: Vec::new(),
        best_epoch: None,
        best_val_dice: None,
        steps: 0,
    };
    let mut global_step = 0usize;
    'outer: for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(tcfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let mut losses = Vec::new();
        for chunk in order.chunks(tcfg.batch_size) {
            if let Some(max) = tcfg.max_steps {
                if global_step >= max {
                    break 'outer;
                }
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_samples[i]).collect();
            let (images, masks) = make_batch::<F>(&batch);
            let pass = model.forward(
                &images,
                text_raw,
                Mode::Train,
                noise_seed(tcfg.seed, epoch, global_step),
                true,
                false,
            )?;
            let truth = crate::autodiff::Tensor::constant(masks);
            let loss = hybrid_loss(&pass.pred, &truth)?;
            let loss_val = loss.scalar().to_f64_lossy();
            if !loss_val.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: global_step,
                });
            }
            loss.backward();
            let grads = pass.gradients();
            opt.step(model, &grads);
            losses.push(loss_val);
            global_step += 1;
        }
        if losses.is_empty() {
            break;
        }

        let val = if val_samples.is_empty() {
            None
        } else {
            Some(evaluate(model, val_samples, text_raw)?)
        };
        if let Some(v) = &val {
            let dice = v.per_sample_mean.dice;
            if record.best_val_dice.map_or(true, |b| dice > b) {
                record.best_val_dice = Some(dice);
                record.best_epoch = Some(epoch);
                if let Some(dir) = &tcfg.checkpoint_dir {
                    crate::checkpoint::save(&dir.join("best.ckpt.json"), model, text_raw)?;
                }
            }
        }
        record.epochs.push(EpochRecord {
            epoch,
            train_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            val,
        });
        record.steps = global_step;
    }
    record.steps = global_step;
    if let Some(dir) = &tcfg.checkpoint_dir {
        crate::checkpoint::save(&dir.join("last.ckpt.json"), model, text_raw)?;
    }
    Ok(record)
}

/// Probability map for one sample, `(H, W)`, inference mode.
pub fn predict<F: Scalar>(
    model: &mut GruNet<F>,
    sample: &Sample,
    text_raw: Option<&Array2<f64>>,
) -> Result<Array2<f64>> {
    let (images, _) = make_batch::<F>(&[sample]);
    let pass = model.forward(&images, text_raw, Mode::Infer, 0, false, false)?;
    let v = pass.pred.value();
    let (h, w) = (v.shape()[1], v.shape()[2]);
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[(y, x)] = v[[0, y, x, 0]].to_f64_lossy();
        }
    }
    Ok(out)
}

/// Hard metrics at threshold 0.5, reported both as the mean of per-sample
/// metrics and from pooled confusion counts.
pub fn evaluate<F: Scalar>(
    model: &mut GruNet<F>,
    samples: &[Sample],
    text_raw: Option<&Array2<f64>>,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("evaluate: empty sample list".into()));
    }
    let mut pooled = ConfusionCounts::default();
    let mut sums = [0.0f64; 4];
    for s in samples {
        let (images, masks) = make_batch::<F>(&[s]);
        let pass = model.forward(&images, text_raw, Mode::Infer, 0, false, false)?;
        let pred_bin = threshold(pass.pred.value(), 0.5);
        let counts = confusion(&pred_bin, &masks)?;
        let m = metrics(&counts);
        sums[0] += m.dice;
        sums[1] += m.iou;
        sums[2] += m.precision;
        sums[3] += m.recall;
        pooled = pooled.add(&counts);
    }
    let n = samples.len() as f64;
    let mut per_sample_mean = metrics(&pooled);
    per_sample_mean.dice = sums[0] / n;
    per_sample_mean.iou = sums[1] / n;
    per_sample_mean.precision = sums[2] / n;
    per_sample_mean.recall = sums[3] / n;
    per_sample_mean.counts = pooled;
    Ok(EvalReport {
        per_sample_mean,
        pooled: metrics(&pooled),
        n_samples: samples.len(),
    })
}

/// Published ablation reference (Dice on MonuSeg) attached to the table as a
/// static annotation column.
pub fn reference_dice(variant: Variant) -> f64 {
    match variant {
        Variant::Baseline => 77.74,
        Variant::CdrbNoController => 78.82,
        Variant::Cdrb => 79.13,
        Variant::Full => 80.35,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub dice: f64,
    pub recall: f64,
    pub precision: f64,
    pub iou: f64,
    pub reference_dice: f64,
}

pub struct AblationResult<F: Scalar> {
    pub rows: Vec<AblationRow>,
    pub models: Vec<GruNet<F>>,
}

/// Train all four variants under the same seed and recipe; rows follow the
/// published column order (Dice, Recall, Precision, IoU).
pub fn ablate<F: Scalar>(
    base_cfg: &ModelConfig,
    tcfg: &TrainConfig,
    train_samples: &[Sample],
    val_samples: &[Sample],
    test_samples: &[Sample],
    text_raw: Option<&Array2<f64>>,
) -> Result<AblationResult<F>> {
    let mut rows = Vec::new();
    let mut models = Vec::new();
    for variant in Variant::ALL {
        let mut cfg = base_cfg.clone();
        cfg.variant = variant;
        let mut model = GruNet::<F>::new(cfg)?;
        let text = variant.uses_text().then_some(text_raw).flatten();
        let mut vcfg = tcfg.clone();
        vcfg.checkpoint_dir = tcfg
            .checkpoint_dir
            .as_ref()
            .map(|d| d.join(variant.as_str()));
        train(&mut model, &vcfg, train_samples, val_samples, text)?;
        let eval = evaluate(&mut model, test_samples, text)?;
        let m = eval.per_sample_mean;
        rows.push(AblationRow {
            variant: variant.as_str().to_string(),
            dice: m.dice,
            recall: m.recall,
            precision: m.precision,
            iou: m.iou,
            reference_dice: reference_dice(variant),
        });
        models.push(model);
    }
    Ok(AblationResult { rows, models })
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("model,dice,recall,precision,iou,reference_dice\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant, r.dice, r.recall, r.precision, r.iou, r.reference_dice
        ));
    }
    out
}

pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    std::fs::write(path, ablation_csv(rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use crate::text::{encode_labels, LabelSet, StubEncoder};

    fn tiny_cfg(variant: Variant, seed: u64) -> ModelConfig {
        ModelConfig {
            input_height: 16,
            input_width: 16,
            depth: 2,
            base_width: 8,
            alpha: 1.0,
            variant,
            seed,
            ..ModelConfig::default()
        }
    }

    fn stub_text() -> Array2<f64> {
        encode_labels(&LabelSet::default_labels(), &StubEncoder::new(4, 1)).unwrap()
    }

    fn quick_tcfg(steps: usize) -> TrainConfig {
        TrainConfig {
            epochs: 100,
            max_steps: Some(steps),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_follow_the_published_recipe() {
        let t = TrainConfig::default();
        assert_eq!(t.lr, 1e-4);
        assert_eq!(t.batch_size, 2);
        assert_eq!(t.epochs, 100);
        assert_eq!(t.optimizer, "adam");
        assert_eq!((t.beta1, t.beta2, t.eps), (0.9, 0.999, 1e-8));
        t.validate().unwrap();
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        for bad in [
            TrainConfig {
                lr: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                optimizer: "sgd".into(),
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().unwrap_err().is_config());
        }
    }

    #[test]
    fn one_small_adam_step_decreases_the_loss() {
        let samples = make_synthetic(2, 16, 3);
        let refs: Vec<&Sample> = samples.iter().collect();
        let (images, masks) = make_batch::<f64>(&refs);
        let truth = crate::autodiff::Tensor::constant(masks);
        for seed in 0..5u64 {
            let mut model = GruNet::<f64>::new(tiny_cfg(Variant::Cdrb, seed)).unwrap();
            let tcfg = TrainConfig {
                lr: 1e-5,
                ..TrainConfig::default()
            };
            let mut opt = Adam::new(&tcfg);
            let pass = model
                .forward(&images, None, Mode::Train, 0, true, false)
                .unwrap();
            let loss = hybrid_loss(&pass.pred, &truth).unwrap();
            let before = loss.scalar();
            loss.backward();
            let grads = pass.gradients();
            opt.step(&mut model, &grads);
            let pass2 = model
                .forward(&images, None, Mode::Train, 0, false, false)
                .unwrap();
            let after = hybrid_loss(&pass2.pred, &truth).unwrap().scalar();
            assert!(after < before, "seed {seed}: {before} -> {after}");
        }
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let samples = make_synthetic(4, 16, 5);
        let (train_s, val_s) = samples.split_at(3);
        let text = stub_text();
        let run = || {
            let mut model = GruNet::<f64>::new(tiny_cfg(Variant::Full, 7)).unwrap();
            let record = train(
                &mut model,
                &quick_tcfg(6),
                train_s,
                val_s,
                Some(&text),
            )
            .unwrap();
            (record.to_jsonl(), predict(&mut model, &samples[0], Some(&text)).unwrap())
        };
        let (jsonl_a, pred_a) = run();
        let (jsonl_b, pred_b) = run();
        assert_eq!(jsonl_a, jsonl_b);
        assert_eq!(pred_a, pred_b);
        assert!(!jsonl_a.is_empty());
    }

    #[test]
    fn training_logs_epochs_and_tracks_the_best() {
        let samples = make_synthetic(4, 16, 6);
        let (train_s, val_s) = samples.split_at(3);
        let dir = tempfile::tempdir().unwrap();
        let mut model = GruNet::<f64>::new(tiny_cfg(Variant::Baseline, 8)).unwrap();
        let tcfg = TrainConfig {
            epochs: 2,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..TrainConfig::default()
        };
        let record = train(&mut model, &tcfg, train_s, val_s, None).unwrap();
        assert_eq!(record.epochs.len(), 2);
        assert_eq!(record.steps, 4);
        assert!(record.best_epoch.is_some());
        assert!(record.best_val_dice.is_some());
        assert!(dir.path().join("best.ckpt.json").exists());
        assert!(dir.path().join("last.ckpt.json").exists());
        for e in &record.epochs {
            assert!(e.train_loss.is_finite());
            assert!(e.val.is_some());
        }
    }

    #[test]
    fn perfect_and_constant_predictors_bracket_evaluation() {
        let samples = make_synthetic(3, 16, 7);
        // oracle path: feed the ground truth in as the prediction
        let mut pooled = ConfusionCounts::default();
        let mut dices = Vec::new();
        for s in &samples {
            let truth = s.mask.clone().into_dyn();
            let c = confusion(&truth, &truth).unwrap();
            dices.push(metrics(&c).dice);
            pooled = pooled.add(&c);
        }
        assert!(dices.iter().all(|d| *d == 1.0));
        assert_eq!(metrics(&pooled).dice, 1.0);
        // an untrained model emitting p <= 0.5 everywhere scores recall 0
        let mut model = GruNet::<f64>::new(tiny_cfg(Variant::Baseline, 9)).unwrap();
        model.build(None).unwrap();
        for (_, v) in model.params.iter_mut() {
            v.fill(0.0);
        }
        let report = evaluate(&mut model, &samples, None).unwrap();
        assert_eq!(report.per_sample_mean.recall, 0.0);
        assert_eq!(report.n_samples, 3);
    }

    #[test]
    fn aggregate_dice_is_the_mean_of_per_sample_dices() {
        let samples = make_synthetic(3, 16, 10);
        let mut model = GruNet::<f64>::new(tiny_cfg(Variant::Cdrb, 11)).unwrap();
        let report = evaluate(&mut model, &samples, None).unwrap();
        let mut sum = 0.0;
        for s in &samples {
            let p = predict(&mut model, s, None).unwrap();
            let bin = threshold(&p.into_dyn(), 0.5);
            let c = confusion(&bin, &s.mask.clone().into_dyn()).unwrap();
            sum += metrics(&c).dice;
        }
        assert!((report.per_sample_mean.dice - sum / 3.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_loss_aborts_with_context() {
        let samples = make_synthetic(2, 16, 12);
        let mut model = GruNet::<f64>::new(tiny_cfg(Variant::Baseline, 13)).unwrap();
        model.build(None).unwrap();
        for (_, v) in model.params.iter_mut() {
            v.fill(f64::NAN);
        }
        let err = train(&mut model, &quick_tcfg(1), &samples, &[], None).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, step: 0 }), "{err}");
    }

    #[test]
    fn reference_dice_matches_the_published_table() {
        assert_eq!(reference_dice(Variant::Baseline), 77.74);
        assert_eq!(reference_dice(Variant::CdrbNoController), 78.82);
        assert_eq!(reference_dice(Variant::Cdrb), 79.13);
        assert_eq!(reference_dice(Variant::Full), 80.35);
    }

    #[test]
    fn ablation_emits_four_csv_rows_in_table_order() {
        let samples = make_synthetic(4, 16, 14);
        let (train_s, rest) = samples.split_at(2);
        let (val_s, test_s) = rest.split_at(1);
        let text = stub_text();
        let result = ablate::<f64>(
            &tiny_cfg(Variant::Full, 15),
            &quick_tcfg(2),
            train_s,
            val_s,
            test_s,
            Some(&text),
        )
        .unwrap();
        let csv = ablation_csv(&result.rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "model,dice,recall,precision,iou,reference_dice");
        for (line, v) in lines[1..].iter().zip(Variant::ALL) {
            assert!(line.starts_with(v.as_str()), "{line}");
        }
        for row in &result.rows {
            for v in [row.dice, row.recall, row.precision, row.iou] {
                assert!(v.is_finite() && (0.0..=1.0).contains(&v));
            }
        }
    }
}
