//! The experiment runner: split, render, augment, train, select, evaluate.
//!
//! The hold-out side of the split never reaches gradient computation: records
//! are tagged by the split and the batch assembler aborts on a hold-out tag.
//! Hold-out and evaluation inputs skip the geometric augmentation but still
//! get the fixed 0.01 rescale (identity augmentation), so train and eval see
//! the same value scale. With `deterministic` set, the report redacts
//! wall-clock time and byte-identical reruns are guaranteed; everything is
//! single-threaded and seeded either way.

use std::time::Instant;

use crate::baselines::{self, ForestSpec};
use crate::data::{self, DatasetManifest, ImageRecord, SplitTag};
use crate::emotion::{to_affect_triple, Label};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, InputKind, ModelSel};
use crate::harness::report::{EpochStats, RunReport};
use crate::heatmap::{self, FaceGeometry, HeatmapTensor, KernelKind};
use crate::imageproc::{self, AugmentParams};
use crate::models;
use crate::nn::checkpoint;
use crate::nn::layers::{softmax_xent_backward, softmax_xent_loss};
use crate::nn::model::{InputShape, Network};
use crate::nn::optim::Optimizer;
use crate::nn::{Mode, Tensor};
use crate::rng;

/// Renders the record's faces into a heatmap at the record's own size.
pub fn render_record(rec: &ImageRecord, kind: KernelKind) -> Result<HeatmapTensor> {
    let mut faces = Vec::with_capacity(rec.faces.len());
    for f in &rec.faces {
        faces.push((
            to_affect_triple(&f.scores7),
            FaceGeometry::from_box(f.x, f.y, f.w, f.h)?,
        ));
    }
    Ok(heatmap::compose(
        &faces,
        kind,
        (rec.height as usize, rec.width as usize),
    ))
}

/// The model input for a record: rendered heatmap or raw pixels, resized to
/// `input_hw` x `input_hw`. No rescale is applied here.
pub fn record_input(rec: &ImageRecord, input: InputKind, input_hw: usize) -> Result<HeatmapTensor> {
    let base = match input {
        InputKind::Kernel(kind) => render_record(rec, kind)?,
        InputKind::Raw => rec.pixels.clone().ok_or_else(|| {
            Error::Run(format!(
                "record `{}` has no pixels; raw experiments need pixel data",
                rec.id
            ))
        })?,
    };
    imageproc::resize(&base, input_hw, input_hw)
}

/// Accuracy and confusion matrix (true class by predicted class) of a
/// predictor over a manifest.
pub fn evaluate_with<F>(mut predict: F, manifest: &DatasetManifest) -> Result<(f64, [[usize; 3]; 3])>
where
    F: FnMut(&ImageRecord) -> Result<Label>,
{
    if manifest.is_empty() {
        return Err(Error::Run("cannot evaluate on an empty manifest".into()));
    }
    let mut confusion = [[0usize; 3]; 3];
    let mut correct = 0usize;
    for rec in &manifest.records {
        let predicted = predict(rec)?;
        confusion[rec.label.index()][predicted.index()] += 1;
        if predicted == rec.label {
            correct += 1;
        }
    }
    Ok((correct as f64 / manifest.len() as f64, confusion))
}

fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Runs one experiment end to end and persists the report (and, for network
/// models, the best checkpoint) under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;

    let manifest = data::load_manifest(&cfg.manifest)?;
    if manifest.records.iter().any(|r| r.split.is_some()) {
        return Err(Error::Config(
            "manifest already carries split tags; provide an unsplit manifest".into(),
        ));
    }
    let split_spec = data::SplitSpec::new(cfg.holdout_fraction, cfg.seed_data)?;
    let (train, holdout) = data::stratified_split(&manifest, &split_spec)?;
    if train.is_empty() || holdout.is_empty() {
        return Err(Error::Run("split produced an empty side".into()));
    }
    let eval_manifest = match &cfg.eval_manifest {
        Some(path) => data::load_manifest(path)?,
        None => holdout.clone(),
    };

    let mut report = match cfg.model {
        ModelSel::BaselineAvg | ModelSel::BaselineRf => {
            run_baseline(cfg, &train, &holdout, &eval_manifest)?
        }
        ModelSel::Network(kind) => run_network(cfg, kind, &train, &holdout, &eval_manifest)?,
    };
    report.wall_clock_secs = if cfg.deterministic {
        None
    } else {
        Some(started.elapsed().as_secs_f64())
    };
    report.config_echo = cfg.echo();
    let report_path = cfg.out_dir.join(format!("{}.report", cfg.name));
    report.write_to(&report_path)?;
    Ok(report)
}

fn run_baseline(
    cfg: &ExperimentConfig,
    train: &DatasetManifest,
    holdout: &DatasetManifest,
    eval_manifest: &DatasetManifest,
) -> Result<RunReport> {
    let fallback = train.majority_label().unwrap_or(Label::Positive);
    let mut predictor: Box<dyn FnMut(&ImageRecord) -> Result<Label>> = match cfg.model {
        ModelSel::BaselineAvg => Box::new(move |rec: &ImageRecord| {
            if rec.faces.is_empty() {
                log::warn!("record `{}` has no faces; predicting majority class", rec.id);
                return Ok(fallback);
            }
            baselines::averaging_predict(rec)
        }),
        ModelSel::BaselineRf => {
            let mut features = Vec::new();
            let mut labels = Vec::new();
            for rec in &train.records {
                match baselines::mean_feature(rec) {
                    Ok(f) => {
                        features.push(f);
                        labels.push(rec.label);
                    }
                    Err(_) => {
                        log::warn!("record `{}` has no faces; skipped in training", rec.id)
                    }
                }
            }
            if features.is_empty() {
                return Err(Error::Run("no usable training records for the forest".into()));
            }
            let forest = baselines::rf_train(
                &features,
                &labels,
                &ForestSpec {
                    n_trees: cfg.trees,
                    seed: cfg.seed_init,
                    ..ForestSpec::default()
                },
            )?;
            Box::new(move |rec: &ImageRecord| match baselines::mean_feature(rec) {
                Ok(f) => Ok(baselines::rf_predict(&forest, &f)),
                Err(_) => {
                    log::warn!("record `{}` has no faces; predicting majority class", rec.id);
                    Ok(fallback)
                }
            })
        }
        ModelSel::Network(_) => unreachable!("dispatched in run_experiment"),
    };

    let (train_acc, _) = evaluate_with(&mut predictor, train)?;
    let (holdout_acc, _) = evaluate_with(&mut predictor, holdout)?;
    let (final_eval_acc, confusion) = evaluate_with(&mut predictor, eval_manifest)?;
    Ok(RunReport {
        config_echo: Vec::new(),
        epochs: vec![EpochStats {
            train_loss: None,
            train_acc,
            holdout_acc,
        }],
        best_epoch: 1,
        best_holdout_acc: holdout_acc,
        final_eval_acc,
        confusion,
        wall_clock_secs: None,
    })
}

/// Precomputed per-record model input with its label and split tag.
struct Prepared {
    input: HeatmapTensor,
    label: usize,
    split: Option<SplitTag>,
}

fn prepare(manifest: &DatasetManifest, cfg: &ExperimentConfig) -> Result<Vec<Prepared>> {
    manifest
        .records
        .iter()
        .map(|rec| {
            Ok(Prepared {
                input: record_input(rec, cfg.input, cfg.input_hw)?,
                label: rec.label.index(),
                split: rec.split,
            })
        })
        .collect()
}

/// Stacks already-augmented images into an NHWC batch tensor.
fn batch_tensor(images: &[&HeatmapTensor], hw: usize) -> Tensor {
    let n = images.len();
    let mut t = Tensor::zeros(vec![n, hw, hw, 3]);
    let stride = hw * hw * 3;
    for (i, img) in images.iter().enumerate() {
        t.data_mut()[i * stride..(i + 1) * stride].copy_from_slice(img.data());
    }
    t
}

fn eval_network(net: &mut Network, inputs: &[Prepared], hw: usize, batch: usize) -> Result<(f64, [[usize; 3]; 3])> {
    let mut correct = 0usize;
    let mut confusion = [[0usize; 3]; 3];
    let identity = AugmentParams::identity();
    for chunk in inputs.chunks(batch) {
        let rescaled: Vec<HeatmapTensor> = chunk
            .iter()
            .map(|p| imageproc::apply_augment(&p.input, &identity))
            .collect();
        let refs: Vec<&HeatmapTensor> = rescaled.iter().collect();
        let x = batch_tensor(&refs, hw);
        let probs = net.predict_probs(&x)?;
        for (i, p) in chunk.iter().enumerate() {
            let predicted = argmax_row(&probs.data()[i * 3..(i + 1) * 3]);
            confusion[p.label][predicted] += 1;
            if predicted == p.label {
                correct += 1;
            }
        }
    }
    Ok((correct as f64 / inputs.len() as f64, confusion))
}

fn run_network(
    cfg: &ExperimentConfig,
    kind: models::ModelKind,
    train: &DatasetManifest,
    holdout: &DatasetManifest,
    eval_manifest: &DatasetManifest,
) -> Result<RunReport> {
    let hw = cfg.input_hw;
    let train_inputs = prepare(train, cfg)?;
    let holdout_inputs = prepare(holdout, cfg)?;

    let specs = models::build(kind, hw, cfg.width_mult)?;
    let input_shape = InputShape::Hwc { h: hw, w: hw, c: 3 };
    let mut net = Network::build(&specs, input_shape, cfg.seed_init)?;
    let mut optimizer = Optimizer::new(cfg.optimizer)?;

    let mut epochs: Vec<EpochStats> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<(Vec<usize>, Vec<f64>)>)> = None;

    let n_train = train_inputs.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    for epoch in 0..cfg.epochs {
        // Independent derived streams per epoch: shuffle, augmentation
        // parameters, dropout masks.
        let mut shuffle_rng = rng::seeded(cfg.seed_augment, (epoch as u64) * 3);
        let mut aug_rng = rng::seeded(cfg.seed_augment, (epoch as u64) * 3 + 1);
        let mut dropout_rng = rng::seeded(cfg.seed_augment, (epoch as u64) * 3 + 2);
        for i in (1..order.len()).rev() {
            use rand::Rng;
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut augmented = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let p = &train_inputs[idx];
                if p.split == Some(SplitTag::Holdout) {
                    return Err(Error::Run(
                        "hold-out record reached the training batch assembler".into(),
                    ));
                }
                let params = imageproc::sample_augment(&mut aug_rng);
                augmented.push(imageproc::apply_augment(&p.input, &params));
                labels.push(p.label);
            }
            let refs: Vec<&HeatmapTensor> = augmented.iter().collect();
            let x = batch_tensor(&refs, hw);
            let logits = net.forward_logits(&x, Mode::Train, Some(&mut dropout_rng))?;
            let (loss, probs) = softmax_xent_loss(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Run(format!(
                    "non-finite training loss at epoch {}",
                    epoch + 1
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
            for (i, &label) in labels.iter().enumerate() {
                if argmax_row(&probs.data()[i * 3..(i + 1) * 3]) == label {
                    correct += 1;
                }
            }
            net.zero_grads();
            let grad = softmax_xent_backward(&probs, &labels)?;
            net.backward(&grad)?;
            optimizer.step(&mut net.params_mut())?;
        }
        let train_acc = correct as f64 / seen as f64;
        let (holdout_acc, _) = eval_network(&mut net, &holdout_inputs, hw, cfg.batch_size)?;
        epochs.push(EpochStats {
            train_loss: Some(loss_sum / seen as f64),
            train_acc,
            holdout_acc,
        });
        let improved = match &best {
            None => true,
            Some((_, best_acc, _)) => holdout_acc > *best_acc,
        };
        if improved {
            best = Some((epoch + 1, holdout_acc, net.state_tensors()));
        }
        if let Some(threshold) = cfg.stop_at_train_acc {
            if train_acc >= threshold {
                break;
            }
        }
    }

    let (best_epoch, best_holdout_acc, best_state) =
        best.ok_or_else(|| Error::Run("no epoch completed".into()))?;
    net.load_state_tensors(&best_state)?;
    let ckpt_path = cfg.out_dir.join(format!("{}.nnck", cfg.name));
    checkpoint::save_checkpoint(&net, &ckpt_path)?;

    // Final evaluation goes through the persisted artifact.
    let mut restored = checkpoint::load_network(&ckpt_path)?;
    let eval_inputs = prepare(eval_manifest, cfg)?;
    let (final_eval_acc, confusion) =
        eval_network(&mut restored, &eval_inputs, hw, cfg.batch_size)?;

    Ok(RunReport {
        config_echo: Vec::new(),
        epochs,
        best_epoch,
        best_holdout_acc,
        final_eval_acc,
        confusion,
        wall_clock_secs: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FaceObservation, SynthSpec};
    use crate::emotion::Scores7;

    fn synth_to_file(dir: &std::path::Path, n_per_class: usize, size: u32, seed: u64) -> std::path::PathBuf {
        let m = data::synth_generate(&SynthSpec {
            n_per_class,
            width: size,
            height: size,
            faces_min: 1,
            faces_max: 2,
            seed,
        })
        .unwrap();
        let path = dir.join("synth.jsonl");
        data::save_manifest(&m, &path).unwrap();
        path
    }

    fn tiny_nn_config(dir: &std::path::Path, manifest: std::path::PathBuf) -> ExperimentConfig {
        ExperimentConfig::from_str_kv(&format!(
            "manifest = {}\nout_dir = {}\nkernel = gaussian\nmodel.kind = 3convnn\nmodel.input_hw = 24\nmodel.width_mult = 0.25\nepochs = 2\nbatch_size = 8\nholdout_fraction = 0.2\ndeterministic = true\n",
            manifest.display(),
            dir.display()
        ))
        .unwrap()
    }

    #[test]
    fn single_epoch_run_reports_best_epoch_one() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_to_file(dir.path(), 6, 24, 1);
        let mut cfg = tiny_nn_config(dir.path(), manifest);
        cfg.epochs = 1;
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.best_epoch, 1);
        assert_eq!(report.epochs.len(), 1);
    }

    #[test]
    fn deterministic_rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_to_file(dir.path(), 6, 24, 2);
        let mut cfg = tiny_nn_config(dir.path(), manifest);
        cfg.name = "a".into();
        run_experiment(&cfg).unwrap();
        let report_a = std::fs::read(dir.path().join("a.report")).unwrap();
        let ckpt_a = std::fs::read(dir.path().join("a.nnck")).unwrap();
        cfg.name = "b".into();
        run_experiment(&cfg).unwrap();
        let report_b = std::fs::read(dir.path().join("b.report")).unwrap();
        let ckpt_b = std::fs::read(dir.path().join("b.nnck")).unwrap();
        // Reports differ only in the run name inside the config echo.
        let text_a = String::from_utf8(report_a).unwrap().replace("name = a", "name = x");
        let text_b = String::from_utf8(report_b).unwrap().replace("name = b", "name = x");
        assert_eq!(text_a, text_b);
        assert_eq!(ckpt_a, ckpt_b);
    }

    #[test]
    fn best_epoch_matches_series_maximum() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_to_file(dir.path(), 6, 24, 3);
        let cfg = tiny_nn_config(dir.path(), manifest);
        let report = run_experiment(&cfg).unwrap();
        let max = report
            .epochs
            .iter()
            .map(|e| e.holdout_acc)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(report.best_holdout_acc, max);
        let first_best = report
            .epochs
            .iter()
            .position(|e| e.holdout_acc == max)
            .unwrap()
            + 1;
        assert_eq!(report.best_epoch, first_best);
    }

    #[test]
    fn pretagged_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = data::synth_generate(&SynthSpec {
            n_per_class: 4,
            width: 24,
            height: 24,
            faces_min: 1,
            faces_max: 1,
            seed: 4,
        })
        .unwrap();
        let (train, _) = data::stratified_split(&m, &data::SplitSpec::new(0.25, 0).unwrap()).unwrap();
        let path = dir.path().join("tagged.jsonl");
        data::save_manifest(&train, &path).unwrap();
        let cfg = tiny_nn_config(dir.path(), path);
        assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn baseline_runs_produce_single_epoch_reports() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_to_file(dir.path(), 10, 24, 5);
        for model in ["baseline-avg", "baseline-rf"] {
            let cfg = ExperimentConfig::from_str_kv(&format!(
                "manifest = {}\nout_dir = {}\nname = {model}\nkernel = gaussian\nmodel.kind = {model}\nholdout_fraction = 0.2\ndeterministic = true\n",
                manifest.display(),
                dir.path().display()
            ))
            .unwrap();
            let report = run_experiment(&cfg).unwrap();
            assert_eq!(report.epochs.len(), 1);
            assert_eq!(report.best_epoch, 1);
            assert!(report.epochs[0].train_loss.is_none());
            // Synthetic data is separable at the score level.
            assert!(report.epochs[0].train_acc >= 0.9, "{model} train acc");
            let row_sums: Vec<usize> = report.confusion.iter().map(|r| r.iter().sum()).collect();
            let counts = data::load_manifest(&manifest).unwrap();
            let (_, holdout) = data::stratified_split(
                &counts,
                &data::SplitSpec::new(0.2, cfg.seed_data).unwrap(),
            )
            .unwrap();
            let hc = holdout.class_counts();
            assert_eq!(row_sums, vec![hc[0], hc[1], hc[2]]);
        }
    }

    #[test]
    fn evaluate_with_perfect_predictor_gives_diagonal_confusion() {
        let m = data::synth_generate(&SynthSpec {
            n_per_class: 3,
            width: 16,
            height: 16,
            faces_min: 1,
            faces_max: 1,
            seed: 6,
        })
        .unwrap();
        let (acc, confusion) = evaluate_with(|r| Ok(r.label), &m).unwrap();
        assert_eq!(acc, 1.0);
        for (i, row) in confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 3 } else { 0 });
            }
        }
    }

    #[test]
    fn evaluate_constant_predictor_on_published_validation_counts() {
        let mut records = Vec::new();
        for (label, count) in [
            (Label::Positive, 773usize),
            (Label::Neutral, 728),
            (Label::Negative, 564),
        ] {
            for i in 0..count {
                records.push(ImageRecord {
                    id: format!("{label}{i}"),
                    width: 4,
                    height: 4,
                    label,
                    faces: vec![],
                    pixels: None,
                    split: None,
                });
            }
        }
        let m = DatasetManifest::new(records).unwrap();
        let (acc, confusion) = evaluate_with(|_| Ok(Label::Positive), &m).unwrap();
        assert!((acc - 773.0 / 2065.0).abs() <= 1e-12);
        assert_eq!(confusion[0][0], 773);
        assert_eq!(confusion[1][0], 728);
        assert_eq!(confusion[2][0], 564);
    }

    #[test]
    fn evaluate_random_predictor_is_near_chance() {
        let mut records = Vec::new();
        for i in 0..10_000 {
            records.push(ImageRecord {
                id: format!("r{i}"),
                width: 4,
                height: 4,
                label: Label::ALL[i % 3],
                faces: vec![],
                pixels: None,
                split: None,
            });
        }
        let m = DatasetManifest::new(records).unwrap();
        let mut rng = rng::seeded(40, 0);
        let (acc, _) = evaluate_with(
            |_| {
                use rand::Rng;
                Ok(Label::ALL[rng.gen_range(0..3)])
            },
            &m,
        )
        .unwrap();
        assert!((0.31..=0.36).contains(&acc), "random accuracy {acc}");
    }

    #[test]
    fn evaluate_rejects_empty_manifest() {
        let m = DatasetManifest::default();
        assert!(evaluate_with(|r| Ok(r.label), &m).is_err());
    }

    #[test]
    fn render_record_uses_all_faces() {
        let rec = ImageRecord {
            id: "x".into(),
            width: 12,
            height: 12,
            label: Label::Positive,
            faces: vec![
                FaceObservation {
                    x: 1,
                    y: 1,
                    w: 4,
                    h: 4,
                    scores7: Scores7::new([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]).unwrap(),
                },
                FaceObservation {
                    x: 7,
                    y: 7,
                    w: 4,
                    h: 4,
                    scores7: Scores7::new([1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap(),
                },
            ],
            pixels: None,
            split: None,
        };
        let t = render_record(&rec, KernelKind::Gaussian).unwrap();
        // Positive face contributes blue, negative face contributes red.
        assert!(t.get(3, 3, 2) > 0.5);
        assert!(t.get(9, 9, 0) > 0.5);
        assert_eq!(t.height(), 12);
    }
}
