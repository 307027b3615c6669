use std::fmt::Write as _;

use crate::data::{
    batches, generate_shapes, import_bundle, load_cifar_binary, split_per_class, subsample_per_class, Dataset,
};
use crate::error::{Error, Result};
use crate::experiments::augment::{augment_batch, one_hot, topk_count, BatchView};
use crate::experiments::config::{ExperimentConfig, LabelMode, Strategy};
use crate::graft::{calibrate_temperature_multiscale, mean_selected_count, CALIBRATION_RANGE};
use crate::model::{sgd_step, step_decay_lr, SgdState, TinyCnn};
use crate::numerics::{RandomStream, Tensor};
use crate::saliency::{cam_saliency, forward_saliency, oracle_saliency, resample, SaliencyKind, SaliencyMap};

pub const METRICS_HEADER: &str = "epoch,split,top1,top5,loss,mean_lambda,mean_mask_frac";

/// One row of the metrics CSV. Error rates are percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub top1: f64,
    /// Only reported with at least 10 classes.
    pub top5: Option<f64>,
    pub loss: f64,
    pub mean_lambda: Option<f64>,
    pub mean_mask_frac: Option<f64>,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{:.4},{},{:.6},{},{}",
            self.epoch,
            self.split,
            self.top1,
            self.top5.map(|x| format!("{x:.4}")).unwrap_or_default(),
            self.loss,
            opt(self.mean_lambda),
            opt(self.mean_mask_frac)
        )
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Top-1/top-5 error and mean loss of a model on a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub top1: f64,
    pub top5: Option<f64>,
    pub loss: f64,
}

const EVAL_CHUNK: usize = 256;

fn rank_errors(logits: &[f32], k: usize, labels: &[usize]) -> (usize, usize, f64) {
    let (mut e1, mut e5, mut loss) = (0, 0, 0.0);
    for (row, &y) in logits.chunks_exact(k).zip(labels) {
        let target = row[y];
        let above = row.iter().enumerate().filter(|&(c, &v)| v > target || (v == target && c < y)).count();
        e1 += (above >= 1) as usize;
        e5 += (above >= 5) as usize;
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        loss += lse - target as f64;
    }
    (e1, e5, loss)
}

/// Runs `f` on chunks of `ds` and collects top-1/top-5 errors.
fn evaluate_with(
    model: &TinyCnn,
    ds: &Dataset,
    mut transform: impl FnMut(&[usize], Tensor) -> Result<Tensor>,
) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let k = model.num_classes();
    let (mut e1, mut e5, mut loss) = (0, 0, 0.0);
    let all: Vec<usize> = (0..ds.len()).collect();
    for idx in all.chunks(EVAL_CHUNK) {
        let x = transform(idx, ds.stack(idx)?)?;
        let out = model.forward(&x)?;
        let (a, b, l) = rank_errors(out.logits.data(), k, &ds.labels(idx));
        e1 += a;
        e5 += b;
        loss += l;
    }
    let n = ds.len() as f64;
    Ok(Evaluation {
        top1: 100.0 * e1 as f64 / n,
        top5: (k >= 10).then(|| 100.0 * e5 as f64 / n),
        loss: loss / n,
    })
}

pub fn evaluate(model: &TinyCnn, ds: &Dataset) -> Result<Evaluation> {
    evaluate_with(model, ds, |_, x| Ok(x))
}

pub(crate) fn evaluate_transformed(
    model: &TinyCnn,
    ds: &Dataset,
    transform: impl FnMut(&[usize], Tensor) -> Result<Tensor>,
) -> Result<Evaluation> {
    evaluate_with(model, ds, transform)
}

/// Train and test splits for a config: loaded or generated, test items held
/// out per class, then scarcity subsampling of the training part.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.data;
    let full = match &d.path {
        Some(p) if p.is_dir() => import_bundle(p)?,
        Some(p) => load_cifar_binary(p)?,
        None => generate_shapes(d.classes, d.per_class + d.test_per_class, d.image_size, &mut RandomStream::new(d.seed))?,
    };
    let (train, test) = split_per_class(&full, d.test_per_class);
    let train = if cfg.scarcity_fraction < 1.0 {
        subsample_per_class(&train, cfg.scarcity_fraction, &mut RandomStream::new(d.seed).split("scarcity"))?
    } else {
        train
    };
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if let Some((h, w)) = train.image_dims() {
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Config(format!("image size {h}×{w} is not a multiple of 4")));
        }
    }
    Ok((train, test))
}

/// Saliency map per batch item for the configured provider. `features` are
/// the model's last conv maps for the batch.
pub fn batch_saliency(
    kind: SaliencyKind,
    model: &TinyCnn,
    features: &Tensor,
    ds: &Dataset,
    indices: &[usize],
) -> Result<Vec<SaliencyMap>> {
    let mut out = Vec::with_capacity(indices.len());
    for (pos, &idx) in indices.iter().enumerate() {
        let map = match kind {
            SaliencyKind::Forward => forward_saliency(&features.slab(pos)?)?,
            SaliencyKind::Cam => {
                let w = Tensor::new(vec![model.class_weights(0).len()], model.class_weights(ds.items[idx].label).to_vec())?;
                cam_saliency(&features.slab(pos)?, &w)?
            }
            SaliencyKind::Oracle | SaliencyKind::OracleBlurred => {
                let mask = ds.items[idx]
                    .mask
                    .as_ref()
                    .ok_or_else(|| Error::Config("oracle saliency needs a dataset with masks".into()))?;
                oracle_saliency(mask, kind == SaliencyKind::OracleBlurred, (mask.shape()[0], mask.shape()[1]))?
            }
            SaliencyKind::External => {
                return Err(Error::Config("external saliency maps are not produced during training".into()))
            }
        };
        out.push(map);
    }
    Ok(out)
}

/// Outcome of fitting the temperature after warmup.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationInfo {
    pub epoch: usize,
    /// Finest configured grid; `target` and `achieved` count its cells.
    pub scale: (usize, usize),
    /// Target `E[ΣM]`.
    pub target: f64,
    pub temperature: f64,
    /// `E[p_B]·E[#cells above σ]` at the chosen temperature.
    pub achieved: f64,
    /// Set when the target was out of reach and the temperature was pinned
    /// to the nearer end of the search range.
    pub unreachable: bool,
}

/// Saliency maps of the first `count` items, optionally resampled.
pub fn collect_maps(
    model: &TinyCnn,
    cfg: &ExperimentConfig,
    ds: &Dataset,
    count: usize,
    scale: Option<(usize, usize)>,
) -> Result<Vec<SaliencyMap>> {
    let idx: Vec<usize> = (0..count.min(ds.len())).collect();
    let mut maps = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let out = model.forward(&ds.stack(chunk)?)?;
        for m in batch_saliency(cfg.saliency_kind, model, &out.features, ds, chunk)? {
            maps.push(match scale {
                Some(s) => resample(&m, s)?,
                None => m,
            });
        }
    }
    Ok(maps)
}

/// Expected selected count for stochastic grafting; `E[p_B] = 1/2` under a
/// symmetric Beta.
fn p_mean(cfg: &ExperimentConfig) -> f64 {
    cfg.p_b.unwrap_or(0.5)
}

/// Fits the temperature on saliency maps of the first training items at
/// every configured scale; the target is the top-k count on the finest grid.
pub fn calibrate_for(model: &TinyCnn, cfg: &ExperimentConfig, ds: &Dataset, epoch: usize) -> Result<CalibrationInfo> {
    let scale = *cfg.graft.scales.iter().max_by_key(|(h, w)| h * w).expect("validated non-empty");
    let base = collect_maps(model, cfg, ds, cfg.calibration_maps, None)?;
    let sets = cfg
        .graft
        .scales
        .iter()
        .map(|&s| base.iter().map(|m| resample(m, s)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<&[SaliencyMap]> = sets.iter().map(Vec::as_slice).collect();
    let target = topk_count(cfg.topk_fraction, scale.0 * scale.1) as f64;
    let p = p_mean(cfg);
    // The count is non-decreasing in T, so an unreachable target snaps to
    // the nearer end of the search range.
    let (temperature, unreachable) = match calibrate_temperature_multiscale(&views, target, p) {
        Ok(t) => (t, false),
        Err(Error::CalibrationUnreachable { max, .. }) if target > max => (CALIBRATION_RANGE.1, true),
        Err(Error::CalibrationUnreachable { .. }) => (CALIBRATION_RANGE.0, true),
        Err(e) => return Err(e),
    };
    let cells = (scale.0 * scale.1) as f64;
    let mut achieved = 0.0;
    for set in &sets {
        achieved += mean_selected_count(set, temperature)? * cells / set[0].cells() as f64;
    }
    Ok(CalibrationInfo {
        epoch,
        scale,
        target,
        temperature,
        achieved: p * achieved / sets.len() as f64,
        unreachable,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TinyCnn,
    pub history: Vec<MetricsRecord>,
    /// One fit per augmented epoch when calibrating.
    pub calibration: Vec<CalibrationInfo>,
    /// Augmented images trained on over the whole run.
    pub augmented_samples: usize,
    /// Final evaluation on the test split.
    pub test: Evaluation,
}

/// Trains a fresh model on the configured data.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, test_set) = prepare_data(cfg)?;
    train_on(cfg, &train_set, &test_set)
}

/// Per-step loss: `½·CE(x, y) + ½·mean_k CE(x̃_k, ỹ_k)` once augmentation is
/// active, plain `CE(x, y)` before.
pub fn train_on(cfg: &ExperimentConfig, train_set: &Dataset, test_set: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let root = RandomStream::new(cfg.seed);
    let mut order_rng = root.split("order");
    let mut aug_rng = root.split("augment");
    let k = train_set.num_classes;
    let mut model = TinyCnn::new(k, &mut root.split("init"));
    let mut opt = SgdState::new(&model, cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut run_cfg = cfg.clone();
    let mut calibration = Vec::new();
    let mut history = Vec::new();
    let mut last_test = None;
    let mut augmented_samples = 0;

    for epoch in 0..cfg.epochs {
        opt.lr = step_decay_lr(cfg.lr, epoch, cfg.epochs);
        let augmenting = cfg.augments_at(epoch);
        if augmenting && cfg.calibrate && cfg.strategy == Strategy::SaliencyGrafting {
            let info = calibrate_for(&model, cfg, train_set, epoch)?;
            run_cfg.graft.temperature = info.temperature;
            calibration.push(info);
        }
        let (mut loss_sum, mut errors, mut seen) = (0.0f64, 0usize, 0usize);
        let (mut lam_sum, mut frac_sum, mut aug_seen) = (0.0f64, 0.0f64, 0usize);
        for (step, batch) in batches(train_set, cfg.batch_size, &mut order_rng)?.into_iter().enumerate() {
            let x = train_set.stack(&batch.indices)?;
            let labels = train_set.labels(&batch.indices);
            let n = labels.len();
            let base = model.loss_and_backward(&x, &one_hot(&labels, k))?;
            let (e1, _, _) = rank_errors(base.output.logits.data(), k, &labels);
            errors += e1;
            let mut grads = base.grads;
            let mut loss = base.loss as f64;
            if augmenting {
                let maps = if run_cfg.strategy.uses_saliency_masks()
                    || run_cfg.label_mode == LabelMode::Saliency
                {
                    Some(batch_saliency(cfg.saliency_kind, &model, &base.output.features, train_set, &batch.indices)?)
                } else {
                    None
                };
                grads.scale(0.5);
                loss *= 0.5;
                let w = 0.5 / cfg.k_augments as f32;
                for _ in 0..cfg.k_augments {
                    let aug = augment_batch(
                        &run_cfg,
                        BatchView {
                            x: &x,
                            labels: &labels,
                            num_classes: k,
                            pairing: &batch.pairing,
                            saliency: maps.as_deref(),
                        },
                        &mut aug_rng,
                    )?;
                    let bp = model.loss_and_backward(&aug.x, &aug.y)?;
                    grads.add_scaled(&bp.grads, w);
                    loss += w as f64 * bp.loss as f64;
                    lam_sum += aug.lambdas.iter().sum::<f64>();
                    frac_sum += aug.mask_fractions.iter().sum::<f64>();
                    aug_seen += n;
                }
                augmented_samples += cfg.k_augments * n;
            }
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: loss as f32,
                });
            }
            sgd_step(&mut model, &grads, &mut opt)?;
            loss_sum += loss * n as f64;
            seen += n;
        }
        let per_aug = |s: f64| (aug_seen > 0).then(|| s / aug_seen as f64);
        history.push(MetricsRecord {
            epoch,
            split: "train".into(),
            top1: 100.0 * errors as f64 / seen as f64,
            top5: None,
            loss: loss_sum / seen as f64,
            mean_lambda: per_aug(lam_sum),
            mean_mask_frac: per_aug(frac_sum),
        });
        let last = epoch + 1 == cfg.epochs;
        if !test_set.is_empty() && (last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0)) {
            let ev = evaluate(&model, test_set)?;
            history.push(MetricsRecord {
                epoch,
                split: "test".into(),
                top1: ev.top1,
                top5: ev.top5,
                loss: ev.loss,
                mean_lambda: None,
                mean_mask_frac: None,
            });
            last_test = Some(ev);
        }
    }
    let test = match last_test {
        Some(ev) => ev,
        None if test_set.is_empty() => Evaluation {
            top1: f64::NAN,
            top5: None,
            loss: f64::NAN,
        },
        None => evaluate(&model, test_set)?,
    };
    Ok(TrainOutcome {
        model,
        history,
        calibration,
        test,
        augmented_samples,
    })
}
