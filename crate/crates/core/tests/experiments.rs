use saliency_graft::data::{batches, generate_shapes, BatchPairing, Dataset};
use saliency_graft::experiments::{
    ablation_cells, ablation_suite_on, augment_batch, batch_saliency, evaluate, label_fidelity_eval, metrics_csv,
    occlusion_eval, one_hot, prepare_data, train_on, AblationPlan, BatchView, ExperimentConfig, LabelMode, Strategy,
    TABLE_ROWS,
};
use saliency_graft::graft::GraftConfig;
use saliency_graft::model::{sgd_step, step_decay_lr, SgdState, TinyCnn};
use saliency_graft::saliency::SaliencyKind;
use saliency_graft::{Error, RandomStream, Tensor};

fn small(strategy: Strategy) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        strategy,
        epochs: 3,
        batch_size: 16,
        eval_every: 1,
        ..ExperimentConfig::default()
    };
    cfg.graft.warmup_epochs = 1;
    cfg.data.classes = 4;
    cfg.data.per_class = 16;
    cfg.data.test_per_class = 4;
    cfg.data.image_size = 16;
    cfg
}

fn shapes(n_per_class: usize) -> Dataset {
    generate_shapes(4, n_per_class, 16, &mut RandomStream::new(9)).unwrap()
}

fn pairing(n: usize) -> BatchPairing {
    BatchPairing {
        perm: (0..n).map(|i| (i + 1) % n).collect(),
    }
}

#[test]
fn vanilla_batch_is_identity() {
    let ds = shapes(2);
    let idx: Vec<usize> = (0..ds.len()).collect();
    let x = ds.stack(&idx).unwrap();
    let labels = ds.labels(&idx);
    let p = pairing(idx.len());
    let view = BatchView {
        x: &x,
        labels: &labels,
        num_classes: 4,
        pairing: &p,
        saliency: None,
    };
    let aug = augment_batch(&small(Strategy::Vanilla), view, &mut RandomStream::new(0)).unwrap();
    assert_eq!(aug.x, x);
    assert_eq!(aug.y, one_hot(&labels, 4));
}

fn oracle_view_cfg(p_b: f64) -> ExperimentConfig {
    ExperimentConfig {
        saliency_kind: SaliencyKind::Oracle,
        p_b: Some(p_b),
        ..small(Strategy::SaliencyGrafting)
    }
}

#[test]
fn zero_keep_probability_returns_partner() {
    let ds = shapes(2);
    let idx: Vec<usize> = (0..ds.len()).collect();
    let x = ds.stack(&idx).unwrap();
    let labels = ds.labels(&idx);
    let p = pairing(idx.len());
    let net = TinyCnn::new(4, &mut RandomStream::new(1));
    let feats = net.forward(&x).unwrap().features;
    let maps = batch_saliency(SaliencyKind::Oracle, &net, &feats, &ds, &idx).unwrap();
    let view = BatchView {
        x: &x,
        labels: &labels,
        num_classes: 4,
        pairing: &p,
        saliency: Some(&maps),
    };
    let aug = augment_batch(&oracle_view_cfg(0.0), view, &mut RandomStream::new(0)).unwrap();
    let partner: Vec<usize> = p.perm.clone();
    assert_eq!(aug.x, ds.stack(&partner).unwrap());
    assert_eq!(aug.y, one_hot(&ds.labels(&partner), 4));
    assert!(aug.lambdas.iter().all(|&l| l == 0.0));
}

/// `‖S ⊙ M‖ / ‖S‖` with `S` the ground-truth mask mean-pooled onto the grid of
/// `region`, computed directly from pixels.
fn hand_importance(mask: &Tensor, region: &Tensor, complement: bool) -> f64 {
    let (h, w) = mask.dims2().unwrap();
    let (hs, ws) = region.dims2().unwrap();
    let (bh, bw) = (h / hs, w / ws);
    let (mut kept, mut total) = (0.0f64, 0.0f64);
    for r in 0..hs {
        for c in 0..ws {
            let mut acc = 0.0f64;
            for y in r * bh..(r + 1) * bh {
                for x in c * bw..(c + 1) * bw {
                    acc += mask.at2(y, x) as f64;
                }
            }
            let s = acc / (bh * bw) as f64;
            total += s * s;
            if (region.at2(r, c) == 1.0) != complement {
                kept += s * s;
            }
        }
    }
    (kept / total).sqrt()
}

#[test]
fn oracle_pair_matches_hand_computed_lambda() {
    let ds = shapes(2);
    let idx: Vec<usize> = (0..ds.len()).collect();
    let x = ds.stack(&idx).unwrap();
    let labels = ds.labels(&idx);
    let p = pairing(idx.len());
    let net = TinyCnn::new(4, &mut RandomStream::new(1));
    let feats = net.forward(&x).unwrap().features;
    let maps = batch_saliency(SaliencyKind::Oracle, &net, &feats, &ds, &idx).unwrap();
    let view = BatchView {
        x: &x,
        labels: &labels,
        num_classes: 4,
        pairing: &p,
        saliency: Some(&maps),
    };
    let aug = augment_batch(&oracle_view_cfg(0.7), view, &mut RandomStream::new(3)).unwrap();
    let mut checked = 0;
    for i in 0..idx.len() {
        let j = p.perm[i];
        let region = aug.masks[i].region_grid();
        let mi = ds.items[i].mask.as_ref().unwrap();
        let mj = ds.items[j].mask.as_ref().unwrap();
        let (a, b) = (hand_importance(mi, region, false), hand_importance(mj, region, true));
        let expected = a / (a + b);
        assert!((aug.lambdas[i] - expected).abs() < 1e-6, "pair {i}: {} vs {expected}", aug.lambdas[i]);
        let row = &aug.y.data()[i * 4..(i + 1) * 4];
        if labels[i] != labels[j] {
            assert!((row[labels[i]] as f64 - expected).abs() < 1e-6);
            assert!((row[labels[j]] as f64 - (1.0 - expected)).abs() < 1e-6);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn mixup_rejects_saliency_labels() {
    let cfg = ExperimentConfig {
        label_mode: LabelMode::Saliency,
        ..small(Strategy::Mixup)
    };
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

/// Plain SGD loop written against the model API only.
fn reference_plain_run(cfg: &ExperimentConfig, train: &Dataset) -> TinyCnn {
    let root = RandomStream::new(cfg.seed);
    let mut order = root.split("order");
    let mut net = TinyCnn::new(train.num_classes, &mut root.split("init"));
    let mut opt = SgdState::new(&net, cfg.lr, cfg.momentum, cfg.weight_decay);
    for epoch in 0..cfg.epochs {
        opt.lr = step_decay_lr(cfg.lr, epoch, cfg.epochs);
        for b in batches(train, cfg.batch_size, &mut order).unwrap() {
            let x = train.stack(&b.indices).unwrap();
            let y = one_hot(&train.labels(&b.indices), train.num_classes);
            let bp = net.loss_and_backward(&x, &y).unwrap();
            sgd_step(&mut net, &bp.grads, &mut opt).unwrap();
        }
    }
    net
}

#[test]
fn vanilla_matches_plain_reference_bit_exactly() {
    let cfg = small(Strategy::Vanilla);
    let (train, test) = prepare_data(&cfg).unwrap();
    let out = train_on(&cfg, &train, &test).unwrap();
    let reference = reference_plain_run(&cfg, &train);
    assert_eq!(out.model.params(), reference.params());
    assert_eq!(out.augmented_samples, 0);
}

#[test]
fn full_warmup_equals_vanilla() {
    let mut sg = small(Strategy::SaliencyGrafting);
    sg.graft.warmup_epochs = sg.epochs;
    let (train, test) = prepare_data(&sg).unwrap();
    let a = train_on(&sg, &train, &test).unwrap();
    let b = train_on(&small(Strategy::Vanilla), &train, &test).unwrap();
    assert_eq!(metrics_csv(&a.history), metrics_csv(&b.history));
    assert_eq!(a.model.params(), b.model.params());
}

#[test]
fn metrics_csv_is_reproducible() {
    for strategy in [Strategy::SaliencyGrafting, Strategy::Cutmix, Strategy::Mixup] {
        let mut cfg = small(strategy);
        if strategy == Strategy::Mixup {
            cfg.label_mode = LabelMode::Area;
        }
        cfg.k_augments = 2;
        let (train, test) = prepare_data(&cfg).unwrap();
        let a = metrics_csv(&train_on(&cfg, &train, &test).unwrap().history);
        let b = metrics_csv(&train_on(&cfg, &train, &test).unwrap().history);
        assert_eq!(a, b, "{strategy}");
        assert!(a.starts_with("epoch,split,top1,top5,loss,mean_lambda,mean_mask_frac\n"));
    }
}

#[test]
fn k_augments_scales_augmented_count() {
    for k in [1, 3] {
        let cfg = ExperimentConfig {
            k_augments: k,
            ..small(Strategy::Cutmix)
        };
        let (train, test) = prepare_data(&cfg).unwrap();
        let out = train_on(&cfg, &train, &test).unwrap();
        let active = cfg.epochs - cfg.graft.warmup_epochs;
        assert_eq!(out.augmented_samples, active * k * train.len());
    }
}

#[test]
fn scarcity_keeps_per_class_proportion() {
    let cfg = ExperimentConfig {
        scarcity_fraction: 0.2,
        ..small(Strategy::Vanilla)
    };
    let (train, test) = prepare_data(&cfg).unwrap();
    assert_eq!(train.class_counts(), vec![4; 4]); // ceil(0.2 * 16)
    assert_eq!(test.class_counts(), vec![4; 4]);
}

#[test]
fn top5_only_with_ten_classes() {
    let cfg = small(Strategy::Vanilla);
    let (train, test) = prepare_data(&cfg).unwrap();
    assert!(train_on(&cfg, &train, &test).unwrap().test.top5.is_none());
    let mut ten = cfg.clone();
    ten.data.classes = 10;
    ten.data.per_class = 4;
    ten.data.test_per_class = 2;
    ten.epochs = 1;
    let (train, test) = prepare_data(&ten).unwrap();
    let out = train_on(&ten, &train, &test).unwrap();
    let t5 = out.test.top5.unwrap();
    assert!((0.0..=out.test.top1).contains(&t5));
}

#[test]
fn occlusion_table_layout_and_zero_column() {
    let cfg = small(Strategy::Vanilla);
    let (train, test) = prepare_data(&cfg).unwrap();
    let out = train_on(&cfg, &train, &test).unwrap();
    let table = occlusion_eval(&out.model, &test, &[0.0, 0.125, 0.25]).unwrap();
    assert_eq!(table.top1[0], evaluate(&out.model, &test).unwrap().top1);
    assert!(table.to_csv().starts_with("k=0%,k=12.5%,k=25%\n"));
    assert_eq!(table.increase(0.0), Some(0.0));
}

#[test]
fn calibration_hits_target_before_augmenting() {
    let cfg = ExperimentConfig {
        calibrate: true,
        calibration_maps: 32,
        ..small(Strategy::SaliencyGrafting)
    };
    let (train, test) = prepare_data(&cfg).unwrap();
    let out = train_on(&cfg, &train, &test).unwrap();
    assert_eq!(out.calibration.len(), cfg.epochs - cfg.graft.warmup_epochs);
    let first = &out.calibration[0];
    assert_eq!(first.epoch, cfg.graft.warmup_epochs);
    assert_eq!(first.target, 8.0); // 12.5% of 8x8
    assert!(!first.unreachable);
    assert!((first.achieved - first.target).abs() <= 0.5, "{first:?}");
}

#[test]
fn fidelity_oracle_provider_is_exact() {
    let ds = shapes(10);
    let rep = label_fidelity_eval(&ds, 200, &GraftConfig::default(), None, &mut RandomStream::new(4)).unwrap();
    let oracle = rep.row(SaliencyKind::Oracle).unwrap();
    assert_eq!(oracle.pairs + oracle.skipped, 200);
    assert!(oracle.saliency_error < 1e-9, "{oracle:?}");
    let blurred = rep.row(SaliencyKind::OracleBlurred).unwrap();
    assert!(blurred.saliency_error < blurred.area_error);
    assert!(rep.row(SaliencyKind::Forward).is_none());
    assert!(rep.to_csv().starts_with("provider,pairs,skipped,saliency_lambda_error,area_lambda_error\n"));
}

#[test]
fn fidelity_needs_masks() {
    let mut ds = shapes(2);
    for it in &mut ds.items {
        it.mask = None;
    }
    assert!(label_fidelity_eval(&ds, 10, &GraftConfig::default(), None, &mut RandomStream::new(4)).is_err());
}

#[test]
fn ablation_cells_pair_and_flag() {
    let base = small(Strategy::SaliencyGrafting);
    let cells = ablation_cells(&base, &AblationPlan::full(vec![0, 1, 2]));
    let names: Vec<&str> = cells.iter().filter(|c| c.section == "table").map(|c| c.name.as_str()).collect();
    assert_eq!(names, TABLE_ROWS);
    let flagged: Vec<&str> = cells.iter().filter(|c| c.flag.is_some()).map(|c| c.name.as_str()).collect();
    assert_eq!(flagged.len(), 2, "{flagged:?}");
    assert!(cells.iter().filter(|c| c.section == "temperature").count() == 5);
    assert!(cells.iter().any(|c| c.config.saliency_kind == SaliencyKind::Cam));
}

#[test]
fn ablation_table_runs_paired_seeds() {
    let base = ExperimentConfig {
        epochs: 2,
        calibration_maps: 8,
        ..small(Strategy::SaliencyGrafting)
    };
    let (train, test) = prepare_data(&base).unwrap();
    let mut plan = AblationPlan::table_only(vec![0, 1, 2]);
    plan.occlusion = false;
    plan.jobs = 2;
    let report = ablation_suite_on(&base, &plan, &train, &test).unwrap();
    let csv = report.table_csv();
    assert_eq!(csv.lines().count(), 4, "{csv}");
    for row in TABLE_ROWS {
        let cell = report.cell(row).unwrap();
        let seeds: Vec<u64> = cell.runs.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![0, 1, 2]);
    }
    let again = ablation_suite_on(&base, &plan, &train, &test).unwrap();
    assert_eq!(again.table_csv(), csv);
}

#[test]
fn sg_defaults_fit_the_training_set() {
    let mut cfg = ExperimentConfig {
        epochs: 30,
        eval_every: 0,
        ..ExperimentConfig::default()
    };
    cfg.data.image_size = 16;
    let (train, test) = prepare_data(&cfg).unwrap();
    let out = train_on(&cfg, &train, &test).unwrap();
    let final_train = out.history.iter().rev().find(|r| r.split == "train").unwrap();
    assert!(final_train.top1 < 10.0, "final train error {}", final_train.top1);
}
