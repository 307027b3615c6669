use std::fs;

use saliency_graft::data::{
    batches, export_bundle, generate_shapes, import_bundle, load_cifar_binary, oracle_lambda, parse_cifar_records,
    split_per_class, subsample_per_class, Dataset, LabeledImage, CIFAR_PIXELS,
};
use saliency_graft::graft::{graft, sample_mask, MixMask};
use saliency_graft::saliency::{normalize, oracle_saliency, threshold};
use saliency_graft::labelmix::calibrated_lambda;
use saliency_graft::{Error, RandomStream, Tensor};

#[test]
fn empty_when_per_class_is_zero() {
    let ds = generate_shapes(10, 0, 16, &mut RandomStream::new(1)).unwrap();
    assert!(ds.is_empty());
    assert_eq!(ds.num_classes, 10);
}

#[test]
fn shapes_contract() {
    let ds = generate_shapes(10, 6, 16, &mut RandomStream::new(2)).unwrap();
    assert_eq!(ds.len(), 60);
    assert_eq!(ds.class_counts(), vec![6; 10]);
    for it in &ds.items {
        assert_eq!(it.pixels.shape(), &[3, 16, 16]);
        assert!(it.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let m = it.mask.as_ref().unwrap();
        assert_eq!(m.shape(), &[16, 16]);
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(m.sum() > 0.0);
    }
}

#[test]
fn shapes_are_deterministic() {
    let a = generate_shapes(4, 5, 32, &mut RandomStream::new(3)).unwrap();
    let b = generate_shapes(4, 5, 32, &mut RandomStream::new(3)).unwrap();
    let c = generate_shapes(4, 5, 32, &mut RandomStream::new(4)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn shapes_reject_bad_args() {
    let mut rng = RandomStream::new(0);
    assert!(generate_shapes(11, 1, 16, &mut rng).is_err());
    assert!(generate_shapes(3, 1, 18, &mut rng).is_err());
}

fn cifar_fixture(records: &[(u8, u8, u8)], label_bytes: usize) -> Vec<u8> {
    let mut out = Vec::new();
    for &(label, first, last) in records {
        if label_bytes == 2 {
            out.push(0);
        }
        out.push(label);
        let mut px = vec![128u8; CIFAR_PIXELS];
        px[0] = first;
        px[CIFAR_PIXELS - 1] = last;
        out.extend(px);
    }
    out
}

#[test]
fn cifar_two_record_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("batch.bin");
    fs::write(&p, cifar_fixture(&[(3, 0, 255), (9, 51, 17)], 1)).unwrap();
    let ds = load_cifar_binary(&p).unwrap();
    assert_eq!(ds.num_classes, 10);
    assert_eq!(ds.labels(&[0, 1]), vec![3, 9]);
    let a = ds.items[0].pixels.data();
    assert_eq!((a[0], a[CIFAR_PIXELS - 1]), (0.0, 1.0));
    let b = ds.items[1].pixels.data();
    assert_eq!((b[0], b[CIFAR_PIXELS - 1]), (51.0 / 255.0, 17.0 / 255.0));
    assert!(ds.items[0].mask.is_none());
}

#[test]
fn cifar_fine_labels_autodetected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("train.bin");
    fs::write(&p, cifar_fixture(&[(77, 1, 2)], 2)).unwrap();
    let ds = load_cifar_binary(&p).unwrap();
    assert_eq!((ds.num_classes, ds.items[0].label), (100, 77));
}

#[test]
fn cifar_empty_and_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.bin");
    fs::write(&p, []).unwrap();
    assert!(load_cifar_binary(&p).unwrap().is_empty());

    let mut bytes = cifar_fixture(&[(1, 0, 0), (2, 0, 0)], 1);
    bytes.truncate(3073 + 100);
    match parse_cifar_records(&bytes, 3073) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 3073),
        other => panic!("{other:?}"),
    }
    fs::write(&p, &bytes).unwrap();
    assert!(matches!(load_cifar_binary(&p), Err(Error::Format { offset: 3073, .. })));
    assert!(parse_cifar_records(&[], 3000).is_err());
}

#[test]
fn subsample_counts() {
    let mut rng = RandomStream::new(5);
    let ds = generate_shapes(3, 20, 8, &mut rng).unwrap();
    assert_eq!(subsample_per_class(&ds, 1.0, &mut rng).unwrap(), ds);
    let sub = subsample_per_class(&ds, 0.1, &mut rng).unwrap();
    assert_eq!(sub.class_counts(), vec![2, 2, 2]);
    let sub = subsample_per_class(&ds, 0.33, &mut rng).unwrap();
    assert_eq!(sub.class_counts(), vec![7, 7, 7]);
    assert!(subsample_per_class(&ds, 0.0, &mut rng).is_err());
    assert!(subsample_per_class(&ds, 1.5, &mut rng).is_err());
}

#[test]
fn subsample_matches_table_layout() {
    // 500 per class at 10% keeps 50 per class.
    let item = |label| LabeledImage {
        pixels: Tensor::zeros(vec![3, 4, 4]),
        label,
        mask: None,
    };
    let ds = Dataset::new(2, (0..1000).map(|i| item(i % 2)).collect()).unwrap();
    let sub = subsample_per_class(&ds, 0.1, &mut RandomStream::new(0)).unwrap();
    assert_eq!(sub.class_counts(), vec![50, 50]);
}

#[test]
fn batching_contract() {
    let mut rng = RandomStream::new(6);
    let ds = generate_shapes(2, 5, 8, &mut rng).unwrap();
    let one = batches(&ds, 10, &mut RandomStream::new(1)).unwrap();
    assert_eq!(one.len(), 1);
    let mut all = one[0].indices.clone();
    all.sort_unstable();
    assert_eq!(all, (0..10).collect::<Vec<_>>());

    let bs = batches(&ds, 4, &mut RandomStream::new(2)).unwrap();
    assert_eq!(bs.iter().map(|b| b.indices.len()).collect::<Vec<_>>(), vec![4, 4, 2]);
    for b in &bs {
        let mut p = b.pairing.perm.clone();
        p.sort_unstable();
        assert_eq!(p, (0..b.indices.len()).collect::<Vec<_>>());
    }
    assert_eq!(bs, batches(&ds, 4, &mut RandomStream::new(2)).unwrap());
    assert!(batches(&ds, 1, &mut rng).is_err());
}

#[test]
fn bundle_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_shapes(3, 4, 16, &mut RandomStream::new(7)).unwrap();
    export_bundle(&ds, dir.path()).unwrap();
    assert_eq!(import_bundle(dir.path()).unwrap(), ds);
    let csv = fs::read_to_string(dir.path().join("labels.csv")).unwrap();
    assert!(csv.starts_with("index,label\n0,0\n"));

    let empty = generate_shapes(3, 0, 16, &mut RandomStream::new(7)).unwrap();
    let d2 = dir.path().join("empty");
    export_bundle(&empty, &d2).unwrap();
    assert_eq!(import_bundle(&d2).unwrap(), empty);
}

#[test]
fn oracle_lambda_in_unit_interval_and_matches_oracle_provider() {
    let mut rng = RandomStream::new(8);
    let ds = generate_shapes(5, 10, 16, &mut rng).unwrap();
    for t in 0..50 {
        let (i, j) = (rng.below(ds.len()), rng.below(ds.len()));
        let (mi, mj) = (ds.items[i].mask.as_ref().unwrap(), ds.items[j].mask.as_ref().unwrap());
        let scale = if t % 2 == 0 { (4, 4) } else { (8, 8) };
        let s_i = oracle_saliency(mi, false, scale).unwrap();
        let bin = threshold(&normalize(&s_i, 0.2).unwrap());
        let mix = sample_mask(&bin, 0.5, &mut rng, 16, 16).unwrap();
        let lo = oracle_lambda(mi, mj, &mix).unwrap();
        assert!((0.0..=1.0).contains(&lo));
        let s_j = oracle_saliency(mj, false, scale).unwrap();
        assert_eq!(calibrated_lambda(&s_i, &s_j, &mix).unwrap(), lo);
        let x = graft(&ds.items[i].pixels, &ds.items[j].pixels, &mix).unwrap();
        assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let full = MixMask::full((4, 4), 16, 16, true).unwrap();
    assert_eq!(oracle_lambda(ds.items[0].mask.as_ref().unwrap(), ds.items[1].mask.as_ref().unwrap(), &full).unwrap(), 1.0);
}

#[test]
fn split_is_per_class() {
    let ds = generate_shapes(3, 5, 8, &mut RandomStream::new(9)).unwrap();
    let (train, test) = split_per_class(&ds, 2);
    assert_eq!(test.class_counts(), vec![2, 2, 2]);
    assert_eq!(train.class_counts(), vec![3, 3, 3]);
}
