use std::fs;
use std::path::Path;
use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::tilengine::{Benchmark, Split};

fn idx_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let images = dir.join("images.idx");
    let labels = dir.join("labels.idx");
    let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
    img.extend([7, 0, 255, 1, 2, 3]);
    img.extend([255, 128, 0, 0, 64, 9]);
    fs::write(&images, img).unwrap();
    fs::write(&labels, [0, 0, 8, 1, 0, 0, 0, 2, 4, 1]).unwrap();
    (images, labels)
}

#[test]
fn idx_fixture_exact_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = idx_fixture(dir.path());
    let ds = load_idx(&images, &labels).unwrap();
    assert_eq!(ds.images.shape(), &[2, 1, 2, 3]);
    assert_eq!(ds.labels, vec![4, 1]);
    assert_eq!(ds.num_classes, 5);
    let px = |n: usize, r: usize, c: usize| ds.images.data()[n * 6 + r * 3 + c];
    assert_eq!(px(0, 0, 0), 7.0 / 255.0);
    assert_eq!(px(0, 0, 1), 0.0);
    assert_eq!(px(0, 0, 2), 1.0);
    assert_eq!(px(1, 0, 1), 128.0 / 255.0);
    assert_eq!(px(1, 1, 2), 9.0 / 255.0);
    assert_eq!(ds.provenance.files.len(), 2);
    assert_eq!(ds.provenance.files[0].sha256, sha256_hex(&fs::read(&images).unwrap()));
}

#[test]
fn idx_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = idx_fixture(dir.path());

    let bad = dir.path().join("bad.idx");
    let mut bytes = fs::read(&images).unwrap();
    bytes[3] = 0x01;
    fs::write(&bad, &bytes).unwrap();
    assert!(matches!(load_idx(&bad, &labels), Err(DataError::BadMagic { found: 0x801, .. })));

    let short = dir.path().join("short.idx");
    let bytes = fs::read(&images).unwrap();
    fs::write(&short, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(load_idx(&short, &labels), Err(DataError::Truncated { expected: 28, actual: 27, .. })));
    fs::write(&short, &bytes[..10]).unwrap();
    assert!(matches!(load_idx(&short, &labels), Err(DataError::Truncated { .. })));

    let three = dir.path().join("three.idx");
    fs::write(&three, [0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3]).unwrap();
    assert!(matches!(load_idx(&images, &three), Err(DataError::CountMismatch { images: 2, labels: 3 })));

    let missing = dir.path().join("nope");
    let err = load_idx(&missing, &labels).unwrap_err();
    assert!(matches!(err, DataError::Missing { .. }));
    assert!(err.to_string().contains("fetch-data"));
}

#[test]
fn idx_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = idx_fixture(dir.path());
    let ds = load_idx(&images, &labels).unwrap();
    let (i2, l2) = (dir.path().join("i2"), dir.path().join("l2"));
    write_idx(&ds, &i2, &l2).unwrap();
    assert_eq!(fs::read(&images).unwrap(), fs::read(&i2).unwrap());
    assert_eq!(fs::read(&labels).unwrap(), fs::read(&l2).unwrap());
    let again = load_idx(&i2, &l2).unwrap();
    assert!(again.images.bit_eq(&ds.images));
    assert_eq!(again.labels, ds.labels);
}

fn cifar_record(label_bytes: &[u8], seed: u8) -> Vec<u8> {
    let mut r = label_bytes.to_vec();
    r.extend((0..3072u32).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)));
    r
}

#[test]
fn cifar_fixture_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batch.bin");
    let mut bytes = cifar_record(&[3], 0);
    bytes.extend(cifar_record(&[9], 17));
    fs::write(&path, &bytes).unwrap();
    let ds = load_cifar(&[&path], CifarVariant::Cifar10).unwrap();
    assert_eq!(ds.images.shape(), &[2, 3, 32, 32]);
    assert_eq!(ds.labels, vec![3, 9]);
    assert_eq!(ds.sample(1)[0], 17.0 / 255.0);
    assert_eq!(ds.sample(0)[1024], ((1024u32 as u8).wrapping_mul(31)) as f32 / 255.0);
    assert_eq!(ds.sample(0)[2 * 1024 + 5], (5u8 * 31) as f32 / 255.0);

    let out = dir.path().join("out.bin");
    write_cifar(&ds, &out, CifarVariant::Cifar10).unwrap();
    assert_eq!(fs::read(&out).unwrap(), bytes);
}

#[test]
fn cifar100_keeps_fine_label() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.bin");
    let mut bytes = cifar_record(&[4, 77], 1);
    bytes.extend(cifar_record(&[19, 2], 2));
    fs::write(&path, &bytes).unwrap();
    let ds = load_cifar(&[&path], CifarVariant::Cifar100).unwrap();
    assert_eq!(ds.labels, vec![77, 2]);
    assert_eq!(ds.num_classes, 100);
    let out = dir.path().join("out.bin");
    write_cifar(&ds, &out, CifarVariant::Cifar100).unwrap();
    let back = load_cifar(&[&out], CifarVariant::Cifar100).unwrap();
    assert!(back.images.bit_eq(&ds.images));
    assert_eq!(back.labels, ds.labels);
}

#[test]
fn cifar_rejects_partial_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.bin");
    fs::write(&path, vec![0u8; 3073 + 10]).unwrap();
    assert!(matches!(load_cifar(&[&path], CifarVariant::Cifar10), Err(DataError::RecordLength { record: 3073, .. })));
    fs::write(&path, vec![0u8; 3073]).unwrap();
    assert!(matches!(load_cifar(&[&path], CifarVariant::Cifar100), Err(DataError::RecordLength { record: 3074, .. })));
    let mut rec = cifar_record(&[10], 0);
    rec.truncate(3073);
    fs::write(&path, rec).unwrap();
    assert!(load_cifar(&[&path], CifarVariant::Cifar10).is_err());
}

#[test]
fn permutation_examples() {
    let one = make_permutations(1, 16, 5).unwrap();
    assert_eq!(one.perms, vec![(0..16).collect::<Vec<_>>()]);

    let a = make_permutations(4, 784, 5).unwrap();
    let b = make_permutations(4, 784, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.perms[0], (0..784).collect::<Vec<_>>());
    assert!(a.perms.iter().all(|p| PermutationSet::is_bijection(p)));
    assert_ne!(a.perms[1], a.perms[2]);

    let x: Vec<f32> = (0..784).map(|i| (i as f32).sin()).collect();
    let y = apply_permutation(&a.perms[2], &x);
    let back = apply_permutation(&PermutationSet::inverse(&a.perms[2]), &y);
    assert!(x.iter().zip(&back).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn permute_then_batch_equals_batch_then_permute() {
    let ds = synthetic_dataset(3, 4, [2, 4, 4], 1).unwrap();
    let perm = make_permutations(2, 16, 9).unwrap().perms.remove(1);
    let test = Arc::new(ds.clone());
    let mut bench = crate::datasets::split_benchmark("p", Arc::new(ds.clone()), test, 1, None, 0.5, 0).unwrap();
    bench.sequence.tasks[0].permutation = Some(perm.clone());
    let indices = [5, 0, 7];
    let batch = Benchmark::images(&bench, &bench.sequence.tasks[0], Split::Test, &indices);
    for (row, &i) in indices.iter().enumerate() {
        let one = apply_permutation(&perm, ds.sample(i));
        assert_eq!(&batch.data()[row * 32..(row + 1) * 32], one.as_slice());
    }
}

#[test]
fn split_examples() {
    let idx: Vec<usize> = (0..100).collect();
    let (train, val) = split_indices(&idx, 0.85, 3).unwrap();
    assert_eq!((train.len(), val.len()), (85, 15));
    assert_eq!(split_indices(&idx, 0.85, 3).unwrap(), (train, val));
    assert!(matches!(split_indices(&[4], 0.85, 3), Err(DataError::TaskTooSmall(_))));
    assert!(split_indices(&idx, 1.0, 3).is_err());
    assert!(split_indices(&idx, 0.0, 3).is_err());

    let ds = synthetic_dataset(2, 10, [1, 2, 2], 0).unwrap();
    let (tr, va) = split_train_val(&ds, 0.85, 1).unwrap();
    assert_eq!((tr.len(), va.len()), (17, 3));
}

#[test]
fn synthetic_examples() {
    let a = synthetic_dataset(3, 5, [1, 4, 4], 8).unwrap();
    let b = synthetic_dataset(3, 5, [1, 4, 4], 8).unwrap();
    assert!(a.images.bit_eq(&b.images));
    assert_eq!(a.class_histogram(), vec![5, 5, 5]);
    assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(synthetic_dataset(2, 1, [1, 4, 4], 0).is_err());
}

/// One epoch of plain SGD on a logistic probe over raw pixels.
fn probe_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    let d = train.sample_len();
    let mut w = vec![0.0f64; d];
    let mut b = 0.0f64;
    let centre = |x: &[f32]| x.iter().map(|&v| v as f64 - 0.5).collect::<Vec<_>>();
    for i in 0..train.len() {
        let x = centre(train.sample(i));
        let z: f64 = b + w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>();
        let p = 1.0 / (1.0 + (-z).exp());
        let g = p - train.labels[i] as f64;
        for (wi, xi) in w.iter_mut().zip(&x) {
            *wi -= 0.1 * g * xi;
        }
        b -= 0.1 * g;
    }
    let correct = (0..test.len())
        .filter(|&i| {
            let z: f64 = b + w.iter().zip(centre(test.sample(i))).map(|(w, x)| w * x).sum::<f64>();
            (z > 0.0) as usize == test.labels[i]
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn synthetic_blobs_are_linearly_separable() {
    let all = synthetic_dataset(2, 300, [1, 8, 8], 21).unwrap();
    let train = all.subset(&(0..200).collect::<Vec<_>>()).unwrap();
    let test = all.subset(&(200..600).collect::<Vec<_>>()).unwrap();
    let acc = probe_accuracy(&train, &test);
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn split_benchmark_partitions_samples() {
    let all = synthetic_dataset(6, 20, [1, 4, 4], 2).unwrap();
    let test = all.subset(&(0..60).collect::<Vec<_>>()).unwrap();
    let bench = split_benchmark("s", Arc::new(all.clone()), Arc::new(test), 3, Some(&[5, 4, 3, 2, 1, 0]), 0.85, 4).unwrap();
    bench.sequence.validate().unwrap();
    assert_eq!(bench.sequence.tasks[0].class_ids, vec![5, 4]);
    for task in &bench.sequence.tasks {
        assert_eq!(task.train.len() + task.val.len(), 40);
        assert_eq!(task.train.len(), 34);
        assert!(task.train.iter().chain(&task.val).all(|&i| task.class_ids.contains(&all.labels[i])));
        assert_eq!(task.test.len(), 20);
    }
}

#[test]
fn permuted_benchmark_relabels_tasks() {
    let all = synthetic_dataset(3, 10, [1, 4, 4], 2).unwrap();
    let bench = permuted_benchmark("pm", Arc::new(all.clone()), Arc::new(all.clone()), 3, 0.85, 1).unwrap();
    bench.sequence.validate().unwrap();
    assert_eq!(bench.sequence.tasks[2].class_ids, vec![6, 7, 8]);
    assert_eq!(bench.sequence.tasks[2].source_labels, vec![0, 1, 2]);
    assert!(bench.sequence.tasks[0].permutation.is_none());
    let p1 = bench.sequence.tasks[1].permutation.as_ref().unwrap();
    assert!(PermutationSet::is_bijection(p1));
    let x = bench.images(&bench.sequence.tasks[1], Split::Test, &[3]);
    assert_eq!(x.data(), apply_permutation(p1, all.sample(3)).as_slice());
}

#[test]
fn tiny_tasks_are_rejected() {
    let all = synthetic_dataset(2, 2, [1, 2, 2], 0).unwrap().subset(&[0, 1]).unwrap();
    let err = split_benchmark("tiny", Arc::new(all.clone()), Arc::new(all), 2, None, 0.85, 0).unwrap_err();
    assert!(err.to_string().contains("too small"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn split_is_deterministic_and_disjoint(n in 7usize..400, seed in any::<u64>()) {
        let idx: Vec<usize> = (0..n).map(|i| i * 3).collect();
        let (train, val) = split_indices(&idx, 0.85, seed).unwrap();
        prop_assert_eq!(train.len(), (0.85 * n as f64).floor() as usize);
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(&all, &idx);
        prop_assert_eq!(split_indices(&idx, 0.85, seed).unwrap(), (train, val));
    }

    #[test]
    fn idx_round_trip_random(n in 1usize..6, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = synthetic_dataset(3, 2, [1, h, w], seed).unwrap();
        let keep: Vec<usize> = (0..n.min(ds.len())).collect();
        ds = ds.subset(&keep).unwrap();
        for v in ds.images.data_mut() {
            *v = to_byte(*v) as f32 / 255.0;
        }
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&ds, &i, &l).unwrap();
        let back = load_idx(&i, &l).unwrap();
        prop_assert!(back.images.bit_eq(&ds.images));
        prop_assert_eq!(back.labels, ds.labels);
    }
}
