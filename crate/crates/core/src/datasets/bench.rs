use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{load_cifar, load_idx, make_permutations, split_indices, synthetic_dataset, CifarVariant, DataError, Dataset};
use crate::tilengine::{derive_seed, partition_classes, Benchmark, SeedRole, Task, TaskSequence, TilError};

pub const MNIST_FILES: [&str; 4] = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];

fn first_existing(candidates: &[PathBuf]) -> PathBuf {
    candidates.iter().find(|p| p.is_dir()).cloned().unwrap_or_else(|| candidates[0].clone())
}

/// The four MNIST IDX paths under `root/mnist` (or `root` itself).
pub fn mnist_files(root: &Path) -> [PathBuf; 4] {
    let dir = if root.join("mnist").join(MNIST_FILES[0]).exists() { root.join("mnist") } else { root.to_path_buf() };
    MNIST_FILES.map(|f| dir.join(f))
}

/// `(train, test)` MNIST datasets.
pub fn load_mnist(root: &Path) -> Result<(Dataset, Dataset), DataError> {
    let [ti, tl, si, sl] = mnist_files(root);
    Ok((load_idx(&ti, &tl)?, load_idx(&si, &sl)?))
}

/// `(train files, test files)` in the layout of the official binary archives.
pub fn cifar_files(root: &Path, variant: CifarVariant) -> (Vec<PathBuf>, Vec<PathBuf>) {
    match variant {
        CifarVariant::Cifar10 => {
            let dir = first_existing(&[root.join("cifar-10-batches-bin"), root.join("cifar10"), root.to_path_buf()]);
            ((1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(), vec![dir.join("test_batch.bin")])
        }
        CifarVariant::Cifar100 => {
            let dir = first_existing(&[root.join("cifar-100-binary"), root.join("cifar100"), root.to_path_buf()]);
            (vec![dir.join("train.bin")], vec![dir.join("test.bin")])
        }
    }
}

fn load_cifar_pair(root: &Path, variant: CifarVariant) -> Result<(Dataset, Dataset), DataError> {
    let (train, test) = cifar_files(root, variant);
    let train: Vec<&Path> = train.iter().map(PathBuf::as_path).collect();
    let test: Vec<&Path> = test.iter().map(PathBuf::as_path).collect();
    Ok((load_cifar(&train, variant)?, load_cifar(&test, variant)?))
}

pub fn load_cifar10(root: &Path) -> Result<(Dataset, Dataset), DataError> {
    load_cifar_pair(root, CifarVariant::Cifar10)
}

pub fn load_cifar100(root: &Path) -> Result<(Dataset, Dataset), DataError> {
    load_cifar_pair(root, CifarVariant::Cifar100)
}

fn split_task(task: &mut Task, pool: &[usize], fraction: f64, seed: u64, t: usize) -> Result<(), TilError> {
    let (train, val) = split_indices(pool, fraction, derive_seed(seed, SeedRole::Split, t))?;
    if val.is_empty() {
        return Err(DataError::TaskTooSmall(format!("{} has {} samples, too few to hold out validation data", task.name, pool.len())).into());
    }
    task.train = train;
    task.val = val;
    Ok(())
}

/// Class-split benchmark: `num_tasks` disjoint class groups over
/// `class_order`, each with its own train/val split of the training pool.
pub fn split_benchmark(
    name: &str,
    train: Arc<Dataset>,
    test: Arc<Dataset>,
    num_tasks: usize,
    class_order: Option<&[usize]>,
    train_fraction: f64,
    seed: u64,
) -> Result<Benchmark, TilError> {
    let mut sequence = partition_classes(train.num_classes, num_tasks, class_order)?;
    for (t, task) in sequence.tasks.iter_mut().enumerate() {
        let pool = train.indices_of(&task.source_labels);
        split_task(task, &pool, train_fraction, seed, t)?;
        task.test = test.indices_of(&task.source_labels);
    }
    Ok(Benchmark { name: name.into(), train, test, sequence })
}

/// Every task sees all classes under its own pixel permutation; task `t`
/// relabels class `c` as `t·C + c` so class ids stay disjoint. The first
/// task keeps the original pixel order.
pub fn permuted_benchmark(
    name: &str,
    train: Arc<Dataset>,
    test: Arc<Dataset>,
    num_tasks: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<Benchmark, TilError> {
    let [_, h, w] = train.sample_shape();
    let perms = make_permutations(num_tasks, h * w, derive_seed(seed, SeedRole::Permutation, 0))?;
    let classes = train.num_classes;
    let pool: Vec<usize> = (0..train.len()).collect();
    let mut tasks = Vec::with_capacity(num_tasks);
    for (t, perm) in perms.perms.into_iter().enumerate() {
        let mut task = Task {
            name: format!("task{}", t + 1),
            class_ids: (0..classes).map(|c| t * classes + c).collect(),
            source_labels: (0..classes).collect(),
            train: Vec::new(),
            val: Vec::new(),
            test: (0..test.len()).collect(),
            permutation: (t > 0).then_some(perm),
        };
        split_task(&mut task, &pool, train_fraction, seed, t)?;
        tasks.push(task);
    }
    Ok(Benchmark { name: name.into(), train, test, sequence: TaskSequence { tasks } })
}

/// Synthetic blobs split into class-disjoint tasks; train and test share
/// class means.
pub fn synthetic_benchmark(
    num_classes: usize,
    num_tasks: usize,
    train_per_class: usize,
    test_per_class: usize,
    shape: [usize; 3],
    train_fraction: f64,
    seed: u64,
) -> Result<Benchmark, TilError> {
    let all = synthetic_dataset(num_classes, train_per_class + test_per_class, shape, seed)?;
    let cut = train_per_class * num_classes;
    let train = all.subset(&(0..cut).collect::<Vec<_>>())?;
    let test = all.subset(&(cut..all.len()).collect::<Vec<_>>())?;
    split_benchmark("synthetic", Arc::new(train), Arc::new(test), num_tasks, None, train_fraction, seed)
}
