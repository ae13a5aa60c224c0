use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ArchitectureChoice, DatasetId, FieldError, RunConfig, SyntheticOptions};
use super::report::{BenchmarkSummary, MeanStd, RunReport};
use super::HarnessError;
use crate::datasets::{load_cifar10, load_cifar100, load_mnist, permuted_benchmark, split_benchmark, synthetic_dataset, Dataset};
use crate::tilengine::{run_sequence, task_features, Benchmark, IncrementalState, SequenceConfig, SequenceReport, Split};

/// Environment variable consulted when no `--data-root` is given.
pub const DATA_ROOT_ENV: &str = "SAN_TIL_DATA_ROOT";

/// `--data-root` if given, else `$SAN_TIL_DATA_ROOT`, else `./data`.
pub fn resolve_data_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// The train and test pools a configuration draws its tasks from.
#[derive(Clone, Debug)]
pub struct Pools {
    pub train: Arc<Dataset>,
    pub test: Arc<Dataset>,
}

impl Pools {
    pub fn load(config: &RunConfig, data_root: &Path) -> Result<Self, HarnessError> {
        let (train, test) = match config.dataset {
            DatasetId::Mnist | DatasetId::PermutedMnist => load_mnist(data_root)?,
            DatasetId::Cifar10 => load_cifar10(data_root)?,
            DatasetId::Cifar100 => load_cifar100(data_root)?,
            DatasetId::Synthetic => synthetic_pools(&config.synthetic.clone().unwrap_or_default())?,
        };
        Ok(Pools { train: Arc::new(train), test: Arc::new(test) })
    }

    /// Task sequence for one seed: the seed drives the train/validation
    /// splits and, for permuted MNIST, the pixel permutations.
    pub fn benchmark(&self, config: &RunConfig, seed: u64) -> Result<Benchmark, HarnessError> {
        let (train, test) = (self.train.clone(), self.test.clone());
        let name = config.dataset.name();
        let bench = match config.dataset {
            DatasetId::PermutedMnist => permuted_benchmark(name, train, test, config.num_tasks, config.train_fraction, seed)?,
            _ => split_benchmark(name, train, test, config.num_tasks, config.class_order.as_deref(), config.train_fraction, seed)?,
        };
        Ok(match &config.task_order {
            Some(order) => bench.reordered(order)?,
            None => bench,
        })
    }
}

/// Train and test splits drawn from one synthetic corpus with shared class means.
fn synthetic_pools(opts: &SyntheticOptions) -> Result<(Dataset, Dataset), HarnessError> {
    let all = synthetic_dataset(opts.num_classes, opts.train_per_class + opts.test_per_class, opts.shape, 0)?;
    let cut = opts.train_per_class * opts.num_classes;
    let train = all.subset(&(0..cut).collect::<Vec<_>>())?;
    let test = all.subset(&(cut..all.len()).collect::<Vec<_>>())?;
    Ok((train, test))
}

fn summarize(bench: &Benchmark) -> BenchmarkSummary {
    BenchmarkSummary {
        name: bench.name.clone(),
        task_names: bench.sequence.tasks.iter().map(|t| t.name.clone()).collect(),
        class_ids: bench.sequence.tasks.iter().map(|t| t.class_ids.clone()).collect(),
        train_pool: bench.train.len(),
        test_pool: bench.test.len(),
        train_provenance: bench.train.provenance.clone(),
        test_provenance: bench.test.provenance.clone(),
    }
}

/// A trained state together with the configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub seed: u64,
    pub state: IncrementalState,
}

impl Checkpoint {
    pub fn path(dir: &Path, seed: u64) -> PathBuf {
        dir.join("checkpoints").join(format!("seed-{seed}.json"))
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
        let json = serde_json::to_string(self).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        fs::write(path, json).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Runtime(format!("{}: not a checkpoint: {e}", path.display())))
    }
}

/// Results of every seed, kept in memory.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub states: Vec<IncrementalState>,
    pub benchmarks: Vec<Benchmark>,
}

/// Runs every seed of `config` on already loaded pools without touching disk.
pub fn execute_on(config: &RunConfig, pools: &Pools) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let start = Instant::now();
    let architecture = config.architecture_spec();
    let mut runs = Vec::new();
    let mut states = Vec::new();
    let mut benchmarks = Vec::new();
    for &seed in &config.seeds {
        let bench = pools.benchmark(config, seed)?;
        let seq = SequenceConfig { strategy: config.strategy, architecture: architecture.clone(), train: config.train_config(), seed };
        let (report, state) = run_sequence(&seq, &bench)?;
        runs.push(report);
        states.push(state);
        benchmarks.push(bench);
    }
    let summary = summarize(&benchmarks[0]);
    let report = RunReport::new(config.clone(), architecture, summary, runs, start.elapsed().as_secs_f64());
    Ok(RunOutput { report, states, benchmarks })
}

pub fn execute(config: &RunConfig, data_root: &Path) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    execute_on(config, &Pools::load(config, data_root)?)
}

fn persist(output: &RunOutput, dir: &Path) -> Result<(), HarnessError> {
    output.report.write(dir)?;
    for (run, state) in output.report.runs.iter().zip(&output.states) {
        let cp = Checkpoint { config: output.report.config.clone(), seed: run.seed, state: state.clone() };
        cp.save(&Checkpoint::path(dir, run.seed))?;
    }
    Ok(())
}

/// Runs `config` and writes `report.json`, `summary.csv` and one
/// checkpoint per seed into its output directory.
pub fn run(config: &RunConfig, data_root: &Path) -> Result<RunReport, HarnessError> {
    let output = execute(config, data_root)?;
    persist(&output, &config.output_dir)?;
    Ok(output.report)
}

/// One point of an adjustment-capacity sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub kernel: usize,
    pub param_count: usize,
    pub megabytes: f64,
    pub mean_accuracy: MeanStd,
    pub output_dir: PathBuf,
}

/// Reruns `config` once per adjustment kernel size in `kernels`, leaving the
/// backbone and classifier unchanged. Each run lands in `width-<k>/`;
/// `sweep.csv` and `sweep.json` collect the (MB, accuracy) pairs.
pub fn sweep_size(config: &RunConfig, kernels: &[usize], data_root: &Path) -> Result<Vec<SweepPoint>, HarnessError> {
    if kernels.is_empty() {
        return Err(HarnessError::Config(vec![FieldError { field: "widths".into(), message: "needs at least one value".into() }]));
    }
    let base = config.architecture_spec();
    let specs = kernels
        .iter()
        .map(|&k| base.with_adjustment_kernel(k).map_err(|e| HarnessError::Config(vec![FieldError { field: "widths".into(), message: format!("{k}: {e}") }])))
        .collect::<Result<Vec<_>, _>>()?;
    config.validate()?;
    let pools = Pools::load(config, data_root)?;
    let mut points = Vec::new();
    for (&k, spec) in kernels.iter().zip(specs) {
        let dir = config.output_dir.join(format!("width-{k}"));
        let cfg = RunConfig { architecture: ArchitectureChoice::Spec(spec), output_dir: dir.clone(), ..config.clone() };
        let output = execute_on(&cfg, &pools)?;
        persist(&output, &dir)?;
        let a = &output.report.aggregate;
        points.push(SweepPoint { kernel: k, param_count: a.param_count, megabytes: a.megabytes, mean_accuracy: a.mean_accuracy, output_dir: dir });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| HarnessError::Runtime(e.to_string());
    w.write_record(["kernel", "param_count", "megabytes", "mean_accuracy", "std"]).map_err(err)?;
    for p in &points {
        w.write_record([p.kernel.to_string(), p.param_count.to_string(), format!("{:.6}", p.megabytes), format!("{:.6}", p.mean_accuracy.mean), format!("{:.6}", p.mean_accuracy.std)])
            .map_err(err)?;
    }
    write_pair(&config.output_dir, "sweep", w.into_inner().map_err(|e| HarnessError::Runtime(e.to_string()))?, &points)?;
    Ok(points)
}

/// Reruns `config` once per task order (each a permutation of task
/// positions). Each run lands in `order-<i>/`; `ablation.csv` lists them.
pub fn ablate_order(config: &RunConfig, orders: &[Vec<usize>], data_root: &Path) -> Result<Vec<RunReport>, HarnessError> {
    let configs: Vec<RunConfig> = orders
        .iter()
        .enumerate()
        .map(|(i, o)| RunConfig { task_order: Some(o.clone()), output_dir: config.output_dir.join(format!("order-{i}")), ..config.clone() })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let pools = Pools::load(config, data_root)?;
    let mut reports = Vec::new();
    for c in &configs {
        let output = execute_on(c, &pools)?;
        persist(&output, &c.output_dir)?;
        reports.push(output.report);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| HarnessError::Runtime(e.to_string());
    w.write_record(["order", "mean_accuracy", "std"]).map_err(err)?;
    for (o, r) in orders.iter().zip(&reports) {
        let order = o.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        w.write_record([order, format!("{:.6}", r.aggregate.mean_accuracy.mean), format!("{:.6}", r.aggregate.mean_accuracy.std)]).map_err(err)?;
    }
    let summary: Vec<(&Vec<usize>, MeanStd)> = orders.iter().zip(reports.iter().map(|r| r.aggregate.mean_accuracy)).collect();
    write_pair(&config.output_dir, "ablation", w.into_inner().map_err(|e| HarnessError::Runtime(e.to_string()))?, &summary)?;
    Ok(reports)
}

fn write_pair<S: Serialize>(dir: &Path, stem: &str, csv: Vec<u8>, json: &S) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let path = dir.join(format!("{stem}.csv"));
    fs::write(&path, csv).map_err(|e| HarnessError::io(&path, e))?;
    let path = dir.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_string_pretty(json).expect("serializable") + "\n").map_err(|e| HarnessError::io(&path, e))
}

/// Writes one CSV row per sample of `split` for every trained task:
/// task index, true class id, then the flattened classifier input.
/// Returns the number of rows.
pub fn dump_embeddings(config: &RunConfig, checkpoint: &Path, split: Split, out: &Path, data_root: &Path) -> Result<usize, HarnessError> {
    let cp = Checkpoint::load(checkpoint)?;
    let same_data = cp.config.dataset == config.dataset
        && cp.config.num_tasks == config.num_tasks
        && cp.config.class_order == config.class_order
        && cp.config.task_order == config.task_order
        && cp.config.synthetic == config.synthetic
        && cp.config.train_fraction == config.train_fraction;
    if !same_data {
        return Err(HarnessError::Config(vec![FieldError {
            field: "checkpoint".into(),
            message: format!("{} was trained on a different task sequence than this config describes", checkpoint.display()),
        }]));
    }
    let pools = Pools::load(config, data_root)?;
    let bench = pools.benchmark(config, cp.seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| HarnessError::Runtime(e.to_string());
    let mut rows = 0;
    let mut header_written = false;
    for t in 0..cp.state.trained_tasks() {
        let task = bench.task(t)?;
        let feats = task_features(&cp.state, &bench, t, split, 500)?;
        let d = feats.shape()[1];
        if !header_written {
            let mut header = vec!["task".to_string(), "label".to_string()];
            header.extend((0..d).map(|j| format!("f{j}")));
            w.write_record(&header).map_err(err)?;
            header_written = true;
        }
        let pool = bench.pool(split);
        for (row, &i) in feats.data().chunks(d).zip(task.indices(split)) {
            let local = task.local_label(pool.labels[i]).expect("sample belongs to its task");
            let mut rec = vec![t.to_string(), task.class_ids[local].to_string()];
            rec.extend(row.iter().map(f32::to_string));
            w.write_record(&rec).map_err(err)?;
            rows += 1;
        }
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    fs::write(out, w.into_inner().map_err(|e| HarnessError::Runtime(e.to_string()))?).map_err(|e| HarnessError::io(out, e))?;
    Ok(rows)
}

/// Reports of individual seeds in the order they were run.
pub fn seed_reports(report: &RunReport) -> impl Iterator<Item = (u64, &SequenceReport)> {
    report.runs.iter().map(|r| (r.seed, r))
}
