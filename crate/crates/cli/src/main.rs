use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use san_til::harness::{
    ablate_order, dump_embeddings, fetch_data, grad_check_suite, resolve_data_root, run, sweep_size, FetchSource, FetchTarget, FieldError, HarnessError,
    Overrides, RunConfig,
};
use san_til::tilengine::Split;

/// `println!` that tolerates a closed stdout, e.g. when piped into `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "san-til", version, about = "Task-incremental learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Seeds to run, replacing the configured list.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Dataset directory [default: $SAN_TIL_DATA_ROOT or ./data].
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Output directory, replacing the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Epochs per task, replacing the configured value.
    #[arg(long)]
    epochs: Option<usize>,
    /// Reduced-epoch desk profile.
    #[arg(long)]
    fast: bool,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, PathBuf), HarnessError> {
        let mut config = RunConfig::load(&self.config)?;
        config.apply(&Overrides { seeds: self.seed.clone(), epochs: self.epochs, fast: self.fast, output_dir: self.out.clone() })?;
        Ok((config, resolve_data_root(self.data_root.as_deref())))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write report.json and summary.csv.
    Run(Common),
    /// Repeat a run for each adjustment kernel size.
    SweepSize {
        #[command(flatten)]
        common: Common,
        /// Odd adjustment kernel sizes, e.g. 1,3,5.
        #[arg(long, value_delimiter = ',', required = true)]
        widths: Vec<usize>,
    },
    /// Repeat a run for each task order.
    AblateOrder {
        #[command(flatten)]
        common: Common,
        /// A task order such as 4,3,2,1,0; repeat the flag for more orders.
        #[arg(long = "order", required = true)]
        orders: Vec<String>,
    },
    /// Write per-sample features of a trained checkpoint to CSV.
    DumpEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// CSV destination [default: <out>/embeddings.csv].
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Download, verify and unpack a dataset.
    FetchData {
        /// mnist, cifar10 or cifar100.
        dataset: String,
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Archive URL or local path.
        #[arg(long)]
        url: Option<String>,
        /// Expected SHA-256 of the archive.
        #[arg(long)]
        sha256: Option<String>,
    },
    /// Finite-difference check of every differentiable operation.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_order(text: &str) -> Result<Vec<usize>, HarnessError> {
    text.split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::Config(vec![FieldError { field: "order".into(), message: format!("{text:?}: {e}") }]))
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run(common) => {
            let (config, root) = common.load()?;
            let report = run(&config, &root)?;
            out!("{}", report.render().trim_end());
            out!("wrote {}", config.output_dir.display());
        }
        Command::SweepSize { common, widths } => {
            let (config, root) = common.load()?;
            out!("{:>6} {:>10} {:>10} {:>14}", "kernel", "params", "MB", "accuracy %");
            for p in sweep_size(&config, &widths, &root)? {
                out!("{:>6} {:>10} {:>10.4} {:>8.2} ± {:.2}", p.kernel, p.param_count, p.megabytes, 100.0 * p.mean_accuracy.mean, 100.0 * p.mean_accuracy.std);
            }
        }
        Command::AblateOrder { common, orders } => {
            let (config, root) = common.load()?;
            let orders = orders.iter().map(|o| parse_order(o)).collect::<Result<Vec<_>, _>>()?;
            for (order, report) in orders.iter().zip(ablate_order(&config, &orders, &root)?) {
                let a = report.aggregate.mean_accuracy;
                out!("{order:?}: {:.2} ± {:.2} %", 100.0 * a.mean, 100.0 * a.std);
            }
        }
        Command::DumpEmbeddings { common, checkpoint, split, file } => {
            let (config, root) = common.load()?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                SplitArg::Test => Split::Test,
            };
            let file = file.unwrap_or_else(|| config.output_dir.join("embeddings.csv"));
            let rows = dump_embeddings(&config, &checkpoint, split, &file, &root)?;
            out!("wrote {rows} rows to {}", file.display());
        }
        Command::FetchData { dataset, data_root, url, sha256 } => {
            let target = FetchTarget::parse(&dataset).ok_or_else(|| {
                HarnessError::Config(vec![FieldError { field: "dataset".into(), message: format!("unknown dataset {dataset:?}; expected mnist, cifar10 or cifar100") }])
            })?;
            let mut source = FetchSource::default_for(target);
            if let Some(url) = url {
                source = FetchSource { url, sha256: None };
            }
            if sha256.is_some() {
                source.sha256 = sha256;
            }
            let root = resolve_data_root(data_root.as_deref());
            for path in fetch_data(target, &root, &source)? {
                out!("{}", path.display());
            }
        }
        Command::GradCheck { instances, seed } => {
            let checks = grad_check_suite(instances, seed)?;
            let mut failed = Vec::new();
            for c in &checks {
                let verdict = if c.passed() { "ok" } else { "FAIL" };
                out!("{:<24} {:>4} instances {:>7} coords  max rel err {:.3e}  (tol {:.0e})  {verdict}", c.op, c.instances, c.coordinates, c.max_rel_error, c.tolerance);
                if !c.passed() {
                    failed.push(c.op.clone());
                }
            }
            if !failed.is_empty() {
                return Err(HarnessError::Runtime(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
