use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "mtskl", version, about = "Kernel classification of multivariate time series with missing values")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// File of `key=value` lines supplying flags not given on the command line.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resample, optionally standardize and select uncorrelated variables.
    Prepare(PrepareArgs),
    /// Fit LPS or TCK and write K_tr / K_te.
    Kernel(KernelArgs),
    /// Grid-search classifier hyperparameters on K_tr.
    Cv(CvArgs),
    /// Train on K_tr, predict K_te and score.
    Classify(ClassifyArgs),
    /// Windows-of-increasing-length experiment.
    Windows(WindowsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    pub fn is_on(self) -> bool {
        self == OnOff::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Lps,
    Tck,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Test dataset directory, prepared with training statistics.
    #[arg(long = "test", alias = "test-input")]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long = "theta-c", default_value_t = 0.4)]
    pub theta_c: f64,
    #[arg(long, value_enum, default_value_t = OnOff::Off)]
    pub standardize: OnOff,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct KernelOptions {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// LPS trees.
    #[arg(long = "nT", default_value_t = mtskl_core::lps::DEFAULT_N_TREES)]
    pub n_trees: usize,
    /// LPS segment length.
    #[arg(long = "L", default_value_t = mtskl_core::lps::DEFAULT_SEG_LEN)]
    pub seg_len: usize,
    /// TCK random initializations.
    #[arg(long = "Q", default_value_t = mtskl_core::tck::DEFAULT_Q)]
    pub q: usize,
    /// TCK largest mixture size.
    #[arg(long = "C-mixtures", default_value_t = mtskl_core::tck::DEFAULT_C)]
    pub c_mixtures: usize,
    /// Defaults to on for TCK and off for LPS.
    #[arg(long, value_enum)]
    pub standardize: Option<OnOff>,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Test dataset directory.
    #[arg(long = "test", alias = "test-input")]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub kernel: KernelOptions,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    /// Directory written by `kernel`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    pub classifier: String,
}

#[derive(Debug, Args)]
pub struct ClassifierOptions {
    #[arg(long)]
    pub classifier: String,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long = "vector-sim")]
    pub vector_sim: Option<String>,
    #[arg(long = "C-margin")]
    pub c_margin: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Directory written by `kernel`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Recorded in the artifacts; classification itself is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub classifier: ClassifierOptions,
}

#[derive(Debug, Args)]
pub struct WindowsArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Test dataset directory.
    #[arg(long = "test", alias = "test-input")]
    pub test: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[command(flatten)]
    pub kernel: KernelOptions,
    #[command(flatten)]
    pub classifier: ClassifierOptions,
}

/// Appends `--key value` for every `key=value` line of the `--config` file
/// whose flag is not already on the command line. Keys unknown to the
/// chosen subcommand are ignored with a warning.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let pos = strs.iter().position(|a| a == "--config" || a.starts_with("--config="));
    let Some(pos) = pos else {
        return Ok(argv);
    };
    let path = match strs[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => strs.get(pos + 1).cloned().ok_or("--config needs a path")?,
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
    let pairs = mtskl_core::io::parse_key_values(path.as_ref(), &text).map_err(|e| e.to_string())?;

    let cmd = Cli::command();
    let sub = strs
        .iter()
        .skip(1)
        .find_map(|a| cmd.find_subcommand(a))
        .ok_or("--config requires a subcommand")?;
    let known: Vec<String> = sub
        .get_arguments()
        .chain(cmd.get_arguments())
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();
    let given = |key: &str| {
        let flag = format!("--{key}");
        strs.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
    };
    let mut out = argv;
    for (key, value) in pairs {
        if key == "config" || given(&key) {
            continue;
        }
        if !known.contains(&key) {
            log::warn!("{path}: key `{key}` is not a flag of `{}`; ignored", sub.get_name());
            continue;
        }
        out.push(format!("--{key}").into());
        out.push(value.into());
    }
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MTSKL_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let argv = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            for line in e.to_string().lines() {
                eprintln!("error: {line}");
            }
            ExitCode::FAILURE
        }
    }
}
