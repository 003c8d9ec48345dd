//! End-to-end runs: preparation, kernel fitting, classification and the
//! windows-of-increasing-length protocol.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{fit_predict, ClassifierConfig, IndefinitePolicy, Prediction};
use crate::error::{invalid, Result};
use crate::eval::metrics::{confusion_metrics, MetricTriple};
use crate::kernel_matrix::{KernelMatrix, KernelMethod};
use crate::lps::{lps_fit, lps_kernel_matrices, LpsModel, LpsParams};
use crate::mts::{
    apply_window, compute_variable_stats, resample_linear, standardize_dataset,
    target_length_with_base, window_problems, MtsDataset, StandardizerStats, WindowProblem,
    DEFAULT_LENGTH_BASE,
};
use crate::tck::{tck_fit, tck_test_kernel, TckModel, TckParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub standardize: bool,
    pub length_base: usize,
}

impl PrepareOptions {
    /// TCK works on standardized data, LPS on raw values.
    pub fn for_method(method: KernelMethod) -> Self {
        PrepareOptions {
            standardize: method == KernelMethod::Tck,
            length_base: DEFAULT_LENGTH_BASE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub train: MtsDataset,
    pub test: MtsDataset,
    pub target_len: usize,
    pub stats: Option<StandardizerStats>,
}

/// Resamples train and test to a common length derived from the longest
/// sample of either set, then optionally standardizes both with training
/// statistics.
pub fn prepare_split(train: &MtsDataset, test: &MtsDataset, opts: &PrepareOptions) -> Result<Prepared> {
    if train.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if test.n_vars() != train.n_vars() {
        return Err(invalid(format!(
            "train has {} variables, test {}",
            train.n_vars(),
            test.n_vars()
        )));
    }
    let t_max = train.max_len().into_iter().chain(test.max_len()).max().unwrap();
    let target_len = target_length_with_base(t_max, opts.length_base)?;
    let train = train.map_samples(|m| resample_linear(m, target_len))?;
    let test = test.map_samples(|m| resample_linear(m, target_len))?;
    let (train, test, stats) = if opts.standardize {
        let stats = compute_variable_stats(&train)?;
        (
            standardize_dataset(&train, &stats)?,
            standardize_dataset(&test, &stats)?,
            Some(stats),
        )
    } else {
        (train, test, None)
    };
    Ok(Prepared {
        train,
        test,
        target_len,
        stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum KernelSpec {
    Lps(LpsParams),
    Tck(TckParams),
}

impl KernelSpec {
    pub fn method(&self) -> KernelMethod {
        match self {
            KernelSpec::Lps(_) => KernelMethod::Lps,
            KernelSpec::Tck(_) => KernelMethod::Tck,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", content = "model", rename_all = "lowercase")]
pub enum FittedKernel {
    Lps(LpsModel),
    Tck(TckModel),
}

impl FittedKernel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Persisted form of a fitted kernel with what is needed to score new data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: String,
    pub seed: u64,
    pub target_len: usize,
    pub standardizer: Option<StandardizerStats>,
    pub kernel: FittedKernel,
}

impl ModelArtifact {
    pub fn new(seed: u64, prepared: &Prepared, kernel: FittedKernel) -> Self {
        ModelArtifact {
            version: crate::VERSION.to_string(),
            seed,
            target_len: prepared.target_len,
            standardizer: prepared.stats.clone(),
            kernel,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone)]
pub struct KernelPair {
    pub model: FittedKernel,
    pub k_tr: KernelMatrix,
    pub k_te: KernelMatrix,
}

/// Fits the kernel on `train` and scores `test` against it.
pub fn compute_kernels(spec: &KernelSpec, train: &MtsDataset, test: &MtsDataset, seed: u64) -> Result<KernelPair> {
    match spec {
        KernelSpec::Lps(p) => {
            let model = lps_fit(train, *p, seed)?;
            let (k_tr, k_te) = lps_kernel_matrices(&model, train, test)?;
            Ok(KernelPair {
                model: FittedKernel::Lps(model),
                k_tr,
                k_te,
            })
        }
        KernelSpec::Tck(p) => {
            let (model, k_tr) = tck_fit(train, *p, seed)?;
            let k_te = tck_test_kernel(&model, test)?;
            Ok(KernelPair {
                model: FittedKernel::Tck(model),
                k_tr,
                k_te,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub config: ClassifierConfig,
    pub predictions: Vec<Prediction>,
    pub metrics: MetricTriple,
}

/// Trains each configuration on the full `k_tr` and scores `k_te`.
pub fn classify_all(
    k_tr: &KernelMatrix,
    k_te: &KernelMatrix,
    train: &MtsDataset,
    test: &MtsDataset,
    configs: &[ClassifierConfig],
    policy: IndefinitePolicy,
) -> Result<Vec<MethodResult>> {
    let y_tr = train.require_labels()?;
    let y_te = test.require_labels()?;
    configs
        .iter()
        .map(|config| {
            let predictions = fit_predict(k_tr, y_tr, k_te, config, policy)?;
            let pred: Vec<_> = predictions.iter().map(|p| p.label).collect();
            Ok(MethodResult {
                config: *config,
                metrics: confusion_metrics(y_te, &pred)?,
                predictions,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub kernel: KernelSpec,
    pub prepare: PrepareOptions,
    pub seed: u64,
    pub policy: IndefinitePolicy,
}

impl PipelineOptions {
    pub fn new(kernel: KernelSpec, seed: u64) -> Self {
        PipelineOptions {
            prepare: PrepareOptions::for_method(kernel.method()),
            kernel,
            seed,
            policy: IndefinitePolicy::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub prepared: Prepared,
    pub kernels: KernelPair,
    pub results: Vec<MethodResult>,
}

/// Prepare, fit the kernel, then classify with every configuration.
pub fn run_pipeline(
    train: &MtsDataset,
    test: &MtsDataset,
    opts: &PipelineOptions,
    configs: &[ClassifierConfig],
) -> Result<PipelineRun> {
    let prepared = prepare_split(train, test, &opts.prepare)?;
    let kernels = compute_kernels(&opts.kernel, &prepared.train, &prepared.test, opts.seed)?;
    let results = classify_all(
        &kernels.k_tr,
        &kernels.k_te,
        &prepared.train,
        &prepared.test,
        configs,
        opts.policy,
    )?;
    Ok(PipelineRun {
        prepared,
        kernels,
        results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub problem: WindowProblem,
    /// Length after resampling.
    pub target_len: usize,
    pub results: Vec<MethodResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub method: KernelMethod,
    pub seed: u64,
    /// Shortest length over train and test.
    pub t_min: usize,
    pub windows: Vec<WindowResult>,
}

/// Runs the full pipeline on `count` end-aligned windows of increasing
/// length. Every window refits the kernel from the same seed; the
/// classifier configurations are fixed in advance.
pub fn run_window_experiment(
    train: &MtsDataset,
    test: &MtsDataset,
    opts: &PipelineOptions,
    configs: &[ClassifierConfig],
    count: usize,
) -> Result<WindowReport> {
    let t_min = train
        .min_len()
        .into_iter()
        .chain(test.min_len())
        .min()
        .ok_or_else(|| invalid("datasets are empty"))?;
    let problems = window_problems(t_min, count)?;
    let windows = problems
        .par_iter()
        .map(|p| {
            let tr = apply_window(train, p, t_min)?;
            let te = apply_window(test, p, t_min)?;
            let run = run_pipeline(&tr, &te, opts, configs)
                .map_err(|e| invalid(format!("window problem c{}: {e}", p.index)))?;
            Ok(WindowResult {
                problem: *p,
                target_len: run.prepared.target_len,
                results: run.results,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowReport {
        method: opts.kernel.method(),
        seed: opts.seed,
        t_min,
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mts::{Label, Mts};
    use ndarray::Array2;

    fn toy(n: usize, len: usize, offset: f64) -> MtsDataset {
        let samples: Vec<Mts> = (0..n)
            .map(|i| {
                let shift = if i % 2 == 0 { 2.0 } else { 0.0 };
                Mts::dense(
                    format!("s{i}"),
                    Array2::from_shape_fn((2, len), |(v, t)| {
                        shift + ((t as f64) * 0.3 + v as f64 + i as f64 * 0.7 + offset).sin()
                    }),
                )
            })
            .collect();
        let labels = (0..n).map(|i| if i % 2 == 0 { Label::Positive } else { Label::Negative }).collect();
        MtsDataset::new(samples, Some(labels), vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn prepare_uses_longest_over_both_sets() {
        let train = toy(6, 40, 0.0);
        let test = toy(4, 60, 0.5);
        let p = prepare_split(&train, &test, &PrepareOptions::for_method(KernelMethod::Tck)).unwrap();
        assert_eq!(p.target_len, 20);
        assert!(p.train.samples().iter().chain(p.test.samples()).all(|m| m.len() == 20));
        assert!(p.stats.is_some());
        let p = prepare_split(&train, &test, &PrepareOptions::for_method(KernelMethod::Lps)).unwrap();
        assert!(p.stats.is_none());
    }

    #[test]
    fn last_window_equals_direct_run() {
        let train = toy(12, 40, 0.0);
        let test = toy(8, 40, 0.5);
        let opts = PipelineOptions::new(KernelSpec::Lps(LpsParams::new(20, 4)), 9);
        let configs = [ClassifierConfig::KnnInput { k: 3 }];
        let report = run_window_experiment(&train, &test, &opts, &configs, 4).unwrap();
        let sizes: Vec<usize> = report.windows.iter().map(|w| w.problem.window_len).collect();
        assert_eq!(sizes, vec![10, 20, 30, 40]);
        let direct = run_pipeline(&train, &test, &opts, &configs).unwrap();
        assert_eq!(report.windows[3].results, direct.results);
    }

    #[test]
    fn fitted_kernel_json_round_trip() {
        let train = toy(12, 30, 0.0);
        let opts = PipelineOptions::new(KernelSpec::Lps(LpsParams::new(5, 4)), 1);
        let run = run_pipeline(&train, &train, &opts, &[]).unwrap();
        let json = run.kernels.model.to_json().unwrap();
        let back = FittedKernel::from_json(&json).unwrap();
        assert_eq!(back.to_json().unwrap(), json);
    }
}
