use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;

use mtskl_core::classifiers::{fit_predict, ClassifierConfig, ClassifierKind, IndefinitePolicy, VectorSimilarity};
use mtskl_core::eval::report::{
    curves_csv, curves_svg, predictions_csv, results_csv, standard_notes, windows_csv, ResultRow, RunLog,
};
use mtskl_core::eval::{
    compute_kernels, cross_validate, prepare_split, run_window_experiment, Confusion, CvPlan,
    KernelSpec, ModelArtifact, PipelineOptions, PrepareOptions,
};
use mtskl_core::io::{parse_key_values, read_dataset, read_labels, write_dataset, write_labels};
use mtskl_core::lps::LpsParams;
use mtskl_core::mts::{average_correlation_matrix, select_features, window_problems, DEFAULT_LENGTH_BASE};
use mtskl_core::tck::TckParams;
use mtskl_core::{KernelMatrix, KernelMethod, Label, LabelNames, MtsDataset, VERSION};

use crate::{ClassifierOptions, ClassifyArgs, Command, CvArgs, KernelArgs, KernelOptions, MethodArg, PrepareArgs, WindowsArgs};

pub const KERNEL_INFO: &str = "kernel.txt";
pub const MODEL: &str = "model.json";
pub const K_TR: &str = "k_tr.csv";
pub const K_TE: &str = "k_te.csv";
pub const TRAIN_LABELS: &str = "train_labels.csv";
pub const TEST_LABELS: &str = "test_labels.csv";
pub const RUN_LOG: &str = "run_log.txt";

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Prepare(a) => prepare(a),
        Command::Kernel(a) => kernel(a),
        Command::Cv(a) => cv(a),
        Command::Classify(a) => classify(a),
        Command::Windows(a) => windows(a),
    }
}

/// Comment lines identifying the producing version and seed.
fn provenance(seed: Option<u64>) -> Vec<String> {
    let mut v = vec![format!("mtskl {VERSION}")];
    if let Some(s) = seed {
        v.push(format!("seed={s}"));
    }
    v
}

fn with_comments(seed: Option<u64>, body: &str) -> String {
    let mut s = String::new();
    for c in provenance(seed) {
        let _ = writeln!(s, "# {c}");
    }
    s.push_str(body);
    s
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn output_dir(output: &Path, inputs: &[&Path]) -> Result<PathBuf> {
    for input in inputs {
        if let (Ok(a), Ok(b)) = (output.canonicalize(), input.canonicalize()) {
            if a == b {
                bail!("output directory {} is the input directory", output.display());
            }
        }
    }
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    Ok(output.to_path_buf())
}

fn empty_like(ds: &MtsDataset) -> Result<MtsDataset> {
    let mut e = MtsDataset::new(vec![], None, ds.variable_names().to_vec())?;
    e.label_names = ds.label_names.clone();
    Ok(e)
}

fn read_pair(train: &Path, test: Option<&Path>) -> Result<(MtsDataset, MtsDataset, bool)> {
    let train_ds = read_dataset(train)?;
    match test {
        Some(p) => {
            let test_ds = read_dataset(p)?;
            if test_ds.variable_names() != train_ds.variable_names() {
                bail!("{}: variables differ from the training set", p.display());
            }
            Ok((train_ds, test_ds, true))
        }
        None => {
            let e = empty_like(&train_ds)?;
            Ok((train_ds, e, false))
        }
    }
}

fn prepare(a: PrepareArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.theta_c) {
        bail!("--theta-c must lie in [0, 1], got {}", a.theta_c);
    }
    let (train, test, has_test) = read_pair(&a.input, a.test.as_deref())?;
    let mut inputs = vec![a.input.as_path()];
    inputs.extend(a.test.as_deref());
    let out = output_dir(&a.output, &inputs)?;
    let opts = PrepareOptions {
        standardize: a.standardize.is_on(),
        length_base: DEFAULT_LENGTH_BASE,
    };
    let prepared = prepare_split(&train, &test, &opts)?;
    let summary = average_correlation_matrix(&prepared.train, a.theta_c)?;
    let kept = select_features(&summary);
    let names = prepared.train.variable_names();
    info!("kept {} of {} variables", kept.len(), names.len());

    let train_sel = prepared.train.select_vars(&kept)?;
    write_dataset(&out.join("train"), &train_sel)?;
    if has_test {
        write_dataset(&out.join("test"), &prepared.test.select_vars(&kept)?)?;
    }

    let mut r = String::new();
    for c in provenance(a.seed) {
        let _ = writeln!(r, "# {c}");
    }
    let _ = writeln!(r, "theta_c={}", a.theta_c);
    let _ = writeln!(r, "standardize={}", if opts.standardize { "on" } else { "off" });
    let _ = writeln!(r, "target_length={}", prepared.target_len);
    let _ = writeln!(r, "n_input_variables={}", names.len());
    let _ = writeln!(r, "n_retained={}", kept.len());
    let kept_names: Vec<&str> = kept.iter().map(|&i| names[i].as_str()).collect();
    let _ = writeln!(r, "retained={}", kept_names.join(","));
    let _ = writeln!(r, "\n# excluded variable, retained variable it correlates with, average correlation");
    for i in (0..names.len()).filter(|i| !kept.contains(i)) {
        let by = kept
            .iter()
            .copied()
            .find(|&j| summary.binarized[[i, j]])
            .expect("excluded variables are blocked by a retained one");
        let _ = writeln!(r, "excluded: {},{},{:.6}", names[i], names[by], summary.avg_corr[[i, by]]);
    }
    if let Some(stats) = &prepared.stats {
        let _ = writeln!(r, "\n# variable, training mean, training std");
        for (v, n) in names.iter().enumerate() {
            let _ = writeln!(r, "stats: {n},{},{}", stats.means[v], stats.stds[v]);
        }
    }
    for w in &summary.warnings {
        let _ = writeln!(r, "warning: {w}");
    }
    write(&out.join("selection_report.txt"), r)?;
    Ok(())
}

fn kernel_spec(k: &KernelOptions) -> Result<KernelSpec> {
    Ok(match k.method {
        MethodArg::Lps => {
            if k.n_trees < 1 || k.seg_len < 2 {
                bail!("--nT must be at least 1 and --L at least 2");
            }
            KernelSpec::Lps(LpsParams::new(k.n_trees, k.seg_len))
        }
        MethodArg::Tck => {
            if k.q < 1 || k.c_mixtures < 2 {
                bail!("--Q must be at least 1 and --C-mixtures at least 2");
            }
            KernelSpec::Tck(TckParams::new(k.q, k.c_mixtures))
        }
    })
}

fn pipeline_options(k: &KernelOptions, seed: u64) -> Result<PipelineOptions> {
    let mut opts = PipelineOptions::new(kernel_spec(k)?, seed);
    if let Some(s) = k.standardize {
        opts.prepare.standardize = s.is_on();
    }
    Ok(opts)
}

fn kernel_params_log(log: &mut RunLog, k: &KernelOptions, opts: &PipelineOptions) {
    log.entry("method", opts.kernel.method());
    match opts.kernel {
        KernelSpec::Lps(_) => log.entry("nT", k.n_trees).entry("L", k.seg_len),
        KernelSpec::Tck(_) => log.entry("Q", k.q).entry("C-mixtures", k.c_mixtures),
    };
    log.entry("standardize", if opts.prepare.standardize { "on" } else { "off" });
}

fn kernel(a: KernelArgs) -> Result<()> {
    let (train, test, has_test) = read_pair(&a.input, a.test.as_deref())?;
    let mut inputs = vec![a.input.as_path()];
    inputs.extend(a.test.as_deref());
    let out = output_dir(&a.output, &inputs)?;
    let opts = pipeline_options(&a.kernel, a.seed)?;
    let prepared = prepare_split(&train, &test, &opts.prepare)?;
    let pair = compute_kernels(&opts.kernel, &prepared.train, &prepared.test, a.seed)?;

    let comments = provenance(Some(a.seed));
    let mut meta = comments.iter().map(|c| format!("# {c}\n")).collect::<String>();
    let _ = writeln!(meta, "method={}", opts.kernel.method());
    let _ = writeln!(meta, "seed={}", a.seed);
    let _ = writeln!(meta, "target_length={}", prepared.target_len);
    let _ = writeln!(meta, "n_train={}", prepared.train.len());
    let _ = writeln!(meta, "n_test={}", prepared.test.len());
    let _ = writeln!(meta, "label_positive={}", train.label_names.positive);
    let _ = writeln!(meta, "label_negative={}", train.label_names.negative);
    write(&out.join(KERNEL_INFO), meta)?;

    let model = ModelArtifact::new(a.seed, &prepared, pair.model);
    write(&out.join(MODEL), model.to_json()? + "\n")?;
    pair.k_tr.save_csv(&out.join(K_TR), &comments)?;
    if has_test {
        pair.k_te.save_csv(&out.join(K_TE), &comments)?;
    }
    if let Some(l) = train.labels() {
        write_labels(&out.join(TRAIN_LABELS), &train.ids(), l, &train.label_names)?;
    }
    if let Some(l) = test.labels().filter(|_| has_test) {
        write_labels(&out.join(TEST_LABELS), &test.ids(), l, &train.label_names)?;
    }

    let mut log = RunLog::new("kernel", Some(a.seed));
    kernel_params_log(&mut log, &a.kernel, &opts);
    log.entry("train", a.input.display())
        .entry("n_train", prepared.train.len())
        .entry("target_length", prepared.target_len);
    if let Some(t) = &a.test {
        log.entry("test", t.display()).entry("n_test", prepared.test.len());
    }
    write(&out.join(RUN_LOG), log.render())?;
    Ok(())
}

/// Contents of a directory written by `kernel`.
struct KernelDir {
    method: KernelMethod,
    seed: u64,
    names: LabelNames,
    k_tr: KernelMatrix,
    train_labels: Vec<Label>,
}

fn align_labels(path: &Path, ids: &[String], names: &LabelNames) -> Result<Vec<Label>> {
    let pairs = read_labels(path, names)?;
    ids.iter()
        .map(|id| {
            pairs
                .iter()
                .find(|(x, _)| x == id)
                .map(|(_, l)| *l)
                .with_context(|| format!("{}: no label for `{id}`", path.display()))
        })
        .collect()
}

fn read_kernel_dir(dir: &Path) -> Result<KernelDir> {
    let info_path = dir.join(KERNEL_INFO);
    let text = fs::read_to_string(&info_path).with_context(|| format!("reading {}", info_path.display()))?;
    let kv = parse_key_values(&info_path, &text)?;
    let get = |k: &str| kv.get(k).with_context(|| format!("{}: missing `{k}`", info_path.display()));
    let method: KernelMethod = get("method")?.parse()?;
    let seed: u64 = get("seed")?.parse().context("seed")?;
    let names = LabelNames {
        positive: get("label_positive")?.clone(),
        negative: get("label_negative")?.clone(),
    };
    let k_tr = KernelMatrix::load_csv(&dir.join(K_TR), method)?;
    let train_labels = align_labels(&dir.join(TRAIN_LABELS), k_tr.row_ids(), &names)?;
    Ok(KernelDir {
        method,
        seed,
        names,
        k_tr,
        train_labels,
    })
}

fn cv(a: CvArgs) -> Result<()> {
    let kd = read_kernel_dir(&a.input)?;
    let out = output_dir(&a.output, &[&a.input])?;
    let kind: ClassifierKind = a.classifier.parse()?;
    let mut plan = CvPlan::new(a.seed);
    plan.folds = a.folds;
    let outcome = cross_validate(&kd.k_tr, &kd.train_labels, &plan, kind, IndefinitePolicy::Clip)?;

    let mut chosen = provenance(Some(a.seed)).iter().map(|c| format!("# {c}\n")).collect::<String>();
    let _ = writeln!(chosen, "# kernel={} kernel_seed={}", kd.method, kd.seed);
    let _ = writeln!(chosen, "# folds={} cv_accuracy={}", a.folds, outcome.score);
    for (k, v) in outcome.best.to_pairs() {
        let _ = writeln!(chosen, "{k}={v}");
    }
    write(&out.join("chosen_config.txt"), chosen)?;

    let mut scores = String::from("classifier,k,vector-sim,C-margin,gamma,cv_accuracy\n");
    for g in &outcome.grid {
        let c = &g.config;
        let _ = writeln!(
            scores,
            "{},{},{},{},{},{}",
            c.kind(),
            c.k().map_or(String::new(), |k| k.to_string()),
            c.similarity().map_or(String::new(), |s| s.to_string()),
            c.c_margin().map_or(String::new(), |x| x.to_string()),
            c.gamma().map_or(String::new(), |x| x.to_string()),
            g.score.map_or(String::new(), |x| x.to_string()),
        );
    }
    write(&out.join("cv_scores.csv"), with_comments(Some(a.seed), &scores))?;

    let mut folds = String::from("id,fold\n");
    for (id, f) in kd.k_tr.row_ids().iter().zip(&outcome.folds) {
        let _ = writeln!(folds, "{id},{f}");
    }
    write(&out.join("folds.csv"), with_comments(Some(a.seed), &folds))?;

    let mut log = RunLog::new("cv", Some(a.seed));
    log.entry("kernel", a.input.display())
        .entry("kernel_method", kd.method)
        .entry("kernel_seed", kd.seed)
        .entry("classifier", kind)
        .entry("folds", a.folds)
        .entry("grid_points", outcome.grid.len())
        .entry("chosen", outcome.best)
        .entry("cv_accuracy", outcome.score);
    write(&out.join(RUN_LOG), log.render())?;
    Ok(())
}

fn classifier_config(c: &ClassifierOptions) -> Result<ClassifierConfig> {
    let kind: ClassifierKind = c.classifier.parse()?;
    let sim = c
        .vector_sim
        .as_deref()
        .map(str::parse::<VectorSimilarity>)
        .transpose()?;
    if let Some(x) = c.c_margin.filter(|x| !(*x > 0.0)) {
        bail!("--C-margin must be positive, got {x}");
    }
    if let Some(x) = c.gamma.filter(|x| !(*x > 0.0)) {
        bail!("--gamma must be positive, got {x}");
    }
    Ok(ClassifierConfig::from_parts(kind, c.k, sim, c.c_margin, c.gamma)?)
}

fn metrics_text(seed: Option<u64>, c: &Confusion) -> String {
    let m = c.metrics();
    let mut s = String::new();
    let _ = writeln!(s, "acc={}", m.acc);
    let _ = writeln!(s, "rec={}", m.rec);
    let _ = writeln!(s, "f1={}", m.f1);
    let _ = writeln!(s, "tp={}\nfp={}\ntn={}\nfn={}", c.tp, c.fp, c.tn, c.fn_);
    with_comments(seed, &s)
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let kd = read_kernel_dir(&a.input)?;
    let out = output_dir(&a.output, &[&a.input])?;
    let config = classifier_config(&a.classifier)?;
    let k_te = KernelMatrix::load_csv(&a.input.join(K_TE), kd.method)?;
    let seed = a.seed.or(Some(kd.seed));

    let test_labels_path = a.input.join(TEST_LABELS);
    let test_labels = if test_labels_path.exists() {
        Some(align_labels(&test_labels_path, k_te.row_ids(), &kd.names)?)
    } else {
        None
    };
    let predictions = fit_predict(&kd.k_tr, &kd.train_labels, &k_te, &config, IndefinitePolicy::Clip)?;

    write(
        &out.join("predictions.csv"),
        with_comments(seed, &predictions_csv(k_te.row_ids(), &predictions, &kd.names)),
    )?;
    let mut log = RunLog::new("classify", seed);
    log.entry("kernel", a.input.display())
        .entry("kernel_method", kd.method)
        .entry("classifier", config)
        .entry("n_train", kd.k_tr.nrows())
        .entry("n_test", k_te.nrows());
    if let Some(y) = &test_labels {
        let pred: Vec<Label> = predictions.iter().map(|p| p.label).collect();
        let conf = Confusion::from_labels(y, &pred)?;
        write(&out.join("metrics.txt"), metrics_text(seed, &conf))?;
        let row = ResultRow {
            method: kd.method,
            config,
            metrics: conf.metrics(),
        };
        write(&out.join("results.csv"), with_comments(seed, &results_csv(&[row])))?;
        let m = conf.metrics();
        log.entry("acc", m.acc).entry("rec", m.rec).entry("f1", m.f1);
    } else {
        log.note("test labels absent; metrics not computed");
    }
    for n in standard_notes() {
        log.note(n);
    }
    write(&out.join(RUN_LOG), log.render())?;
    Ok(())
}

fn windows(a: WindowsArgs) -> Result<()> {
    let train = read_dataset(&a.input)?;
    let test = read_dataset(&a.test)?;
    let out = output_dir(&a.output, &[&a.input, &a.test])?;
    let opts = pipeline_options(&a.kernel, a.seed)?;
    let config = classifier_config(&a.classifier)?;
    let report = run_window_experiment(&train, &test, &opts, &[config], a.count)?;
    let problems = window_problems(report.t_min, a.count)?;

    write(&out.join("windows.csv"), with_comments(Some(a.seed), &windows_csv(&problems)))?;
    write(&out.join("curves.csv"), with_comments(Some(a.seed), &curves_csv(&report)))?;
    let svg = curves_svg(&report, 0)?;
    let (first, rest) = svg.split_once('\n').expect("svg header line");
    write(
        &out.join("curves.svg"),
        format!("{first}\n<!-- mtskl {VERSION} seed={} -->\n{rest}", a.seed),
    )?;
    let mut per_window = String::from("problem,id,label,decision_value\n");
    for w in &report.windows {
        let csv = predictions_csv(&test.ids(), &w.results[0].predictions, &test.label_names);
        for line in csv.lines().skip(1) {
            let _ = writeln!(per_window, "c{},{line}", w.problem.index);
        }
    }
    write(&out.join("predictions.csv"), with_comments(Some(a.seed), &per_window))?;

    let mut log = RunLog::new("windows", Some(a.seed));
    kernel_params_log(&mut log, &a.kernel, &opts);
    log.entry("train", a.input.display())
        .entry("test", a.test.display())
        .entry("count", a.count)
        .entry("t_min", report.t_min)
        .entry("classifier", config);
    for w in &report.windows {
        let m = w.results[0].metrics;
        log.entry(
            &format!("c{}", w.problem.index),
            format!(
                "window={} target_length={} acc={} rec={} f1={}",
                w.problem.window_len, w.target_len, m.acc, m.rec, m.f1
            ),
        );
    }
    log.note("the kernel is refit on every window from the same seed; the classifier configuration is fixed");
    for n in standard_notes() {
        log.note(n);
    }
    write(&out.join(RUN_LOG), log.render())?;
    Ok(())
}
