use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mtskl_core::eval::report::{read_predictions, results_csv, ResultRow};
use mtskl_core::eval::confusion_metrics;
use mtskl_core::io::{read_labels, write_dataset};
use mtskl_core::synthetic::{train_test, SyntheticSpec};
use mtskl_core::classifiers::ClassifierConfig;
use mtskl_core::{KernelMethod, LabelNames};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtskl")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn data(root: &Path) -> (String, String) {
    let mut spec = SyntheticSpec::new(10, 3, 30);
    spec.informative = 1;
    spec.separation = 2.0;
    spec.missing = 0.1;
    let (train, test) = train_test(&spec, 5);
    write_dataset(&root.join("train"), &train).unwrap();
    write_dataset(&root.join("test"), &test).unwrap();
    (s(&root.join("train")), s(&root.join("test")))
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (s(&p), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn lps_kernel(root: &Path, tr: &str, te: &str) -> String {
    let k = s(&root.join("kernel"));
    ok(&["kernel", "--input", tr, "--test", te, "--output", &k, "--method", "lps", "--nT", "20", "--L", "4", "--seed", "1"]);
    k
}

#[test]
fn commands_leave_inputs_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let (tr, te) = data(tmp.path());
    let before = (snapshot(Path::new(&tr)), snapshot(Path::new(&te)));
    ok(&["prepare", "--input", &tr, "--test", &te, "--output", &s(&tmp.path().join("prep")), "--standardize", "on"]);
    let k = lps_kernel(tmp.path(), &tr, &te);
    let kbefore = snapshot(Path::new(&k));
    ok(&["classify", "--input", &k, "--output", &s(&tmp.path().join("cls")), "--classifier", "svm-i", "--C-margin", "1"]);
    assert_eq!(before, (snapshot(Path::new(&tr)), snapshot(Path::new(&te))));
    assert_eq!(kbefore, snapshot(Path::new(&k)));
}

#[test]
fn output_equal_to_input_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (tr, _) = data(tmp.path());
    let out = run(&["prepare", "--input", &tr, "--output", &tr]);
    assert!(!out.status.success());
}

#[test]
fn config_file_fills_flags_and_command_line_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let (tr, te) = data(tmp.path());
    let k = lps_kernel(tmp.path(), &tr, &te);
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# comment\nclassifier=knn-e\nk=5\nvector-sim=cosine\nunrelated=1\n").unwrap();
    let a = tmp.path().join("a");
    ok(&["classify", "--input", &k, "--output", &s(&a), "--config", &s(&cfg)]);
    let log = fs::read_to_string(a.join("run_log.txt")).unwrap();
    assert!(log.contains("classifier: classifier=knn-e k=5 vector-sim=cosine"), "{log}");
    let b = tmp.path().join("b");
    ok(&["classify", "--input", &k, "--output", &s(&b), "--config", &s(&cfg), "--k", "3"]);
    let log = fs::read_to_string(b.join("run_log.txt")).unwrap();
    assert!(log.contains("classifier: classifier=knn-e k=3 vector-sim=cosine"), "{log}");
}

#[test]
fn cv_output_is_a_valid_config() {
    let tmp = tempfile::tempdir().unwrap();
    let (tr, te) = data(tmp.path());
    let k = lps_kernel(tmp.path(), &tr, &te);
    let cv = tmp.path().join("cv");
    ok(&["cv", "--input", &k, "--output", &s(&cv), "--seed", "2", "--classifier", "svm-e", "--folds", "3"]);
    let chosen = fs::read_to_string(cv.join("chosen_config.txt")).unwrap();
    assert!(chosen.starts_with("# mtskl "));
    assert!(chosen.contains("\nclassifier=svm-e\n") && chosen.contains("\nC-margin=") && chosen.contains("\ngamma="));
    let scores = fs::read_to_string(cv.join("cv_scores.csv")).unwrap();
    assert_eq!(scores.lines().filter(|l| l.starts_with("svm-e,")).count(), 16 * 11);
    ok(&["classify", "--input", &k, "--output", &s(&tmp.path().join("cls")), "--config", &s(&cv.join("chosen_config.txt"))]);
}

#[test]
fn results_regenerate_from_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let (tr, te) = data(tmp.path());
    let k = lps_kernel(tmp.path(), &tr, &te);
    let cls = tmp.path().join("cls");
    ok(&["classify", "--input", &k, "--output", &s(&cls), "--classifier", "knn-i", "--k", "3"]);
    let names = LabelNames::default();
    let preds = read_predictions_skipping_comments(&cls.join("predictions.csv"), &names, tmp.path());
    let truth = read_labels(&Path::new(&k).join("test_labels.csv"), &names).unwrap();
    assert_eq!(preds.iter().map(|p| &p.0).collect::<Vec<_>>(), truth.iter().map(|t| &t.0).collect::<Vec<_>>());
    let y: Vec<_> = truth.iter().map(|t| t.1).collect();
    let p: Vec<_> = preds.iter().map(|p| p.1.label).collect();
    let row = ResultRow {
        method: KernelMethod::Lps,
        config: ClassifierConfig::KnnInput { k: 3 },
        metrics: confusion_metrics(&y, &p).unwrap(),
    };
    let written = fs::read_to_string(cls.join("results.csv")).unwrap();
    let body: String = written.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    assert_eq!(body, results_csv(&[row]));
}

fn read_predictions_skipping_comments(
    path: &Path,
    names: &LabelNames,
    scratch: &Path,
) -> Vec<(String, mtskl_core::classifiers::Prediction)> {
    let text = fs::read_to_string(path).unwrap();
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let copy = scratch.join("predictions_body.csv");
    fs::write(&copy, body).unwrap();
    read_predictions(&copy, names).unwrap()
}

#[test]
fn errors_name_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let (tr, _) = data(tmp.path());
    let sample = fs::read_dir(&tr)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("str"))
        .unwrap();
    let mut text = fs::read_to_string(&sample).unwrap();
    text.push_str("1,oops,2\n");
    fs::write(&sample, text).unwrap();
    let out = run(&["kernel", "--input", &tr, "--output", &s(&tmp.path().join("k")), "--method", "lps", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains(&format!("{}:32", sample.display())) && err.contains("oops"), "{err}");
}

#[test]
fn seed_is_required_for_kernel() {
    let tmp = tempfile::tempdir().unwrap();
    let (tr, _) = data(tmp.path());
    let out = run(&["kernel", "--input", &tr, "--output", &s(&tmp.path().join("k")), "--method", "tck"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn windows_report_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (tr, te) = data(tmp.path());
    let w = tmp.path().join("w");
    ok(&[
        "windows", "--input", &tr, "--test", &te, "--output", &s(&w), "--method", "tck", "--Q", "2", "--C-mixtures", "3",
        "--seed", "4", "--count", "3", "--classifier", "svm-i", "--C-margin", "1", "--workers", "2",
    ]);
    let windows = fs::read_to_string(w.join("windows.csv")).unwrap();
    assert!(windows.contains("problem,win_size,hbs_before,mins_before\nc1,10,20,0-1\nc2,20,10,0-1\nc3,30,0,0\n"), "{windows}");
    let curves = fs::read_to_string(w.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().filter(|l| l.starts_with('c')).count(), 3);
    let svg = fs::read_to_string(w.join("curves.svg")).unwrap();
    assert!(svg.contains("<!-- mtskl ") && svg.contains("seed=4"));
    let log = fs::read_to_string(w.join("run_log.txt")).unwrap();
    assert!(log.contains("seed: 4") && log.contains("refit on the full training set"));
}
