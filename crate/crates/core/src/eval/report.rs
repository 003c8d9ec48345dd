//! CSV tables, the window-curve chart and the plain-text run log.

use std::fmt::Write as _;
use std::path::Path;

use crate::classifiers::{ClassifierConfig, Prediction};
use crate::error::{invalid, Error, Result};
use crate::eval::experiment::WindowReport;
use crate::eval::metrics::MetricTriple;
use crate::kernel_matrix::KernelMethod;
use crate::mts::{Label, LabelNames, WindowProblem};

const ABSENT: &str = "--";

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

/// One row of the results table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub method: KernelMethod,
    pub config: ClassifierConfig,
    pub metrics: MetricTriple,
}

pub const RESULTS_HEADER: &str = "method,similarity,acc,rec,f1,k,diss,c,gamma";

/// Results table with one row per (classifier, similarity); hyperparameters
/// a classifier does not use are shown as `--`.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in rows {
        let c = &r.config;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            c.kind(),
            r.method.to_string().to_uppercase(),
            fmt3(r.metrics.acc),
            fmt3(r.metrics.rec),
            fmt3(r.metrics.f1),
            c.k().map_or(ABSENT.into(), |k| k.to_string()),
            c.similarity().map_or(ABSENT.into(), |v| v.to_string()),
            c.c_margin().map_or(ABSENT.into(), fmt3),
            c.gamma().map_or(ABSENT.into(), fmt3),
        );
    }
    s
}

/// Heart rates assumed when converting beats to minutes.
pub const BPM_RANGE: (usize, usize) = (60, 100);

/// Approximate minutes spanned by `beats` heartbeats: `"lo-hi"` with the
/// fastest rate rounded and the slowest rounded up, `"0"` for no beats.
pub fn minutes_before(beats: usize) -> String {
    if beats == 0 {
        return "0".into();
    }
    let lo = (beats as f64 / BPM_RANGE.1 as f64).round() as usize;
    let hi = beats.div_ceil(BPM_RANGE.0);
    format!("{lo}-{hi}")
}

pub const WINDOWS_HEADER: &str = "problem,win_size,hbs_before,mins_before";

pub fn windows_csv(problems: &[WindowProblem]) -> String {
    let mut s = String::from(WINDOWS_HEADER);
    s.push('\n');
    for p in problems {
        let _ = writeln!(
            s,
            "c{},{},{},{}",
            p.index,
            p.window_len,
            p.steps_before_event,
            minutes_before(p.steps_before_event)
        );
    }
    s
}

pub const CURVES_HEADER: &str = "problem,win_size,method,similarity,acc,rec,f1,k,diss,c,gamma";

/// One row per (window problem, classifier configuration).
pub fn curves_csv(report: &WindowReport) -> String {
    let mut s = String::from(CURVES_HEADER);
    s.push('\n');
    for w in &report.windows {
        let rows: Vec<ResultRow> = w
            .results
            .iter()
            .map(|r| ResultRow {
                method: report.method,
                config: r.config,
                metrics: r.metrics,
            })
            .collect();
        for line in results_csv(&rows).lines().skip(1) {
            let (kind, rest) = line.split_once(',').unwrap();
            let _ = writeln!(s, "c{},{},{kind},{rest}", w.problem.index, w.problem.window_len);
        }
    }
    s
}

/// Line chart of ACC and REC against the problem index for the
/// configuration at `config_index`.
pub fn curves_svg(report: &WindowReport, config_index: usize) -> Result<String> {
    let points: Vec<(usize, MetricTriple)> = report
        .windows
        .iter()
        .map(|w| {
            w.results
                .get(config_index)
                .map(|r| (w.problem.index, r.metrics))
                .ok_or_else(|| invalid(format!("no configuration {config_index}")))
        })
        .collect::<Result<_>>()?;
    let config = report.windows.first().map(|w| w.results[config_index].config);
    let (width, height) = (480.0, 320.0);
    let (left, right, top, bottom) = (50.0, 110.0, 30.0, 40.0);
    let pw = width - left - right;
    let ph = height - top - bottom;
    let n = points.len().max(2);
    let x_of = |i: usize| left + pw * (i as f64 - 1.0) / (n as f64 - 1.0);
    let y_of = |v: f64| top + ph * (1.0 - v);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let title = match config {
        Some(c) => format!("{} + {}", c.kind(), report.method.to_string().to_uppercase()),
        None => report.method.to_string().to_uppercase(),
    };
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle">{title}</text>"#, left + pw / 2.0);
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
    }
    for &(i, _) in &points {
        let x = x_of(i);
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">c{i}</text>"#,
            top + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">problem</text>"#,
        left + pw / 2.0,
        height - 6.0
    );
    let series: [(&str, &str, fn(&MetricTriple) -> f64); 2] =
        [("ACC", "#1f77b4", |m| m.acc), ("REC", "#d62728", |m| m.rec)];
    for (si, (name, color, get)) in series.iter().enumerate() {
        let path: Vec<String> = points
            .iter()
            .map(|(i, m)| format!("{:.1},{:.1}", x_of(*i), y_of(get(m))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for (i, m) in &points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                x_of(*i),
                y_of(get(m))
            );
        }
        let ly = top + 12.0 + 18.0 * si as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{name}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub const PREDICTIONS_HEADER: &str = "id,label,decision_value";

pub fn predictions_csv(ids: &[String], predictions: &[Prediction], names: &LabelNames) -> String {
    let mut s = String::from(PREDICTIONS_HEADER);
    s.push('\n');
    for (id, p) in ids.iter().zip(predictions) {
        let dv = p.decision_value.map_or(String::new(), |d| d.to_string());
        let _ = writeln!(s, "{id},{},{dv}", names.name(p.label));
    }
    s
}

/// Reads a file written by [`predictions_csv`].
pub fn read_predictions(path: &Path, names: &LabelNames) -> Result<Vec<(String, Prediction)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == PREDICTIONS_HEADER => {}
        _ => return Err(Error::parse(path, 1, format!("expected header `{PREDICTIONS_HEADER}`"))),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(Error::parse(path, i + 1, "expected 3 fields"));
            }
            let label: Label = names
                .parse(f[1])
                .ok_or_else(|| Error::parse(path, i + 1, format!("unknown label `{}`", f[1])))?;
            let decision_value = if f[2].is_empty() {
                None
            } else {
                Some(f[2].parse().map_err(|e| Error::parse(path, i + 1, format!("{e}")))?)
            };
            Ok((f[0].to_string(), Prediction { label, decision_value }))
        })
        .collect()
}

/// Plain-text log: `key: value` header lines, then free-form notes.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    entries: Vec<(String, String)>,
    notes: Vec<String>,
}

impl RunLog {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        let mut log = RunLog::default();
        log.entry("command", command);
        log.entry("version", crate::VERSION);
        if let Some(seed) = seed {
            log.entry("seed", seed);
        }
        log
    }

    pub fn entry(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn note(&mut self, text: impl Into<String>) -> &mut Self {
        self.notes.push(text.into());
        self
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}: {v}");
        }
        if !self.notes.is_empty() {
            s.push('\n');
            for n in &self.notes {
                let _ = writeln!(s, "note: {n}");
            }
        }
        s
    }
}

/// Fixed notes describing choices that affect how results are read.
pub fn standard_notes() -> Vec<String> {
    vec![
        "embedding-space SVM uses exp(-gamma * ||k_i - k_j||^2) between kernel rows".into(),
        "the configuration chosen by cross-validation is refit on the full training set before test scoring".into(),
        "indefinite kernels are repaired by clipping negative eigenvalues before SVM training".into(),
    ]
}
