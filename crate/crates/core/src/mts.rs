//! Multivariate time series with missing entries and their preparation:
//! resampling to a common length, per-variable standardization, correlation
//! based feature selection and event-anchored window slicing.

use log::warn;
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Constant of the common-length rule `ceil(T_M / ceil(T_M / base))`.
pub const DEFAULT_LENGTH_BASE: usize = 25;

/// Standard deviations at or below this value are treated as zero and the
/// standardization divisor falls back to 1.
pub const STD_GUARD: f64 = 1e-12;

/// One sample: a `V x T` matrix with an observed/missing mask.
///
/// Entries whose mask is `false` are never read.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mts {
    id: String,
    values: Array2<f64>,
    mask: Array2<bool>,
}

/// Equal ids and masks, and equal values on observed entries.
impl PartialEq for Mts {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.mask == other.mask
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.mask)
                .all(|((a, b), &m)| !m || a == b)
    }
}

impl Mts {
    pub fn new(id: impl Into<String>, values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if values.dim() != mask.dim() {
            return Err(invalid(format!(
                "values {:?} and mask {:?} differ in shape",
                values.dim(),
                mask.dim()
            )));
        }
        Ok(Mts {
            id: id.into(),
            values,
            mask,
        })
    }

    /// Fully observed sample.
    pub fn dense(id: impl Into<String>, values: Array2<f64>) -> Self {
        let mask = Array2::from_elem(values.dim(), true);
        Mts {
            id: id.into(),
            values,
            mask,
        }
    }

    /// Builds a sample from per-variable rows; `None` marks a missing entry.
    pub fn from_rows(id: impl Into<String>, rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let n_vars = rows.len();
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return Err(invalid("ragged variable rows"));
        }
        let mut values = Array2::from_elem((n_vars, len), f64::NAN);
        let mut mask = Array2::from_elem((n_vars, len), false);
        for (v, row) in rows.iter().enumerate() {
            for (t, x) in row.iter().enumerate() {
                if let Some(x) = x {
                    values[[v, t]] = *x;
                    mask[[v, t]] = true;
                }
            }
        }
        Mts::new(id, values, mask)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn n_vars(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, v: usize, t: usize) -> Option<f64> {
        if self.mask[[v, t]] {
            Some(self.values[[v, t]])
        } else {
            None
        }
    }

    pub fn observed_fraction(&self) -> f64 {
        let n = self.mask.len();
        if n == 0 {
            return 0.0;
        }
        self.mask.iter().filter(|&&m| m).count() as f64 / n as f64
    }

    /// Time steps `start..end`.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Mts> {
        if start > end || end > self.len() {
            return Err(invalid(format!(
                "time slice {start}..{end} out of range for length {}",
                self.len()
            )));
        }
        Ok(Mts {
            id: self.id.clone(),
            values: self.values.slice(s![.., start..end]).to_owned(),
            mask: self.mask.slice(s![.., start..end]).to_owned(),
        })
    }

    /// Keeps only the listed variables, in the given order.
    pub fn select_vars(&self, vars: &[usize]) -> Result<Mts> {
        if let Some(&bad) = vars.iter().find(|&&v| v >= self.n_vars()) {
            return Err(invalid(format!("variable index {bad} out of range")));
        }
        Ok(Mts {
            id: self.id.clone(),
            values: self.values.select(ndarray::Axis(0), vars),
            mask: self.mask.select(ndarray::Axis(0), vars),
        })
    }

    /// Returns a copy with `f` applied to every observed entry.
    pub fn map_observed(&self, mut f: impl FnMut(usize, f64) -> f64) -> Mts {
        let mut out = self.clone();
        for ((v, t), x) in out.values.indexed_iter_mut() {
            if self.mask[[v, t]] {
                *x = f(v, *x);
            }
        }
        out
    }

    /// Returns a copy where the listed `(v, t)` entries are masked out.
    pub fn with_missing(&self, entries: &[(usize, usize)]) -> Mts {
        let mut out = self.clone();
        for &(v, t) in entries {
            out.mask[[v, t]] = false;
            out.values[[v, t]] = f64::NAN;
        }
        out
    }
}

/// Binary class label. `Positive` is the close-to-onset class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    /// `+1` / `-1` encoding used by the SVM.
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }
}

/// Display names of the two classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelNames {
    pub positive: String,
    pub negative: String,
}

impl Default for LabelNames {
    fn default() -> Self {
        LabelNames {
            positive: "close-to-onset".into(),
            negative: "far-from-onset".into(),
        }
    }
}

impl LabelNames {
    pub fn name(&self, label: Label) -> &str {
        match label {
            Label::Positive => &self.positive,
            Label::Negative => &self.negative,
        }
    }

    pub fn parse(&self, s: &str) -> Option<Label> {
        if s == self.positive {
            Some(Label::Positive)
        } else if s == self.negative {
            Some(Label::Negative)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Role {
    #[default]
    Train,
    Test,
}

/// A collection of samples sharing the same variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MtsDataset {
    samples: Vec<Mts>,
    labels: Option<Vec<Label>>,
    variable_names: Vec<String>,
    pub label_names: LabelNames,
    pub role: Role,
}

impl MtsDataset {
    pub fn new(
        samples: Vec<Mts>,
        labels: Option<Vec<Label>>,
        variable_names: Vec<String>,
    ) -> Result<Self> {
        if let Some(bad) = samples.iter().find(|m| m.n_vars() != variable_names.len()) {
            return Err(invalid(format!(
                "sample `{}` has {} variables, expected {}",
                bad.id(),
                bad.n_vars(),
                variable_names.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != samples.len() {
                return Err(invalid(format!(
                    "{} labels for {} samples",
                    l.len(),
                    samples.len()
                )));
            }
        }
        Ok(MtsDataset {
            samples,
            labels,
            variable_names,
            label_names: LabelNames::default(),
            role: Role::Train,
        })
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn samples(&self) -> &[Mts] {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[Label]> {
        self.labels
            .as_deref()
            .ok_or_else(|| invalid("dataset has no labels"))
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.variable_names.len()
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|m| m.id().to_string()).collect()
    }

    pub fn min_len(&self) -> Option<usize> {
        self.samples.iter().map(Mts::len).min()
    }

    pub fn max_len(&self) -> Option<usize> {
        self.samples.iter().map(Mts::len).max()
    }

    /// Common length when every sample has the same `T`.
    pub fn common_len(&self) -> Option<usize> {
        let t = self.samples.first()?.len();
        self.samples.iter().all(|m| m.len() == t).then_some(t)
    }

    /// Replaces the samples, keeping labels and metadata.
    pub fn map_samples(&self, f: impl FnMut(&Mts) -> Result<Mts>) -> Result<MtsDataset> {
        let samples = self.samples.iter().map(f).collect::<Result<Vec<_>>>()?;
        let variable_names = match samples.first() {
            Some(m) if m.n_vars() != self.n_vars() => {
                return Err(invalid("sample transform changed the variable count"))
            }
            _ => self.variable_names.clone(),
        };
        Ok(MtsDataset {
            samples,
            labels: self.labels.clone(),
            variable_names,
            label_names: self.label_names.clone(),
            role: self.role,
        })
    }

    /// Keeps only the listed variables.
    pub fn select_vars(&self, vars: &[usize]) -> Result<MtsDataset> {
        let samples = self
            .samples
            .iter()
            .map(|m| m.select_vars(vars))
            .collect::<Result<Vec<_>>>()?;
        let variable_names = vars
            .iter()
            .map(|&v| {
                self.variable_names
                    .get(v)
                    .cloned()
                    .ok_or_else(|| invalid(format!("variable index {v} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MtsDataset {
            samples,
            labels: self.labels.clone(),
            variable_names,
            label_names: self.label_names.clone(),
            role: self.role,
        })
    }

    /// Subset of samples by index.
    pub fn subset(&self, indices: &[usize]) -> MtsDataset {
        MtsDataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            variable_names: self.variable_names.clone(),
            label_names: self.label_names.clone(),
            role: self.role,
        }
    }
}

/// Common length `ceil(T_M / ceil(T_M / base))` for a longest length `T_M`.
pub fn target_length(t_max: usize) -> Result<usize> {
    target_length_with_base(t_max, DEFAULT_LENGTH_BASE)
}

pub fn target_length_with_base(t_max: usize, base: usize) -> Result<usize> {
    if t_max < 1 {
        return Err(invalid("longest length must be at least 1"));
    }
    if base < 1 {
        return Err(invalid("length base must be at least 1"));
    }
    Ok(t_max.div_ceil(t_max.div_ceil(base)))
}

/// Linear interpolation onto `t_target` evenly spaced points spanning the
/// original grid. A new point is observed only if both bracketing source
/// points are observed; no value is imputed.
pub fn resample_linear(m: &Mts, t_target: usize) -> Result<Mts> {
    if t_target < 2 {
        return Err(invalid(format!("target length {t_target} < 2")));
    }
    let t = m.len();
    if t < 2 {
        return Err(invalid(format!(
            "sample `{}` has length {t} < 2",
            m.id()
        )));
    }
    let n_vars = m.n_vars();
    let mut values = Array2::from_elem((n_vars, t_target), f64::NAN);
    let mut mask = Array2::from_elem((n_vars, t_target), false);
    let denom = t_target - 1;
    for j in 0..t_target {
        // Exact rational position j * (t - 1) / (t_target - 1).
        let num = j * (t - 1);
        let lo = num / denom;
        let rem = num % denom;
        let frac = rem as f64 / denom as f64;
        for v in 0..n_vars {
            if rem == 0 {
                if let Some(x) = m.get(v, lo) {
                    values[[v, j]] = x;
                    mask[[v, j]] = true;
                }
            } else if let (Some(a), Some(b)) = (m.get(v, lo), m.get(v, lo + 1)) {
                values[[v, j]] = a + frac * (b - a);
                mask[[v, j]] = true;
            }
        }
    }
    Mts::new(m.id(), values, mask)
}

/// Resamples every sample to `target_length` of the dataset's longest sample.
pub fn resample_dataset(ds: &MtsDataset) -> Result<MtsDataset> {
    let t_max = ds.max_len().ok_or_else(|| invalid("empty dataset"))?;
    let t = target_length(t_max)?;
    ds.map_samples(|m| resample_linear(m, t))
}

/// Per-variable mean and population standard deviation of the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizerStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl StandardizerStats {
    fn divisor(&self, v: usize) -> f64 {
        let s = self.stds[v];
        if s > STD_GUARD {
            s
        } else {
            1.0
        }
    }
}

pub fn compute_variable_stats(train: &MtsDataset) -> Result<StandardizerStats> {
    if train.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let n_vars = train.n_vars();
    let mut means = Vec::with_capacity(n_vars);
    let mut stds = Vec::with_capacity(n_vars);
    for v in 0..n_vars {
        let observed: Vec<f64> = train
            .samples()
            .iter()
            .flat_map(|m| (0..m.len()).filter_map(move |t| m.get(v, t)))
            .collect();
        if observed.is_empty() {
            return Err(Error::NoObservations(train.variable_names()[v].clone()));
        }
        let n = observed.len() as f64;
        let mean = observed.iter().sum::<f64>() / n;
        let var = observed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        means.push(mean);
        stds.push(var.sqrt());
    }
    Ok(StandardizerStats { means, stds })
}

pub fn apply_standardization(m: &Mts, stats: &StandardizerStats) -> Result<Mts> {
    check_stats_dims(m, stats)?;
    Ok(m.map_observed(|v, x| (x - stats.means[v]) / stats.divisor(v)))
}

/// Inverse of [`apply_standardization`] on observed entries.
pub fn undo_standardization(m: &Mts, stats: &StandardizerStats) -> Result<Mts> {
    check_stats_dims(m, stats)?;
    Ok(m.map_observed(|v, x| x * stats.divisor(v) + stats.means[v]))
}

fn check_stats_dims(m: &Mts, stats: &StandardizerStats) -> Result<()> {
    if m.n_vars() != stats.means.len() || stats.means.len() != stats.stds.len() {
        return Err(invalid(format!(
            "sample `{}` has {} variables, statistics cover {}",
            m.id(),
            m.n_vars(),
            stats.means.len()
        )));
    }
    Ok(())
}

pub fn standardize_dataset(ds: &MtsDataset, stats: &StandardizerStats) -> Result<MtsDataset> {
    ds.map_samples(|m| apply_standardization(m, stats))
}

/// Sample-averaged Pearson correlations between variables and their
/// thresholded version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub avg_corr: Array2<f64>,
    pub binarized: Array2<bool>,
    pub theta_c: f64,
    /// Number of samples that contributed to each pair.
    pub support: Array2<usize>,
    pub warnings: Vec<String>,
}

impl CorrelationSummary {
    /// Re-thresholds the averaged correlations.
    pub fn with_threshold(mut self, theta_c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta_c) {
            return Err(invalid(format!("theta_c {theta_c} outside [0, 1]")));
        }
        self.binarized = self.avg_corr.mapv(|c| c.abs() >= theta_c);
        self.theta_c = theta_c;
        Ok(self)
    }
}

/// Pearson correlation over the time steps where both variables are
/// observed. `None` when fewer than two joint observations exist or either
/// side is constant on them.
fn masked_pearson(m: &Mts, a: usize, b: usize) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = (0..m.len())
        .filter_map(|t| Some((m.get(a, t)?, m.get(b, t)?)))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Averages per-sample correlations over the samples where each pair is
/// defined, then thresholds the absolute averages at `theta_c`.
pub fn average_correlation_matrix(ds: &MtsDataset, theta_c: f64) -> Result<CorrelationSummary> {
    use rayon::prelude::*;

    if ds.is_empty() {
        return Err(invalid("dataset is empty"));
    }
    let n_vars = ds.n_vars();
    let pairs: Vec<(usize, usize)> = (0..n_vars)
        .flat_map(|i| ((i + 1)..n_vars).map(move |j| (i, j)))
        .collect();
    let sums: Vec<(f64, usize)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            ds.samples()
                .iter()
                .filter_map(|m| masked_pearson(m, i, j))
                .fold((0.0, 0usize), |(s, n), c| (s + c, n + 1))
        })
        .collect();

    let mut avg_corr = Array2::eye(n_vars);
    let mut support = Array2::from_elem((n_vars, n_vars), ds.len());
    let mut warnings = Vec::new();
    for (&(i, j), &(sum, n)) in pairs.iter().zip(&sums) {
        let c = if n == 0 {
            let msg = format!(
                "no sample defines the correlation of `{}` and `{}`; set to 0",
                ds.variable_names()[i],
                ds.variable_names()[j]
            );
            warn!("{msg}");
            warnings.push(msg);
            0.0
        } else {
            (sum / n as f64).clamp(-1.0, 1.0)
        };
        avg_corr[[i, j]] = c;
        avg_corr[[j, i]] = c;
        support[[i, j]] = n;
        support[[j, i]] = n;
    }
    CorrelationSummary {
        avg_corr,
        binarized: Array2::from_elem((n_vars, n_vars), false),
        theta_c,
        support,
        warnings,
    }
    .with_threshold(theta_c)
}

/// Greedy pass in ascending index order: a variable is kept when it is not
/// flagged as correlated with any variable kept before it.
pub fn select_features(summary: &CorrelationSummary) -> Vec<usize> {
    let n = summary.binarized.nrows();
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..n {
        if kept.iter().all(|&j| !summary.binarized[[i, j]]) {
            kept.push(i);
        }
    }
    kept
}

/// One problem of the increasing-window protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowProblem {
    /// 1-based problem index.
    pub index: usize,
    pub window_len: usize,
    pub steps_before_event: usize,
}

/// Window problems for a shortest length `t_min` split into `count` steps.
pub fn window_problems(t_min: usize, count: usize) -> Result<Vec<WindowProblem>> {
    if count < 1 {
        return Err(invalid("window count must be at least 1"));
    }
    if count > t_min {
        return Err(invalid(format!(
            "window count {count} exceeds shortest length {t_min}"
        )));
    }
    let step = t_min / count;
    Ok((1..=count)
        .map(|index| {
            let window_len = index * step;
            WindowProblem {
                index,
                window_len,
                steps_before_event: t_min - window_len,
            }
        })
        .collect())
}

/// Aligns every sample at its last time step, keeps its final `t_min` steps
/// and returns the first `problem.window_len` of those.
pub fn apply_window(ds: &MtsDataset, problem: &WindowProblem, t_min: usize) -> Result<MtsDataset> {
    ds.map_samples(|m| {
        if m.len() < t_min {
            return Err(invalid(format!(
                "sample `{}` shorter ({}) than the aligned segment {t_min}",
                m.id(),
                m.len()
            )));
        }
        let start = m.len() - t_min;
        m.slice_time(start, start + problem.window_len)
    })
}

/// Splits a dataset into `count` end-aligned windows of increasing length.
pub fn slice_windows(ds: &MtsDataset, count: usize) -> Result<Vec<(WindowProblem, MtsDataset)>> {
    let t_min = ds.min_len().ok_or_else(|| invalid("dataset is empty"))?;
    window_problems(t_min, count)?
        .into_iter()
        .map(|p| Ok((p, apply_window(ds, &p, t_min)?)))
        .collect()
}
