//! Time series cluster kernel.
//!
//! An ensemble of mixture models, each fitted on a random view of the
//! training data (subset of variables, contiguous time window, subset of
//! samples) for every combination of initialization index `q` and
//! component count `c`. The kernel between two series is the average, over
//! all partitions, of the inner product of their posterior vectors.

use log::warn;
use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gmm::{fit_map_gmm, posteriors, EmControl, GmmPrior, MaskedView, MixtureParams, PriorStrength};
use crate::kernel_matrix::{CompensatedSum, KernelMatrix, KernelMethod};
use crate::mts::MtsDataset;
use crate::seed::rng_for;

pub const DEFAULT_Q: usize = 30;
pub const DEFAULT_C: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TckParams {
    /// Random initializations.
    pub q: usize,
    /// Largest component count; partitions use `2..=c_max`.
    pub c_max: usize,
    pub sample_fraction: f64,
    pub min_window: usize,
    pub kappa_range: (f64, f64),
    pub a0: f64,
    pub em: EmControl,
}

impl Default for TckParams {
    fn default() -> Self {
        TckParams {
            q: DEFAULT_Q,
            c_max: DEFAULT_C,
            sample_fraction: 0.8,
            min_window: 6,
            kappa_range: (0.1, 10.0),
            a0: 2.0,
            em: EmControl::default(),
        }
    }
}

impl TckParams {
    pub fn new(q: usize, c_max: usize) -> Self {
        TckParams {
            q,
            c_max,
            ..Default::default()
        }
    }

    pub fn n_partitions(&self) -> usize {
        self.q * self.c_max.saturating_sub(1)
    }
}

/// One fitted mixture and the view it was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPartition {
    pub q: usize,
    pub n_components: usize,
    pub variable_subset: Vec<usize>,
    /// Inclusive, 0-based.
    pub time_window: (usize, usize),
    pub sample_subset: Vec<usize>,
    /// `(variable, time)` of every mixture dimension, after dropping
    /// dimensions without observations.
    pub dims: Vec<(usize, usize)>,
    pub mixture: MixtureParams,
    pub prior: GmmPrior,
    pub iterations: usize,
    pub converged: bool,
}

impl GmmPartition {
    fn view(&self, ds: &MtsDataset) -> MaskedView {
        view_of(ds, &self.dims, None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPartition {
    pub q: usize,
    pub n_components: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TckModel {
    pub params: TckParams,
    pub seed: u64,
    pub n_vars: usize,
    pub len: usize,
    pub train_ids: Vec<String>,
    pub partitions: Vec<GmmPartition>,
    /// `N_tr x c` posteriors of the training samples, one per partition.
    pub train_posteriors: Vec<Array2<f64>>,
    pub skipped: Vec<SkippedPartition>,
}

impl TckModel {
    /// Number of partitions that contribute to the kernel.
    pub fn n_partitions(&self) -> usize {
        self.partitions.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Rows are samples (all, or `rows`), columns the listed `(v, t)` entries.
fn view_of(ds: &MtsDataset, dims: &[(usize, usize)], rows: Option<&[usize]>) -> MaskedView {
    let idx: Vec<usize> = match rows {
        Some(r) => r.to_vec(),
        None => (0..ds.len()).collect(),
    };
    let mut values = Array2::from_elem((idx.len(), dims.len()), f64::NAN);
    let mut mask = Array2::from_elem((idx.len(), dims.len()), false);
    for (r, &i) in idx.iter().enumerate() {
        let m = &ds.samples()[i];
        for (p, &(v, t)) in dims.iter().enumerate() {
            if let Some(x) = m.get(v, t) {
                values[[r, p]] = x;
                mask[[r, p]] = true;
            }
        }
    }
    MaskedView { values, mask }
}

fn check_shape(ds: &MtsDataset, n_vars: usize, len: usize) -> Result<()> {
    if ds.n_vars() != n_vars {
        return Err(invalid(format!(
            "dataset has {} variables, model expects {n_vars}",
            ds.n_vars()
        )));
    }
    match ds.common_len() {
        Some(t) if t == len => Ok(()),
        Some(t) => Err(invalid(format!("series length {t}, model expects {len}"))),
        None if ds.is_empty() => Ok(()),
        None => Err(invalid("series must share one length; resample first")),
    }
}

fn fit_partition(
    train: &MtsDataset,
    params: &TckParams,
    seed: u64,
    q: usize,
    c: usize,
) -> Result<(GmmPartition, Array2<f64>)> {
    let n = train.len();
    let n_vars = train.n_vars();
    let len = train.common_len().unwrap_or(0);
    let mut rng = rng_for(seed, "tck-partition", &[q as u64, c as u64]);

    let lo_vars = n_vars.div_ceil(4).max(2).min(n_vars);
    let n_sel = rng.gen_range(lo_vars..=n_vars);
    let mut variable_subset = sample(&mut rng, n_vars, n_sel).into_vec();
    variable_subset.sort_unstable();

    let lo_len = params.min_window.min(len).max(1);
    let win = rng.gen_range(lo_len..=len);
    let start = rng.gen_range(0..=len - win);
    let time_window = (start, start + win - 1);

    let n_fit = ((params.sample_fraction * n as f64).round() as usize).max(c);
    if n_fit > n {
        return Err(invalid(format!("{c} components exceed {n} samples")));
    }
    let mut sample_subset = sample(&mut rng, n, n_fit).into_vec();
    sample_subset.sort_unstable();

    let (klo, khi) = params.kappa_range;
    let kappa0 = (klo.ln() + rng.gen::<f64>() * (khi.ln() - klo.ln())).exp();

    let all_dims: Vec<(usize, usize)> = variable_subset
        .iter()
        .flat_map(|&v| (time_window.0..=time_window.1).map(move |t| (v, t)))
        .collect();
    let fit_view = view_of(train, &all_dims, Some(&sample_subset));
    let fit = fit_map_gmm(
        &fit_view,
        c,
        PriorStrength {
            kappa0,
            a0: params.a0,
        },
        &params.em,
        &mut rng,
    )?;
    let dims: Vec<(usize, usize)> = fit.kept_dims.iter().map(|&p| all_dims[p]).collect();
    let partition = GmmPartition {
        q,
        n_components: c,
        variable_subset,
        time_window,
        sample_subset,
        dims,
        mixture: fit.params,
        prior: fit.prior,
        iterations: fit.report.iterations,
        converged: fit.report.converged,
    };
    let full_view = partition.view(train);
    let all: Vec<usize> = (0..partition.dims.len()).collect();
    let post = posteriors(&partition.mixture, &full_view, &all);
    Ok((partition, post))
}

/// Average over partitions of `rows[p] * cols[p]^T`, accumulated with
/// compensated sums in the order given.
fn average_gram(rows: &[&Array2<f64>], cols: &[&Array2<f64>]) -> Array2<f64> {
    let nr = rows.first().map_or(0, |a| a.nrows());
    let nc = cols.first().map_or(0, |a| a.nrows());
    let b = rows.len();
    let flat: Vec<f64> = (0..nr)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..nc).map(move |j| {
                let mut acc = CompensatedSum::default();
                for p in 0..b {
                    let dot: f64 = rows[p].row(i).dot(&cols[p].row(j));
                    acc.add(dot);
                }
                acc.value() / b as f64
            })
        })
        .collect();
    Array2::from_shape_vec((nr, nc), flat).expect("shape")
}

/// Fits the ensemble and returns it with the training kernel.
pub fn tck_fit(train: &MtsDataset, params: TckParams, seed: u64) -> Result<(TckModel, KernelMatrix)> {
    if train.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let len = train
        .common_len()
        .ok_or_else(|| invalid("series must share one length; resample first"))?;
    if params.q < 1 || params.c_max < 2 {
        return Err(invalid("need Q >= 1 and C >= 2"));
    }
    if train.len() < params.c_max {
        return Err(invalid(format!(
            "{} training samples, fewer than C = {}",
            train.len(),
            params.c_max
        )));
    }

    let jobs: Vec<(usize, usize)> = (0..params.q)
        .flat_map(|q| (2..=params.c_max).map(move |c| (q, c)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(q, c)| (q, c, fit_partition(train, &params, seed, q, c)))
        .collect();

    let mut partitions = Vec::new();
    let mut train_posteriors = Vec::new();
    let mut skipped = Vec::new();
    for (q, c, r) in results {
        match r {
            Ok((p, post)) => {
                partitions.push(p);
                train_posteriors.push(post);
            }
            Err(e) => {
                warn!("partition q={q} c={c} skipped: {e}");
                skipped.push(SkippedPartition {
                    q,
                    n_components: c,
                    reason: e.to_string(),
                });
            }
        }
    }
    if partitions.is_empty() {
        return Err(invalid("every partition failed to fit"));
    }

    let refs: Vec<&Array2<f64>> = train_posteriors.iter().collect();
    let mut k = average_gram(&refs, &refs);
    // Exact symmetry.
    for i in 0..k.nrows() {
        for j in 0..i {
            k[[i, j]] = k[[j, i]];
        }
    }
    let model = TckModel {
        params,
        seed,
        n_vars: train.n_vars(),
        len,
        train_ids: train.ids(),
        partitions,
        train_posteriors,
        skipped,
    };
    let k_tr = KernelMatrix::new(k, train.ids(), train.ids(), KernelMethod::Tck)?;
    Ok((model, k_tr))
}

/// Posteriors of `ds` under every partition.
pub fn tck_posteriors(model: &TckModel, ds: &MtsDataset) -> Result<Vec<Array2<f64>>> {
    check_shape(ds, model.n_vars, model.len)?;
    Ok(model
        .partitions
        .par_iter()
        .map(|p| {
            let all: Vec<usize> = (0..p.dims.len()).collect();
            posteriors(&p.mixture, &p.view(ds), &all)
        })
        .collect())
}

/// Test-by-train kernel.
pub fn tck_test_kernel(model: &TckModel, test: &MtsDataset) -> Result<KernelMatrix> {
    let post = tck_posteriors(model, test)?;
    let rows: Vec<&Array2<f64>> = post.iter().collect();
    let cols: Vec<&Array2<f64>> = model.train_posteriors.iter().collect();
    let k = average_gram(&rows, &cols);
    KernelMatrix::new(k, test.ids(), model.train_ids.clone(), KernelMethod::Tck)
}

/// Averaged squared posterior norm of each sample, its kernel value with
/// itself.
pub fn tck_self_similarity(model: &TckModel, ds: &MtsDataset) -> Result<Vec<f64>> {
    let post = tck_posteriors(model, ds)?;
    let b = post.len() as f64;
    Ok((0..ds.len())
        .map(|i| {
            let mut acc = CompensatedSum::default();
            for p in &post {
                acc.add(p.row(i).dot(&p.row(i)));
            }
            acc.value() / b
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mts::Mts;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, seed: u64) -> MtsDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|i| {
                let shift = if i % 2 == 0 { 0.0 } else { 2.0 };
                let rows: Vec<Vec<Option<f64>>> = (0..2)
                    .map(|_| {
                        (0..10)
                            .map(|_| {
                                let x = shift + rng.gen_range(-1.0..1.0);
                                (rng.gen::<f64>() > 0.1).then_some(x)
                            })
                            .collect()
                    })
                    .collect();
                Mts::from_rows(format!("s{i}"), &rows).unwrap()
            })
            .collect();
        MtsDataset::new(samples, None, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn partition_count_and_enumeration() {
        assert_eq!(TckParams::default().n_partitions(), 1170);
        let ds = toy(12, 1);
        let (model, k) = tck_fit(&ds, TckParams::new(2, 4), 3).unwrap();
        assert_eq!(model.n_partitions() + model.skipped.len(), 6);
        let pairs: Vec<(usize, usize)> = model
            .partitions
            .iter()
            .map(|p| (p.q, p.n_components))
            .collect();
        assert_eq!(pairs, vec![(0, 2), (0, 3), (0, 4), (1, 2), (1, 3), (1, 4)]);
        assert!(k.is_symmetric());
        for p in &model.partitions {
            let s: f64 = p.mixture.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(p.time_window.1 - p.time_window.0 + 1 >= 6);
            assert!(p.variable_subset.len() >= 2);
            assert_eq!(p.sample_subset.len(), 10);
        }
    }

    #[test]
    fn repeated_sample_gives_constant_kernel() {
        let m = toy(1, 2).samples()[0].clone();
        let samples: Vec<Mts> = (0..6)
            .map(|i| Mts::new(format!("r{i}"), m.values().clone(), m.mask().clone()).unwrap())
            .collect();
        let ds = MtsDataset::new(samples, None, vec!["a".into(), "b".into()]).unwrap();
        let (_, k) = tck_fit(&ds, TckParams::new(2, 3), 1).unwrap();
        let first = k.values()[[0, 0]];
        assert!(k.values().iter().all(|&x| x == first));
    }

    #[test]
    fn test_kernel_matches_train_rows_for_copies() {
        let ds = toy(10, 4);
        let (model, k_tr) = tck_fit(&ds, TckParams::new(3, 4), 8).unwrap();
        let copy = ds.subset(&[3, 7]);
        let k_te = tck_test_kernel(&model, &copy).unwrap();
        assert_eq!(k_te.values().row(0), k_tr.values().row(3));
        assert_eq!(k_te.values().row(1), k_tr.values().row(7));
        assert!(k_te.values().iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn partition_order_does_not_matter() {
        let ds = toy(10, 5);
        let (model, k_tr) = tck_fit(&ds, TckParams::new(3, 5), 2).unwrap();
        let mut order: Vec<usize> = (0..model.train_posteriors.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
        let refs: Vec<&Array2<f64>> = order.iter().map(|&p| &model.train_posteriors[p]).collect();
        let k = average_gram(&refs, &refs);
        for (a, b) in k.iter().zip(k_tr.values().iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn shape_checks() {
        let ds = toy(6, 6);
        assert!(tck_fit(&ds, TckParams::new(1, 7), 0).is_err());
        let (model, _) = tck_fit(&ds, TckParams::new(1, 3), 0).unwrap();
        let wrong = ds.select_vars(&[0]).unwrap();
        assert!(tck_test_kernel(&model, &wrong).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let ds = toy(6, 7);
        let (model, _) = tck_fit(&ds, TckParams::new(1, 3), 0).unwrap();
        let back = TckModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
