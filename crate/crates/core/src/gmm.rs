//! Diagonal Gaussian mixtures fitted by MAP-EM on data with missing entries.
//!
//! Missing dimensions are marginalized: a sample's component log-density is
//! the sum of univariate Gaussian log-densities over its observed dimensions
//! only. Each `(mean, variance)` pair of a component and dimension carries a
//! normal-inverse-gamma prior centred on the empirical mean of that
//! dimension, with mean strength `kappa0`, shape `a0` and scale `b0`.

use log::warn;
use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed::Rng;

/// Posterior probabilities never drop below this value, so inner products
/// of posteriors stay strictly positive after underflow.
pub const POSTERIOR_FLOOR: f64 = 1e-300;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Rows are samples, columns are dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedView {
    pub values: Array2<f64>,
    pub mask: Array2<bool>,
}

impl MaskedView {
    pub fn new(values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if values.dim() != mask.dim() {
            return Err(invalid("values and mask differ in shape"));
        }
        Ok(MaskedView { values, mask })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.values.ncols()
    }

    #[inline]
    fn get(&self, i: usize, d: usize) -> Option<f64> {
        self.mask[[i, d]].then(|| self.values[[i, d]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmControl {
    pub max_iter: usize,
    /// Stop when the mean absolute change of the posteriors falls below.
    pub tol: f64,
    /// Variance floor as a fraction of the empirical variance.
    pub var_floor_ratio: f64,
    pub weight_floor: f64,
}

impl Default for EmControl {
    fn default() -> Self {
        EmControl {
            max_iter: 50,
            tol: 1e-6,
            var_floor_ratio: 1e-4,
            weight_floor: 1e-6,
        }
    }
}

/// Prior strengths shared by all dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorStrength {
    pub kappa0: f64,
    pub a0: f64,
}

/// Per-dimension prior anchors derived from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPrior {
    pub kappa0: f64,
    pub a0: f64,
    /// Prior mean of each dimension (empirical mean).
    pub m0: Vec<f64>,
    /// Prior variance scale of each dimension (empirical variance).
    pub b0: Vec<f64>,
    pub var_floor: Vec<f64>,
}

/// Fitted mixture parameters over `dims.len()` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    /// `c x d`
    pub means: Array2<f64>,
    /// `c x d`
    pub variances: Array2<f64>,
}

impl MixtureParams {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// Posterior over components for one sample given as `(dim, value)`
    /// pairs of its observed dimensions. Also returns the log marginal
    /// likelihood of the sample.
    pub fn posterior(&self, observed: impl Iterator<Item = (usize, f64)> + Clone) -> (Vec<f64>, f64) {
        let c = self.n_components();
        let mut logp: Vec<f64> = (0..c)
            .map(|k| {
                let mut lp = self.weights[k].ln();
                for (d, x) in observed.clone() {
                    let var = self.variances[[k, d]];
                    let diff = x - self.means[[k, d]];
                    lp -= 0.5 * (LN_2PI + var.ln() + diff * diff / var);
                }
                lp
            })
            .collect();
        let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for lp in logp.iter_mut() {
            *lp = (*lp - max).exp();
            total += *lp;
        }
        for p in logp.iter_mut() {
            *p = (*p / total).max(POSTERIOR_FLOOR);
        }
        (logp, max + total.ln())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood plus log-prior after each E-step.
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    /// Columns of the input view that were kept (some observation present).
    pub kept_dims: Vec<usize>,
    pub params: MixtureParams,
    pub prior: GmmPrior,
    /// `n x c` posteriors of the fitted rows under the final parameters.
    pub posteriors: Array2<f64>,
    pub report: ConvergenceReport,
    pub warnings: Vec<String>,
}

/// Restriction of a view to `dims`, as `(position, value)` pairs.
fn observed_row<'a>(
    view: &'a MaskedView,
    dims: &'a [usize],
    i: usize,
) -> impl Iterator<Item = (usize, f64)> + Clone + 'a {
    dims.iter()
        .enumerate()
        .filter_map(move |(p, &d)| view.get(i, d).map(|x| (p, x)))
}

/// Posteriors of every row of `view` (restricted to `dims`) under `params`.
pub fn posteriors(params: &MixtureParams, view: &MaskedView, dims: &[usize]) -> Array2<f64> {
    let c = params.n_components();
    let mut out = Array2::zeros((view.n_rows(), c));
    for i in 0..view.n_rows() {
        let (p, _) = params.posterior(observed_row(view, dims, i));
        out.row_mut(i).assign(&Array1::from(p));
    }
    out
}

fn log_prior(params: &MixtureParams, prior: &GmmPrior) -> f64 {
    let mut lp = 0.0;
    for k in 0..params.n_components() {
        for d in 0..prior.m0.len() {
            let var = params.variances[[k, d]];
            let dm = params.means[[k, d]] - prior.m0[d];
            lp -= (prior.a0 + 1.5) * var.ln()
                + (2.0 * prior.b0[d] + prior.kappa0 * dm * dm) / (2.0 * var);
        }
    }
    lp
}

/// MAP-EM fit of a `c`-component diagonal mixture.
pub fn fit_map_gmm(
    view: &MaskedView,
    c: usize,
    strength: PriorStrength,
    control: &EmControl,
    rng: &mut Rng,
) -> Result<GmmFit> {
    let n = view.n_rows();
    if c < 2 {
        return Err(invalid(format!("{c} components; at least 2 required")));
    }
    if c > n {
        return Err(invalid(format!("{c} components for {n} rows")));
    }
    if strength.kappa0 <= 0.0 || strength.a0 <= 0.0 {
        return Err(invalid("prior strengths must be positive"));
    }

    let mut warnings = Vec::new();
    let mut kept_dims = Vec::new();
    let mut m0 = Vec::new();
    let mut b0 = Vec::new();
    let mut var_floor = Vec::new();
    for d in 0..view.n_dims() {
        let xs: Vec<f64> = (0..n).filter_map(|i| view.get(i, d)).collect();
        if xs.is_empty() {
            let msg = format!("dimension {d} has no observed entries; dropped");
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        kept_dims.push(d);
        m0.push(mean);
        b0.push(var);
        let scale = if var > 1e-12 { var } else { 1.0 };
        var_floor.push(control.var_floor_ratio * scale);
    }
    if kept_dims.is_empty() {
        return Err(invalid("view has no observed entries"));
    }
    let prior = GmmPrior {
        kappa0: strength.kappa0,
        a0: strength.a0,
        m0,
        b0,
        var_floor,
    };
    let dims = kept_dims.len();

    // k-means++ style seeding over masked squared distances.
    let dist = |i: usize, j: usize| -> f64 {
        let mut s = 0.0;
        let mut cnt = 0usize;
        for &d in &kept_dims {
            if let (Some(a), Some(b)) = (view.get(i, d), view.get(j, d)) {
                s += (a - b) * (a - b);
                cnt += 1;
            }
        }
        if cnt == 0 {
            0.0
        } else {
            s / cnt as f64
        }
    };
    let mut centers = vec![rng.gen_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist(i, centers[0])).collect();
    while centers.len() < c {
        let total: f64 = nearest
            .iter()
            .enumerate()
            .filter(|(i, _)| !centers.contains(i))
            .map(|(_, d)| d)
            .sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                if centers.contains(&i) || d <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if u < d {
                    break;
                }
                u -= d;
            }
            pick.expect("positive mass")
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !centers.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        };
        centers.push(next);
        for (i, best) in nearest.iter_mut().enumerate() {
            *best = best.min(dist(i, next));
        }
    }

    let mut params = MixtureParams {
        weights: vec![1.0 / c as f64; c],
        means: Array2::from_shape_fn((c, dims), |(k, p)| {
            view.get(centers[k], kept_dims[p]).unwrap_or(prior.m0[p])
        }),
        variances: Array2::from_shape_fn((c, dims), |(_, p)| {
            prior.b0[p].max(prior.var_floor[p])
        }),
    };

    let mut objective = Vec::new();
    let mut prev: Option<Array2<f64>> = None;
    let mut converged = false;
    let mut iterations = 0;
    let resp = loop {
        // E-step.
        let mut resp = Array2::zeros((n, c));
        let mut loglik = 0.0;
        for i in 0..n {
            let (p, ll) = params.posterior(observed_row(view, &kept_dims, i));
            resp.row_mut(i).assign(&Array1::from(p));
            loglik += ll;
        }
        objective.push(loglik + log_prior(&params, &prior));
        if let Some(prev) = &prev {
            let change = (&resp - prev).mapv(f64::abs).sum() / (n * c) as f64;
            if change < control.tol {
                converged = true;
                break resp;
            }
        }
        if iterations >= control.max_iter {
            break resp;
        }
        iterations += 1;

        // M-step.
        let mut weights: Vec<f64> = (0..c)
            .map(|k| (resp.column(k).sum() / n as f64).max(control.weight_floor))
            .collect();
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);
        for (p, &d) in kept_dims.iter().enumerate() {
            for k in 0..c {
                let (mut nk, mut sx) = (0.0, 0.0);
                for i in 0..n {
                    if let Some(x) = view.get(i, d) {
                        nk += resp[[i, k]];
                        sx += resp[[i, k]] * x;
                    }
                }
                let mean = (prior.kappa0 * prior.m0[p] + sx) / (prior.kappa0 + nk);
                let mut ss = 0.0;
                for i in 0..n {
                    if let Some(x) = view.get(i, d) {
                        ss += resp[[i, k]] * (x - mean) * (x - mean);
                    }
                }
                let dm = mean - prior.m0[p];
                let var = (prior.b0[p] + 0.5 * ss + 0.5 * prior.kappa0 * dm * dm)
                    / (prior.a0 + 1.5 + 0.5 * nk);
                params.means[[k, p]] = mean;
                params.variances[[k, p]] = var.max(prior.var_floor[p]);
            }
        }
        params.weights = weights;
        prev = Some(resp);
    };

    Ok(GmmFit {
        kept_dims,
        params,
        prior,
        posteriors: resp,
        report: ConvergenceReport {
            iterations,
            converged,
            objective,
        },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn dense_view(rows: &[Vec<f64>]) -> MaskedView {
        let n = rows.len();
        let d = rows[0].len();
        let values = Array2::from_shape_fn((n, d), |(i, j)| rows[i][j]);
        MaskedView::new(values, Array2::from_elem((n, d), true)).unwrap()
    }

    fn strength() -> PriorStrength {
        PriorStrength {
            kappa0: 1.0,
            a0: 2.0,
        }
    }

    fn two_clouds(seed: u64, per: usize, gap: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for cloud in 0..2 {
            for _ in 0..per {
                let base = cloud as f64 * gap;
                rows.push((0..3).map(|_| base + noise.sample(&mut rng)).collect());
                truth.push(cloud);
            }
        }
        (rows, truth)
    }

    /// Plain maximum-likelihood EM on complete data, started from the true
    /// split and run for many iterations.
    fn oracle_em(rows: &[Vec<f64>], truth: &[usize]) -> Vec<[f64; 2]> {
        let n = rows.len();
        let d = rows[0].len();
        let mut resp: Vec<[f64; 2]> = truth
            .iter()
            .map(|&t| if t == 0 { [0.9, 0.1] } else { [0.1, 0.9] })
            .collect();
        for _ in 0..500 {
            let mut w = [0.0; 2];
            let mut mu = vec![[0.0; 2]; d];
            let mut var = vec![[0.0; 2]; d];
            for k in 0..2 {
                w[k] = resp.iter().map(|r| r[k]).sum::<f64>();
                for j in 0..d {
                    mu[j][k] = (0..n).map(|i| resp[i][k] * rows[i][j]).sum::<f64>() / w[k];
                    var[j][k] = (0..n)
                        .map(|i| resp[i][k] * (rows[i][j] - mu[j][k]).powi(2))
                        .sum::<f64>()
                        / w[k];
                }
            }
            for i in 0..n {
                let mut lp = [0.0; 2];
                for k in 0..2 {
                    lp[k] = (w[k] / n as f64).ln();
                    for j in 0..d {
                        lp[k] -= 0.5
                            * ((2.0 * std::f64::consts::PI * var[j][k]).ln()
                                + (rows[i][j] - mu[j][k]).powi(2) / var[j][k]);
                    }
                }
                let m = lp[0].max(lp[1]);
                let z = (lp[0] - m).exp() + (lp[1] - m).exp();
                resp[i] = [(lp[0] - m).exp() / z, (lp[1] - m).exp() / z];
            }
        }
        resp
    }

    #[test]
    fn separated_clouds_give_one_hot_posteriors() {
        let (rows, truth) = two_clouds(3, 10, 10.0);
        let oracle = oracle_em(&rows, &truth);
        let view = dense_view(&rows);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fit = fit_map_gmm(&view, 2, strength(), &EmControl::default(), &mut rng).unwrap();
        // Component labels are arbitrary; align on the first row.
        let flip = fit.posteriors[[0, 0]] < 0.5;
        for i in 0..rows.len() {
            let p0 = if flip {
                fit.posteriors[[i, 1]]
            } else {
                fit.posteriors[[i, 0]]
            };
            assert!((p0 - oracle[i][0]).abs() < 1e-3, "row {i}: {p0} vs {:?}", oracle[i]);
            assert!(p0 < 1e-3 || p0 > 1.0 - 1e-3);
        }
    }

    #[test]
    fn objective_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                (0..6)
                    .map(|j| noise.sample(&mut rng) + if i % 3 == 0 { 1.5 } else { 0.0 } * j as f64)
                    .collect()
            })
            .collect();
        let mut view = dense_view(&rows);
        for i in 0..40 {
            for j in 0..6 {
                if (i * 7 + j * 3) % 5 == 0 {
                    view.mask[[i, j]] = false;
                }
            }
        }
        for c in 2..6 {
            let fit = fit_map_gmm(&view, c, strength(), &EmControl::default(), &mut rng).unwrap();
            for w in fit.report.objective.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                    "objective decreased: {} -> {}",
                    w[0],
                    w[1]
                );
            }
            let s: f64 = fit.params.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            for k in 0..c {
                for p in 0..fit.kept_dims.len() {
                    assert!(fit.params.variances[[k, p]] >= fit.prior.var_floor[p]);
                }
            }
        }
    }

    #[test]
    fn identical_rows_are_handled() {
        let rows = vec![vec![1.0, 2.0]; 6];
        let view = dense_view(&rows);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fit = fit_map_gmm(&view, 2, strength(), &EmControl::default(), &mut rng).unwrap();
        for i in 1..6 {
            assert_eq!(fit.posteriors.row(i), fit.posteriors.row(0));
        }
        for k in 0..2 {
            assert!((fit.params.means[[k, 0]] - 1.0).abs() < 1e-12);
            assert!((fit.params.means[[k, 1]] - 2.0).abs() < 1e-12);
        }
        assert!(fit.report.converged);
    }

    #[test]
    fn unobserved_dimension_is_dropped() {
        let rows = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]];
        let mut view = dense_view(&rows);
        view.mask.column_mut(1).fill(false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fit = fit_map_gmm(&view, 2, strength(), &EmControl::default(), &mut rng).unwrap();
        assert_eq!(fit.kept_dims, vec![0]);
        assert_eq!(fit.warnings.len(), 1);
    }

    #[test]
    fn argument_errors() {
        let view = dense_view(&[vec![1.0], vec![2.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(fit_map_gmm(&view, 3, strength(), &EmControl::default(), &mut rng).is_err());
        assert!(fit_map_gmm(&view, 1, strength(), &EmControl::default(), &mut rng).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        let (rows, _) = two_clouds(9, 8, 2.0);
        let view = dense_view(&rows);
        let a = fit_map_gmm(&view, 3, strength(), &EmControl::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = fit_map_gmm(&view, 3, strength(), &EmControl::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.posteriors, b.posteriors);
    }
}
