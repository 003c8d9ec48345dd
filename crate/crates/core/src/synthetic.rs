//! Seeded synthetic two-class datasets for tests and demos.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::mts::{Label, Mts, MtsDataset};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_vars: usize,
    pub len: usize,
    /// Variables `0..informative` have their positive-class mean shifted.
    pub informative: usize,
    /// Mean shift in units of the per-step noise standard deviation.
    pub separation: f64,
    /// Probability that an entry is masked.
    pub missing: f64,
    /// When non-zero, variable `v` follows the latent signal of group
    /// `v % groups`, so variables in one group are correlated.
    pub groups: usize,
    pub id_prefix: String,
}

impl SyntheticSpec {
    pub fn new(n_per_class: usize, n_vars: usize, len: usize) -> Self {
        SyntheticSpec {
            n_pos: n_per_class,
            n_neg: n_per_class,
            n_vars,
            len,
            informative: 0,
            separation: 0.0,
            missing: 0.0,
            groups: 0,
            id_prefix: "s".into(),
        }
    }
}

pub fn variable_names(n_vars: usize) -> Vec<String> {
    (0..n_vars).map(|v| format!("x{v:02}")).collect()
}

/// Samples in shuffled class order. Each variable is a smooth random
/// oscillation plus unit Gaussian noise.
pub fn two_class(spec: &SyntheticSpec, seed: u64) -> MtsDataset {
    let mut rng = rng_for(seed, "synthetic", &[]);
    let mut labels: Vec<Label> = std::iter::repeat(Label::Positive)
        .take(spec.n_pos)
        .chain(std::iter::repeat(Label::Negative).take(spec.n_neg))
        .collect();
    labels.shuffle(&mut rng);
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let latent: Vec<(f64, f64)> = (0..spec.groups.max(1))
                .map(|_| (rng.gen_range(0.5..2.0), rng.gen_range(0.0..std::f64::consts::TAU)))
                .collect();
            let own: Vec<(f64, f64)> = (0..spec.n_vars)
                .map(|_| (rng.gen_range(0.5..2.0), rng.gen_range(0.0..std::f64::consts::TAU)))
                .collect();
            let mut values = Array2::zeros((spec.n_vars, spec.len));
            let mut mask = Array2::from_elem((spec.n_vars, spec.len), true);
            for v in 0..spec.n_vars {
                let shift = if label.is_positive() && v < spec.informative {
                    spec.separation
                } else {
                    0.0
                };
                let (f, phase) = if spec.groups > 0 { latent[v % spec.groups] } else { own[v] };
                let amp = if spec.groups > 0 { 2.0 } else { 0.5 };
                for t in 0..spec.len {
                    let s = (std::f64::consts::TAU * f * t as f64 / spec.len as f64 + phase).sin();
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    values[[v, t]] = shift + amp * s + noise;
                    if rng.gen::<f64>() < spec.missing {
                        mask[[v, t]] = false;
                        values[[v, t]] = f64::NAN;
                    }
                }
            }
            Mts::new(format!("{}{i:03}", spec.id_prefix), values, mask).expect("shape")
        })
        .collect();
    MtsDataset::new(samples, Some(labels), variable_names(spec.n_vars)).expect("consistent")
}

/// Train and test sets drawn from the same distribution with disjoint ids.
pub fn train_test(spec: &SyntheticSpec, seed: u64) -> (MtsDataset, MtsDataset) {
    let mut tr = spec.clone();
    tr.id_prefix = format!("{}tr", spec.id_prefix);
    let mut te = spec.clone();
    te.id_prefix = format!("{}te", spec.id_prefix);
    (two_class(&tr, seed), two_class(&te, seed.wrapping_add(1)))
}
