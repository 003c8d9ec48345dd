//! Learned pattern similarity.
//!
//! Every length-`L` segment of every variable is a row of an `L`-column
//! table. Each tree of the ensemble picks one column as regression target
//! and is grown on the pooled training rows with randomized splits on the
//! remaining columns. A series is represented by how many of its segments
//! land in each leaf, and two series are compared by the overlap of these
//! histograms.

use ndarray::Array2;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel_matrix::{KernelMatrix, KernelMethod};
use crate::mts::{Mts, MtsDataset};
use crate::seed::{rng_for, Rng};

pub const DEFAULT_N_TREES: usize = 200;
pub const DEFAULT_SEG_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpsParams {
    pub n_trees: usize,
    pub seg_len: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate cut points sampled per node.
    pub n_cuts: usize,
}

impl Default for LpsParams {
    fn default() -> Self {
        LpsParams {
            n_trees: DEFAULT_N_TREES,
            seg_len: DEFAULT_SEG_LEN,
            max_depth: 6,
            min_leaf: 5,
            n_cuts: 10,
        }
    }
}

impl LpsParams {
    pub fn new(n_trees: usize, seg_len: usize) -> Self {
        LpsParams {
            n_trees,
            seg_len,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `segment[split_pos] <= threshold` go left; rows missing
    /// `split_pos` go to `missing_goes`.
    Split {
        split_pos: usize,
        threshold: f64,
        missing_goes: Side,
        left: usize,
        right: usize,
    },
    Leaf { leaf: usize },
}

/// One tree; `nodes[0]` is the root. Positions are 0-based segment columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub target_pos: usize,
    pub nodes: Vec<Node>,
    pub n_leaves: usize,
}

impl RegressionTree {
    /// Leaf reached by a segment (`NaN` marks a missing position).
    pub fn route(&self, segment: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { leaf } => return *leaf,
                Node::Split {
                    split_pos,
                    threshold,
                    missing_goes,
                    left,
                    right,
                } => {
                    let x = segment[*split_pos];
                    let side = if x.is_nan() {
                        *missing_goes
                    } else if x <= *threshold {
                        Side::Left
                    } else {
                        Side::Right
                    };
                    at = match side {
                        Side::Left => *left,
                        Side::Right => *right,
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpsModel {
    pub params: LpsParams,
    pub n_vars: usize,
    pub seed: u64,
    pub trees: Vec<RegressionTree>,
    /// Offset of each tree's leaves in the concatenated histogram.
    pub leaf_offsets: Vec<usize>,
    pub total_leaves: usize,
}

impl LpsModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn seg_len(&self) -> usize {
        self.params.seg_len
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Leaf occupancy counts of one series across the whole ensemble.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafHistogram {
    pub counts: Vec<u32>,
    /// Segments routed through each tree.
    pub n_segments: usize,
    pub n_trees: usize,
}

/// All length-`seg_len` segments of every variable, row-major, `NaN` for
/// missing positions. Rows are ordered by variable, then start offset.
fn segment_rows(m: &Mts, seg_len: usize, out: &mut Vec<f64>) {
    let t = m.len();
    for v in 0..m.n_vars() {
        for start in 0..=(t - seg_len) {
            out.extend((start..start + seg_len).map(|s| m.get(v, s).unwrap_or(f64::NAN)));
        }
    }
}

struct SegmentTable {
    data: Vec<f64>,
    width: usize,
}

impl SegmentTable {
    #[inline]
    fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    fn n_rows(&self) -> usize {
        self.data.len() / self.width
    }
}

pub fn lps_fit(train: &MtsDataset, params: LpsParams, seed: u64) -> Result<LpsModel> {
    if train.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if params.n_trees < 1 {
        return Err(invalid("number of trees must be at least 1"));
    }
    if params.seg_len < 2 {
        return Err(invalid("segment length must be at least 2"));
    }
    let t = train
        .min_len()
        .ok_or_else(|| invalid("training set is empty"))?;
    if params.seg_len >= t {
        return Err(invalid(format!(
            "segment length {} must be shorter than the series length {t}",
            params.seg_len
        )));
    }
    let mut data = Vec::new();
    for m in train.samples() {
        segment_rows(m, params.seg_len, &mut data);
    }
    let table = SegmentTable {
        data,
        width: params.seg_len,
    };

    let trees: Vec<RegressionTree> = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, "lps-tree", &[i as u64]);
            grow_tree(&table, &params, &mut rng)
        })
        .collect();

    let mut leaf_offsets = Vec::with_capacity(trees.len());
    let mut total_leaves = 0;
    for tree in &trees {
        leaf_offsets.push(total_leaves);
        total_leaves += tree.n_leaves;
    }
    Ok(LpsModel {
        params,
        n_vars: train.n_vars(),
        seed,
        trees,
        leaf_offsets,
        total_leaves,
    })
}

struct TreeBuilder<'a> {
    table: &'a SegmentTable,
    params: &'a LpsParams,
    target: usize,
    nodes: Vec<Node>,
    n_leaves: usize,
}

fn grow_tree(table: &SegmentTable, params: &LpsParams, rng: &mut Rng) -> RegressionTree {
    let target = rng.gen_range(0..params.seg_len);
    let mut builder = TreeBuilder {
        table,
        params,
        target,
        nodes: Vec::new(),
        n_leaves: 0,
    };
    let rows: Vec<u32> = (0..table.n_rows() as u32).collect();
    builder.grow(rows, 0, rng);
    RegressionTree {
        target_pos: target,
        nodes: builder.nodes,
        n_leaves: builder.n_leaves,
    }
}

/// Sum of squared deviations from running sums.
#[inline]
fn sse(sum: f64, sum_sq: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (sum_sq - sum * sum / n as f64).max(0.0)
    }
}

impl TreeBuilder<'_> {
    fn leaf(&mut self) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { leaf: self.n_leaves });
        self.n_leaves += 1;
        id
    }

    fn grow(&mut self, rows: Vec<u32>, depth: usize, rng: &mut Rng) -> usize {
        let table = self.table;
        let min_leaf = self.params.min_leaf.max(1);
        if depth >= self.params.max_depth {
            return self.leaf();
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut n_target = 0;
        for &r in &rows {
            let y = table.at(r as usize, self.target);
            if !y.is_nan() {
                lo = lo.min(y);
                hi = hi.max(y);
                n_target += 1;
            }
        }
        if n_target < 2 * min_leaf || lo == hi {
            return self.leaf();
        }

        let mut split_pos = rng.gen_range(0..self.params.seg_len - 1);
        if split_pos >= self.target {
            split_pos += 1;
        }
        let eligible: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|&r| {
                let x = table.at(r as usize, split_pos);
                let y = table.at(r as usize, self.target);
                (!x.is_nan() && !y.is_nan()).then_some((x, y))
            })
            .collect();
        if eligible.len() < 2 * min_leaf {
            return self.leaf();
        }
        let (sum, sum_sq) = eligible
            .iter()
            .fold((0.0, 0.0), |(s, q), &(_, y)| (s + y, q + y * y));
        let parent = sse(sum, sum_sq, eligible.len());

        let mut best: Option<(f64, f64)> = None;
        for _ in 0..self.params.n_cuts {
            let cut = eligible[rng.gen_range(0..eligible.len())].0;
            let (mut ls, mut lq, mut ln) = (0.0, 0.0, 0usize);
            for &(x, y) in &eligible {
                if x <= cut {
                    ls += y;
                    lq += y * y;
                    ln += 1;
                }
            }
            let rn = eligible.len() - ln;
            if ln < min_leaf || rn < min_leaf {
                continue;
            }
            let gain = parent - sse(ls, lq, ln) - sse(sum - ls, sum_sq - lq, rn);
            if best.map_or(true, |(g, _)| gain > g) {
                best = Some((gain, cut));
            }
        }
        let threshold = match best {
            Some((gain, cut)) if gain > 1e-12 * parent => cut,
            _ => return self.leaf(),
        };

        let mut left_rows = Vec::new();
        let mut right_rows = Vec::new();
        let mut missing_rows = Vec::new();
        for &r in &rows {
            let x = table.at(r as usize, split_pos);
            if x.is_nan() {
                missing_rows.push(r);
            } else if x <= threshold {
                left_rows.push(r);
            } else {
                right_rows.push(r);
            }
        }
        let missing_goes = if right_rows.len() > left_rows.len() {
            Side::Right
        } else {
            Side::Left
        };
        match missing_goes {
            Side::Left => left_rows.extend(missing_rows),
            Side::Right => right_rows.extend(missing_rows),
        }
        left_rows.sort_unstable();
        right_rows.sort_unstable();

        let id = self.nodes.len();
        self.nodes.push(Node::Split {
            split_pos,
            threshold,
            missing_goes,
            left: 0,
            right: 0,
        });
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id]
        {
            *l = left;
            *r = right;
        }
        id
    }
}

pub fn lps_represent(model: &LpsModel, m: &Mts) -> Result<LeafHistogram> {
    if m.n_vars() != model.n_vars {
        return Err(invalid(format!(
            "sample `{}` has {} variables, model was fitted on {}",
            m.id(),
            m.n_vars(),
            model.n_vars
        )));
    }
    let seg_len = model.seg_len();
    if m.len() < seg_len {
        return Err(invalid(format!(
            "sample `{}` is shorter ({}) than the segment length {seg_len}",
            m.id(),
            m.len()
        )));
    }
    let mut rows = Vec::new();
    segment_rows(m, seg_len, &mut rows);
    let mut counts = vec![0u32; model.total_leaves];
    for (tree, &offset) in model.trees.iter().zip(&model.leaf_offsets) {
        for seg in rows.chunks_exact(seg_len) {
            counts[offset + tree.route(seg)] += 1;
        }
    }
    Ok(LeafHistogram {
        counts,
        n_segments: rows.len() / seg_len,
        n_trees: model.n_trees(),
    })
}

/// Histogram intersection normalised by the number of routed segments.
pub fn lps_similarity(hx: &LeafHistogram, hy: &LeafHistogram) -> Result<f64> {
    if hx.counts.len() != hy.counts.len() || hx.n_trees != hy.n_trees {
        return Err(invalid(format!(
            "histograms of different ensembles ({} vs {} leaves)",
            hx.counts.len(),
            hy.counts.len()
        )));
    }
    let overlap: u64 = hx
        .counts
        .iter()
        .zip(&hy.counts)
        .map(|(&a, &b)| u64::from(a.min(b)))
        .sum();
    let denom = (hx.n_trees * hx.n_segments.max(hy.n_segments)) as f64;
    if denom == 0.0 {
        return Err(Error::Undefined("empty histograms".into()));
    }
    Ok(overlap as f64 / denom)
}

pub fn lps_represent_all(model: &LpsModel, ds: &MtsDataset) -> Result<Vec<LeafHistogram>> {
    ds.samples()
        .par_iter()
        .map(|m| lps_represent(model, m))
        .collect()
}

fn similarity_matrix(rows: &[LeafHistogram], cols: &[LeafHistogram]) -> Result<Array2<f64>> {
    let flat: Vec<f64> = rows
        .par_iter()
        .map(|r| {
            cols.iter()
                .map(|c| lps_similarity(r, c))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(Array2::from_shape_vec((rows.len(), cols.len()), flat).expect("shape"))
}

/// Train-by-train similarities.
pub fn lps_train_kernel(model: &LpsModel, train: &MtsDataset) -> Result<KernelMatrix> {
    let h = lps_represent_all(model, train)?;
    let k = similarity_matrix(&h, &h)?;
    KernelMatrix::new(k, train.ids(), train.ids(), KernelMethod::Lps)
}

/// `(K_tr, K_te)`: train-by-train and test-by-train similarities.
pub fn lps_kernel_matrices(
    model: &LpsModel,
    train: &MtsDataset,
    test: &MtsDataset,
) -> Result<(KernelMatrix, KernelMatrix)> {
    let h_tr = lps_represent_all(model, train)?;
    let h_te = lps_represent_all(model, test)?;
    let k_tr = KernelMatrix::new(
        similarity_matrix(&h_tr, &h_tr)?,
        train.ids(),
        train.ids(),
        KernelMethod::Lps,
    )?;
    let k_te = KernelMatrix::new(
        similarity_matrix(&h_te, &h_tr)?,
        test.ids(),
        train.ids(),
        KernelMethod::Lps,
    )?;
    Ok((k_tr, k_te))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(n: usize, n_vars: usize, t: usize, missing: f64, seed: u64) -> MtsDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|i| {
                let rows: Vec<Vec<Option<f64>>> = (0..n_vars)
                    .map(|v| {
                        (0..t)
                            .map(|s| {
                                let x = ((s as f64) * 0.4 + v as f64 + i as f64 * 0.1).sin()
                                    + rng.gen_range(-0.3..0.3);
                                (rng.gen::<f64>() >= missing).then_some(x)
                            })
                            .collect()
                    })
                    .collect();
                Mts::from_rows(format!("s{i}"), &rows).unwrap()
            })
            .collect();
        MtsDataset::new(samples, None, (0..n_vars).map(|v| format!("v{v}")).collect()).unwrap()
    }

    #[test]
    fn segment_count_per_variable() {
        let ds = random_dataset(2, 3, 25, 0.0, 1);
        let model = lps_fit(&ds, LpsParams::new(3, 10), 5).unwrap();
        let h = lps_represent(&model, &ds.samples()[0]).unwrap();
        assert_eq!(h.n_segments, 3 * 16);
        for (tree, &off) in model.trees.iter().zip(&model.leaf_offsets) {
            let s: u32 = h.counts[off..off + tree.n_leaves].iter().sum();
            assert_eq!(s as usize, h.n_segments);
        }
    }

    #[test]
    fn identical_segments_give_single_leaf() {
        let m = Mts::dense("a", Array2::from_elem((2, 20), 1.5));
        let ds = MtsDataset::new(vec![m.clone(), m], None, vec!["x".into(), "y".into()]).unwrap();
        let model = lps_fit(&ds, LpsParams::new(1, 10), 0).unwrap();
        assert_eq!(model.total_leaves, 1);
        assert_eq!(model.trees[0].nodes.len(), 1);
    }

    #[test]
    fn trees_respect_structure() {
        let ds = random_dataset(6, 2, 30, 0.1, 2);
        let params = LpsParams::new(20, 6);
        let model = lps_fit(&ds, params, 9).unwrap();
        for tree in &model.trees {
            assert!(tree.depth() <= params.max_depth);
            for node in &tree.nodes {
                if let Node::Split { split_pos, .. } = node {
                    assert_ne!(*split_pos, tree.target_pos);
                    assert!(*split_pos < params.seg_len);
                }
            }
        }
        assert!(model.total_leaves > model.n_trees());
    }

    #[test]
    fn fully_missing_sample_follows_missing_edges() {
        let ds = random_dataset(5, 2, 20, 0.0, 3);
        let model = lps_fit(&ds, LpsParams::new(10, 5), 1).unwrap();
        let blank = Mts::from_rows("blank", &vec![vec![None; 20]; 2]).unwrap();
        let h = lps_represent(&model, &blank).unwrap();
        assert_eq!(h.n_segments, 2 * 16);
        for (tree, &off) in model.trees.iter().zip(&model.leaf_offsets) {
            let s: u32 = h.counts[off..off + tree.n_leaves].iter().sum();
            assert_eq!(s as usize, h.n_segments);
        }
    }

    #[test]
    fn similarity_examples() {
        let a = LeafHistogram {
            counts: vec![3, 1, 0, 4, 0, 0],
            n_segments: 4,
            n_trees: 2,
        };
        let b = LeafHistogram {
            counts: vec![4, 0, 0, 1, 3, 0],
            n_segments: 4,
            n_trees: 2,
        };
        assert_eq!(lps_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(lps_similarity(&a, &b).unwrap(), 0.5);
        assert_eq!(lps_similarity(&b, &a).unwrap(), 0.5);
        let c = LeafHistogram {
            counts: vec![0, 0, 4, 0, 0, 4],
            n_segments: 4,
            n_trees: 2,
        };
        assert_eq!(lps_similarity(&a, &c).unwrap(), 0.0);
        let short = LeafHistogram {
            counts: vec![1, 1],
            n_segments: 1,
            n_trees: 2,
        };
        assert!(lps_similarity(&a, &short).is_err());
    }

    #[test]
    fn fit_rejects_bad_arguments() {
        let ds = random_dataset(3, 1, 10, 0.0, 4);
        assert!(lps_fit(&ds, LpsParams::new(5, 10), 0).is_err());
        assert!(lps_fit(&ds, LpsParams::new(0, 5), 0).is_err());
        let empty = MtsDataset::new(vec![], None, vec!["x".into()]).unwrap();
        assert!(lps_fit(&empty, LpsParams::new(5, 5), 0).is_err());
        let model = lps_fit(&ds, LpsParams::new(5, 5), 0).unwrap();
        let wrong = random_dataset(1, 2, 10, 0.0, 4);
        assert!(lps_represent(&model, &wrong.samples()[0]).is_err());
    }

    #[test]
    fn kernel_matrices_properties() {
        let train = random_dataset(8, 2, 25, 0.15, 5);
        let mut with_dup = train.samples().to_vec();
        with_dup.push(Mts::new("dup", train.samples()[2].values().clone(), train.samples()[2].mask().clone()).unwrap());
        let train = MtsDataset::new(with_dup, None, train.variable_names().to_vec()).unwrap();
        let test = random_dataset(3, 2, 25, 0.15, 6);
        let model = lps_fit(&train, LpsParams::new(30, 5), 11).unwrap();
        let (k_tr, k_te) = lps_kernel_matrices(&model, &train, &test).unwrap();
        assert!(k_tr.is_symmetric());
        let n = k_tr.nrows();
        for i in 0..n {
            assert_eq!(k_tr.values()[[i, i]], 1.0);
        }
        assert_eq!(k_tr.values().row(2), k_tr.values().row(n - 1));
        assert_eq!(k_te.values().dim(), (3, n));
        assert!(k_te.values().iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn json_round_trip() {
        let ds = random_dataset(4, 1, 15, 0.1, 7);
        let model = lps_fit(&ds, LpsParams::new(4, 5), 3).unwrap();
        let back = LpsModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
