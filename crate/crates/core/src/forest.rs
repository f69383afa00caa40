//! Per-parameter CART regression forests and leaf-proximity weights.
//!
//! Trees split on summaries to predict one standardised parameter component.
//! The observed summary is dropped down every tree; each simulation sharing
//! its leaf receives `1 / |leaf|`, where the leaf size counts rows of the full
//! dataset rather than the bootstrap sample.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SimDataset;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::stats::{categorical_resample, ess, fit_standardiser};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    /// Trees per parameter component.
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub min_split: usize,
    /// Minimum sum-of-squares reduction on standardised targets.
    pub min_impurity_decrease: f64,
    pub bootstrap: bool,
    /// Fraction of rows drawn for each tree.
    pub fit_fraction: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            n_trees: 800,
            max_depth: 10,
            min_leaf: 40,
            min_split: 80,
            min_impurity_decrease: 1e-6,
            bootstrap: true,
            fit_fraction: 1.0,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::invalid("forest.n_trees must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(Error::invalid("forest.max_depth must be at least 1"));
        }
        if self.min_leaf == 0 {
            return Err(Error::invalid("forest.min_leaf must be at least 1"));
        }
        if !(self.fit_fraction > 0.0 && self.fit_fraction <= 1.0) {
            return Err(Error::invalid("forest.fit_fraction must lie in (0, 1]"));
        }
        if !(self.min_impurity_decrease >= 0.0) {
            return Err(Error::invalid("forest.min_impurity_decrease must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `s[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, gain: f64, left: u32, right: u32 },
    /// Range into the tree's member list.
    Leaf { start: u32, len: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
    /// In-bag row indices grouped by leaf; bootstrap duplicates are repeated.
    pub members: Vec<u32>,
}

impl RegressionTree {
    /// Index of the leaf node reached by `s`.
    pub fn leaf_of(&self, s: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if s[feature] <= threshold { left } else { right } as usize;
                }
                Node::Leaf { .. } => return i,
            }
        }
    }

    /// In-bag rows of a leaf node.
    pub fn leaf_members(&self, node: usize) -> &[u32] {
        match self.nodes[node] {
            Node::Leaf { start, len } => &self.members[start as usize..(start + len) as usize],
            Node::Split { .. } => &[],
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &RegressionTree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Split { left, right, .. } => 1 + go(t, left as usize).max(go(t, right as usize)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }

    /// Rows of `columns` (column-major, `n` rows) that share the leaf of `s`.
    fn rows_sharing_leaf(&self, columns: &[Vec<f64>], s: &[f64]) -> Vec<u32> {
        let n = columns[0].len();
        let mut rows: Vec<u32> = (0..n as u32).collect();
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split { feature, threshold, left, right, .. } => {
                    let col = &columns[feature];
                    if s[feature] <= threshold {
                        rows.retain(|&r| col[r as usize] <= threshold);
                        i = left as usize;
                    } else {
                        rows.retain(|&r| col[r as usize] > threshold);
                        i = right as usize;
                    }
                }
                Node::Leaf { .. } => return rows,
            }
        }
    }
}

/// Midpoint split value that keeps `a` left and `b` right.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = 0.5 * a + 0.5 * b;
    if m >= b || m < a {
        a
    } else {
        m
    }
}

fn columns_of(summaries: &[impl AsRef<[f64]>]) -> Vec<Vec<f64>> {
    let d = summaries.first().map_or(0, |s| s.as_ref().len());
    (0..d).map(|f| summaries.iter().map(|s| s.as_ref()[f]).collect()).collect()
}

/// Row indices sorted by each feature; ties keep row order.
fn presort(columns: &[Vec<f64>]) -> Vec<Vec<u32>> {
    columns
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..col.len() as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            idx
        })
        .collect()
}

struct Builder<'a> {
    columns: &'a [Vec<f64>],
    targets: &'a [f64],
    config: &'a TreeConfig,
    /// Per-feature sample orders; every node owns the same range in each.
    sorted: Vec<Vec<u32>>,
    scratch: Vec<u32>,
    go_left: Vec<bool>,
    nodes: Vec<Node>,
    members: Vec<u32>,
}

impl Builder<'_> {
    fn best_split(&self, lo: usize, hi: usize) -> Option<(usize, f64, f64, usize)> {
        let n = hi - lo;
        let min_leaf = self.config.min_leaf;
        if n < self.config.min_split || n < 2 * min_leaf {
            return None;
        }
        let mean = self.sorted[0][lo..hi].iter().map(|&r| self.targets[r as usize]).sum::<f64>() / n as f64;
        let mut best: Option<(usize, f64, f64, usize)> = None;
        for (f, order) in self.sorted.iter().enumerate() {
            let col = &self.columns[f];
            let seg = &order[lo..hi];
            let mut s_left = 0.0;
            for k in 0..n - min_leaf {
                let r = seg[k] as usize;
                s_left += self.targets[r] - mean;
                let n_left = k + 1;
                if n_left < min_leaf {
                    continue;
                }
                let (a, b) = (col[r], col[seg[k + 1] as usize]);
                if !(a < b) {
                    continue;
                }
                let gain = s_left * s_left * n as f64 / (n_left as f64 * (n - n_left) as f64);
                if best.is_none_or(|bst| gain > bst.2) {
                    best = Some((f, midpoint(a, b), gain, n_left));
                }
            }
        }
        best.filter(|b| b.2 >= self.config.min_impurity_decrease)
    }

    fn build(&mut self, lo: usize, hi: usize, depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let split = if depth < self.config.max_depth { self.best_split(lo, hi) } else { None };
        let Some((feature, threshold, gain, n_left)) = split else {
            let start = self.members.len() as u32;
            self.members.extend_from_slice(&self.sorted[0][lo..hi]);
            self.nodes.push(Node::Leaf { start, len: (hi - lo) as u32 });
            return id;
        };
        self.nodes.push(Node::Leaf { start: 0, len: 0 });
        let col = &self.columns[feature];
        for &r in &self.sorted[feature][lo..hi] {
            self.go_left[r as usize] = col[r as usize] <= threshold;
        }
        for order in self.sorted.iter_mut() {
            let seg = &mut order[lo..hi];
            self.scratch.clear();
            let mut w = 0;
            for k in 0..seg.len() {
                let r = seg[k];
                if self.go_left[r as usize] {
                    seg[w] = r;
                    w += 1;
                } else {
                    self.scratch.push(r);
                }
            }
            debug_assert_eq!(w, n_left);
            seg[w..].copy_from_slice(&self.scratch);
        }
        let left = self.build(lo, lo + n_left, depth + 1);
        let right = self.build(lo + n_left, hi, depth + 1);
        self.nodes[id as usize] = Node::Split { feature, threshold, gain, left, right };
        id
    }
}

/// Fit one tree on the multiset of rows given by `counts` (row multiplicities).
fn fit_counts(
    columns: &[Vec<f64>],
    orders: &[Vec<u32>],
    targets: &[f64],
    counts: &[u32],
    config: &TreeConfig,
) -> RegressionTree {
    let n_sample: usize = counts.iter().map(|&c| c as usize).sum();
    let sorted: Vec<Vec<u32>> = orders
        .iter()
        .map(|order| {
            let mut v = Vec::with_capacity(n_sample);
            for &r in order {
                for _ in 0..counts[r as usize] {
                    v.push(r);
                }
            }
            v
        })
        .collect();
    let mut b = Builder {
        columns,
        targets,
        config,
        sorted,
        scratch: Vec::with_capacity(n_sample),
        go_left: vec![false; targets.len()],
        nodes: Vec::new(),
        members: Vec::with_capacity(n_sample),
    };
    if n_sample == 0 || columns.is_empty() {
        b.nodes.push(Node::Leaf { start: 0, len: 0 });
    } else {
        b.build(0, n_sample, 0);
    }
    RegressionTree { nodes: b.nodes, members: b.members }
}

/// Row multiplicities of one tree's training sample.
fn draw_counts(n: usize, config: &TreeConfig, rng: &RngState) -> Vec<u32> {
    let size = ((config.fit_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut counts = vec![0u32; n];
    let mut gen = rng.rng();
    if config.bootstrap {
        for _ in 0..size {
            counts[gen.random_range(0..n)] += 1;
        }
    } else if size == n {
        counts.iter_mut().for_each(|c| *c = 1);
    } else {
        for i in rand::seq::index::sample(&mut gen, n, size) {
            counts[i] = 1;
        }
    }
    counts
}

/// Fit a single tree on raw targets. The training sample follows the
/// bootstrap and fit-fraction settings; with bootstrap off and a full fit
/// fraction every row is used once.
pub fn fit_tree<S: AsRef<[f64]>>(
    summaries: &[S],
    targets: &[f64],
    config: &TreeConfig,
    rng: &RngState,
) -> Result<RegressionTree> {
    config.validate()?;
    if summaries.len() != targets.len() {
        return Err(Error::Dimension { expected: summaries.len(), got: targets.len() });
    }
    if summaries.is_empty() {
        return Err(Error::invalid("cannot fit a tree on an empty dataset"));
    }
    let columns = columns_of(summaries);
    let orders = presort(&columns);
    let counts = draw_counts(targets.len(), config, rng);
    Ok(fit_counts(&columns, &orders, targets, &counts, config))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    /// `trees[j][b]` predicts parameter component `j`.
    pub trees: Vec<Vec<RegressionTree>>,
    /// Rows not drawn for each tree, same layout as `trees`.
    pub oob: Vec<Vec<Vec<u32>>>,
}

impl Forest {
    pub fn n_trees(&self) -> usize {
        self.trees.iter().map(Vec::len).sum()
    }
}

/// Targets standardised per component with uniform weights.
fn standardised_targets(dataset: &SimDataset) -> Result<Vec<Vec<f64>>> {
    let n = dataset.len();
    let st = fit_standardiser(&dataset.thetas, &vec![1.0 / n as f64; n]).or_else(|e| match e {
        // a constant parameter column still gets a (single-leaf) forest
        Error::DegenerateCoordinate(_) => Ok(crate::stats::Standardiser::identity(dataset.theta_dim())),
        e => Err(e),
    })?;
    Ok((0..dataset.theta_dim())
        .map(|j| dataset.thetas.iter().map(|t| (t[j] - st.mean[j]) / st.sd[j]).collect())
        .collect())
}

struct Prepared {
    columns: Vec<Vec<f64>>,
    orders: Vec<Vec<u32>>,
    targets: Vec<Vec<f64>>,
}

fn prepare(dataset: &SimDataset, config: &TreeConfig) -> Result<Prepared> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot fit a forest on an empty dataset"));
    }
    let columns = columns_of(&dataset.summaries);
    let orders = presort(&columns);
    Ok(Prepared { columns, orders, targets: standardised_targets(dataset)? })
}

/// Fit `B` trees for each parameter component. Tree `b` of component `j`
/// uses stream `split(b)`: the b-th tree of every parameter shares one
/// bootstrap draw.
pub fn fit_forests(dataset: &SimDataset, config: &TreeConfig, rng: &RngState) -> Result<Forest> {
    let p = prepare(dataset, config)?;
    let b = config.n_trees;
    let fitted: Vec<(RegressionTree, Vec<u32>)> = (0..dataset.theta_dim() * b)
        .into_par_iter()
        .map(|k| {
            let counts = draw_counts(dataset.len(), config, &rng.split((k % config.n_trees) as u64));
            let tree = fit_counts(&p.columns, &p.orders, &p.targets[k / b], &counts, config);
            let oob = (0..counts.len() as u32).filter(|&i| counts[i as usize] == 0).collect();
            (tree, oob)
        })
        .collect();
    let mut trees = vec![Vec::with_capacity(b); dataset.theta_dim()];
    let mut oob = vec![Vec::with_capacity(b); dataset.theta_dim()];
    for (k, (t, o)) in fitted.into_iter().enumerate() {
        trees[k / b].push(t);
        oob[k / b].push(o);
    }
    Ok(Forest { trees, oob })
}

/// One tree's contribution: `1 / |L|` for every row in the leaf of `s_y`.
fn add_tree_weights(tree: &RegressionTree, columns: &[Vec<f64>], s_y: &[f64], acc: &mut [f64]) -> Result<()> {
    let rows = tree.rows_sharing_leaf(columns, s_y);
    if rows.is_empty() {
        return Err(Error::Internal("observed summary reached an empty leaf".into()));
    }
    let w = 1.0 / rows.len() as f64;
    for r in rows {
        acc[r as usize] += w;
    }
    Ok(())
}

fn check_query(dataset: &SimDataset, s_y: &[f64]) -> Result<()> {
    if s_y.len() != dataset.summary_dim() {
        return Err(Error::Dimension { expected: dataset.summary_dim(), got: s_y.len() });
    }
    Ok(())
}

fn sum_weights(parts: Vec<Result<Vec<f64>>>, n: usize, n_trees: usize) -> Result<Vec<f64>> {
    let mut total = vec![0.0; n];
    for part in parts {
        for (t, v) in total.iter_mut().zip(part?) {
            *t += v;
        }
    }
    Ok(total.into_iter().map(|v| v / n_trees as f64).collect())
}

/// Normalised leaf-proximity weights of every dataset row around `s_y`.
pub fn proximity_weights(forest: &Forest, dataset: &SimDataset, s_y: &[f64]) -> Result<Vec<f64>> {
    check_query(dataset, s_y)?;
    let columns = columns_of(&dataset.summaries);
    let trees: Vec<&RegressionTree> = forest.trees.iter().flatten().collect();
    let parts: Vec<Result<Vec<f64>>> = trees
        .par_chunks(trees.len().div_ceil(rayon::current_num_threads()).max(1))
        .map(|chunk| {
            let mut acc = vec![0.0; dataset.len()];
            for t in chunk {
                add_tree_weights(t, &columns, s_y, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    sum_weights(parts, dataset.len(), trees.len())
}

/// Fit the forest and accumulate proximity weights tree by tree, without
/// keeping the trees. Identical to `fit_forests` followed by
/// `proximity_weights` on the same stream.
pub fn forest_weights(dataset: &SimDataset, s_y: &[f64], config: &TreeConfig, rng: &RngState) -> Result<Vec<f64>> {
    check_query(dataset, s_y)?;
    let p = prepare(dataset, config)?;
    let total = dataset.theta_dim() * config.n_trees;
    let chunk = total.div_ceil(rayon::current_num_threads()).max(1);
    let parts: Vec<Result<Vec<f64>>> = (0..total.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; dataset.len()];
            for k in c * chunk..((c + 1) * chunk).min(total) {
                let counts = draw_counts(dataset.len(), config, &rng.split((k % config.n_trees) as u64));
                let tree = fit_counts(&p.columns, &p.orders, &p.targets[k / config.n_trees], &counts, config);
                add_tree_weights(&tree, &p.columns, s_y, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    sum_weights(parts, dataset.len(), total)
}

#[derive(Debug, Clone)]
pub struct ForestPreconditioning {
    pub weights: Vec<f64>,
    pub resampled: SimDataset,
    pub ess: f64,
}

/// Proximity weights, an `m`-row importance resample and the weights' ESS.
pub fn forest_precondition(
    dataset: &SimDataset,
    s_y: &[f64],
    config: &TreeConfig,
    m: usize,
    rng: &RngState,
) -> Result<ForestPreconditioning> {
    let weights = forest_weights(dataset, s_y, config, &rng.child("fit"))?;
    let ess = ess(&weights)?;
    log::info!("forest weights: ESS = {ess:.1} of {} rows", dataset.len());
    let idx = categorical_resample(&weights, m, &rng.child("resample"))?;
    Ok(ForestPreconditioning { weights, resampled: dataset.select(&idx), ess })
}
