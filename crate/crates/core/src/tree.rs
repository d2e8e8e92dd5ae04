//! Regression tree fitted on anomaly-rank targets, its pruning and the
//! clustering quality metrics.
//!
//! Features are indexed globally: continuous features first, then the
//! categorical ones. Continuous splits send `x <= threshold` left;
//! categorical splits send the listed levels left and everything else,
//! including the unknown level, right.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MixedRecord, Schema, Standardization};
use crate::detector::{EstimatorTarget, Thresholds};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub l_max: usize,
    pub bins: usize,
    pub min_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            l_max: 5,
            bins: 40,
            min_leaf: 1,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_max < 1 {
            return Err(Error::invalid("l_max", "must be at least 1"));
        }
        if self.bins < 2 {
            return Err(Error::invalid("bins", "must be at least 2"));
        }
        if self.min_leaf < 1 {
            return Err(Error::invalid("min_leaf", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SplitKind {
    Continuous { threshold: f64 },
    Categorical { left_levels: Vec<u32> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    #[serde(flatten)]
    pub kind: SplitKind,
}

impl Split {
    /// Whether `r` follows the left branch.
    pub fn goes_left(&self, r: &MixedRecord, d_cont: usize) -> bool {
        match &self.kind {
            SplitKind::Continuous { threshold } => r.x[self.feature] <= *threshold,
            SplitKind::Categorical { left_levels } => match r.levels[self.feature - d_cont] {
                Some(l) => left_levels.contains(&l),
                None => false,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Pre-order position in the full tree; kept by pruning.
    pub id: usize,
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    /// Number of split conditions from the root to this node.
    pub num_vars: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<Box<TreeNode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<Box<TreeNode>>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    pub fn children(&self) -> Option<(&TreeNode, &TreeNode)> {
        match (&self.left, &self.right) {
            (Some(l), Some(r)) => Some((l, r)),
            _ => None,
        }
    }

    /// `(|l| var_l + |r| var_r) / |node|`.
    pub fn split_variance(&self) -> Option<f64> {
        let (l, r) = self.children()?;
        Some((l.variance * l.count as f64 + r.variance * r.count as f64) / self.count as f64)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    fn visit<'a>(&'a self, out: &mut Vec<&'a TreeNode>) {
        out.push(self);
        if let Some((l, r)) = self.children() {
            l.visit(out);
            r.visit(out);
        }
    }

    fn check(&self, depth: usize) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("tree", m));
        if self.num_vars != depth {
            return bad(format!("node {} has num_vars {} at depth {depth}", self.id, self.num_vars));
        }
        if !(self.variance >= 0.0) || !self.mean.is_finite() {
            return bad(format!("node {} has invalid statistics", self.id));
        }
        match (&self.split, self.children()) {
            (None, None) if self.left.is_none() && self.right.is_none() => Ok(()),
            (Some(_), Some((l, r))) => {
                if l.count + r.count != self.count {
                    return bad(format!("node {} child counts do not add up", self.id));
                }
                l.check(depth + 1)?;
                r.check(depth + 1)
            }
            _ => bad(format!("node {}: a split must come with exactly two children", self.id)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafClass {
    Anomalous,
    Transition,
    Normal,
}

/// Band of a leaf by its mean estimator; lower edges are inclusive.
pub fn classify_leaf(leaf: &TreeNode, th: &Thresholds) -> LeafClass {
    if leaf.mean < th.adt {
        LeafClass::Anomalous
    } else if leaf.mean >= th.ndt {
        LeafClass::Normal
    } else {
        LeafClass::Transition
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeRepr")]
pub struct SurrogateTree {
    pub root: TreeNode,
    pub thresholds: Thresholds,
    pub config: TreeConfig,
    pub total_count: usize,
    pub schema: Schema,
    /// Present when the tree was grown on standardized continuous values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
}

#[derive(Deserialize)]
struct TreeRepr {
    root: TreeNode,
    thresholds: Thresholds,
    config: TreeConfig,
    total_count: usize,
    schema: Schema,
    #[serde(default)]
    standardization: Option<Standardization>,
}

impl TryFrom<TreeRepr> for SurrogateTree {
    type Error = Error;

    fn try_from(r: TreeRepr) -> Result<Self> {
        let tree = SurrogateTree {
            root: r.root,
            thresholds: r.thresholds,
            config: r.config,
            total_count: r.total_count,
            schema: r.schema,
            standardization: r.standardization,
        };
        tree.check()?;
        Ok(tree)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityMetrics {
    pub wv: f64,
    pub num_clusters: usize,
    pub nv_total: usize,
    pub q: f64,
    pub lambda: f64,
}

impl SurrogateTree {
    fn check(&self) -> Result<()> {
        self.schema.check_names()?;
        self.config.validate()?;
        self.thresholds.validate()?;
        self.root.check(0)?;
        if self.root.count != self.total_count {
            return Err(Error::invalid("tree", "root count differs from total_count"));
        }
        let d = self.schema.continuous_dim();
        for n in self.nodes() {
            if n.num_vars > self.config.l_max {
                return Err(Error::invalid("tree", format!("node {} is deeper than l_max", n.id)));
            }
            if let Some(s) = &n.split {
                let ok = match &s.kind {
                    SplitKind::Continuous { threshold } => s.feature < d && threshold.is_finite(),
                    SplitKind::Categorical { left_levels } => {
                        s.feature >= d
                            && s.feature < self.schema.num_features()
                            && left_levels
                                .iter()
                                .all(|&l| (l as usize) < self.schema.categorical[s.feature - d].cardinality())
                    }
                };
                if !ok {
                    return Err(Error::invalid("tree", format!("node {} has an invalid split", n.id)));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("tree", e))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    /// All nodes in pre-order.
    pub fn nodes(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        self.root.visit(&mut out);
        out
    }

    pub fn leaves(&self) -> Vec<&TreeNode> {
        self.nodes().into_iter().filter(|n| n.is_leaf()).collect()
    }

    pub fn depth(&self) -> usize {
        self.leaves().iter().map(|n| n.num_vars).max().unwrap_or(0)
    }

    /// Nodes from the root to the leaf that `r` reaches.
    pub fn path(&self, r: &MixedRecord) -> Vec<&TreeNode> {
        let d = self.schema.continuous_dim();
        let mut node = &self.root;
        let mut out = vec![node];
        while let (Some(s), Some((l, rt))) = (&node.split, node.children()) {
            node = if s.goes_left(r, d) { l } else { rt };
            out.push(node);
        }
        out
    }

    pub fn predict(&self, r: &MixedRecord) -> &TreeNode {
        self.path(r).pop().expect("path has the root")
    }

    /// Continuous threshold in original units.
    pub fn display_threshold(&self, feature: usize, threshold: f64) -> f64 {
        match &self.standardization {
            Some(s) => s.original_value(feature, threshold),
            None => threshold,
        }
    }
}

/// Weighted variance of the leaf clustering.
pub fn weighted_variance(tree: &SurrogateTree) -> f64 {
    tree.leaves()
        .iter()
        .map(|l| l.variance * l.count as f64)
        .sum::<f64>()
        / tree.total_count as f64
}

pub fn quality(tree: &SurrogateTree, lambda: f64) -> ComplexityMetrics {
    let leaves = tree.leaves();
    let wv = weighted_variance(tree);
    let nv_total: usize = leaves.iter().map(|l| l.num_vars).sum();
    ComplexityMetrics {
        wv,
        num_clusters: leaves.len(),
        nv_total,
        q: -wv - lambda * nv_total as f64,
        lambda,
    }
}

fn prune_node(node: &mut TreeNode, lambda: f64) {
    if node.is_leaf() {
        return;
    }
    if let (Some(l), Some(r)) = (node.left.as_deref_mut(), node.right.as_deref_mut()) {
        prune_node(l, lambda);
        prune_node(r, lambda);
    }
    let (l, r) = node.children().expect("internal node");
    let split_variance = node.split_variance().expect("internal node");
    let delta_e = split_variance - node.variance;
    let delta_nv = (l.num_vars + r.num_vars) as f64 - node.num_vars as f64;
    if -delta_e - lambda * delta_nv <= 0.0 {
        node.split = None;
        node.left = None;
        node.right = None;
    }
}

/// Bottom-up pruning: a node collapses into a leaf when
/// `-dE - lambda * dNV <= 0`.
pub fn prune(tree: &SurrogateTree, lambda: f64) -> SurrogateTree {
    let mut out = tree.clone();
    prune_node(&mut out.root, lambda);
    out
}

/// Mean and population variance, two-pass with a corrected mean.
fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mut mean = values.clone().sum::<f64>() / n;
    mean += values.clone().map(|v| v - mean).sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Candidate thresholds of one continuous feature: midpoints between
/// consecutive distinct values when there are at most `bins` of them,
/// otherwise `bins - 1` quantile cuts.
pub fn candidate_thresholds(values: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let mid = |a: f64, b: f64| a + (b - a) / 2.0;
    let mut out: Vec<f64> = if distinct.len() <= bins {
        distinct.windows(2).map(|w| mid(w[0], w[1])).collect()
    } else {
        let n = sorted.len();
        (1..bins)
            .filter_map(|q| {
                let p = q * n / bins;
                (p > 0 && p < n && sorted[p - 1] < sorted[p]).then(|| mid(sorted[p - 1], sorted[p]))
            })
            .collect()
    };
    out.dedup();
    out
}

struct Builder<'a> {
    ds: &'a Dataset,
    targets: Vec<f64>,
    cfg: TreeConfig,
    thresholds: Vec<Vec<f64>>,
    /// Per continuous feature, the bin of every row.
    bins: Vec<Vec<u16>>,
    next_id: usize,
}

#[derive(Clone, Debug)]
struct Candidate {
    sse: f64,
    split: Split,
}

#[derive(Clone, Copy, Default)]
struct Acc {
    n: usize,
    s: f64,
    s2: f64,
}

impl Acc {
    fn add(&mut self, v: f64) {
        self.n += 1;
        self.s += v;
        self.s2 += v * v;
    }

    fn merge(&mut self, o: &Acc) {
        self.n += o.n;
        self.s += o.s;
        self.s2 += o.s2;
    }

    fn minus(&self, o: &Acc) -> Acc {
        Acc {
            n: self.n - o.n,
            s: self.s - o.s,
            s2: self.s2 - o.s2,
        }
    }

    fn sse(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.s2 - self.s * self.s / self.n as f64).max(0.0)
        }
    }
}

impl Builder<'_> {
    fn best_continuous(&self, f: usize, rows: &[usize], centered: &[f64], total: &Acc) -> Option<Candidate> {
        let th = &self.thresholds[f];
        if th.is_empty() {
            return None;
        }
        let mut hist = vec![Acc::default(); th.len() + 1];
        for (&i, &v) in rows.iter().zip(centered) {
            hist[self.bins[f][i] as usize].add(v);
        }
        let mut left = Acc::default();
        let mut best: Option<Candidate> = None;
        for (k, t) in th.iter().enumerate() {
            left.merge(&hist[k]);
            let right = total.minus(&left);
            if left.n < self.cfg.min_leaf || right.n < self.cfg.min_leaf {
                continue;
            }
            let sse = left.sse() + right.sse();
            if best.as_ref().is_none_or(|b| sse < b.sse) {
                best = Some(Candidate {
                    sse,
                    split: Split {
                        feature: f,
                        kind: SplitKind::Continuous { threshold: *t },
                    },
                });
            }
        }
        best
    }

    fn best_categorical(&self, c: usize, rows: &[usize], centered: &[f64], total: &Acc) -> Option<Candidate> {
        let d = self.ds.schema.continuous_dim();
        let card = self.ds.schema.categorical[c].cardinality();
        let mut per_level = vec![Acc::default(); card];
        for (&i, &v) in rows.iter().zip(centered) {
            if let Some(l) = self.ds.records[i].levels[c] {
                per_level[l as usize].add(v);
            }
        }
        let mut present: Vec<u32> = (0..card as u32).filter(|&l| per_level[l as usize].n > 0).collect();
        present.sort_by(|&a, &b| {
            let ma = per_level[a as usize].s / per_level[a as usize].n as f64;
            let mb = per_level[b as usize].s / per_level[b as usize].n as f64;
            ma.total_cmp(&mb).then(a.cmp(&b))
        });
        let mut left = Acc::default();
        let mut best: Option<Candidate> = None;
        for k in 0..present.len() {
            left.merge(&per_level[present[k] as usize]);
            let right = total.minus(&left);
            if left.n < self.cfg.min_leaf || right.n < self.cfg.min_leaf {
                continue;
            }
            let sse = left.sse() + right.sse();
            if best.as_ref().is_none_or(|b| sse < b.sse) {
                let mut levels = present[..=k].to_vec();
                levels.sort_unstable();
                best = Some(Candidate {
                    sse,
                    split: Split {
                        feature: d + c,
                        kind: SplitKind::Categorical { left_levels: levels },
                    },
                });
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize) -> TreeNode {
        let id = self.next_id;
        self.next_id += 1;
        let (mean, variance) = moments(rows.iter().map(|&i| self.targets[i]));
        let mut node = TreeNode {
            id,
            count: rows.len(),
            mean,
            variance,
            num_vars: depth,
            split: None,
            left: None,
            right: None,
        };
        if depth >= self.cfg.l_max || variance == 0.0 || rows.len() < 2 * self.cfg.min_leaf {
            return node;
        }

        let centered: Vec<f64> = rows.iter().map(|&i| self.targets[i] - mean).collect();
        let mut total = Acc::default();
        for &v in &centered {
            total.add(v);
        }
        let node_sse: f64 = centered.iter().map(|v| v * v).sum();
        let d = self.ds.schema.continuous_dim();
        let n_feat = self.ds.schema.num_features();
        let this = &*self;
        let rows_ref = &*rows;
        let candidates: Vec<Option<Candidate>> = (0..n_feat)
            .into_par_iter()
            .map(|f| {
                if f < d {
                    this.best_continuous(f, rows_ref, &centered, &total)
                } else {
                    this.best_categorical(f - d, rows_ref, &centered, &total)
                }
            })
            .collect();
        let mut best: Option<Candidate> = None;
        for c in candidates.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| c.sse < b.sse) {
                best = Some(c);
            }
        }
        let Some(best) = best else { return node };
        // accept only a strict reduction, ignoring rounding noise
        if best.sse >= node_sse * (1.0 - 1e-12) {
            return node;
        }

        let split = best.split;
        let mut n_left = 0;
        for k in 0..rows.len() {
            if split.goes_left(&self.ds.records[rows[k]], d) {
                rows.swap(k, n_left);
                n_left += 1;
            }
        }
        let (l_rows, r_rows) = rows.split_at_mut(n_left);
        let left = self.grow(l_rows, depth + 1);
        let right = self.grow(r_rows, depth + 1);
        node.split = Some(split);
        node.left = Some(Box::new(left));
        node.right = Some(Box::new(right));
        node
    }
}

/// Greedy variance-reduction tree grown to depth `l_max`.
pub fn build_full_tree(
    ds: &Dataset,
    targets: &[EstimatorTarget],
    thresholds: Thresholds,
    cfg: &TreeConfig,
) -> Result<SurrogateTree> {
    cfg.validate()?;
    thresholds.validate()?;
    if ds.is_empty() {
        return Err(Error::InsufficientData("cannot grow a tree on an empty dataset".into()));
    }
    if targets.len() != ds.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.len(),
            actual: targets.len(),
        });
    }
    let mut y = vec![f64::NAN; ds.len()];
    for t in targets {
        if t.index >= ds.len() || !t.estimator.is_finite() {
            return Err(Error::invalid("targets", format!("bad target for record {}", t.index)));
        }
        y[t.index] = t.estimator;
    }
    if y.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("targets", "every record needs exactly one target"));
    }

    let d = ds.schema.continuous_dim();
    let columns: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|f| ds.records.iter().map(|r| r.x[f]).collect())
        .collect();
    let thresholds_per_feature: Vec<Vec<f64>> =
        columns.par_iter().map(|c| candidate_thresholds(c, cfg.bins)).collect();
    let bins: Vec<Vec<u16>> = columns
        .par_iter()
        .zip(&thresholds_per_feature)
        .map(|(c, th)| c.iter().map(|v| th.partition_point(|t| t < v) as u16).collect())
        .collect();

    let mut builder = Builder {
        ds,
        targets: y,
        cfg: *cfg,
        thresholds: thresholds_per_feature,
        bins,
        next_id: 0,
    };
    let mut rows: Vec<usize> = (0..ds.len()).collect();
    let root = builder.grow(&mut rows, 0);
    Ok(SurrogateTree {
        root,
        thresholds,
        config: *cfg,
        total_count: ds.len(),
        schema: ds.schema.clone(),
        standardization: ds.standardization.clone(),
    })
}

/// Mean squared residual of leaf-mean predictions.
pub fn tree_mse(tree: &SurrogateTree, ds: &Dataset, targets: &[EstimatorTarget]) -> f64 {
    let sum: f64 = targets
        .iter()
        .map(|t| {
            let p = tree.predict(&ds.records[t.index]).mean;
            (t.estimator - p) * (t.estimator - p)
        })
        .sum();
    sum / targets.len().max(1) as f64
}
