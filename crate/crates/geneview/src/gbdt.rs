//! Multi-class gradient boosting with second-order (Newton) leaf estimates.
//!
//! Each round fits one regression tree per class on the softmax cross-entropy
//! gradients g = p - y and hessians h = p(1 - p). Splits are exact greedy
//! over every (feature, threshold) candidate, scored by the regularized gain
//!
//! ```text
//! gain = 1/2 [ G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda) ] - gamma
//! ```
//!
//! and leaves carry the Newton weight -G/(H+lambda) scaled by the learning
//! rate. Absent sparse entries are treated as value 0.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, SparseVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    /// Boosting rounds K.
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_child_hessian: f64,
    pub reg_lambda: f64,
    pub reg_gamma: f64,
    pub row_subsample: f64,
    pub col_subsample: f64,
    pub class_count: usize,
    pub seed: u64,
    /// Stop when validation loss has not improved for this many rounds.
    pub early_stopping_patience: Option<usize>,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            rounds: 500,
            learning_rate: 0.05,
            max_depth: 6,
            min_child_hessian: 1e-3,
            reg_lambda: 1.0,
            reg_gamma: 0.0,
            row_subsample: 1.0,
            col_subsample: 1.0,
            class_count: crate::corpus::CLASS_COUNT,
            seed: 0,
            early_stopping_patience: None,
        }
    }
}

impl GbdtParams {
    fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Validation("rounds must be >= 1".into()));
        }
        if !(0.0 < self.learning_rate && self.learning_rate <= 1.0) {
            return Err(Error::Validation("learning_rate must be in (0, 1]".into()));
        }
        if self.reg_lambda < 0.0 || self.reg_gamma < 0.0 {
            return Err(Error::Validation("regularization must be >= 0".into()));
        }
        for (name, v) in [
            ("row_subsample", self.row_subsample),
            ("col_subsample", self.col_subsample),
        ] {
            if !(0.0 < v && v <= 1.0) {
                return Err(Error::Validation(format!("{name} must be in (0, 1]")));
            }
        }
        if self.class_count < 2 {
            return Err(Error::Validation("class_count must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Internal {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &SparseVector) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { weight } => return *weight,
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row.get(*feature) < *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbdtModel {
    pub params: GbdtParams,
    pub feature_dim: usize,
    /// Per-class log-prior offsets.
    pub base_score: Vec<f64>,
    /// rounds x classes.
    pub trees: Vec<Vec<Tree>>,
    /// Training multiclass log loss after each round.
    pub train_loss: Vec<f64>,
    /// Validation loss per round when a validation set was supplied.
    pub validation_loss: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct SplitCandidate {
    gain: f64,
    feature: u32,
    threshold: f64,
}

/// Per-node view: for every active feature, the node's nonzero entries in
/// ascending value order.
struct NodeData {
    /// Parallel to the tree's active feature list.
    columns: Vec<Vec<(f64, u32)>>,
    rows: Vec<u32>,
}

fn softmax_probs(scores: &[f64], m: usize, out: &mut [f64]) {
    for (row_scores, row_out) in scores.chunks_exact(m).zip(out.chunks_exact_mut(m)) {
        let max = row_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &s) in row_out.iter_mut().zip(row_scores) {
            *o = (s - max).exp();
            sum += *o;
        }
        for o in row_out.iter_mut() {
            *o /= sum;
        }
    }
}

fn multiclass_log_loss(probs: &[f64], labels: &[u8], m: usize) -> f64 {
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let p = probs[i * m + (label as usize - 1)].max(1e-15);
        total -= p.ln();
    }
    total / labels.len() as f64
}

/// Train a boosted multi-class model.
pub fn train(
    matrix: &FeatureMatrix,
    labels: &[u8],
    params: &GbdtParams,
    validation: Option<(&FeatureMatrix, &[u8])>,
) -> Result<GbdtModel> {
    params.validate()?;
    let n = matrix.n_rows();
    let m = params.class_count;
    if n == 0 {
        return Err(Error::Validation("empty training matrix".into()));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    for &l in labels {
        if l == 0 || l as usize > m {
            return Err(Error::Validation(format!("label {l} outside 1..={m}")));
        }
    }
    if let Some((val, val_labels)) = validation {
        if val.dim != matrix.dim {
            return Err(Error::ShapeMismatch(format!(
                "validation dim {} != train dim {}",
                val.dim, matrix.dim
            )));
        }
        if val.n_rows() != val_labels.len() {
            return Err(Error::ShapeMismatch("validation labels/rows disagree".into()));
        }
    }

    // Columnar layout: per feature, (value, row) sorted ascending by value.
    let mut columns: Vec<Vec<(f64, u32)>> = vec![Vec::new(); matrix.dim];
    for (i, row) in matrix.rows().iter().enumerate() {
        for &(c, v) in row.entries() {
            columns[c as usize].push((v, i as u32));
        }
    }
    for col in &mut columns {
        col.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    }

    // Per-class log priors as the base score.
    let mut class_counts = vec![0usize; m];
    for &l in labels {
        class_counts[l as usize - 1] += 1;
    }
    let base_score: Vec<f64> = class_counts
        .iter()
        .map(|&c| ((c as f64 / n as f64).max(1e-12)).ln())
        .collect();

    let mut scores = vec![0.0f64; n * m];
    for row in scores.chunks_exact_mut(m) {
        row.copy_from_slice(&base_score);
    }
    let mut val_scores: Vec<f64> = validation
        .map(|(val, _)| {
            let mut s = vec![0.0f64; val.n_rows() * m];
            for row in s.chunks_exact_mut(m) {
                row.copy_from_slice(&base_score);
            }
            s
        })
        .unwrap_or_default();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut probs = vec![0.0f64; n * m];
    let mut trees: Vec<Vec<Tree>> = Vec::new();
    let mut train_loss = Vec::new();
    let mut validation_loss = Vec::new();
    let mut best_round = 0usize;
    let mut best_val = f64::INFINITY;

    let all_rows: Vec<u32> = (0..n as u32).collect();
    let all_features: Vec<u32> = (0..matrix.dim as u32).collect();

    for round in 0..params.rounds {
        softmax_probs(&scores, m, &mut probs);

        // Subsampling draws happen per round, before the class loop, so the
        // stream of RNG calls does not depend on per-class outcomes.
        let round_rows: Vec<u32> = if params.row_subsample < 1.0 {
            let target = ((n as f64 * params.row_subsample).round() as usize).clamp(1, n);
            let mut rows = all_rows.clone();
            rows.shuffle(&mut rng);
            rows.truncate(target);
            rows.sort_unstable();
            rows
        } else {
            all_rows.clone()
        };
        let round_features: Vec<u32> = if params.col_subsample < 1.0 {
            let target =
                ((matrix.dim as f64 * params.col_subsample).round() as usize).clamp(1, matrix.dim);
            let mut feats = all_features.clone();
            feats.shuffle(&mut rng);
            feats.truncate(target);
            feats.sort_unstable();
            feats
        } else {
            all_features.clone()
        };

        let mut round_trees = Vec::with_capacity(m);
        for class in 0..m {
            let mut g = vec![0.0f64; n];
            let mut h = vec![0.0f64; n];
            for i in 0..n {
                let p = probs[i * m + class];
                let y = if labels[i] as usize - 1 == class { 1.0 } else { 0.0 };
                g[i] = p - y;
                h[i] = p * (1.0 - p);
            }
            let node_columns: Vec<Vec<(f64, u32)>> = round_features
                .iter()
                .map(|&f| {
                    if params.row_subsample < 1.0 {
                        columns[f as usize]
                            .iter()
                            .filter(|&&(_, r)| round_rows.binary_search(&r).is_ok())
                            .copied()
                            .collect()
                    } else {
                        columns[f as usize].clone()
                    }
                })
                .collect();
            let mut builder = TreeBuilder {
                g: &g,
                h: &h,
                features: &round_features,
                params,
                nodes: Vec::new(),
            };
            let root = NodeData {
                columns: node_columns,
                rows: round_rows.clone(),
            };
            builder.build(root, 0);
            let tree = Tree {
                nodes: builder.nodes,
            };
            for (i, row) in matrix.rows().iter().enumerate() {
                scores[i * m + class] += tree.predict(row);
            }
            if let Some((val, _)) = validation {
                for (i, row) in val.rows().iter().enumerate() {
                    val_scores[i * m + class] += tree.predict(row);
                }
            }
            round_trees.push(tree);
        }
        trees.push(round_trees);

        softmax_probs(&scores, m, &mut probs);
        train_loss.push(multiclass_log_loss(&probs, labels, m));

        if let Some((val, val_labels)) = validation {
            let mut val_probs = vec![0.0f64; val.n_rows() * m];
            softmax_probs(&val_scores, m, &mut val_probs);
            let loss = multiclass_log_loss(&val_probs, val_labels, m);
            validation_loss.push(loss);
            if loss < best_val {
                best_val = loss;
                best_round = round;
            }
            if let Some(patience) = params.early_stopping_patience {
                if round - best_round >= patience {
                    break;
                }
            }
        }
    }

    // With early stopping, keep only the rounds up to the best one.
    if validation.is_some() && params.early_stopping_patience.is_some() {
        trees.truncate(best_round + 1);
        train_loss.truncate(best_round + 1);
        validation_loss.truncate(best_round + 1);
    }

    Ok(GbdtModel {
        params: params.clone(),
        feature_dim: matrix.dim,
        base_score,
        trees,
        train_loss,
        validation_loss,
    })
}

struct TreeBuilder<'a> {
    g: &'a [f64],
    h: &'a [f64],
    /// Active (possibly subsampled) feature ids, ascending.
    features: &'a [u32],
    params: &'a GbdtParams,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    /// Returns the index of the created node. Nodes are pushed in preorder.
    fn build(&mut self, data: NodeData, depth: usize) -> u32 {
        let idx = self.nodes.len() as u32;
        let g_total: f64 = data.rows.iter().map(|&r| self.g[r as usize]).sum();
        let h_total: f64 = data.rows.iter().map(|&r| self.h[r as usize]).sum();

        let leaf_weight = -g_total / (h_total + self.params.reg_lambda)
            * self.params.learning_rate;
        if depth >= self.params.max_depth || data.rows.len() < 2 {
            self.nodes.push(Node::Leaf {
                weight: leaf_weight,
            });
            return idx;
        }

        let best = self.best_split(&data, g_total, h_total);
        let Some(split) = best else {
            self.nodes.push(Node::Leaf {
                weight: leaf_weight,
            });
            return idx;
        };

        // Partition rows and per-feature columns; order is preserved.
        let feature_slot = self
            .features
            .binary_search(&split.feature)
            .expect("split feature is active");
        // Row -> value lookup for the split feature; absent rows sit at 0.
        let mut split_value: std::collections::HashMap<u32, f64> = std::collections::HashMap::new();
        for &(v, r) in &data.columns[feature_slot] {
            split_value.insert(r, v);
        }
        let mut left_rows = Vec::new();
        let mut right_rows = Vec::new();
        let mut is_left = std::collections::HashSet::new();
        for &r in &data.rows {
            let v = split_value.get(&r).copied().unwrap_or(0.0);
            if v < split.threshold {
                left_rows.push(r);
                is_left.insert(r);
            } else {
                right_rows.push(r);
            }
        }
        let mut left_columns = Vec::with_capacity(data.columns.len());
        let mut right_columns = Vec::with_capacity(data.columns.len());
        for col in data.columns {
            let mut l = Vec::new();
            let mut r = Vec::new();
            for entry in col {
                if is_left.contains(&entry.1) {
                    l.push(entry);
                } else {
                    r.push(entry);
                }
            }
            left_columns.push(l);
            right_columns.push(r);
        }

        self.nodes.push(Node::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let left = self.build(
            NodeData {
                columns: left_columns,
                rows: left_rows,
            },
            depth + 1,
        );
        let right = self.build(
            NodeData {
                columns: right_columns,
                rows: right_rows,
            },
            depth + 1,
        );
        if let Node::Internal {
            left: l, right: r, ..
        } = &mut self.nodes[idx as usize]
        {
            *l = left;
            *r = right;
        }
        idx
    }

    fn best_split(&self, data: &NodeData, g_total: f64, h_total: f64) -> Option<SplitCandidate> {
        let lambda = self.params.reg_lambda;
        let parent_term = g_total * g_total / (h_total + lambda);
        let mut best: Option<SplitCandidate> = None;
        for (slot, &feature) in self.features.iter().enumerate() {
            let col = &data.columns[slot];
            if col.is_empty() && data.rows.len() < 2 {
                continue;
            }
            // Group by distinct value, splicing in the implicit zero group.
            let mut g_nz = 0.0;
            let mut h_nz = 0.0;
            let mut groups: Vec<(f64, f64, f64, usize)> = Vec::new();
            let mut i = 0;
            while i < col.len() {
                let v = col[i].0;
                let mut g_sum = 0.0;
                let mut h_sum = 0.0;
                let mut count = 0;
                while i < col.len() && col[i].0 == v {
                    let r = col[i].1 as usize;
                    g_sum += self.g[r];
                    h_sum += self.h[r];
                    count += 1;
                    i += 1;
                }
                g_nz += g_sum;
                h_nz += h_sum;
                groups.push((v, g_sum, h_sum, count));
            }
            let n_zero = data.rows.len() - col.len();
            if n_zero > 0 {
                let zero_group = (0.0, g_total - g_nz, h_total - h_nz, n_zero);
                let pos = groups.partition_point(|&(v, _, _, _)| v < 0.0);
                groups.insert(pos, zero_group);
            }
            if groups.len() < 2 {
                continue;
            }
            let mut g_left = 0.0;
            let mut h_left = 0.0;
            for w in 0..groups.len() - 1 {
                let (v, g_sum, h_sum, _) = groups[w];
                g_left += g_sum;
                h_left += h_sum;
                let g_right = g_total - g_left;
                let h_right = h_total - h_left;
                if h_left < self.params.min_child_hessian
                    || h_right < self.params.min_child_hessian
                {
                    continue;
                }
                let threshold = (v + groups[w + 1].0) / 2.0;
                let gain = 0.5
                    * (g_left * g_left / (h_left + lambda)
                        + g_right * g_right / (h_right + lambda)
                        - parent_term)
                    - self.params.reg_gamma;
                if gain <= 0.0 {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some(b) => {
                        gain > b.gain
                            || (gain == b.gain
                                && (feature < b.feature
                                    || (feature == b.feature && threshold < b.threshold)))
                    }
                };
                if better {
                    best = Some(SplitCandidate {
                        gain,
                        feature,
                        threshold,
                    });
                }
            }
        }
        best
    }
}

/// Softmax probabilities for every row; each row sums to 1.
pub fn predict_proba(model: &GbdtModel, matrix: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
    if matrix.dim != model.feature_dim {
        return Err(Error::ShapeMismatch(format!(
            "feature dimension {} != model dimension {}",
            matrix.dim, model.feature_dim
        )));
    }
    let m = model.params.class_count;
    let mut out = Vec::with_capacity(matrix.n_rows());
    for row in matrix.rows() {
        let mut scores = model.base_score.clone();
        for round in &model.trees {
            for (class, tree) in round.iter().enumerate() {
                scores[class] += tree.predict(row);
            }
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        debug_assert_eq!(probs.len(), m);
        out.push(probs);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Serialization: `GB01` magic, little-endian, trailing SHA-256 checksum.
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"GB01";

pub fn save(model: &GbdtModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let p = &model.params;
    buf.extend_from_slice(&(p.rounds as u64).to_le_bytes());
    buf.extend_from_slice(&p.learning_rate.to_le_bytes());
    buf.extend_from_slice(&(p.max_depth as u64).to_le_bytes());
    buf.extend_from_slice(&p.min_child_hessian.to_le_bytes());
    buf.extend_from_slice(&p.reg_lambda.to_le_bytes());
    buf.extend_from_slice(&p.reg_gamma.to_le_bytes());
    buf.extend_from_slice(&p.row_subsample.to_le_bytes());
    buf.extend_from_slice(&p.col_subsample.to_le_bytes());
    buf.extend_from_slice(&(p.class_count as u64).to_le_bytes());
    buf.extend_from_slice(&p.seed.to_le_bytes());
    buf.extend_from_slice(&(model.feature_dim as u64).to_le_bytes());
    for b in &model.base_score {
        buf.extend_from_slice(&b.to_le_bytes());
    }
    buf.extend_from_slice(&(model.trees.len() as u64).to_le_bytes());
    for round in &model.trees {
        for tree in round {
            buf.extend_from_slice(&(tree.nodes.len() as u64).to_le_bytes());
            for node in &tree.nodes {
                match node {
                    Node::Internal {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        buf.push(0);
                        buf.extend_from_slice(&feature.to_le_bytes());
                        buf.extend_from_slice(&threshold.to_le_bytes());
                        buf.extend_from_slice(&left.to_le_bytes());
                        buf.extend_from_slice(&right.to_le_bytes());
                    }
                    Node::Leaf { weight } => {
                        buf.push(1);
                        buf.extend_from_slice(&weight.to_le_bytes());
                    }
                }
            }
        }
    }
    let digest = sha2::Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<GbdtModel> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: &str| Error::ModelFormat {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if data.len() < 36 {
        return Err(bad("file too short"));
    }
    let (body, checksum) = data.split_at(data.len() - 32);
    let digest = sha2::Sha256::digest(body);
    if digest.as_slice() != checksum {
        return Err(bad("checksum mismatch (truncated or corrupted file)"));
    }
    let mut r = ByteReader { data: body, pos: 0 };
    if r.take(4).ok_or_else(|| bad("truncated magic"))? != MAGIC {
        return Err(bad("bad magic, expected GB01"));
    }
    let rounds = r.u64().ok_or_else(|| bad("truncated params"))? as usize;
    let learning_rate = r.f64().ok_or_else(|| bad("truncated params"))?;
    let max_depth = r.u64().ok_or_else(|| bad("truncated params"))? as usize;
    let min_child_hessian = r.f64().ok_or_else(|| bad("truncated params"))?;
    let reg_lambda = r.f64().ok_or_else(|| bad("truncated params"))?;
    let reg_gamma = r.f64().ok_or_else(|| bad("truncated params"))?;
    let row_subsample = r.f64().ok_or_else(|| bad("truncated params"))?;
    let col_subsample = r.f64().ok_or_else(|| bad("truncated params"))?;
    let class_count = r.u64().ok_or_else(|| bad("truncated params"))? as usize;
    let seed = r.u64().ok_or_else(|| bad("truncated params"))?;
    let feature_dim = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
    let mut base_score = Vec::with_capacity(class_count);
    for _ in 0..class_count {
        base_score.push(r.f64().ok_or_else(|| bad("truncated base scores"))?);
    }
    let stored_rounds = r.u64().ok_or_else(|| bad("truncated tree count"))? as usize;
    let mut trees = Vec::with_capacity(stored_rounds);
    for _ in 0..stored_rounds {
        let mut round = Vec::with_capacity(class_count);
        for _ in 0..class_count {
            let n_nodes = r.u64().ok_or_else(|| bad("truncated tree"))? as usize;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                match r.u8().ok_or_else(|| bad("truncated node"))? {
                    0 => {
                        let feature = r.u32().ok_or_else(|| bad("truncated node"))?;
                        let threshold = r.f64().ok_or_else(|| bad("truncated node"))?;
                        let left = r.u32().ok_or_else(|| bad("truncated node"))?;
                        let right = r.u32().ok_or_else(|| bad("truncated node"))?;
                        nodes.push(Node::Internal {
                            feature,
                            threshold,
                            left,
                            right,
                        });
                    }
                    1 => {
                        let weight = r.f64().ok_or_else(|| bad("truncated node"))?;
                        nodes.push(Node::Leaf { weight });
                    }
                    _ => return Err(bad("unknown node tag")),
                }
            }
            round.push(Tree { nodes });
        }
        trees.push(round);
    }

    Ok(GbdtModel {
        params: GbdtParams {
            rounds,
            learning_rate,
            max_depth,
            min_child_hessian,
            reg_lambda,
            reg_gamma,
            row_subsample,
            col_subsample,
            class_count,
            seed,
            early_stopping_patience: None,
        },
        feature_dim,
        base_score,
        trees,
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
    })
}

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return None;
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|s| s[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|s| u64::from_le_bytes(s.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|s| f64::from_le_bytes(s.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix_from_dense(data: &[Vec<f64>]) -> FeatureMatrix {
        let dim = data[0].len();
        let rows = data
            .iter()
            .map(|r| {
                SparseVector::from_entries(
                    "x",
                    dim,
                    r.iter().enumerate().map(|(c, &v)| (c as u32, v)).collect(),
                )
                .unwrap()
            })
            .collect();
        FeatureMatrix::from_rows(rows).unwrap()
    }

    fn two_class_params(rounds: usize, depth: usize, lr: f64, lambda: f64) -> GbdtParams {
        GbdtParams {
            rounds,
            learning_rate: lr,
            max_depth: depth,
            min_child_hessian: 0.0,
            reg_lambda: lambda,
            reg_gamma: 0.0,
            class_count: 2,
            ..GbdtParams::default()
        }
    }

    #[test]
    fn all_one_class_predicts_that_class() {
        let matrix = matrix_from_dense(&[
            vec![0.5, 1.0],
            vec![1.5, 0.0],
            vec![2.5, 1.0],
            vec![3.5, 0.2],
        ]);
        let labels = vec![3, 3, 3, 3];
        let params = GbdtParams {
            rounds: 2,
            class_count: 9,
            ..GbdtParams::default()
        };
        let model = train(&matrix, &labels, &params, None).unwrap();
        let probs = predict_proba(&model, &matrix).unwrap();
        for row in probs {
            assert!(row[2] > 0.9, "p3 = {}", row[2]);
        }
    }

    /// Closed-form single-stump oracle on a 4-row, 1-feature fixture.
    #[test]
    fn single_stump_matches_newton_oracle() {
        let matrix = matrix_from_dense(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        let labels = vec![1, 1, 2, 2];
        let eta = 0.5;
        let params = two_class_params(1, 1, eta, 0.0);
        let model = train(&matrix, &labels, &params, None).unwrap();

        // Oracle: base = ln(1/2) both classes, p = 1/2 everywhere.
        // Class 1: g = (-1/2,-1/2,1/2,1/2), h = 1/4 each. Best split at
        // threshold 2.5: G_L=-1, H_L=1/2 -> left leaf -G/H * eta = 2*eta;
        // right leaf -2*eta. Class 2 mirrors.
        let t0 = &model.trees[0][0];
        match &t0.nodes()[0] {
            Node::Internal {
                feature, threshold, ..
            } => {
                assert_eq!(*feature, 0);
                assert!((threshold - 2.5).abs() < 1e-10);
            }
            other => panic!("expected a split, got {other:?}"),
        }
        let left0 = t0.predict(&SparseVector::from_entries("x", 1, vec![(0, 1.0)]).unwrap());
        let right0 = t0.predict(&SparseVector::from_entries("x", 1, vec![(0, 4.0)]).unwrap());
        assert!((left0 - 2.0 * eta).abs() < 1e-10, "left {left0}");
        assert!((right0 + 2.0 * eta).abs() < 1e-10, "right {right0}");

        // Probabilities through softmax: row 0 has scores ln(1/2) +- 1.
        let probs = predict_proba(&model, &matrix).unwrap();
        let want = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((probs[0][0] - want).abs() < 1e-10);
        assert!((probs[3][1] - want).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // g = p - y is checked against central differences of the loss; the
        // hessian h = p(1-p) against central differences of the (verified)
        // gradient, which keeps the probe inside f64 roundoff limits.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 9;
        let eps = 1e-5;
        let prob = |s: &[f64], j: usize| -> f64 {
            let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = s.iter().map(|&x| (x - max).exp()).sum();
            (s[j] - max).exp() / sum
        };
        for _ in 0..100 {
            let scores: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let label = rng.gen_range(0..m);
            let loss = |s: &[f64]| -> f64 { -prob(s, label).ln() };
            let grad = |s: &[f64], j: usize| -> f64 {
                let y = if j == label { 1.0 } else { 0.0 };
                prob(s, j) - y
            };
            for j in 0..m {
                let p = prob(&scores, j);
                let y = if j == label { 1.0 } else { 0.0 };
                let g_analytic = p - y;
                let h_analytic = p * (1.0 - p);

                let mut plus = scores.clone();
                plus[j] += eps;
                let mut minus = scores.clone();
                minus[j] -= eps;
                let g_numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let h_numeric = (grad(&plus, j) - grad(&minus, j)) / (2.0 * eps);
                assert!(
                    (g_analytic - g_numeric).abs() / g_numeric.abs().max(1e-3) < 1e-6,
                    "gradient {g_analytic} vs {g_numeric}"
                );
                assert!(
                    (h_analytic - h_numeric).abs() / h_numeric.abs().max(1e-3) < 1e-6,
                    "hessian {h_analytic} vs {h_numeric}"
                );
            }
        }
    }

    #[test]
    fn training_loss_is_monotone_without_subsampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                let base = (i % 3) as f64;
                vec![
                    base + rng.gen::<f64>() * 0.5,
                    rng.gen::<f64>(),
                    base * 2.0 + rng.gen::<f64>(),
                ]
            })
            .collect();
        let labels: Vec<u8> = (0..60).map(|i| (i % 3 + 1) as u8).collect();
        let params = GbdtParams {
            rounds: 40,
            learning_rate: 0.1,
            max_depth: 3,
            min_child_hessian: 0.0,
            class_count: 3,
            ..GbdtParams::default()
        };
        let model = train(&matrix_from_dense(&data), &labels, &params, None).unwrap();
        for w in model.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss rose {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn chosen_split_beats_brute_force_enumeration() {
        // On small fixtures the chosen root split must match the best of all
        // (feature, threshold) candidates scored by the same gain formula.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = 30;
            let data: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..5).map(|_| (rng.gen::<f64>() * 4.0).round()).collect())
                .collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
            let params = GbdtParams {
                rounds: 1,
                learning_rate: 1.0,
                max_depth: 1,
                min_child_hessian: 0.0,
                reg_lambda: 0.7,
                reg_gamma: 0.0,
                class_count: 3,
                ..GbdtParams::default()
            };
            let matrix = matrix_from_dense(&data);
            let model = train(&matrix, &labels, &params, None).unwrap();

            // Brute force for class 0.
            let m = 3usize;
            let p = 1.0 / 3.0; // uniform labels? priors vary; recompute
            let _ = p;
            let mut counts = [0usize; 3];
            for &l in &labels {
                counts[l as usize - 1] += 1;
            }
            let base: Vec<f64> = counts
                .iter()
                .map(|&c| ((c as f64 / n as f64).max(1e-12)).ln())
                .collect();
            let max = base.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = base.iter().map(|&b| (b - max).exp()).sum();
            let probs: Vec<f64> = base.iter().map(|&b| (b - max).exp() / sum).collect();
            let g: Vec<f64> = (0..n)
                .map(|i| probs[0] - if labels[i] == 1 { 1.0 } else { 0.0 })
                .collect();
            let h: Vec<f64> = (0..n).map(|_| probs[0] * (1.0 - probs[0])).collect();
            let g_total: f64 = g.iter().sum();
            let h_total: f64 = h.iter().sum();
            let parent = g_total * g_total / (h_total + 0.7);
            let mut best_gain = f64::NEG_INFINITY;
            for f in 0..5 {
                let mut values: Vec<f64> = data.iter().map(|r| r[f]).collect();
                values.sort_by(|a, b| a.partial_cmp(b).unwrap());
                values.dedup();
                for w in values.windows(2) {
                    let t = (w[0] + w[1]) / 2.0;
                    let (mut gl, mut hl) = (0.0, 0.0);
                    for i in 0..n {
                        if data[i][f] < t {
                            gl += g[i];
                            hl += h[i];
                        }
                    }
                    let gr = g_total - gl;
                    let hr = h_total - hl;
                    let gain =
                        0.5 * (gl * gl / (hl + 0.7) + gr * gr / (hr + 0.7) - parent);
                    best_gain = best_gain.max(gain);
                }
            }
            let tree = &model.trees[0][0];
            if let Node::Internal {
                feature, threshold, ..
            } = &tree.nodes()[0]
            {
                // Recompute the gain of the chosen split; must equal best.
                let (mut gl, mut hl) = (0.0, 0.0);
                for i in 0..n {
                    if data[i][*feature as usize] < *threshold {
                        gl += g[i];
                        hl += h[i];
                    }
                }
                let gr = g_total - gl;
                let hr = h_total - hl;
                let gain = 0.5 * (gl * gl / (hl + 0.7) + gr * gr / (hr + 0.7) - parent);
                assert!(
                    (gain - best_gain).abs() < 1e-9,
                    "chosen gain {gain} vs brute force {best_gain}"
                );
            } else if best_gain > 1e-9 {
                panic!("no split chosen but positive gain {best_gain} exists");
            }
            let _ = m;
        }
    }

    #[test]
    fn identical_rows_get_identical_predictions() {
        let matrix = matrix_from_dense(&[
            vec![1.0, 2.0],
            vec![1.0, 2.0],
            vec![3.0, 1.0],
            vec![3.0, 1.0],
        ]);
        let labels = vec![1, 1, 2, 2];
        let model = train(&matrix, &labels, &two_class_params(5, 2, 0.3, 1.0), None).unwrap();
        let probs = predict_proba(&model, &matrix).unwrap();
        assert_eq!(probs[0], probs[1]);
        assert_eq!(probs[2], probs[3]);
    }

    #[test]
    fn zero_round_equivalent_base_predicts_priors() {
        // Uniform priors: softmax of equal base scores gives 1/M per class.
        let rows: Vec<Vec<f64>> = (0..9).map(|_| vec![0.0; 3]).collect();
        let matrix = matrix_from_dense(&rows);
        let labels: Vec<u8> = (1..=9).collect();
        let params = GbdtParams {
            rounds: 1,
            learning_rate: 0.1,
            max_depth: 1,
            reg_gamma: 1e6, // no split clears this bar
            class_count: 9,
            ..GbdtParams::default()
        };
        let model = train(&matrix, &labels, &params, None).unwrap();
        let probs = predict_proba(&model, &matrix).unwrap();
        for row in probs {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for p in row {
                assert!((p - 1.0 / 9.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..6).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let labels: Vec<u8> = (0..40).map(|_| rng.gen_range(1..=4)).collect();
        let params = GbdtParams {
            rounds: 10,
            class_count: 4,
            ..GbdtParams::default()
        };
        let matrix = matrix_from_dense(&data);
        let model = train(&matrix, &labels, &params, None).unwrap();
        for row in predict_proba(&model, &matrix).unwrap() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let matrix = matrix_from_dense(&[vec![1.0], vec![2.0]]);
        assert!(train(&matrix, &[1, 5], &two_class_params(1, 1, 0.1, 1.0), None).is_err());
    }

    #[test]
    fn training_is_bit_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..4).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let labels: Vec<u8> = (0..50).map(|_| rng.gen_range(1..=3)).collect();
        let params = GbdtParams {
            rounds: 8,
            class_count: 3,
            row_subsample: 0.8,
            col_subsample: 0.75,
            seed: 99,
            ..GbdtParams::default()
        };
        let matrix = matrix_from_dense(&data);
        let a = train(&matrix, &labels, &params, None).unwrap();
        let b = train(&matrix, &labels, &params, None).unwrap();
        assert_eq!(a.trees, b.trees);
    }

    #[test]
    fn early_stopping_truncates_to_best_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        // Noise labels: validation loss should stop improving quickly.
        let data: Vec<Vec<f64>> = (0..80)
            .map(|_| (0..5).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let labels: Vec<u8> = (0..80).map(|_| rng.gen_range(1..=3)).collect();
        let matrix = matrix_from_dense(&data);
        let val_data: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..5).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let val_labels: Vec<u8> = (0..30).map(|_| rng.gen_range(1..=3)).collect();
        let val = matrix_from_dense(&val_data);
        let params = GbdtParams {
            rounds: 100,
            learning_rate: 0.3,
            max_depth: 4,
            class_count: 3,
            early_stopping_patience: Some(5),
            ..GbdtParams::default()
        };
        let model = train(&matrix, &labels, &params, Some((&val, &val_labels))).unwrap();
        assert!(model.trees.len() < 100, "stopped at {}", model.trees.len());
        let best = model
            .validation_loss
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(model.validation_loss.last().copied().unwrap(), best);
    }

    #[test]
    fn save_load_round_trips_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let labels: Vec<u8> = (0..30).map(|_| rng.gen_range(1..=3)).collect();
        let params = GbdtParams {
            rounds: 6,
            class_count: 3,
            ..GbdtParams::default()
        };
        let matrix = matrix_from_dense(&data);
        let model = train(&matrix, &labels, &params, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gb");
        save(&model, &path).unwrap();
        let back = load(&path).unwrap();
        let a = predict_proba(&model, &matrix).unwrap();
        let b = predict_proba(&back, &matrix).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_model_file_fails_checksum() {
        let matrix = matrix_from_dense(&[vec![1.0], vec![0.0]]);
        let model = train(&matrix, &[1, 2], &two_class_params(1, 1, 0.1, 1.0), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gb");
        save(&model, &path).unwrap();
        let data = std::fs::read(&path).unwrap();
        std::fs::write(&path, &data[..data.len() - 7]).unwrap();
        assert!(matches!(load(&path), Err(Error::ModelFormat { .. })));
    }

    #[test]
    fn model_file_is_endianness_pinned() {
        // Byte-level check of the header: magic then little-endian rounds.
        let matrix = matrix_from_dense(&[vec![1.0], vec![0.0]]);
        let params = GbdtParams {
            rounds: 3,
            class_count: 2,
            reg_gamma: 1e9,
            ..GbdtParams::default()
        };
        let model = train(&matrix, &[1, 2], &params, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gb");
        save(&model, &path).unwrap();
        let data = std::fs::read(&path).unwrap();
        assert_eq!(&data[0..4], b"GB01");
        assert_eq!(u64::from_le_bytes(data[4..12].try_into().unwrap()), 3);
    }
}
