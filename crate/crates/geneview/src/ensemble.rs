//! Model blending: convex combinations of per-model probability matrices,
//! with weights found by exhaustive grid search (2-3 models), simplex
//! log-loss minimization, or independent per-class minimization for
//! imbalanced data.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight floor standing in for the open constraint alpha > 0.
pub const WEIGHT_FLOOR: f64 = 1e-6;
const CLIP: f64 = 1e-15;

/// Per-model probability matrices over the same samples.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub model_ids: Vec<String>,
    /// model -> N x M rows.
    pub predictions: Vec<Vec<Vec<f64>>>,
    /// Present for validation sets; required by the optimizers.
    pub labels: Option<Vec<u8>>,
}

impl PredictionSet {
    pub fn new(
        model_ids: Vec<String>,
        predictions: Vec<Vec<Vec<f64>>>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        if model_ids.len() != predictions.len() || predictions.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids for {} prediction matrices",
                model_ids.len(),
                predictions.len()
            )));
        }
        let n = predictions[0].len();
        let m = predictions[0].first().map_or(0, |r| r.len());
        if n == 0 || m == 0 {
            return Err(Error::Validation("empty prediction matrix".into()));
        }
        for (id, matrix) in model_ids.iter().zip(&predictions) {
            if matrix.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "model {id}: {} rows, expected {n}",
                    matrix.len()
                )));
            }
            for (i, row) in matrix.iter().enumerate() {
                if row.len() != m {
                    return Err(Error::ShapeMismatch(format!(
                        "model {id} row {i}: {} classes, expected {m}",
                        row.len()
                    )));
                }
                let mut sum = 0.0;
                for &p in row {
                    if !p.is_finite() {
                        return Err(Error::Validation(format!(
                            "model {id} row {i} has a non-finite probability"
                        )));
                    }
                    if p < 0.0 {
                        return Err(Error::Validation(format!(
                            "model {id} row {i} has a negative probability"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::Validation(format!(
                        "model {id} row {i} sums to {sum}, not 1"
                    )));
                }
            }
        }
        if let Some(labels) = &labels {
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
        }
        Ok(PredictionSet {
            model_ids,
            predictions,
            labels,
        })
    }

    pub fn n_models(&self) -> usize {
        self.predictions.len()
    }

    pub fn n_samples(&self) -> usize {
        self.predictions[0].len()
    }

    pub fn n_classes(&self) -> usize {
        self.predictions[0][0].len()
    }

    /// True-class probability per model per sample.
    fn true_probs(&self) -> Result<Vec<Vec<f64>>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Validation("weight fitting needs labeled predictions".into()))?;
        Ok(self
            .predictions
            .iter()
            .map(|matrix| {
                matrix
                    .iter()
                    .zip(labels)
                    .map(|(row, &y)| row[y as usize - 1])
                    .collect()
            })
            .collect())
    }
}

/// Blending weights on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EnsembleWeights {
    Global {
        model_ids: Vec<String>,
        weights: Vec<f64>,
    },
    /// weights[model][class]; each class's column sums to 1.
    PerClass {
        model_ids: Vec<String>,
        weights: Vec<Vec<f64>>,
    },
}

impl EnsembleWeights {
    pub fn model_ids(&self) -> &[String] {
        match self {
            EnsembleWeights::Global { model_ids, .. } => model_ids,
            EnsembleWeights::PerClass { model_ids, .. } => model_ids,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnsembleWeights::Global { weights, model_ids } => {
                if weights.len() != model_ids.len() {
                    return Err(Error::ShapeMismatch("weights/ids disagree".into()));
                }
                if weights.iter().any(|&w| w <= 0.0) {
                    return Err(Error::Validation("weights must be positive".into()));
                }
                let sum: f64 = weights.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Validation(format!("weights sum to {sum}, not 1")));
                }
            }
            EnsembleWeights::PerClass { weights, model_ids } => {
                if weights.len() != model_ids.len() {
                    return Err(Error::ShapeMismatch("weights/ids disagree".into()));
                }
                let classes = weights.first().map_or(0, |w| w.len());
                for j in 0..classes {
                    let sum: f64 = weights.iter().map(|w| w[j]).sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::Validation(format!(
                            "class {} weights sum to {sum}, not 1",
                            j + 1
                        )));
                    }
                }
                if weights.iter().flatten().any(|&w| w <= 0.0) {
                    return Err(Error::Validation("weights must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// Combine prediction matrices. Global weights give a convex combination of
/// rows (already normalized); per-class weights mix each column with its own
/// weights, then renormalize rows so the output stays a distribution.
pub fn blend(set: &PredictionSet, weights: &EnsembleWeights) -> Result<Vec<Vec<f64>>> {
    weights.validate()?;
    if weights.model_ids() != set.model_ids {
        return Err(Error::Validation(format!(
            "weight model ids {:?} do not match prediction set {:?}",
            weights.model_ids(),
            set.model_ids
        )));
    }
    let n = set.n_samples();
    let m = set.n_classes();
    let mut out = vec![vec![0.0f64; m]; n];
    match weights {
        EnsembleWeights::Global { weights, .. } => {
            for (c, matrix) in set.predictions.iter().enumerate() {
                let alpha = weights[c];
                for (o, row) in out.iter_mut().zip(matrix) {
                    for (ov, &p) in o.iter_mut().zip(row) {
                        *ov += alpha * p;
                    }
                }
            }
        }
        EnsembleWeights::PerClass { weights, .. } => {
            if weights.first().map_or(0, |w| w.len()) != m {
                return Err(Error::ShapeMismatch(format!(
                    "per-class weights cover {} classes, predictions have {m}",
                    weights.first().map_or(0, |w| w.len())
                )));
            }
            for (c, matrix) in set.predictions.iter().enumerate() {
                for (o, row) in out.iter_mut().zip(matrix) {
                    for j in 0..m {
                        o[j] += weights[c][j] * row[j];
                    }
                }
            }
            for row in &mut out {
                let sum: f64 = row.iter().sum();
                if sum > 0.0 {
                    for p in row.iter_mut() {
                        *p /= sum;
                    }
                }
            }
        }
    }
    Ok(out)
}

fn grid_loss(true_probs: &[Vec<f64>], alphas: &[f64]) -> f64 {
    let n = true_probs[0].len();
    let mut total = 0.0;
    for i in 0..n {
        let mut b = 0.0;
        for (c, tp) in true_probs.iter().enumerate() {
            b += alphas[c] * tp[i];
        }
        total -= b.clamp(CLIP, 1.0 - CLIP).ln();
    }
    total / n as f64
}

/// Exhaustive simplex grid search at the given increment (2 or 3 models).
/// Zero coordinates are excluded (alpha > 0); ties resolve to the
/// lexicographically smallest weight vector.
pub fn grid_search_weights(
    set: &PredictionSet,
    increment: f64,
) -> Result<(EnsembleWeights, f64)> {
    let c = set.n_models();
    if c < 2 {
        return Err(Error::Validation("grid search needs at least 2 models".into()));
    }
    if c > 3 {
        return Err(Error::Validation(
            "grid search is exponential beyond 3 models; use optimize_weights".into(),
        ));
    }
    let steps = (1.0 / increment).round() as usize;
    let tp = set.true_probs()?;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let consider = |alphas: Vec<f64>, best: &mut Option<(Vec<f64>, f64)>| {
        let loss = grid_loss(&tp, &alphas);
        match best {
            Some((_, b)) if loss >= *b => {}
            _ => *best = Some((alphas, loss)),
        }
    };
    if c == 2 {
        for i in 1..steps {
            let w1 = i as f64 * increment;
            consider(vec![w1, 1.0 - w1], &mut best);
        }
    } else {
        for i in 1..steps {
            for j in 1..steps - i {
                let k = steps - i - j;
                if k == 0 {
                    continue;
                }
                let w = vec![
                    i as f64 * increment,
                    j as f64 * increment,
                    k as f64 * increment,
                ];
                consider(w, &mut best);
            }
        }
    }
    let (weights, loss) = best.expect("grid has interior points");
    Ok((
        EnsembleWeights::Global {
            model_ids: set.model_ids.clone(),
            weights,
        },
        loss,
    ))
}

/// Minimize log loss over the open simplex by exponentiated gradient from
/// the uniform start, with backtracking and a final vertex guard so the
/// result is never worse than any single model.
fn minimize_simplex(true_probs: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let c = true_probs.len();
    let mut alpha = vec![1.0 / c as f64; c];
    let mut loss = grid_loss(true_probs, &alpha);
    let mut lr = 1.0f64;
    let mut stall = 0usize;
    for _ in 0..5000 {
        // Gradient of the clipped mean negative log likelihood.
        let n = true_probs[0].len();
        let mut grad = vec![0.0f64; c];
        for i in 0..n {
            let mut b = 0.0;
            for (k, tp) in true_probs.iter().enumerate() {
                b += alpha[k] * tp[i];
            }
            let b = b.max(CLIP);
            for (k, tp) in true_probs.iter().enumerate() {
                grad[k] -= tp[i] / b;
            }
        }
        for g in &mut grad {
            *g /= n as f64;
        }

        // Backtracking exponentiated-gradient step.
        let mut improved = false;
        for _ in 0..40 {
            let max_g = grad.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut next: Vec<f64> = alpha
                .iter()
                .zip(&grad)
                .map(|(&a, &g)| a * (-lr * (g - max_g)).exp())
                .collect();
            let sum: f64 = next.iter().sum();
            for w in &mut next {
                *w = (*w / sum).max(WEIGHT_FLOOR);
            }
            let sum: f64 = next.iter().sum();
            for w in &mut next {
                *w /= sum;
            }
            let next_loss = grid_loss(true_probs, &next);
            if next_loss <= loss {
                let gain = loss - next_loss;
                alpha = next;
                loss = next_loss;
                improved = true;
                if gain < 1e-10 {
                    stall += 1;
                } else {
                    stall = 0;
                }
                break;
            }
            lr *= 0.5;
            if lr < 1e-12 {
                break;
            }
        }
        if !improved {
            stall += 1;
        }
        if stall >= 50 {
            break;
        }
    }

    // Vertex guard: the closure of the feasible set contains near-vertex
    // points; take one when strictly better.
    for v in 0..c {
        let mut vertex = vec![WEIGHT_FLOOR; c];
        vertex[v] = 1.0 - WEIGHT_FLOOR * (c - 1) as f64;
        let vloss = grid_loss(true_probs, &vertex);
        if vloss < loss - 1e-12 {
            alpha = vertex;
            loss = vloss;
        }
    }
    (alpha, loss)
}

/// Global log-loss-minimizing weights (any number of models >= 2).
pub fn optimize_weights(set: &PredictionSet) -> Result<(EnsembleWeights, f64)> {
    if set.n_models() < 2 {
        return Err(Error::Validation("need at least 2 models to blend".into()));
    }
    let tp = set.true_probs()?;
    let (weights, loss) = minimize_simplex(&tp);
    Ok((
        EnsembleWeights::Global {
            model_ids: set.model_ids.clone(),
            weights,
        },
        loss,
    ))
}

/// Class-wise weights: each class's column gets its own simplex optimization
/// of the per-class mean negative log likelihood. Returns the summed
/// balanced objective.
pub fn optimize_classwise_weights(set: &PredictionSet) -> Result<(EnsembleWeights, f64)> {
    if set.n_models() < 2 {
        return Err(Error::Validation("need at least 2 models to blend".into()));
    }
    let labels = set
        .labels
        .as_ref()
        .ok_or_else(|| Error::Validation("weight fitting needs labeled predictions".into()))?;
    let m = set.n_classes();
    let c = set.n_models();
    let mut per_class: Vec<Vec<f64>> = vec![vec![0.0; m]; c];
    let mut balanced = 0.0;
    for class in 0..m {
        let members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|&(_, &y)| y as usize == class + 1)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            return Err(Error::Validation(format!(
                "class {} has no validation samples",
                class + 1
            )));
        }
        let tp: Vec<Vec<f64>> = set
            .predictions
            .iter()
            .map(|matrix| members.iter().map(|&i| matrix[i][class]).collect())
            .collect();
        let (weights, loss) = minimize_simplex(&tp);
        for (model, &w) in weights.iter().enumerate() {
            per_class[model][class] = w;
        }
        balanced += loss;
    }
    Ok((
        EnsembleWeights::PerClass {
            model_ids: set.model_ids.clone(),
            weights: per_class,
        },
        balanced,
    ))
}

/// Achieved-weights report for the structured output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsReport {
    pub strategy: String,
    pub weights: EnsembleWeights,
    pub achieved_loss: f64,
    pub single_model_losses: Vec<(String, f64)>,
}

impl WeightsReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("report serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

// ---------------------------------------------------------------------------
// Submission format: `ID,class1,...,class9` rows.
// ---------------------------------------------------------------------------

pub fn write_predictions(path: &Path, ids: &[u64], probs: &[Vec<f64>]) -> Result<()> {
    if ids.len() != probs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ids for {} prediction rows",
            ids.len(),
            probs.len()
        )));
    }
    let m = probs.first().map_or(0, |r| r.len());
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    (|| -> std::io::Result<()> {
        let header: Vec<String> = (1..=m).map(|j| format!("class{j}")).collect();
        writeln!(w, "ID,{}", header.join(","))?;
        for (id, row) in ids.iter().zip(probs) {
            write!(w, "{id}")?;
            for p in row {
                write!(w, ",{p}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<(Vec<u64>, Vec<Vec<f64>>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let origin = path.display().to_string();
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(&origin, 1, "empty predictions file"))?
        .map_err(|e| Error::io(path, e))?;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.first() != Some(&"ID") || cols.len() < 2 {
        return Err(Error::parse(&origin, 1, "expected `ID,class1,...` header"));
    }
    let m = cols.len() - 1;
    let mut ids = Vec::new();
    let mut probs = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != m + 1 {
            return Err(Error::parse(
                &origin,
                idx + 2,
                format!("expected {} fields, found {}", m + 1, fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(&origin, idx + 2, format!("bad id `{}`", fields[0])))?;
        let row: Vec<f64> = fields[1..]
            .iter()
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(&origin, idx + 2, "bad probability"))?;
        ids.push(id);
        probs.push(row);
    }
    Ok((ids, probs))
}
