//! Scoring and the cross-validation experiment harness.
//!
//! [`log_loss`] is the competition metric: mean negative log probability of
//! the true class, with probabilities clipped away from 0 and 1.
//! [`balanced_log_loss`] averages within each class before summing across
//! classes, countering class imbalance. [`run_experiment`] drives the whole
//! per-fold fit/train/score cycle with one master seed and a label guard
//! that catches any read of a validation label before scoring.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::corpus::{split, Corpus, SplitSpec};
use crate::error::{Error, Result};
use crate::features::FeatureRecipe;
use crate::gbdt::{self, GbdtParams};
use crate::views::{derive_seed, FeaturizeOptions, FittedFeaturizer, SharedResources, TextAssets};

pub const DEFAULT_CLIP: f64 = 1e-15;

fn validate_probs(labels: &[u8], probs: &[Vec<f64>]) -> Result<usize> {
    if labels.len() != probs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} probability rows",
            labels.len(),
            probs.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Validation("empty prediction set".into()));
    }
    let m = probs[0].len();
    for (i, row) in probs.iter().enumerate() {
        if row.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "row {i} has {} classes, expected {m}",
                row.len()
            )));
        }
        let mut sum = 0.0;
        for &p in row {
            if !p.is_finite() {
                return Err(Error::Validation(format!("row {i} holds a non-finite value")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!("row {i} sums to {sum}, not 1")));
        }
    }
    for &l in labels {
        if l == 0 || l as usize > m {
            return Err(Error::Validation(format!("label {l} outside 1..={m}")));
        }
    }
    Ok(m)
}

/// Multi-class logarithmic loss with probability clipping.
pub fn log_loss(labels: &[u8], probs: &[Vec<f64>], clip: f64) -> Result<f64> {
    validate_probs(labels, probs)?;
    let total: f64 = labels
        .iter()
        .zip(probs)
        .map(|(&y, row)| -row[y as usize - 1].clamp(clip, 1.0 - clip).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Balanced (per-class averaged) log loss with its per-class breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedLoss {
    /// Sum over classes of the per-class mean negative log probability.
    pub sum: f64,
    /// The /M mean variant.
    pub mean: f64,
    pub per_class: Vec<f64>,
}

/// Per-class mean negative log probability, summed across classes.
/// Every class must be present in the labels.
pub fn balanced_log_loss(labels: &[u8], probs: &[Vec<f64>], clip: f64) -> Result<BalancedLoss> {
    let m = validate_probs(labels, probs)?;
    let mut totals = vec![0.0f64; m];
    let mut counts = vec![0usize; m];
    for (&y, row) in labels.iter().zip(probs) {
        let j = y as usize - 1;
        totals[j] -= row[j].clamp(clip, 1.0 - clip).ln();
        counts[j] += 1;
    }
    for (j, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::Validation(format!(
                "class {} has no samples in the label set",
                j + 1
            )));
        }
    }
    let per_class: Vec<f64> = totals
        .iter()
        .zip(&counts)
        .map(|(&t, &c)| t / c as f64)
        .collect();
    let sum: f64 = per_class.iter().sum();
    Ok(BalancedLoss {
        sum,
        mean: sum / m as f64,
        per_class,
    })
}

/// Label store with a taint flag: validation labels are sealed during
/// fitting and training, and any read of a sealed label is recorded.
pub struct GuardedLabels {
    labels: Vec<Option<u8>>,
    sealed: Vec<AtomicBool>,
    violations: AtomicUsize,
}

impl GuardedLabels {
    pub fn new(labels: Vec<Option<u8>>) -> Self {
        let sealed = labels.iter().map(|_| AtomicBool::new(false)).collect();
        GuardedLabels {
            labels,
            sealed,
            violations: AtomicUsize::new(0),
        }
    }

    pub fn seal(&self, indices: &[usize]) {
        for &i in indices {
            self.sealed[i].store(true, Ordering::SeqCst);
        }
    }

    pub fn unseal_all(&self) {
        for s in &self.sealed {
            s.store(false, Ordering::SeqCst);
        }
    }

    /// Read a label, counting a violation if it is sealed.
    pub fn get(&self, index: usize) -> Option<u8> {
        if self.sealed[index].load(Ordering::SeqCst) {
            self.violations.fetch_add(1, Ordering::SeqCst);
        }
        self.labels[index]
    }

    pub fn violations(&self) -> usize {
        self.violations.load(Ordering::SeqCst)
    }
}

/// One fold's scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub log_loss: f64,
    pub balanced: BalancedLoss,
    pub rounds_used: usize,
}

/// Aggregated experiment scores plus a config fingerprint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub recipe: String,
    pub folds: Vec<FoldReport>,
    pub mean_log_loss: f64,
    pub std_log_loss: f64,
    pub mean_balanced_sum: f64,
    /// Mean per-class loss across folds.
    pub per_class: Vec<f64>,
    pub label_guard_violations: usize,
    pub fingerprint: String,
}

impl EvalReport {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("report serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("recipe: {}\n", self.recipe));
        out.push_str("fold  n_val  log_loss  balanced_sum  balanced_mean\n");
        for f in &self.folds {
            out.push_str(&format!(
                "{:>4}  {:>5}  {:>8.4}  {:>12.4}  {:>13.4}\n",
                f.fold, f.n_validation, f.log_loss, f.balanced.sum, f.balanced.mean
            ));
        }
        out.push_str(&format!(
            "mean {:.4} +- {:.4}  balanced {:.4}\n",
            self.mean_log_loss, self.std_log_loss, self.mean_balanced_sum
        ));
        out.push_str(&format!("fingerprint {}\n", self.fingerprint));
        out
    }
}

/// Everything a single-recipe experiment needs.
pub struct ExperimentConfig {
    pub recipe: FeatureRecipe,
    pub gbdt: GbdtParams,
    pub split: SplitSpec,
    pub featurize: FeaturizeOptions,
    pub master_seed: u64,
    pub clip: f64,
    /// Fraction of training rows held out (stratified) for early stopping;
    /// 0 disables the inner split.
    pub early_stop_fraction: f64,
}

pub fn config_fingerprint(config: &ExperimentConfig) -> String {
    let mut hasher = sha2::Sha256::new();
    let recipe_json = serde_json::to_string(&config.recipe).unwrap_or_default();
    hasher.update(recipe_json.as_bytes());
    let gbdt_json = serde_json::to_string(&config.gbdt).unwrap_or_default();
    hasher.update(gbdt_json.as_bytes());
    let split_json = serde_json::to_string(&config.split).unwrap_or_default();
    hasher.update(split_json.as_bytes());
    hasher.update(config.master_seed.to_le_bytes());
    hasher.update(config.clip.to_le_bytes());
    hasher.update(config.early_stop_fraction.to_le_bytes());
    hasher.update(config.featurize.sentence_window.to_le_bytes());
    hasher.update(config.featurize.char_encode_len.to_le_bytes());
    let digest = hasher.finalize();
    digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

/// Carve a stratified early-stopping subset out of the training rows.
/// Returns (boost rows, inner validation rows).
pub fn inner_split(
    rows: &[usize],
    labels: &[u8],
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if fraction <= 0.0 || rows.len() < 10 {
        return (rows.to_vec(), Vec::new());
    }
    let mut by_class: std::collections::BTreeMap<u8, Vec<usize>> = std::collections::BTreeMap::new();
    for (slot, &row) in rows.iter().enumerate() {
        by_class.entry(labels[slot]).or_default().push(row);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut boost = Vec::new();
    let mut inner = Vec::new();
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        let take = ((members.len() as f64 * fraction).round() as usize)
            .min(members.len().saturating_sub(1));
        for (i, row) in members.into_iter().enumerate() {
            if i < take {
                inner.push(row);
            } else {
                boost.push(row);
            }
        }
    }
    boost.sort_unstable();
    inner.sort_unstable();
    if inner.is_empty() {
        (rows.to_vec(), Vec::new())
    } else {
        (boost, inner)
    }
}

/// Fit featurizers on each fold's training rows, train a GBDT, score the
/// validation rows, and aggregate. All randomness derives from the master
/// seed via per-fold counter hashes.
pub fn run_experiment(
    corpus: &Corpus,
    config: &ExperimentConfig,
    assets: &TextAssets,
) -> Result<EvalReport> {
    let folds = split(corpus, &config.split)?;
    let shared = SharedResources::build(corpus, &assets.lexicon)?;
    let guard = GuardedLabels::new(corpus.labels());
    let mut fold_reports = Vec::with_capacity(folds.len());

    for (fold_idx, (train_rows, val_rows)) in folds.iter().enumerate() {
        let fold_seed = derive_seed(config.master_seed, &format!("fold{fold_idx}"));
        guard.seal(val_rows);

        let outcome = run_fold(
            corpus, config, assets, &shared, &guard, train_rows, val_rows, fold_seed,
        );
        // Release the seal before scoring (and before propagating errors).
        guard.unseal_all();
        let (probs, rounds_used) = outcome.map_err(|e| {
            Error::Validation(format!("fold {fold_idx}: {e}"))
        })?;

        let val_labels: Vec<u8> = val_rows
            .iter()
            .map(|&i| guard.get(i).expect("labeled corpus"))
            .collect();
        let loss = log_loss(&val_labels, &probs, config.clip)?;
        let balanced = balanced_log_loss(&val_labels, &probs, config.clip).unwrap_or(BalancedLoss {
            sum: f64::NAN,
            mean: f64::NAN,
            per_class: Vec::new(),
        });
        fold_reports.push(FoldReport {
            fold: fold_idx,
            n_train: train_rows.len(),
            n_validation: val_rows.len(),
            log_loss: loss,
            balanced,
            rounds_used,
        });
    }

    let losses: Vec<f64> = fold_reports.iter().map(|f| f.log_loss).collect();
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / losses.len() as f64;
    let balanced_sums: Vec<f64> = fold_reports
        .iter()
        .map(|f| f.balanced.sum)
        .filter(|s| s.is_finite())
        .collect();
    let mean_balanced = if balanced_sums.is_empty() {
        f64::NAN
    } else {
        balanced_sums.iter().sum::<f64>() / balanced_sums.len() as f64
    };
    let class_count = fold_reports
        .iter()
        .map(|f| f.balanced.per_class.len())
        .max()
        .unwrap_or(0);
    let per_class: Vec<f64> = (0..class_count)
        .map(|j| {
            let vals: Vec<f64> = fold_reports
                .iter()
                .filter_map(|f| f.balanced.per_class.get(j).copied())
                .collect();
            vals.iter().sum::<f64>() / vals.len().max(1) as f64
        })
        .collect();

    Ok(EvalReport {
        recipe: config.recipe.name.clone(),
        folds: fold_reports,
        mean_log_loss: mean,
        std_log_loss: var.sqrt(),
        mean_balanced_sum: mean_balanced,
        per_class,
        label_guard_violations: guard.violations(),
        fingerprint: config_fingerprint(config),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    corpus: &Corpus,
    config: &ExperimentConfig,
    assets: &TextAssets,
    shared: &SharedResources,
    guard: &GuardedLabels,
    train_rows: &[usize],
    val_rows: &[usize],
    fold_seed: u64,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let fitted = FittedFeaturizer::fit(
        corpus,
        shared,
        train_rows,
        &config.recipe,
        &config.featurize,
        assets,
        fold_seed,
    )?;

    let train_labels: Vec<u8> = train_rows
        .iter()
        .map(|&i| {
            guard
                .get(i)
                .ok_or_else(|| Error::Validation(format!("sample {i} has no label")))
        })
        .collect::<Result<_>>()?;

    let (boost_rows, inner_rows) = inner_split(
        train_rows,
        &train_labels,
        config.early_stop_fraction,
        derive_seed(fold_seed, "inner-split"),
    );
    let label_map: std::collections::HashMap<usize, u8> = train_rows
        .iter()
        .zip(&train_labels)
        .map(|(&r, &l)| (r, l))
        .collect();
    let label_of = |row: usize| -> u8 { label_map[&row] };

    let mut params = config.gbdt.clone();
    params.seed = derive_seed(fold_seed, "gbdt");
    let model = if inner_rows.is_empty() {
        let matrix = fitted.transform(corpus, shared, train_rows, assets)?;
        gbdt::train(&matrix, &train_labels, &params, None)?
    } else {
        let boost_matrix = fitted.transform(corpus, shared, &boost_rows, assets)?;
        let boost_labels: Vec<u8> = boost_rows.iter().map(|&r| label_of(r)).collect();
        let inner_matrix = fitted.transform(corpus, shared, &inner_rows, assets)?;
        let inner_labels: Vec<u8> = inner_rows.iter().map(|&r| label_of(r)).collect();
        if params.early_stopping_patience.is_none() {
            params.early_stopping_patience = Some(20);
        }
        gbdt::train(
            &boost_matrix,
            &boost_labels,
            &params,
            Some((&inner_matrix, &inner_labels)),
        )?
    };

    let val_matrix = fitted.transform(corpus, shared, val_rows, assets)?;
    let probs = gbdt::predict_proba(&model, &val_matrix)?;
    Ok((probs, model.trees.len()))
}
