//! Operator-facing pipeline: configuration, artifact caching, and the
//! prepare / featurize / train / predict / blend / evaluate stages the CLI
//! wires together.
//!
//! Every stage writes its artifacts under the configured output directory
//! next to a fingerprint file. A rerun whose fingerprint matches skips the
//! stage, so interrupted runs resume and repeat runs are bit-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::corpus::{self, Corpus, SplitKind, SplitSpec};
use crate::ensemble::{
    self, blend, grid_search_weights, optimize_classwise_weights, optimize_weights,
    EnsembleWeights, PredictionSet, WeightsReport,
};
use crate::entity::{dump_entity_texts, extract_entity_texts, PatternSet};
use crate::error::{Error, Result};
use crate::eval::{balanced_log_loss, log_loss, GuardedLabels};
use crate::features::{preset_names, preset_recipe, FeatureRecipe};
use crate::gbdt::{self, GbdtParams};
use crate::textproc::load_term_list;
use crate::views::{
    derive_seed, FeaturizeOptions, FittedFeaturizer, SharedResources, TextAssets,
};

/// How blended weights are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlendStrategy {
    Grid,
    LoglossMin,
    LoglossMinCl,
}

impl BlendStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(BlendStrategy::Grid),
            "logloss_min" => Ok(BlendStrategy::LoglossMin),
            "logloss_min_cl" => Ok(BlendStrategy::LoglossMinCl),
            other => Err(Error::Config(format!(
                "unknown strategy `{other}` (grid, logloss_min, logloss_min_cl)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BlendStrategy::Grid => "grid",
            BlendStrategy::LoglossMin => "logloss_min",
            BlendStrategy::LoglossMinCl => "logloss_min_cl",
        }
    }
}

/// Fully resolved pipeline configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub variants: PathBuf,
    pub text: PathBuf,
    pub split_ids: Option<PathBuf>,
    pub bioentities: Option<PathBuf>,
    pub keywords: Option<PathBuf>,
    pub pos_lexicon: Option<PathBuf>,
    pub output: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub split_kind: String,
    pub k: usize,
    pub stratified: bool,
    pub recipes: Vec<String>,
    pub strategy: BlendStrategy,
    pub clip: f64,
    pub gbdt: GbdtParams,
    pub early_stop_fraction: f64,
    pub featurize: FeaturizeOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            variants: PathBuf::new(),
            text: PathBuf::new(),
            split_ids: None,
            bioentities: None,
            keywords: None,
            pos_lexicon: None,
            output: PathBuf::from("out"),
            seed: 42,
            threads: 1,
            split_kind: "kfold".into(),
            k: 5,
            stratified: true,
            recipes: vec!["GBDT_1".into(), "GBDT_2".into()],
            strategy: BlendStrategy::LoglossMinCl,
            clip: 1e-15,
            gbdt: GbdtParams::default(),
            early_stop_fraction: 0.15,
            featurize: FeaturizeOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&content, &path.display().to_string())?;
        config.apply_env(std::env::vars());
        Ok(config)
    }

    /// Parse the line-oriented `section.key = value` format.
    pub fn parse(content: &str, origin: &str) -> Result<Self> {
        let mut table: BTreeMap<String, String> = BTreeMap::new();
        for (idx, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(origin, idx + 1, "expected `section.key = value`")
            })?;
            let value = value.split('#').next().unwrap_or("").trim();
            table.insert(key.trim().to_string(), value.to_string());
        }
        Self::from_table(table)
    }

    /// Override settings from `GV_SECTION_KEY` environment variables.
    pub fn apply_env(&mut self, vars: impl Iterator<Item = (String, String)>) {
        let mut table = BTreeMap::new();
        for (key, value) in vars {
            if let Some(rest) = key.strip_prefix("GV_") {
                let lower = rest.to_lowercase();
                if let Some((section, k)) = lower.split_once('_') {
                    table.insert(format!("{section}.{k}"), value);
                }
            }
        }
        if table.is_empty() {
            return;
        }
        // Apply on top of the current settings.
        let _ = self.apply_table(&table);
    }

    fn from_table(table: BTreeMap<String, String>) -> Result<Self> {
        let mut config = PipelineConfig::default();
        config.apply_table(&table)?;
        if config.variants.as_os_str().is_empty() || config.text.as_os_str().is_empty() {
            return Err(Error::Config(
                "config must set data.variants and data.text".into(),
            ));
        }
        Ok(config)
    }

    fn apply_table(&mut self, table: &BTreeMap<String, String>) -> Result<()> {
        for (key, value) in table {
            self.apply_key(key, value)
                .map_err(|e| Error::Config(format!("{key} = {value}: {e}")))?;
        }
        Ok(())
    }

    fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad number `{value}`")))
        }
        fn opt_num<T: std::str::FromStr>(value: &str) -> Result<Option<T>> {
            if value.is_empty() {
                Ok(None)
            } else {
                num(value).map(Some)
            }
        }
        match key {
            "data.variants" => self.variants = PathBuf::from(value),
            "data.text" => self.text = PathBuf::from(value),
            "data.split_ids" => self.split_ids = non_empty_path(value),
            "data.bioentities" => self.bioentities = non_empty_path(value),
            "data.keywords" => self.keywords = non_empty_path(value),
            "data.pos_lexicon" => self.pos_lexicon = non_empty_path(value),
            "output.dir" => self.output = PathBuf::from(value),
            "run.seed" => self.seed = num(value)?,
            "run.threads" => self.threads = num(value)?,
            "split.kind" => {
                if value != "kfold" && value != "stage1-fixed" {
                    return Err(Error::Config(format!("unknown split kind `{value}`")));
                }
                self.split_kind = value.to_string();
            }
            "split.k" => self.k = num(value)?,
            "split.stratified" => self.stratified = num(value)?,
            "recipes" | "recipes.list" => {
                self.recipes = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
            }
            "ensemble.strategy" => self.strategy = BlendStrategy::parse(value)?,
            "eval.clip" => self.clip = num(value)?,
            "gbdt.rounds" => self.gbdt.rounds = num(value)?,
            "gbdt.learning_rate" => self.gbdt.learning_rate = num(value)?,
            "gbdt.max_depth" => self.gbdt.max_depth = num(value)?,
            "gbdt.min_child_hessian" => self.gbdt.min_child_hessian = num(value)?,
            "gbdt.lambda" => self.gbdt.reg_lambda = num(value)?,
            "gbdt.gamma" => self.gbdt.reg_gamma = num(value)?,
            "gbdt.row_subsample" => self.gbdt.row_subsample = num(value)?,
            "gbdt.col_subsample" => self.gbdt.col_subsample = num(value)?,
            "gbdt.early_stop_fraction" => self.early_stop_fraction = num(value)?,
            "gbdt.patience" => self.gbdt.early_stopping_patience = opt_num(value)?,
            "dict.min_df" => self.featurize.dict_min_df = num(value)?,
            "dict.max_terms" => self.featurize.dict_max_terms = opt_num(value)?,
            "ngram.min_df" => self.featurize.ngram_min_df = num(value)?,
            "ngram.max_terms" => self.featurize.ngram_max_terms = opt_num(value)?,
            "sentence.window" => self.featurize.sentence_window = num(value)?,
            "charenc.len" => self.featurize.char_encode_len = num(value)?,
            "chargram.n" => self.featurize.char_ngram_n = num(value)?,
            "embed.dim" => self.featurize.word_embed.dim = num(value)?,
            "embed.window" => self.featurize.word_embed.window = num(value)?,
            "embed.negatives" => self.featurize.word_embed.negatives = num(value)?,
            "embed.epochs" => self.featurize.word_embed.epochs = num(value)?,
            "embed.min_count" => self.featurize.word_embed.min_count = num(value)?,
            "pvdbow.dim" => self.featurize.pvdbow.dim = num(value)?,
            "pvdbow.epochs" => self.featurize.pvdbow.epochs = num(value)?,
            "pvdbow.negatives" => self.featurize.pvdbow.negatives = num(value)?,
            "nmf.max_iters" => self.featurize.nmf.max_iters = num(value)?,
            "nmf.tol" => self.featurize.nmf.tol = num(value)?,
            "lda.sweeps" => self.featurize.lda.sweeps = num(value)?,
            "lda.alpha" => self.featurize.lda.alpha = opt_num(value)?,
            "lda.beta" => self.featurize.lda.beta = num(value)?,
            "lda.infer_sweeps" => self.featurize.lda.infer_sweeps = num(value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// All documented keys, for `--help`.
    pub fn documented_keys() -> &'static [(&'static str, &'static str)] {
        &[
            ("data.variants", "variants CSV (ID,Gene,Variation[,Class])"),
            ("data.text", "text file (ID,Text header then id||text rows)"),
            ("data.split_ids", "sidecar listing validation ids (stage1-fixed)"),
            ("data.bioentities", "bioentity term list (term<TAB>category)"),
            ("data.keywords", "keyword term list (one per line)"),
            ("data.pos_lexicon", "PoS lexicon (word<TAB>tag); bundled default"),
            ("output.dir", "artifact directory"),
            ("run.seed", "master seed"),
            ("run.threads", "worker threads (1 = deterministic reference mode)"),
            ("split.kind", "kfold | stage1-fixed"),
            ("split.k", "fold count"),
            ("split.stratified", "true | false"),
            ("recipes", "comma-separated preset names or recipe file paths"),
            ("ensemble.strategy", "grid | logloss_min | logloss_min_cl"),
            ("eval.clip", "probability clip for the log loss"),
            ("gbdt.rounds", "boosting rounds"),
            ("gbdt.learning_rate", "shrinkage in (0,1]"),
            ("gbdt.max_depth", "tree depth limit"),
            ("gbdt.min_child_hessian", "minimum child hessian mass"),
            ("gbdt.lambda", "L2 leaf regularization"),
            ("gbdt.gamma", "per-split penalty"),
            ("gbdt.row_subsample", "row fraction per round"),
            ("gbdt.col_subsample", "feature fraction per round"),
            ("gbdt.early_stop_fraction", "inner holdout fraction (0 disables)"),
            ("gbdt.patience", "early-stopping patience in rounds"),
            ("dict.min_df", "minimum document frequency"),
            ("dict.max_terms", "dictionary cap (empty = none)"),
            ("ngram.min_df", "n-gram minimum document frequency"),
            ("ngram.max_terms", "n-gram dictionary cap"),
            ("sentence.window", "sentence context window (odd)"),
            ("charenc.len", "label-encoding length per name"),
            ("chargram.n", "character n-gram maximum length"),
            ("embed.dim", "word embedding dimension"),
            ("embed.window", "skip-gram window"),
            ("embed.negatives", "negative samples"),
            ("embed.epochs", "skip-gram epochs"),
            ("embed.min_count", "vocabulary pruning threshold"),
            ("pvdbow.dim", "document vector dimension"),
            ("pvdbow.epochs", "document vector epochs"),
            ("pvdbow.negatives", "document vector negative samples"),
            ("nmf.max_iters", "NMF update iterations"),
            ("nmf.tol", "NMF relative objective tolerance"),
            ("lda.sweeps", "Gibbs sweeps"),
            ("lda.alpha", "doc-topic prior (empty = 50/k)"),
            ("lda.beta", "topic-word prior"),
            ("lda.infer_sweeps", "held-out inference sweeps"),
        ]
    }

    pub fn resolve_recipe(&self, name: &str) -> Result<FeatureRecipe> {
        if preset_names().contains(&name) {
            return preset_recipe(name);
        }
        let path = Path::new(name);
        if path.exists() {
            return FeatureRecipe::load(path);
        }
        Err(Error::Config(format!(
            "unknown recipe `{name}`; shipped presets: {} (or pass a recipe file path)",
            preset_names().join(", ")
        )))
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        if self.split_kind == "stage1-fixed" {
            let path = self.split_ids.as_ref().ok_or_else(|| {
                Error::Config("stage1-fixed split needs data.split_ids".into())
            })?;
            let ids = corpus::load_split_ids(path)?;
            Ok(SplitSpec {
                kind: SplitKind::Stage1Fixed {
                    validation_ids: ids,
                },
                seed: self.seed,
                stratified: false,
            })
        } else {
            Ok(SplitSpec::kfold(self.k, self.seed, self.stratified))
        }
    }

    pub fn load_assets(&self) -> Result<TextAssets> {
        let mut assets = TextAssets::bundled();
        if let Some(path) = &self.pos_lexicon {
            assets.lexicon = crate::textproc::PosLexicon::load(path)?;
        }
        if let Some(path) = &self.bioentities {
            assets.bioentity_dict = Some(load_term_list(path)?);
        }
        if let Some(path) = &self.keywords {
            assets.keyword_dict = Some(load_term_list(path)?);
        }
        Ok(assets)
    }

    /// Hash of the settings a stage depends on.
    fn settings_fingerprint(&self, scope: &str) -> String {
        let mut hasher = sha2::Sha256::new();
        hasher.update(scope.as_bytes());
        hasher.update(self.seed.to_le_bytes());
        hasher.update(self.split_kind.as_bytes());
        hasher.update(self.k.to_le_bytes());
        hasher.update([self.stratified as u8]);
        if scope.contains("featurize") {
            let json = serde_json::to_string(&self.featurize).unwrap_or_default();
            hasher.update(json.as_bytes());
        }
        if scope.contains("train") {
            let json = serde_json::to_string(&self.gbdt).unwrap_or_default();
            hasher.update(json.as_bytes());
            hasher.update(self.early_stop_fraction.to_le_bytes());
        }
        if scope.contains("blend") {
            hasher.update(self.strategy.name().as_bytes());
        }
        if scope.contains("evaluate") {
            hasher.update(self.clip.to_le_bytes());
        }
        hex(&hasher.finalize()[..16])
    }
}

fn non_empty_path(value: &str) -> Option<PathBuf> {
    if value.is_empty() {
        None
    } else {
        Some(PathBuf::from(value))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Caching and locking
// ---------------------------------------------------------------------------

fn fingerprint_matches(path: &Path, value: &str) -> bool {
    std::fs::read_to_string(path).map(|c| c.trim() == value).unwrap_or(false)
}

fn write_fingerprint(path: &Path, value: &str) -> Result<()> {
    std::fs::write(path, value).map_err(|e| Error::io(path, e))
}

/// Exclusive lock on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<OutputLock> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Validation(
                format!(
                    "output directory is locked by another run (remove {} if stale)",
                    path.display()
                ),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct StageStatus {
    pub stage: String,
    pub cache_hit: bool,
}

/// Parse, join, cache the corpus, and dump entity texts.
pub fn cmd_prepare(config: &PipelineConfig) -> Result<(Corpus, StageStatus)> {
    std::fs::create_dir_all(&config.output).map_err(|e| Error::io(&config.output, e))?;
    let variants_bytes =
        std::fs::read(&config.variants).map_err(|e| Error::io(&config.variants, e))?;
    let text_bytes = std::fs::read(&config.text).map_err(|e| Error::io(&config.text, e))?;
    let mut hasher = sha2::Sha256::new();
    hasher.update(&variants_bytes);
    hasher.update(&text_bytes);
    let fp = hex(&hasher.finalize()[..16]);

    let fp_path = config.output.join("prepare.fp");
    let corpus_path = config.output.join("corpus.json");
    if fingerprint_matches(&fp_path, &fp) && corpus_path.exists() {
        let corpus = load_corpus(&corpus_path)?;
        return Ok((
            corpus,
            StageStatus {
                stage: "prepare".into(),
                cache_hit: true,
            },
        ));
    }

    let variants = corpus::parse_variants(&config.variants)?;
    let texts = corpus::parse_text(&config.text)?;
    let corpus = corpus::join(variants, &texts)?;

    let json = serde_json::to_string(&corpus)
        .map_err(|e| Error::Validation(format!("corpus serialization: {e}")))?;
    std::fs::write(&corpus_path, json).map_err(|e| Error::io(&corpus_path, e))?;

    let patterns = PatternSet::from_corpus(&corpus);
    let texts = extract_entity_texts(&corpus, &patterns)?;
    dump_entity_texts(&config.output.join("entity_texts"), &patterns, &texts)?;

    write_fingerprint(&fp_path, &fp)?;
    Ok((
        corpus,
        StageStatus {
            stage: "prepare".into(),
            cache_hit: false,
        },
    ))
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&json)
        .map_err(|e| Error::Validation(format!("corpus cache is corrupt: {e}")))
}

fn prepare_fp(config: &PipelineConfig) -> Result<String> {
    let path = config.output.join("prepare.fp");
    std::fs::read_to_string(&path)
        .map(|s| s.trim().to_string())
        .map_err(|_| Error::MissingResource("prepare cache (run prepare first)".into()))
}

fn fold_dir(config: &PipelineConfig, fold: usize, recipe: &str) -> PathBuf {
    config.output.join(format!("fold{fold}")).join(recipe)
}

/// Fit featurizers per fold and persist train/validation matrices.
pub fn cmd_featurize(
    config: &PipelineConfig,
    corpus: &Corpus,
    recipe_name: &str,
) -> Result<StageStatus> {
    let recipe = config.resolve_recipe(recipe_name)?;
    let spec = config.split_spec()?;
    let folds = corpus::split(corpus, &spec)?;
    let recipe_json = serde_json::to_string(&recipe).unwrap_or_default();
    let fp = {
        let mut hasher = sha2::Sha256::new();
        hasher.update(prepare_fp(config)?.as_bytes());
        hasher.update(recipe_json.as_bytes());
        hasher.update(config.settings_fingerprint("featurize").as_bytes());
        hex(&hasher.finalize()[..16])
    };
    let fp_path = config.output.join(format!("{}.featurize.fp", recipe.name));
    let all_exist = folds.iter().enumerate().all(|(t, _)| {
        let dir = fold_dir(config, t, &recipe.name);
        dir.join("train.mtx").exists() && dir.join("validation.mtx").exists()
    });
    if fingerprint_matches(&fp_path, &fp) && all_exist {
        return Ok(StageStatus {
            stage: format!("featurize {}", recipe.name),
            cache_hit: true,
        });
    }

    let assets = config.load_assets()?;
    let shared = SharedResources::build(corpus, &assets.lexicon)?;
    let guard = GuardedLabels::new(corpus.labels());
    for (t, (train_rows, val_rows)) in folds.iter().enumerate() {
        guard.seal(val_rows);
        let fold_seed = derive_seed(config.seed, &format!("fold{t}"));
        let fitted = FittedFeaturizer::fit(
            corpus,
            &shared,
            train_rows,
            &recipe,
            &config.featurize,
            &assets,
            fold_seed,
        )
        .map_err(|e| Error::Validation(format!("fold {t}: {e}")))?;
        let dir = fold_dir(config, t, &recipe.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let train = fitted.transform(corpus, &shared, train_rows, &assets)?;
        train.write(&dir.join("train.mtx"))?;
        let val = fitted.transform(corpus, &shared, val_rows, &assets)?;
        val.write(&dir.join("validation.mtx"))?;
        std::fs::write(dir.join("state.txt"), fitted.state_fingerprint())
            .map_err(|e| Error::io(&dir, e))?;
        guard.unseal_all();
    }
    if guard.violations() > 0 {
        return Err(Error::Validation(format!(
            "featurize read {} sealed validation labels",
            guard.violations()
        )));
    }
    write_fingerprint(&fp_path, &fp)?;
    Ok(StageStatus {
        stage: format!("featurize {}", recipe.name),
        cache_hit: false,
    })
}

/// Train one model per fold on the persisted matrices.
pub fn cmd_train(
    config: &PipelineConfig,
    corpus: &Corpus,
    recipe_name: &str,
) -> Result<StageStatus> {
    let recipe = config.resolve_recipe(recipe_name)?;
    let spec = config.split_spec()?;
    let folds = corpus::split(corpus, &spec)?;
    let featurize_fp_path = config.output.join(format!("{}.featurize.fp", recipe.name));
    let upstream = std::fs::read_to_string(&featurize_fp_path)
        .map_err(|_| Error::MissingResource(format!("featurize cache for {}", recipe.name)))?;
    let fp = {
        let mut hasher = sha2::Sha256::new();
        hasher.update(upstream.trim().as_bytes());
        hasher.update(config.settings_fingerprint("train").as_bytes());
        hex(&hasher.finalize()[..16])
    };
    let fp_path = config.output.join(format!("{}.train.fp", recipe.name));
    let all_exist = folds
        .iter()
        .enumerate()
        .all(|(t, _)| fold_dir(config, t, &recipe.name).join("model.gb").exists());
    if fingerprint_matches(&fp_path, &fp) && all_exist {
        return Ok(StageStatus {
            stage: format!("train {}", recipe.name),
            cache_hit: true,
        });
    }

    let guard = GuardedLabels::new(corpus.labels());
    for (t, (train_rows, val_rows)) in folds.iter().enumerate() {
        guard.seal(val_rows);
        let dir = fold_dir(config, t, &recipe.name);
        let matrix = crate::features::FeatureMatrix::read(&dir.join("train.mtx"))?;
        if matrix.n_rows() != train_rows.len() {
            return Err(Error::ShapeMismatch(format!(
                "fold {t}: cached matrix has {} rows, split has {}",
                matrix.n_rows(),
                train_rows.len()
            )));
        }
        let labels: Vec<u8> = train_rows
            .iter()
            .map(|&i| {
                guard
                    .get(i)
                    .ok_or_else(|| Error::Validation(format!("sample {i} is unlabeled")))
            })
            .collect::<Result<_>>()?;

        let fold_seed = derive_seed(config.seed, &format!("fold{t}"));
        let mut params = config.gbdt.clone();
        params.seed = derive_seed(fold_seed, "gbdt");
        let model = if config.early_stop_fraction > 0.0 {
            let positions: Vec<usize> = (0..train_rows.len()).collect();
            let (boost_pos, inner_pos) = crate::eval::inner_split(
                &positions,
                &labels,
                config.early_stop_fraction,
                derive_seed(fold_seed, "inner-split"),
            );
            if inner_pos.is_empty() {
                gbdt::train(&matrix, &labels, &params, None)?
            } else {
                let take = |pos: &[usize]| -> Result<crate::features::FeatureMatrix> {
                    crate::features::FeatureMatrix::from_rows(
                        pos.iter().map(|&p| matrix.rows()[p].clone()).collect(),
                    )
                };
                let boost_matrix = take(&boost_pos)?;
                let inner_matrix = take(&inner_pos)?;
                let boost_labels: Vec<u8> = boost_pos.iter().map(|&p| labels[p]).collect();
                let inner_labels: Vec<u8> = inner_pos.iter().map(|&p| labels[p]).collect();
                if params.early_stopping_patience.is_none() {
                    params.early_stopping_patience = Some(20);
                }
                gbdt::train(
                    &boost_matrix,
                    &boost_labels,
                    &params,
                    Some((&inner_matrix, &inner_labels)),
                )?
            }
        } else {
            gbdt::train(&matrix, &labels, &params, None)?
        };
        gbdt::save(&model, &dir.join("model.gb"))?;
        guard.unseal_all();
    }
    if guard.violations() > 0 {
        return Err(Error::Validation(format!(
            "train read {} sealed validation labels",
            guard.violations()
        )));
    }
    write_fingerprint(&fp_path, &fp)?;
    Ok(StageStatus {
        stage: format!("train {}", recipe.name),
        cache_hit: false,
    })
}

/// Predict each fold's validation rows in the submission format.
pub fn cmd_predict(
    config: &PipelineConfig,
    corpus: &Corpus,
    recipe_name: &str,
) -> Result<StageStatus> {
    let recipe = config.resolve_recipe(recipe_name)?;
    let spec = config.split_spec()?;
    let folds = corpus::split(corpus, &spec)?;
    let train_fp_path = config.output.join(format!("{}.train.fp", recipe.name));
    let upstream = std::fs::read_to_string(&train_fp_path)
        .map_err(|_| Error::MissingResource(format!("train cache for {}", recipe.name)))?;
    let fp = {
        let mut hasher = sha2::Sha256::new();
        hasher.update(upstream.trim().as_bytes());
        hex(&hasher.finalize()[..16])
    };
    let fp_path = config.output.join(format!("{}.predict.fp", recipe.name));
    let all_exist = folds.iter().enumerate().all(|(t, _)| {
        fold_dir(config, t, &recipe.name)
            .join("validation_predictions.csv")
            .exists()
    });
    if fingerprint_matches(&fp_path, &fp) && all_exist {
        return Ok(StageStatus {
            stage: format!("predict {}", recipe.name),
            cache_hit: true,
        });
    }

    for (t, (_, val_rows)) in folds.iter().enumerate() {
        let dir = fold_dir(config, t, &recipe.name);
        let model = gbdt::load(&dir.join("model.gb"))?;
        let matrix = crate::features::FeatureMatrix::read(&dir.join("validation.mtx"))?;
        let probs = gbdt::predict_proba(&model, &matrix)?;
        let ids: Vec<u64> = val_rows.iter().map(|&i| corpus.samples[i].id).collect();
        ensemble::write_predictions(&dir.join("validation_predictions.csv"), &ids, &probs)?;
    }
    write_fingerprint(&fp_path, &fp)?;
    Ok(StageStatus {
        stage: format!("predict {}", recipe.name),
        cache_hit: false,
    })
}

/// Blend every recipe's validation predictions per fold under the configured
/// strategy, writing weights and blended predictions.
pub fn cmd_blend(config: &PipelineConfig, corpus: &Corpus) -> Result<StageStatus> {
    if config.recipes.is_empty() {
        return Err(Error::Config("no recipes configured".into()));
    }
    let spec = config.split_spec()?;
    let folds = corpus::split(corpus, &spec)?;
    let mut hasher = sha2::Sha256::new();
    for name in &config.recipes {
        let recipe = config.resolve_recipe(name)?;
        let upstream = std::fs::read_to_string(
            config.output.join(format!("{}.predict.fp", recipe.name)),
        )
        .map_err(|_| Error::MissingResource(format!("predictions for {}", recipe.name)))?;
        hasher.update(upstream.trim().as_bytes());
    }
    hasher.update(config.settings_fingerprint("blend").as_bytes());
    let fp = hex(&hasher.finalize()[..16]);
    let fp_path = config.output.join("blend.fp");
    let all_exist = folds.iter().enumerate().all(|(t, _)| {
        config
            .output
            .join(format!("fold{t}"))
            .join("blended_predictions.csv")
            .exists()
    });
    if fingerprint_matches(&fp_path, &fp) && all_exist {
        return Ok(StageStatus {
            stage: "blend".into(),
            cache_hit: true,
        });
    }

    for (t, (_, val_rows)) in folds.iter().enumerate() {
        let labels: Vec<u8> = val_rows
            .iter()
            .map(|&i| {
                corpus.samples[i]
                    .label
                    .ok_or_else(|| Error::Validation(format!("sample {i} is unlabeled")))
            })
            .collect::<Result<_>>()?;
        let mut ids_expected: Option<Vec<u64>> = None;
        let mut matrices = Vec::new();
        let mut model_ids = Vec::new();
        for name in &config.recipes {
            let recipe = config.resolve_recipe(name)?;
            let dir = fold_dir(config, t, &recipe.name);
            let (ids, probs) =
                ensemble::read_predictions(&dir.join("validation_predictions.csv"))?;
            match &ids_expected {
                None => ids_expected = Some(ids),
                Some(expected) => {
                    if *expected != ids {
                        return Err(Error::Validation(format!(
                            "fold {t}: prediction files disagree on sample ids"
                        )));
                    }
                }
            }
            matrices.push(probs);
            model_ids.push(recipe.name.clone());
        }
        let ids = ids_expected.expect("at least one recipe");
        let fold_path = config.output.join(format!("fold{t}"));

        let (weights, achieved) = if matrices.len() == 1 {
            // Single model: blending is the identity.
            let single = EnsembleWeights::Global {
                model_ids: model_ids.clone(),
                weights: vec![1.0],
            };
            let loss = log_loss(&labels, &matrices[0], config.clip)?;
            (single, loss)
        } else {
            let set = PredictionSet::new(model_ids.clone(), matrices.clone(), Some(labels.clone()))?;
            match config.strategy {
                BlendStrategy::Grid => grid_search_weights(&set, 0.01)?,
                BlendStrategy::LoglossMin => optimize_weights(&set)?,
                BlendStrategy::LoglossMinCl => optimize_classwise_weights(&set)?,
            }
        };

        let single_losses: Vec<(String, f64)> = model_ids
            .iter()
            .zip(&matrices)
            .map(|(id, probs)| Ok((id.clone(), log_loss(&labels, probs, config.clip)?)))
            .collect::<Result<_>>()?;
        let report = WeightsReport {
            strategy: config.strategy.name().to_string(),
            weights: weights.clone(),
            achieved_loss: achieved,
            single_model_losses: single_losses,
        };
        report.save(&fold_path.join("blend_weights.json"))?;

        let set = PredictionSet::new(model_ids, matrices, Some(labels))?;
        let blended = blend(&set, &weights)?;
        ensemble::write_predictions(&fold_path.join("blended_predictions.csv"), &ids, &blended)?;
    }
    write_fingerprint(&fp_path, &fp)?;
    Ok(StageStatus {
        stage: "blend".into(),
        cache_hit: false,
    })
}

/// Per-recipe scores in the final report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecipeScore {
    pub recipe: String,
    pub fold_losses: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub mean_balanced_sum: f64,
}

/// The run-all / evaluate report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub strategy: String,
    pub recipes: Vec<RecipeScore>,
    pub blended_fold_losses: Vec<f64>,
    pub blended_mean: f64,
    pub blended_std: f64,
    pub blended_balanced_mean: f64,
    pub fingerprint: String,
}

impl RunReport {
    pub fn best_single_mean(&self) -> f64 {
        self.recipes
            .iter()
            .map(|r| r.mean)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "seed {}  strategy {}\n",
            self.seed, self.strategy
        ));
        out.push_str("model            mean      std     folds\n");
        for r in &self.recipes {
            let folds: Vec<String> = r.fold_losses.iter().map(|l| format!("{l:.4}")).collect();
            out.push_str(&format!(
                "{:<15} {:>7.4}  {:>7.4}  [{}]\n",
                r.recipe,
                r.mean,
                r.std,
                folds.join(", ")
            ));
        }
        let folds: Vec<String> = self
            .blended_fold_losses
            .iter()
            .map(|l| format!("{l:.4}"))
            .collect();
        out.push_str(&format!(
            "{:<15} {:>7.4}  {:>7.4}  [{}]\n",
            "blended",
            self.blended_mean,
            self.blended_std,
            folds.join(", ")
        ));
        out.push_str(&format!("fingerprint {}\n", self.fingerprint));
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len().max(1) as f64;
    (mean, var.sqrt())
}

/// Score every recipe and the blend, writing report.json and report.txt.
pub fn cmd_evaluate(config: &PipelineConfig, corpus: &Corpus) -> Result<(RunReport, StageStatus)> {
    let spec = config.split_spec()?;
    let folds = corpus::split(corpus, &spec)?;

    let mut recipes = Vec::new();
    for name in &config.recipes {
        let recipe = config.resolve_recipe(name)?;
        let mut losses = Vec::new();
        let mut balanced_sums = Vec::new();
        for (t, (_, val_rows)) in folds.iter().enumerate() {
            let dir = fold_dir(config, t, &recipe.name);
            let (_, probs) =
                ensemble::read_predictions(&dir.join("validation_predictions.csv"))?;
            let labels: Vec<u8> = val_rows
                .iter()
                .map(|&i| corpus.samples[i].label.expect("labeled"))
                .collect();
            losses.push(log_loss(&labels, &probs, config.clip)?);
            if let Ok(b) = balanced_log_loss(&labels, &probs, config.clip) {
                balanced_sums.push(b.sum);
            }
        }
        let (mean, std) = mean_std(&losses);
        let (bal_mean, _) = mean_std(&balanced_sums);
        recipes.push(RecipeScore {
            recipe: recipe.name.clone(),
            fold_losses: losses,
            mean,
            std,
            mean_balanced_sum: bal_mean,
        });
    }

    let mut blended_losses = Vec::new();
    let mut blended_balanced = Vec::new();
    for (t, (_, val_rows)) in folds.iter().enumerate() {
        let path = config
            .output
            .join(format!("fold{t}"))
            .join("blended_predictions.csv");
        let (_, probs) = ensemble::read_predictions(&path)?;
        let labels: Vec<u8> = val_rows
            .iter()
            .map(|&i| corpus.samples[i].label.expect("labeled"))
            .collect();
        blended_losses.push(log_loss(&labels, &probs, config.clip)?);
        if let Ok(b) = balanced_log_loss(&labels, &probs, config.clip) {
            blended_balanced.push(b.sum);
        }
    }
    let (blended_mean, blended_std) = mean_std(&blended_losses);
    let (blended_balanced_mean, _) = mean_std(&blended_balanced);

    let fingerprint = {
        let mut hasher = sha2::Sha256::new();
        hasher.update(config.settings_fingerprint("featurize train blend evaluate").as_bytes());
        for name in &config.recipes {
            hasher.update(name.as_bytes());
        }
        hex(&hasher.finalize()[..16])
    };
    let report = RunReport {
        seed: config.seed,
        strategy: config.strategy.name().to_string(),
        recipes,
        blended_fold_losses: blended_losses,
        blended_mean,
        blended_std,
        blended_balanced_mean,
        fingerprint,
    };

    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Validation(format!("report serialization: {e}")))?;
    let json_path = config.output.join("report.json");
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    let txt_path = config.output.join("report.txt");
    std::fs::write(&txt_path, report.render_table()).map_err(|e| Error::io(&txt_path, e))?;

    Ok((
        report,
        StageStatus {
            stage: "evaluate".into(),
            cache_hit: false,
        },
    ))
}

/// The whole pipeline: prepare, featurize and train every recipe, predict,
/// blend, evaluate. Returns the final report and per-stage cache statuses.
pub fn cmd_run_all(config: &PipelineConfig) -> Result<(RunReport, Vec<StageStatus>)> {
    let _lock = OutputLock::acquire(&config.output)?;
    run_all_locked(config)
}

fn run_all_locked(config: &PipelineConfig) -> Result<(RunReport, Vec<StageStatus>)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.max(1))
        .build()
        .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut statuses = Vec::new();
        let (corpus, status) = cmd_prepare(config)?;
        statuses.push(status);
        for name in config.recipes.clone() {
            statuses.push(cmd_featurize(config, &corpus, &name)?);
            statuses.push(cmd_train(config, &corpus, &name)?);
            statuses.push(cmd_predict(config, &corpus, &name)?);
        }
        statuses.push(cmd_blend(config, &corpus)?);
        let (report, status) = cmd_evaluate(config, &corpus)?;
        statuses.push(status);
        Ok((report, statuses))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_and_reports_unknown_keys() {
        let content = "\
data.variants = v.csv
data.text = t.txt
output.dir = out
run.seed = 9
split.k = 4
recipes = GBDT_1, GBDT_2
ensemble.strategy = grid
gbdt.rounds = 50
";
        let config = PipelineConfig::parse(content, "test").unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.k, 4);
        assert_eq!(config.recipes, vec!["GBDT_1", "GBDT_2"]);
        assert_eq!(config.strategy, BlendStrategy::Grid);
        assert_eq!(config.gbdt.rounds, 50);

        let bad = "data.variants = v\ndata.text = t\nnot.a.key = 1\n";
        assert!(matches!(
            PipelineConfig::parse(bad, "test"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn config_requires_data_paths() {
        assert!(PipelineConfig::parse("run.seed = 1\n", "test").is_err());
    }

    #[test]
    fn env_overrides_apply() {
        let content = "data.variants = v\ndata.text = t\nrun.seed = 1\n";
        let mut config = PipelineConfig::parse(content, "test").unwrap();
        config.apply_env(
            vec![
                ("GV_RUN_SEED".to_string(), "77".to_string()),
                ("GV_SPLIT_K".to_string(), "3".to_string()),
                ("UNRELATED".to_string(), "x".to_string()),
            ]
            .into_iter(),
        );
        assert_eq!(config.seed, 77);
        assert_eq!(config.k, 3);
    }

    #[test]
    fn unknown_recipe_error_lists_presets() {
        let config = PipelineConfig {
            variants: "v".into(),
            text: "t".into(),
            ..PipelineConfig::default()
        };
        match config.resolve_recipe("NOPE") {
            Err(Error::Config(msg)) => assert!(msg.contains("GBDT_1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(OutputLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn comments_and_inline_comments_parse() {
        let content = "\
# a comment
data.variants = v.csv
data.text = t.txt   # trailing comment
";
        let config = PipelineConfig::parse(content, "test").unwrap();
        assert_eq!(config.text, PathBuf::from("t.txt"));
    }
}
