//! Feature recipes: named cross-view combinations of generators and reducers.
//!
//! A recipe file is line-oriented:
//!
//! ```text
//! name = GBDT_1
//! view.document = pos_counts
//! view.document = pos_counts reduce=nmf k=60
//! view.entity_text = ngram reduce=nmf k=120
//! view.entity_name = word_embedding
//! ```
//!
//! Nine presets ship with the crate, mirroring the feature combinations the
//! competition models were trained on.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViewKind {
    Document,
    EntityText,
    EntityName,
}

impl ViewKind {
    pub fn key(self) -> &'static str {
        match self {
            ViewKind::Document => "document",
            ViewKind::EntityText => "entity_text",
            ViewKind::EntityName => "entity_name",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReducerKind {
    Svd,
    Nmf,
    Lda,
}

impl ReducerKind {
    pub fn name(self) -> &'static str {
        match self {
            ReducerKind::Svd => "svd",
            ReducerKind::Nmf => "nmf",
            ReducerKind::Lda => "lda",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducerSpec {
    pub kind: ReducerKind,
    pub k: usize,
}

/// One generator invocation with its parameters and optional reducer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub name: String,
    pub params: BTreeMap<String, String>,
    pub reducer: Option<ReducerSpec>,
}

impl GeneratorSpec {
    pub fn param_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::Config(format!("generator {}: bad {key}={v}", self.name))
            }),
        }
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(|s| s.as_str())
    }

    /// Stable id for space naming and fitted-state files.
    pub fn id(&self) -> String {
        let mut s = self.name.clone();
        for (k, v) in &self.params {
            s.push_str(&format!(".{k}={v}"));
        }
        if let Some(r) = &self.reducer {
            s.push_str(&format!("+{}{}", r.kind.name(), r.k));
        }
        s
    }
}

/// A named feature combination across the three views.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRecipe {
    pub name: String,
    pub document: Vec<GeneratorSpec>,
    pub entity_text: Vec<GeneratorSpec>,
    pub entity_name: Vec<GeneratorSpec>,
}

impl FeatureRecipe {
    pub fn views(&self) -> [(ViewKind, &[GeneratorSpec]); 3] {
        [
            (ViewKind::Document, self.document.as_slice()),
            (ViewKind::EntityText, self.entity_text.as_slice()),
            (ViewKind::EntityName, self.entity_name.as_slice()),
        ]
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_recipe(&content, &path.display().to_string())
    }
}

const GENERATORS_DOCUMENT: &[&str] = &[
    "pos_counts",
    "pos_tfidf",
    "term_frequency",
    "ngram",
    "sentence_tfidf",
    "paragraph_vector",
    "bioentity_counts",
    "keyword_counts",
];
const GENERATORS_ENTITY_TEXT: &[&str] = &[
    "pos_counts",
    "pos_tfidf",
    "term_frequency",
    "ngram",
    "sentence_tfidf",
];
const GENERATORS_ENTITY_NAME: &[&str] = &["word_embedding", "char_encoding", "char_ngram"];

fn allowed(view: ViewKind) -> &'static [&'static str] {
    match view {
        ViewKind::Document => GENERATORS_DOCUMENT,
        ViewKind::EntityText => GENERATORS_ENTITY_TEXT,
        ViewKind::EntityName => GENERATORS_ENTITY_NAME,
    }
}

/// Parse a recipe from its text form.
pub fn parse_recipe(content: &str, origin: &str) -> Result<FeatureRecipe> {
    let mut name = None;
    let mut document = Vec::new();
    let mut entity_text = Vec::new();
    let mut entity_name = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(origin, line_no, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "name" => name = Some(value.to_string()),
            "view.document" => {
                document.push(parse_generator(value, ViewKind::Document, origin, line_no)?)
            }
            "view.entity_text" => {
                entity_text.push(parse_generator(value, ViewKind::EntityText, origin, line_no)?)
            }
            "view.entity_name" => {
                entity_name.push(parse_generator(value, ViewKind::EntityName, origin, line_no)?)
            }
            other => {
                return Err(Error::parse(
                    origin,
                    line_no,
                    format!("unknown recipe key `{other}`"),
                ))
            }
        }
    }
    let name = name.ok_or_else(|| Error::Config(format!("{origin}: recipe has no name")))?;
    if document.is_empty() && entity_text.is_empty() && entity_name.is_empty() {
        return Err(Error::Config(format!(
            "{origin}: recipe `{name}` declares no generators"
        )));
    }
    Ok(FeatureRecipe {
        name,
        document,
        entity_text,
        entity_name,
    })
}

fn parse_generator(
    value: &str,
    view: ViewKind,
    origin: &str,
    line_no: usize,
) -> Result<GeneratorSpec> {
    let mut parts = value.split_whitespace();
    let name = parts
        .next()
        .ok_or_else(|| Error::parse(origin, line_no, "empty generator"))?
        .to_string();
    if !allowed(view).contains(&name.as_str()) {
        return Err(Error::parse(
            origin,
            line_no,
            format!(
                "generator `{name}` is not available in the {} view (known: {})",
                view.key(),
                allowed(view).join(", ")
            ),
        ));
    }
    let mut params = BTreeMap::new();
    let mut reduce: Option<ReducerKind> = None;
    let mut k: Option<usize> = None;
    for part in parts {
        let (pk, pv) = part
            .split_once('=')
            .ok_or_else(|| Error::parse(origin, line_no, format!("bad parameter `{part}`")))?;
        match pk {
            "reduce" => {
                reduce = Some(match pv {
                    "svd" => ReducerKind::Svd,
                    "nmf" => ReducerKind::Nmf,
                    "lda" => ReducerKind::Lda,
                    other => {
                        return Err(Error::parse(
                            origin,
                            line_no,
                            format!("unknown reducer `{other}`"),
                        ))
                    }
                })
            }
            "k" => {
                k = Some(pv.parse().map_err(|_| {
                    Error::parse(origin, line_no, format!("bad k `{pv}`"))
                })?)
            }
            _ => {
                params.insert(pk.to_string(), pv.to_string());
            }
        }
    }
    let reducer = match (reduce, k) {
        (Some(kind), Some(k)) => {
            if k == 0 {
                return Err(Error::parse(origin, line_no, "k must be positive"));
            }
            Some(ReducerSpec { kind, k })
        }
        (Some(_), None) => {
            return Err(Error::parse(origin, line_no, "reduce needs k=<dim>"));
        }
        (None, Some(_)) => {
            return Err(Error::parse(origin, line_no, "k needs reduce=<kind>"));
        }
        (None, None) => None,
    };
    Ok(GeneratorSpec {
        name,
        params,
        reducer,
    })
}

macro_rules! presets {
    ($(($name:literal, $body:literal)),* $(,)?) => {
        /// Names of the shipped presets, in order.
        pub fn preset_names() -> Vec<&'static str> {
            vec![$($name),*]
        }

        /// Load one shipped preset by name.
        pub fn preset_recipe(name: &str) -> Result<FeatureRecipe> {
            match name {
                $($name => parse_recipe(concat!("name = ", $name, "\n", $body), $name),)*
                other => Err(Error::Config(format!(
                    "unknown recipe `{other}`; shipped presets: {}",
                    preset_names().join(", ")
                ))),
            }
        }
    };
}

presets![
    (
        "GBDT_1",
        "view.document = pos_counts\n\
         view.document = pos_counts reduce=nmf k=60\n\
         view.document = ngram reduce=nmf k=120\n\
         view.document = bioentity_counts\n\
         view.entity_text = ngram reduce=nmf k=120\n\
         view.entity_name = word_embedding\n\
         view.entity_name = char_encoding\n"
    ),
    (
        "GBDT_2",
        "view.document = paragraph_vector\n\
         view.document = sentence_tfidf reduce=svd k=100\n\
         view.document = term_frequency reduce=lda k=50\n\
         view.document = bioentity_counts\n\
         view.document = keyword_counts\n\
         view.entity_text = sentence_tfidf reduce=svd k=100\n\
         view.entity_name = word_embedding\n\
         view.entity_name = char_encoding\n"
    ),
    (
        "GBDT_3",
        "view.document = pos_counts\n\
         view.document = pos_counts reduce=nmf k=60\n\
         view.document = sentence_tfidf reduce=svd k=100\n\
         view.document = keyword_counts\n\
         view.entity_text = sentence_tfidf reduce=svd k=100\n\
         view.entity_name = word_embedding\n"
    ),
    (
        "GBDT_4",
        "view.document = pos_tfidf\n\
         view.document = sentence_tfidf reduce=svd k=100\n\
         view.document = bioentity_counts\n\
         view.entity_text = pos_tfidf\n\
         view.entity_name = word_embedding\n\
         view.entity_name = char_encoding\n"
    ),
    (
        "GBDT_5",
        "view.document = pos_counts\n\
         view.document = pos_counts reduce=nmf k=60\n\
         view.document = pos_tfidf\n\
         view.entity_text = pos_tfidf\n\
         view.entity_name = word_embedding\n"
    ),
    (
        "GBDT_6",
        "view.document = ngram reduce=nmf k=120\n\
         view.document = pos_counts\n\
         view.document = pos_counts reduce=nmf k=60\n\
         view.document = bioentity_counts\n\
         view.entity_text = ngram reduce=nmf k=120\n\
         view.entity_name = word_embedding\n\
         view.entity_name = char_encoding\n"
    ),
    (
        "GBDT_7",
        "view.document = pos_tfidf\n\
         view.document = pos_counts reduce=nmf k=60\n\
         view.document = sentence_tfidf reduce=svd k=100\n\
         view.document = ngram reduce=nmf k=120\n\
         view.entity_text = pos_tfidf reduce=svd k=100\n\
         view.entity_name = word_embedding\n"
    ),
    (
        "GBDT_8",
        "view.document = sentence_tfidf reduce=svd k=100\n\
         view.document = pos_counts\n\
         view.document = pos_counts reduce=nmf k=60\n\
         view.document = keyword_counts\n\
         view.entity_text = sentence_tfidf reduce=svd k=100\n\
         view.entity_name = word_embedding\n\
         view.entity_name = char_encoding\n"
    ),
    (
        "GBDT_9",
        "view.document = pos_tfidf\n\
         view.document = sentence_tfidf reduce=svd k=100\n\
         view.document = bioentity_counts\n\
         view.entity_text = pos_tfidf\n\
         view.entity_name = word_embedding\n\
         view.entity_name = char_encoding\n"
    ),
];
