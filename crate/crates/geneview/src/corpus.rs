//! Competition file parsing, sample joining, and evaluation splits.
//!
//! Two input files describe the data: a comma-separated variants file
//! (`ID,Gene,Variation[,Class]`) and a text file whose rows are
//! `<id>||<document>`. [`join`] resolves each variant id against its document
//! and deduplicates identical texts, so several samples may point at one
//! stored document — a real phenomenon in this data that the entity text view
//! exists to counter.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of mutation classes in the task.
pub const CLASS_COUNT: usize = 9;

/// A variant row before its text has been resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub id: u64,
    pub gene: String,
    pub mutation: String,
    /// Class label in `1..=CLASS_COUNT` when the file carries a Class column.
    pub label: Option<u8>,
}

/// A fully joined `<gene, mutation, document>` triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub gene: String,
    pub mutation: String,
    /// Index into [`Corpus::documents`].
    pub doc_id: usize,
    pub label: Option<u8>,
}

/// Joined samples plus the deduplicated document store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    /// `doc_id -> raw text`; identical texts share one entry.
    pub documents: Vec<String>,
    pub class_count: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn document(&self, doc_id: usize) -> &str {
        &self.documents[doc_id]
    }

    /// Labels for every sample; `None` entries for unlabeled rows.
    pub fn labels(&self) -> Vec<Option<u8>> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Indices of samples that carry a label.
    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].label.is_some())
            .collect()
    }

    /// Restrict the corpus to the given sample indices, re-deduplicating the
    /// document store so only referenced texts remain.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        let mut doc_map: HashMap<usize, usize> = HashMap::new();
        let mut documents = Vec::new();
        let mut samples = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            let doc_id = *doc_map.entry(s.doc_id).or_insert_with(|| {
                documents.push(self.documents[s.doc_id].clone());
                documents.len() - 1
            });
            samples.push(Sample {
                doc_id,
                ..s.clone()
            });
        }
        Corpus {
            samples,
            documents,
            class_count: self.class_count,
        }
    }
}

/// How to partition a corpus for offline evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitKind {
    /// Fixed partition driven by a sidecar file listing validation ids.
    Stage1Fixed { validation_ids: Vec<u64> },
    KFold { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn kfold(k: usize, seed: u64, stratified: bool) -> Self {
        SplitSpec {
            kind: SplitKind::KFold { k },
            seed,
            stratified,
        }
    }

    pub fn stage1_fixed(validation_ids: Vec<u64>) -> Self {
        SplitSpec {
            kind: SplitKind::Stage1Fixed { validation_ids },
            seed: 0,
            stratified: false,
        }
    }
}

/// One train/validation partition as index sets into `corpus.samples`.
pub type Fold = (Vec<usize>, Vec<usize>);

/// Parse a variants file. Header must be `ID,Gene,Variation` with an optional
/// trailing `Class` column; every data row must match the header's field count.
pub fn parse_variants(path: &Path) -> Result<Vec<VariantRecord>> {
    let content = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let content = String::from_utf8_lossy(&content);
    parse_variants_str(&content, &path.display().to_string())
}

pub fn parse_variants_str(content: &str, origin: &str) -> Result<Vec<VariantRecord>> {
    let mut lines = content.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(origin, 1, "empty file, expected header"))?;
    let labeled = match header.trim_end() {
        "ID,Gene,Variation,Class" => true,
        "ID,Gene,Variation" => false,
        other => {
            return Err(Error::parse(
                origin,
                1,
                format!("unrecognized header `{other}`"),
            ))
        }
    };
    let want_fields = if labeled { 4 } else { 3 };

    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != want_fields {
            return Err(Error::parse(
                origin,
                line_no,
                format!("expected {want_fields} fields, found {}", fields.len()),
            ));
        }
        let id: u64 = fields[0].trim().parse().map_err(|_| {
            Error::parse(origin, line_no, format!("invalid id `{}`", fields[0]))
        })?;
        let gene = fields[1].trim().to_string();
        let mutation = fields[2].trim().to_string();
        if gene.is_empty() || mutation.is_empty() {
            return Err(Error::parse(origin, line_no, "empty gene or mutation name"));
        }
        let label = if labeled {
            let raw: i64 = fields[3].trim().parse().map_err(|_| {
                Error::parse(origin, line_no, format!("invalid class `{}`", fields[3]))
            })?;
            if !(1..=CLASS_COUNT as i64).contains(&raw) {
                return Err(Error::Validation(format!(
                    "{origin}:{line_no}: class {raw} outside 1..{CLASS_COUNT}"
                )));
            }
            Some(raw as u8)
        } else {
            None
        };
        records.push(VariantRecord {
            id,
            gene,
            mutation,
            label,
        });
    }
    Ok(records)
}

/// Parse a text file: header `ID,Text`, then `<id>||<text>` rows. Rows split
/// on the first `||` only; texts are kept verbatim.
pub fn parse_text(path: &Path) -> Result<BTreeMap<u64, String>> {
    let content = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let content = String::from_utf8_lossy(&content);
    parse_text_str(&content, &path.display().to_string())
}

pub fn parse_text_str(content: &str, origin: &str) -> Result<BTreeMap<u64, String>> {
    let mut lines = content.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(origin, 1, "empty file, expected header"))?;
    if header.trim_end() != "ID,Text" {
        return Err(Error::parse(
            origin,
            1,
            format!("unrecognized header `{}`", header.trim_end()),
        ));
    }

    let mut texts = BTreeMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let (id_part, text) = line
            .split_once("||")
            .ok_or_else(|| Error::parse(origin, line_no, "missing `||` delimiter"))?;
        let id: u64 = id_part.trim().parse().map_err(|_| {
            Error::parse(origin, line_no, format!("invalid id `{id_part}`"))
        })?;
        if texts.insert(id, text.to_string()).is_some() {
            return Err(Error::parse(origin, line_no, format!("duplicate id {id}")));
        }
    }
    Ok(texts)
}

/// Join variant rows against their texts. Identical texts share one document
/// slot, making cross-sample text sharing explicit.
pub fn join(variants: Vec<VariantRecord>, texts: &BTreeMap<u64, String>) -> Result<Corpus> {
    let missing: Vec<u64> = variants
        .iter()
        .filter(|v| !texts.contains_key(&v.id))
        .map(|v| v.id)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingText(missing));
    }
    let mut seen: std::collections::HashSet<u64> = std::collections::HashSet::new();
    for v in &variants {
        if !seen.insert(v.id) {
            return Err(Error::Validation(format!("duplicate sample id {}", v.id)));
        }
    }

    let mut documents: Vec<String> = Vec::new();
    let mut by_text: HashMap<&str, usize> = HashMap::new();
    let mut samples = Vec::with_capacity(variants.len());
    for v in variants {
        let text = texts.get(&v.id).expect("checked above").as_str();
        let doc_id = *by_text.entry(text).or_insert_with(|| {
            documents.push(text.to_string());
            documents.len() - 1
        });
        samples.push(Sample {
            id: v.id,
            gene: v.gene,
            mutation: v.mutation,
            doc_id,
            label: v.label,
        });
    }

    Ok(Corpus {
        samples,
        documents,
        class_count: CLASS_COUNT,
    })
}

/// Load a split sidecar file: one sample id per line.
pub fn load_split_ids(path: &Path) -> Result<Vec<u64>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let mut ids = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let id = line
            .parse()
            .map_err(|_| Error::parse(&origin, idx + 1, format!("invalid id `{line}`")))?;
        ids.push(id);
    }
    Ok(ids)
}

/// Produce train/validation folds per the spec. Deterministic for a fixed
/// seed; stratified folds keep per-class proportions within one sample.
pub fn split(corpus: &Corpus, spec: &SplitSpec) -> Result<Vec<Fold>> {
    match &spec.kind {
        SplitKind::Stage1Fixed { validation_ids } => {
            let val_set: std::collections::HashSet<u64> = validation_ids.iter().copied().collect();
            let mut train = Vec::new();
            let mut val = Vec::new();
            for (i, s) in corpus.samples.iter().enumerate() {
                if val_set.contains(&s.id) {
                    val.push(i);
                } else {
                    train.push(i);
                }
            }
            if val.len() != val_set.len() {
                return Err(Error::Validation(format!(
                    "sidecar lists {} validation ids but only {} were found in the corpus",
                    val_set.len(),
                    val.len()
                )));
            }
            Ok(vec![(train, val)])
        }
        SplitKind::KFold { k } => kfold(corpus, *k, spec.seed, spec.stratified),
    }
}

fn kfold(corpus: &Corpus, k: usize, seed: u64, stratified: bool) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Validation(format!("kfold requires k >= 2, got {k}")));
    }
    let labeled = corpus.labeled_indices();
    if labeled.len() != corpus.len() {
        return Err(Error::Validation(
            "kfold split requires a fully labeled corpus".into(),
        ));
    }

    let mut fold_of = vec![0usize; corpus.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if stratified {
        let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for &i in &labeled {
            by_class
                .entry(corpus.samples[i].label.unwrap())
                .or_default()
                .push(i);
        }
        for (class, mut members) in by_class {
            if members.len() < k {
                return Err(Error::Validation(format!(
                    "class {class} has {} samples, fewer than k={k}",
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            for (pos, idx) in members.into_iter().enumerate() {
                fold_of[idx] = pos % k;
            }
        }
    } else {
        let mut order = labeled.clone();
        order.shuffle(&mut rng);
        for (pos, idx) in order.into_iter().enumerate() {
            fold_of[idx] = pos % k;
        }
    }

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for i in 0..corpus.len() {
            if fold_of[i] == f {
                val.push(i);
            } else {
                train.push(i);
            }
        }
        folds.push((train, val));
    }
    Ok(folds)
}
