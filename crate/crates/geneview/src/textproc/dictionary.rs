//! Term dictionaries: fitted vocabularies with document and class frequencies,
//! plus loaders for external term lists (keywords, bioentities).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::{Stopwords, TokenStream};

/// A fitted vocabulary. Column indices are dense and reproducible: terms are
/// ranked by (document frequency desc, term asc) at build time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dictionary {
    pub name: String,
    terms: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    /// Documents seen at fit time (the N of idf).
    pub n_docs: usize,
    /// Classes of the task (the M of class-frequency idf).
    pub class_count: usize,
    document_frequency: Vec<u32>,
    class_frequency: Option<Vec<u32>>,
    /// Category per term for term lists loaded from files.
    categories: Option<Vec<String>>,
}

impl Dictionary {
    fn new(name: String, terms: Vec<String>) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let n = terms.len();
        Dictionary {
            name,
            terms,
            index,
            n_docs: 0,
            class_count: 0,
            document_frequency: vec![0; n],
            class_frequency: None,
            categories: None,
        }
    }

    /// Rebuild the term index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, column: usize) -> &str {
        &self.terms[column]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn document_frequency(&self, column: usize) -> u32 {
        self.document_frequency[column]
    }

    pub fn class_frequency(&self, column: usize) -> Option<u32> {
        self.class_frequency.as_ref().map(|cf| cf[column])
    }

    pub fn has_class_frequencies(&self) -> bool {
        self.class_frequency.is_some()
    }

    pub fn category(&self, column: usize) -> Option<&str> {
        self.categories.as_ref().map(|c| c[column].as_str())
    }

    /// Restrict a term list to one category, keeping file order.
    pub fn subset_by_category(&self, category: &str) -> Dictionary {
        let cats = self.categories.as_deref().unwrap_or(&[]);
        let terms: Vec<String> = self
            .terms
            .iter()
            .zip(cats)
            .filter(|(_, c)| c.as_str() == category)
            .map(|(t, _)| t.clone())
            .collect();
        let mut dict = Dictionary::new(format!("{}:{category}", self.name), terms);
        dict.categories = Some(vec![category.to_string(); dict.len()]);
        dict
    }

    /// Stable content hash over terms and counts.
    pub fn fingerprint(&self, hasher: &mut sha2::Sha256) {
        use sha2::Digest;
        hasher.update(self.name.as_bytes());
        hasher.update(self.n_docs.to_le_bytes());
        hasher.update(self.class_count.to_le_bytes());
        for (i, t) in self.terms.iter().enumerate() {
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
            hasher.update(self.document_frequency[i].to_le_bytes());
            if let Some(cf) = &self.class_frequency {
                hasher.update(cf[i].to_le_bytes());
            }
        }
    }
}

/// Count df/cf over normalized tokens and build a ranked dictionary.
///
/// Stop words are dropped before counting. Terms must appear in at least
/// `min_df` documents; `max_terms` truncates the ranking when set.
pub fn build_dictionary(
    name: &str,
    streams: &[TokenStream],
    labels: Option<&[u8]>,
    min_df: u32,
    max_terms: Option<usize>,
    stopwords: &Stopwords,
) -> Result<Dictionary> {
    build_from_terms(
        name,
        streams.len(),
        labels,
        min_df,
        max_terms,
        streams.iter().map(|s| {
            s.tokens()
                .iter()
                .filter(|t| !stopwords.contains(&t.surface.to_lowercase()))
                .map(|t| t.normalized.clone())
                .collect()
        }),
    )
}

/// Build a dictionary over word n-grams (length `n_min..=n_max`, joined with
/// `_`); grams never cross sentence boundaries.
pub fn build_ngram_dictionary(
    name: &str,
    streams: &[TokenStream],
    labels: Option<&[u8]>,
    n_min: usize,
    n_max: usize,
    min_df: u32,
    max_terms: Option<usize>,
    stopwords: &Stopwords,
) -> Result<Dictionary> {
    if n_min == 0 || n_min > n_max {
        return Err(Error::Validation(format!(
            "invalid n-gram range {n_min}..{n_max}"
        )));
    }
    build_from_terms(
        name,
        streams.len(),
        labels,
        min_df,
        max_terms,
        streams
            .iter()
            .map(|s| word_ngrams(s, n_min, n_max, stopwords)),
    )
}

/// Enumerate a stream's n-grams per the dictionary rules.
pub fn word_ngrams(
    stream: &TokenStream,
    n_min: usize,
    n_max: usize,
    stopwords: &Stopwords,
) -> Vec<String> {
    let mut grams = Vec::new();
    for sentence in stream.sentences() {
        let words: Vec<&str> = sentence
            .iter()
            .filter(|t| !stopwords.contains(&t.surface.to_lowercase()))
            .map(|t| t.normalized.as_str())
            .collect();
        for n in n_min..=n_max {
            if words.len() < n {
                continue;
            }
            for window in words.windows(n) {
                grams.push(window.join("_"));
            }
        }
    }
    grams
}

/// Build a dictionary over character n-grams of entity names, all lengths
/// `1..=n_max`, taken over the name padded with `^` and `$` markers.
pub fn build_char_ngram_dictionary(
    name: &str,
    names: &[&str],
    n_max: usize,
    min_df: u32,
    max_terms: Option<usize>,
) -> Result<Dictionary> {
    build_from_terms(
        name,
        names.len(),
        None,
        min_df,
        max_terms,
        names.iter().map(|n| char_ngrams(n, n_max)),
    )
}

/// All character n-grams of lengths `1..=n_max` over `^name$`.
pub fn char_ngrams(name: &str, n_max: usize) -> Vec<String> {
    let padded: Vec<char> = std::iter::once('^')
        .chain(name.chars())
        .chain(std::iter::once('$'))
        .collect();
    let mut grams = Vec::new();
    for n in 1..=n_max.min(padded.len()) {
        for window in padded.windows(n) {
            grams.push(window.iter().collect());
        }
    }
    grams
}

fn build_from_terms(
    name: &str,
    n_docs: usize,
    labels: Option<&[u8]>,
    min_df: u32,
    max_terms: Option<usize>,
    docs: impl Iterator<Item = Vec<String>>,
) -> Result<Dictionary> {
    if let Some(labels) = labels {
        if labels.len() != n_docs {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {n_docs} documents",
                labels.len()
            )));
        }
    }
    let mut df: BTreeMap<String, u32> = BTreeMap::new();
    let mut classes: BTreeMap<String, BTreeSet<u8>> = BTreeMap::new();
    for (doc_idx, terms) in docs.enumerate() {
        let unique: BTreeSet<String> = terms.into_iter().collect();
        for term in unique {
            if let Some(labels) = labels {
                classes.entry(term.clone()).or_default().insert(labels[doc_idx]);
            }
            *df.entry(term).or_insert(0) += 1;
        }
    }

    let mut ranked: Vec<(String, u32)> = df
        .into_iter()
        .filter(|&(_, count)| count >= min_df)
        .collect();
    // (df desc, term asc); BTreeMap iteration already yields term asc.
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if let Some(cap) = max_terms {
        ranked.truncate(cap);
    }
    if ranked.is_empty() {
        return Err(Error::Validation(format!(
            "dictionary `{name}` is empty after min_df={min_df} filtering"
        )));
    }

    let terms: Vec<String> = ranked.iter().map(|(t, _)| t.clone()).collect();
    let mut dict = Dictionary::new(name.to_string(), terms);
    dict.n_docs = n_docs;
    dict.class_count = crate::corpus::CLASS_COUNT;
    dict.document_frequency = ranked.iter().map(|&(_, c)| c).collect();
    if labels.is_some() {
        dict.class_frequency = Some(
            dict.terms
                .iter()
                .map(|t| classes.get(t).map_or(0, |s| s.len() as u32))
                .collect(),
        );
    }
    Ok(dict)
}

/// Load a term list: one term per line, optionally `term<TAB>category`.
/// Column order is file order. Duplicate terms error with both line numbers.
pub fn load_term_list(path: &Path) -> Result<Dictionary> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_term_list(&content, &path.display().to_string())
}

pub fn parse_term_list(content: &str, origin: &str) -> Result<Dictionary> {
    let mut terms = Vec::new();
    let mut categories = Vec::new();
    let mut any_category = false;
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (term, category) = match line.split_once('\t') {
            Some((t, c)) => (t.trim(), c.trim()),
            None => (line.trim(), ""),
        };
        if let Some(&first) = seen.get(term) {
            return Err(Error::parse(
                origin,
                line_no,
                format!("duplicate term `{term}` (first at line {first})"),
            ));
        }
        seen.insert(term.to_string(), line_no);
        terms.push(term.to_string());
        if !category.is_empty() {
            any_category = true;
        }
        categories.push(category.to_string());
    }
    let mut dict = Dictionary::new(origin.to_string(), terms);
    if any_category {
        dict.categories = Some(categories);
    }
    Ok(dict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::tokenize;

    fn streams(texts: &[&str]) -> Vec<TokenStream> {
        texts.iter().map(|t| tokenize(t)).collect()
    }

    #[test]
    fn df_counts_documents_not_occurrences() {
        let docs = streams(&["kinase kinase binds", "kinase signal"]);
        let dict =
            build_dictionary("d", &docs, None, 1, None, &Stopwords::empty()).unwrap();
        let col = dict.column("kinas").unwrap();
        assert_eq!(dict.document_frequency(col), 2);
    }

    #[test]
    fn cf_counts_distinct_classes() {
        let docs = streams(&["tumor", "tumor", "tumor"]);
        let dict =
            build_dictionary("d", &docs, Some(&[1, 1, 3]), 1, None, &Stopwords::empty()).unwrap();
        let col = dict.column("tumor").unwrap();
        assert_eq!(dict.class_frequency(col), Some(2));
    }

    #[test]
    fn min_df_filters_vocabulary() {
        let docs = streams(&["a b", "b c"]);
        let dict =
            build_dictionary("d", &docs, None, 2, None, &Stopwords::empty()).unwrap();
        assert_eq!(dict.terms(), ["b"]);
    }

    #[test]
    fn ranking_is_df_desc_then_term_asc() {
        let docs = streams(&["beta alpha", "beta gamma", "gamma"]);
        let dict =
            build_dictionary("d", &docs, None, 1, None, &Stopwords::empty()).unwrap();
        assert_eq!(dict.terms(), ["beta", "gamma", "alpha"]);
    }

    #[test]
    fn build_is_order_independent() {
        let a = streams(&["one two", "two three", "three four"]);
        let b = streams(&["three four", "one two", "two three"]);
        let da = build_dictionary("d", &a, None, 1, None, &Stopwords::empty()).unwrap();
        let db = build_dictionary("d", &b, None, 1, None, &Stopwords::empty()).unwrap();
        assert_eq!(da.terms(), db.terms());
        for col in 0..da.len() {
            assert_eq!(da.document_frequency(col), db.document_frequency(col));
        }
    }

    #[test]
    fn empty_vocabulary_errors() {
        let docs = streams(&["a", "b"]);
        assert!(build_dictionary("d", &docs, None, 3, None, &Stopwords::empty()).is_err());
    }

    #[test]
    fn ngrams_respect_sentence_boundaries() {
        let stream = tokenize("aa bb. Cc dd");
        let grams = word_ngrams(&stream, 1, 3, &Stopwords::empty());
        assert!(grams.contains(&"aa_bb".to_string()));
        assert!(grams.contains(&"cc_dd".to_string()));
        assert!(!grams.contains(&"bb_cc".to_string()));
        assert!(!grams.contains(&"aa_bb_cc".to_string()));
    }

    #[test]
    fn char_ngrams_use_boundary_markers() {
        let grams = char_ngrams("AB", 8);
        let want: Vec<&str> = vec!["^", "A", "B", "$", "^A", "AB", "B$", "^AB", "AB$", "^AB$"];
        assert_eq!(grams.len(), want.len());
        for g in want {
            assert!(grams.contains(&g.to_string()), "missing {g}");
        }
    }

    #[test]
    fn term_list_keeps_file_order() {
        let dict = parse_term_list("cisplatin\nerbb2\nmelanoma\n", "test").unwrap();
        assert_eq!(dict.terms(), ["cisplatin", "erbb2", "melanoma"]);
        assert_eq!(dict.column("erbb2"), Some(1));
    }

    #[test]
    fn term_list_duplicate_errors_with_lines() {
        match parse_term_list("a\nb\na\n", "test") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("line 1"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn term_list_categories_round_trip() {
        let content = "cisplatin\tchemical\nmelanoma\tdisease\nerbb2\tgene\nv600e\tmutation\n";
        let dict = parse_term_list(content, "test").unwrap();
        let genes = dict.subset_by_category("gene");
        assert_eq!(genes.terms(), ["erbb2"]);
        let chems = dict.subset_by_category("chemical");
        assert_eq!(chems.terms(), ["cisplatin"]);
    }
}
