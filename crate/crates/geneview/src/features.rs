//! Sparse feature vectors and the per-view feature generators.
//!
//! Every generator is a pure function of its inputs and fitted state
//! (dictionaries, idf tables, reducers), so re-running a fitted pipeline
//! reproduces its output bit for bit. Generators emit [`SparseVector`]s in a
//! named space; [`concat`] shifts parts into a combined space in the declared
//! recipe order.

mod recipe;

pub use recipe::{
    parse_recipe, preset_names, preset_recipe, FeatureRecipe, GeneratorSpec, ReducerKind,
    ReducerSpec, ViewKind,
};

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::{Dictionary, TokenStream};

/// Indexed feature values over a named space. Entries are sorted by column,
/// hold no explicit zeros, and every value is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub space: String,
    pub dim: usize,
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn empty(space: impl Into<String>, dim: usize) -> Self {
        SparseVector {
            space: space.into(),
            dim,
            entries: Vec::new(),
        }
    }

    /// Build from (column, value) pairs; zeros dropped, columns must be
    /// unique and in range, values finite.
    pub fn from_entries(
        space: impl Into<String>,
        dim: usize,
        mut entries: Vec<(u32, f64)>,
    ) -> Result<Self> {
        entries.retain(|&(_, v)| v != 0.0);
        entries.sort_unstable_by_key(|&(c, _)| c);
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Validation(format!(
                    "duplicate column {} in sparse vector",
                    pair[0].0
                )));
            }
        }
        if let Some(&(last, _)) = entries.last() {
            if last as usize >= dim {
                return Err(Error::Validation(format!(
                    "column {last} out of range for dimension {dim}"
                )));
            }
        }
        if entries.iter().any(|&(_, v)| !v.is_finite()) {
            return Err(Error::Validation("non-finite value in sparse vector".into()));
        }
        Ok(SparseVector {
            space: space.into(),
            dim,
            entries,
        })
    }

    /// Dense row, mostly for small fixtures and oracle tests.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dim];
        for &(c, v) in &self.entries {
            dense[c as usize] = v;
        }
        dense
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, column: u32) -> f64 {
        self.entries
            .binary_search_by_key(&column, |&(c, _)| c)
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt()
    }
}

/// N sparse rows sharing one space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub space: String,
    pub dim: usize,
    rows: Vec<SparseVector>,
}

impl FeatureMatrix {
    pub fn new(space: impl Into<String>, dim: usize) -> Self {
        FeatureMatrix {
            space: space.into(),
            dim,
            rows: Vec::new(),
        }
    }

    pub fn from_rows(rows: Vec<SparseVector>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Validation("feature matrix needs at least one row".into()))?;
        let space = first.space.clone();
        let dim = first.dim;
        for r in &rows {
            if r.space != space {
                return Err(Error::SpaceMismatch {
                    expected: space,
                    actual: r.space.clone(),
                });
            }
            if r.dim != dim {
                return Err(Error::ShapeMismatch(format!(
                    "row dimension {} != {dim}",
                    r.dim
                )));
            }
        }
        Ok(FeatureMatrix { space, dim, rows })
    }

    pub fn push(&mut self, row: SparseVector) -> Result<()> {
        if row.space != self.space {
            return Err(Error::SpaceMismatch {
                expected: self.space.clone(),
                actual: row.space,
            });
        }
        if row.dim != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "row dimension {} != {}",
                row.dim, self.dim
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[SparseVector] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Write the text sparse format: `%%matrix <space> <rows> <cols>` then
    /// sorted 0-based `row col value` triples. Values use Rust's shortest
    /// round-trip float formatting, so reloads are bit-exact.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        (|| -> std::io::Result<()> {
            writeln!(w, "%%matrix {} {} {}", self.space, self.rows.len(), self.dim)?;
            for (i, row) in self.rows.iter().enumerate() {
                for &(c, v) in &row.entries {
                    writeln!(w, "{i} {c} {v}")?;
                }
            }
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let origin = path.display().to_string();
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, Ok(h))) => h,
            Some((_, Err(e))) => return Err(Error::io(path, e)),
            None => return Err(Error::parse(&origin, 1, "empty matrix file")),
        };
        let mut parts = header.split_whitespace();
        if parts.next() != Some("%%matrix") {
            return Err(Error::parse(&origin, 1, "missing %%matrix header"));
        }
        let space = parts
            .next()
            .ok_or_else(|| Error::parse(&origin, 1, "missing space id"))?
            .to_string();
        let n_rows: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(&origin, 1, "bad row count"))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(&origin, 1, "bad column count"))?;

        let mut entries: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_rows];
        for (idx, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let mut f = line.split_whitespace();
            let parse_err = || Error::parse(&origin, idx + 1, "expected `row col value`");
            let r: usize = f.next().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
            let c: u32 = f.next().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
            let v: f64 = f.next().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
            if r >= n_rows {
                return Err(Error::parse(&origin, idx + 1, format!("row {r} out of range")));
            }
            entries[r].push((c, v));
        }
        let rows = entries
            .into_iter()
            .map(|e| SparseVector::from_entries(space.clone(), dim, e))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureMatrix { space, dim, rows })
    }
}

/// Raw occurrence counts of dictionary terms in a stream.
pub fn count_vector(stream: &TokenStream, dict: &Dictionary) -> SparseVector {
    let mut counts: HashMap<u32, f64> = HashMap::new();
    for term in stream.normalized_terms() {
        if let Some(col) = dict.column(term) {
            *counts.entry(col as u32).or_insert(0.0) += 1.0;
        }
    }
    SparseVector::from_entries(dict.name.clone(), dict.len(), counts.into_iter().collect())
        .expect("counts are finite and unique")
}

/// Which frequency drives the idf term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdfMode {
    /// Rarity over documents: `ln(N / df_t)`.
    Document,
    /// Rarity over the 9 classes: `ln(M / cf_t)`.
    Class,
}

/// TF-IDF with raw-count tf and natural-log idf. Terms present everywhere
/// (df = N, or cf = M) weigh exactly zero and are omitted.
pub fn tfidf_vector(
    stream: &TokenStream,
    dict: &Dictionary,
    mode: IdfMode,
) -> Result<SparseVector> {
    if mode == IdfMode::Class && !dict.has_class_frequencies() {
        return Err(Error::Validation(format!(
            "dictionary `{}` has no class frequencies; fit it on a labeled corpus",
            dict.name
        )));
    }
    let counts = count_vector(stream, dict);
    let entries: Vec<(u32, f64)> = counts
        .entries()
        .iter()
        .map(|&(c, tf)| (c, tf * idf(dict, c as usize, mode)))
        .collect();
    SparseVector::from_entries(dict.name.clone(), dict.len(), entries)
}

fn idf(dict: &Dictionary, column: usize, mode: IdfMode) -> f64 {
    match mode {
        IdfMode::Document => {
            let df = dict.document_frequency(column).max(1) as f64;
            (dict.n_docs as f64 / df).ln()
        }
        IdfMode::Class => {
            let cf = dict.class_frequency(column).unwrap_or(0).max(1) as f64;
            (dict.class_count as f64 / cf).ln()
        }
    }
}

/// Counts over word n-grams in `n_min..=n_max`, sentence-bounded.
pub fn ngram_vector(
    stream: &TokenStream,
    n_min: usize,
    n_max: usize,
    dict: &Dictionary,
    stopwords: &crate::textproc::Stopwords,
) -> SparseVector {
    let mut counts: HashMap<u32, f64> = HashMap::new();
    for gram in crate::textproc::word_ngrams(stream, n_min, n_max, stopwords) {
        if let Some(col) = dict.column(&gram) {
            *counts.entry(col as u32).or_insert(0.0) += 1.0;
        }
    }
    SparseVector::from_entries(dict.name.clone(), dict.len(), counts.into_iter().collect())
        .expect("counts are finite and unique")
}

/// Sentence-context TF-IDF: for each key sentence, concatenate the TF-IDF
/// vectors of the `window` sentences centred on it (zero blocks past document
/// edges), then average over all key sentences. The entity-text variant uses
/// `window = 1`: key sentences only, no context.
pub fn sentence_context_tfidf(
    stream: &TokenStream,
    key_sentences: &[usize],
    window: usize,
    dict: &Dictionary,
) -> Result<SparseVector> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Validation(format!(
            "window must be odd and positive, got {window}"
        )));
    }
    let space = format!("{}#ctx{window}", dict.name);
    let dim = dict.len() * window;
    if key_sentences.is_empty() {
        return Ok(SparseVector::empty(space, dim));
    }
    let half = window / 2;
    let n_sentences = stream.sentence_count();
    let mut acc: HashMap<u32, f64> = HashMap::new();
    for &key in key_sentences {
        if key >= n_sentences {
            return Err(Error::Validation(format!(
                "key sentence {key} out of range ({n_sentences} sentences)"
            )));
        }
        for slot in 0..window {
            let sentence = key as i64 + slot as i64 - half as i64;
            if sentence < 0 || sentence >= n_sentences as i64 {
                continue;
            }
            let tokens = stream.sentence(sentence as usize);
            let sub = TokenStream::from_tokens(
                tokens
                    .iter()
                    .map(|t| {
                        let mut t = t.clone();
                        t.sentence_index = 0;
                        t
                    })
                    .collect(),
            );
            let tfidf = tfidf_vector(&sub, dict, IdfMode::Document)?;
            let offset = (slot * dict.len()) as u32;
            for &(c, v) in tfidf.entries() {
                *acc.entry(offset + c).or_insert(0.0) += v;
            }
        }
    }
    let scale = 1.0 / key_sentences.len() as f64;
    let entries: Vec<(u32, f64)> = acc.into_iter().map(|(c, v)| (c, v * scale)).collect();
    SparseVector::from_entries(space, dim, entries)
}

/// Counts over character n-grams (all lengths `1..=n`) of a padded name.
pub fn char_ngram_vector(name: &str, n: usize, dict: &Dictionary) -> SparseVector {
    let mut counts: HashMap<u32, f64> = HashMap::new();
    for gram in crate::textproc::char_ngrams(name, n) {
        if let Some(col) = dict.column(&gram) {
            *counts.entry(col as u32).or_insert(0.0) += 1.0;
        }
    }
    SparseVector::from_entries(dict.name.clone(), dict.len(), counts.into_iter().collect())
        .expect("counts are finite and unique")
}

/// Character → small-integer code table over a name alphabet.
/// Code 0 is reserved for padding, the last code for unknown characters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharCodeTable {
    codes: Vec<(char, u32)>,
}

impl CharCodeTable {
    /// Codes assigned in sorted character order for reproducibility.
    pub fn fit(names: &[&str]) -> Self {
        let alphabet: std::collections::BTreeSet<char> =
            names.iter().flat_map(|n| n.chars()).collect();
        CharCodeTable {
            codes: alphabet
                .into_iter()
                .enumerate()
                .map(|(i, c)| (c, i as u32 + 1))
                .collect(),
        }
    }

    pub fn alphabet_size(&self) -> usize {
        self.codes.len()
    }

    pub fn code(&self, c: char) -> u32 {
        self.codes
            .binary_search_by_key(&c, |&(k, _)| k)
            .map_or(self.codes.len() as u32 + 1, |i| self.codes[i].1)
    }

    pub fn fingerprint_into(&self, hasher: &mut sha2::Sha256) {
        use sha2::Digest;
        for &(c, code) in &self.codes {
            hasher.update((c as u32).to_le_bytes());
            hasher.update(code.to_le_bytes());
        }
    }
}

/// Encode the first `length` characters of a name as integer codes,
/// right-padded with zeros.
pub fn label_encode_name(name: &str, table: &CharCodeTable, length: usize) -> Vec<u32> {
    let mut out = vec![0u32; length];
    for (slot, c) in name.chars().take(length).enumerate() {
        out[slot] = table.code(c);
    }
    out
}

/// The declared layout of a concatenated space: (space id, dimension) pairs
/// in recipe order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConcatLayout {
    parts: Vec<(String, usize)>,
}

impl ConcatLayout {
    pub fn new(parts: Vec<(String, usize)>) -> Self {
        ConcatLayout { parts }
    }

    pub fn total_dim(&self) -> usize {
        self.parts.iter().map(|&(_, d)| d).sum()
    }

    pub fn space(&self) -> String {
        let names: Vec<&str> = self.parts.iter().map(|(s, _)| s.as_str()).collect();
        names.join("|")
    }
}

/// Concatenate per-view parts by offsetting each into the combined space.
/// Parts must arrive in the declared layout order.
pub fn concat(parts: &[SparseVector], layout: &ConcatLayout) -> Result<SparseVector> {
    if parts.len() != layout.parts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parts for a {}-part layout",
            parts.len(),
            layout.parts.len()
        )));
    }
    let mut entries = Vec::new();
    let mut offset = 0u32;
    for (part, (space, dim)) in parts.iter().zip(&layout.parts) {
        if &part.space != space {
            return Err(Error::SpaceMismatch {
                expected: space.clone(),
                actual: part.space.clone(),
            });
        }
        if part.dim != *dim {
            return Err(Error::ShapeMismatch(format!(
                "part `{}` has dimension {}, layout says {dim}",
                part.space, part.dim
            )));
        }
        for &(c, v) in part.entries() {
            entries.push((offset + c, v));
        }
        offset += *dim as u32;
    }
    SparseVector::from_entries(layout.space(), layout.total_dim(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::{build_dictionary, tokenize, Stopwords};

    fn dict_over(texts: &[&str], labels: Option<&[u8]>) -> Dictionary {
        let streams: Vec<TokenStream> = texts.iter().map(|t| tokenize(t)).collect();
        build_dictionary("d", &streams, labels, 1, None, &Stopwords::empty()).unwrap()
    }

    #[test]
    fn count_vector_counts_occurrences() {
        let dict = dict_over(&["aa bb", "bb"], None);
        let v = count_vector(&tokenize("aa bb aa"), &dict);
        let col_a = dict.column("aa").unwrap() as u32;
        let col_b = dict.column("bb").unwrap() as u32;
        assert_eq!(v.get(col_a), 2.0);
        assert_eq!(v.get(col_b), 1.0);
        assert_eq!(v.nnz(), 2);
    }

    #[test]
    fn count_vector_of_unseen_terms_is_empty() {
        let dict = dict_over(&["aa"], None);
        let v = count_vector(&tokenize("zz yy"), &dict);
        assert_eq!(v.nnz(), 0);
    }

    #[test]
    fn tfidf_document_mode_hand_fixture() {
        // N=2 docs {a b}, {b}: idf(a) = ln 2, idf(b) = ln 1 = 0.
        let dict = dict_over(&["aa bb", "bb"], None);
        let v = tfidf_vector(&tokenize("aa bb"), &dict, IdfMode::Document).unwrap();
        let col_a = dict.column("aa").unwrap() as u32;
        assert_eq!(v.nnz(), 1);
        assert!((v.get(col_a) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn tfidf_class_mode_zeroes_ubiquitous_terms() {
        // "tt" appears in all 9 classes; "uu" in one.
        let owned: Vec<String> = (1..=9).map(|c| format!("tt common{c}")).collect();
        let mut texts: Vec<&str> = owned.iter().map(|s| s.as_str()).collect();
        texts.push("tt uu");
        let labels: Vec<u8> = (1..=9).chain(std::iter::once(1)).collect();
        let dict = dict_over(&texts, Some(&labels));
        let v = tfidf_vector(&tokenize("tt uu"), &dict, IdfMode::Class).unwrap();
        assert_eq!(v.get(dict.column("tt").unwrap() as u32), 0.0);
        let want = 9f64.ln();
        assert!((v.get(dict.column("uu").unwrap() as u32) - want).abs() < 1e-15);
    }

    #[test]
    fn tfidf_class_mode_requires_labels() {
        let dict = dict_over(&["aa"], None);
        assert!(tfidf_vector(&tokenize("aa"), &dict, IdfMode::Class).is_err());
    }

    #[test]
    fn tfidf_of_empty_stream_is_empty() {
        let dict = dict_over(&["aa"], None);
        let v = tfidf_vector(&tokenize(""), &dict, IdfMode::Document).unwrap();
        assert_eq!(v.nnz(), 0);
    }

    #[test]
    fn single_doc_corpus_tfidf_degenerates_to_zero() {
        // N=1, df=1 everywhere: idf = ln 1 = 0, so the vector vanishes.
        let dict = dict_over(&["aa bb cc"], None);
        let v = tfidf_vector(&tokenize("aa bb"), &dict, IdfMode::Document).unwrap();
        assert_eq!(v.nnz(), 0);
    }

    #[test]
    fn ngram_vector_counts_sentence_bounded_grams() {
        let streams = [tokenize("aa bb cc")];
        let dict = crate::textproc::build_ngram_dictionary(
            "ng",
            &streams,
            None,
            1,
            2,
            1,
            None,
            &Stopwords::empty(),
        )
        .unwrap();
        let v = ngram_vector(&tokenize("aa bb cc"), 1, 2, &dict, &Stopwords::empty());
        assert_eq!(v.get(dict.column("aa_bb").unwrap() as u32), 1.0);
        assert_eq!(v.get(dict.column("cc").unwrap() as u32), 1.0);
        assert_eq!(v.nnz(), 5);
    }

    #[test]
    fn sentence_context_single_key_is_pure_concatenation() {
        let text = "Alpha one. Beta two. Gamma three.";
        let dict = dict_over(&[text, "unrelated words"], None);
        let stream = tokenize(text);
        let v = sentence_context_tfidf(&stream, &[1], 3, &dict).unwrap();
        assert_eq!(v.dim, 3 * dict.len());
        let expected = 2f64.ln();
        // Left block holds sentence 0, middle block sentence 1.
        let col_alpha = dict.column("alpha").unwrap() as u32;
        assert!((v.get(col_alpha) - expected).abs() < 1e-12);
        let col_beta = dict.column("beta").unwrap() as u32 + dict.len() as u32;
        assert!((v.get(col_beta) - expected).abs() < 1e-12);
    }

    #[test]
    fn sentence_context_pads_edges_with_zero_blocks() {
        let text = "Alpha one. Beta two.";
        let dict = dict_over(&[text, "zz"], None);
        let stream = tokenize(text);
        let v = sentence_context_tfidf(&stream, &[0], 3, &dict).unwrap();
        // Key at index 0: the left block has no sentence, so no entry below
        // dict.len().
        assert!(v.entries().iter().all(|&(c, _)| c >= dict.len() as u32));
        assert!(v.nnz() > 0);
    }

    #[test]
    fn sentence_context_averages_over_keys() {
        let text = "Alpha one. Beta two. Gamma three.";
        let dict = dict_over(&[text, "zz"], None);
        let stream = tokenize(text);
        let a = sentence_context_tfidf(&stream, &[0], 1, &dict).unwrap();
        let b = sentence_context_tfidf(&stream, &[2], 1, &dict).unwrap();
        let mean = sentence_context_tfidf(&stream, &[0, 2], 1, &dict).unwrap();
        for c in 0..dict.len() as u32 {
            let want = (a.get(c) + b.get(c)) / 2.0;
            assert!((mean.get(c) - want).abs() < 1e-15, "column {c}");
        }
    }

    #[test]
    fn sentence_context_no_keys_is_zero_vector() {
        let dict = dict_over(&["aa", "bb"], None);
        let v = sentence_context_tfidf(&tokenize("aa"), &[], 3, &dict).unwrap();
        assert_eq!(v.nnz(), 0);
        assert_eq!(v.dim, 3 * dict.len());
    }

    #[test]
    fn char_ngram_vector_matches_enumeration() {
        let names = ["AB", "CD"];
        let dict = crate::textproc::build_char_ngram_dictionary("cg", &names, 8, 1, None).unwrap();
        let v = char_ngram_vector("AB", 8, &dict);
        // ^, A, B, $, ^A, AB, B$, ^AB, AB$, ^AB$.
        assert_eq!(v.entries().iter().map(|&(_, n)| n as usize).sum::<usize>(), 10);
        assert_eq!(v.get(dict.column("^AB$").unwrap() as u32), 1.0);
    }

    #[test]
    fn identical_names_identical_vectors() {
        let names = ["KRAS", "TP53"];
        let dict = crate::textproc::build_char_ngram_dictionary("cg", &names, 8, 1, None).unwrap();
        assert_eq!(
            char_ngram_vector("KRAS", 8, &dict),
            char_ngram_vector("KRAS", 8, &dict)
        );
    }

    #[test]
    fn label_encoding_pads_and_maps() {
        let table = CharCodeTable::fit(&["AB"]);
        assert_eq!(table.code('A'), 1);
        assert_eq!(table.code('B'), 2);
        assert_eq!(label_encode_name("AB", &table, 4), vec![1, 2, 0, 0]);
        assert_eq!(label_encode_name("", &table, 4), vec![0, 0, 0, 0]);
    }

    #[test]
    fn unknown_characters_use_reserved_code() {
        let table = CharCodeTable::fit(&["AB"]);
        assert_eq!(label_encode_name("AZ", &table, 2), vec![1, 3]);
    }

    #[test]
    fn alphabet_size_counts_distinct_characters() {
        let table = CharCodeTable::fit(&["BRCA1", "T1773I"]);
        // {1, 3, 7, A, B, C, I, R, T}
        assert_eq!(table.alphabet_size(), 9);
    }

    #[test]
    fn concat_offsets_parts() {
        let a = SparseVector::from_entries("s1", 3, vec![(0, 1.0)]).unwrap();
        let b = SparseVector::from_entries("s2", 2, vec![(1, 5.0)]).unwrap();
        let layout = ConcatLayout::new(vec![("s1".into(), 3), ("s2".into(), 2)]);
        let v = concat(&[a, b], &layout).unwrap();
        assert_eq!(v.dim, 5);
        assert_eq!(v.entries(), &[(0, 1.0), (4, 5.0)]);
    }

    #[test]
    fn concat_of_empty_parts_is_empty_with_summed_dim() {
        let a = SparseVector::empty("s1", 3);
        let b = SparseVector::empty("s2", 2);
        let layout = ConcatLayout::new(vec![("s1".into(), 3), ("s2".into(), 2)]);
        let v = concat(&[a, b], &layout).unwrap();
        assert_eq!(v.dim, 5);
        assert_eq!(v.nnz(), 0);
    }

    #[test]
    fn concat_rejects_out_of_order_parts() {
        let a = SparseVector::empty("s1", 3);
        let b = SparseVector::empty("s2", 2);
        let layout = ConcatLayout::new(vec![("s1".into(), 3), ("s2".into(), 2)]);
        assert!(matches!(
            concat(&[b, a], &layout),
            Err(Error::SpaceMismatch { .. })
        ));
    }

    #[test]
    fn concat_is_associative() {
        let a = SparseVector::from_entries("a", 2, vec![(1, 2.0)]).unwrap();
        let b = SparseVector::from_entries("b", 3, vec![(0, 3.0)]).unwrap();
        let c = SparseVector::from_entries("c", 1, vec![(0, 4.0)]).unwrap();
        let ab = concat(
            &[a.clone(), b.clone()],
            &ConcatLayout::new(vec![("a".into(), 2), ("b".into(), 3)]),
        )
        .unwrap();
        let bc = concat(
            &[b, c.clone()],
            &ConcatLayout::new(vec![("b".into(), 3), ("c".into(), 1)]),
        )
        .unwrap();
        let left = concat(
            &[ab, c],
            &ConcatLayout::new(vec![("a|b".into(), 5), ("c".into(), 1)]),
        )
        .unwrap();
        let right = concat(
            &[a, bc],
            &ConcatLayout::new(vec![("a".into(), 2), ("b|c".into(), 4)]),
        )
        .unwrap();
        assert_eq!(left.entries(), right.entries());
        assert_eq!(left.dim, right.dim);
    }

    #[test]
    fn matrix_round_trips_through_text_format() {
        let rows = vec![
            SparseVector::from_entries("s", 4, vec![(0, 0.1), (3, -2.5e-8)]).unwrap(),
            SparseVector::from_entries("s", 4, vec![(2, std::f64::consts::PI)]).unwrap(),
        ];
        let m = FeatureMatrix::from_rows(rows).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mtx");
        m.write(&path).unwrap();
        let back = FeatureMatrix::read(&path).unwrap();
        assert_eq!(m, back);
    }
}
