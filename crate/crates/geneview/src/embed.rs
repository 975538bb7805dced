//! Skip-gram word embeddings and PV-DBOW document vectors.
//!
//! Both trainers share the negative-sampling machinery: a sigmoid objective
//! against noise words drawn from the unigram distribution raised to 0.75.
//! Training is single-worker and seeded, so tables are bit-reproducible.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::{tokenize, TokenStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableKind {
    Word,
    Document,
}

/// Training configuration, kept with the table for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub min_count: usize,
    pub seed: u64,
    pub lr_start: f64,
    pub lr_end: f64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            dim: 200,
            window: 5,
            negatives: 5,
            epochs: 10,
            min_count: 1,
            seed: 0,
            lr_start: 0.025,
            lr_end: 0.0001,
        }
    }
}

/// key -> dense vector of a fixed dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub kind: TableKind,
    pub dim: usize,
    keys: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    /// Row-major, keys.len() x dim.
    vectors: Vec<f64>,
    pub config: EmbedConfig,
}

impl EmbeddingTable {
    fn new(kind: TableKind, keys: Vec<String>, vectors: Vec<f64>, config: EmbedConfig) -> Self {
        let index = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        EmbeddingTable {
            kind,
            dim: config.dim,
            keys,
            index,
            vectors,
            config,
        }
    }

    pub fn reindex(&mut self) {
        self.index = self
            .keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.index
            .get(key)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn fingerprint(&self, hasher: &mut sha2::Sha256) {
        use sha2::Digest;
        hasher.update([match self.kind {
            TableKind::Word => 0u8,
            TableKind::Document => 1,
        }]);
        hasher.update(self.dim.to_le_bytes());
        for k in &self.keys {
            hasher.update(k.as_bytes());
            hasher.update([0u8]);
        }
        for v in &self.vectors {
            hasher.update(v.to_le_bytes());
        }
    }

    /// Text serialization: `<count> <dim>` then `<key> v1 .. vD` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        (|| -> std::io::Result<()> {
            writeln!(w, "{} {}", self.keys.len(), self.dim)?;
            for (i, key) in self.keys.iter().enumerate() {
                write!(w, "{key}")?;
                for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                    write!(w, " {v}")?;
                }
                writeln!(w)?;
            }
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, kind: TableKind) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let origin = path.display().to_string();
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(&origin, 1, "empty table"))?
            .map_err(|e| Error::io(path, e))?;
        let mut parts = header.split_whitespace();
        let count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(&origin, 1, "bad count"))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(&origin, 1, "bad dimension"))?;
        let mut keys = Vec::with_capacity(count);
        let mut vectors = Vec::with_capacity(count * dim);
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let mut f = line.split_whitespace();
            let key = f
                .next()
                .ok_or_else(|| Error::parse(&origin, idx + 2, "missing key"))?;
            let values: Vec<f64> = f
                .map(|s| s.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(&origin, idx + 2, "bad float"))?;
            if values.len() != dim {
                return Err(Error::parse(
                    &origin,
                    idx + 2,
                    format!("expected {dim} values, found {}", values.len()),
                ));
            }
            keys.push(key.to_string());
            vectors.extend(values);
        }
        if keys.len() != count {
            return Err(Error::parse(
                &origin,
                1,
                format!("header says {count} keys, file holds {}", keys.len()),
            ));
        }
        let config = EmbedConfig {
            dim,
            ..EmbedConfig::default()
        };
        Ok(EmbeddingTable::new(kind, keys, vectors, config))
    }
}

struct NoiseTable {
    cumulative: Vec<f64>,
    total: f64,
}

impl NoiseTable {
    /// Unigram counts raised to 0.75.
    fn new(counts: &[usize]) -> Self {
        let mut cumulative = Vec::with_capacity(counts.len());
        let mut total = 0.0;
        for &c in counts {
            total += (c as f64).powf(0.75);
            cumulative.push(total);
        }
        NoiseTable { cumulative, total }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let x = rng.gen::<f64>() * self.total;
        self.cumulative.partition_point(|&c| c <= x).min(self.cumulative.len() - 1)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One negative-sampling update of `input` row against `target` output row(s).
/// Returns nothing; mutates in place with the accumulated input gradient
/// applied after the negative loop, as in the reference trainer.
#[allow(clippy::too_many_arguments)]
fn sgns_update(
    input: &mut [f64],
    output: &mut [f64],
    dim: usize,
    center_offset: usize,
    positive: usize,
    noise: &NoiseTable,
    negatives: usize,
    lr: f64,
    rng: &mut ChaCha8Rng,
) {
    let in_row = &mut input[center_offset..center_offset + dim];
    let mut grad_in = vec![0.0f64; dim];
    for sample in 0..=negatives {
        let (target_word, label) = if sample == 0 {
            (positive, 1.0)
        } else {
            let w = noise.sample(rng);
            if w == positive {
                continue;
            }
            (w, 0.0)
        };
        let out_row = &mut output[target_word * dim..(target_word + 1) * dim];
        let mut dot = 0.0;
        for d in 0..dim {
            dot += in_row[d] * out_row[d];
        }
        let g = (label - sigmoid(dot)) * lr;
        for d in 0..dim {
            grad_in[d] += g * out_row[d];
            out_row[d] += g * in_row[d];
        }
    }
    for d in 0..dim {
        in_row[d] += grad_in[d];
    }
}

/// Train skip-gram word vectors over normalized token streams.
pub fn train_skipgram(streams: &[TokenStream], config: &EmbedConfig) -> Result<EmbeddingTable> {
    // Vocabulary over normalized tokens, pruned by min_count, ordered by
    // (count desc, term asc) for reproducibility.
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in streams {
        for t in s.normalized_terms() {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut vocab: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= config.min_count)
        .collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if vocab.is_empty() {
        return Err(Error::Validation(
            "empty vocabulary after min_count pruning".into(),
        ));
    }
    let word_index: HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, &(w, _))| (w, i))
        .collect();
    let vocab_counts: Vec<usize> = vocab.iter().map(|&(_, c)| c).collect();
    let noise = NoiseTable::new(&vocab_counts);

    let v = vocab.len();
    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input: Vec<f64> = (0..v * dim)
        .map(|_| (rng.gen::<f64>() - 0.5) / dim as f64)
        .collect();
    let mut output = vec![0.0f64; v * dim];

    // Sentences as training units, vocabulary-filtered.
    let sentences: Vec<Vec<usize>> = streams
        .iter()
        .flat_map(|s| {
            s.sentences()
                .into_iter()
                .map(|tokens| {
                    tokens
                        .iter()
                        .filter_map(|t| word_index.get(t.normalized.as_str()).copied())
                        .collect::<Vec<usize>>()
                })
                .collect::<Vec<_>>()
        })
        .filter(|s| s.len() > 1)
        .collect();
    let total_tokens: usize = sentences.iter().map(|s| s.len()).sum::<usize>() * config.epochs;
    if total_tokens == 0 {
        return Err(Error::Validation(
            "no co-occurring tokens to train on".into(),
        ));
    }

    let mut done = 0usize;
    for _ in 0..config.epochs {
        for sentence in &sentences {
            for (i, &center) in sentence.iter().enumerate() {
                let lr = config.lr_start
                    - (config.lr_start - config.lr_end) * (done as f64 / total_tokens as f64);
                done += 1;
                let b = rng.gen_range(1..=config.window);
                let lo = i.saturating_sub(b);
                let hi = (i + b).min(sentence.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let context = sentence[j];
                    sgns_update(
                        &mut input,
                        &mut output,
                        dim,
                        center * dim,
                        context,
                        &noise,
                        config.negatives,
                        lr,
                        &mut rng,
                    );
                }
            }
        }
    }

    let keys: Vec<String> = vocab.iter().map(|&(w, _)| w.to_string()).collect();
    Ok(EmbeddingTable::new(TableKind::Word, keys, input, config.clone()))
}

/// A trained PV-DBOW model: document vectors plus the frozen word output
/// matrix needed to infer vectors for unseen documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PvdbowModel {
    table: EmbeddingTable,
    vocab: Vec<String>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    word_output: Vec<f64>,
    vocab_counts: Vec<usize>,
}

impl PvdbowModel {
    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn dim(&self) -> usize {
        self.table.dim
    }

    pub fn vector(&self, key: &str) -> Option<&[f64]> {
        self.table.get(key)
    }

    pub fn reindex(&mut self) {
        self.table.reindex();
        self.word_index = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }

    /// Infer a vector for an unseen document with the word matrix frozen.
    /// Deterministic for a fixed seed.
    pub fn infer(&self, stream: &TokenStream, seed: u64) -> Vec<f64> {
        let dim = self.table.dim;
        let config = &self.table.config;
        let tokens: Vec<usize> = stream
            .normalized_terms()
            .filter_map(|t| self.word_index.get(t).copied())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vec: Vec<f64> = (0..dim)
            .map(|_| (rng.gen::<f64>() - 0.5) / dim as f64)
            .collect();
        if tokens.is_empty() {
            return vec;
        }
        let noise = NoiseTable::new(&self.vocab_counts);
        let mut output = self.word_output.clone();
        let total = tokens.len() * config.epochs.max(1);
        let mut done = 0usize;
        for _ in 0..config.epochs.max(1) {
            for &word in &tokens {
                let lr = config.lr_start
                    - (config.lr_start - config.lr_end) * (done as f64 / total as f64);
                done += 1;
                sgns_update(
                    &mut vec,
                    &mut output,
                    dim,
                    0,
                    word,
                    &noise,
                    config.negatives,
                    lr,
                    &mut rng,
                );
            }
        }
        vec
    }

    pub fn fingerprint(&self, hasher: &mut sha2::Sha256) {
        use sha2::Digest;
        self.table.fingerprint(hasher);
        for w in &self.vocab {
            hasher.update(w.as_bytes());
            hasher.update([0u8]);
        }
        for v in &self.word_output {
            hasher.update(v.to_le_bytes());
        }
    }
}

/// Train PV-DBOW document vectors: each document's vector learns to predict
/// the words it contains against negative samples.
pub fn train_pvdbow(
    keys: &[String],
    streams: &[TokenStream],
    config: &EmbedConfig,
) -> Result<PvdbowModel> {
    if keys.is_empty() || keys.len() != streams.len() {
        return Err(Error::Validation(format!(
            "pvdbow needs matching keys and documents, got {} and {}",
            keys.len(),
            streams.len()
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in streams {
        for t in s.normalized_terms() {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut vocab: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= config.min_count)
        .collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if vocab.is_empty() {
        return Err(Error::Validation("pvdbow vocabulary is empty".into()));
    }
    let word_index: HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, &(w, _))| (w, i))
        .collect();
    let vocab_counts: Vec<usize> = vocab.iter().map(|&(_, c)| c).collect();
    let noise = NoiseTable::new(&vocab_counts);

    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut doc_vecs: Vec<f64> = (0..keys.len() * dim)
        .map(|_| (rng.gen::<f64>() - 0.5) / dim as f64)
        .collect();
    let mut word_output = vec![0.0f64; vocab.len() * dim];

    let docs: Vec<Vec<usize>> = streams
        .iter()
        .map(|s| {
            s.normalized_terms()
                .filter_map(|t| word_index.get(t).copied())
                .collect()
        })
        .collect();
    let total: usize = docs.iter().map(|d| d.len()).sum::<usize>() * config.epochs;
    let mut done = 0usize;
    for _ in 0..config.epochs {
        for (d, tokens) in docs.iter().enumerate() {
            for &word in tokens {
                let lr = config.lr_start
                    - (config.lr_start - config.lr_end) * (done as f64 / total.max(1) as f64);
                done += 1;
                sgns_update(
                    &mut doc_vecs,
                    &mut word_output,
                    dim,
                    d * dim,
                    word,
                    &noise,
                    config.negatives,
                    lr,
                    &mut rng,
                );
            }
        }
    }

    let table = EmbeddingTable::new(
        TableKind::Document,
        keys.to_vec(),
        doc_vecs,
        config.clone(),
    );
    let vocab_owned: Vec<String> = vocab.iter().map(|&(w, _)| w.to_string()).collect();
    let word_index_owned = vocab_owned
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i))
        .collect();
    Ok(PvdbowModel {
        table,
        vocab: vocab_owned,
        word_index: word_index_owned,
        word_output,
        vocab_counts,
    })
}

/// Vector for an entity name: the full normalized name when it is in
/// vocabulary, else the mean of its in-vocabulary subtokens, else zeros.
/// Total and dimension-stable.
pub fn name_vector(name: &str, table: &EmbeddingTable) -> Vec<f64> {
    let stream = tokenize(name);
    let tokens: Vec<&str> = stream.normalized_terms().collect();
    if tokens.len() == 1 {
        if let Some(v) = table.get(tokens[0]) {
            return v.to_vec();
        }
    }
    let mut acc = vec![0.0; table.dim];
    let mut n = 0usize;
    for t in &tokens {
        if let Some(v) = table.get(t) {
            for (a, &b) in acc.iter_mut().zip(v) {
                *a += b;
            }
            n += 1;
        }
    }
    if n > 0 {
        for a in &mut acc {
            *a /= n as f64;
        }
    }
    acc
}
