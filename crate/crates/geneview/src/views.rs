//! The featurization engine: builds the three views over a corpus, fits all
//! recipe state (dictionaries, reducers, embeddings, code tables) on training
//! rows only, and transforms any row set into a [`FeatureMatrix`].
//!
//! Fitted state never depends on validation rows: entity texts are extracted
//! from training-fold documents, dictionaries and reducers see training rows
//! only, and document vectors are keyed by content hash rather than document
//! id, so removing validation rows from the corpus leaves the fitted state
//! hash unchanged.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use sha2::Digest;

use crate::corpus::Corpus;
use crate::dimred::{self, LdaOptions, NmfOptions, Reducer};
use crate::embed::{self, EmbedConfig, EmbeddingTable, PvdbowModel};
use crate::entity::{extract_entity_texts_in, EntityId, EntityKind, PatternSet};
use crate::error::{Error, Result};
use crate::features::{
    char_ngram_vector, concat, count_vector, label_encode_name, ngram_vector,
    sentence_context_tfidf, tfidf_vector, CharCodeTable, ConcatLayout, FeatureMatrix,
    FeatureRecipe, GeneratorSpec, IdfMode, ReducerKind, ReducerSpec, SparseVector, ViewKind,
};
use crate::textproc::{
    build_char_ngram_dictionary, build_dictionary, build_ngram_dictionary, pos_filter, tokenize,
    Dictionary, PosLexicon, Stopwords, TokenStream,
};

/// Derive a component seed from a base seed and a stable tag.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut hasher = sha2::Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Hash of a document's content, used as its embedding key.
pub fn content_key(text: &str) -> String {
    let digest = sha2::Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Tokenizations and per-sample key sentences shared across folds; all of it
/// is a pure function of the corpus text.
pub struct SharedResources {
    pub doc_streams: Vec<TokenStream>,
    pub doc_pos_streams: Vec<TokenStream>,
    pub doc_keys: Vec<String>,
    /// Per sample: sentence indices of its own document mentioning its gene
    /// or mutation.
    pub key_sentences: Vec<Vec<usize>>,
    pub patterns: PatternSet,
}

impl SharedResources {
    pub fn build(corpus: &Corpus, lexicon: &PosLexicon) -> Result<SharedResources> {
        let doc_streams: Vec<TokenStream> = corpus
            .documents
            .par_iter()
            .map(|d| tokenize(d))
            .collect();
        let doc_pos_streams: Vec<TokenStream> = doc_streams
            .par_iter()
            .map(|s| pos_filter(s, lexicon))
            .collect();
        let doc_keys = corpus.documents.iter().map(|d| content_key(d)).collect();

        let patterns = PatternSet::from_corpus(corpus);
        // Entity -> sentences per document, over the whole corpus; key
        // sentences are a per-sample lookup into this.
        let texts = extract_entity_texts_in(corpus, &patterns, None)?;
        let mut by_doc_entity: HashMap<(usize, EntityId), Vec<usize>> = HashMap::new();
        for (id, text) in &texts {
            for &(doc_id, sentence, _) in &text.sentences {
                by_doc_entity.entry((doc_id, *id)).or_default().push(sentence);
            }
        }
        let key_sentences = corpus
            .samples
            .iter()
            .map(|s| {
                let mut keys = Vec::new();
                for id in [
                    patterns.lookup(EntityKind::Gene, &s.gene),
                    patterns.lookup(EntityKind::Mutation, &s.mutation),
                ]
                .into_iter()
                .flatten()
                {
                    if let Some(sentences) = by_doc_entity.get(&(s.doc_id, id)) {
                        keys.extend_from_slice(sentences);
                    }
                }
                keys.sort_unstable();
                keys.dedup();
                keys
            })
            .collect();

        Ok(SharedResources {
            doc_streams,
            doc_pos_streams,
            doc_keys,
            key_sentences,
            patterns,
        })
    }
}

/// Knobs for fitting; recipe parameters override some of these per generator.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FeaturizeOptions {
    pub dict_min_df: u32,
    pub dict_max_terms: Option<usize>,
    pub ngram_min_df: u32,
    pub ngram_max_terms: Option<usize>,
    pub sentence_window: usize,
    pub char_encode_len: usize,
    pub char_ngram_n: usize,
    pub word_embed: EmbedConfig,
    pub pvdbow: EmbedConfig,
    pub nmf: NmfOptions,
    pub lda: LdaOptions,
}

impl Default for FeaturizeOptions {
    fn default() -> Self {
        FeaturizeOptions {
            dict_min_df: 1,
            dict_max_terms: None,
            ngram_min_df: 2,
            ngram_max_terms: Some(2_000_000),
            sentence_window: 3,
            char_encode_len: 20,
            char_ngram_n: 8,
            word_embed: EmbedConfig::default(),
            pvdbow: EmbedConfig {
                dim: 400,
                ..EmbedConfig::default()
            },
            nmf: NmfOptions::default(),
            lda: LdaOptions::default(),
        }
    }
}

/// External term lists and text assets a recipe may reference.
#[derive(Clone)]
pub struct TextAssets {
    pub stopwords: Stopwords,
    pub lexicon: PosLexicon,
    pub bioentity_dict: Option<Dictionary>,
    pub keyword_dict: Option<Dictionary>,
}

impl TextAssets {
    pub fn bundled() -> Self {
        TextAssets {
            stopwords: Stopwords::bundled(),
            lexicon: PosLexicon::bundled(),
            bioentity_dict: None,
            keyword_dict: None,
        }
    }
}

enum FittedGenerator {
    PosCounts {
        dict: Dictionary,
    },
    PosTfidf {
        dict: Dictionary,
        mode: IdfMode,
    },
    TermFrequency {
        dict: Dictionary,
    },
    Ngram {
        dict: Dictionary,
        n_min: usize,
        n_max: usize,
    },
    SentenceTfidf {
        dict: Dictionary,
        window: usize,
    },
    TermList {
        dict: Dictionary,
    },
    Paragraph {
        model: PvdbowModel,
    },
    WordEmbedding {
        table: EmbeddingTable,
    },
    CharEncoding {
        table: CharCodeTable,
        length: usize,
    },
    CharNgram {
        dict: Dictionary,
        n: usize,
    },
}

struct FittedSlot {
    view: ViewKind,
    spec: GeneratorSpec,
    generator: FittedGenerator,
    reducer: Option<Reducer>,
    /// Space and dimension of this slot's final (possibly part-concatenated)
    /// output.
    out_space: String,
    out_dim: usize,
    /// Space of a single raw part before reduction.
    raw_space: String,
}

/// A recipe fitted on training rows; transforming is pure and immutable.
pub struct FittedFeaturizer {
    pub recipe: FeatureRecipe,
    slots: Vec<FittedSlot>,
    /// Entity texts extracted from training-fold documents, tokenized.
    entity_streams: BTreeMap<EntityId, (TokenStream, TokenStream)>,
    layout: ConcatLayout,
    seed: u64,
}

fn stack_space(view: ViewKind, spec: &GeneratorSpec) -> String {
    format!("{}/{}", view.key(), spec.id())
}

impl FittedFeaturizer {
    /// Fit every generator and reducer of `recipe` on `train_rows` only.
    pub fn fit(
        corpus: &Corpus,
        shared: &SharedResources,
        train_rows: &[usize],
        recipe: &FeatureRecipe,
        options: &FeaturizeOptions,
        assets: &TextAssets,
        seed: u64,
    ) -> Result<FittedFeaturizer> {
        if train_rows.is_empty() {
            return Err(Error::Validation("cannot fit on zero training rows".into()));
        }

        // Entity texts from training documents only.
        let train_docs: HashSet<usize> =
            train_rows.iter().map(|&i| corpus.samples[i].doc_id).collect();
        let entity_texts =
            extract_entity_texts_in(corpus, &shared.patterns, Some(&train_docs))?;
        let entity_streams: BTreeMap<EntityId, (TokenStream, TokenStream)> = entity_texts
            .iter()
            .map(|(&id, text)| {
                let stream = tokenize(&text.combined_text());
                let pos = pos_filter(&stream, &assets.lexicon);
                (id, (stream, pos))
            })
            .collect();

        let train_labels: Vec<u8> = train_rows
            .iter()
            .map(|&i| {
                corpus.samples[i]
                    .label
                    .ok_or_else(|| Error::Validation(format!("sample {i} has no label")))
            })
            .collect::<Result<_>>()?;

        let mut fitter = Fitter {
            corpus,
            shared,
            train_rows,
            train_labels,
            options,
            assets,
            entity_streams: &entity_streams,
            seed,
        };

        let mut slots = Vec::new();
        for (view, specs) in recipe.views() {
            for spec in specs {
                slots.push(fitter.fit_slot(view, spec)?);
            }
        }
        if slots.is_empty() {
            return Err(Error::Config(format!(
                "recipe `{}` has no generators",
                recipe.name
            )));
        }
        let layout = ConcatLayout::new(
            slots
                .iter()
                .map(|s| (s.out_space.clone(), s.out_dim))
                .collect(),
        );
        Ok(FittedFeaturizer {
            recipe: recipe.clone(),
            slots,
            entity_streams,
            layout,
            seed,
        })
    }

    /// Feature matrix for the given sample rows, in their order.
    pub fn transform(
        &self,
        corpus: &Corpus,
        shared: &SharedResources,
        rows: &[usize],
        assets: &TextAssets,
    ) -> Result<FeatureMatrix> {
        let out: Vec<SparseVector> = rows
            .par_iter()
            .map(|&row| self.transform_row(corpus, shared, row, assets))
            .collect::<Result<Vec<_>>>()?;
        FeatureMatrix::from_rows(out)
    }

    pub fn output_dim(&self) -> usize {
        self.layout.total_dim()
    }

    fn transform_row(
        &self,
        corpus: &Corpus,
        shared: &SharedResources,
        row: usize,
        assets: &TextAssets,
    ) -> Result<SparseVector> {
        let mut parts = Vec::with_capacity(self.slots.len());
        for slot in &self.slots {
            parts.push(self.slot_vector(slot, corpus, shared, row, assets)?);
        }
        concat(&parts, &self.layout)
    }

    fn entity_stream(&self, kind: EntityKind, name: &str, shared: &SharedResources, pos: bool) -> TokenStream {
        shared
            .patterns
            .lookup(kind, name)
            .and_then(|id| self.entity_streams.get(&id))
            .map(|(stream, pos_stream)| if pos { pos_stream.clone() } else { stream.clone() })
            .unwrap_or_default()
    }

    fn slot_vector(
        &self,
        slot: &FittedSlot,
        corpus: &Corpus,
        shared: &SharedResources,
        row: usize,
        assets: &TextAssets,
    ) -> Result<SparseVector> {
        let sample = &corpus.samples[row];
        match slot.view {
            ViewKind::Document => {
                let raw = self.raw_document_vector(slot, corpus, shared, row, assets)?;
                self.finish(slot, vec![raw], row)
            }
            ViewKind::EntityText => {
                let gene = self.entity_text_part(slot, shared, EntityKind::Gene, &sample.gene, assets)?;
                let mutation =
                    self.entity_text_part(slot, shared, EntityKind::Mutation, &sample.mutation, assets)?;
                self.finish(slot, vec![gene, mutation], row)
            }
            ViewKind::EntityName => {
                let (gene, mutation) = self.entity_name_parts(slot, sample)?;
                self.finish(slot, vec![gene, mutation], row)
            }
        }
    }

    /// Apply the slot's reducer to each part (when present) and concatenate
    /// the parts into the slot's output space.
    fn finish(
        &self,
        slot: &FittedSlot,
        raw_parts: Vec<SparseVector>,
        row: usize,
    ) -> Result<SparseVector> {
        let parts: Vec<SparseVector> = match &slot.reducer {
            None => raw_parts,
            Some(reducer) => raw_parts
                .into_iter()
                .map(|part| {
                    let dense =
                        dimred::transform_row(reducer, &part, derive_seed(self.seed, &format!("{}#{row}", slot.out_space)));
                    SparseVector::from_entries(
                        dimred::output_space(reducer),
                        reducer.k,
                        dense
                            .into_iter()
                            .enumerate()
                            .map(|(c, v)| (c as u32, v))
                            .collect(),
                    )
                })
                .collect::<Result<Vec<_>>>()?,
        };
        if parts.len() == 1 {
            let only = parts.into_iter().next().unwrap();
            return SparseVector::from_entries(
                slot.out_space.clone(),
                slot.out_dim,
                only.entries().to_vec(),
            );
        }
        let layout = ConcatLayout::new(
            parts
                .iter()
                .map(|p| (p.space.clone(), p.dim))
                .collect(),
        );
        let joined = concat(&parts, &layout)?;
        SparseVector::from_entries(slot.out_space.clone(), slot.out_dim, joined.entries().to_vec())
    }

    fn raw_document_vector(
        &self,
        slot: &FittedSlot,
        corpus: &Corpus,
        shared: &SharedResources,
        row: usize,
        assets: &TextAssets,
    ) -> Result<SparseVector> {
        let sample = &corpus.samples[row];
        let doc = sample.doc_id;
        match &slot.generator {
            FittedGenerator::PosCounts { dict } => {
                Ok(count_vector(&shared.doc_pos_streams[doc], dict))
            }
            FittedGenerator::PosTfidf { dict, mode } => {
                tfidf_vector(&shared.doc_pos_streams[doc], dict, *mode)
            }
            FittedGenerator::TermFrequency { dict } => {
                Ok(count_vector(&shared.doc_streams[doc], dict))
            }
            FittedGenerator::Ngram { dict, n_min, n_max } => Ok(ngram_vector(
                &shared.doc_streams[doc],
                *n_min,
                *n_max,
                dict,
                &assets.stopwords,
            )),
            FittedGenerator::SentenceTfidf { dict, window } => sentence_context_tfidf(
                &shared.doc_streams[doc],
                &shared.key_sentences[row],
                *window,
                dict,
            ),
            FittedGenerator::TermList { dict } => {
                Ok(count_vector(&shared.doc_streams[doc], dict))
            }
            FittedGenerator::Paragraph { model } => {
                let key = &shared.doc_keys[doc];
                let dense = match model.vector(key) {
                    Some(v) => v.to_vec(),
                    None => model.infer(
                        &shared.doc_streams[doc],
                        derive_seed(self.seed, &format!("pvdbow-infer/{key}")),
                    ),
                };
                SparseVector::from_entries(
                    slot.raw_space.clone(),
                    model.dim(),
                    dense
                        .into_iter()
                        .enumerate()
                        .map(|(c, v)| (c as u32, v))
                        .collect(),
                )
            }
            other => Err(Error::Config(format!(
                "generator `{}` cannot serve the document view",
                generator_label(other)
            ))),
        }
    }

    fn entity_text_part(
        &self,
        slot: &FittedSlot,
        shared: &SharedResources,
        kind: EntityKind,
        name: &str,
        assets: &TextAssets,
    ) -> Result<SparseVector> {
        match &slot.generator {
            FittedGenerator::PosCounts { dict } => {
                let stream = self.entity_stream(kind, name, shared, true);
                Ok(count_vector(&stream, dict))
            }
            FittedGenerator::PosTfidf { dict, mode } => {
                let stream = self.entity_stream(kind, name, shared, true);
                tfidf_vector(&stream, dict, *mode)
            }
            FittedGenerator::TermFrequency { dict } => {
                let stream = self.entity_stream(kind, name, shared, false);
                Ok(count_vector(&stream, dict))
            }
            FittedGenerator::Ngram { dict, n_min, n_max } => {
                let stream = self.entity_stream(kind, name, shared, false);
                Ok(ngram_vector(&stream, *n_min, *n_max, dict, &assets.stopwords))
            }
            FittedGenerator::SentenceTfidf { dict, .. } => {
                // Entity-text variant: key sentences only, window 1.
                let stream = self.entity_stream(kind, name, shared, false);
                let keys: Vec<usize> = (0..stream.sentence_count()).collect();
                sentence_context_tfidf(&stream, &keys, 1, dict)
            }
            other => Err(Error::Config(format!(
                "generator `{}` cannot serve the entity text view",
                generator_label(other)
            ))),
        }
    }

    fn entity_name_parts(
        &self,
        slot: &FittedSlot,
        sample: &crate::corpus::Sample,
    ) -> Result<(SparseVector, SparseVector)> {
        match &slot.generator {
            FittedGenerator::WordEmbedding { table } => {
                let to_vec = |name: &str, part: &str| {
                    let dense = embed::name_vector(name, table);
                    SparseVector::from_entries(
                        format!("{}.{part}", slot.raw_space),
                        table.dim,
                        dense
                            .into_iter()
                            .enumerate()
                            .map(|(c, v)| (c as u32, v))
                            .collect(),
                    )
                };
                Ok((to_vec(&sample.gene, "gene")?, to_vec(&sample.mutation, "mut")?))
            }
            FittedGenerator::CharEncoding { table, length } => {
                let to_vec = |name: &str, part: &str| {
                    let codes = label_encode_name(name, table, *length);
                    SparseVector::from_entries(
                        format!("{}.{part}", slot.raw_space),
                        *length,
                        codes
                            .into_iter()
                            .enumerate()
                            .map(|(c, v)| (c as u32, v as f64))
                            .collect(),
                    )
                };
                Ok((to_vec(&sample.gene, "gene")?, to_vec(&sample.mutation, "mut")?))
            }
            FittedGenerator::CharNgram { dict, n } => Ok((
                char_ngram_vector(&sample.gene, *n, dict),
                char_ngram_vector(&sample.mutation, *n, dict),
            )),
            other => Err(Error::Config(format!(
                "generator `{}` cannot serve the entity name view",
                generator_label(other)
            ))),
        }
    }

    /// Hash of every fitted component, stable across corpus renumbering.
    pub fn state_fingerprint(&self) -> String {
        let mut hasher = sha2::Sha256::new();
        for slot in &self.slots {
            hasher.update(slot.view.key().as_bytes());
            hasher.update(slot.spec.id().as_bytes());
            match &slot.generator {
                FittedGenerator::PosCounts { dict }
                | FittedGenerator::TermFrequency { dict }
                | FittedGenerator::TermList { dict }
                | FittedGenerator::CharNgram { dict, .. }
                | FittedGenerator::Ngram { dict, .. }
                | FittedGenerator::SentenceTfidf { dict, .. }
                | FittedGenerator::PosTfidf { dict, .. } => dict.fingerprint(&mut hasher),
                FittedGenerator::Paragraph { model } => model.fingerprint(&mut hasher),
                FittedGenerator::WordEmbedding { table } => table.fingerprint(&mut hasher),
                FittedGenerator::CharEncoding { table, length } => {
                    hasher.update(length.to_le_bytes());
                    table.fingerprint_into(&mut hasher);
                }
            }
            if let Some(reducer) = &slot.reducer {
                reducer.fingerprint(&mut hasher);
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn generator_label(g: &FittedGenerator) -> &'static str {
    match g {
        FittedGenerator::PosCounts { .. } => "pos_counts",
        FittedGenerator::PosTfidf { .. } => "pos_tfidf",
        FittedGenerator::TermFrequency { .. } => "term_frequency",
        FittedGenerator::Ngram { .. } => "ngram",
        FittedGenerator::SentenceTfidf { .. } => "sentence_tfidf",
        FittedGenerator::TermList { .. } => "term_list",
        FittedGenerator::Paragraph { .. } => "paragraph_vector",
        FittedGenerator::WordEmbedding { .. } => "word_embedding",
        FittedGenerator::CharEncoding { .. } => "char_encoding",
        FittedGenerator::CharNgram { .. } => "char_ngram",
    }
}

struct Fitter<'a> {
    corpus: &'a Corpus,
    shared: &'a SharedResources,
    train_rows: &'a [usize],
    train_labels: Vec<u8>,
    options: &'a FeaturizeOptions,
    assets: &'a TextAssets,
    entity_streams: &'a BTreeMap<EntityId, (TokenStream, TokenStream)>,
    seed: u64,
}

impl Fitter<'_> {
    fn train_doc_streams(&self, pos: bool) -> Vec<TokenStream> {
        self.train_rows
            .iter()
            .map(|&i| {
                let doc = self.corpus.samples[i].doc_id;
                if pos {
                    self.shared.doc_pos_streams[doc].clone()
                } else {
                    self.shared.doc_streams[doc].clone()
                }
            })
            .collect()
    }

    /// Gene stream then mutation stream per training row.
    fn train_entity_streams(&self, pos: bool) -> (Vec<TokenStream>, Vec<u8>) {
        let mut streams = Vec::with_capacity(self.train_rows.len() * 2);
        let mut labels = Vec::with_capacity(self.train_rows.len() * 2);
        for kind in [EntityKind::Gene, EntityKind::Mutation] {
            for (slot, &i) in self.train_rows.iter().enumerate() {
                let sample = &self.corpus.samples[i];
                let name = match kind {
                    EntityKind::Gene => &sample.gene,
                    EntityKind::Mutation => &sample.mutation,
                };
                let stream = self
                    .shared
                    .patterns
                    .lookup(kind, name)
                    .and_then(|id| self.entity_streams.get(&id))
                    .map(|(s, p)| if pos { p.clone() } else { s.clone() })
                    .unwrap_or_default();
                streams.push(stream);
                labels.push(self.train_labels[slot]);
            }
        }
        (streams, labels)
    }

    fn slot_seed(&self, view: ViewKind, spec: &GeneratorSpec) -> u64 {
        derive_seed(self.seed, &format!("{}/{}", view.key(), spec.id()))
    }

    fn fit_slot(&mut self, view: ViewKind, spec: &GeneratorSpec) -> Result<FittedSlot> {
        let raw_space = stack_space(view, spec);
        let seed = self.slot_seed(view, spec);
        let (generator, raw_dim) = self.fit_generator(view, spec, &raw_space)?;

        // Fit the reducer on the stacked raw training vectors.
        let reducer = match &spec.reducer {
            None => None,
            Some(ReducerSpec { kind, k }) => {
                let raw = self.raw_training_matrix(view, spec, &generator, &raw_space)?;
                let reducer = match kind {
                    ReducerKind::Svd => dimred::fit_svd(&raw, *k, seed)?,
                    ReducerKind::Nmf => dimred::fit_nmf(&raw, *k, &self.options.nmf, seed)?,
                    ReducerKind::Lda => dimred::fit_lda(&raw, *k, &self.options.lda, seed)?,
                };
                Some(reducer)
            }
        };

        let parts = match view {
            ViewKind::Document => 1,
            ViewKind::EntityText | ViewKind::EntityName => 2,
        };
        let part_dim = match &reducer {
            Some(r) => r.k,
            None => raw_dim,
        };
        let out_dim = parts * part_dim;
        let out_space = format!(
            "{raw_space}{}",
            match &spec.reducer {
                Some(ReducerSpec { kind, k }) => format!("~{}{}", kind.name(), k),
                None => String::new(),
            }
        );
        Ok(FittedSlot {
            view,
            spec: spec.clone(),
            generator,
            reducer,
            out_space,
            out_dim,
            raw_space,
        })
    }

    fn fit_generator(
        &mut self,
        view: ViewKind,
        spec: &GeneratorSpec,
        raw_space: &str,
    ) -> Result<(FittedGenerator, usize)> {
        let options = self.options;
        match (view, spec.name.as_str()) {
            (ViewKind::Document, "pos_counts") | (ViewKind::Document, "pos_tfidf") => {
                let streams = self.train_doc_streams(true);
                let dict = build_dictionary(
                    raw_space,
                    &streams,
                    Some(&self.train_labels),
                    options.dict_min_df,
                    options.dict_max_terms,
                    &self.assets.stopwords,
                )?;
                let dim = dict.len();
                if spec.name == "pos_counts" {
                    Ok((FittedGenerator::PosCounts { dict }, dim))
                } else {
                    let mode = parse_idf_mode(spec)?;
                    Ok((FittedGenerator::PosTfidf { dict, mode }, dim))
                }
            }
            (ViewKind::EntityText, "pos_counts") | (ViewKind::EntityText, "pos_tfidf") => {
                let (streams, labels) = self.train_entity_streams(true);
                let dict = build_dictionary(
                    raw_space,
                    &streams,
                    Some(&labels),
                    options.dict_min_df,
                    options.dict_max_terms,
                    &self.assets.stopwords,
                )?;
                let dim = dict.len();
                if spec.name == "pos_counts" {
                    Ok((FittedGenerator::PosCounts { dict }, dim))
                } else {
                    let mode = parse_idf_mode(spec)?;
                    Ok((FittedGenerator::PosTfidf { dict, mode }, dim))
                }
            }
            (ViewKind::Document, "term_frequency") => {
                let streams = self.train_doc_streams(false);
                let dict = build_dictionary(
                    raw_space,
                    &streams,
                    Some(&self.train_labels),
                    options.dict_min_df,
                    options.dict_max_terms,
                    &self.assets.stopwords,
                )?;
                let dim = dict.len();
                Ok((FittedGenerator::TermFrequency { dict }, dim))
            }
            (ViewKind::EntityText, "term_frequency") => {
                let (streams, labels) = self.train_entity_streams(false);
                let dict = build_dictionary(
                    raw_space,
                    &streams,
                    Some(&labels),
                    options.dict_min_df,
                    options.dict_max_terms,
                    &self.assets.stopwords,
                )?;
                let dim = dict.len();
                Ok((FittedGenerator::TermFrequency { dict }, dim))
            }
            (view @ (ViewKind::Document | ViewKind::EntityText), "ngram") => {
                let n_min = spec.param_usize("n_min", 1)?;
                let n_max = spec.param_usize("n_max", 3)?;
                let (streams, labels) = match view {
                    ViewKind::Document => (self.train_doc_streams(false), self.train_labels.clone()),
                    _ => self.train_entity_streams(false),
                };
                let dict = build_ngram_dictionary(
                    raw_space,
                    &streams,
                    Some(&labels),
                    n_min,
                    n_max,
                    options.ngram_min_df,
                    options.ngram_max_terms,
                    &self.assets.stopwords,
                )?;
                let dim = dict.len();
                Ok((FittedGenerator::Ngram { dict, n_min, n_max }, dim))
            }
            (view @ (ViewKind::Document | ViewKind::EntityText), "sentence_tfidf") => {
                let window = match view {
                    ViewKind::Document => spec.param_usize("window", options.sentence_window)?,
                    // Entity texts use bare key sentences.
                    _ => 1,
                };
                let (streams, labels) = match view {
                    ViewKind::Document => (self.train_doc_streams(false), self.train_labels.clone()),
                    _ => self.train_entity_streams(false),
                };
                let dict = build_dictionary(
                    raw_space,
                    &streams,
                    Some(&labels),
                    options.dict_min_df,
                    options.dict_max_terms,
                    &self.assets.stopwords,
                )?;
                let dim = dict.len() * window;
                Ok((FittedGenerator::SentenceTfidf { dict, window }, dim))
            }
            (ViewKind::Document, "bioentity_counts") => {
                let mut dict = self
                    .assets
                    .bioentity_dict
                    .clone()
                    .ok_or_else(|| Error::MissingResource("bioentity term list".into()))?;
                dict.name = raw_space.to_string();
                dict.reindex();
                let dim = dict.len();
                Ok((FittedGenerator::TermList { dict }, dim))
            }
            (ViewKind::Document, "keyword_counts") => {
                let mut dict = self
                    .assets
                    .keyword_dict
                    .clone()
                    .ok_or_else(|| Error::MissingResource("keyword term list".into()))?;
                dict.name = raw_space.to_string();
                dict.reindex();
                let dim = dict.len();
                Ok((FittedGenerator::TermList { dict }, dim))
            }
            (ViewKind::Document, "paragraph_vector") => {
                // Unique training documents, keyed by content hash.
                let mut seen = HashSet::new();
                let mut keys = Vec::new();
                let mut streams = Vec::new();
                for &i in self.train_rows {
                    let doc = self.corpus.samples[i].doc_id;
                    if seen.insert(doc) {
                        keys.push(self.shared.doc_keys[doc].clone());
                        streams.push(self.shared.doc_streams[doc].clone());
                    }
                }
                let config = EmbedConfig {
                    dim: spec.param_usize("dim", self.options.pvdbow.dim)?,
                    seed: self.slot_seed(ViewKind::Document, spec),
                    ..self.options.pvdbow.clone()
                };
                let model = embed::train_pvdbow(&keys, &streams, &config)?;
                let dim = model.dim();
                Ok((FittedGenerator::Paragraph { model }, dim))
            }
            (ViewKind::EntityName, "word_embedding") => {
                let streams = {
                    let mut seen = HashSet::new();
                    let mut out = Vec::new();
                    for &i in self.train_rows {
                        let doc = self.corpus.samples[i].doc_id;
                        if seen.insert(doc) {
                            out.push(self.shared.doc_streams[doc].clone());
                        }
                    }
                    out
                };
                let config = EmbedConfig {
                    dim: spec.param_usize("dim", self.options.word_embed.dim)?,
                    seed: self.slot_seed(ViewKind::EntityName, spec),
                    ..self.options.word_embed.clone()
                };
                let table = embed::train_skipgram(&streams, &config)?;
                let dim = table.dim;
                Ok((FittedGenerator::WordEmbedding { table }, dim))
            }
            (ViewKind::EntityName, "char_encoding") => {
                let length = spec.param_usize("len", self.options.char_encode_len)?;
                let names: Vec<&str> = self
                    .train_rows
                    .iter()
                    .flat_map(|&i| {
                        let s = &self.corpus.samples[i];
                        [s.gene.as_str(), s.mutation.as_str()]
                    })
                    .collect();
                let table = CharCodeTable::fit(&names);
                Ok((FittedGenerator::CharEncoding { table, length }, length))
            }
            (ViewKind::EntityName, "char_ngram") => {
                let n = spec.param_usize("n", self.options.char_ngram_n)?;
                let names: Vec<&str> = self
                    .train_rows
                    .iter()
                    .flat_map(|&i| {
                        let s = &self.corpus.samples[i];
                        [s.gene.as_str(), s.mutation.as_str()]
                    })
                    .collect();
                let dict = build_char_ngram_dictionary(raw_space, &names, n, 1, None)?;
                let dim = dict.len();
                Ok((FittedGenerator::CharNgram { dict, n }, dim))
            }
            (view, name) => Err(Error::Config(format!(
                "generator `{name}` is not available in the {} view",
                view.key()
            ))),
        }
    }

    /// Stacked raw vectors of the training rows for reducer fitting: one row
    /// per training sample (document view) or gene rows then mutation rows
    /// (entity views).
    fn raw_training_matrix(
        &self,
        view: ViewKind,
        spec: &GeneratorSpec,
        generator: &FittedGenerator,
        raw_space: &str,
    ) -> Result<FeatureMatrix> {
        let _ = spec;
        let mut rows = Vec::new();
        match view {
            ViewKind::Document => {
                for &i in self.train_rows {
                    rows.push(self.raw_for_fit_document(generator, i, raw_space)?);
                }
            }
            ViewKind::EntityText => {
                for kind in [EntityKind::Gene, EntityKind::Mutation] {
                    for &i in self.train_rows {
                        let sample = &self.corpus.samples[i];
                        let name = match kind {
                            EntityKind::Gene => &sample.gene,
                            EntityKind::Mutation => &sample.mutation,
                        };
                        rows.push(self.raw_for_fit_entity(generator, kind, name)?);
                    }
                }
            }
            ViewKind::EntityName => {
                for kind in [EntityKind::Gene, EntityKind::Mutation] {
                    for &i in self.train_rows {
                        let sample = &self.corpus.samples[i];
                        let name = match kind {
                            EntityKind::Gene => &sample.gene,
                            EntityKind::Mutation => &sample.mutation,
                        };
                        match generator {
                            FittedGenerator::CharNgram { dict, n } => {
                                rows.push(char_ngram_vector(name, *n, dict));
                            }
                            _ => {
                                return Err(Error::Config(
                                    "only char_ngram supports reduction in the name view".into(),
                                ))
                            }
                        }
                    }
                }
            }
        }
        FeatureMatrix::from_rows(rows)
    }

    fn raw_for_fit_document(
        &self,
        generator: &FittedGenerator,
        row: usize,
        raw_space: &str,
    ) -> Result<SparseVector> {
        let doc = self.corpus.samples[row].doc_id;
        match generator {
            FittedGenerator::PosCounts { dict } => {
                Ok(count_vector(&self.shared.doc_pos_streams[doc], dict))
            }
            FittedGenerator::PosTfidf { dict, mode } => {
                tfidf_vector(&self.shared.doc_pos_streams[doc], dict, *mode)
            }
            FittedGenerator::TermFrequency { dict } => {
                Ok(count_vector(&self.shared.doc_streams[doc], dict))
            }
            FittedGenerator::Ngram { dict, n_min, n_max } => Ok(ngram_vector(
                &self.shared.doc_streams[doc],
                *n_min,
                *n_max,
                dict,
                &self.assets.stopwords,
            )),
            FittedGenerator::SentenceTfidf { dict, window } => sentence_context_tfidf(
                &self.shared.doc_streams[doc],
                &self.shared.key_sentences[row],
                *window,
                dict,
            ),
            FittedGenerator::TermList { dict } => {
                Ok(count_vector(&self.shared.doc_streams[doc], dict))
            }
            FittedGenerator::Paragraph { model } => {
                let key = &self.shared.doc_keys[doc];
                let dense = model
                    .vector(key)
                    .map(|v| v.to_vec())
                    .unwrap_or_else(|| vec![0.0; model.dim()]);
                SparseVector::from_entries(
                    raw_space,
                    model.dim(),
                    dense
                        .into_iter()
                        .enumerate()
                        .map(|(c, v)| (c as u32, v))
                        .collect(),
                )
            }
            other => Err(Error::Config(format!(
                "generator `{}` cannot serve the document view",
                generator_label(other)
            ))),
        }
    }

    fn raw_for_fit_entity(
        &self,
        generator: &FittedGenerator,
        kind: EntityKind,
        name: &str,
    ) -> Result<SparseVector> {
        let stream = |pos: bool| -> TokenStream {
            self.shared
                .patterns
                .lookup(kind, name)
                .and_then(|id| self.entity_streams.get(&id))
                .map(|(s, p)| if pos { p.clone() } else { s.clone() })
                .unwrap_or_default()
        };
        match generator {
            FittedGenerator::PosCounts { dict } => Ok(count_vector(&stream(true), dict)),
            FittedGenerator::PosTfidf { dict, mode } => tfidf_vector(&stream(true), dict, *mode),
            FittedGenerator::TermFrequency { dict } => Ok(count_vector(&stream(false), dict)),
            FittedGenerator::Ngram { dict, n_min, n_max } => Ok(ngram_vector(
                &stream(false),
                *n_min,
                *n_max,
                dict,
                &self.assets.stopwords,
            )),
            FittedGenerator::SentenceTfidf { dict, .. } => {
                let s = stream(false);
                let keys: Vec<usize> = (0..s.sentence_count()).collect();
                sentence_context_tfidf(&s, &keys, 1, dict)
            }
            other => Err(Error::Config(format!(
                "generator `{}` cannot serve the entity text view",
                generator_label(other)
            ))),
        }
    }
}

fn parse_idf_mode(spec: &GeneratorSpec) -> Result<IdfMode> {
    match spec.param_str("idf") {
        None | Some("document") => Ok(IdfMode::Document),
        Some("class") => Ok(IdfMode::Class),
        Some(other) => Err(Error::Config(format!(
            "unknown idf mode `{other}` (expected document or class)"
        ))),
    }
}
