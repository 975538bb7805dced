//! Entity text view construction: multi-pattern matching over the whole
//! document collection and global per-entity sentence collection.
//!
//! Gene and mutation names are compiled into one Aho-Corasick automaton, every
//! document is scanned once, and each matched sentence is filed under its
//! entity — across *all* documents, not just the sample's own. That global
//! collection is what lets two samples sharing a document still receive
//! different evidence.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::textproc::split_sentences;

/// Whether an entity is a gene or a mutation name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Gene,
    Mutation,
}

impl EntityKind {
    pub fn prefix(self) -> &'static str {
        match self {
            EntityKind::Gene => "gene",
            EntityKind::Mutation => "mut",
        }
    }
}

/// Dense id for one `(kind, name)` entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub u32);

/// The patterns to search for, one per unique entity name.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PatternSet {
    entities: Vec<(EntityKind, String)>,
    #[serde(skip)]
    by_name: HashMap<(EntityKind, String), EntityId>,
}

impl PatternSet {
    pub fn new() -> Self {
        PatternSet::default()
    }

    /// Register every gene and mutation name of the corpus, deduplicated.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut set = PatternSet::new();
        for s in &corpus.samples {
            set.insert(EntityKind::Gene, &s.gene);
            set.insert(EntityKind::Mutation, &s.mutation);
        }
        set
    }

    pub fn insert(&mut self, kind: EntityKind, name: &str) -> EntityId {
        if let Some(&id) = self.by_name.get(&(kind, name.to_string())) {
            return id;
        }
        let id = EntityId(self.entities.len() as u32);
        self.entities.push((kind, name.to_string()));
        self.by_name.insert((kind, name.to_string()), id);
        id
    }

    pub fn lookup(&self, kind: EntityKind, name: &str) -> Option<EntityId> {
        self.by_name.get(&(kind, name.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entity(&self, id: EntityId) -> (&EntityKind, &str) {
        let (kind, name) = &self.entities[id.0 as usize];
        (kind, name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityId, EntityKind, &str)> {
        self.entities
            .iter()
            .enumerate()
            .map(|(i, (kind, name))| (EntityId(i as u32), *kind, name.as_str()))
    }

    /// Rebuild the lookup map after deserialization.
    pub fn reindex(&mut self) {
        self.by_name = self
            .entities
            .iter()
            .enumerate()
            .map(|(i, (k, n))| ((*k, n.clone()), EntityId(i as u32)))
            .collect();
    }
}

/// One reported occurrence: the pattern's entity and the exclusive byte
/// offset just past the match in the original text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub entity: EntityId,
    pub end: usize,
}

/// Word-boundary handling for reported matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchFilter {
    /// Report raw automaton output.
    None,
    /// Drop matches embedded in longer alphanumeric runs, but only for
    /// patterns of at least `min_len` characters; shorter patterns (B2, AKT)
    /// often legitimately occur inside composite tokens.
    WordBoundary { min_len: usize },
}

impl Default for MatchFilter {
    fn default() -> Self {
        MatchFilter::WordBoundary { min_len: 3 }
    }
}

#[derive(Debug, Clone)]
struct Node {
    children: Vec<(char, u32)>,
    fail: u32,
    /// Pattern ids ending here, own outputs before inherited ones.
    output: Vec<u32>,
}

impl Node {
    fn new() -> Self {
        Node {
            children: Vec::new(),
            fail: 0,
            output: Vec::new(),
        }
    }

    fn child(&self, c: char) -> Option<u32> {
        self.children
            .binary_search_by(|&(k, _)| k.cmp(&c))
            .ok()
            .map(|i| self.children[i].1)
    }
}

/// Aho-Corasick automaton over the pattern set. Matching is case-insensitive:
/// both patterns and text are folded one character at a time.
#[derive(Debug, Clone)]
pub struct Automaton {
    nodes: Vec<Node>,
    /// Pattern metadata: (entity, pattern length in chars).
    patterns: Vec<(EntityId, usize)>,
}

fn fold(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

impl Automaton {
    /// Build the trie, failure links, and output closure. Construction is
    /// linear in total pattern length.
    pub fn build(set: &PatternSet) -> Result<Automaton> {
        if set.is_empty() {
            return Err(Error::Validation("empty pattern set".into()));
        }
        let mut nodes = vec![Node::new()];
        let mut patterns = Vec::with_capacity(set.len());
        for (id, _, name) in set.iter() {
            if name.is_empty() {
                return Err(Error::Validation(format!(
                    "entity {} has an empty pattern",
                    id.0
                )));
            }
            let mut node = 0u32;
            let mut chars = 0usize;
            for c in name.chars().map(fold) {
                chars += 1;
                node = match nodes[node as usize].child(c) {
                    Some(next) => next,
                    None => {
                        let next = nodes.len() as u32;
                        nodes.push(Node::new());
                        let pos = nodes[node as usize]
                            .children
                            .binary_search_by(|&(k, _)| k.cmp(&c))
                            .unwrap_err();
                        nodes[node as usize].children.insert(pos, (c, next));
                        next
                    }
                };
            }
            nodes[node as usize].output.push(id.0);
            patterns.push((id, chars));
        }

        // Failure links by BFS; outputs inherit from the fail target.
        let mut queue = std::collections::VecDeque::new();
        let root_children: Vec<(char, u32)> = nodes[0].children.clone();
        for (_, child) in root_children {
            nodes[child as usize].fail = 0;
            queue.push_back(child);
        }
        while let Some(u) = queue.pop_front() {
            let children: Vec<(char, u32)> = nodes[u as usize].children.clone();
            for (c, v) in children {
                let mut f = nodes[u as usize].fail;
                loop {
                    if let Some(next) = nodes[f as usize].child(c) {
                        if next != v {
                            f = next;
                            break;
                        }
                    }
                    if f == 0 {
                        break;
                    }
                    f = nodes[f as usize].fail;
                }
                nodes[v as usize].fail = f;
                let inherited = nodes[f as usize].output.clone();
                nodes[v as usize].output.extend(inherited);
                queue.push_back(v);
            }
        }

        Ok(Automaton { nodes, patterns })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// All pattern occurrences in `text`, end-offset order, each exactly
    /// once, with the default word-boundary filter.
    pub fn find_matches(&self, text: &str) -> Vec<Match> {
        self.find_matches_with(text, MatchFilter::default())
    }

    pub fn find_matches_with(&self, text: &str, filter: MatchFilter) -> Vec<Match> {
        let mut out = Vec::new();
        let mut state = 0u32;
        // Track char index -> byte offset for boundary checks.
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        for (pos, &(_, raw)) in chars.iter().enumerate() {
            let c = fold(raw);
            loop {
                if let Some(next) = self.nodes[state as usize].child(c) {
                    state = next;
                    break;
                }
                if state == 0 {
                    break;
                }
                state = self.nodes[state as usize].fail;
            }
            let end_byte = chars
                .get(pos + 1)
                .map_or(text.len(), |&(off, _)| off);
            for &pid in &self.nodes[state as usize].output {
                let (entity, len) = self.patterns[pid as usize];
                if let MatchFilter::WordBoundary { min_len } = filter {
                    if len >= min_len && !self.on_word_boundary(&chars, pos, len) {
                        continue;
                    }
                }
                out.push(Match {
                    entity,
                    end: end_byte,
                });
            }
        }
        out
    }

    /// The match covers chars `pos+1-len ..= pos`; both edges must touch a
    /// non-alphanumeric character or the string edge.
    fn on_word_boundary(&self, chars: &[(usize, char)], pos: usize, len: usize) -> bool {
        let start = pos + 1 - len;
        let left_ok = start == 0 || !chars[start - 1].1.is_alphanumeric();
        let right_ok = pos + 1 == chars.len() || !chars[pos + 1].1.is_alphanumeric();
        left_ok && right_ok
    }
}

/// Naive per-pattern scanner used as the matching oracle: same folding, same
/// boundary filter, quadratic time.
pub fn naive_find_matches(set: &PatternSet, text: &str, filter: MatchFilter) -> Vec<Match> {
    let chars: Vec<char> = text.chars().map(fold).collect();
    let offsets: Vec<usize> = text.char_indices().map(|(o, _)| o).collect();
    let raw: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    for (id, _, name) in set.iter() {
        let pattern: Vec<char> = name.chars().map(fold).collect();
        if pattern.is_empty() || pattern.len() > chars.len() {
            continue;
        }
        for start in 0..=chars.len() - pattern.len() {
            if chars[start..start + pattern.len()] == pattern[..] {
                let last = start + pattern.len() - 1;
                if let MatchFilter::WordBoundary { min_len } = filter {
                    if pattern.len() >= min_len {
                        let left_ok = start == 0 || !raw[start - 1].is_alphanumeric();
                        let right_ok = last + 1 == raw.len() || !raw[last + 1].is_alphanumeric();
                        if !(left_ok && right_ok) {
                            continue;
                        }
                    }
                }
                let end = offsets.get(last + 1).copied().unwrap_or(text.len());
                out.push(Match { entity: id, end });
            }
        }
    }
    out.sort_by_key(|m| (m.end, m.entity.0));
    out
}

/// All sentences of the collection that mention one entity, in
/// `(doc_id, sentence_index)` order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntityText {
    pub entity: EntityId,
    /// `(doc_id, sentence_index, sentence text)` triples, deduplicated.
    pub sentences: Vec<(usize, usize, String)>,
}

impl EntityText {
    pub fn combined_text(&self) -> String {
        let mut s = String::new();
        for (_, _, sentence) in &self.sentences {
            let t = sentence.trim();
            if t.is_empty() {
                continue;
            }
            if !s.is_empty() {
                s.push(' ');
            }
            s.push_str(t);
        }
        s
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Per-entity sentence collections over every document in the corpus.
/// Entities with no mentions map to an empty [`EntityText`].
pub fn extract_entity_texts(
    corpus: &Corpus,
    set: &PatternSet,
) -> Result<BTreeMap<EntityId, EntityText>> {
    extract_entity_texts_in(corpus, set, None)
}

/// Extraction restricted to a document subset; `None` scans every document.
/// Restricting to training-fold documents keeps fold fitting leak-free.
pub fn extract_entity_texts_in(
    corpus: &Corpus,
    set: &PatternSet,
    doc_filter: Option<&std::collections::HashSet<usize>>,
) -> Result<BTreeMap<EntityId, EntityText>> {
    let automaton = Automaton::build(set)?;
    let per_doc: Vec<(Vec<(EntityId, usize)>, Vec<(usize, usize)>)> = corpus
        .documents
        .par_iter()
        .enumerate()
        .map(|(doc_id, text)| {
            if doc_filter.is_some_and(|f| !f.contains(&doc_id)) {
                return (Vec::new(), Vec::new());
            }
            let spans = split_sentences(text);
            let mut hits: Vec<(EntityId, usize)> = Vec::new();
            for m in automaton.find_matches(text) {
                // end is exclusive; pick the sentence containing end-1.
                let s = spans
                    .partition_point(|&(_, e)| e < m.end)
                    .min(spans.len().saturating_sub(1));
                hits.push((m.entity, s));
            }
            hits.sort_unstable_by_key(|&(e, s)| (e, s));
            hits.dedup();
            (hits, spans)
        })
        .collect();

    let mut texts: BTreeMap<EntityId, EntityText> = set
        .iter()
        .map(|(id, _, _)| {
            (
                id,
                EntityText {
                    entity: id,
                    sentences: Vec::new(),
                },
            )
        })
        .collect();
    for (doc_id, (hits, spans)) in per_doc.iter().enumerate() {
        for &(entity, sentence_index) in hits {
            let (start, end) = spans[sentence_index];
            texts.get_mut(&entity).expect("registered").sentences.push((
                doc_id,
                sentence_index,
                corpus.documents[doc_id][start..end].trim().to_string(),
            ));
        }
    }
    Ok(texts)
}

/// Dump entity texts for inspection/caching: one file per entity with
/// `<doc_id>\t<sentence_index>\t<sentence>` lines.
pub fn dump_entity_texts(
    dir: &Path,
    set: &PatternSet,
    texts: &BTreeMap<EntityId, EntityText>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, kind, name) in set.iter() {
        let sanitized: String = name
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { '_' })
            .collect();
        let path = dir.join(format!("{}_{}_{}.tsv", kind.prefix(), id.0, sanitized));
        let mut file =
            std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
        if let Some(text) = texts.get(&id) {
            for (doc_id, sentence_index, sentence) in &text.sentences {
                writeln!(file, "{doc_id}\t{sentence_index}\t{}", sentence.replace(['\t', '\n'], " "))
                    .map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sample, CLASS_COUNT};

    fn set_of(patterns: &[&str]) -> PatternSet {
        let mut set = PatternSet::new();
        for p in patterns {
            set.insert(EntityKind::Gene, p);
        }
        set
    }

    #[test]
    fn classic_trie_has_ten_nodes() {
        let set = set_of(&["he", "she", "his", "hers"]);
        let automaton = Automaton::build(&set).unwrap();
        assert_eq!(automaton.node_count(), 10);
    }

    #[test]
    fn single_char_pattern_has_two_nodes() {
        let automaton = Automaton::build(&set_of(&["a"])).unwrap();
        assert_eq!(automaton.node_count(), 2);
    }

    #[test]
    fn ushers_fixture_without_boundary_filter() {
        let set = set_of(&["he", "she", "his", "hers"]);
        let automaton = Automaton::build(&set).unwrap();
        let matches = automaton.find_matches_with("ushers", MatchFilter::None);
        let got: Vec<(u32, usize)> = matches.iter().map(|m| (m.entity.0, m.end)).collect();
        // she@4, he@4, hers@6
        assert_eq!(got.len(), 3);
        assert!(got.contains(&(1, 4)));
        assert!(got.contains(&(0, 4)));
        assert!(got.contains(&(3, 6)));
    }

    #[test]
    fn no_occurrences_is_empty() {
        let set = set_of(&["BRCA1"]);
        let automaton = Automaton::build(&set).unwrap();
        assert!(automaton.find_matches("nothing here").is_empty());
    }

    #[test]
    fn gene_with_mutation_context_matches() {
        let mut set = PatternSet::new();
        let gene = set.insert(EntityKind::Gene, "BRCA1");
        set.insert(EntityKind::Mutation, "P1749R");
        let automaton = Automaton::build(&set).unwrap();
        let text = "The gene BRCA1 and its mutation P1749R were studied.";
        let matches = automaton.find_matches(text);
        assert!(matches.iter().any(|m| m.entity == gene && m.end == 14));
        assert_eq!(matches.len(), 2);
    }

    #[test]
    fn matching_is_case_insensitive() {
        let set = set_of(&["BRCA1"]);
        let automaton = Automaton::build(&set).unwrap();
        assert_eq!(automaton.find_matches("brca1 and Brca1.").len(), 2);
    }

    #[test]
    fn boundary_filter_drops_embedded_long_patterns() {
        let set = set_of(&["BRCA1"]);
        let automaton = Automaton::build(&set).unwrap();
        assert!(automaton.find_matches("XBRCA1Y").is_empty());
        assert_eq!(automaton.find_matches("p.BRCA1-x").len(), 1);
    }

    #[test]
    fn short_patterns_skip_the_boundary_filter() {
        let set = set_of(&["he"]);
        let automaton = Automaton::build(&set).unwrap();
        assert_eq!(automaton.find_matches("ushers").len(), 1);
    }

    #[test]
    fn duplicate_patterns_share_output() {
        let mut set = PatternSet::new();
        set.insert(EntityKind::Gene, "abc");
        set.insert(EntityKind::Mutation, "abc");
        let automaton = Automaton::build(&set).unwrap();
        let matches = automaton.find_matches("abc");
        assert_eq!(matches.len(), 2);
        let ids: Vec<u32> = matches.iter().map(|m| m.entity.0).collect();
        assert!(ids.contains(&0) && ids.contains(&1));
    }

    #[test]
    fn multiword_patterns_match_literally() {
        let mut set = PatternSet::new();
        set.insert(EntityKind::Mutation, "Truncating Mutations");
        let automaton = Automaton::build(&set).unwrap();
        assert_eq!(
            automaton
                .find_matches("known truncating mutations in FAM58A")
                .len(),
            1
        );
    }

    #[test]
    fn empty_pattern_is_rejected() {
        let mut set = PatternSet::new();
        set.insert(EntityKind::Gene, "");
        assert!(Automaton::build(&set).is_err());
    }

    fn mini_corpus(texts: &[&str]) -> Corpus {
        Corpus {
            samples: texts
                .iter()
                .enumerate()
                .map(|(i, _)| Sample {
                    id: i as u64,
                    gene: "G".into(),
                    mutation: "M".into(),
                    doc_id: i,
                    label: Some(1),
                })
                .collect(),
            documents: texts.iter().map(|t| t.to_string()).collect(),
            class_count: CLASS_COUNT,
        }
    }

    #[test]
    fn extraction_collects_across_documents() {
        let corpus = mini_corpus(&[
            "KRAS is mutated here. Unrelated sentence.",
            "Another text also mentions KRAS today.",
        ]);
        let mut set = PatternSet::new();
        let kras = set.insert(EntityKind::Gene, "KRAS");
        let texts = extract_entity_texts(&corpus, &set).unwrap();
        assert_eq!(texts[&kras].sentences.len(), 2);
        assert_eq!(texts[&kras].sentences[0].0, 0);
        assert_eq!(texts[&kras].sentences[1].0, 1);
    }

    #[test]
    fn unmentioned_entity_is_empty() {
        let corpus = mini_corpus(&["nothing relevant at all"]);
        let mut set = PatternSet::new();
        let id = set.insert(EntityKind::Gene, "TP53");
        let texts = extract_entity_texts(&corpus, &set).unwrap();
        assert!(texts[&id].is_empty());
    }

    #[test]
    fn extraction_dedupes_repeat_mentions_in_a_sentence() {
        let corpus = mini_corpus(&["EGFR binds EGFR strongly."]);
        let mut set = PatternSet::new();
        let id = set.insert(EntityKind::Gene, "EGFR");
        let texts = extract_entity_texts(&corpus, &set).unwrap();
        assert_eq!(texts[&id].sentences.len(), 1);
    }

    #[test]
    fn failure_links_are_proper_suffixes() {
        // Walk the trie, recording each node's string; every fail target's
        // string must be a proper suffix of the node's string.
        let set = set_of(&["abcab", "bca", "cab", "ab", "b"]);
        let automaton = Automaton::build(&set).unwrap();
        let mut strings: Vec<Option<Vec<char>>> = vec![None; automaton.node_count()];
        strings[0] = Some(Vec::new());
        let mut queue = std::collections::VecDeque::from([0u32]);
        while let Some(u) = queue.pop_front() {
            let prefix = strings[u as usize].clone().unwrap();
            for &(c, v) in &automaton.nodes[u as usize].children {
                let mut s = prefix.clone();
                s.push(c);
                strings[v as usize] = Some(s);
                queue.push_back(v);
            }
        }
        for u in 1..automaton.node_count() {
            let s = strings[u].as_ref().unwrap();
            let f = automaton.nodes[u].fail as usize;
            let fs = strings[f].as_ref().unwrap();
            assert!(fs.len() < s.len(), "fail must shorten");
            assert_eq!(&s[s.len() - fs.len()..], &fs[..], "fail target is a suffix");
        }
    }
}
