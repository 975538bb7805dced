//! Tokenization, sentence segmentation, normalization, and PoS filtering.
//!
//! Every feature generator consumes [`TokenStream`]s produced here, so the
//! rules are deliberately boring and deterministic: tokens are maximal
//! alphanumeric runs (mutation names like `T1773I` stay whole), sentences end
//! at `.`/`!`/`?` followed by whitespace and a capital or digit (with an
//! abbreviation guard), and normalization lowercases everything and applies
//! the Porter stemmer to purely alphabetic tokens.

mod dictionary;
mod porter;

pub use dictionary::{
    build_char_ngram_dictionary, build_dictionary, build_ngram_dictionary, char_ngrams,
    load_term_list, parse_term_list, word_ngrams, Dictionary,
};
pub use porter::stem;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One token with its provenance in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub normalized: String,
    pub sentence_index: usize,
    /// Byte offset of `surface` in the source.
    pub offset: usize,
}

/// Ordered tokens of one document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    tokens: Vec<Token>,
    sentence_count: usize,
}

impl TokenStream {
    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        let sentence_count = tokens.last().map_or(0, |t| t.sentence_index + 1);
        TokenStream {
            tokens,
            sentence_count,
        }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_count
    }

    /// Tokens grouped by sentence, in order. Sentences without tokens are
    /// still represented so indices line up with sentence spans.
    pub fn sentences(&self) -> Vec<&[Token]> {
        let mut out: Vec<&[Token]> = Vec::with_capacity(self.sentence_count);
        let mut start = 0;
        for s in 0..self.sentence_count {
            let end = self.tokens[start..]
                .iter()
                .position(|t| t.sentence_index != s)
                .map_or(self.tokens.len(), |p| start + p);
            out.push(&self.tokens[start..end]);
            start = end;
        }
        out
    }

    /// Tokens of one sentence.
    pub fn sentence(&self, index: usize) -> &[Token] {
        let start = self
            .tokens
            .partition_point(|t| t.sentence_index < index);
        let end = self.tokens.partition_point(|t| t.sentence_index <= index);
        &self.tokens[start..end]
    }

    pub fn normalized_terms(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.normalized.as_str())
    }
}

/// Sentence spans as byte ranges covering the whole text.
pub fn split_sentences(text: &str) -> Vec<(usize, usize)> {
    if text.is_empty() {
        return Vec::new();
    }
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut boundaries = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (_, c) = chars[i];
        if matches!(c, '.' | '!' | '?') {
            // Consume the full terminator run ("..."), then require
            // whitespace and an upper/digit opener.
            let mut j = i;
            while j + 1 < chars.len() && matches!(chars[j + 1].1, '.' | '!' | '?') {
                j += 1;
            }
            let mut k = j + 1;
            let mut saw_space = false;
            while k < chars.len() && chars[k].1.is_whitespace() {
                saw_space = true;
                k += 1;
            }
            let opens_sentence = saw_space
                && k < chars.len()
                && (chars[k].1.is_uppercase() || chars[k].1.is_ascii_digit());
            if opens_sentence && !(chars[j].1 == '.' && abbreviation_before(&chars, i)) {
                boundaries.push(chars[k].0);
            }
            i = k.max(j + 1);
        } else {
            i += 1;
        }
    }

    let mut spans = Vec::with_capacity(boundaries.len() + 1);
    let mut start = 0;
    for b in boundaries {
        spans.push((start, b));
        start = b;
    }
    spans.push((start, text.len()));
    spans
}

/// Abbreviations that end with a period mid-sentence.
const ABBREVIATIONS: &[&str] = &[
    "fig", "figs", "eq", "eqs", "ref", "refs", "et", "al", "etc", "vs", "cf", "ca", "no", "vol",
    "dr", "mr", "mrs", "ms", "st", "inc", "approx",
];

fn abbreviation_before(chars: &[(usize, char)], dot: usize) -> bool {
    let mut word = Vec::new();
    let mut i = dot;
    while i > 0 {
        let c = chars[i - 1].1;
        if c.is_alphabetic() {
            word.push(c.to_ascii_lowercase());
            i -= 1;
        } else {
            break;
        }
    }
    if word.is_empty() {
        return false;
    }
    word.reverse();
    if word.len() == 1 {
        return true;
    }
    let word: String = word.into_iter().collect();
    ABBREVIATIONS.contains(&word.as_str())
}

/// Lowercase; Porter-stem purely alphabetic ASCII tokens of length >= 4.
/// Alphanumeric tokens (mutation names) pass through lowercased only.
pub fn normalize(surface: &str) -> String {
    let lower = surface.to_lowercase();
    if lower.len() >= 4 && lower.bytes().all(|b| b.is_ascii_lowercase()) {
        porter::stem(&lower)
    } else {
        lower
    }
}

/// Split on whitespace/punctuation boundaries; tokens are maximal
/// alphanumeric runs, so digit-bearing names stay intact.
pub fn tokenize(text: &str) -> TokenStream {
    let spans = split_sentences(text);
    let mut tokens = Vec::new();
    let mut sentence = 0;
    let mut run_start: Option<usize> = None;
    let flush = |start: usize, end: usize, tokens: &mut Vec<Token>, sentence: usize| {
        let surface = &text[start..end];
        tokens.push(Token {
            surface: surface.to_string(),
            normalized: normalize(surface),
            sentence_index: sentence,
            offset: start,
        });
    };
    for (idx, c) in text.char_indices() {
        while sentence + 1 < spans.len() && idx >= spans[sentence + 1].0 {
            if let Some(start) = run_start.take() {
                flush(start, idx, &mut tokens, sentence);
            }
            sentence += 1;
        }
        if c.is_alphanumeric() {
            run_start.get_or_insert(idx);
        } else if let Some(start) = run_start.take() {
            flush(start, idx, &mut tokens, sentence);
        }
    }
    if let Some(start) = run_start {
        flush(start, text.len(), &mut tokens, sentence);
    }
    TokenStream {
        tokens,
        sentence_count: spans.len(),
    }
}

/// The four content word types plus everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PosTag {
    Noun,
    Verb,
    Adjective,
    Adverb,
    Other,
}

impl PosTag {
    pub fn is_content(self) -> bool {
        !matches!(self, PosTag::Other)
    }

    fn parse(s: &str) -> Option<PosTag> {
        match s {
            "noun" | "n" => Some(PosTag::Noun),
            "verb" | "v" => Some(PosTag::Verb),
            "adjective" | "adj" => Some(PosTag::Adjective),
            "adverb" | "adv" => Some(PosTag::Adverb),
            "other" | "x" => Some(PosTag::Other),
            _ => None,
        }
    }
}

/// Word → tag lookup with ordered suffix rules for unknown words.
/// Lookup is total: no entry and no matching suffix means [`PosTag::Other`].
#[derive(Debug, Clone)]
pub struct PosLexicon {
    words: HashMap<String, PosTag>,
    /// Stemmed lexicon entries, so inflected forms resolve too.
    stemmed: HashMap<String, PosTag>,
    suffix_rules: Vec<(String, PosTag)>,
}

impl PosLexicon {
    /// The lexicon bundled with the crate.
    pub fn bundled() -> Self {
        Self::parse(include_str!("../assets/pos_lexicon.tsv"), "bundled")
            .expect("bundled lexicon is well-formed")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&content, &path.display().to_string())
    }

    pub fn parse(content: &str, origin: &str) -> Result<Self> {
        let mut words = HashMap::new();
        for (idx, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, tag) = line.split_once('\t').ok_or_else(|| {
                Error::parse(origin, idx + 1, "expected `<word>\\t<tag>`")
            })?;
            let tag = PosTag::parse(tag.trim()).ok_or_else(|| {
                Error::parse(origin, idx + 1, format!("unknown tag `{tag}`"))
            })?;
            words.insert(word.trim().to_lowercase(), tag);
        }
        // First entry in sorted order wins on stem collisions.
        let mut stemmed = HashMap::new();
        let mut sorted: Vec<(&String, &PosTag)> = words.iter().collect();
        sorted.sort_by_key(|(w, _)| w.as_str());
        for (word, &tag) in sorted {
            stemmed.entry(normalize(word)).or_insert(tag);
        }
        Ok(PosLexicon {
            words,
            stemmed,
            suffix_rules: default_suffix_rules(),
        })
    }

    pub fn tag(&self, word: &str) -> PosTag {
        let lower = word.to_lowercase();
        if let Some(&tag) = self.words.get(&lower) {
            return tag;
        }
        if let Some(&tag) = self.stemmed.get(&normalize(&lower)) {
            return tag;
        }
        for (suffix, tag) in &self.suffix_rules {
            if lower.len() > suffix.len() + 1 && lower.ends_with(suffix.as_str()) {
                return *tag;
            }
        }
        PosTag::Other
    }
}

fn default_suffix_rules() -> Vec<(String, PosTag)> {
    [
        ("ization", PosTag::Noun),
        ("ically", PosTag::Adverb),
        ("ly", PosTag::Adverb),
        ("tion", PosTag::Noun),
        ("sion", PosTag::Noun),
        ("ment", PosTag::Noun),
        ("ness", PosTag::Noun),
        ("ance", PosTag::Noun),
        ("ence", PosTag::Noun),
        ("ity", PosTag::Noun),
        ("ase", PosTag::Noun),
        ("oma", PosTag::Noun),
        ("osis", PosTag::Noun),
        ("itis", PosTag::Noun),
        ("cyte", PosTag::Noun),
        ("emia", PosTag::Noun),
        ("ogen", PosTag::Noun),
        ("ize", PosTag::Verb),
        ("ise", PosTag::Verb),
        ("ify", PosTag::Verb),
        ("ated", PosTag::Verb),
        ("ates", PosTag::Verb),
        ("ating", PosTag::Verb),
        ("ing", PosTag::Verb),
        ("ous", PosTag::Adjective),
        ("ive", PosTag::Adjective),
        ("able", PosTag::Adjective),
        ("ible", PosTag::Adjective),
        ("ful", PosTag::Adjective),
        ("less", PosTag::Adjective),
        ("genic", PosTag::Adjective),
        ("ic", PosTag::Adjective),
        ("al", PosTag::Adjective),
        ("ary", PosTag::Adjective),
    ]
    .into_iter()
    .map(|(s, t)| (s.to_string(), t))
    .collect()
}

/// Keep only nouns, verbs, adjectives, and adverbs. Idempotent.
pub fn pos_filter(stream: &TokenStream, lexicon: &PosLexicon) -> TokenStream {
    let tokens: Vec<Token> = stream
        .tokens
        .iter()
        .filter(|t| lexicon.tag(&t.surface).is_content())
        .cloned()
        .collect();
    TokenStream {
        tokens,
        sentence_count: stream.sentence_count,
    }
}

/// Fixed stop-word set applied before dictionary building.
#[derive(Debug, Clone, Default)]
pub struct Stopwords {
    words: HashSet<String>,
}

impl Stopwords {
    pub fn bundled() -> Self {
        let words = include_str!("../assets/stopwords.txt")
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Stopwords { words }
    }

    pub fn empty() -> Self {
        Stopwords::default()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_simple_sentence() {
        let stream = tokenize("BRCA1 is mutated.");
        let surfaces: Vec<&str> = stream.tokens().iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(surfaces, ["BRCA1", "is", "mutated"]);
        assert!(stream.tokens().iter().all(|t| t.sentence_index == 0));
        assert_eq!(stream.sentence_count(), 1);
    }

    #[test]
    fn empty_text_gives_empty_stream() {
        let stream = tokenize("");
        assert!(stream.is_empty());
        assert_eq!(stream.sentence_count(), 0);
    }

    #[test]
    fn keeps_alphanumeric_mutation_names_whole() {
        let stream = tokenize("T1773I and M1663L");
        let surfaces: Vec<&str> = stream.tokens().iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(surfaces, ["T1773I", "and", "M1663L"]);
    }

    #[test]
    fn offsets_project_back_to_source() {
        let text = "Val-600 (BRCA1, p.T1773I) regulates growth. See Fig. 2!";
        let stream = tokenize(text);
        for t in stream.tokens() {
            assert_eq!(&text[t.offset..t.offset + t.surface.len()], t.surface);
        }
    }

    #[test]
    fn splits_two_sentences() {
        assert_eq!(split_sentences("A mutation. It matters.").len(), 2);
    }

    #[test]
    fn abbreviation_guard_holds_sentence_together() {
        assert_eq!(split_sentences("See Fig. 2 for details.").len(), 1);
        assert_eq!(split_sentences("Reported by Smith et al. Nothing followed.").len(), 1);
        assert_eq!(split_sentences("The A. variant binds.").len(), 1);
    }

    #[test]
    fn no_terminator_is_one_sentence() {
        assert_eq!(split_sentences("no terminators here"), vec![(0, 19)]);
    }

    #[test]
    fn spans_cover_text() {
        let text = "One thing. Another thing! A third? Done.";
        let spans = split_sentences(text);
        assert_eq!(spans.first().unwrap().0, 0);
        assert_eq!(spans.last().unwrap().1, text.len());
        for w in spans.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        assert_eq!(spans.len(), 4);
    }

    #[test]
    fn sentence_indices_follow_spans() {
        let stream = tokenize("A mutation. It matters.");
        let idx: Vec<usize> = stream.tokens().iter().map(|t| t.sentence_index).collect();
        assert_eq!(idx, [0, 0, 1, 1]);
        assert_eq!(stream.sentences().len(), 2);
    }

    #[test]
    fn normalize_stems_alphabetic_words() {
        assert_eq!(normalize("Mutations"), "mutat");
        assert_eq!(normalize("dramatically"), "dramat");
    }

    #[test]
    fn normalize_passes_alphanumerics_through() {
        assert_eq!(normalize("BRCA1"), "brca1");
        assert_eq!(normalize("T1773I"), "t1773i");
    }

    #[test]
    fn pos_filter_keeps_content_words() {
        let lexicon = PosLexicon::bundled();
        let stream = tokenize("the protein can interact");
        let filtered = pos_filter(&stream, &lexicon);
        let kept: Vec<&str> = filtered.tokens().iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(kept, ["protein", "interact"]);
    }

    #[test]
    fn pos_filter_is_idempotent() {
        let lexicon = PosLexicon::bundled();
        let stream = tokenize("the mutated protein dramatically affects growth");
        let once = pos_filter(&stream, &lexicon);
        let twice = pos_filter(&once, &lexicon);
        assert_eq!(once, twice);
    }

    #[test]
    fn all_other_stream_filters_to_empty() {
        let lexicon = PosLexicon::bundled();
        let stream = tokenize("the of and");
        assert!(pos_filter(&stream, &lexicon).is_empty());
    }

    #[test]
    fn cited_verbs_are_tagged_verb() {
        let lexicon = PosLexicon::bundled();
        for word in ["interact", "affect", "detect"] {
            assert_eq!(lexicon.tag(word), PosTag::Verb, "{word}");
        }
    }

    #[test]
    fn unknown_without_suffix_is_other() {
        let lexicon = PosLexicon::bundled();
        assert_eq!(lexicon.tag("zzqx"), PosTag::Other);
    }
}
