//! Deterministic synthetic corpus for end-to-end tests and demos.
//!
//! The generator emits the competition file formats (variants CSV, `||`
//! text file, bioentity and keyword term lists) with class-indicative
//! vocabulary: each class has signature words that appear mostly in its
//! documents, genes are biased to one class, and a fraction of samples share
//! a document verbatim so the text-sharing pathology is present. With
//! `shuffle_labels` the class column is permuted, destroying every signal
//! while keeping the marginal label distribution.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub samples: usize,
    pub classes: usize,
    pub genes_per_class: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Fraction of samples that reuse the previous same-class document.
    pub shared_text_fraction: f64,
    pub seed: u64,
    pub shuffle_labels: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            samples: 300,
            classes: 9,
            genes_per_class: 4,
            min_sentences: 6,
            max_sentences: 11,
            shared_text_fraction: 0.1,
            seed: 7,
            shuffle_labels: false,
        }
    }
}

/// The generated input files, as in-memory strings.
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub variants: String,
    pub texts: String,
    pub bioentities: String,
    pub keywords: String,
    /// Sidecar with one validation id per line (every tenth sample).
    pub split_ids: String,
}

/// Class signature vocabulary: suffixes put the words in the content classes
/// the PoS tagger keeps (nouns, verbs, adjectives, adverbs).
fn signature_words(class: usize) -> Vec<String> {
    let mut words = Vec::new();
    for i in 0..4 {
        words.push(format!("sig{class}x{i}ation")); // noun
    }
    for i in 0..3 {
        words.push(format!("act{class}x{i}ize")); // verb
    }
    for i in 0..2 {
        words.push(format!("mark{class}x{i}ous")); // adjective
    }
    words.push(format!("deep{class}x0ly")); // adverb
    words
}

fn background_words() -> Vec<String> {
    let mut words = Vec::new();
    for i in 0..12 {
        words.push(format!("base{i}ation"));
    }
    for i in 0..6 {
        words.push(format!("flow{i}ize"));
    }
    for i in 0..6 {
        words.push(format!("gray{i}ous"));
    }
    words
}

fn gene_name(class: usize, slot: usize) -> String {
    format!("GEN{}{}", class + 1, (b'A' + slot as u8) as char)
}

fn mutation_name(rng: &mut ChaCha8Rng) -> String {
    let aas = [b'A', b'C', b'D', b'E', b'F', b'G', b'H', b'K', b'L', b'M'];
    let a = aas[rng.gen_range(0..aas.len())] as char;
    let b = aas[rng.gen_range(0..aas.len())] as char;
    let pos = rng.gen_range(10..999);
    format!("{a}{pos}{b}")
}

pub fn generate(options: &SynthOptions) -> SynthFiles {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let classes = options.classes;
    let signatures: Vec<Vec<String>> = (0..classes).map(signature_words).collect();
    let background = background_words();

    // Labels spread round-robin so folds stay balanced.
    let mut labels: Vec<usize> = (0..options.samples).map(|i| i % classes).collect();

    let mut genes = Vec::with_capacity(options.samples);
    let mut mutations = Vec::with_capacity(options.samples);
    let mut texts: Vec<String> = Vec::with_capacity(options.samples);
    let mut last_text_of_class: Vec<Option<usize>> = vec![None; classes];

    for (i, &class) in labels.iter().enumerate() {
        let gene = gene_name(class, rng.gen_range(0..options.genes_per_class));
        let mutation = mutation_name(&mut rng);

        let reuse = last_text_of_class[class]
            .filter(|_| rng.gen::<f64>() < options.shared_text_fraction);
        let text = match reuse {
            Some(j) => texts[j].clone(),
            None => {
                let t = synth_document(
                    &mut rng,
                    class,
                    &gene,
                    &mutation,
                    &signatures,
                    &background,
                    options,
                );
                last_text_of_class[class] = Some(i);
                t
            }
        };
        genes.push(gene);
        mutations.push(mutation);
        texts.push(text);
    }

    if options.shuffle_labels {
        labels.shuffle(&mut rng);
    }

    let mut variants = String::from("ID,Gene,Variation,Class\n");
    for i in 0..options.samples {
        variants.push_str(&format!(
            "{i},{},{},{}\n",
            genes[i],
            mutations[i],
            labels[i] + 1
        ));
    }
    let mut text_file = String::from("ID,Text\n");
    for (i, text) in texts.iter().enumerate() {
        text_file.push_str(&format!("{i}||{text}\n"));
    }

    // Bioentity list: genes plus a few shared nouns, categorized.
    let mut bioentities = String::new();
    for class in 0..classes {
        for slot in 0..options.genes_per_class {
            bioentities.push_str(&format!("{}\tgene\n", gene_name(class, slot).to_lowercase()));
        }
        bioentities.push_str(&format!("sig{class}x0ation\tdisease\n"));
        bioentities.push_str(&format!("sig{class}x1ation\tchemical\n"));
    }
    // Keywords: two signature nouns per class.
    let mut keywords = String::new();
    for (class, sig) in signatures.iter().enumerate() {
        let _ = class;
        keywords.push_str(&format!("{}\n", sig[2]));
        keywords.push_str(&format!("{}\n", sig[3]));
    }

    let mut split_ids = String::new();
    for i in (0..options.samples).step_by(10) {
        split_ids.push_str(&format!("{i}\n"));
    }

    SynthFiles {
        variants,
        texts: text_file,
        bioentities,
        keywords,
        split_ids,
    }
}

fn synth_document(
    rng: &mut ChaCha8Rng,
    class: usize,
    gene: &str,
    mutation: &str,
    signatures: &[Vec<String>],
    background: &[String],
    options: &SynthOptions,
) -> String {
    let sig = &signatures[class];
    let n_sentences = rng.gen_range(options.min_sentences..=options.max_sentences);
    let mut sentences = Vec::with_capacity(n_sentences + 3);
    let pick = |rng: &mut ChaCha8Rng, pool: &[String]| pool[rng.gen_range(0..pool.len())].clone();

    // Guaranteed mentions so every view has evidence.
    sentences.push(format!(
        "The gene {gene} {} the {} pathway here.",
        pick(rng, &sig[4..7]),
        pick(rng, &sig[0..4]),
    ));
    sentences.push(format!(
        "Mutation {mutation} {} {} activity and remains {}.",
        pick(rng, &sig[4..7]),
        pick(rng, &sig[0..4]),
        pick(rng, &sig[7..9]),
    ));
    // Cross-document mention of another same-class gene feeds the global
    // entity text view.
    let other_gene = gene_name(class, rng.gen_range(0..options.genes_per_class));
    sentences.push(format!(
        "Earlier work on {other_gene} reported the same {} effect {}.",
        pick(rng, &sig[0..4]),
        sig[9].clone(),
    ));

    for _ in 0..n_sentences {
        let roll: f64 = rng.gen();
        if roll < 0.55 {
            sentences.push(format!(
                "The {} {} a {} signal in affected tissue.",
                pick(rng, &sig[0..4]),
                pick(rng, &sig[4..7]),
                pick(rng, &sig[7..9]),
            ));
        } else if roll < 0.75 {
            sentences.push(format!(
                "Samples with {gene} show {} {} readouts.",
                pick(rng, &sig[7..9]),
                pick(rng, background),
            ));
        } else {
            sentences.push(format!(
                "The {} cohort shows {} and {} patterns broadly.",
                pick(rng, background),
                pick(rng, background),
                pick(rng, background),
            ));
        }
    }
    sentences.join(" ")
}
