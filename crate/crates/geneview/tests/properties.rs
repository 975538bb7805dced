//! Property tests for the spec invariants that benefit from random inputs.

use proptest::prelude::*;

use geneview::entity::{naive_find_matches, Automaton, EntityKind, MatchFilter, PatternSet};
use geneview::features::{FeatureMatrix, SparseVector};
use geneview::textproc::{build_dictionary, tokenize, Stopwords, TokenStream};

fn pattern_strategy() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-cA-C1 ]{1,8}", 1..20).prop_map(|ps| {
        ps.into_iter()
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn automaton_matches_naive_scan(
        patterns in pattern_strategy(),
        text in "[a-cA-C1 .]{0,400}",
        boundary in any::<bool>(),
    ) {
        let mut set = PatternSet::new();
        let mut seen = std::collections::HashSet::new();
        for p in &patterns {
            if seen.insert(p.clone()) {
                set.insert(EntityKind::Gene, p);
            }
        }
        prop_assume!(!set.is_empty());
        let filter = if boundary {
            MatchFilter::default()
        } else {
            MatchFilter::None
        };
        let automaton = Automaton::build(&set).unwrap();
        let mut fast: Vec<(u32, usize)> = automaton
            .find_matches_with(&text, filter)
            .iter()
            .map(|m| (m.entity.0, m.end))
            .collect();
        fast.sort_unstable();
        let mut naive: Vec<(u32, usize)> = naive_find_matches(&set, &text, filter)
            .iter()
            .map(|m| (m.entity.0, m.end))
            .collect();
        naive.sort_unstable();
        prop_assert_eq!(fast, naive);
    }

    #[test]
    fn token_offsets_project_back(text in "\\PC{0,300}") {
        let stream = tokenize(&text);
        for token in stream.tokens() {
            let slice = &text[token.offset..token.offset + token.surface.len()];
            prop_assert_eq!(slice, token.surface.as_str());
        }
    }

    #[test]
    fn matches_are_reported_in_end_order(
        patterns in pattern_strategy(),
        text in "[a-cA-C1 ]{0,300}",
    ) {
        let mut set = PatternSet::new();
        let mut seen = std::collections::HashSet::new();
        for p in &patterns {
            if seen.insert(p.clone()) {
                set.insert(EntityKind::Gene, p);
            }
        }
        prop_assume!(!set.is_empty());
        let automaton = Automaton::build(&set).unwrap();
        let matches = automaton.find_matches_with(&text, MatchFilter::None);
        for w in matches.windows(2) {
            prop_assert!(w[0].end <= w[1].end);
        }
    }

    #[test]
    fn dictionary_is_permutation_invariant(
        docs in prop::collection::vec("[a-e ]{0,40}", 1..12),
        rotate in 0usize..12,
    ) {
        let streams: Vec<TokenStream> = docs.iter().map(|d| tokenize(d)).collect();
        let mut rotated = streams.clone();
        let pivot = rotate % rotated.len().max(1);
        rotated.rotate_left(pivot);
        let build = |s: &[TokenStream]| {
            build_dictionary("d", s, None, 1, None, &Stopwords::empty())
        };
        match (build(&streams), build(&rotated)) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.terms(), b.terms());
                for col in 0..a.len() {
                    prop_assert_eq!(a.document_frequency(col), b.document_frequency(col));
                }
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "one build failed: {:?} vs {:?}", a.is_ok(), b.is_ok()),
        }
    }

    #[test]
    fn matrix_text_format_round_trips(
        rows in prop::collection::vec(
            prop::collection::btree_map(0u32..40, -1e6f64..1e6, 0..12),
            1..8,
        )
    ) {
        let built: Vec<SparseVector> = rows
            .iter()
            .map(|entries| {
                SparseVector::from_entries(
                    "space",
                    40,
                    entries.iter().map(|(&c, &v)| (c, v)).collect(),
                )
                .unwrap()
            })
            .collect();
        let matrix = FeatureMatrix::from_rows(built).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mtx");
        matrix.write(&path).unwrap();
        let back = FeatureMatrix::read(&path).unwrap();
        prop_assert_eq!(matrix, back);
    }

    #[test]
    fn blend_rows_stay_on_the_simplex(
        seeds in prop::collection::vec(0u64..1000, 2..5),
        n in 1usize..12,
    ) {
        use geneview::ensemble::{blend, EnsembleWeights, PredictionSet};
        use rand::{Rng, SeedableRng};
        let models: Vec<Vec<Vec<f64>>> = seeds
            .iter()
            .map(|&s| {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s);
                (0..n)
                    .map(|_| {
                        let raw: Vec<f64> = (0..9).map(|_| rng.gen::<f64>() + 0.01).collect();
                        let sum: f64 = raw.iter().sum();
                        raw.into_iter().map(|v| v / sum).collect()
                    })
                    .collect()
            })
            .collect();
        let ids: Vec<String> = (0..models.len()).map(|i| format!("m{i}")).collect();
        let set = PredictionSet::new(ids.clone(), models, None).unwrap();
        let c = ids.len();
        let weights = EnsembleWeights::Global {
            model_ids: ids,
            weights: vec![1.0 / c as f64; c],
        };
        for row in blend(&set, &weights).unwrap() {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }
}
