mod common;

use std::collections::BTreeSet;

use common::{data_path, random_corpus, test_strings, tree_probabilities, Oracle};
use dop::disambig::{nbest_derivations, shortest_derivations, shortest_length, viterbi_best, SHORTEST_CAP};
use dop::fragments::count_fragments;
use dop::grammar::compile;
use dop::harness::{parse_sentence, ParseSettings, ParserSetup};
use dop::parser::{build_forest, enumerate_derivations, inside_scores};
use dop::treebank::read_treebank;
use dop::{Corpus, NormalizeOptions, ScoreMode, Sentence};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sentence(ws: &[String]) -> Sentence {
    Sentence::new(ws.to_vec()).unwrap()
}

#[test]
fn forest_matches_brute_force_search() {
    let mut compared = 0;
    for seed in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = random_corpus(&mut rng, 5);
        let depth = [None, Some(1), Some(2)][seed as usize % 3];
        let table = count_fragments(&corpus, depth);
        let g = compile(&table, ScoreMode::RelativeFrequency, corpus.root_labels()).unwrap();
        let oracle = Oracle::new(&table, &corpus.root_labels());
        for ws in test_strings(&mut rng, &corpus, 6) {
            let mut forest = build_forest(&g, &sentence(&ws), vec![]).unwrap();
            let Some(expected) = oracle.derivations(&ws, 50_000) else {
                continue;
            };
            assert_eq!(forest.derivation_count(), expected.len() as u128, "{:?}", ws);
            if expected.is_empty() {
                assert!(!forest.has_parse());
                continue;
            }
            let got = enumerate_derivations(&forest, &g, 50_000).unwrap();
            let mut got_keys: Vec<Vec<&str>> = got.iter().map(|d| d.keys(&forest, &g)).collect();
            let mut want_keys: Vec<Vec<&str>> = expected
                .iter()
                .map(|d| d.keys.iter().map(String::as_str).collect())
                .collect();
            got_keys.sort();
            want_keys.sort();
            assert_eq!(got_keys, want_keys);

            inside_scores(&mut forest, &g);
            let total: f64 = expected.iter().map(|d| d.prob).sum();
            let inside = forest.goal_inside().unwrap().exp();
            assert!((inside - total).abs() <= 1e-9 * total, "{} vs {}", inside, total);

            let trees: BTreeSet<String> = got.iter().map(|d| d.tree(&forest, &g).unwrap().to_string()).collect();
            assert_eq!(trees, tree_probabilities(&expected).keys().cloned().collect());

            let min = expected.iter().map(|d| d.keys.len()).min().unwrap();
            assert_eq!(shortest_length(&forest), Some(min));
            let shortest = shortest_derivations(&forest, &g, SHORTEST_CAP).unwrap();
            assert_eq!(shortest.len(), expected.iter().filter(|d| d.keys.len() == min).count());
            compared += 1;
        }
    }
    assert!(compared > 100, "only {} sentences compared", compared);
}

#[test]
fn viterbi_is_top_of_nbest() {
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let corpus = random_corpus(&mut rng, 5);
        let table = count_fragments(&corpus, None);
        let g = compile(&table, ScoreMode::RelativeFrequency, corpus.root_labels()).unwrap();
        for t in &corpus.trees {
            let ws: Vec<String> = t.words().into_iter().map(String::from).collect();
            let forest = build_forest(&g, &sentence(&ws), vec![]).unwrap();
            let best = viterbi_best(&forest, &g).unwrap();
            let nb = nbest_derivations(&forest, &g, 5).unwrap();
            assert_eq!(nb[0], best);
            assert!(nb.windows(2).all(|w| w[0].log_prob >= w[1].log_prob - 1e-12));
        }
    }
}

#[test]
fn training_sentences_come_back_under_shortest() {
    let corpus = Corpus::normalized(
        &read_treebank(data_path("mini.mrg")).unwrap(),
        &NormalizeOptions::default(),
    );
    let table = count_fragments(&corpus, None);
    let g = compile(&table, ScoreMode::RelativeFrequency, corpus.root_labels()).unwrap();
    let ranks = dop::fragments::rank_fragments(&table);
    let setup = ParserSetup {
        grammar: &g,
        ranks: Some(&ranks),
        lexicon: None,
    };
    let settings = ParseSettings {
        strategies: vec![
            dop::Strategy::Shortest,
            dop::Strategy::MppNbest,
            dop::Strategy::MppMonteCarlo,
        ],
        mc_samples: 2000,
        ..ParseSettings::default()
    };
    for (i, t) in corpus.trees.iter().enumerate().take(20) {
        let ws: Vec<String> = t.words().into_iter().map(String::from).collect();
        let out = parse_sentence(&setup, &settings, i + 1, &sentence(&ws)).unwrap();
        let forest = build_forest(&g, &sentence(&ws), vec![]).unwrap();
        // the whole training tree is one fragment
        assert_eq!(shortest_length(&forest), Some(1));
        let shortest = out[0].tree.as_ref().unwrap();
        assert_eq!(shortest.words(), t.words());
        let exact_or_other_training_tree = corpus.trees.contains(shortest);
        assert!(exact_or_other_training_tree, "{}", shortest);
        assert_eq!(out[1].tree, out[2].tree, "n-best and sampling disagree on {}", t);
    }
}
