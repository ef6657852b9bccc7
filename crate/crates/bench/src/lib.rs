//! Inputs shared by the benchmarks.

use dop::fragments::{count_fragments, rank_fragments};
use dop::grammar::compile;
use dop::treebank::parse_bracketed;
use dop::{Corpus, FragmentTable, Grammar, NormalizeOptions, RankTable, ScoreMode, Sentence};

pub const MINI_TREEBANK: &str = include_str!("../../core/data/mini.mrg");

pub fn mini_corpus() -> Corpus {
    Corpus::normalized(&parse_bracketed(MINI_TREEBANK).unwrap(), &NormalizeOptions::default())
}

/// Grammar, table and ranks for fragments up to `depth`.
pub fn mini_model(depth: Option<usize>) -> (FragmentTable, Grammar, RankTable) {
    let corpus = mini_corpus();
    let table = count_fragments(&corpus, depth);
    let grammar = compile(&table, ScoreMode::RelativeFrequency, corpus.root_labels()).unwrap();
    let ranks = rank_fragments(&table);
    (table, grammar, ranks)
}

/// The yields of the first `n` trees.
pub fn mini_sentences(n: usize) -> Vec<Sentence> {
    mini_corpus()
        .trees
        .iter()
        .take(n)
        .map(|t| Sentence::new(t.words().into_iter().map(String::from).collect()).unwrap())
        .collect()
}
