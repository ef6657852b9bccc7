//! Data-oriented parsing: fragment extraction from a treebank, compilation
//! into a fragment grammar, chart parsing into a derivation forest and
//! several ways of picking a parse from that forest.

pub mod disambig;
pub mod error;
pub mod evaluate;
pub mod fragments;
pub mod grammar;
pub mod harness;
mod hexfloat;
pub mod lexicon;
pub mod parser;
pub mod treebank;

pub use disambig::{Derivation, ParseResult, Strategy};
pub use error::{Error, Result};
pub use evaluate::{EvalReport, ParsevalCounts};
pub use fragments::{Fragment, FragmentTable, Frontier, RankTable, Shape};
pub use grammar::{Grammar, Rule, ScoreMode};
pub use lexicon::SignatureModel;
pub use parser::{Forest, Sentence};
pub use treebank::{Corpus, NormalizeOptions, Tree};
