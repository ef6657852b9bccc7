//! Bracketed treebank input, label normalization and closed-vocabulary
//! train/test splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A labeled ordered tree. Leaves are words; every other node is a
/// nonterminal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tree {
    pub label: String,
    pub children: Vec<Tree>,
}

impl Tree {
    pub fn leaf(word: impl Into<String>) -> Self {
        Tree {
            label: word.into(),
            children: Vec::new(),
        }
    }

    pub fn node(label: impl Into<String>, children: Vec<Tree>) -> Self {
        Tree {
            label: label.into(),
            children,
        }
    }

    /// Shorthand for a preterminal over one word.
    pub fn preterminal(label: impl Into<String>, word: impl Into<String>) -> Self {
        Tree::node(label, vec![Tree::leaf(word)])
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn is_preterminal(&self) -> bool {
        self.children.len() == 1 && self.children[0].is_leaf()
    }

    /// Left-to-right word sequence.
    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_words(&mut out);
        out
    }

    fn collect_words<'a>(&'a self, out: &mut Vec<&'a str>) {
        if self.is_leaf() {
            out.push(&self.label);
        } else {
            for c in &self.children {
                c.collect_words(out);
            }
        }
    }

    /// Number of nodes, leaves included.
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Tree::size).sum::<usize>()
    }

    /// Preterminal/word pairs in yield order.
    pub fn tagged_words(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        self.collect_tagged(&mut out);
        out
    }

    fn collect_tagged<'a>(&'a self, out: &mut Vec<(&'a str, &'a str)>) {
        if self.is_preterminal() {
            out.push((&self.label, &self.children[0].label));
        } else {
            for c in &self.children {
                c.collect_tagged(out);
            }
        }
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_leaf() {
            return f.write_str(&self.label);
        }
        write!(f, "({}", self.label)?;
        for c in &self.children {
            write!(f, " {}", c)?;
        }
        f.write_str(")")
    }
}

impl std::str::FromStr for Tree {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut trees = parse_bracketed(s)?;
        match trees.len() {
            1 => Ok(trees.pop().unwrap()),
            n => Err(Error::Syntax {
                line: 1,
                column: 1,
                message: format!("expected exactly one tree, found {}", n),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Token {
    Open,
    Close,
    Atom(String),
}

/// Splits bracketed text into parentheses and whitespace-delimited atoms,
/// tagging each with its 1-based line and column.
pub(crate) fn tokenize(text: &str) -> Vec<(Token, usize, usize)> {
    let mut out = Vec::new();
    let mut line = 1;
    let mut col = 0;
    let mut atom = String::new();
    let mut atom_pos = (0, 0);
    for ch in text.chars() {
        if ch == '\n' {
            if !atom.is_empty() {
                out.push((Token::Atom(std::mem::take(&mut atom)), atom_pos.0, atom_pos.1));
            }
            line += 1;
            col = 0;
            continue;
        }
        col += 1;
        if ch == '(' || ch == ')' || ch.is_whitespace() {
            if !atom.is_empty() {
                out.push((Token::Atom(std::mem::take(&mut atom)), atom_pos.0, atom_pos.1));
            }
            match ch {
                '(' => out.push((Token::Open, line, col)),
                ')' => out.push((Token::Close, line, col)),
                _ => {}
            }
        } else {
            if atom.is_empty() {
                atom_pos = (line, col);
            }
            atom.push(ch);
        }
    }
    if !atom.is_empty() {
        out.push((Token::Atom(atom), atom_pos.0, atom_pos.1));
    }
    out
}

fn end_position(text: &str) -> (usize, usize) {
    let line = text.matches('\n').count() + 1;
    let col = text.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Reads every top-level bracketed tree in `text`.
///
/// Penn-style unlabeled wrappers, `( (S ...) )`, are unwrapped when they hold
/// exactly one tree.
pub fn parse_bracketed(text: &str) -> Result<Vec<Tree>> {
    let tokens = tokenize(text);
    let (end_line, end_col) = end_position(text);
    let err = |line, column, message: &str| Error::Syntax {
        line,
        column,
        message: message.to_string(),
    };

    // Stack of open nodes: (label, children, line, col).
    let mut stack: Vec<(Option<String>, Vec<Tree>, usize, usize)> = Vec::new();
    let mut trees = Vec::new();
    let mut expect_label = false;

    for (tok, line, col) in tokens {
        match tok {
            Token::Open => {
                if expect_label {
                    // `((` : the enclosing node has no label
                    stack.last_mut().unwrap().0 = Some(String::new());
                }
                stack.push((None, Vec::new(), line, col));
                expect_label = true;
            }
            Token::Atom(a) => {
                let Some(top) = stack.last_mut() else {
                    return Err(err(line, col, &format!("word {:?} outside of brackets", a)));
                };
                if expect_label {
                    top.0 = Some(a);
                    expect_label = false;
                } else {
                    top.1.push(Tree::leaf(a));
                }
            }
            Token::Close => {
                let Some((label, children, l0, c0)) = stack.pop() else {
                    return Err(err(line, col, "unbalanced ')'"));
                };
                expect_label = false;
                let label = label.unwrap_or_default();
                let tree = if label.is_empty() {
                    if stack.is_empty() && children.len() == 1 && !children[0].is_leaf() {
                        children.into_iter().next().unwrap()
                    } else {
                        return Err(err(l0, c0, "empty label"));
                    }
                } else {
                    if children.is_empty() {
                        return Err(err(l0, c0, &format!("node {:?} has no children", label)));
                    }
                    let n_leaves = children.iter().filter(|c| c.is_leaf()).count();
                    if n_leaves > 0 && children.len() > 1 {
                        return Err(err(l0, c0, &format!("terminal with siblings under {:?}", label)));
                    }
                    Tree::node(label, children)
                };
                match stack.last_mut() {
                    Some(parent) => {
                        if parent.0.is_none() {
                            parent.0 = Some(String::new());
                        }
                        parent.1.push(tree)
                    }
                    None => trees.push(tree),
                }
            }
        }
    }
    if let Some((_, _, l, c)) = stack.last() {
        return Err(err(
            end_line,
            end_col,
            &format!("unexpected end of input; bracket opened at {}:{} is unclosed", l, c),
        ));
    }
    Ok(trees)
}

/// Reads and parses a treebank file.
pub fn read_treebank(path: impl AsRef<Path>) -> Result<Vec<Tree>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    parse_bracketed(&text).map_err(|e| match e {
        Error::Syntax { line, column, message } => Error::Syntax {
            line,
            column,
            message: format!("{}: {}", path.display(), message),
        },
        other => other,
    })
}

/// One tree per line, single spaces.
pub fn print_trees(trees: &[Tree]) -> String {
    let mut out = String::new();
    for t in trees {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizeOptions {
    /// Strip function tags and co-indices (`NP-SBJ-1` becomes `NP`).
    pub strip_function_tags: bool,
    /// Preterminal labels marking empty elements.
    pub empty_labels: Vec<String>,
    /// Words marking empty elements; a trailing `-<digits>` index is ignored.
    pub empty_tokens: Vec<String>,
    pub remove_quotes: bool,
    pub quote_labels: Vec<String>,
    /// Merge `(X (X ...))` chains left behind by empty-element removal.
    pub collapse_identity_unaries: bool,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        let strs = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        NormalizeOptions {
            strip_function_tags: true,
            empty_labels: strs(&["-NONE-"]),
            empty_tokens: strs(&[
                "*", "*T*", "*U*", "*?*", "*EXP*", "*ICH*", "*PPA*", "*RNR*", "*NOT*", "0",
            ]),
            remove_quotes: true,
            quote_labels: strs(&["``", "''", "\""]),
            collapse_identity_unaries: true,
        }
    }
}

/// `NP-SBJ-1` → `NP`, `S=2` → `S`; labels starting with `-` are kept whole.
pub fn strip_label(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    match label.find(['-', '=']) {
        Some(i) => &label[..i],
        None => label,
    }
}

impl NormalizeOptions {
    fn is_empty_token(&self, word: &str) -> bool {
        self.empty_tokens.iter().any(|t| {
            word == t
                || word
                    .strip_prefix(t.as_str())
                    .and_then(|rest| rest.strip_prefix('-'))
                    .is_some_and(|idx| !idx.is_empty() && idx.chars().all(|c| c.is_ascii_digit()))
        })
    }

    fn is_removed_preterminal(&self, t: &Tree) -> bool {
        let label = strip_label(&t.label);
        if self.empty_labels.iter().any(|l| l == &t.label || l == label) {
            return true;
        }
        if self.is_empty_token(&t.children[0].label) {
            return true;
        }
        self.remove_quotes && self.quote_labels.iter().any(|q| q == label)
    }
}

/// Removes empty elements (and optionally quotation marks), prunes nodes left
/// without children and strips function tags. Returns `None` if nothing is
/// left of the tree.
pub fn normalize(tree: &Tree, options: &NormalizeOptions) -> Option<Tree> {
    if tree.is_leaf() {
        return Some(tree.clone());
    }
    if tree.is_preterminal() && options.is_removed_preterminal(tree) {
        return None;
    }
    let children: Vec<Tree> = tree.children.iter().filter_map(|c| normalize(c, options)).collect();
    if children.is_empty() {
        return None;
    }
    let label = if options.strip_function_tags {
        strip_label(&tree.label).to_string()
    } else {
        tree.label.clone()
    };
    let mut children = children;
    if options.collapse_identity_unaries {
        while children.len() == 1 && !children[0].is_leaf() && children[0].label == label {
            children = children.pop().unwrap().children;
        }
    }
    Some(Tree { label, children })
}

/// Trees plus their word counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub trees: Vec<Tree>,
    pub vocabulary: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn new(trees: Vec<Tree>) -> Self {
        let mut vocabulary = BTreeMap::new();
        for t in &trees {
            for w in t.words() {
                *vocabulary.entry(w.to_string()).or_insert(0) += 1;
            }
        }
        Corpus { trees, vocabulary }
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// Normalizes every tree, dropping those that become empty.
    pub fn normalized(trees: &[Tree], options: &NormalizeOptions) -> Self {
        Corpus::new(trees.iter().filter_map(|t| normalize(t, options)).collect())
    }

    pub fn root_labels(&self) -> BTreeSet<String> {
        self.trees.iter().map(|t| t.label.clone()).collect()
    }
}

pub const MAX_SPLIT_ATTEMPTS: usize = 1_000;

/// Draws a random split whose test words all occur in the training part.
///
/// Only trees whose every word also occurs in some other tree are eligible
/// for the test side; among those, shuffles are drawn until one satisfies the
/// constraint or [`MAX_SPLIT_ATTEMPTS`] is reached. Both halves keep the
/// original corpus order.
pub fn split_corpus(corpus: &Corpus, seed: u64, test_size: usize) -> Result<(Corpus, Corpus)> {
    if test_size == 0 {
        return Ok((corpus.clone(), Corpus::default()));
    }
    if test_size >= corpus.len() {
        return Err(Error::Config(format!(
            "test size {} must be smaller than the corpus ({} trees)",
            test_size,
            corpus.len()
        )));
    }

    // number of trees each word occurs in
    let mut doc_freq: BTreeMap<&str, usize> = BTreeMap::new();
    let word_sets: Vec<BTreeSet<&str>> = corpus.trees.iter().map(|t| t.words().into_iter().collect()).collect();
    for ws in &word_sets {
        for w in ws {
            *doc_freq.entry(w).or_insert(0) += 1;
        }
    }
    let eligible: Vec<usize> = (0..corpus.len())
        .filter(|&i| word_sets[i].iter().all(|w| doc_freq[w] > 1))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocking = BTreeSet::new();
    if eligible.len() >= test_size {
        let mut pool = eligible.clone();
        for _ in 0..MAX_SPLIT_ATTEMPTS {
            pool.shuffle(&mut rng);
            let mut in_test = vec![false; corpus.len()];
            for &i in &pool[..test_size] {
                in_test[i] = true;
            }
            let mut train_vocab: BTreeSet<&str> = BTreeSet::new();
            for (i, ws) in word_sets.iter().enumerate() {
                if !in_test[i] {
                    train_vocab.extend(ws.iter().copied());
                }
            }
            let missing: Vec<&str> = pool[..test_size]
                .iter()
                .flat_map(|&i| word_sets[i].iter().copied())
                .filter(|w| !train_vocab.contains(w))
                .collect();
            if missing.is_empty() {
                let pick = |want: bool| {
                    Corpus::new(
                        corpus
                            .trees
                            .iter()
                            .zip(&in_test)
                            .filter(|(_, &t)| t == want)
                            .map(|(t, _)| t.clone())
                            .collect(),
                    )
                };
                return Ok((pick(false), pick(true)));
            }
            blocking.extend(missing.into_iter().map(str::to_string));
        }
    } else {
        // words confined to a single tree keep that tree out of the test set
        blocking.extend(doc_freq.iter().filter(|(_, &n)| n == 1).map(|(w, _)| w.to_string()));
    }
    Err(Error::Split {
        attempts: MAX_SPLIT_ATTEMPTS,
        blocking: blocking.into_iter().collect(),
    })
}
