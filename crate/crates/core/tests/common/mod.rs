//! Test helpers: random toy corpora and a brute-force derivation oracle that
//! shares no code with the chart parser.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use dop::{Corpus, FragmentTable, Tree};
use rand::Rng;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn tree(s: &str) -> Tree {
    s.parse().unwrap()
}

const LEVELS: [&[&str]; 3] = [&["S"], &["X", "Y"], &["P", "Q"]];
const TAGS: [&str; 3] = ["A", "B", "C"];
const WORDS: [&str; 4] = ["a", "b", "c", "d"];

fn preterminal(rng: &mut impl Rng) -> Tree {
    Tree::preterminal(
        TAGS[rng.random_range(0..TAGS.len())],
        WORDS[rng.random_range(0..WORDS.len())],
    )
}

/// Labels strictly descend S > X,Y > P,Q > tags, so there are no unary
/// cycles and depth is at most 4.
fn node(rng: &mut impl Rng, level: usize) -> Tree {
    let labels = LEVELS[level];
    let label = labels[rng.random_range(0..labels.len())];
    let arity = rng.random_range(1..=if level == 2 { 3 } else { 2 });
    let children = (0..arity)
        .map(|_| {
            if level < 2 && rng.random_bool(0.5) {
                node(rng, level + 1)
            } else {
                preterminal(rng)
            }
        })
        .collect();
    Tree::node(label, children)
}

/// A random tree of depth at most 4 with at most `max_words` words.
pub fn random_tree(rng: &mut impl Rng, max_words: usize) -> Tree {
    loop {
        let t = node(rng, 0);
        if t.words().len() <= max_words {
            return t;
        }
    }
}

/// Up to eight random trees.
pub fn random_corpus(rng: &mut impl Rng, max_words: usize) -> Corpus {
    let n = rng.random_range(1..=8);
    Corpus::new((0..n).map(|_| random_tree(rng, max_words)).collect())
}

/// Corpus yields plus random strings over the corpus vocabulary.
pub fn test_strings(rng: &mut impl Rng, corpus: &Corpus, extra: usize) -> Vec<Vec<String>> {
    let mut out: BTreeSet<Vec<String>> = corpus
        .trees
        .iter()
        .map(|t| t.words().into_iter().map(String::from).collect())
        .collect();
    let vocab: Vec<&String> = corpus.vocabulary.keys().collect();
    for _ in 0..extra {
        let len = rng.random_range(1..=4);
        out.insert(
            (0..len)
                .map(|_| vocab[rng.random_range(0..vocab.len())].clone())
                .collect(),
        );
    }
    out.into_iter().collect()
}

#[derive(Clone, Debug)]
enum Node {
    Inner(String, Vec<Node>),
    Word(String),
    Site(String),
}

fn tokens(key: &str) -> Vec<String> {
    key.replace('(', " ( ")
        .replace(')', " ) ")
        .split_whitespace()
        .map(String::from)
        .collect()
}

fn read_node(toks: &[String], i: &mut usize) -> Node {
    if toks[*i] == "(" {
        let label = toks[*i + 1].clone();
        *i += 2;
        let mut children = Vec::new();
        while toks[*i] != ")" {
            children.push(read_node(toks, i));
        }
        *i += 1;
        Node::Inner(label, children)
    } else {
        let atom = toks[*i].clone();
        *i += 1;
        match atom.strip_suffix('@') {
            Some(label) => Node::Site(label.to_string()),
            None => Node::Word(atom),
        }
    }
}

fn frontier(n: &Node, out: &mut Vec<Node>) {
    match n {
        Node::Inner(_, cs) => cs.iter().for_each(|c| frontier(c, out)),
        leaf => out.push(leaf.clone()),
    }
}

struct OracleFragment {
    key: String,
    node: Node,
    frontier: Vec<Node>,
    prob: f64,
}

/// All fragments of a table, grouped by root, with relative frequencies
/// computed here from the raw counts.
pub struct Oracle {
    by_root: HashMap<String, Vec<OracleFragment>>,
    starts: BTreeSet<String>,
}

#[derive(Clone, Debug)]
pub struct OracleDerivation {
    pub keys: Vec<String>,
    pub prob: f64,
    pub tree: String,
}

impl Oracle {
    pub fn new(table: &FragmentTable, starts: &BTreeSet<String>) -> Oracle {
        let mut totals: HashMap<String, u64> = HashMap::new();
        for e in table.entries.values() {
            *totals.entry(e.root.clone()).or_default() += e.count;
        }
        let mut by_root: HashMap<String, Vec<OracleFragment>> = HashMap::new();
        for (key, e) in &table.entries {
            let toks = tokens(key);
            let node = read_node(&toks, &mut 0);
            let mut fr = Vec::new();
            frontier(&node, &mut fr);
            by_root.entry(e.root.clone()).or_default().push(OracleFragment {
                key: key.clone(),
                node,
                frontier: fr,
                prob: e.count as f64 / totals[&e.root] as f64,
            });
        }
        Oracle {
            by_root,
            starts: starts.clone(),
        }
    }

    /// Every derivation of `words` by leftmost substitution, or `None` when
    /// there are more than `limit`.
    pub fn derivations(&self, words: &[String], limit: usize) -> Option<Vec<OracleDerivation>> {
        let mut out = Vec::new();
        let mut chosen: Vec<&OracleFragment> = Vec::new();
        for s in &self.starts {
            let todo = vec![Node::Site(s.clone())];
            if !self.search(words, 0, todo, &mut chosen, &mut out, limit) {
                return None;
            }
        }
        Some(out)
    }

    /// `todo` holds pending frontier items, leftmost last.
    fn search<'a>(
        &'a self,
        words: &[String],
        mut pos: usize,
        mut todo: Vec<Node>,
        chosen: &mut Vec<&'a OracleFragment>,
        out: &mut Vec<OracleDerivation>,
        limit: usize,
    ) -> bool {
        // consume words up to the leftmost site
        let site = loop {
            match todo.pop() {
                None => {
                    if pos == words.len() {
                        out.push(self.finish(chosen));
                        if out.len() > limit {
                            return false;
                        }
                    }
                    return true;
                }
                Some(Node::Word(w)) => {
                    if pos >= words.len() || words[pos] != w {
                        return true;
                    }
                    pos += 1;
                }
                Some(Node::Site(label)) => break label,
                Some(Node::Inner(..)) => unreachable!(),
            }
        };
        if pos + 1 + todo.len() > words.len() || chosen.len() > 4 * words.len() + 8 {
            return true;
        }
        let Some(frags) = self.by_root.get(&site) else {
            return true;
        };
        for f in frags {
            if pos + todo.len() + f.frontier.len() > words.len() {
                continue;
            }
            let mut next = todo.clone();
            next.extend(f.frontier.iter().rev().cloned());
            chosen.push(f);
            let ok = self.search(words, pos, next, chosen, out, limit);
            chosen.pop();
            if !ok {
                return false;
            }
        }
        true
    }

    fn finish(&self, chosen: &[&OracleFragment]) -> OracleDerivation {
        fn fill(n: &Node, rest: &mut std::slice::Iter<&OracleFragment>) -> Node {
            match n {
                Node::Inner(l, cs) => Node::Inner(l.clone(), cs.iter().map(|c| fill(c, rest)).collect()),
                Node::Site(_) => {
                    let f = rest.next().expect("derivation too short");
                    fill(&f.node, rest)
                }
                w => w.clone(),
            }
        }
        fn print(n: &Node) -> String {
            match n {
                Node::Inner(l, cs) => {
                    let parts: Vec<String> = cs.iter().map(print).collect();
                    format!("({} {})", l, parts.join(" "))
                }
                Node::Word(w) => w.clone(),
                Node::Site(l) => format!("{}@", l),
            }
        }
        let mut rest = chosen[1..].iter();
        let t = fill(&chosen[0].node, &mut rest);
        assert!(rest.next().is_none());
        OracleDerivation {
            keys: chosen.iter().map(|f| f.key.clone()).collect(),
            prob: chosen.iter().map(|f| f.prob).product(),
            tree: print(&t),
        }
    }
}

/// Summed derivation probability per printed tree.
pub fn tree_probabilities(ds: &[OracleDerivation]) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for d in ds {
        *m.entry(d.tree.clone()).or_insert(0.0) += d.prob;
    }
    m
}

/// Number of fragments rooted at each node, by `f(v) = prod (1 + f(c))`
/// over children, with words contributing nothing.
pub fn fragment_count_recurrence(t: &Tree) -> u64 {
    fn rooted(t: &Tree) -> u64 {
        t.children
            .iter()
            .map(|c| if c.is_leaf() { 1 } else { 1 + rooted(c) })
            .product()
    }
    fn all(t: &Tree) -> u64 {
        if t.is_leaf() {
            0
        } else {
            rooted(t) + t.children.iter().map(all).sum::<u64>()
        }
    }
    all(t)
}
