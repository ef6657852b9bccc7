//! Tree fragments: the elementary units of a data-oriented grammar.
//!
//! A fragment is a connected piece of a corpus tree in which every node
//! either keeps all of its children or none of them. Nonterminals whose
//! children were dropped become open substitution sites. Fragments are
//! identified by a canonical bracketed key in which sites carry a trailing
//! `@` (literal `@` and `\` inside symbols are backslash-escaped).

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::io::{BufRead, Write};
use std::rc::Rc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::treebank::{tokenize, Corpus, Token, Tree};

pub const SITE_MARK: char = '@';

/// A leaf of a fragment.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Frontier {
    Word(String),
    Site(String),
}

impl Frontier {
    pub fn symbol(&self) -> &str {
        match self {
            Frontier::Word(s) | Frontier::Site(s) => s,
        }
    }

    pub fn is_site(&self) -> bool {
        matches!(self, Frontier::Site(_))
    }
}

impl fmt::Display for Frontier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frontier::Word(w) => write_escaped(f, w),
            Frontier::Site(s) => {
                write_escaped(f, s)?;
                f.write_char(SITE_MARK)
            }
        }
    }
}

fn write_escaped(f: &mut impl fmt::Write, s: &str) -> fmt::Result {
    for ch in s.chars() {
        if ch == '\\' || ch == SITE_MARK {
            f.write_char('\\')?;
        }
        f.write_char(ch)?;
    }
    Ok(())
}

/// Parses one escaped atom. Returns the symbol and whether it is a site.
fn unescape_atom(atom: &str) -> Option<(String, bool)> {
    let mut out = String::with_capacity(atom.len());
    let mut chars = atom.chars().peekable();
    let mut site = false;
    while let Some(ch) = chars.next() {
        match ch {
            '\\' => out.push(chars.next()?),
            SITE_MARK if chars.peek().is_none() => site = true,
            SITE_MARK => return None,
            c => out.push(c),
        }
    }
    if out.is_empty() {
        return None;
    }
    Some((out, site))
}

impl Frontier {
    /// Parses a single escaped frontier symbol as written in keys and rule files.
    pub fn parse(atom: &str) -> Option<Frontier> {
        let (sym, site) = unescape_atom(atom)?;
        Some(if site { Frontier::Site(sym) } else { Frontier::Word(sym) })
    }
}

/// The tree shape of a fragment.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Node { label: String, children: Vec<Shape> },
    Word(String),
    Site(String),
}

impl Shape {
    pub fn label(&self) -> &str {
        match self {
            Shape::Node { label, .. } | Shape::Word(label) | Shape::Site(label) => label,
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            Shape::Node { children, .. } => 1 + children.iter().map(Shape::depth).max().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn frontier(&self) -> Vec<Frontier> {
        let mut out = Vec::new();
        self.collect_frontier(&mut out);
        out
    }

    fn collect_frontier(&self, out: &mut Vec<Frontier>) {
        match self {
            Shape::Node { children, .. } => children.iter().for_each(|c| c.collect_frontier(out)),
            Shape::Word(w) => out.push(Frontier::Word(w.clone())),
            Shape::Site(s) => out.push(Frontier::Site(s.clone())),
        }
    }

    pub fn word_count(&self) -> usize {
        match self {
            Shape::Node { children, .. } => children.iter().map(Shape::word_count).sum(),
            Shape::Word(_) => 1,
            Shape::Site(_) => 0,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Shape::Node { children, .. } => 1 + children.iter().map(Shape::node_count).sum::<usize>(),
            _ => 1,
        }
    }

    /// The whole tree as a fragment with no open sites.
    pub fn from_tree(tree: &Tree) -> Shape {
        if tree.is_leaf() {
            Shape::Word(tree.label.clone())
        } else {
            Shape::Node {
                label: tree.label.clone(),
                children: tree.children.iter().map(Shape::from_tree).collect(),
            }
        }
    }

    /// Converts back to a tree; fails if any site is still open.
    pub fn to_tree(&self) -> Option<Tree> {
        match self {
            Shape::Node { label, children } => Some(Tree::node(
                label.clone(),
                children.iter().map(Shape::to_tree).collect::<Option<Vec<_>>>()?,
            )),
            Shape::Word(w) => Some(Tree::leaf(w.clone())),
            Shape::Site(_) => None,
        }
    }

    /// Parses a canonical key.
    pub fn parse_key(key: &str) -> Result<Shape> {
        let tokens = tokenize(key);
        let bad = |msg: &str| Error::Syntax {
            line: 1,
            column: 1,
            message: format!("{} in fragment key {:?}", msg, key),
        };
        let mut pos = 0;
        let shape = parse_shape(&tokens, &mut pos).ok_or_else(|| bad("malformed shape"))?;
        if pos != tokens.len() {
            return Err(bad("trailing input"));
        }
        match shape {
            Shape::Node { .. } => Ok(shape),
            _ => Err(bad("a fragment needs at least one rewrite")),
        }
    }

    /// Checks that this fragment matches `tree` at its root: same labels,
    /// same child sequences at expanded nodes, sites over nonterminals.
    pub fn matches(&self, tree: &Tree) -> bool {
        match self {
            Shape::Node { label, children } => {
                !tree.is_leaf()
                    && *label == tree.label
                    && children.len() == tree.children.len()
                    && children.iter().zip(&tree.children).all(|(s, t)| s.matches(t))
            }
            Shape::Word(w) => tree.is_leaf() && *w == tree.label,
            Shape::Site(s) => !tree.is_leaf() && *s == tree.label,
        }
    }
}

fn parse_shape(tokens: &[(Token, usize, usize)], pos: &mut usize) -> Option<Shape> {
    match &tokens.get(*pos)?.0 {
        Token::Atom(a) => {
            *pos += 1;
            let (sym, site) = unescape_atom(a)?;
            Some(if site { Shape::Site(sym) } else { Shape::Word(sym) })
        }
        Token::Open => {
            *pos += 1;
            let label = match &tokens.get(*pos)?.0 {
                Token::Atom(a) => {
                    let (sym, site) = unescape_atom(a)?;
                    if site {
                        return None;
                    }
                    sym
                }
                _ => return None,
            };
            *pos += 1;
            let mut children = Vec::new();
            loop {
                match tokens.get(*pos)?.0 {
                    Token::Close => {
                        *pos += 1;
                        break;
                    }
                    _ => children.push(parse_shape(tokens, pos)?),
                }
            }
            if children.is_empty() {
                return None;
            }
            Some(Shape::Node { label, children })
        }
        Token::Close => None,
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Node { label, children } => {
                f.write_char('(')?;
                write_escaped(f, label)?;
                for c in children {
                    write!(f, " {}", c)?;
                }
                f.write_char(')')
            }
            Shape::Word(w) => write_escaped(f, w),
            Shape::Site(s) => {
                write_escaped(f, s)?;
                f.write_char(SITE_MARK)
            }
        }
    }
}

/// A fragment of a corpus tree.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Fragment {
    pub shape: Shape,
}

impl Fragment {
    pub fn root_label(&self) -> &str {
        self.shape.label()
    }

    pub fn depth(&self) -> usize {
        self.shape.depth()
    }

    pub fn frontier(&self) -> Vec<Frontier> {
        self.shape.frontier()
    }

    pub fn key(&self) -> String {
        self.shape.to_string()
    }
}

type Expansions = Rc<Vec<(Shape, usize)>>;

/// All fragments rooted at `node` (which must be internal) with depth at
/// most `budget`, paired with their depth.
fn expansions(node: &Tree, budget: usize, memo: &mut HashMap<(*const Tree, usize), Expansions>) -> Expansions {
    let memo_key = (node as *const Tree, budget);
    if let Some(found) = memo.get(&memo_key) {
        return Rc::clone(found);
    }
    let mut partial: Vec<(Vec<Shape>, usize)> = vec![(Vec::with_capacity(node.children.len()), 0)];
    for child in &node.children {
        let options: Vec<(Shape, usize)> = if child.is_leaf() {
            vec![(Shape::Word(child.label.clone()), 0)]
        } else {
            let mut opts = vec![(Shape::Site(child.label.clone()), 0)];
            if budget >= 2 {
                opts.extend(expansions(child, budget - 1, memo).iter().cloned());
            }
            opts
        };
        let mut next = Vec::with_capacity(partial.len() * options.len());
        for (prefix, d) in &partial {
            for (opt, od) in &options {
                let mut p = prefix.clone();
                p.push(opt.clone());
                next.push((p, (*d).max(*od)));
            }
        }
        partial = next;
    }
    let out: Vec<(Shape, usize)> = partial
        .into_iter()
        .map(|(children, d)| {
            (
                Shape::Node {
                    label: node.label.clone(),
                    children,
                },
                d + 1,
            )
        })
        .collect();
    let out = Rc::new(out);
    memo.insert(memo_key, Rc::clone(&out));
    out
}

fn internal_nodes<'a>(tree: &'a Tree, out: &mut Vec<&'a Tree>) {
    if !tree.is_leaf() {
        out.push(tree);
        for c in &tree.children {
            internal_nodes(c, out);
        }
    }
}

/// Every fragment of `tree` rooted at any nonterminal node, in preorder of
/// roots. `max_depth` of `None` means unbounded.
pub fn enumerate_fragments(tree: &Tree, max_depth: Option<usize>) -> Vec<Fragment> {
    let budget = max_depth.unwrap_or(usize::MAX);
    if budget == 0 {
        return Vec::new();
    }
    let mut nodes = Vec::new();
    internal_nodes(tree, &mut nodes);
    let mut memo = HashMap::new();
    let mut out = Vec::new();
    for node in nodes {
        for (shape, _) in expansions(node, budget, &mut memo).iter() {
            out.push(Fragment { shape: shape.clone() });
        }
    }
    out
}

fn enumerate_keyed(tree: &Tree, max_depth: Option<usize>, sink: &mut HashMap<String, FragmentEntry>) {
    let budget = max_depth.unwrap_or(usize::MAX);
    if budget == 0 {
        return;
    }
    let mut nodes = Vec::new();
    internal_nodes(tree, &mut nodes);
    let mut memo = HashMap::new();
    for node in nodes {
        for (shape, depth) in expansions(node, budget, &mut memo).iter() {
            sink.entry(shape.to_string())
                .or_insert_with(|| FragmentEntry {
                    root: node.label.clone(),
                    depth: *depth,
                    frontier_words: shape.word_count(),
                    count: 0,
                })
                .count += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FragmentEntry {
    pub root: String,
    pub depth: usize,
    pub frontier_words: usize,
    pub count: u64,
}

/// Fragment types with their corpus counts, keyed canonically.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FragmentTable {
    pub entries: BTreeMap<String, FragmentEntry>,
    pub root_totals: BTreeMap<String, u64>,
}

impl FragmentTable {
    pub fn from_entries(entries: BTreeMap<String, FragmentEntry>) -> Self {
        let mut table = FragmentTable {
            entries,
            root_totals: BTreeMap::new(),
        };
        table.recompute_totals();
        table
    }

    fn recompute_totals(&mut self) {
        self.root_totals.clear();
        for e in self.entries.values() {
            *self.root_totals.entry(e.root.clone()).or_insert(0) += e.count;
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, key: &str) -> Option<u64> {
        self.entries.get(key).map(|e| e.count)
    }

    pub fn fragment(&self, key: &str) -> Result<Fragment> {
        if !self.entries.contains_key(key) {
            return Err(Error::MissingKey(key.to_string()));
        }
        Ok(Fragment {
            shape: Shape::parse_key(key)?,
        })
    }

    /// Number of fragment types per depth.
    pub fn depth_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for e in self.entries.values() {
            *h.entry(e.depth).or_insert(0) += 1;
        }
        h
    }

    /// Multiplies every count by `factor`.
    pub fn scaled(&self, factor: u64) -> FragmentTable {
        let mut t = self.clone();
        for e in t.entries.values_mut() {
            e.count *= factor;
        }
        t.recompute_totals();
        t
    }

    /// Writes `key TAB root TAB depth TAB count` lines in key order.
    pub fn write_tsv(&self, mut out: impl Write) -> Result<()> {
        for (key, e) in &self.entries {
            writeln!(out, "{}\t{}\t{}\t{}", key, e.root, e.depth, e.count)?;
        }
        Ok(())
    }

    pub fn read_tsv(input: impl BufRead) -> Result<FragmentTable> {
        let mut entries = BTreeMap::new();
        for (i, line) in input.lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [key, root, depth, count] = fields[..] else {
                return Err(Error::format(lineno, "expected 4 tab-separated fields"));
            };
            let shape = Shape::parse_key(key).map_err(|e| Error::format(lineno, e.to_string()))?;
            let depth: usize = depth
                .parse()
                .map_err(|_| Error::format(lineno, "depth is not an integer"))?;
            let count: u64 = count
                .parse()
                .map_err(|_| Error::format(lineno, "count is not an integer"))?;
            if shape.label() != root || shape.depth() != depth {
                return Err(Error::format(lineno, "root or depth disagrees with key"));
            }
            let entry = FragmentEntry {
                root: root.to_string(),
                depth,
                frontier_words: shape.word_count(),
                count,
            };
            if entries.insert(key.to_string(), entry).is_some() {
                return Err(Error::format(lineno, format!("duplicate key {}", key)));
            }
        }
        Ok(FragmentTable::from_entries(entries))
    }
}

/// Counts fragment occurrences over a corpus, in parallel over trees.
pub fn count_fragments(corpus: &Corpus, max_depth: Option<usize>) -> FragmentTable {
    let merged = corpus
        .trees
        .par_iter()
        .fold(HashMap::new, |mut acc, tree| {
            enumerate_keyed(tree, max_depth, &mut acc);
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            let (mut big, small) = if a.len() >= b.len() {
                (std::mem::take(&mut a), b)
            } else {
                (b, a)
            };
            for (k, e) in small {
                match big.get_mut(&k) {
                    Some(existing) => existing.count += e.count,
                    None => {
                        big.insert(k, e);
                    }
                }
            }
            big
        });
    FragmentTable::from_entries(merged.into_iter().collect())
}

/// Keeps a uniform random sample of `cap` fragment types at each capped
/// depth. Depth 1 can not be capped.
pub fn sample_fragments(table: &FragmentTable, caps: &BTreeMap<usize, usize>, seed: u64) -> Result<FragmentTable> {
    if caps.contains_key(&1) {
        return Err(Error::Config(
            "depth-1 fragments are always kept; remove the depth-1 cap".into(),
        ));
    }
    if let Some((d, _)) = caps.iter().find(|(_, &c)| c == 0) {
        return Err(Error::Config(format!("sample cap for depth {} must be positive", d)));
    }
    let mut by_depth: BTreeMap<usize, Vec<&String>> = BTreeMap::new();
    for (k, e) in &table.entries {
        by_depth.entry(e.depth).or_default().push(k);
    }
    let mut kept = BTreeMap::new();
    for (depth, keys) in by_depth {
        let chosen: Vec<&String> = match caps.get(&depth) {
            Some(&cap) if cap < keys.len() => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(depth as u64);
                let mut idx = index::sample(&mut rng, keys.len(), cap).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| keys[i]).collect()
            }
            _ => keys,
        };
        for k in chosen {
            kept.insert(k.clone(), table.entries[k].clone());
        }
    }
    Ok(FragmentTable::from_entries(kept))
}

/// Drops fragments with too many frontier words, and word-free fragments
/// deeper than `max_unlexicalized_depth`.
pub fn filter_fragments(
    table: &FragmentTable,
    max_frontier_words: Option<usize>,
    max_unlexicalized_depth: Option<usize>,
) -> FragmentTable {
    let entries = table
        .entries
        .iter()
        .filter(|(_, e)| {
            max_frontier_words.is_none_or(|m| e.frontier_words <= m)
                && (e.frontier_words > 0 || max_unlexicalized_depth.is_none_or(|m| e.depth <= m))
        })
        .map(|(k, e)| (k.clone(), e.clone()))
        .collect();
    FragmentTable::from_entries(entries)
}

/// Dense frequency ranks computed separately for each root label.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankTable {
    ranks: HashMap<String, u32>,
    /// Distinct counts per root, descending.
    levels: HashMap<String, Vec<u64>>,
}

impl RankTable {
    pub fn rank(&self, key: &str) -> Option<u32> {
        self.ranks.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Rank a fragment of the given root would receive with frequency
    /// `freq`; used for fragments created at parse time.
    pub fn rank_for_frequency(&self, root: &str, freq: f64) -> u32 {
        let above = self
            .levels
            .get(root)
            .map_or(0, |ls| ls.iter().take_while(|&&c| c as f64 > freq).count());
        above as u32 + 1
    }
}

pub fn rank_fragments(table: &FragmentTable) -> RankTable {
    let mut levels: HashMap<String, Vec<u64>> = HashMap::new();
    for e in table.entries.values() {
        levels.entry(e.root.clone()).or_default().push(e.count);
    }
    for ls in levels.values_mut() {
        ls.sort_unstable_by(|a, b| b.cmp(a));
        ls.dedup();
    }
    let ranks = table
        .entries
        .iter()
        .map(|(k, e)| {
            let ls = &levels[&e.root];
            let pos = ls.iter().position(|&c| c == e.count).unwrap();
            (k.clone(), pos as u32 + 1)
        })
        .collect();
    RankTable { ranks, levels }
}
