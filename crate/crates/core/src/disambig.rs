//! Choosing a parse from a forest.
//!
//! Four strategies are provided: the single most probable derivation
//! (Viterbi), the most probable parse estimated from the n best derivations,
//! the most probable parse estimated by sampling derivations, and the
//! shortest derivation with frequency-rank back-off.
//!
//! Derivations are totally ordered by fixed-point score (higher first) and
//! then by the lexicographic order of their fragment key sequences, so every
//! strategy is deterministic.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fragments::{RankTable, Shape};
use crate::grammar::{Grammar, RuleId};
use crate::parser::{unpack, Forest, ItemId};
use crate::treebank::Tree;

/// Upper bound on the number of shortest derivations unpacked per sentence.
pub const SHORTEST_CAP: u128 = 10_000;

/// A sequence of fragments in leftmost-substitution order.
#[derive(Clone, Debug, PartialEq)]
pub struct Derivation {
    pub rules: Vec<RuleId>,
    pub log_prob: f64,
    pub rank_sum: Option<u64>,
    score: i64,
}

impl Derivation {
    pub fn from_rules(rules: Vec<RuleId>, forest: &Forest, grammar: &Grammar) -> Derivation {
        let log_prob = rules.iter().map(|&r| forest.rule(grammar, r).log_score).sum();
        let score = rules.iter().map(|&r| forest.fixed_score(grammar, r)).sum();
        Derivation {
            rules,
            log_prob,
            rank_sum: None,
            score,
        }
    }

    /// Number of fragments.
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Score in the fixed-point units used for ordering.
    pub fn fixed_score(&self) -> i64 {
        self.score
    }

    pub fn keys<'a>(&self, forest: &'a Forest, grammar: &'a Grammar) -> Vec<&'a str> {
        self.rules
            .iter()
            .map(|&r| forest.rule(grammar, r).key.as_str())
            .collect()
    }

    pub fn tree(&self, forest: &Forest, grammar: &Grammar) -> Result<Tree> {
        derivation_to_tree(self.rules.iter().map(|&r| &forest.rule(grammar, r).shape))
    }
}

/// The deterministic derivation order: higher score first, then the
/// lexicographically smaller sequence of fragment keys.
pub fn compare_derivations(a: &Derivation, b: &Derivation, forest: &Forest) -> Ordering {
    b.score
        .cmp(&a.score)
        .then_with(|| compare_sequences(&a.rules, &b.rules, forest))
}

fn compare_sequences(a: &[RuleId], b: &[RuleId], forest: &Forest) -> Ordering {
    a.iter()
        .map(|&r| forest.ordinal(r))
        .cmp(b.iter().map(|&r| forest.ordinal(r)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseResult {
    pub tree: Tree,
    /// Summed probability, sample frequency, or negated rank sum, depending
    /// on the strategy.
    pub criterion_value: f64,
    pub supporting_derivations: usize,
}

/// Combines fragments by repeatedly filling the leftmost open site.
pub fn derivation_to_tree<'a>(fragments: impl IntoIterator<Item = &'a Shape>) -> Result<Tree> {
    let mut it = fragments.into_iter();
    let first = it.next().ok_or_else(|| Error::Derivation("empty derivation".into()))?;
    let tree = substitute(first, &mut it)?;
    if it.next().is_some() {
        return Err(Error::Derivation(
            "fragments left over after all sites were filled".into(),
        ));
    }
    Ok(tree)
}

fn substitute<'a>(shape: &Shape, rest: &mut impl Iterator<Item = &'a Shape>) -> Result<Tree> {
    match shape {
        Shape::Node { label, children } => Ok(Tree::node(
            label.clone(),
            children
                .iter()
                .map(|c| substitute(c, rest))
                .collect::<Result<Vec<_>>>()?,
        )),
        Shape::Word(w) => Ok(Tree::leaf(w.clone())),
        Shape::Site(label) => {
            let next = rest
                .next()
                .ok_or_else(|| Error::Derivation(format!("open site {} left unfilled", label)))?;
            if !matches!(next, Shape::Node { .. }) || next.label() != label {
                return Err(Error::Derivation(format!(
                    "fragment rooted in {} can not fill the leftmost open site {}",
                    next.label(),
                    label
                )));
            }
            substitute(next, rest)
        }
    }
}

/// The most probable derivation.
pub fn viterbi_best(forest: &Forest, grammar: &Grammar) -> Result<Derivation> {
    if !forest.has_parse() {
        return Err(Error::NoParse);
    }
    let mut best: Vec<Option<(i64, Rc<Vec<RuleId>>)>> = vec![None; forest.items().len()];
    for &id in forest.topological_order() {
        let mut winner: Option<(i64, Rc<Vec<RuleId>>)> = None;
        for e in forest.edges(id) {
            let mut score = forest.fixed_score(grammar, e.rule);
            let mut seq = vec![e.rule];
            for c in &e.children {
                let (s, sub) = best[c.index()].as_ref().expect("child before parent");
                score += s;
                seq.extend_from_slice(sub);
            }
            let better = match &winner {
                None => true,
                Some((ws, wseq)) => {
                    score > *ws || (score == *ws && compare_sequences(&seq, wseq, forest) == Ordering::Less)
                }
            };
            if better {
                winner = Some((score, Rc::new(seq)));
            }
        }
        best[id.index()] = winner;
    }
    let top = forest
        .goals()
        .iter()
        .map(|g| Derivation::from_rules(best[g.index()].as_ref().unwrap().1.to_vec(), forest, grammar))
        .min_by(|a, b| compare_derivations(a, b, forest))
        .unwrap();
    Ok(top)
}

struct Entry {
    edge: usize,
    ranks: Vec<usize>,
    score: i64,
    seq: Rc<Vec<RuleId>>,
    ords: Vec<u64>,
}

struct Candidate(Rc<Entry>);

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // greater = better
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .score
            .cmp(&other.0.score)
            .then_with(|| other.0.ords.cmp(&self.0.ords))
    }
}

/// Lazy k-best extraction over the packed forest.
struct KBest<'a> {
    forest: &'a Forest,
    grammar: &'a Grammar,
    lists: Vec<Vec<Rc<Entry>>>,
    heaps: Vec<Option<BinaryHeap<Candidate>>>,
    expanded: Vec<usize>,
    seen: Vec<HashSet<(usize, Vec<usize>)>>,
}

impl<'a> KBest<'a> {
    fn new(forest: &'a Forest, grammar: &'a Grammar) -> Self {
        let n = forest.items().len();
        KBest {
            forest,
            grammar,
            lists: vec![Vec::new(); n],
            heaps: (0..n).map(|_| None).collect(),
            expanded: vec![0; n],
            seen: vec![HashSet::new(); n],
        }
    }

    fn make(&mut self, v: ItemId, edge: usize, ranks: Vec<usize>) -> Option<Rc<Entry>> {
        let forest = self.forest;
        let e = &forest.edges(v)[edge];
        let mut score = forest.fixed_score(self.grammar, e.rule);
        let mut seq = vec![e.rule];
        for (&c, &r) in e.children.iter().zip(&ranks) {
            let sub = self.kth(c, r)?;
            score += sub.score;
            seq.extend_from_slice(&sub.seq);
        }
        let ords = seq.iter().map(|&r| forest.ordinal(r)).collect();
        Some(Rc::new(Entry {
            edge,
            ranks,
            score,
            seq: Rc::new(seq),
            ords,
        }))
    }

    fn kth(&mut self, v: ItemId, k: usize) -> Option<Rc<Entry>> {
        let vi = v.index();
        if self.heaps[vi].is_none() {
            let mut heap = BinaryHeap::new();
            for (ei, e) in self.forest.edges(v).iter().enumerate() {
                let ranks = vec![0; e.children.len()];
                self.seen[vi].insert((ei, ranks.clone()));
                if let Some(entry) = self.make(v, ei, ranks) {
                    heap.push(Candidate(entry));
                }
            }
            self.heaps[vi] = Some(heap);
        }
        while self.lists[vi].len() <= k {
            let m = self.lists[vi].len();
            if m > 0 && self.expanded[vi] < m {
                let last = Rc::clone(&self.lists[vi][m - 1]);
                self.expanded[vi] = m;
                for i in 0..last.ranks.len() {
                    let mut ranks = last.ranks.clone();
                    ranks[i] += 1;
                    if !self.seen[vi].insert((last.edge, ranks.clone())) {
                        continue;
                    }
                    if let Some(entry) = self.make(v, last.edge, ranks) {
                        self.heaps[vi].as_mut().unwrap().push(Candidate(entry));
                    }
                }
            }
            let next = self.heaps[vi].as_mut().unwrap().pop()?;
            self.lists[vi].push(next.0);
        }
        Some(Rc::clone(&self.lists[vi][k]))
    }
}

/// The `n` best derivations in the deterministic order.
pub fn nbest_derivations(forest: &Forest, grammar: &Grammar, n: usize) -> Result<Vec<Derivation>> {
    if !forest.has_parse() {
        return Err(Error::NoParse);
    }
    if n == 0 {
        return Err(Error::Misuse("n-best needs n >= 1".into()));
    }
    let mut kb = KBest::new(forest, grammar);
    // merge the per-goal lists
    let mut heap = BinaryHeap::new();
    for (gi, &g) in forest.goals().iter().enumerate() {
        if let Some(e) = kb.kth(g, 0) {
            heap.push((Candidate(e), std::cmp::Reverse(gi), 0usize));
        }
    }
    let mut out = Vec::with_capacity(n.min(1024));
    while out.len() < n {
        let Some((Candidate(entry), std::cmp::Reverse(gi), k)) = heap.pop() else {
            break;
        };
        out.push(Derivation::from_rules(entry.seq.to_vec(), forest, grammar));
        if let Some(e) = kb.kth(forest.goals()[gi], k + 1) {
            heap.push((Candidate(e), std::cmp::Reverse(gi), k + 1));
        }
    }
    Ok(out)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Picks the tree with the highest summed derivation probability. Equal
/// sums go to the tree that prints first.
pub fn most_probable_parse(derivations: &[Derivation], forest: &Forest, grammar: &Grammar) -> Result<ParseResult> {
    if derivations.is_empty() {
        return Err(Error::Misuse("no derivations to choose from".into()));
    }
    let mut groups: BTreeMap<String, (Tree, f64, usize)> = BTreeMap::new();
    for d in derivations {
        let tree = d.tree(forest, grammar)?;
        let slot = groups
            .entry(tree.to_string())
            .or_insert_with(|| (tree, f64::NEG_INFINITY, 0));
        slot.1 = log_add(slot.1, d.log_prob);
        slot.2 += 1;
    }
    let (_, (tree, logp, support)) = groups
        .into_iter()
        .reduce(|best, cur| if cur.1 .1 > best.1 .1 { cur } else { best })
        .unwrap();
    Ok(ParseResult {
        tree,
        criterion_value: logp.exp(),
        supporting_derivations: support,
    })
}

/// Draws `samples` derivations top-down, each edge chosen in proportion to
/// its share of the item's inside mass, and counts the trees they produce.
/// Trees are returned in print order.
pub fn sample_tree_counts(forest: &Forest, grammar: &Grammar, samples: usize, seed: u64) -> Result<Vec<(Tree, usize)>> {
    if !forest.has_parse() {
        return Err(Error::NoParse);
    }
    let inside = forest
        .inside()
        .ok_or_else(|| Error::Misuse("inside scores have not been computed".into()))?;
    if samples == 0 {
        return Err(Error::Misuse("at least one sample is needed".into()));
    }

    let cumulative = |weights: Vec<f64>| -> Vec<f64> {
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        weights
            .into_iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect()
    };
    let goal_mass = forest.goal_inside().unwrap();
    let goal_cdf = cumulative(
        forest
            .goals()
            .iter()
            .map(|g| (inside[g.index()] - goal_mass).exp())
            .collect(),
    );
    let mut edge_cdf: HashMap<ItemId, Vec<f64>> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |cdf: &[f64], r: f64| cdf.iter().position(|&c| r < c).unwrap_or(cdf.len() - 1);

    let mut by_sequence: HashMap<Vec<RuleId>, usize> = HashMap::new();
    for _ in 0..samples {
        let goal = forest.goals()[pick(&goal_cdf, rng.random::<f64>())];
        let mut seq = Vec::new();
        let mut stack = vec![goal];
        while let Some(v) = stack.pop() {
            let cdf = edge_cdf.entry(v).or_insert_with(|| {
                cumulative(
                    forest
                        .edges(v)
                        .iter()
                        .map(|e| {
                            let s = forest.rule(grammar, e.rule).log_score
                                + e.children.iter().map(|c| inside[c.index()]).sum::<f64>();
                            (s - inside[v.index()]).exp()
                        })
                        .collect(),
                )
            });
            let e = &forest.edges(v)[pick(cdf, rng.random::<f64>())];
            seq.push(e.rule);
            stack.extend(e.children.iter().rev());
        }
        *by_sequence.entry(seq).or_insert(0) += 1;
    }

    let mut by_tree: BTreeMap<String, (Tree, usize)> = BTreeMap::new();
    for (seq, n) in by_sequence {
        let tree = derivation_to_tree(seq.iter().map(|&r| &forest.rule(grammar, r).shape))?;
        by_tree.entry(tree.to_string()).or_insert((tree, 0)).1 += n;
    }
    Ok(by_tree.into_values().collect())
}

/// Most frequently sampled tree; ties go to the tree that prints first.
pub fn monte_carlo_parse(forest: &Forest, grammar: &Grammar, samples: usize, seed: u64) -> Result<ParseResult> {
    let counts = sample_tree_counts(forest, grammar, samples, seed)?;
    let (tree, n) = counts
        .into_iter()
        .reduce(|best, cur| if cur.1 > best.1 { cur } else { best })
        .unwrap();
    Ok(ParseResult {
        tree,
        criterion_value: n as f64 / samples as f64,
        supporting_derivations: n,
    })
}

/// Fewest fragments needed below each item.
fn min_lengths(forest: &Forest) -> Vec<usize> {
    let mut len = vec![usize::MAX; forest.items().len()];
    for &id in forest.topological_order() {
        len[id.index()] = forest
            .edges(id)
            .iter()
            .map(|e| 1 + e.children.iter().map(|c| len[c.index()]).sum::<usize>())
            .min()
            .unwrap_or(usize::MAX);
    }
    len
}

/// Length of the shortest derivation of the sentence.
pub fn shortest_length(forest: &Forest) -> Option<usize> {
    let len = min_lengths(forest);
    forest.goals().iter().map(|g| len[g.index()]).min()
}

/// Every derivation of minimal length, in key-sequence order.
pub fn shortest_derivations(forest: &Forest, grammar: &Grammar, cap: u128) -> Result<Vec<Derivation>> {
    if !forest.has_parse() {
        return Err(Error::NoParse);
    }
    let len = min_lengths(forest);
    let edge_len = |e: &crate::parser::Edge| 1 + e.children.iter().map(|c| len[c.index()]).sum::<usize>();
    let best = forest.goals().iter().map(|g| len[g.index()]).min().unwrap();
    let goals: Vec<ItemId> = forest
        .goals()
        .iter()
        .copied()
        .filter(|g| len[g.index()] == best)
        .collect();

    // count before unpacking
    let mut count = vec![0u128; forest.items().len()];
    for &id in forest.topological_order() {
        count[id.index()] = forest
            .edges(id)
            .iter()
            .filter(|e| edge_len(e) == len[id.index()])
            .fold(0u128, |acc, e| {
                acc.saturating_add(e.children.iter().fold(1u128, |p, c| p.saturating_mul(count[c.index()])))
            });
    }
    let total = goals.iter().fold(0u128, |acc, g| acc.saturating_add(count[g.index()]));
    if total > cap {
        return Err(Error::TooManyDerivations {
            count: total,
            limit: cap,
        });
    }

    let keep = |v: ItemId, e: &crate::parser::Edge| edge_len(e) == len[v.index()];
    let mut memo = HashMap::new();
    let mut out: Vec<Derivation> = goals
        .iter()
        .flat_map(|&g| unpack(forest, g, &mut memo, &keep))
        .map(|seq| Derivation::from_rules(seq, forest, grammar))
        .collect();
    out.sort_by(|a, b| compare_sequences(&a.rules, &b.rules, forest));
    Ok(out)
}

/// Fills in rank sums and returns the tree of the derivation with the
/// smallest one. Equal rank sums fall back to key-sequence order.
pub fn rank_select(
    derivations: &mut [Derivation],
    ranks: &RankTable,
    forest: &Forest,
    grammar: &Grammar,
) -> Result<ParseResult> {
    let Some(first) = derivations.first() else {
        return Err(Error::Misuse("no derivations to choose from".into()));
    };
    let n = first.len();
    if derivations.iter().any(|d| d.len() != n) {
        return Err(Error::Misuse("rank selection needs derivations of equal length".into()));
    }
    for d in derivations.iter_mut() {
        let mut sum = 0u64;
        for &r in &d.rules {
            let rule = forest.rule(grammar, r);
            let rank = match (ranks.rank(&rule.key), rule.guessed_frequency) {
                (Some(rank), _) => rank,
                (None, Some(freq)) => ranks.rank_for_frequency(&rule.lhs, freq),
                (None, None) => return Err(Error::MissingRank(rule.key.clone())),
            };
            sum += rank as u64;
        }
        d.rank_sum = Some(sum);
    }
    let best = derivations
        .iter()
        .min_by(|a, b| {
            a.rank_sum
                .cmp(&b.rank_sum)
                .then_with(|| compare_sequences(&a.rules, &b.rules, forest))
        })
        .unwrap();
    Ok(ParseResult {
        tree: best.tree(forest, grammar)?,
        criterion_value: -(best.rank_sum.unwrap() as f64),
        supporting_derivations: 1,
    })
}

/// Named disambiguation strategies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Viterbi,
    MppNbest,
    MppMonteCarlo,
    Shortest,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Viterbi,
        Strategy::MppNbest,
        Strategy::MppMonteCarlo,
        Strategy::Shortest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Viterbi => "viterbi",
            Strategy::MppNbest => "mpp-nbest",
            Strategy::MppMonteCarlo => "mpp-montecarlo",
            Strategy::Shortest => "shortest",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {:?}", s)))
    }
}
