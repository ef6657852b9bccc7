//! Packed derivation forests over (span, label) items.
//!
//! Rule right-hand sides of any length are matched through a prefix trie of
//! dotted partial items, so rules are never binarized in the grammar itself;
//! each completed rule becomes one edge whose children are the items filling
//! the rule's substitution sites, left to right.

use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::disambig::Derivation;
use crate::error::{Error, Result};
use crate::fragments::Frontier;
use crate::grammar::{quantize_log, Grammar, NtId, RhsTrie, Rule, RuleId, ScoreMode, Sym};

/// A nonempty sequence of words.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sentence {
    words: Vec<String>,
}

impl Sentence {
    pub fn new(words: Vec<String>) -> Result<Sentence> {
        if words.is_empty() {
            return Err(Error::Misuse("empty sentence".into()));
        }
        Ok(Sentence { words })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl std::str::FromStr for Sentence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Sentence> {
        Sentence::new(s.split_whitespace().map(String::from).collect())
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.words.join(" "))
    }
}

/// A labeled half-open span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Item {
    pub start: usize,
    pub end: usize,
    pub label: NtId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemId(pub u32);

impl ItemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One way of building an item: a rule and the items filling its sites.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub rule: RuleId,
    pub children: Vec<ItemId>,
}

#[derive(Clone, Debug)]
pub struct Forest {
    sentence: Sentence,
    items: Vec<Item>,
    edges: Vec<Vec<Edge>>,
    goals: Vec<ItemId>,
    /// Every item after all of its children.
    topo: Vec<ItemId>,
    base_rules: usize,
    extra_rules: Vec<Rule>,
    extra_fixed: Vec<i64>,
    extra_ordinals: Vec<u64>,
    mode: ScoreMode,
    inside: Option<Vec<f64>>,
    rejected_cyclic: usize,
}

const ORDINAL_SHIFT: u32 = 24;

impl Forest {
    pub fn sentence(&self) -> &Sentence {
        &self.sentence
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, id: ItemId) -> Item {
        self.items[id.index()]
    }

    pub fn edges(&self, id: ItemId) -> &[Edge] {
        &self.edges[id.index()]
    }

    pub fn goals(&self) -> &[ItemId] {
        &self.goals
    }

    pub fn has_parse(&self) -> bool {
        !self.goals.is_empty()
    }

    pub fn topological_order(&self) -> &[ItemId] {
        &self.topo
    }

    pub fn find(&self, start: usize, end: usize, label: NtId) -> Option<ItemId> {
        self.items
            .iter()
            .position(|it| it.start == start && it.end == end && it.label == label)
            .map(|i| ItemId(i as u32))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Unary edges dropped because they would close a cycle.
    pub fn rejected_cyclic_edges(&self) -> usize {
        self.rejected_cyclic
    }

    /// Mode of the grammar the sentence-specific rules were scored for.
    pub fn mode(&self) -> ScoreMode {
        self.mode
    }

    /// Rules added for this sentence only (unknown words).
    pub fn extra_rules(&self) -> &[Rule] {
        &self.extra_rules
    }

    pub fn rule<'a>(&'a self, grammar: &'a Grammar, id: RuleId) -> &'a Rule {
        match id.index().checked_sub(self.base_rules) {
            Some(i) => &self.extra_rules[i],
            None => grammar.rule(id),
        }
    }

    pub(crate) fn fixed_score(&self, grammar: &Grammar, id: RuleId) -> i64 {
        match id.index().checked_sub(self.base_rules) {
            Some(i) => self.extra_fixed[i],
            None => grammar.fixed_scores[id.index()],
        }
    }

    /// Position of a rule in key order, comparable across grammar and
    /// sentence-specific rules.
    pub(crate) fn ordinal(&self, id: RuleId) -> u64 {
        match id.index().checked_sub(self.base_rules) {
            Some(i) => self.extra_ordinals[i],
            None => (2 * id.0 as u64 + 1) << ORDINAL_SHIFT,
        }
    }

    pub fn inside(&self) -> Option<&[f64]> {
        self.inside.as_deref()
    }

    /// Log of the total score mass of all derivations of the sentence.
    pub fn goal_inside(&self) -> Option<f64> {
        let inside = self.inside.as_ref()?;
        Some(log_sum(self.goals.iter().map(|g| inside[g.index()])))
    }

    /// Number of derivations below each item, saturating.
    pub fn derivation_counts(&self) -> Vec<u128> {
        let mut counts = vec![0u128; self.items.len()];
        for &id in &self.topo {
            counts[id.index()] = self.edges[id.index()].iter().fold(0u128, |acc, e| {
                let prod = e
                    .children
                    .iter()
                    .fold(1u128, |p, c| p.saturating_mul(counts[c.index()]));
                acc.saturating_add(prod)
            });
        }
        counts
    }

    pub fn derivation_count(&self) -> u128 {
        let counts = self.derivation_counts();
        self.goals
            .iter()
            .fold(0u128, |acc, g| acc.saturating_add(counts[g.index()]))
    }
}

pub(crate) fn log_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

struct Partial {
    node: u32,
    tilings: Vec<Vec<ItemId>>,
}

struct Chart {
    n: usize,
    items: Vec<Item>,
    edges: Vec<Vec<Edge>>,
    item_index: HashMap<(usize, usize, NtId), ItemId>,
    items_at: Vec<Vec<ItemId>>,
    partials: Vec<Partial>,
    partial_index: HashMap<(usize, usize, u32), usize>,
    partials_at: Vec<Vec<usize>>,
    rejected_cyclic: usize,
}

impl Chart {
    fn span(&self, i: usize, j: usize) -> usize {
        i * (self.n + 1) + j
    }

    fn add_tiling(&mut self, i: usize, j: usize, node: u32, tiling: Vec<ItemId>) {
        let idx = match self.partial_index.get(&(i, j, node)) {
            Some(&p) => p,
            None => {
                self.partials.push(Partial {
                    node,
                    tilings: Vec::new(),
                });
                let p = self.partials.len() - 1;
                self.partial_index.insert((i, j, node), p);
                let s = self.span(i, j);
                self.partials_at[s].push(p);
                p
            }
        };
        self.partials[idx].tilings.push(tiling);
    }

    fn get_or_add_item(&mut self, i: usize, j: usize, label: NtId) -> (ItemId, bool) {
        if let Some(&id) = self.item_index.get(&(i, j, label)) {
            return (id, false);
        }
        let id = ItemId(self.items.len() as u32);
        self.items.push(Item {
            start: i,
            end: j,
            label,
        });
        self.edges.push(Vec::new());
        self.item_index.insert((i, j, label), id);
        let s = self.span(i, j);
        self.items_at[s].push(id);
        (id, true)
    }

    /// Whether `target` is reachable from `from` through same-span edges.
    fn reaches(&self, from: ItemId, target: ItemId) -> bool {
        let span = (self.items[from.index()].start, self.items[from.index()].end);
        let mut stack = vec![from];
        let mut seen = HashSet::new();
        while let Some(x) = stack.pop() {
            if x == target {
                return true;
            }
            if !seen.insert(x) {
                continue;
            }
            for e in &self.edges[x.index()] {
                for &c in &e.children {
                    let it = self.items[c.index()];
                    if (it.start, it.end) == span {
                        stack.push(c);
                    }
                }
            }
        }
        false
    }
}

/// Builds the forest of all derivations of `sentence`.
///
/// `extra` holds single-word rules for words the grammar does not know; their
/// ids follow the grammar's rules. A sentence outside the tree language yields
/// a forest without goal items.
pub fn build_forest(grammar: &Grammar, sentence: &Sentence, extra: Vec<Rule>) -> Result<Forest> {
    let n = sentence.len();
    let base_rules = grammar.rule_count();

    let mut extra_lex: Vec<(usize, NtId, RuleId)> = Vec::new();
    for (k, r) in extra.iter().enumerate() {
        let word = match &r.rhs[..] {
            [Frontier::Word(w)] => w,
            _ => {
                return Err(Error::Misuse(format!(
                    "sentence rule {} is not a single-word rule",
                    r.key
                )))
            }
        };
        let lhs = grammar
            .nt_id(&r.lhs)
            .ok_or_else(|| Error::Misuse(format!("sentence rule {} has an unknown label", r.key)))?;
        for (pos, w) in sentence.words().iter().enumerate() {
            if w == word {
                extra_lex.push((pos, lhs, RuleId((base_rules + k) as u32)));
            }
        }
    }

    let word_ids: Vec<Option<u32>> = sentence.words().iter().map(|w| grammar.word_id(w)).collect();
    for (pos, w) in sentence.words().iter().enumerate() {
        if word_ids[pos].is_none() && !extra_lex.iter().any(|&(p, _, _)| p == pos) {
            return Err(Error::Coverage {
                word: w.clone(),
                position: pos,
            });
        }
    }

    let trie = &grammar.trie;
    let spans = (n + 1) * (n + 1);
    let mut chart = Chart {
        n,
        items: Vec::new(),
        edges: Vec::new(),
        item_index: HashMap::new(),
        items_at: vec![Vec::new(); spans],
        partials: Vec::new(),
        partial_index: HashMap::new(),
        partials_at: vec![Vec::new(); spans],
        rejected_cyclic: 0,
    };

    for len in 1..=n {
        for i in 0..=(n - len) {
            let j = i + len;

            // Extend shorter partials by one symbol ending at j.
            if len == 1 {
                if let Some(w) = word_ids[i] {
                    if let Some(next) = trie.step(RhsTrie::ROOT, Sym::Word(w)) {
                        chart.add_tiling(i, j, next, Vec::new());
                    }
                }
            }
            #[allow(clippy::needless_range_loop)]
            for k in (i + 1)..j {
                let prefixes = chart.partials_at[chart.span(i, k)].clone();
                for p in prefixes {
                    let node = chart.partials[p].node;
                    if j == k + 1 {
                        if let Some(w) = word_ids[k] {
                            if let Some(next) = trie.step(node, Sym::Word(w)) {
                                for t in chart.partials[p].tilings.clone() {
                                    chart.add_tiling(i, j, next, t);
                                }
                            }
                        }
                    }
                    let fillers = chart.items_at[chart.span(k, j)].clone();
                    for x in fillers {
                        let label = chart.items[x.index()].label;
                        if let Some(next) = trie.step(node, Sym::Site(label)) {
                            for mut t in chart.partials[p].tilings.clone() {
                                t.push(x);
                                chart.add_tiling(i, j, next, t);
                            }
                        }
                    }
                }
            }

            // Complete rules whose right-hand side spans exactly [i, j).
            for p in chart.partials_at[chart.span(i, j)].clone() {
                let node = chart.partials[p].node as usize;
                for &rule in &trie.nodes[node].complete {
                    let lhs = grammar.lhs_ids[rule.index()];
                    let (item, _) = chart.get_or_add_item(i, j, lhs);
                    for t in &chart.partials[p].tilings {
                        chart.edges[item.index()].push(Edge {
                            rule,
                            children: t.clone(),
                        });
                    }
                }
            }
            if len == 1 {
                for &(pos, lhs, rule) in &extra_lex {
                    if pos == i {
                        let (item, _) = chart.get_or_add_item(i, j, lhs);
                        chart.edges[item.index()].push(Edge {
                            rule,
                            children: Vec::new(),
                        });
                    }
                }
            }

            // Same-span unary closure.
            let mut agenda: Vec<ItemId> = chart.items_at[chart.span(i, j)].clone();
            agenda.reverse();
            while let Some(x) = agenda.pop() {
                let label = chart.items[x.index()].label;
                let Some(next) = trie.step(RhsTrie::ROOT, Sym::Site(label)) else {
                    continue;
                };
                chart.add_tiling(i, j, next, vec![x]);
                for &rule in &trie.nodes[next as usize].complete {
                    let lhs = grammar.lhs_ids[rule.index()];
                    let existing = chart.item_index.get(&(i, j, lhs)).copied();
                    if let Some(y) = existing {
                        if chart.reaches(x, y) {
                            chart.rejected_cyclic += 1;
                            continue;
                        }
                    }
                    let (y, fresh) = chart.get_or_add_item(i, j, lhs);
                    chart.edges[y.index()].push(Edge {
                        rule,
                        children: vec![x],
                    });
                    if fresh {
                        agenda.insert(0, y);
                    }
                }
            }
        }
    }

    let goals: Vec<ItemId> = chart.items_at[chart.span(0, n)]
        .iter()
        .copied()
        .filter(|&id| grammar.is_start(chart.items[id.index()].label))
        .collect();
    let topo = topological(&chart.items, &chart.edges);
    if chart.rejected_cyclic > 0 {
        log::debug!(
            "dropped {} cyclic unary edges for {:?}",
            chart.rejected_cyclic,
            sentence.to_string()
        );
    }

    let extra_fixed = extra.iter().map(|r| quantize_log(r.log_score)).collect();
    let extra_ordinals = extra_ordinals(grammar, &extra);
    Ok(Forest {
        sentence: sentence.clone(),
        items: chart.items,
        edges: chart.edges,
        goals,
        topo,
        base_rules,
        extra_rules: extra,
        extra_fixed,
        extra_ordinals,
        mode: grammar.mode(),
        inside: None,
        rejected_cyclic: chart.rejected_cyclic,
    })
}

fn extra_ordinals(grammar: &Grammar, extra: &[Rule]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..extra.len()).collect();
    order.sort_by(|&a, &b| extra[a].key.cmp(&extra[b].key));
    let mut out = vec![0u64; extra.len()];
    for (rank, &k) in order.iter().enumerate() {
        let pos = grammar
            .rules()
            .partition_point(|r| r.key.as_str() < extra[k].key.as_str());
        out[k] = ((2 * pos as u64) << ORDINAL_SHIFT) + rank as u64;
    }
    out
}

fn topological(items: &[Item], edges: &[Vec<Edge>]) -> Vec<ItemId> {
    let mut order = Vec::with_capacity(items.len());
    let mut state = vec![0u8; items.len()];
    for root in 0..items.len() {
        if state[root] != 0 {
            continue;
        }
        // (item, next child cursor over flattened children)
        let mut stack: Vec<(usize, Vec<ItemId>, usize)> = Vec::new();
        state[root] = 1;
        let kids = |i: usize| -> Vec<ItemId> { edges[i].iter().flat_map(|e| e.children.iter().copied()).collect() };
        stack.push((root, kids(root), 0));
        while let Some(top) = stack.last_mut() {
            if top.2 < top.1.len() {
                let c = top.1[top.2].index();
                top.2 += 1;
                if state[c] == 0 {
                    state[c] = 1;
                    stack.push((c, kids(c), 0));
                }
            } else {
                let node = top.0;
                state[node] = 2;
                order.push(ItemId(node as u32));
                stack.pop();
            }
        }
    }
    order
}

/// Fills in log inside scores for every item.
pub fn inside_scores(forest: &mut Forest, grammar: &Grammar) {
    let mut inside = vec![f64::NEG_INFINITY; forest.items.len()];
    for &id in &forest.topo {
        let scores = forest.edges[id.index()].iter().map(|e| {
            forest.rule(grammar, e.rule).log_score + e.children.iter().map(|c| inside[c.index()]).sum::<f64>()
        });
        inside[id.index()] = log_sum(scores);
    }
    forest.inside = Some(inside);
}

/// Unpacks every derivation, refusing if there are more than `limit`.
/// Derivations come out as rule sequences in leftmost-substitution order.
pub fn enumerate_derivations(forest: &Forest, grammar: &Grammar, limit: u128) -> Result<Vec<Derivation>> {
    let count = forest.derivation_count();
    if limit == 0 || count > limit {
        return Err(Error::TooManyDerivations { count, limit });
    }
    let mut memo: HashMap<ItemId, Vec<Vec<RuleId>>> = HashMap::new();
    let mut out = Vec::new();
    for &g in &forest.goals {
        for seq in unpack(forest, g, &mut memo, &|_, _| true) {
            out.push(Derivation::from_rules(seq, forest, grammar));
        }
    }
    Ok(out)
}

/// All rule sequences below `item`, using only edges accepted by `keep`.
pub(crate) fn unpack(
    forest: &Forest,
    item: ItemId,
    memo: &mut HashMap<ItemId, Vec<Vec<RuleId>>>,
    keep: &dyn Fn(ItemId, &Edge) -> bool,
) -> Vec<Vec<RuleId>> {
    if let Some(found) = memo.get(&item) {
        return found.clone();
    }
    let mut out = Vec::new();
    for e in forest.edges(item) {
        if !keep(item, e) {
            continue;
        }
        let mut partial: Vec<Vec<RuleId>> = vec![vec![e.rule]];
        for &c in &e.children {
            let below = unpack(forest, c, memo, keep);
            let mut next = Vec::with_capacity(partial.len() * below.len());
            for p in &partial {
                for b in &below {
                    let mut s = p.clone();
                    s.extend_from_slice(b);
                    next.push(s);
                }
            }
            partial = next;
        }
        out.extend(partial);
    }
    memo.insert(item, out.clone());
    out
}
