//! Fragments compiled into indexed rewrite rules.
//!
//! Each fragment becomes a rule whose left-hand side is the fragment's root
//! and whose right-hand side is its frontier. The fragment key stays attached
//! to the rule as its index, so the internal structure can be restored after
//! parsing.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::fragments::{FragmentTable, Frontier, Shape};
use crate::hexfloat;

pub const FORMAT_VERSION: u32 = 1;

/// Fixed-point resolution used when comparing derivation scores.
const FIXED_SCALE: f64 = (1u64 << 32) as f64;

/// Log score in fixed point, so that sums over a derivation are exact and
/// order-independent.
pub fn quantize_log(log_score: f64) -> i64 {
    (log_score * FIXED_SCALE).round() as i64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScoreMode {
    /// Count over the total count of fragments sharing the root.
    RelativeFrequency,
    /// `1/R` for every rule.
    Uniform,
}

impl ScoreMode {
    pub fn name(self) -> &'static str {
        match self {
            ScoreMode::RelativeFrequency => "relative_frequency",
            ScoreMode::Uniform => "uniform",
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative_frequency" | "relative-frequency" => Ok(ScoreMode::RelativeFrequency),
            "uniform" => Ok(ScoreMode::Uniform),
            _ => Err(Error::Config(format!("unknown score mode {:?}", s))),
        }
    }
}

/// Nonterminal id within one grammar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NtId(pub u32);

/// Position of a rule: grammar rules first, then any rules added for one
/// sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RuleId(pub u32);

impl RuleId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    /// Canonical key of the fragment this rule stands for.
    pub key: String,
    pub lhs: String,
    pub rhs: Vec<Frontier>,
    pub log_score: f64,
    pub shape: Shape,
    /// Frequency assigned to rules guessed for unknown words.
    pub guessed_frequency: Option<f64>,
}

impl Rule {
    pub fn from_shape(shape: Shape, log_score: f64) -> Rule {
        Rule {
            key: shape.to_string(),
            lhs: shape.label().to_string(),
            rhs: shape.frontier(),
            log_score,
            shape,
            guessed_frequency: None,
        }
    }

    pub fn arity(&self) -> usize {
        self.rhs.iter().filter(|s| s.is_site()).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(crate) enum Sym {
    Word(u32),
    Site(NtId),
}

#[derive(Clone, Debug, Default)]
pub(crate) struct TrieNode {
    pub next: HashMap<Sym, u32>,
    /// Rules whose right-hand side ends here.
    pub complete: Vec<RuleId>,
}

/// Prefix tree over rule right-hand sides; rules sharing a frontier share a
/// path.
#[derive(Clone, Debug)]
pub(crate) struct RhsTrie {
    pub nodes: Vec<TrieNode>,
}

impl RhsTrie {
    pub const ROOT: u32 = 0;

    pub fn step(&self, node: u32, sym: Sym) -> Option<u32> {
        self.nodes[node as usize].next.get(&sym).copied()
    }
}

/// An immutable set of scored rules plus lookup structures for parsing.
#[derive(Clone, Debug)]
pub struct Grammar {
    rules: Vec<Rule>,
    mode: ScoreMode,
    start_symbols: BTreeSet<String>,
    nonterminals: Vec<String>,
    nt_index: HashMap<String, NtId>,
    words: HashMap<String, u32>,
    pub(crate) lhs_ids: Vec<NtId>,
    pub(crate) fixed_scores: Vec<i64>,
    pub(crate) trie: RhsTrie,
}

impl PartialEq for Grammar {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode && self.start_symbols == other.start_symbols && self.rules == other.rules
    }
}

impl Grammar {
    /// Builds lookup structures. Rules are sorted by key.
    pub fn new(mut rules: Vec<Rule>, mode: ScoreMode, start_symbols: BTreeSet<String>) -> Result<Grammar> {
        if rules.is_empty() {
            return Err(Error::Config("a grammar needs at least one rule".into()));
        }
        rules.sort_by(|a, b| a.key.cmp(&b.key));
        if let Some(w) = rules.windows(2).find(|w| w[0].key == w[1].key) {
            return Err(Error::Config(format!("duplicate rule {}", w[0].key)));
        }
        let mut nonterminals = Vec::new();
        let mut nt_index = HashMap::new();
        let mut words = HashMap::new();
        let mut intern_nt = |s: &str, nts: &mut Vec<String>| -> NtId {
            *nt_index.entry(s.to_string()).or_insert_with(|| {
                nts.push(s.to_string());
                NtId(nts.len() as u32 - 1)
            })
        };
        for s in &start_symbols {
            intern_nt(s, &mut nonterminals);
        }
        let mut trie = RhsTrie {
            nodes: vec![TrieNode::default()],
        };
        let mut lhs_ids = Vec::with_capacity(rules.len());
        let mut fixed_scores = Vec::with_capacity(rules.len());
        for (i, rule) in rules.iter().enumerate() {
            lhs_ids.push(intern_nt(&rule.lhs, &mut nonterminals));
            fixed_scores.push(quantize_log(rule.log_score));
            let mut node = RhsTrie::ROOT;
            for sym in &rule.rhs {
                let sym = match sym {
                    Frontier::Site(s) => Sym::Site(intern_nt(s, &mut nonterminals)),
                    Frontier::Word(w) => {
                        let n = words.len() as u32;
                        Sym::Word(*words.entry(w.clone()).or_insert(n))
                    }
                };
                node = match trie.nodes[node as usize].next.get(&sym) {
                    Some(&next) => next,
                    None => {
                        trie.nodes.push(TrieNode::default());
                        let next = trie.nodes.len() as u32 - 1;
                        trie.nodes[node as usize].next.insert(sym, next);
                        next
                    }
                };
            }
            trie.nodes[node as usize].complete.push(RuleId(i as u32));
        }
        Ok(Grammar {
            rules,
            mode,
            start_symbols,
            nonterminals,
            nt_index,
            words,
            lhs_ids,
            fixed_scores,
            trie,
        })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, id: RuleId) -> &Rule {
        &self.rules[id.index()]
    }

    /// Number of distinct rules, R.
    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    pub fn mode(&self) -> ScoreMode {
        self.mode
    }

    pub fn start_symbols(&self) -> &BTreeSet<String> {
        &self.start_symbols
    }

    pub fn rule_by_key(&self, key: &str) -> Option<RuleId> {
        self.rules
            .binary_search_by(|r| r.key.as_str().cmp(key))
            .ok()
            .map(|i| RuleId(i as u32))
    }

    pub fn knows_word(&self, word: &str) -> bool {
        self.words.contains_key(word)
    }

    pub(crate) fn word_id(&self, word: &str) -> Option<u32> {
        self.words.get(word).copied()
    }

    pub fn nt_id(&self, label: &str) -> Option<NtId> {
        self.nt_index.get(label).copied()
    }

    pub fn nt_name(&self, id: NtId) -> &str {
        &self.nonterminals[id.0 as usize]
    }

    pub(crate) fn is_start(&self, id: NtId) -> bool {
        self.start_symbols.contains(self.nt_name(id))
    }

    /// Labels of rules whose frontier is a single word.
    pub fn preterminals(&self) -> BTreeSet<&str> {
        self.rules
            .iter()
            .filter(|r| r.shape.depth() == 1 && r.rhs.len() == 1 && !r.rhs[0].is_site())
            .map(|r| r.lhs.as_str())
            .collect()
    }

    pub fn save(&self, mut out: impl Write) -> Result<()> {
        let starts: Vec<&str> = self.start_symbols.iter().map(String::as_str).collect();
        writeln!(
            out,
            "#dop-grammar\tversion={}\tmode={}\tR={}\tstart={}",
            FORMAT_VERSION,
            self.mode,
            self.rules.len(),
            starts.join(" ")
        )?;
        for r in &self.rules {
            write!(out, "{}\t{}", r.key, r.lhs)?;
            for s in &r.rhs {
                write!(out, "\t{}", s)?;
            }
            writeln!(out, "\t{}", hexfloat::format(r.log_score))?;
        }
        Ok(())
    }

    pub fn load(input: impl BufRead) -> Result<Grammar> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::format(1, "empty grammar file"))?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.first() != Some(&"#dop-grammar") || fields.len() != 5 {
            return Err(Error::format(1, "missing grammar header"));
        }
        let field = |i: usize, name: &str| -> Result<&str> {
            fields[i]
                .strip_prefix(name)
                .and_then(|v| v.strip_prefix('='))
                .ok_or_else(|| Error::format(1, format!("header field {} missing", name)))
        };
        let version: u32 = field(1, "version")?
            .parse()
            .map_err(|_| Error::format(1, "bad version"))?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                1,
                format!(
                    "format version {} is not supported (expected {})",
                    version, FORMAT_VERSION
                ),
            ));
        }
        let mode: ScoreMode = field(2, "mode")?
            .parse()
            .map_err(|e: Error| Error::format(1, e.to_string()))?;
        let expected: usize = field(3, "R")?.parse().map_err(|_| Error::format(1, "bad rule count"))?;
        if expected == 0 {
            return Err(Error::format(1, "grammar has no rules (R = 0)"));
        }
        let start_symbols: BTreeSet<String> = field(4, "start")?
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();

        let mut rules = Vec::with_capacity(expected);
        let mut last_good = 1;
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let rule = parse_rule_line(&line)
                .map_err(|msg| Error::format(lineno, format!("{} (last good line {})", msg, last_good)))?;
            rules.push(rule);
            last_good = lineno;
        }
        if rules.len() != expected {
            return Err(Error::format(
                last_good,
                format!(
                    "truncated grammar: header promises {} rules, found {}; last good line {}",
                    expected,
                    rules.len(),
                    last_good
                ),
            ));
        }
        Grammar::new(rules, mode, start_symbols)
    }
}

fn parse_rule_line(line: &str) -> std::result::Result<Rule, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < 4 {
        return Err("expected key, lhs, right-hand side and score".into());
    }
    let shape = Shape::parse_key(fields[0]).map_err(|e| e.to_string())?;
    let lhs = fields[1];
    let rhs = fields[2..fields.len() - 1]
        .iter()
        .map(|s| Frontier::parse(s).ok_or_else(|| format!("bad symbol {:?}", s)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let score_text = fields[fields.len() - 1];
    let log_score = hexfloat::parse(score_text).ok_or_else(|| format!("bad score {:?}", score_text))?;
    if log_score > 0.0 || log_score.is_nan() {
        return Err(format!("log score {} is positive", log_score));
    }
    if shape.label() != lhs || shape.frontier() != rhs {
        return Err("left- or right-hand side disagrees with the fragment key".into());
    }
    Ok(Rule {
        key: fields[0].to_string(),
        lhs: lhs.to_string(),
        rhs,
        log_score,
        shape,
        guessed_frequency: None,
    })
}

/// Relative frequency of a fragment among fragments with the same root.
pub fn fragment_probability(table: &FragmentTable, key: &str) -> Result<f64> {
    let entry = table
        .entries
        .get(key)
        .ok_or_else(|| Error::MissingKey(key.to_string()))?;
    Ok(entry.count as f64 / table.root_totals[&entry.root] as f64)
}

/// One rule per fragment type.
pub fn compile(table: &FragmentTable, mode: ScoreMode, start_symbols: BTreeSet<String>) -> Result<Grammar> {
    if table.is_empty() {
        return Err(Error::Config("cannot compile an empty fragment table".into()));
    }
    let uniform = -(table.len() as f64).ln();
    let rules = table
        .entries
        .iter()
        .map(|(key, e)| {
            let shape = Shape::parse_key(key)?;
            let log_score = match mode {
                ScoreMode::Uniform => uniform,
                ScoreMode::RelativeFrequency => (e.count as f64 / table.root_totals[&e.root] as f64).ln(),
            };
            Ok(Rule::from_shape(shape, log_score))
        })
        .collect::<Result<Vec<_>>>()?;
    Grammar::new(rules, mode, start_symbols)
}
