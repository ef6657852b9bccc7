//! Exact match and labeled precision/recall against gold trees.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::treebank::Tree;

/// Label rewrites applied before comparison, e.g. `PRT → ADVP`.
pub type CollapseMap = BTreeMap<String, String>;

pub fn default_collapse() -> CollapseMap {
    BTreeMap::from([("PRT".to_string(), "ADVP".to_string())])
}

/// Parses `A=B,C=D` into a collapse map.
pub fn parse_collapse(text: &str) -> Result<CollapseMap> {
    let mut map = CollapseMap::new();
    for pair in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (from, to) = pair
            .split_once('=')
            .filter(|(a, b)| !a.is_empty() && !b.is_empty())
            .ok_or_else(|| Error::Config(format!("bad collapse pair {:?}", pair)))?;
        map.insert(from.to_string(), to.to_string());
    }
    Ok(map)
}

/// Labeled spans of all nodes above the preterminals, root included,
/// sorted so equal multisets compare equal.
pub fn constituents(tree: &Tree, collapse: &CollapseMap) -> Vec<(String, usize, usize)> {
    fn walk(t: &Tree, start: usize, collapse: &CollapseMap, out: &mut Vec<(String, usize, usize)>) -> usize {
        if t.is_leaf() {
            return start + 1;
        }
        let mut end = start;
        for c in &t.children {
            end = walk(c, end, collapse, out);
        }
        if !t.is_preterminal() {
            let label = collapse.get(&t.label).unwrap_or(&t.label);
            out.push((label.clone(), start, end));
        }
        end
    }
    let mut out = Vec::new();
    walk(tree, 0, collapse, &mut out);
    out.sort();
    out
}

fn check_yields(proposed: &Tree, gold: &Tree) -> Result<()> {
    let (p, g) = (proposed.words(), gold.words());
    if p != g {
        return Err(Error::Misuse(format!(
            "yields differ: {:?} vs gold {:?}",
            p.join(" "),
            g.join(" ")
        )));
    }
    Ok(())
}

pub fn exact_match(proposed: &Tree, gold: &Tree) -> Result<bool> {
    check_yields(proposed, gold)?;
    Ok(proposed == gold)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParsevalCounts {
    pub correct: usize,
    pub proposed: usize,
    pub gold: usize,
}

impl ParsevalCounts {
    pub fn precision(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.correct as f64 / self.proposed as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.gold > 0).then(|| self.correct as f64 / self.gold as f64)
    }
}

impl std::ops::Add for ParsevalCounts {
    type Output = ParsevalCounts;
    fn add(self, o: ParsevalCounts) -> ParsevalCounts {
        ParsevalCounts {
            correct: self.correct + o.correct,
            proposed: self.proposed + o.proposed,
            gold: self.gold + o.gold,
        }
    }
}

/// Multiset intersection of labeled constituents.
pub fn parseval(proposed: &Tree, gold: &Tree, collapse: &CollapseMap) -> Result<ParsevalCounts> {
    check_yields(proposed, gold)?;
    let p = constituents(proposed, collapse);
    let g = constituents(gold, collapse);
    let (mut i, mut j, mut correct) = (0, 0, 0);
    while i < p.len() && j < g.len() {
        match p[i].cmp(&g[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                correct += 1;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(ParsevalCounts {
        correct,
        proposed: p.len(),
        gold: g.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceRecord {
    pub id: usize,
    pub exact: bool,
    pub counts: ParsevalCounts,
    pub no_parse: bool,
}

/// Scores one sentence; a missing parse counts zero proposed constituents.
pub fn evaluate_sentence(
    id: usize,
    proposed: Option<&Tree>,
    gold: &Tree,
    collapse: &CollapseMap,
) -> Result<SentenceRecord> {
    Ok(match proposed {
        Some(p) => SentenceRecord {
            id,
            exact: exact_match(p, gold)?,
            counts: parseval(p, gold, collapse)?,
            no_parse: false,
        },
        None => SentenceRecord {
            id,
            exact: false,
            counts: ParsevalCounts {
                gold: constituents(gold, collapse).len(),
                ..Default::default()
            },
            no_parse: true,
        },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub records: Vec<SentenceRecord>,
    pub totals: ParsevalCounts,
    /// Percentage, 0 to 100.
    pub exact_match: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Micro-averaged totals over sentences.
pub fn aggregate(records: Vec<SentenceRecord>) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Misuse("no sentences to aggregate".into()));
    }
    let totals = records.iter().fold(ParsevalCounts::default(), |a, r| a + r.counts);
    let exact = records.iter().filter(|r| r.exact).count();
    Ok(EvalReport {
        exact_match: 100.0 * exact as f64 / records.len() as f64,
        precision: totals.precision(),
        recall: totals.recall(),
        totals,
        records,
    })
}

fn fmt_ratio(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| format!("{:.4}", v))
}

impl EvalReport {
    pub fn no_parse_count(&self) -> usize {
        self.records.iter().filter(|r| r.no_parse).count()
    }

    pub fn write_tsv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "id\texact\tcorrect\tproposed\tgold\tflag")?;
        for r in &self.records {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.id,
                r.exact as u8,
                r.counts.correct,
                r.counts.proposed,
                r.counts.gold,
                if r.no_parse { "NOPARSE" } else { "-" }
            )?;
        }
        writeln!(
            out,
            "total\t{:.2}\t{}\t{}\t{}\tLP={} LR={} noparse={}",
            self.exact_match,
            self.totals.correct,
            self.totals.proposed,
            self.totals.gold,
            fmt_ratio(self.precision),
            fmt_ratio(self.recall),
            self.no_parse_count()
        )?;
        Ok(())
    }
}
