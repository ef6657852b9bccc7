//! Category guessing for unknown words.
//!
//! Rare training words are grouped by a word-shape signature (ending,
//! capitalization, hyphenation, digits). An unknown word receives one
//! single-word rule per category observed with its signature, scored with
//! Good-Turing adjusted counts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::fragments::Shape;
use crate::grammar::{Grammar, Rule, ScoreMode};
use crate::treebank::Corpus;

pub const DEFAULT_RARE_THRESHOLD: usize = 5;
const MAX_SUFFIX: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WordSignature {
    /// Lowercased ending of up to three characters.
    pub suffix: String,
    pub capitalized: bool,
    pub hyphenated: bool,
    pub has_digit: bool,
}

impl WordSignature {
    pub fn of(word: &str) -> WordSignature {
        let lower: Vec<char> = word.to_lowercase().chars().collect();
        let start = lower.len().saturating_sub(MAX_SUFFIX);
        WordSignature {
            suffix: lower[start..].iter().collect(),
            capitalized: word.chars().next().is_some_and(char::is_uppercase),
            hyphenated: word.contains('-'),
            has_digit: word.chars().any(|c| c.is_ascii_digit()),
        }
    }

    fn with_suffix_len(&self, n: usize) -> WordSignature {
        let chars: Vec<char> = self.suffix.chars().collect();
        let start = chars.len().saturating_sub(n);
        WordSignature {
            suffix: chars[start..].iter().collect(),
            ..self.clone()
        }
    }

    /// Signatures to try, longest suffix first.
    fn backoff(&self) -> impl Iterator<Item = WordSignature> + '_ {
        let n = self.suffix.chars().count();
        (1..=n).rev().map(move |k| self.with_suffix_len(k))
    }
}

/// Result of the Turing estimator over a counts-of-counts table.
#[derive(Clone, Debug, PartialEq)]
pub struct GoodTuring {
    /// r → r*.
    pub adjusted: BTreeMap<u64, f64>,
    /// N_1 / N.
    pub unseen_mass: f64,
    /// False when N_1 = 0 and the identity mapping was used.
    pub applied: bool,
}

impl GoodTuring {
    pub fn adjust(&self, r: u64) -> f64 {
        self.adjusted.get(&r).copied().unwrap_or(r as f64)
    }
}

/// `r* = (r+1) N_{r+1} / N_r` where `N_{r+1} > 0`, else `r`.
pub fn good_turing_adjust(counts_of_counts: &BTreeMap<u64, u64>) -> GoodTuring {
    let total: u64 = counts_of_counts.iter().map(|(r, n)| r * n).sum();
    let n1 = counts_of_counts.get(&1).copied().unwrap_or(0);
    if n1 == 0 {
        log::warn!("no singletons in counts of counts; Good-Turing adjustment disabled");
        return GoodTuring {
            adjusted: counts_of_counts.keys().map(|&r| (r, r as f64)).collect(),
            unseen_mass: if total > 0 { 1.0 / (total + 1) as f64 } else { 1.0 },
            applied: false,
        };
    }
    let adjusted = counts_of_counts
        .iter()
        .map(|(&r, &nr)| {
            let next = counts_of_counts.get(&(r + 1)).copied().unwrap_or(0);
            let star = if next > 0 && nr > 0 {
                (r + 1) as f64 * next as f64 / nr as f64
            } else {
                r as f64
            };
            (r, star)
        })
        .collect();
    GoodTuring {
        adjusted,
        unseen_mass: n1 as f64 / total as f64,
        applied: true,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignatureModel {
    pub rare_threshold: usize,
    /// Counts per signature (at every suffix length) and category.
    pub counts: BTreeMap<WordSignature, BTreeMap<String, u64>>,
    /// All categories seen over words in training.
    pub preterminals: BTreeSet<String>,
    /// Word types seen exactly once, and word tokens, in training.
    pub singleton_words: u64,
    pub word_tokens: u64,
}

impl SignatureModel {
    /// Set when no rare words were found; every guess is then uniform.
    pub fn fallback_only(&self) -> bool {
        self.counts.is_empty()
    }

    fn rare_preterminals(&self) -> BTreeSet<&str> {
        let from_counts: BTreeSet<&str> = self
            .counts
            .values()
            .flat_map(|m| m.keys().map(String::as_str))
            .collect();
        if from_counts.is_empty() {
            self.preterminals.iter().map(String::as_str).collect()
        } else {
            from_counts
        }
    }

    fn cell_good_turing(&self) -> GoodTuring {
        let mut coc = BTreeMap::new();
        for m in self.counts.values() {
            for &c in m.values() {
                *coc.entry(c).or_insert(0) += 1;
            }
        }
        good_turing_adjust(&coc)
    }

    /// Probability of an unseen word, N_1 / N over word frequencies.
    pub fn unseen_word_mass(&self) -> f64 {
        if self.word_tokens == 0 {
            1.0
        } else if self.singleton_words == 0 {
            1.0 / (self.word_tokens + 1) as f64
        } else {
            self.singleton_words as f64 / self.word_tokens as f64
        }
    }

    /// Category distribution for a word, backing off through shorter
    /// suffixes; uniform over rare-word categories if the signature was
    /// never seen.
    pub fn distribution(&self, word: &str) -> Vec<(String, f64)> {
        let sig = WordSignature::of(word);
        let gt = self.cell_good_turing();
        for s in sig.backoff() {
            if let Some(tags) = self.counts.get(&s) {
                let adjusted: Vec<(String, f64)> = tags.iter().map(|(t, &c)| (t.clone(), gt.adjust(c))).collect();
                let total: f64 = adjusted.iter().map(|(_, c)| c).sum();
                if total > 0.0 {
                    return adjusted
                        .into_iter()
                        .filter(|(_, c)| *c > 0.0)
                        .map(|(t, c)| (t, c / total))
                        .collect();
                }
            }
        }
        let tags = self.rare_preterminals();
        let p = 1.0 / tags.len() as f64;
        tags.into_iter().map(|t| (t.to_string(), p)).collect()
    }

    pub fn write_tsv(&self, mut out: impl Write) -> Result<()> {
        let pts: Vec<&str> = self.preterminals.iter().map(String::as_str).collect();
        writeln!(
            out,
            "#dop-lexicon\tthreshold={}\tsingletons={}\ttokens={}\tpreterminals={}",
            self.rare_threshold,
            self.singleton_words,
            self.word_tokens,
            pts.join(" ")
        )?;
        for (sig, tags) in &self.counts {
            for (tag, c) in tags {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    sig.suffix, sig.capitalized as u8, sig.hyphenated as u8, sig.has_digit as u8, tag, c
                )?;
            }
        }
        Ok(())
    }

    pub fn read_tsv(input: impl BufRead) -> Result<SignatureModel> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::format(1, "empty lexicon file"))?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 5 || fields[0] != "#dop-lexicon" {
            return Err(Error::format(1, "missing lexicon header"));
        }
        let value = |i: usize, name: &str| -> Result<&str> {
            fields[i]
                .strip_prefix(name)
                .and_then(|v| v.strip_prefix('='))
                .ok_or_else(|| Error::format(1, format!("header field {} missing", name)))
        };
        let num = |i: usize, name: &str| -> Result<u64> {
            value(i, name)?
                .parse()
                .map_err(|_| Error::format(1, format!("bad {}", name)))
        };
        let mut model = SignatureModel {
            rare_threshold: num(1, "threshold")? as usize,
            singleton_words: num(2, "singletons")?,
            word_tokens: num(3, "tokens")?,
            preterminals: value(4, "preterminals")?
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect(),
            counts: BTreeMap::new(),
        };
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let [suffix, cap, hyph, digit, tag, count] = f[..] else {
                return Err(Error::format(lineno, "expected 6 tab-separated fields"));
            };
            let flag = |s: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::format(lineno, format!("bad flag {:?}", s))),
            };
            let sig = WordSignature {
                suffix: suffix.to_string(),
                capitalized: flag(cap)?,
                hyphenated: flag(hyph)?,
                has_digit: flag(digit)?,
            };
            let count: u64 = count.parse().map_err(|_| Error::format(lineno, "bad count"))?;
            model.counts.entry(sig).or_default().insert(tag.to_string(), count);
        }
        Ok(model)
    }
}

/// Counts signature/category pairs over tokens of words occurring at most
/// `rare_threshold` times.
pub fn train_signatures(corpus: &Corpus, rare_threshold: usize) -> SignatureModel {
    let mut counts: BTreeMap<WordSignature, BTreeMap<String, u64>> = BTreeMap::new();
    let mut preterminals = BTreeSet::new();
    for tree in &corpus.trees {
        for (tag, word) in tree.tagged_words() {
            preterminals.insert(tag.to_string());
            let freq = corpus.vocabulary.get(word).copied().unwrap_or(0);
            if rare_threshold == 0 || freq > rare_threshold {
                continue;
            }
            for sig in WordSignature::of(word).backoff() {
                *counts.entry(sig).or_default().entry(tag.to_string()).or_insert(0) += 1;
            }
        }
    }
    if counts.is_empty() {
        log::warn!(
            "no words at or below the rare threshold {}; guesses will be uniform",
            rare_threshold
        );
    }
    SignatureModel {
        rare_threshold,
        counts,
        preterminals,
        singleton_words: corpus.vocabulary.values().filter(|&&c| c == 1).count() as u64,
        word_tokens: corpus.vocabulary.values().map(|&c| c as u64).sum(),
    }
}

/// Temporary single-word rules for a word the grammar does not know.
pub fn unknown_word_rules(model: &SignatureModel, word: &str, grammar: &Grammar) -> Result<Vec<Rule>> {
    if grammar.knows_word(word) {
        return Err(Error::Misuse(format!("{:?} is a known word", word)));
    }
    let unseen = model.unseen_word_mass();
    let uniform = -(grammar.rule_count() as f64).ln();
    let rules = model
        .distribution(word)
        .into_iter()
        .filter(|(tag, p)| *p > 0.0 && grammar.nt_id(tag).is_some())
        .map(|(tag, p)| {
            let shape = Shape::Node {
                label: tag,
                children: vec![Shape::Word(word.to_string())],
            };
            let score = match grammar.mode() {
                ScoreMode::RelativeFrequency => p.ln() + unseen.ln(),
                ScoreMode::Uniform => uniform,
            };
            let mut rule = Rule::from_shape(shape, score.min(0.0));
            rule.guessed_frequency = Some(p * unseen);
            rule
        })
        .collect();
    Ok(rules)
}
