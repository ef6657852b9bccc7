//! Experiment driver: configuration, the parse loop and the
//! extract/compile/parse/evaluate/experiment commands.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::disambig::{
    monte_carlo_parse, most_probable_parse, nbest_derivations, rank_select, shortest_derivations, viterbi_best,
    Strategy, SHORTEST_CAP,
};
use crate::error::{Error, Result};
use crate::evaluate::{aggregate, default_collapse, evaluate_sentence, parse_collapse, CollapseMap, EvalReport};
use crate::fragments::{count_fragments, filter_fragments, rank_fragments, sample_fragments, FragmentTable, RankTable};
use crate::grammar::{compile, Grammar, ScoreMode};
use crate::lexicon::{train_signatures, unknown_word_rules, SignatureModel, DEFAULT_RARE_THRESHOLD};
use crate::parser::{build_forest, inside_scores, Sentence};
use crate::treebank::{read_treebank, split_corpus, Corpus, NormalizeOptions, Tree};

pub const NOPARSE: &str = "NOPARSE";

/// A maximum fragment depth; `None` keeps fragments of every depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct DepthLimit(pub Option<usize>);

impl fmt::Display for DepthLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(d) => write!(f, "{}", d),
            None => f.write_str("all"),
        }
    }
}

impl std::str::FromStr for DepthLimit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(DepthLimit(None));
        }
        match s.parse::<usize>() {
            Ok(d) if d > 0 => Ok(DepthLimit(Some(d))),
            _ => Err(Error::Config(format!(
                "bad depth {:?}; expected a positive integer or \"all\"",
                s
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub treebanks: Vec<PathBuf>,
    /// Explicit train/test files; used instead of a random split when set.
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub test_size: usize,
    pub depths: Vec<DepthLimit>,
    pub sample_caps: BTreeMap<usize, usize>,
    pub sample_seed: u64,
    pub max_frontier_words: Option<usize>,
    pub max_unlexicalized_depth: Option<usize>,
    pub strategies: Vec<Strategy>,
    pub nbest: usize,
    pub mc_samples: usize,
    pub mc_seed: u64,
    pub max_length: Option<usize>,
    pub collapse: CollapseMap,
    pub rare_threshold: usize,
    pub workers: Option<usize>,
    pub normalize: NormalizeOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            treebanks: Vec::new(),
            train: None,
            test: None,
            seeds: vec![1],
            test_size: 0,
            depths: vec![DepthLimit(Some(1)), DepthLimit(Some(2)), DepthLimit(Some(3))],
            sample_caps: BTreeMap::new(),
            sample_seed: 1,
            max_frontier_words: None,
            max_unlexicalized_depth: None,
            strategies: Strategy::ALL.to_vec(),
            nbest: 1_000,
            mc_samples: 10_000,
            mc_seed: 1,
            max_length: None,
            collapse: default_collapse(),
            rare_threshold: DEFAULT_RARE_THRESHOLD,
            workers: None,
            normalize: NormalizeOptions::default(),
        }
    }
}

fn list<T>(value: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(item)
        .collect()
}

fn positive(key: &str, value: &str) -> Result<usize> {
    match value.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(Error::Config(format!(
            "{} must be a positive integer, got {:?}",
            key, value
        ))),
    }
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {:?} for {}", value, key)))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{} must be true or false, got {:?}", key, value))),
    }
}

fn optional(value: &str, parse: impl Fn(&str) -> Result<usize>) -> Result<Option<usize>> {
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse(value).map(Some)
    }
}

impl ExperimentConfig {
    /// Reads `key = value` lines; `#` starts a comment. Relative paths are
    /// taken from the directory holding the file.
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::parse(&text, base).map_err(|e| e.in_file(path))
    }

    pub fn parse(text: &str, base: &Path) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(key.trim(), value.trim(), base)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field; `base` resolves relative paths.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = |v: &str| base.join(v);
        match key {
            "treebank" | "treebanks" => self.treebanks = list(value, |v| Ok(path(v)))?,
            "train" => self.train = Some(path(value)),
            "test" => self.test = Some(path(value)),
            "seeds" => self.seeds = list(value, |v| number(key, v))?,
            "test_size" => self.test_size = number(key, value)?,
            "depths" => self.depths = list(value, str::parse)?,
            "sample_caps" => {
                self.sample_caps = list(value, |pair| {
                    let (d, n) = pair
                        .split_once(':')
                        .ok_or_else(|| Error::Config(format!("sample cap {:?} is not depth:count", pair)))?;
                    Ok((positive(key, d)?, positive(key, n)?))
                })?
                .into_iter()
                .collect()
            }
            "sample_seed" => self.sample_seed = number(key, value)?,
            "max_frontier_words" => self.max_frontier_words = optional(value, |v| number(key, v))?,
            "max_unlexicalized_depth" => self.max_unlexicalized_depth = optional(value, |v| positive(key, v))?,
            "strategies" => self.strategies = list(value, str::parse)?,
            "nbest" => self.nbest = positive(key, value)?,
            "mc_samples" => self.mc_samples = positive(key, value)?,
            "mc_seed" => self.mc_seed = number(key, value)?,
            "max_length" => self.max_length = optional(value, |v| positive(key, v))?,
            "collapse" => self.collapse = parse_collapse(value)?,
            "rare_threshold" => self.rare_threshold = number(key, value)?,
            "workers" => self.workers = optional(value, |v| positive(key, v))?,
            "strip_function_tags" => self.normalize.strip_function_tags = flag(key, value)?,
            "remove_quotes" => self.normalize.remove_quotes = flag(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {:?}", key))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.depths.is_empty() {
            return Err(Error::Config("depth list is empty".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("strategy list is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.sample_caps.contains_key(&1) {
            return Err(Error::Config("depth-1 fragments cannot be capped".into()));
        }
        Ok(())
    }

    pub fn settings(&self) -> ParseSettings {
        ParseSettings {
            strategies: self.strategies.clone(),
            nbest: self.nbest,
            mc_samples: self.mc_samples,
            mc_seed: self.mc_seed,
        }
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.unwrap_or(0))
            .build()
            .map_err(|e| Error::Config(format!("cannot start workers: {}", e)))
    }

    fn read_corpus(&self, paths: &[PathBuf]) -> Result<Corpus> {
        let mut trees = Vec::new();
        for p in paths {
            trees.extend(read_treebank(p)?);
        }
        let corpus = Corpus::normalized(&trees, &self.normalize);
        if corpus.is_empty() {
            return Err(Error::Config("treebank holds no usable trees".into()));
        }
        if corpus.len() < trees.len() {
            log::warn!("{} trees were empty after normalization", trees.len() - corpus.len());
        }
        Ok(corpus)
    }

    /// The corpus fragments are drawn from: the train file or all treebanks.
    pub fn training_corpus(&self) -> Result<Corpus> {
        match &self.train {
            Some(t) => self.read_corpus(std::slice::from_ref(t)),
            None => self.read_corpus(&self.treebanks),
        }
    }

    /// Train and test sets for one seed, test trees filtered by length.
    pub fn split(&self, seed: u64) -> Result<(Corpus, Corpus)> {
        let (train, test) = match (&self.train, &self.test) {
            (Some(tr), Some(te)) => (
                self.read_corpus(std::slice::from_ref(tr))?,
                self.read_corpus(std::slice::from_ref(te))?,
            ),
            (None, None) => split_corpus(&self.read_corpus(&self.treebanks)?, seed, self.test_size)?,
            _ => return Err(Error::Config("train and test must be given together".into())),
        };
        let keep = |t: &Tree| self.max_length.is_none_or(|m| t.words().len() <= m);
        let test = Corpus::new(test.trees.into_iter().filter(keep).collect());
        if test.is_empty() {
            return Err(Error::Config("no test sentences".into()));
        }
        Ok((train, test))
    }

    /// Counts, samples and filters the fragments of `corpus`.
    pub fn fragment_table(&self, corpus: &Corpus, depth: DepthLimit) -> Result<FragmentTable> {
        let mut table = count_fragments(corpus, depth.0);
        if !self.sample_caps.is_empty() {
            table = sample_fragments(&table, &self.sample_caps, self.sample_seed)?;
        }
        if self.max_frontier_words.is_some() || self.max_unlexicalized_depth.is_some() {
            table = filter_fragments(&table, self.max_frontier_words, self.max_unlexicalized_depth);
        }
        Ok(table)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseSettings {
    pub strategies: Vec<Strategy>,
    pub nbest: usize,
    pub mc_samples: usize,
    pub mc_seed: u64,
}

impl Default for ParseSettings {
    fn default() -> Self {
        ExperimentConfig::default().settings()
    }
}

/// Everything needed to parse: a grammar, ranks for the shortest-derivation
/// strategy and an optional unknown-word model.
#[derive(Clone, Copy)]
pub struct ParserSetup<'a> {
    pub grammar: &'a Grammar,
    pub ranks: Option<&'a RankTable>,
    pub lexicon: Option<&'a SignatureModel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub strategy: Strategy,
    pub tree: Option<Tree>,
    /// Why no tree was produced.
    pub note: Option<String>,
    pub seconds: f64,
}

/// Errors that turn into a NOPARSE record instead of aborting.
fn sentence_level(e: &Error) -> bool {
    matches!(
        e,
        Error::Coverage { .. } | Error::NoParse | Error::TooManyDerivations { .. } | Error::MissingRank(_)
    )
}

fn run_strategy(
    strategy: Strategy,
    setup: &ParserSetup,
    forest: &crate::parser::Forest,
    settings: &ParseSettings,
    id: usize,
) -> Result<Tree> {
    let g = setup.grammar;
    match strategy {
        Strategy::Viterbi => viterbi_best(forest, g)?.tree(forest, g),
        Strategy::MppNbest => {
            let ds = nbest_derivations(forest, g, settings.nbest)?;
            Ok(most_probable_parse(&ds, forest, g)?.tree)
        }
        Strategy::MppMonteCarlo => {
            let seed = settings.mc_seed.wrapping_add(id as u64);
            Ok(monte_carlo_parse(forest, g, settings.mc_samples, seed)?.tree)
        }
        Strategy::Shortest => {
            let ranks = setup
                .ranks
                .ok_or_else(|| Error::Misuse("the shortest strategy needs a fragment table for ranks".into()))?;
            let mut ds = shortest_derivations(forest, g, SHORTEST_CAP)?;
            Ok(rank_select(&mut ds, ranks, forest, g)?.tree)
        }
    }
}

/// Parses one sentence under every configured strategy, sharing one forest.
pub fn parse_sentence(
    setup: &ParserSetup,
    settings: &ParseSettings,
    id: usize,
    sentence: &Sentence,
) -> Result<Vec<Outcome>> {
    let failed = |note: String| -> Vec<Outcome> {
        settings
            .strategies
            .iter()
            .map(|&strategy| Outcome {
                strategy,
                tree: None,
                note: Some(note.clone()),
                seconds: 0.0,
            })
            .collect()
    };
    let mut extra = Vec::new();
    if let Some(lex) = setup.lexicon {
        let unknown: BTreeSet<&str> = sentence
            .words()
            .iter()
            .map(String::as_str)
            .filter(|w| !setup.grammar.knows_word(w))
            .collect();
        for w in unknown {
            extra.extend(unknown_word_rules(lex, w, setup.grammar)?);
        }
    }
    let mut forest = match build_forest(setup.grammar, sentence, extra) {
        Ok(f) => f,
        Err(e) if sentence_level(&e) => return Ok(failed(e.to_string())),
        Err(e) => return Err(e),
    };
    if !forest.has_parse() {
        return Ok(failed(Error::NoParse.to_string()));
    }
    if settings.strategies.contains(&Strategy::MppMonteCarlo) {
        inside_scores(&mut forest, setup.grammar);
    }
    let mut out = Vec::new();
    for &strategy in &settings.strategies {
        let start = Instant::now();
        let (tree, note) = match run_strategy(strategy, setup, &forest, settings, id) {
            Ok(t) => (Some(t), None),
            Err(e) if sentence_level(&e) => (None, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        out.push(Outcome {
            strategy,
            tree,
            note,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

/// Parses all sentences in parallel; results come back in input order.
/// Sentence ids are 1-based positions.
pub fn parse_all(
    setup: &ParserSetup,
    settings: &ParseSettings,
    sentences: &[Sentence],
    workers: Option<usize>,
) -> Result<Vec<Vec<Outcome>>> {
    let cfg = ExperimentConfig {
        workers,
        ..ExperimentConfig::default()
    };
    cfg.thread_pool()?.install(|| {
        sentences
            .par_iter()
            .enumerate()
            .map(|(i, s)| parse_sentence(setup, settings, i + 1, s))
            .collect()
    })
}

/// One line of a parse file.
#[derive(Clone, Debug, PartialEq)]
pub struct ParseRecord {
    pub id: usize,
    pub strategy: Strategy,
    pub tree: Option<Tree>,
}

pub fn write_parses(mut out: impl Write, results: &[Vec<Outcome>]) -> Result<()> {
    for (i, outcomes) in results.iter().enumerate() {
        for o in outcomes {
            match &o.tree {
                Some(t) => writeln!(out, "{}\t{}\t{}", i + 1, o.strategy, t)?,
                None => writeln!(out, "{}\t{}\t{}", i + 1, o.strategy, NOPARSE)?,
            }
        }
    }
    Ok(())
}

pub fn read_parses(input: impl BufRead) -> Result<Vec<ParseRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::format(i + 1, m);
        let mut f = line.splitn(3, '\t');
        let (Some(id), Some(strategy), Some(tree)) = (f.next(), f.next(), f.next()) else {
            return Err(bad("expected id, strategy and tree".into()));
        };
        let id: usize = id.parse().map_err(|_| bad(format!("bad sentence id {:?}", id)))?;
        let strategy: Strategy = strategy.parse().map_err(|e: Error| bad(e.to_string()))?;
        let tree = match tree {
            NOPARSE => None,
            t => Some(t.parse::<Tree>().map_err(|e| bad(e.to_string()))?),
        };
        out.push(ParseRecord { id, strategy, tree });
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::from(e).in_file(path))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::from(e).in_file(path))
}

/// Extracts fragments up to the largest configured depth, writes the table
/// and returns the number of fragment types per depth.
pub fn cmd_extract(cfg: &ExperimentConfig, out: &Path) -> Result<BTreeMap<usize, usize>> {
    let corpus = cfg.training_corpus()?;
    let depth = *cfg.depths.iter().max_by_key(|d| d.0.unwrap_or(usize::MAX)).unwrap();
    let table = cfg.fragment_table(&corpus, depth)?;
    let mut w = create(out)?;
    table.write_tsv(&mut w)?;
    w.flush()?;
    Ok(table.depth_histogram())
}

/// Compiles a fragment table file into a grammar file.
pub fn cmd_compile(table_path: &Path, mode: ScoreMode, start_symbols: BTreeSet<String>, out: &Path) -> Result<Grammar> {
    let table = FragmentTable::read_tsv(open(table_path)?).map_err(|e| e.in_file(table_path))?;
    if start_symbols.is_empty() {
        return Err(Error::Config("at least one start symbol is required".into()));
    }
    let grammar = compile(&table, mode, start_symbols)?;
    let mut w = create(out)?;
    grammar.save(&mut w)?;
    w.flush()?;
    Ok(grammar)
}

/// Parses every sentence and writes the parse file.
pub fn cmd_parse(
    setup: &ParserSetup,
    settings: &ParseSettings,
    sentences: &[Sentence],
    workers: Option<usize>,
    out: &Path,
) -> Result<Vec<Vec<Outcome>>> {
    let results = parse_all(setup, settings, sentences, workers)?;
    let mut w = create(out)?;
    write_parses(&mut w, &results)?;
    w.flush()?;
    Ok(results)
}

/// Scores parse records against gold trees, one report per strategy.
/// Every strategy must cover exactly the ids `1..=gold.len()`.
pub fn cmd_evaluate(
    records: &[ParseRecord],
    gold: &[Tree],
    collapse: &CollapseMap,
) -> Result<BTreeMap<Strategy, EvalReport>> {
    let mut by_strategy: BTreeMap<Strategy, BTreeMap<usize, Option<&Tree>>> = BTreeMap::new();
    let mut offenders = Vec::new();
    for r in records {
        let slot = by_strategy.entry(r.strategy).or_default();
        if r.id == 0 || r.id > gold.len() {
            offenders.push(format!("{} {} has no gold tree", r.strategy, r.id));
        } else if slot.insert(r.id, r.tree.as_ref()).is_some() {
            offenders.push(format!("{} {} appears twice", r.strategy, r.id));
        }
    }
    for (strategy, rows) in &by_strategy {
        for id in 1..=gold.len() {
            if !rows.contains_key(&id) {
                offenders.push(format!("{} {} missing", strategy, id));
            }
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Misuse(format!(
            "parse and gold ids disagree: {}",
            offenders.join("; ")
        )));
    }
    if by_strategy.is_empty() {
        return Err(Error::Misuse("no parses to evaluate".into()));
    }
    by_strategy
        .into_iter()
        .map(|(strategy, rows)| {
            let recs = rows
                .into_iter()
                .map(|(id, tree)| evaluate_sentence(id, tree, &gold[id - 1], collapse))
                .collect::<Result<Vec<_>>>()?;
            Ok((strategy, aggregate(recs)?))
        })
        .collect()
}

/// One row of the experiment summary, pooled over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub depth: DepthLimit,
    pub strategy: Strategy,
    pub report: EvalReport,
}

fn file_stem(seed: u64, depth: DepthLimit) -> String {
    format!("seed{}_depth{}", seed, depth)
}

/// Runs the whole pipeline for every seed and depth and writes
/// `summary.tsv`, `table.tsv`, per-run parse and report files and, apart
/// from those, `timings.tsv`.
pub fn cmd_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<SummaryRow>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::from(e).in_file(out_dir))?;
    let pool = cfg.thread_pool()?;
    let settings = cfg.settings();
    let mut pooled: BTreeMap<(DepthLimit, Strategy), Vec<crate::evaluate::SentenceRecord>> = BTreeMap::new();
    let mut timings = vec!["seed\tdepth\tstage\tseconds".to_string()];
    let mut time = |seed: u64, depth: &str, stage: &str, secs: f64| {
        timings.push(format!("{}\t{}\t{}\t{:.6}", seed, depth, stage, secs));
    };

    for &seed in &cfg.seeds {
        let start = Instant::now();
        let (train, test) = cfg.split(seed).map_err(|e| e.in_stage("split"))?;
        let gold_path = out_dir.join(format!("gold_seed{}.mrg", seed));
        fs::write(&gold_path, crate::treebank::print_trees(&test.trees))
            .map_err(|e| Error::from(e).in_file(&gold_path))?;
        let lexicon = train_signatures(&train, cfg.rare_threshold);
        let sentences: Vec<Sentence> = test
            .trees
            .iter()
            .map(|t| Sentence::new(t.words().into_iter().map(String::from).collect()))
            .collect::<Result<_>>()?;
        time(seed, "-", "split", start.elapsed().as_secs_f64());

        for &depth in &cfg.depths {
            let d = depth.to_string();
            let start = Instant::now();
            let table = cfg.fragment_table(&train, depth).map_err(|e| e.in_stage("extract"))?;
            time(seed, &d, "extract", start.elapsed().as_secs_f64());

            let start = Instant::now();
            let grammar = compile(&table, ScoreMode::RelativeFrequency, train.root_labels())
                .map_err(|e| e.in_stage("compile"))?;
            let ranks = rank_fragments(&table);
            time(seed, &d, "compile", start.elapsed().as_secs_f64());

            let setup = ParserSetup {
                grammar: &grammar,
                ranks: Some(&ranks),
                lexicon: Some(&lexicon),
            };
            let start = Instant::now();
            let results: Vec<Vec<Outcome>> = pool
                .install(|| {
                    sentences
                        .par_iter()
                        .enumerate()
                        .map(|(i, s)| parse_sentence(&setup, &settings, i + 1, s))
                        .collect::<Result<_>>()
                })
                .map_err(|e| e.in_stage("parse"))?;
            time(seed, &d, "parse", start.elapsed().as_secs_f64());
            for (k, strategy) in settings.strategies.iter().enumerate() {
                let secs: f64 = results.iter().map(|r| r[k].seconds).sum();
                time(seed, &d, &format!("parse:{}", strategy), secs);
            }

            let stem = file_stem(seed, depth);
            let parse_path = out_dir.join(format!("parses_{}.tsv", stem));
            let mut w = create(&parse_path)?;
            write_parses(&mut w, &results)?;
            w.flush()?;

            let records: Vec<ParseRecord> = results
                .iter()
                .enumerate()
                .flat_map(|(i, outs)| {
                    outs.iter().map(move |o| ParseRecord {
                        id: i + 1,
                        strategy: o.strategy,
                        tree: o.tree.clone(),
                    })
                })
                .collect();
            let reports = cmd_evaluate(&records, &test.trees, &cfg.collapse).map_err(|e| e.in_stage("evaluate"))?;
            for (strategy, report) in reports {
                let path = out_dir.join(format!("report_{}_{}.tsv", stem, strategy));
                let mut w = create(&path)?;
                report.write_tsv(&mut w)?;
                w.flush()?;
                let pooled_records = pooled.entry((depth, strategy)).or_default();
                pooled_records.extend(report.records.into_iter().map(|mut r| {
                    r.id += pooled_records_offset(seed, &cfg.seeds, sentences.len());
                    r
                }));
            }
            log::info!("seed {} depth {} done", seed, depth);
        }
    }

    let rows: Vec<SummaryRow> = pooled
        .into_iter()
        .map(|((depth, strategy), recs)| {
            Ok(SummaryRow {
                depth,
                strategy,
                report: aggregate(recs)?,
            })
        })
        .collect::<Result<_>>()?;
    let mut w = create(&out_dir.join("summary.tsv"))?;
    write_summary(&mut w, &rows)?;
    w.flush()?;
    let mut w = create(&out_dir.join("table.tsv"))?;
    write_depth_table(&mut w, &rows, &cfg.strategies)?;
    w.flush()?;
    timings.push(String::new());
    let timing_path = out_dir.join("timings.tsv");
    fs::write(&timing_path, timings.join("\n")).map_err(|e| Error::from(e).in_file(&timing_path))?;
    Ok(rows)
}

/// Offset keeping pooled sentence ids distinct across seeds.
fn pooled_records_offset(seed: u64, seeds: &[u64], per_seed: usize) -> usize {
    seeds.iter().position(|&s| s == seed).unwrap_or(0) * per_seed
}

fn ratio(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), |v| format!("{:.4}", v))
}

pub fn write_summary(mut out: impl Write, rows: &[SummaryRow]) -> Result<()> {
    writeln!(out, "depth\tstrategy\tsentences\texact\tLP\tLR\tnoparse")?;
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.2}\t{}\t{}\t{}",
            r.depth,
            r.strategy,
            r.report.records.len(),
            r.report.exact_match,
            ratio(r.report.precision),
            ratio(r.report.recall),
            r.report.no_parse_count()
        )?;
    }
    Ok(())
}

/// Exact match per depth (rows) and strategy (columns).
pub fn write_depth_table(mut out: impl Write, rows: &[SummaryRow], strategies: &[Strategy]) -> Result<()> {
    let names: Vec<&str> = strategies.iter().map(|s| s.name()).collect();
    writeln!(out, "depth\t{}", names.join("\t"))?;
    let depths: BTreeSet<DepthLimit> = rows.iter().map(|r| r.depth).collect();
    for depth in depths {
        let label = match depth.0 {
            Some(1) => "1".to_string(),
            Some(d) => format!("<={}", d),
            None => "all".to_string(),
        };
        let cells: Vec<String> = strategies
            .iter()
            .map(|s| {
                rows.iter()
                    .find(|r| r.depth == depth && r.strategy == *s)
                    .map_or_else(|| "-".to_string(), |r| format!("{:.2}", r.report.exact_match))
            })
            .collect();
        writeln!(out, "{}\t{}", label, cells.join("\t"))?;
    }
    Ok(())
}
