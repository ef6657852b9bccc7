use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dop::evaluate::parse_collapse;
use dop::fragments::rank_fragments;
use dop::harness::{self, DepthLimit, ExperimentConfig, ParseSettings, ParserSetup};
use dop::lexicon::{train_signatures, DEFAULT_RARE_THRESHOLD};
use dop::treebank::read_treebank;
use dop::{Corpus, FragmentTable, Grammar, NormalizeOptions, ScoreMode, Sentence, SignatureModel, Strategy};

#[derive(Parser)]
#[command(name = "dop", version, about = "Data-oriented parsing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CorpusArgs {
    /// Bracketed treebank file; repeat for several.
    #[arg(long = "treebank", required = true)]
    treebanks: Vec<PathBuf>,
    /// Keep function tags such as NP-SBJ.
    #[arg(long)]
    keep_function_tags: bool,
    /// Keep quotation-mark preterminals.
    #[arg(long)]
    keep_quotes: bool,
}

impl CorpusArgs {
    fn options(&self) -> NormalizeOptions {
        NormalizeOptions {
            strip_function_tags: !self.keep_function_tags,
            remove_quotes: !self.keep_quotes,
            ..NormalizeOptions::default()
        }
    }

    fn load(&self) -> anyhow::Result<Corpus> {
        load_corpus(&self.treebanks, &self.options())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Count fragments of a treebank and write the fragment table.
    Extract {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Maximum fragment depth, or "all".
        #[arg(long, default_value = "all")]
        max_depth: DepthLimit,
        /// Per-depth sample cap as depth:count; repeatable.
        #[arg(long = "sample-cap", value_parser = parse_cap)]
        sample_caps: Vec<(usize, usize)>,
        #[arg(long, default_value_t = 1)]
        sample_seed: u64,
        #[arg(long)]
        max_frontier_words: Option<usize>,
        #[arg(long)]
        max_unlexicalized_depth: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compile a fragment table into a grammar.
    Compile {
        #[arg(long)]
        table: PathBuf,
        /// relative_frequency or uniform.
        #[arg(long, default_value = "relative_frequency")]
        mode: ScoreMode,
        /// Start symbol; repeatable. Defaults to the root labels of --treebank.
        #[arg(long = "start")]
        starts: Vec<String>,
        /// Treebank whose root labels become the start symbols.
        #[arg(long)]
        treebank: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the unknown-word model.
    Lexicon {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = DEFAULT_RARE_THRESHOLD)]
        rare_threshold: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse sentences with a compiled grammar.
    Parse {
        #[arg(long)]
        grammar: PathBuf,
        /// Fragment table the grammar came from; needed for the shortest strategy.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Unknown-word model.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// One sentence per line, words separated by spaces.
        #[arg(long, conflicts_with = "gold", required_unless_present = "gold")]
        sentences: Option<PathBuf>,
        /// Treebank whose yields are parsed.
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Comma-separated strategies.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "viterbi,mpp-nbest,mpp-montecarlo,shortest"
        )]
        strategies: Vec<Strategy>,
        #[arg(long, default_value_t = 1000)]
        nbest: usize,
        #[arg(long, default_value_t = 10_000)]
        mc_samples: usize,
        #[arg(long, default_value_t = 1)]
        mc_seed: u64,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a parse file against gold trees.
    Evaluate {
        #[arg(long)]
        parses: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Label rewrites as FROM=TO pairs, comma-separated.
        #[arg(long, default_value = "PRT=ADVP")]
        collapse: String,
        /// Directory for one report per strategy.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the full extract/compile/parse/evaluate sweep from a config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Override a config entry, as key=value; repeatable.
        #[arg(long = "set", value_parser = parse_override)]
        overrides: Vec<(String, String)>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// An error in how the program was invoked rather than in its data.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn parse_cap(s: &str) -> Result<(usize, usize), String> {
    let (d, n) = s.split_once(':').ok_or("expected depth:count")?;
    Ok((d.parse().map_err(|_| "bad depth")?, n.parse().map_err(|_| "bad count")?))
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or("expected key=value")?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn load_corpus(paths: &[PathBuf], options: &NormalizeOptions) -> anyhow::Result<Corpus> {
    let mut trees = Vec::new();
    for p in paths {
        trees.extend(read_treebank(p)?);
    }
    let corpus = Corpus::normalized(&trees, options);
    if corpus.is_empty() {
        bail!("no usable trees in {:?}", paths);
    }
    Ok(corpus)
}

fn read_table(path: &Path) -> anyhow::Result<FragmentTable> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(FragmentTable::read_tsv(BufReader::new(f)).map_err(|e| e.in_file(path))?)
}

fn read_sentences(path: &Path) -> anyhow::Result<Vec<Sentence>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(l.parse::<Sentence>()?))
        .collect()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Extract {
            corpus,
            max_depth,
            sample_caps,
            sample_seed,
            max_frontier_words,
            max_unlexicalized_depth,
            out,
        } => {
            let cfg = ExperimentConfig {
                treebanks: corpus.treebanks.clone(),
                depths: vec![max_depth],
                sample_caps: sample_caps.into_iter().collect(),
                sample_seed,
                max_frontier_words,
                max_unlexicalized_depth,
                normalize: corpus.options(),
                ..ExperimentConfig::default()
            };
            cfg.validate().map_err(|e| Usage(e.to_string()))?;
            let hist = harness::cmd_extract(&cfg, &out)?;
            println!("depth\tfragments");
            for (d, n) in hist {
                println!("{}\t{}", d, n);
            }
        }
        Command::Compile {
            table,
            mode,
            starts,
            treebank,
            out,
        } => {
            let mut starts: BTreeSet<String> = starts.into_iter().collect();
            if let Some(tb) = treebank {
                starts.extend(load_corpus(&[tb], &NormalizeOptions::default())?.root_labels());
            }
            if starts.is_empty() {
                return Err(Usage("give --start or --treebank".into()).into());
            }
            let g = harness::cmd_compile(&table, mode, starts, &out)?;
            eprintln!("{} rules", g.rule_count());
        }
        Command::Lexicon {
            corpus,
            rare_threshold,
            out,
        } => {
            let model = train_signatures(&corpus.load()?, rare_threshold);
            let f = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            model.write_tsv(std::io::BufWriter::new(f))?;
        }
        Command::Parse {
            grammar,
            table,
            lexicon,
            sentences,
            gold,
            strategies,
            nbest,
            mc_samples,
            mc_seed,
            workers,
            out,
        } => {
            if strategies.contains(&Strategy::Shortest) && table.is_none() {
                return Err(Usage("the shortest strategy needs --table".into()).into());
            }
            if nbest == 0 || mc_samples == 0 || workers == Some(0) {
                return Err(Usage("--nbest, --mc-samples and --workers must be positive".into()).into());
            }
            let gf = File::open(&grammar).with_context(|| format!("opening {}", grammar.display()))?;
            let grammar = Grammar::load(BufReader::new(gf)).map_err(|e| e.in_file(&grammar))?;
            let ranks = table
                .as_deref()
                .map(read_table)
                .transpose()?
                .map(|t| rank_fragments(&t));
            let lexicon = match lexicon {
                Some(p) => {
                    let f = File::open(&p).with_context(|| format!("opening {}", p.display()))?;
                    Some(SignatureModel::read_tsv(BufReader::new(f)).map_err(|e| e.in_file(&p))?)
                }
                None => None,
            };
            let sentences = match (sentences, gold) {
                (Some(s), _) => read_sentences(&s)?,
                (None, Some(g)) => load_corpus(&[g], &NormalizeOptions::default())?
                    .trees
                    .iter()
                    .map(|t| Sentence::new(t.words().into_iter().map(String::from).collect()))
                    .collect::<dop::Result<_>>()?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let setup = ParserSetup {
                grammar: &grammar,
                ranks: ranks.as_ref(),
                lexicon: lexicon.as_ref(),
            };
            let settings = ParseSettings {
                strategies,
                nbest,
                mc_samples,
                mc_seed,
            };
            let results = harness::cmd_parse(&setup, &settings, &sentences, workers, &out)?;
            let failed = results.iter().flatten().filter(|o| o.tree.is_none()).count();
            eprintln!("{} sentences, {} NOPARSE records", results.len(), failed);
        }
        Command::Evaluate {
            parses,
            gold,
            collapse,
            out_dir,
        } => {
            let collapse = parse_collapse(&collapse).map_err(|e| Usage(e.to_string()))?;
            let pf = File::open(&parses).with_context(|| format!("opening {}", parses.display()))?;
            let records = harness::read_parses(BufReader::new(pf)).map_err(|e| e.in_file(&parses))?;
            let gold = load_corpus(&[gold], &NormalizeOptions::default())?;
            let reports = harness::cmd_evaluate(&records, &gold.trees, &collapse)?;
            fs::create_dir_all(&out_dir)?;
            println!("strategy\tsentences\texact\tLP\tLR\tnoparse");
            for (strategy, report) in reports {
                let path = out_dir.join(format!("report_{}.tsv", strategy));
                report.write_tsv(std::io::BufWriter::new(File::create(&path)?))?;
                let r = |x: Option<f64>| x.map_or("NA".to_string(), |v| format!("{:.4}", v));
                println!(
                    "{}\t{}\t{:.2}\t{}\t{}\t{}",
                    strategy,
                    report.records.len(),
                    report.exact_match,
                    r(report.precision),
                    r(report.recall),
                    report.no_parse_count()
                );
            }
        }
        Command::Experiment {
            config,
            overrides,
            out_dir,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            for (k, v) in &overrides {
                cfg.set(k, v, Path::new(".")).map_err(|e| Usage(e.to_string()))?;
            }
            cfg.validate().map_err(|e| Usage(e.to_string()))?;
            let rows = harness::cmd_experiment(&cfg, &out_dir)?;
            harness::write_summary(std::io::stdout().lock(), &rows)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
