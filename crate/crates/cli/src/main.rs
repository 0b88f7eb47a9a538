use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{CommandFactory, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use sqlaug::align::{export_corpus, load_labeled, mine_corpus, LabeledExample};
use sqlaug::eval::execute;
use sqlaug::generator::{fill_pattern, filter_executable, FillConfig};
use sqlaug::grammar::{
    default_grammar, enumerate_sketches, generate_until_coverage, load_grammar, ComplexityLevel, Grammar, GrammarError,
};
use sqlaug::hier::{
    decompose, execution_order, generate_question, Naming, SubprocessTranslator, TemplatePack, TemplateTranslator,
    Translator,
};
use sqlaug::pipeline::{
    augment, labeled_patterns, parse_strategy, plan_epochs, read_augmented, stats, write_jsonl_to, AugmentConfig,
    PipelineError,
};
use sqlaug::schema::{load_content_dir, load_schema, DatabaseContent, Schema};
use sqlaug::sql::{parse_sql, serialize_sql, Pattern, Query};

#[derive(Parser)]
#[command(name = "sqlaug", version, about = "Text-to-SQL data augmentation")]
struct Cli {
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Write data here instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Db {
    /// Schema file in tables.json layout.
    #[arg(long, value_name = "FILE")]
    schemas: PathBuf,
    /// Directory with `<db_id>.json` or `<db_id>/*.csv` content.
    #[arg(long, value_name = "DIR")]
    content: PathBuf,
    #[arg(long)]
    db: String,
}

#[derive(clap::Args)]
struct OptSchema {
    /// Resolve names against this schema file (requires --db).
    #[arg(long, value_name = "FILE", requires = "db")]
    schemas: Option<PathBuf>,
    #[arg(long, requires = "schemas")]
    db: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate sketch patterns at one level, or until a labeled set is covered.
    GenSketches {
        #[arg(long, value_name = "FILE")]
        grammar: Option<PathBuf>,
        #[arg(long, conflicts_with = "train")]
        depth: Option<usize>,
        #[arg(long, requires = "depth")]
        breadth: Option<usize>,
        /// Run the coverage schedule against this labeled JSONL instead.
        #[arg(long, value_name = "FILE", requires = "schemas")]
        train: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        schemas: Option<PathBuf>,
        /// Print derivation trees instead of flat patterns.
        #[arg(long)]
        trees: bool,
    },
    /// Fill one pattern with names and values from a database.
    Fill {
        #[command(flatten)]
        db: Db,
        #[arg(long)]
        pattern: String,
        #[arg(long)]
        max_fills: Option<usize>,
        /// Keep queries that fail to execute.
        #[arg(long)]
        keep_failing: bool,
    },
    /// Generate question/SQL pairs for every database.
    Augment {
        #[arg(long, value_name = "FILE")]
        schemas: PathBuf,
        #[arg(long, value_name = "DIR")]
        content: PathBuf,
        #[arg(long, value_name = "FILE")]
        grammar: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        train: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Add subquestion variants mined from the labeled pairs to the templates.
        #[arg(long)]
        mine_paraphrases: bool,
    },
    /// Split a query into clauses.
    Decompose {
        #[arg(long)]
        sql: String,
        #[command(flatten)]
        schema: OptSchema,
        /// List clauses in composition order rather than query order.
        #[arg(long)]
        execution_order: bool,
    },
    /// Translate one query into a question.
    TosqlQuestion {
        #[arg(long)]
        sql: String,
        #[command(flatten)]
        schema: OptSchema,
    },
    /// Align labeled questions with their clauses and print the kept pairs.
    Align {
        #[arg(long, value_name = "FILE")]
        train: PathBuf,
        #[arg(long, value_name = "FILE")]
        schemas: PathBuf,
    },
    /// Mine the clause/subquestion corpus from labeled pairs.
    ExportCorpus {
        #[arg(long, value_name = "FILE")]
        train: PathBuf,
        #[arg(long, value_name = "FILE")]
        schemas: PathBuf,
    },
    /// Per-epoch training sets for a strategy.
    PlanEpochs {
        /// pretrain, merge or sample
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        labeled: usize,
        #[arg(long)]
        generated: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        pretrain_epochs: Option<usize>,
    },
    /// Size, pattern and construct statistics for labeled and generated data.
    Stats {
        #[arg(long, value_name = "FILE")]
        train: PathBuf,
        #[arg(long, value_name = "FILE")]
        schemas: PathBuf,
        /// Augmented JSONL.
        #[arg(long, value_name = "FILE")]
        generated: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run a query and print the result as TSV.
    Exec {
        #[command(flatten)]
        db: Db,
        #[arg(long)]
        sql: String,
    },
}

enum Failure {
    /// Bad input: exit 1.
    User(String),
    /// Something broke on valid input: exit 2.
    Internal(String),
}

fn user(e: impl ToString) -> Failure {
    Failure::User(e.to_string())
}

fn internal(e: impl ToString) -> Failure {
    Failure::Internal(e.to_string())
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Pool(_) => internal(e),
            _ => user(e),
        }
    }
}

type Res<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            eprintln!();
            eprintln!("{}", usage_help());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(2)
        }
    }
}

/// Help for the subcommand named on the command line, or the top level.
fn usage_help() -> String {
    let mut cmd = Cli::command();
    let named = std::env::args()
        .skip(1)
        .find(|a| cmd.get_subcommands().any(|s| s.get_name() == a));
    match named.and_then(|n| cmd.find_subcommand_mut(&n).cloned()) {
        Some(mut sub) => sub.render_help().to_string(),
        None => cmd.render_help().to_string(),
    }
}

fn config(cli: &Cli) -> Res<AugmentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => AugmentConfig::load(p)?,
        None => AugmentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

struct Output(Box<dyn Write>);

impl Output {
    fn open(path: Option<&Path>) -> Res<Self> {
        Ok(Output(match path {
            Some(p) => Box::new(io::BufWriter::new(
                fs::File::create(p).map_err(|e| user(format!("{}: {e}", p.display())))?,
            )),
            None => Box::new(io::BufWriter::new(io::stdout().lock())),
        }))
    }

    fn line(&mut self, s: impl std::fmt::Display) -> Res<()> {
        writeln!(self.0, "{s}").map_err(internal)
    }

    fn jsonl<T: Serialize>(&mut self, items: &[T]) -> Res<()> {
        write_jsonl_to(&mut self.0, items).map_err(internal)
    }

    fn finish(mut self) -> Res<()> {
        self.0.flush().map_err(internal)
    }
}

fn schemas(path: &Path) -> Res<Vec<Arc<Schema>>> {
    Ok(load_schema(path).map_err(user)?.into_iter().map(Arc::new).collect())
}

fn schema_map(path: &Path) -> Res<BTreeMap<String, Arc<Schema>>> {
    Ok(schemas(path)?.into_iter().map(|s| (s.db_id.clone(), s)).collect())
}

fn contents(schemas_path: &Path, dir: &Path) -> Res<Vec<DatabaseContent>> {
    let mut v: Vec<_> = load_content_dir(dir, &schemas(schemas_path)?)
        .map_err(user)?
        .into_values()
        .collect();
    v.sort_by(|a, b| a.db_id().cmp(b.db_id()));
    Ok(v)
}

fn database(db: &Db) -> Res<DatabaseContent> {
    contents(&db.schemas, &db.content)?
        .into_iter()
        .find(|c| c.db_id() == db.db)
        .ok_or_else(|| user(format!("no database `{}` in {}", db.db, db.schemas.display())))
}

fn grammar(path: Option<&Path>) -> Res<Grammar> {
    path.map_or_else(|| Ok(default_grammar()), |p| load_grammar(p).map_err(user))
}

fn labeled(path: &Path) -> Res<Vec<LabeledExample>> {
    load_labeled(path).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn corpus_patterns(train: &Path, schemas_path: &Path) -> Res<Vec<Pattern>> {
    let s = schemas(schemas_path)?;
    let refs: Vec<&Schema> = s.iter().map(|s| &**s).collect();
    Ok(labeled_patterns(&labeled(train)?, &refs))
}

fn query(sql: &str, schema: &OptSchema) -> Res<(Query, Option<Arc<Schema>>)> {
    let s = match (&schema.schemas, &schema.db) {
        (Some(path), Some(db)) => Some(
            schema_map(path)?
                .remove(db)
                .ok_or_else(|| user(format!("no database `{db}` in {}", path.display())))?,
        ),
        _ => None,
    };
    let q = parse_sql(sql, s.as_deref()).map_err(user)?;
    Ok((q, s))
}

fn translator(cfg: &AugmentConfig) -> Res<Box<dyn Translator>> {
    if let Some(cmd) = &cfg.translator_command {
        return Ok(Box::new(SubprocessTranslator::spawn(cmd, 1).map_err(user)?));
    }
    Ok(Box::new(match &cfg.templates {
        Some(p) => TemplateTranslator::new(TemplatePack::load(p).map_err(user)?),
        None => TemplateTranslator::english(),
    }))
}

fn run(cli: Cli) -> Res<()> {
    let cfg = config(&cli)?;
    let mut out = Output::open(cli.out.as_deref())?;
    match &cli.command {
        Command::GenSketches {
            grammar: gpath,
            depth,
            breadth,
            train,
            schemas: spath,
            trees,
        } => {
            let g = grammar(gpath.as_deref())?;
            let sketches = if let (Some(train), Some(spath)) = (train, spath) {
                let corpus = corpus_patterns(train, spath)?;
                let run = match generate_until_coverage(&g, &corpus, cfg.threshold, &cfg.schedule.schedule()) {
                    Ok(run) => run,
                    Err(GrammarError::CapExceededBeforeThreshold(run)) => {
                        log::warn!("threshold {} not reached", cfg.threshold);
                        *run
                    }
                    Err(e) => return Err(user(e)),
                };
                for l in &run.levels {
                    eprintln!(
                        "{}: {} new patterns, coverage {:.4}",
                        l.level, l.new_patterns, l.coverage
                    );
                }
                run.sketches
            } else {
                let (Some(d), Some(b)) = (depth, breadth) else {
                    return Err(user("give --depth and --breadth, or --train with --schemas"));
                };
                enumerate_sketches(&g, ComplexityLevel::new(*d, *b)).map_err(user)?
            };
            for t in &sketches {
                if *trees {
                    out.line(t.render(&g))?;
                } else {
                    out.line(t.flatten())?;
                }
            }
        }
        Command::Fill {
            db,
            pattern,
            max_fills,
            keep_failing,
        } => {
            let content = database(db)?;
            let p: Pattern = pattern.parse().map_err(user)?;
            let fc = FillConfig {
                rng_seed: cfg.seed,
                max_fills: max_fills.unwrap_or(cfg.max_fills),
                allow_value_perturbation: cfg.value_perturbation,
            };
            let mut qs = fill_pattern(&p, &content, &fc).map_err(user)?;
            if !keep_failing {
                let f = filter_executable(qs, &content);
                for (i, e) in &f.rejected {
                    log::info!("fill {i} rejected: {e}");
                }
                qs = f.kept;
            }
            for q in &qs {
                out.line(serialize_sql(q))?;
            }
        }
        Command::Augment {
            schemas: spath,
            content,
            grammar: gpath,
            train,
            workers,
            threshold,
            mine_paraphrases,
        } => {
            let mut cfg = cfg.clone();
            if let Some(w) = workers {
                cfg.workers = *w;
            }
            if let Some(t) = threshold {
                cfg.threshold = *t;
            }
            let dbs = contents(spath, content)?;
            let g = grammar(gpath.as_deref())?;
            let corpus = corpus_patterns(train, spath)?;
            let mut t = translator(&cfg)?;
            if *mine_paraphrases {
                if cfg.translator_command.is_some() {
                    return Err(user("--mine-paraphrases works with the template translator only"));
                }
                let (mined, _, report) = mine_corpus(&labeled(train)?, &schema_map(spath)?);
                eprintln!("alignment rate {:.3}", report.alignment_rate);
                let base = match &cfg.templates {
                    Some(p) => TemplateTranslator::new(TemplatePack::load(p).map_err(user)?),
                    None => TemplateTranslator::english(),
                };
                t = Box::new(base.with_paraphrases(mined.paraphrase_table()));
            }
            let res = augment(&dbs, &g, &corpus, &*t, &cfg)?;
            out.jsonl(&res.examples)?;
            eprintln!("{}", serde_json::to_string_pretty(&res.stats).map_err(internal)?);
            for w in &res.stats.warnings {
                log::warn!("{w}");
            }
        }
        Command::Decompose {
            sql,
            schema,
            execution_order: exec_order,
        } => {
            let (q, _) = query(sql, schema)?;
            let mut clauses = decompose(&q);
            if *exec_order {
                clauses = execution_order(clauses);
            }
            for c in &clauses {
                out.line(format_args!("{}\t{}", c.kind.as_str(), c.text()))?;
            }
        }
        Command::TosqlQuestion { sql, schema } => {
            let (q, s) = query(sql, schema)?;
            let names = s.as_deref().map(Naming::new).unwrap_or_default();
            let t = translator(&cfg)?;
            let g = generate_question(&q, &*t, &names, cfg.variant_policy()).map_err(internal)?;
            for sub in &g.subquestions {
                log::info!("{}: {}", sub.kind.as_str(), sub.text);
            }
            out.line(g.question)?;
        }
        Command::Align { train, schemas: spath } => {
            let examples = labeled(train)?;
            let (_, kept, report) = mine_corpus(&examples, &schema_map(spath)?);
            let rows: Vec<_> = kept
                .iter()
                .map(|p| {
                    json!({
                        "question_id": p.question_id,
                        "db_id": examples[p.question_id].db_id,
                        "clause_index": p.clause_index,
                        "kind": p.clause.kind.as_str(),
                        "clause": p.clause.text(),
                        "span": [p.span.start, p.span.end],
                        "subquestion": p.subquestion,
                        "confidence": p.confidence,
                    })
                })
                .collect();
            out.jsonl(&rows)?;
            eprintln!("{}", serde_json::to_string_pretty(&report).map_err(internal)?);
        }
        Command::ExportCorpus { train, schemas: spath } => {
            let Some(path) = &cli.out else {
                return Err(user("export-corpus needs --out"));
            };
            let (corpus, _, report) = mine_corpus(&labeled(train)?, &schema_map(spath)?);
            drop(out);
            export_corpus(&corpus, path).map_err(|e| user(format!("{}: {e}", path.display())))?;
            eprintln!(
                "{} records, alignment rate {:.3}",
                corpus.records.len(),
                report.alignment_rate
            );
            return Ok(());
        }
        Command::PlanEpochs {
            strategy,
            labeled,
            generated,
            epochs,
            pretrain_epochs,
        } => {
            let s = parse_strategy(strategy, pretrain_epochs.unwrap_or(cfg.pretrain_epochs)).map_err(user)?;
            let plans = plan_epochs(s, *labeled, *generated, epochs.unwrap_or(cfg.epochs), cfg.seed).map_err(user)?;
            out.jsonl(&plans)?;
        }
        Command::Stats {
            train,
            schemas: spath,
            generated,
            json,
        } => {
            let lab = corpus_patterns(train, spath)?;
            let gen = read_augmented(generated)?
                .iter()
                .map(|e| {
                    e.pattern
                        .parse::<Pattern>()
                        .map_err(|err| user(format!("`{}`: {err}", e.pattern)))
                })
                .collect::<Res<Vec<_>>>()?;
            let r = stats(&lab, &gen);
            if *json {
                out.line(serde_json::to_string_pretty(&r).map_err(internal)?)?;
            } else {
                out.line(r.to_markdown())?;
            }
        }
        Command::Exec { db, sql } => {
            let content = database(db)?;
            let q = parse_sql(sql, Some(&content.schema)).map_err(user)?;
            let table = execute(&q, &content).map_err(user)?;
            write!(out.0, "{}", table.to_tsv()).map_err(internal)?;
        }
    }
    out.finish()
}
