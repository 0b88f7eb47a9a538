//! End-to-end augmentation, dataset statistics and training-epoch plans.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::LabeledExample;
use crate::generator::{derive_seed, fill_sketch, filter_executable, FillConfig};
use crate::grammar::{generate_until_coverage, ComplexityLevel, Grammar, GrammarError, LevelSchedule};
use crate::hier::{generate_question, Naming, Translator, VariantPolicy};
use crate::schema::{DatabaseContent, Schema};
use crate::sql::{extract_pattern, parse_sql, serialize_sql, Pattern, PatternToken};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("grammar: {0}")]
    Grammar(#[from] GrammarError),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub start_depth: usize,
    pub start_breadth: usize,
    pub max_depth: usize,
    pub max_breadth: usize,
    pub hard_cap: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = LevelSchedule::default();
        ScheduleConfig {
            start_depth: s.start.depth,
            start_breadth: s.start.breadth,
            max_depth: s.max.depth,
            max_breadth: s.max.breadth,
            hard_cap: s.hard_cap,
        }
    }
}

impl ScheduleConfig {
    pub fn schedule(&self) -> LevelSchedule {
        LevelSchedule {
            start: ComplexityLevel::new(self.start_depth, self.start_breadth),
            max: ComplexityLevel::new(self.max_depth, self.max_breadth),
            hard_cap: self.hard_cap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantMode {
    Fixed,
    Hashed,
}

/// Every knob of a run. Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub seed: u64,
    pub threshold: f64,
    pub workers: usize,
    pub max_fills: usize,
    pub value_perturbation: bool,
    pub variant_mode: VariantMode,
    /// Used with `variant_mode = "fixed"`.
    pub variant: usize,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub templates: Option<PathBuf>,
    pub translator_command: Option<Vec<String>>,
    pub schedule: ScheduleConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            seed: 0,
            threshold: 0.8,
            workers: 1,
            max_fills: 8,
            value_perturbation: false,
            variant_mode: VariantMode::Hashed,
            variant: 0,
            epochs: 10,
            pretrain_epochs: 5,
            templates: None,
            translator_command: None,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl AugmentConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn variant_policy(&self) -> VariantPolicy {
        match self.variant_mode {
            VariantMode::Fixed => VariantPolicy::Fixed(self.variant),
            VariantMode::Hashed => VariantPolicy::Hashed(self.seed),
        }
    }

    fn fill_config(&self, rng_seed: u64) -> FillConfig {
        FillConfig {
            rng_seed,
            max_fills: self.max_fills,
            allow_value_perturbation: self.value_perturbation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub sketch_id: usize,
    pub fill_seed: u64,
    pub translator_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedExample {
    pub question: String,
    pub sql: String,
    pub db_id: String,
    pub pattern: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DbStats {
    pub filled: usize,
    pub rejected: usize,
    pub duplicates: usize,
    pub emitted: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AugmentStats {
    pub labeled_patterns: usize,
    pub sketches: usize,
    pub final_level: Option<(usize, usize)>,
    pub coverage: f64,
    pub threshold_reached: bool,
    pub per_db: BTreeMap<String, DbStats>,
    pub translation_failures: usize,
    pub self_check_failures: usize,
    pub emitted: usize,
    pub warnings: Vec<String>,
}

impl fmt::Display for AugmentStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = self
            .final_level
            .map_or("-".to_string(), |(d, b)| format!("(depth {d}, breadth {b})"));
        writeln!(
            f,
            "sketches {} up to {level}, coverage {:.4} of {} labeled patterns{}",
            self.sketches,
            self.coverage,
            self.labeled_patterns,
            if self.threshold_reached {
                ""
            } else {
                " (threshold not reached)"
            }
        )?;
        writeln!(f, "| Database | Filled | Rejected | Duplicates | Emitted |")?;
        writeln!(f, "|---|---|---|---|---|")?;
        for (db, s) in &self.per_db {
            writeln!(
                f,
                "| {db} | {} | {} | {} | {} |",
                s.filled, s.rejected, s.duplicates, s.emitted
            )?;
        }
        write!(
            f,
            "emitted {}, translation failures {}, self-check failures {}",
            self.emitted, self.translation_failures, self.self_check_failures
        )?;
        for w in &self.warnings {
            write!(f, "\nwarning: {w}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AugmentOutput {
    pub examples: Vec<AugmentedExample>,
    pub stats: AugmentStats,
}

/// Patterns of the labeled examples. Queries are parsed against their
/// schema when it is known; unparsable ones are skipped with a warning.
pub fn labeled_patterns(labeled: &[LabeledExample], schemas: &[&Schema]) -> Vec<Pattern> {
    labeled
        .iter()
        .filter_map(|ex| {
            let schema = schemas.iter().find(|s| s.db_id == ex.db_id).copied();
            match parse_sql(&ex.query, schema) {
                Ok(q) => Some(extract_pattern(&q)),
                Err(e) => {
                    log::warn!("skipping labeled query `{}`: {e}", ex.query);
                    None
                }
            }
        })
        .collect()
}

/// Sketches up to the coverage threshold, filled on every database, filtered
/// to executable queries, deduplicated and translated. Output order depends
/// only on the inputs and the config, never on the worker count.
pub fn augment(
    contents: &[DatabaseContent],
    grammar: &Grammar,
    corpus: &[Pattern],
    translator: &dyn Translator,
    cfg: &AugmentConfig,
) -> Result<AugmentOutput, PipelineError> {
    log::info!("resolved config:\n{}", cfg.to_toml());
    let mut stats = AugmentStats {
        labeled_patterns: corpus.iter().collect::<HashSet<_>>().len(),
        ..Default::default()
    };
    let run = match generate_until_coverage(grammar, corpus, cfg.threshold, &cfg.schedule.schedule()) {
        Ok(run) => {
            stats.threshold_reached = true;
            run
        }
        Err(GrammarError::CapExceededBeforeThreshold(run)) => {
            stats.warnings.push(format!(
                "coverage threshold {} not reached; using {:.4}",
                cfg.threshold, run.coverage
            ));
            *run
        }
        Err(e) => return Err(e.into()),
    };
    stats.sketches = run.sketches.len();
    stats.final_level = Some((run.final_level.depth, run.final_level.breadth));
    stats.coverage = run.coverage;

    let mut dbs: Vec<&DatabaseContent> = contents.iter().collect();
    dbs.sort_by(|a, b| a.db_id().cmp(b.db_id()));
    if dbs.is_empty() {
        stats.warnings.push("no databases given; nothing generated".into());
    }
    let items: Vec<(usize, usize)> = (0..dbs.len())
        .flat_map(|d| (0..run.sketches.len()).map(move |s| (d, s)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let policy = cfg.variant_policy();
    let translator_id = translator.id();

    let filled: Vec<(usize, usize, u64, usize, Vec<_>)> = pool.install(|| {
        items
            .par_iter()
            .map(|&(d, s)| {
                let db = dbs[d];
                let seed = derive_seed(cfg.seed, db.db_id(), s);
                let queries = fill_sketch(&run.sketches[s], db, &cfg.fill_config(seed));
                let n = queries.len();
                let kept = filter_executable(queries, db).kept;
                (d, s, seed, n, kept)
            })
            .collect()
    });

    // deterministic merge
    let mut seen: HashSet<(usize, String)> = HashSet::new();
    let mut work = Vec::new();
    for (d, s, seed, n, kept) in filled {
        let entry = stats.per_db.entry(dbs[d].db_id().to_string()).or_default();
        entry.filled += n;
        entry.rejected += n - kept.len();
        for q in kept {
            let sql = serialize_sql(&q);
            if seen.insert((d, sql.clone())) {
                work.push((d, s, seed, q, sql));
            } else {
                entry.duplicates += 1;
            }
        }
    }
    for db in &dbs {
        stats.per_db.entry(db.db_id().to_string()).or_default();
    }

    let translated: Vec<Option<AugmentedExample>> = pool.install(|| {
        work.par_iter()
            .map(|(d, s, seed, q, sql)| {
                let schema = &*dbs[*d].schema;
                match generate_question(q, translator, &Naming::new(schema), policy) {
                    Ok(g) => Some(AugmentedExample {
                        question: g.question,
                        sql: sql.clone(),
                        db_id: schema.db_id.clone(),
                        pattern: extract_pattern(q).to_string(),
                        provenance: Provenance {
                            sketch_id: *s,
                            fill_seed: *seed,
                            translator_id: translator_id.clone(),
                        },
                    }),
                    Err(e) => {
                        log::warn!("no question for `{sql}`: {e}");
                        None
                    }
                }
            })
            .collect()
    });

    let mut examples = Vec::with_capacity(translated.len());
    for (ex, (d, ..)) in translated.into_iter().zip(&work) {
        let Some(ex) = ex else {
            stats.translation_failures += 1;
            continue;
        };
        if let Err(reason) = self_check(&ex, &dbs[*d].schema) {
            log::error!("self-check failed for `{}`: {reason}", ex.sql);
            stats.self_check_failures += 1;
            continue;
        }
        stats.per_db.get_mut(&ex.db_id).unwrap().emitted += 1;
        examples.push(ex);
    }
    stats.emitted = examples.len();
    Ok(AugmentOutput { examples, stats })
}

/// The stored SQL parses against its schema and has the stored pattern.
pub fn self_check(ex: &AugmentedExample, schema: &Schema) -> Result<(), String> {
    let q = parse_sql(&ex.sql, Some(schema)).map_err(|e| e.to_string())?;
    let p = extract_pattern(&q).to_string();
    if p != ex.pattern {
        return Err(format!("pattern `{p}` differs from stored `{}`", ex.pattern));
    }
    if ex.question.trim().is_empty() {
        return Err("empty question".into());
    }
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), PipelineError> {
    let path = path.as_ref();
    let io_err = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    write_jsonl_to(&mut w, items).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn write_jsonl_to<T: Serialize>(w: &mut impl Write, items: &[T]) -> io::Result<()> {
    for it in items {
        serde_json::to_writer(&mut *w, it)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_augmented(path: impl AsRef<Path>) -> Result<Vec<AugmentedExample>, PipelineError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display()))))
        .collect()
}

// Statistics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Construct {
    Select,
    Where,
    Group,
    Having,
    Order,
    Calculation,
    Nested,
    MultiSql,
}

impl Construct {
    pub const ALL: [Construct; 8] = [
        Construct::Select,
        Construct::Where,
        Construct::Group,
        Construct::Having,
        Construct::Order,
        Construct::Calculation,
        Construct::Nested,
        Construct::MultiSql,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Construct::Select => "Select",
            Construct::Where => "Where",
            Construct::Group => "Group",
            Construct::Having => "Having",
            Construct::Order => "Order",
            Construct::Calculation => "Calculation",
            Construct::Nested => "Nested",
            Construct::MultiSql => "Multi-SQL",
        }
    }

    fn present(self, p: &Pattern) -> bool {
        use PatternToken as T;
        match self {
            Construct::Select => p.contains(T::Select),
            Construct::Where => p.contains(T::Where),
            Construct::Group => p.contains(T::GroupBy),
            Construct::Having => p.contains(T::Having),
            Construct::Order => p.contains(T::OrderBy),
            Construct::Calculation => p.contains(T::Calc),
            Construct::Nested => p.contains(T::NestedOpen),
            Construct::MultiSql => p.contains(T::Intersect) || p.contains(T::Union) || p.contains(T::Except),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub size: usize,
    pub distinct_patterns: usize,
    pub constructs: BTreeSet<Construct>,
}

fn summarize(patterns: &[Pattern]) -> (DatasetSummary, HashSet<&Pattern>) {
    let distinct: HashSet<&Pattern> = patterns.iter().collect();
    let constructs = Construct::ALL
        .into_iter()
        .filter(|c| distinct.iter().any(|p| c.present(p)))
        .collect();
    (
        DatasetSummary {
            size: patterns.len(),
            distinct_patterns: distinct.len(),
            constructs,
        },
        distinct,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub labeled: DatasetSummary,
    pub generated: DatasetSummary,
    pub shared_patterns: usize,
    /// Share of distinct labeled patterns that also occur in the generated set.
    pub coverage: f64,
}

pub fn stats(labeled: &[Pattern], generated: &[Pattern]) -> StatsReport {
    let (l, ld) = summarize(labeled);
    let (g, gd) = summarize(generated);
    let shared = ld.intersection(&gd).count();
    StatsReport {
        coverage: if ld.is_empty() {
            0.0
        } else {
            shared as f64 / ld.len() as f64
        },
        labeled: l,
        generated: g,
        shared_patterns: shared,
    }
}

impl StatsReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("| Data | Size | Patterns | Coverage |");
        for c in Construct::ALL {
            let _ = write!(s, " {} |", c.label());
        }
        s.push_str("\n|---|---|---|---|");
        s.push_str(&"---|".repeat(Construct::ALL.len()));
        for (name, d, cov) in [
            ("Labeled", &self.labeled, "-".to_string()),
            ("Generated", &self.generated, format!("{:.3}", self.coverage)),
        ] {
            let _ = write!(s, "\n| {name} | {} | {} | {cov} |", d.size, d.distinct_patterns);
            for c in Construct::ALL {
                s.push_str(if d.constructs.contains(&c) { " ✓ |" } else { " ✗ |" });
            }
        }
        let _ = write!(s, "\n\nshared patterns: {}", self.shared_patterns);
        s
    }
}

// Epoch plans

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "name")]
pub enum Strategy {
    /// Generated data only for the first `pretrain_epochs`, then labeled only.
    Pretrain {
        pretrain_epochs: usize,
    },
    Merge,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("cannot sample from an empty generated pool")]
    EmptyPool,
}

/// `merge`, `sample` or `pretrain`; `pretrain:<n>` overrides `pretrain_epochs`.
pub fn parse_strategy(name: &str, pretrain_epochs: usize) -> Result<Strategy, PlanError> {
    match name {
        "merge" => Ok(Strategy::Merge),
        "sample" => Ok(Strategy::Sample),
        "pretrain" => Ok(Strategy::Pretrain { pretrain_epochs }),
        _ => match name.strip_prefix("pretrain:").map(str::parse) {
            Some(Ok(n)) => Ok(Strategy::Pretrain { pretrain_epochs: n }),
            _ => Err(PlanError::InvalidStrategy(name.to_string())),
        },
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Pretrain { .. } => f.write_str("pretrain"),
            Strategy::Merge => f.write_str("merge"),
            Strategy::Sample => f.write_str("sample"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpochPlan {
    pub strategy: String,
    /// 1-based.
    pub epoch: usize,
    pub labeled: Vec<usize>,
    pub generated: Vec<usize>,
    pub seed: u64,
}

/// Which labeled and generated ids each epoch trains on.
pub fn plan_epochs(
    strategy: Strategy,
    labeled: usize,
    generated: usize,
    epochs: usize,
    seed: u64,
) -> Result<Vec<EpochPlan>, PlanError> {
    if let Strategy::Pretrain { pretrain_epochs } = strategy {
        if pretrain_epochs > epochs {
            return Err(PlanError::InvalidStrategy(format!(
                "{pretrain_epochs} pre-training epochs exceed the {epochs} total"
            )));
        }
    }
    if strategy == Strategy::Sample && generated == 0 && labeled > 0 {
        return Err(PlanError::EmptyPool);
    }
    if strategy == Strategy::Sample && generated < labeled {
        log::warn!(
            "generated pool ({generated}) is smaller than the labeled set ({labeled}); sampling with replacement"
        );
    }
    let all_l: Vec<usize> = (0..labeled).collect();
    let all_g: Vec<usize> = (0..generated).collect();
    Ok((1..=epochs)
        .map(|epoch| {
            let epoch_seed = derive_seed(seed, "epoch", epoch);
            let (l, g) = match strategy {
                Strategy::Merge => (all_l.clone(), all_g.clone()),
                Strategy::Pretrain { pretrain_epochs } if epoch <= pretrain_epochs => (vec![], all_g.clone()),
                Strategy::Pretrain { .. } => (all_l.clone(), vec![]),
                Strategy::Sample => {
                    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
                    let mut picked = if generated >= labeled {
                        index::sample(&mut rng, generated, labeled).into_vec()
                    } else {
                        (0..labeled).map(|_| rng.gen_range(0..generated)).collect()
                    };
                    picked.sort_unstable();
                    (all_l.clone(), picked)
                }
            };
            EpochPlan {
                strategy: strategy.to_string(),
                epoch,
                labeled: l,
                generated: g,
                seed: epoch_seed,
            }
        })
        .collect())
}
