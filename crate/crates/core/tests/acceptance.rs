//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to
//! see the lines; every criterion also asserts.

mod common;

use std::collections::HashSet;
use std::ops::Range;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use proptest::prelude::{any, Just, Strategy as _, TestCaseError};
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqlaug::align::*;
use sqlaug::eval::execute;
use sqlaug::grammar::{
    default_grammar, enumerate_sketches, generate_until_coverage, ComplexityLevel, CoverageRun, LevelSchedule,
};
use sqlaug::hier::*;
use sqlaug::pipeline::*;
use sqlaug::schema::{ColumnType, DatabaseContent, Schema};
use sqlaug::sql::{extract_pattern, parse_sql, Pattern};

// Timed criteria share one CPU with the rest of the suite, so criteria run one at a time.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, name: &str, ok: bool, detail: String) {
    println!(
        "criterion {n:>2} {name}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} {name} failed: {detail}");
}

fn dbs() -> &'static [DatabaseContent] {
    static D: OnceLock<Vec<DatabaseContent>> = OnceLock::new();
    D.get_or_init(|| {
        let mut v: Vec<_> = common::contents().into_values().collect();
        v.sort_by(|a, b| a.db_id().cmp(b.db_id()));
        v
    })
}

fn labeled_corpus() -> Vec<Pattern> {
    let schemas = common::schemas();
    let refs: Vec<&Schema> = schemas.iter().map(|s| &**s).collect();
    labeled_patterns(&common::train(), &refs)
}

fn run_augment(workers: usize) -> AugmentOutput {
    let cfg = AugmentConfig {
        workers,
        ..AugmentConfig::default()
    };
    augment(
        dbs(),
        &default_grammar(),
        &labeled_corpus(),
        &TemplateTranslator::english(),
        &cfg,
    )
    .unwrap()
}

/// The default single-threaded run over the fixture, with its wall time.
fn baseline() -> &'static (AugmentOutput, Duration) {
    static B: OnceLock<(AugmentOutput, Duration)> = OnceLock::new();
    B.get_or_init(|| {
        let t = Instant::now();
        let out = run_augment(1);
        (out, t.elapsed())
    })
}

fn db(id: &str) -> &'static DatabaseContent {
    dbs().iter().find(|d| d.db_id() == id).unwrap()
}

#[test]
fn c01_coverage_stopping() {
    let _g = serial();
    let g = default_grammar();
    // the default grammar has no sketch at (2, 2) and only two at (3, 2)
    let schedule = LevelSchedule {
        start: ComplexityLevel::new(3, 3),
        ..LevelSchedule::default()
    };
    let levels = schedule.levels();
    // three patterns first produced at each of the first three levels, plus one the grammar never makes
    let mut seen: HashSet<Pattern> = HashSet::new();
    let mut corpus = Vec::new();
    for level in &levels[..3] {
        let fresh: Vec<Pattern> = enumerate_sketches(&g, *level)
            .unwrap()
            .iter()
            .map(|t| t.flatten())
            .filter(|p| !seen.contains(p))
            .collect();
        assert!(fresh.len() >= 3, "level {level} adds only {} patterns", fresh.len());
        seen.extend(fresh.iter().cloned());
        corpus.extend(fresh.into_iter().step_by(2).take(3));
    }
    corpus.push("SELECT A SELECT A".parse().unwrap());
    assert_eq!(corpus.len(), 10);

    let t = Instant::now();
    let run: CoverageRun = generate_until_coverage(&g, &corpus, 0.8, &schedule).unwrap();
    let took = t.elapsed();
    let per_level: Vec<f64> = run.levels.iter().map(|l| l.coverage).collect();
    let ok = per_level == [0.3, 0.6, 0.9]
        && run.coverage == 0.9
        && run.final_level == levels[2]
        && took < Duration::from_secs(1);
    report(
        1,
        "coverage stopping",
        ok,
        format!(
            "levels {per_level:?}, stopped at {} with {}, {took:.2?}",
            run.final_level, run.coverage
        ),
    );
}

#[test]
fn c02_executability() {
    let _g = serial();
    let (out, took) = baseline();
    let mut failed = Vec::new();
    for ex in &out.examples {
        let d = db(&ex.db_id);
        let res = parse_sql(&ex.sql, Some(&d.schema))
            .map_err(|e| e.to_string())
            .and_then(|q| execute(&q, d).map_err(|e| e.to_string()));
        if let Err(e) = res {
            failed.push(format!("{}: {e}", ex.sql));
        }
    }
    let schemas = out.examples.iter().map(|e| &e.db_id).collect::<HashSet<_>>().len();
    let ok = failed.is_empty() && out.examples.len() >= 5000 && schemas >= 5 && *took < Duration::from_secs(60);
    report(
        2,
        "executability",
        ok,
        format!(
            "{} examples over {schemas} schemas in {took:.2?}, {} failed {:?}",
            out.examples.len(),
            failed.len(),
            failed.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn c03_pattern_fidelity() {
    let _g = serial();
    let (out, _) = baseline();
    let run = generate_until_coverage(
        &default_grammar(),
        &labeled_corpus(),
        AugmentConfig::default().threshold,
        &AugmentConfig::default().schedule.schedule(),
    )
    .unwrap();
    let sketch_patterns: Vec<String> = run.sketches.iter().map(|t| t.flatten().to_string()).collect();
    let mut bad = Vec::new();
    for ex in &out.examples {
        let q = parse_sql(&ex.sql, Some(&db(&ex.db_id).schema)).unwrap();
        let got = extract_pattern(&q).to_string();
        if got != sketch_patterns[ex.provenance.sketch_id] || got != ex.pattern {
            bad.push(format!("{} -> {got}", ex.sql));
        }
    }
    report(
        3,
        "pattern fidelity",
        bad.is_empty() && !out.examples.is_empty(),
        format!(
            "{} of {} differ {:?}",
            bad.len(),
            out.examples.len(),
            bad.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn c04_evaluator_oracle() {
    let _g = serial();
    let conns: Vec<_> = dbs().iter().map(common::sqlite_of).collect();
    let qs = common::generated_queries(dbs(), 500, 2024);
    let bad: Vec<String> = qs
        .iter()
        .filter_map(|(q, d)| common::oracle_mismatch(q, &dbs()[*d], &conns[*d]))
        .collect();
    report(
        4,
        "evaluator oracle",
        qs.len() == 500 && bad.is_empty(),
        format!(
            "{} queries, {} mismatches {:?}",
            qs.len(),
            bad.len(),
            bad.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn c05_decomposition() {
    let _g = serial();
    let mut bad = Vec::new();
    for (sql, expected) in common::DECOMPOSITION_CASES {
        let kinds: Vec<ClauseKind> = decompose(&parse_sql(sql, None).unwrap())
            .iter()
            .map(|c| c.kind)
            .collect();
        if kinds != expected {
            bad.push(format!("{sql}: {kinds:?}"));
        }
    }
    report(5, "decomposition", bad.is_empty(), format!("6 cases, wrong: {bad:?}"));
}

#[test]
fn c06_composition_order() {
    let _g = serial();
    let (out, _) = baseline();
    let t = TemplateTranslator::english();
    let policy = AugmentConfig::default().variant_policy();
    let mut bad = Vec::new();
    for ex in &out.examples {
        let d = db(&ex.db_id);
        let q = parse_sql(&ex.sql, Some(&d.schema)).unwrap();
        let g = generate_question(&q, &t, &Naming::new(&d.schema), policy).unwrap();
        let res = if g.question != ex.question {
            Err(format!("regenerated `{}`", g.question))
        } else {
            common::check_composition_order(&g)
        };
        if let Err(e) = res {
            bad.push(format!("{} / {}: {e}", ex.sql, ex.question));
        }
    }
    report(
        6,
        "composition order",
        bad.is_empty() && !out.examples.is_empty(),
        format!(
            "{} examples, {} violations {:?}",
            out.examples.len(),
            bad.len(),
            bad.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

const MINIMALITY_QUERIES: [&str; 5] = [
    "SELECT name FROM head WHERE born_state != 'California'",
    "SELECT name, age FROM head WHERE age > 56 ORDER BY age DESC LIMIT 3",
    "SELECT born_state, count(*) FROM head GROUP BY born_state HAVING count(*) >= 3",
    "SELECT name FROM head WHERE age > 30 INTERSECT SELECT name FROM head WHERE born_state = 'Alabama'",
    "SELECT * FROM head",
];

/// Shortest window, leftmost on ties, holding a link for every linked
/// element of the clause; tables may be left out when a column or value is
/// present and the table has no link at all.
fn oracle_span(elements: &[(DbElement, String)], al: &TokenAlignment, len: usize) -> Option<Range<usize>> {
    let has_required = elements.iter().any(|(e, _)| !matches!(e, DbElement::Table(_)));
    let needed: Vec<Vec<Range<usize>>> = elements
        .iter()
        .map(|(e, _)| al.spans_for(e))
        .zip(elements)
        .filter(|(spans, (e, _))| !(has_required && matches!(e, DbElement::Table(_)) && spans.is_empty()))
        .map(|(s, _)| s)
        .collect();
    if needed.is_empty() {
        return None;
    }
    let mut best: Option<Range<usize>> = None;
    for w in 1..=len {
        for i in 0..=len - w {
            let inside = needed.iter().all(|g| g.iter().any(|s| s.start >= i && s.end <= i + w));
            if inside && best.is_none() {
                best = Some(i..i + w);
            }
        }
        if best.is_some() {
            break;
        }
    }
    best
}

#[test]
fn c07_alignment_minimality() {
    let _g = serial();
    let schema = Schema::new("department_management").with_table(
        "head",
        &[
            ("head_id", ColumnType::Number),
            ("name", ColumnType::Text),
            ("born_state", ColumnType::Text),
            ("age", ColumnType::Number),
        ],
        true,
    );
    let names = Naming::new(&schema);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = Vec::new();
    let mut pairs_checked = 0;
    for inst in 0..200 {
        let q = parse_sql(MINIMALITY_QUERIES[inst % MINIMALITY_QUERIES.len()], Some(&schema)).unwrap();
        let len = rng.gen_range(8..=24);
        let question: String = (0..len).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let tokens = tokenize_question(&question);
        let mut links = Vec::new();
        for (e, _) in query_elements(&q, &names) {
            for _ in 0..rng.gen_range(0..=3) {
                let start = rng.gen_range(0..len);
                let end = (start + rng.gen_range(1..=2)).min(len);
                links.push(Link {
                    span: start..end,
                    element: e.clone(),
                });
            }
        }
        let al = TokenAlignment { links };
        let ex = extract_pairs(inst, &question, &tokens, &q, &al, &names);
        let mut expected = Vec::new();
        for (i, c) in decompose(&q).iter().enumerate() {
            if c.kind == ClauseKind::SetOp {
                continue;
            }
            if let Some(span) = oracle_span(&clause_elements(c, &names), &al, len) {
                let text = (span.start..span.end)
                    .map(|k| format!("w{k}"))
                    .collect::<Vec<_>>()
                    .join(" ");
                expected.push((i, span, text));
            }
        }
        let got: Vec<(usize, Range<usize>, String)> = ex
            .pairs
            .iter()
            .map(|p| (p.clause_index, p.span.clone(), p.subquestion.clone()))
            .collect();
        pairs_checked += got.len();
        if got != expected {
            bad.push(format!("instance {inst}: got {got:?}, oracle {expected:?}"));
        }
    }
    report(
        7,
        "alignment minimality",
        bad.is_empty() && pairs_checked > 0,
        format!(
            "200 instances, {pairs_checked} pairs, {} differ {:?}",
            bad.len(),
            bad.iter().take(2).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn c08_alignment_rate() {
    let _g = serial();
    let examples = common::train();
    let (_, _, r) = mine_corpus(&examples, &common::schema_map());
    report(
        8,
        "alignment rate",
        examples.len() >= 30 && r.alignment_rate >= 0.70,
        format!("{} pairs, rate {:.3}", examples.len(), r.alignment_rate),
    );
}

fn check_plans(l: usize, g: usize, epochs: usize, pre: usize, seed: u64) -> Result<(), String> {
    let sample = plan_epochs(Strategy::Sample, l, g, epochs, seed).map_err(|e| e.to_string())?;
    for p in &sample {
        if p.generated.len() != l || p.labeled != (0..l).collect::<Vec<_>>() || p.generated.iter().any(|&i| i >= g) {
            return Err(format!("sample epoch {} has {} generated", p.epoch, p.generated.len()));
        }
        if g >= l && p.generated.iter().collect::<HashSet<_>>().len() != l {
            return Err(format!("sample epoch {} repeats items", p.epoch));
        }
    }
    for p in plan_epochs(Strategy::Merge, l, g, epochs, seed).map_err(|e| e.to_string())? {
        if p.generated != (0..g).collect::<Vec<_>>() || p.labeled != (0..l).collect::<Vec<_>>() {
            return Err(format!("merge epoch {} misses items", p.epoch));
        }
    }
    let plans =
        plan_epochs(Strategy::Pretrain { pretrain_epochs: pre }, l, g, epochs, seed).map_err(|e| e.to_string())?;
    for p in &plans {
        let pure = if p.epoch <= pre {
            p.labeled.is_empty() && p.generated == (0..g).collect::<Vec<_>>()
        } else {
            p.generated.is_empty() && p.labeled == (0..l).collect::<Vec<_>>()
        };
        if !pure {
            return Err(format!("pretrain epoch {} mixes phases", p.epoch));
        }
    }
    if sample.len() != epochs || plans.iter().map(|p| p.epoch).ne(1..=epochs) {
        return Err("wrong epoch count".into());
    }
    Ok(())
}

#[test]
fn c09_strategy_plans() {
    let _g = serial();
    let mut runner = TestRunner::new(Config {
        failure_persistence: None,
        ..Config::with_cases(256)
    });
    let strategy = (1usize..300, 1usize..3000, 1usize..6, any::<u64>())
        .prop_flat_map(|(l, g, e, s)| (Just(l), Just(g), Just(e), 0..e, Just(s)));
    let res = runner.run(&strategy, |(l, g, e, pre, s)| {
        check_plans(l, g, e, pre, s).map_err(TestCaseError::fail)
    });
    let fixture = check_plans(common::train().len(), baseline().0.examples.len(), 5, 2, 0);
    report(
        9,
        "strategy plans",
        res.is_ok() && fixture.is_ok(),
        format!("random sizes: {res:?}, fixture sizes: {fixture:?}"),
    );
}

#[test]
fn c10_determinism() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let files = [
        ("first", &baseline().0),
        ("second", &run_augment(1)),
        ("four-workers", &run_augment(4)),
    ]
    .map(|(name, out)| {
        let path = dir.path().join(format!("{name}.jsonl"));
        write_jsonl(&path, &out.examples).unwrap();
        std::fs::read(path).unwrap()
    });
    let ok = !files[0].is_empty() && files[0] == files[1] && files[0] == files[2];
    report(
        10,
        "determinism",
        ok,
        format!("sizes {:?} bytes", files.iter().map(Vec::len).collect::<Vec<_>>()),
    );
}

#[test]
fn c11_generated_to_labeled_ratio() {
    let _g = serial();
    let labeled = common::train().len();
    let generated = baseline().0.examples.len();
    let ratio = generated as f64 / labeled as f64;
    report(
        11,
        "generated to labeled ratio",
        ratio >= 3.0,
        format!("{generated} generated vs {labeled} labeled, {ratio:.1}x"),
    );
}
