mod common;

use std::io::Write;
use std::sync::OnceLock;

use proptest::prelude::*;
use sqlaug::align::{query_elements, DbElement};
use sqlaug::generator::{fill_pattern, FillConfig};
use sqlaug::grammar::{default_grammar, enumerate_sketches, ComplexityLevel};
use sqlaug::hier::*;
use sqlaug::schema::DatabaseContent;
use sqlaug::sql::{parse_sql, sql_tokens, Part, Pattern, Query};

fn kinds(sql: &str) -> Vec<ClauseKind> {
    decompose(&parse_sql(sql, None).unwrap())
        .iter()
        .map(|c| c.kind)
        .collect()
}

#[test]
fn decomposition_fixture() {
    for (sql, expected) in common::DECOMPOSITION_CASES {
        assert_eq!(kinds(sql), expected, "{sql}");
    }
}

#[test]
fn bundled_clauses_hold_both_keywords() {
    let q = parse_sql(common::DECOMPOSITION_CASES[2].0, None).unwrap();
    let c = decompose(&q);
    let has = |i: usize, kw: &str| c[i].tokens.iter().any(|t| t.text == kw);
    assert!(has(1, "GROUP_BY") && has(1, "HAVING"));
    assert!(has(2, "ORDER_BY") && has(2, "LIMIT"));
    assert!(!has(0, "GROUP_BY"));
}

#[test]
fn order_by_aggregate_takes_bare_group() {
    assert_eq!(
        kinds("SELECT country FROM singer GROUP BY country ORDER BY count(*) DESC LIMIT 1"),
        [ClauseKind::Select, ClauseKind::OrderByGroupBy]
    );
    // aggregates on both sides: the group stays with SELECT
    assert_eq!(
        kinds("SELECT country, count(*) FROM singer GROUP BY country ORDER BY count(*) DESC"),
        [ClauseKind::SelectGroupBy, ClauseKind::OrderBy]
    );
}

#[test]
fn footnote_orders() {
    let q = parse_sql(
        "SELECT c, count(*) FROM t WHERE b = 1 GROUP BY c HAVING count(*) > 3 ORDER BY count(*) DESC LIMIT 5",
        None,
    )
    .unwrap();
    let got: Vec<ClauseKind> = execution_order(decompose(&q)).iter().map(|c| c.kind).collect();
    assert_eq!(
        got,
        [
            ClauseKind::Where,
            ClauseKind::GroupByHaving,
            ClauseKind::Select,
            ClauseKind::OrderByLimit
        ]
    );
    let q = parse_sql("SELECT a FROM t", None).unwrap();
    assert_eq!(execution_order(decompose(&q)).len(), 1);
}

#[test]
fn second_case_study() {
    let schemas = common::schema_map();
    let s = &schemas["car_1"];
    let q = parse_sql(
        "SELECT horsepower FROM cars_data WHERE edispl <= 10 ORDER BY year DESC",
        Some(s),
    )
    .unwrap();
    let g = generate_question(
        &q,
        &TemplateTranslator::english(),
        &Naming::new(s),
        VariantPolicy::Fixed(0),
    )
    .unwrap();
    assert_eq!(g.clauses.len(), 3);
    for name in ["horsepower", "edispl", "year", "10"] {
        assert!(g.question.contains(name), "{}", g.question);
    }
    assert!(
        g.question.starts_with("With edispl no higher than 10, "),
        "{}",
        g.question
    );
}

#[test]
fn star_query_is_one_clause() {
    let q = parse_sql("SELECT * FROM t", None).unwrap();
    let g = generate_question(
        &q,
        &TemplateTranslator::english(),
        &Naming::default(),
        VariantPolicy::Fixed(0),
    )
    .unwrap();
    assert_eq!(g.clauses.len(), 1);
    assert_eq!(g.question, "Find the details of the t.");
}

#[test]
fn nested_question_contains_inner_fragment() {
    let schemas = common::schema_map();
    let s = &schemas["wine_1"];
    let q = parse_sql(
        "SELECT name FROM wine WHERE price > (SELECT max(price) FROM wine)",
        Some(s),
    )
    .unwrap();
    let g = generate_question(
        &q,
        &TemplateTranslator::english(),
        &Naming::new(s),
        VariantPolicy::Fixed(0),
    )
    .unwrap();
    let sub = g
        .subquestions
        .iter()
        .find(|s| s.kind == ClauseKind::WhereNestedSelect)
        .unwrap();
    assert_eq!(sub.embedded.len(), 1);
    assert!(sub.text.contains(&sub.embedded[0]));
    assert!(g.question.contains(&sub.embedded[0]));
    common::check_composition_order(&g).unwrap();
}

#[test]
fn intersect_keeps_one_select() {
    let q = parse_sql(common::DECOMPOSITION_CASES[5].0, None).unwrap();
    let g = generate_question(
        &q,
        &TemplateTranslator::english(),
        &Naming::default(),
        VariantPolicy::Fixed(0),
    )
    .unwrap();
    assert_eq!(
        g.question,
        "With age higher than 30 and also with country equal to France, find the name of the singer."
    );
    common::check_composition_order(&g).unwrap();
}

#[test]
fn compose_errors() {
    assert_eq!(compose(&[], &[]), Err(ComposeError::EmptySubquestionList));
}

#[test]
fn question_is_deterministic() {
    let q = parse_sql(common::DECOMPOSITION_CASES[2].0, None).unwrap();
    let t = TemplateTranslator::english();
    let a = generate_question(&q, &t, &Naming::default(), VariantPolicy::Hashed(4)).unwrap();
    let b = generate_question(&q, &t, &Naming::default(), VariantPolicy::Hashed(4)).unwrap();
    assert_eq!(a.question, b.question);
}

#[test]
fn template_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.toml");
    let text = DEFAULT_TEMPLATES.replace(
        "\"find the {items} of the {tables}\"",
        "\"list the {items} of the {tables}\"",
    );
    std::fs::write(&path, text).unwrap();
    let t = TemplateTranslator::new(TemplatePack::load(&path).unwrap());
    let q = parse_sql("SELECT a FROM t", None).unwrap();
    assert_eq!(
        sql_to_question(&q, &t, &Naming::default()).unwrap(),
        "List the a of the t."
    );
}

#[test]
fn subprocess_translator_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("model.sh");
    let mut f = std::fs::File::create(&script).unwrap();
    // echoes the clause kind back, one reply per request line
    writeln!(
        f,
        "while IFS= read -r line; do kind=$(printf '%s' \"$line\" | sed 's/.*\"kind\":\"\\([^\"]*\\)\".*/\\1/'); echo \"{{\\\"text\\\": \\\"part $kind\\\"}}\"; done"
    )
    .unwrap();
    drop(f);
    let t = SubprocessTranslator::spawn(&["sh".into(), script.display().to_string()], 2).unwrap();
    assert!(t.id().starts_with("subprocess:sh"));
    let q = parse_sql("SELECT a FROM t WHERE b = 1", None).unwrap();
    assert_eq!(
        sql_to_question(&q, &t, &Naming::default()).unwrap(),
        "Part WHERE, part SELECT."
    );
}

#[test]
fn subprocess_failure_is_reported() {
    let t = SubprocessTranslator::spawn(&["true".into()], 1).unwrap();
    let q = parse_sql("SELECT a FROM t", None).unwrap();
    assert!(matches!(
        sql_to_question(&q, &t, &Naming::default()),
        Err(HierError::Translate(TranslateError::TranslationFailed(_)))
    ));
    assert!(SubprocessTranslator::spawn(&[], 1).is_err());
}

fn sketches() -> &'static [Pattern] {
    static S: OnceLock<Vec<Pattern>> = OnceLock::new();
    S.get_or_init(|| {
        enumerate_sketches(&default_grammar(), ComplexityLevel::new(4, 4))
            .unwrap()
            .iter()
            .map(|t| t.flatten())
            .collect()
    })
}

fn dbs() -> &'static [DatabaseContent] {
    static D: OnceLock<Vec<DatabaseContent>> = OnceLock::new();
    D.get_or_init(|| {
        let mut v: Vec<_> = common::contents().into_values().collect();
        v.sort_by(|a, b| a.db_id().cmp(b.db_id()));
        v
    })
}

fn random_query(p: usize, d: usize, seed: u64) -> Option<(Query, &'static DatabaseContent)> {
    let db = &dbs()[d % dbs().len()];
    let cfg = FillConfig {
        rng_seed: seed,
        max_fills: 1,
        ..FillConfig::default()
    };
    let pat = &sketches()[p % sketches().len()];
    fill_pattern(pat, db, &cfg).ok()?.pop().map(|q| (q, db))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn clauses_partition_query_tokens(p in 0usize..10_000, d in 0usize..5, seed in any::<u64>()) {
        let Some((q, _)) = random_query(p, d, seed) else { return Ok(()) };
        let toks = sql_tokens(&q);
        let mut covered: Vec<usize> = decompose(&q)
            .iter()
            .flat_map(|c| c.spans.iter().cloned().flatten())
            .collect();
        covered.sort_unstable();
        let expected: Vec<usize> = (0..toks.len()).filter(|&i| toks[i].part != Part::From).collect();
        prop_assert_eq!(covered, expected);
    }

    #[test]
    fn questions_copy_names_and_values(p in 0usize..10_000, d in 0usize..5, seed in any::<u64>()) {
        let Some((q, db)) = random_query(p, d, seed) else { return Ok(()) };
        let names = Naming::new(&db.schema);
        let g = generate_question(&q, &TemplateTranslator::english(), &names, VariantPolicy::Hashed(seed))
            .unwrap();
        let lower = g.question.to_lowercase();
        for (e, text) in query_elements(&q, &names) {
            if matches!(e, DbElement::Table(_)) {
                continue;
            }
            let text = text.trim_matches('%').to_lowercase();
            prop_assert!(lower.contains(&text), "`{}` missing from `{}` ({})", text, g.question, sqlaug::sql::serialize_sql(&q));
        }
        for c in &g.clauses {
            prop_assert!(ClauseKind::ALL.contains(&c.kind));
        }
        common::check_composition_order(&g).map_err(TestCaseError::fail)?;
    }
}

#[test]
fn random_queries_are_mostly_fillable() {
    let ok = (0..200)
        .filter(|&i| random_query(i * 37, i, i as u64).is_some())
        .count();
    assert!(ok > 100, "{ok}");
}
