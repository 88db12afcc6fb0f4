//! Acceptance suite. Runs without the libtest harness so that every criterion
//! prints exactly one PASS or FAIL line; exits non-zero if any fails.

use flowagent_core::agent_graph::{AgentId, GraphConfig, Outcome};
use flowagent_core::bench::{run_suite, BenchReport, BenchSetup, Suite};
use flowagent_core::bundled;
use flowagent_core::decision::{yes_probability, DecisionConfig};
use flowagent_core::demo_store::{retrieve_top_k, DemoInstance, DemoStore, Embedder, HashingEmbedder};
use flowagent_core::divergent::{DivergentConfig, PlanSteps};
use flowagent_core::flow_script::{parse_script, render_script, Call, ScriptAst, Statement, ValueExpr};
use flowagent_core::llm_provider::{
    canonical_solution, inject_error, InjectedError, LanguageModel, MockProvider, MockProviderConfig, ProviderRegistry,
};
use flowagent_core::pipeline::Mode;
use flowagent_core::prompt_factory::{judgment_parts, PromptTemplate};
use flowagent_core::simulator::{execute, ExecErrorKind, PlatformSpec};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

const PLATFORMS: [&str; 2] = ["openroad_like", "ieda_like"];

type Criterion = (&'static str, fn() -> String);

fn main() {
    let criteria: [Criterion; 8] = [
        ("retrieval matches exhaustive cosine scan", retrieval_oracle),
        ("decision math", decision_math),
        ("multi-agent lift", multi_agent_lift),
        ("wrong-stage parameter is UnknownParameter", wrong_stage_parameter),
        ("stage order enforcement", stage_order),
        ("parser round trip", parser_round_trip),
        ("bench structure fidelity", bench_structure),
        ("batch and serial scoring agree", batch_serial),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name} ({secs:.2}s) {detail}"),
            Err(e) => {
                failed += 1;
                let why = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL  {name} ({secs:.2}s) {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn within(limit: Duration, start: Instant, what: &str) {
    let took = start.elapsed();
    assert!(took < limit, "{what} took {took:?}, limit {limit:?}");
}

fn retrieval_oracle() -> String {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let words = [
        "run", "flow", "floorplan", "placement", "density", "sweep", "route", "clock", "tree", "utilization",
        "evaluate", "timing", "margin", "halo", "congestion", "layers", "design", "core", "aspect", "ratio",
    ];
    let sentence = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(1..8);
        (0..n).map(|_| *words.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
    };
    let mut store = DemoStore::new();
    let mut texts: Vec<String> = Vec::new();
    for i in 0..1000 {
        // Reuse earlier texts now and then so equal scores occur.
        let task = if i > 0 && rng.gen_bool(0.1) {
            texts[rng.gen_range(0..texts.len())].clone()
        } else {
            sentence(&mut rng)
        };
        texts.push(task.clone());
        store
            .insert(DemoInstance {
                id: format!("d{:04}", rng.gen_range(0..1_000_000) * 1000 + i),
                task,
                plan: vec!["a".into()],
                script: "x.m()".into(),
                platform: "openroad_like".into(),
            })
            .unwrap();
    }
    let embedder = HashingEmbedder::default();
    let index = store.build_index(&embedder, None).unwrap();
    let vectors: Vec<(String, Vec<f64>)> = store
        .demos()
        .iter()
        .map(|d| (d.id.clone(), embedder.embed(&d.task).unwrap().values().to_vec()))
        .collect();
    let mut queries = 0;
    for _ in 0..20 {
        let q = embedder.embed(&sentence(&mut rng)).unwrap();
        // Independent scan: dot products of unit vectors, sorted by hand.
        let mut scan: Vec<(String, f64)> = vectors
            .iter()
            .map(|(id, v)| (id.clone(), v.iter().zip(q.values()).map(|(a, b)| a * b).sum::<f64>()))
            .collect();
        scan.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        for k in [1, 5, 50] {
            let got = retrieve_top_k(&index, &q, k).unwrap();
            assert_eq!(got.len(), k);
            for (g, w) in got.iter().zip(&scan) {
                assert_eq!(g.0, w.0, "ranking differs at k={k}");
                assert!((g.1 - w.1).abs() < 1e-12);
            }
            queries += 1;
        }
    }
    within(Duration::from_secs(5), start, "retrieval");
    format!("{queries} queries over {} demos", store.len())
}

fn decision_math() -> String {
    assert_eq!(yes_probability(0.0, 0.0).unwrap(), 0.5);
    let logistic = 1.0 / (1.0 + (-1.0f64).exp());
    let p = yes_probability(0.0, -1.0).unwrap();
    assert!((p - 0.7310585786).abs() < 1e-9 && (p - logistic).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let y = rng.gen_range(-50.0..50.0);
        let n = rng.gen_range(-50.0..50.0);
        let c = rng.gen_range(-1000.0..1000.0);
        assert!((yes_probability(y, n).unwrap() - yes_probability(y + c, n + c).unwrap()).abs() < 1e-12);
    }
    for (y, n) in [(1000.0, -1000.0), (-1000.0, 1000.0), (1000.0, 1000.0), (-1000.0, -1000.0)] {
        let p = yes_probability(y, n).unwrap();
        assert!(p.is_finite() && (0.0..=1.0).contains(&p));
    }
    assert_eq!(yes_probability(1000.0, 1000.0).unwrap(), 0.5);
    "softmax values, shift invariance and extremes".into()
}

struct Bench {
    store: DemoStore,
    template: PromptTemplate,
    platforms: Vec<PlatformSpec>,
    embedder: HashingEmbedder,
    suites: Vec<Suite>,
}

impl Bench {
    fn new() -> Self {
        Self {
            store: bundled::demo_store(),
            template: PromptTemplate::default(),
            platforms: bundled::platforms(),
            embedder: HashingEmbedder::default(),
            suites: PLATFORMS.iter().map(|id| bundled::suite(id).unwrap()).collect(),
        }
    }

    fn run(&self, suite: &Suite, mode: Mode, seed: u64, error_rate: f64) -> BenchReport {
        let provider = MockProvider::new(MockProviderConfig::new(seed, error_rate)).unwrap();
        let providers = ProviderRegistry::single("mock", Arc::new(provider));
        let setup = BenchSetup {
            graph: GraphConfig::standard(3, "mock"),
            divergent: DivergentConfig {
                seed,
                ..DivergentConfig::default()
            },
            decision: DecisionConfig::default(),
            store: &self.store,
            embedder: &self.embedder,
            template: &self.template,
            platforms: &self.platforms,
            providers: &providers,
            metric_seed: seed,
        };
        run_suite(suite, mode, &setup)
    }
}

fn multi_agent_lift() -> String {
    let start = Instant::now();
    let bench = Bench::new();
    let p: f64 = 0.4;
    let seeds = 20;
    let (mut single_pass, mut multi_pass, mut trials) = (0, 0, 0);
    for seed in 0..seeds {
        let (mut s_seed, mut m_seed) = (0, 0);
        for suite in &bench.suites {
            let s = bench.run(suite, Mode::SingleAgent, seed, p);
            let m = bench.run(suite, Mode::MultiAgent, seed, p);
            s_seed += s.passed;
            m_seed += m.passed;
            trials += s.total;
        }
        // The dominance sweep covers the first ten seeds.
        if seed < 10 {
            assert!(m_seed >= s_seed, "seed {seed}: multi {m_seed} < single {s_seed}");
        }
        single_pass += s_seed;
        multi_pass += m_seed;
    }
    let single = single_pass as f64 / trials as f64;
    let multi = multi_pass as f64 / trials as f64;
    let expect_multi = 1.0 - p.powi(3);
    let expect_single = 1.0 - p;
    let summary = format!("{trials} trials: multi {multi:.4} (want {expect_multi:.3}), single {single:.4} (want {expect_single:.3})");
    assert!((multi - expect_multi).abs() <= 0.02, "{summary}");
    assert!((single - expect_single).abs() <= 0.03, "{summary}");
    within(Duration::from_secs(60), start, "lift experiment");
    summary
}

fn wrong_stage_parameter() -> String {
    let spec = bundled::openroad_like();
    let head = "chateda.run_synthesis()\nchateda.floorplan()\nchateda.placement()\nchateda.clock_tree_synthesis()\n";
    let bad = execute(&parse_script(&format!("{head}chateda.global_route(macro_place_channel=20)")).unwrap(), &spec, 0);
    assert!(!bad.success);
    let err = bad.error.unwrap();
    assert_eq!(err.kind, ExecErrorKind::UnknownParameter);
    assert_eq!(err.method.as_deref(), Some("global_route"));
    assert_eq!(err.param.as_deref(), Some("macro_place_channel"));
    assert_eq!(err.statement_index, 4);

    let good = execute(
        &parse_script("chateda.run_synthesis()\nchateda.floorplan(macro_place_channel=20)").unwrap(),
        &spec,
        0,
    );
    assert!(good.success, "{:?}", good.error);
    assert_eq!(good.trace[1].method, "floorplan");
    "global_route rejects it, floorplan accepts it".into()
}

/// Independent prerequisite check: index of the first call whose stage
/// prerequisites have not all completed.
fn first_violation(spec: &PlatformSpec, stages: &[&str]) -> Option<usize> {
    let mut done: HashSet<&str> = HashSet::new();
    for (i, stage) in stages.iter().enumerate() {
        let s = spec.stages.iter().find(|s| s.name == *stage).unwrap();
        if !s.requires.iter().all(|r| done.contains(r.as_str())) {
            return Some(i);
        }
        done.insert(stage);
    }
    None
}

fn stage_script(spec: &PlatformSpec, stages: &[&str]) -> ScriptAst {
    ScriptAst::new(
        stages
            .iter()
            .map(|st| {
                let m = spec.methods.iter().find(|m| m.stage == *st).unwrap();
                Statement::Call(Call::new(spec.receiver.clone(), m.name.clone()))
            })
            .collect(),
    )
}

fn stage_order() -> String {
    let spec = bundled::openroad_like();
    let r = execute(&parse_script("chateda.run_synthesis()\nchateda.placement()\nchateda.floorplan()").unwrap(), &spec, 0);
    let err = r.error.expect("violation");
    assert_eq!(err.kind, ExecErrorKind::StageOrderViolation);
    assert_eq!(err.statement_index, 1);

    let order: Vec<&str> = spec.stages.iter().map(|s| s.name.as_str()).collect();
    let full = execute(&stage_script(&spec, &order), &spec, 0);
    assert!(full.success, "{:?}", full.error);

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (mut valid, mut invalid) = (0, 0);
    while valid < 100 || invalid < 100 {
        // Valid orderings: extend the completed set one admissible stage at a time.
        let len = rng.gen_range(1..12);
        let stages: Vec<&str> = if rng.gen_bool(0.5) {
            let mut out: Vec<&str> = Vec::new();
            for _ in 0..len {
                let ok: Vec<&str> = order
                    .iter()
                    .copied()
                    .filter(|s| {
                        let mut t = out.clone();
                        t.push(s);
                        first_violation(&spec, &t).is_none()
                    })
                    .collect();
                out.push(ok.choose(&mut rng).unwrap());
            }
            out
        } else {
            (0..len).map(|_| *order.choose(&mut rng).unwrap()).collect()
        };
        let report = execute(&stage_script(&spec, &stages), &spec, 0);
        match first_violation(&spec, &stages) {
            None if valid < 100 => {
                assert!(report.success, "{stages:?}: {:?}", report.error);
                valid += 1;
            }
            Some(at) if invalid < 100 => {
                let err = report.error.unwrap_or_else(|| panic!("{stages:?} should fail"));
                assert_eq!(err.kind, ExecErrorKind::StageOrderViolation);
                assert_eq!(err.statement_index, at, "{stages:?}");
                invalid += 1;
            }
            _ => {}
        }
    }
    format!("{valid} valid and {invalid} violating orderings")
}

fn arb_ident() -> impl Strategy<Value = String> {
    "[a-z_][a-z0-9_]{0,6}".prop_filter("keyword", |s| !["for", "in"].contains(&s.as_str()))
}

fn arb_value() -> impl Strategy<Value = ValueExpr> {
    let leaf = prop_oneof![
        any::<f64>().prop_filter("finite", |n| n.is_finite()).prop_map(ValueExpr::Number),
        (-1000i32..1000).prop_map(|n| ValueExpr::Number(n as f64 / 10.0)),
        "[ -~\\n\\t]{0,8}".prop_map(ValueExpr::Str),
        any::<bool>().prop_map(ValueExpr::Bool),
        arb_ident().prop_map(ValueExpr::VarRef),
    ];
    leaf.prop_recursive(3, 12, 4, |inner| prop::collection::vec(inner, 0..4).prop_map(ValueExpr::ListOf))
}

fn arb_simple() -> impl Strategy<Value = Statement> {
    let call = (arb_ident(), arb_ident(), prop::collection::btree_map(arb_ident(), arb_value(), 0..4)).prop_map(
        |(receiver, method, kwargs)| {
            Statement::Call(Call {
                receiver,
                method,
                kwargs: kwargs.into_iter().collect(),
            })
        },
    );
    prop_oneof![
        3 => call,
        1 => (arb_ident(), arb_value()).prop_map(|(name, value)| Statement::Assign { name, value }),
    ]
}

fn arb_loop(body: impl Strategy<Value = Statement>) -> impl Strategy<Value = Statement> {
    (arb_ident(), prop::collection::vec(arb_value(), 0..4), prop::collection::vec(body, 1..4))
        .prop_map(|(var, values, body)| Statement::ForLoop { var, values, body })
}

fn arb_ast() -> impl Strategy<Value = ScriptAst> {
    let outer_body = prop_oneof![3 => arb_simple(), 1 => arb_loop(arb_simple())];
    let stmt = prop_oneof![4 => arb_simple(), 1 => arb_loop(arb_simple()), 1 => arb_loop(outer_body)];
    prop::collection::vec(stmt, 0..6).prop_map(ScriptAst::new)
}

fn parser_round_trip() -> String {
    let cases = 10_000;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&arb_ast(), |ast| {
            let back = parse_script(&render_script(&ast)).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(back, ast);
            Ok(())
        })
        .unwrap_or_else(|e| panic!("{e}"));
    format!("{cases} cases, 0 failures")
}

fn bench_structure() -> String {
    let bench = Bench::new();
    for suite in &bench.suites {
        assert_eq!(suite.tasks.len(), 50);
        // 30% / 30% / 40%.
        assert_eq!(suite.category_counts(), [15, 15, 20]);
        for mode in [Mode::SingleAgent, Mode::MultiAgent] {
            let r = bench.run(suite, mode, 0, 0.0);
            assert_eq!(r.accuracy, 1.0, "{} {mode:?}", suite.tasks[0].platform);
        }
    }
    "15/15/20 split, accuracy 1.0 on both suites in both modes".into()
}

fn batch_serial() -> String {
    let template = PromptTemplate::default();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let suites: Vec<Suite> = PLATFORMS.iter().map(|id| bundled::suite(id).unwrap()).collect();
    let yes_no = ["yes".to_string(), "no".to_string()];
    let mut blocks_seen = 0;
    for _ in 0..100 {
        let suite = &suites[rng.gen_range(0..2)];
        let bt = &suite.tasks[rng.gen_range(0..suite.tasks.len())];
        let spec = bundled::platform(&bt.platform).unwrap();
        let task = bt.task();
        let solution = canonical_solution(&spec, &task.text);
        let n = rng.gen_range(1..=5);
        let outcomes: Vec<Outcome> = (0..n)
            .map(|i| {
                let ast = if rng.gen_bool(0.5) {
                    let kind = *InjectedError::ALL.choose(&mut rng).unwrap();
                    inject_error(&spec, &solution.ast, kind, &mut rng).unwrap_or_else(|| solution.ast.clone())
                } else {
                    solution.ast.clone()
                };
                let plan = PlanSteps::new(solution.plan.clone()).unwrap();
                Outcome::new(AgentId::new(format!("divergent-{i}")), None, plan, &render_script(&ast)).unwrap()
            })
            .collect();
        let parts: Vec<_> = outcomes.iter().map(|o| judgment_parts(&template, &task, o)).collect();
        let prefix = parts[0].shared_prefix.clone();
        let blocks: Vec<String> = parts.into_iter().map(|p| p.candidate_block).collect();
        let mock = MockProvider::new(MockProviderConfig::new(rng.gen(), 0.0)).unwrap();
        let batch = mock.batch_score_shared_prefix(&prefix, &blocks, &yes_no).unwrap();
        assert_eq!(batch.len(), blocks.len());
        for (block, got) in blocks.iter().zip(&batch) {
            let serial = mock.score_continuations(&format!("{prefix}{block}"), &yes_no).unwrap();
            assert_eq!(&serial, got);
        }
        blocks_seen += blocks.len();
    }
    format!("100 cases, {blocks_seen} candidates, exact")
}
