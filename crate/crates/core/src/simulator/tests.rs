use super::*;
use crate::bundled;
use crate::flow_script::{parse_script, Call, ScriptAst, Statement, ValueExpr};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FULL_FLOW: &str = "\
chateda.run_synthesis()
chateda.floorplan()
chateda.placement()
chateda.clock_tree_synthesis()
chateda.global_route()
chateda.detailed_route()
chateda.evaluate()";

fn run(src: &str) -> ExecutionReport {
    execute(&parse_script(src).unwrap(), &bundled::openroad_like(), 7)
}

fn tiny_spec(json_methods: &str, json_stages: &str) -> Result<PlatformSpec, SpecError> {
    PlatformSpec::from_json(&format!(
        r#"{{"platform_id": "t", "stages": {json_stages}, "methods": {json_methods}}}"#
    ))
}

#[test]
fn bundled_specs_load() {
    let or = bundled::openroad_like();
    assert_eq!(or.stages.len(), 7);
    assert!(or.methods.len() >= 7);
    assert_eq!(or.receiver, "chateda");
    let ieda = bundled::ieda_like();
    assert_eq!(ieda.stages.len(), 7);
    assert!(ieda.method("i_syn").is_some() && ieda.method("i_fp").is_some());
    assert_eq!(
        or.stage_order().unwrap(),
        vec!["synthesis", "floorplan", "placement", "cts", "global_route", "detailed_route", "evaluate"]
    );
}

#[test]
fn load_from_file_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    std::fs::write(&path, bundled::IEDA_LIKE_SPEC).unwrap();
    assert_eq!(load_platform_spec(&path).unwrap().platform_id, "ieda_like");
    assert!(matches!(load_platform_spec(dir.path().join("nope.json")), Err(SpecError::Io { .. })));
    std::fs::write(&path, "{not json").unwrap();
    assert!(matches!(load_platform_spec(&path), Err(SpecError::Parse(_))));
}

#[test]
fn cyclic_stages_rejected() {
    let err = tiny_spec(
        "[]",
        r#"[{"name": "a", "requires": ["b"]}, {"name": "b", "requires": ["a"]}]"#,
    )
    .unwrap_err();
    assert!(matches!(err, SpecError::CyclicStages(_)));
}

#[test]
fn duplicate_method_rejected() {
    let err = tiny_spec(
        r#"[{"name": "floorplan", "stage": "a"}, {"name": "floorplan", "stage": "a"}]"#,
        r#"[{"name": "a"}]"#,
    )
    .unwrap_err();
    assert!(matches!(err, SpecError::DuplicateMethod(ref m) if m == "floorplan"));
}

#[test]
fn other_spec_violations() {
    let stages = r#"[{"name": "a"}]"#;
    assert!(matches!(
        tiny_spec(r#"[{"name": "m", "stage": "zz"}]"#, stages),
        Err(SpecError::UnknownStage { .. })
    ));
    assert!(matches!(
        tiny_spec(
            r#"[{"name": "m", "stage": "a", "params": [{"name": "p", "type": "number", "required": true, "default": 1}]}]"#,
            stages
        ),
        Err(SpecError::BadParam { .. })
    ));
    assert!(matches!(
        tiny_spec(
            r#"[{"name": "m", "stage": "a", "params": [{"name": "p", "type": "number", "default": 5, "range": [0, 1]}]}]"#,
            stages
        ),
        Err(SpecError::BadParam { .. })
    ));
    assert!(matches!(
        tiny_spec(
            r#"[{"name": "m", "stage": "a", "params": [{"name": "p", "type": "number"}, {"name": "p", "type": "bool"}]}]"#,
            stages
        ),
        Err(SpecError::BadParam { .. })
    ));
    assert!(matches!(
        tiny_spec("[]", r#"[{"name": "a"}, {"name": "a"}]"#),
        Err(SpecError::DuplicateStage(_))
    ));
}

#[test]
fn api_document_is_deterministic_and_complete() {
    for spec in bundled::platforms() {
        let doc = render_api_document(&spec);
        assert_eq!(doc, render_api_document(&spec));
        for method in &spec.methods {
            let needle = format!("method {}.{}\n", spec.receiver, method.name);
            assert_eq!(doc.matches(&needle).count(), 1, "{}", method.name);
        }
    }
}

fn method_block<'a>(doc: &'a str, method: &str) -> &'a str {
    let start = doc.find(&format!("method chateda.{method}\n")).unwrap();
    let rest = &doc[start..];
    let end = rest[1..].find("\nmethod ").map(|i| i + 1).unwrap_or(rest.len());
    &rest[..end]
}

#[test]
fn api_document_places_macro_channel_under_floorplan() {
    let doc = render_api_document(&bundled::openroad_like());
    let fp = method_block(&doc, "floorplan");
    assert!(fp.contains("  stage: floorplan\n"));
    assert!(fp.contains("param macro_place_channel: number"));
    assert!(!method_block(&doc, "global_route").contains("macro_place_channel"));
}

#[test]
fn api_document_parses_back_to_spec() {
    for spec in bundled::platforms() {
        let doc = render_api_document(&spec);
        let back = parse_api_document(&format!("preamble text\n{doc}\n### TASK\nsomething")).unwrap();
        assert_eq!(back.platform_id, spec.platform_id);
        assert_eq!(back.receiver, spec.receiver);
        assert_eq!(back.stages, spec.stages);
        for method in &spec.methods {
            assert_eq!(back.method(&method.name), Some(method));
        }
    }
}

#[test]
fn wrong_stage_parameter_is_unknown_parameter() {
    let report = run("chateda.run_synthesis()\nchateda.global_route(macro_place_channel=20)");
    assert!(!report.success);
    let err = report.error.unwrap();
    assert_eq!(err.kind, ExecErrorKind::UnknownParameter);
    assert_eq!(err.method.as_deref(), Some("global_route"));
    assert_eq!(err.param.as_deref(), Some("macro_place_channel"));
    assert!(err.detail.contains("does not have a parameter called"));
}

#[test]
fn placement_before_floorplan_is_order_violation() {
    let report = run("chateda.run_synthesis()\nchateda.placement(density=0.6)\nchateda.floorplan()");
    let err = report.error.unwrap();
    assert_eq!(err.kind, ExecErrorKind::StageOrderViolation);
    assert_eq!(err.statement_index, 1);
    assert_eq!(report.trace.len(), 1);
}

#[test]
fn full_flow_with_defaults_succeeds() {
    let report = run(FULL_FLOW);
    assert!(report.success && report.error.is_none());
    assert_eq!(report.trace.len(), 7);
    assert_eq!(report.final_state.completed_stages.len(), 7);
    let metric = report.trace.last().unwrap().metric.unwrap();
    assert!((0.0..1.0).contains(&metric));
    assert_eq!(report.final_state.last_metric, Some(metric));
    assert_eq!(report.trace[1].param("macro_place_channel"), Some(&Value::Number(20.0)));
}

#[test]
fn bad_value_and_unbound_variable() {
    let err = run("chateda.run_synthesis(clock_period=\"fast\")").error.unwrap();
    assert_eq!(err.kind, ExecErrorKind::BadValue);
    let err = run("chateda.run_synthesis(clock_period=1000)").error.unwrap();
    assert_eq!(err.kind, ExecErrorKind::BadValue);
    let err = run("chateda.run_synthesis(clock_period=p)").error.unwrap();
    assert_eq!(err.kind, ExecErrorKind::UnboundVariable);
    assert!(run("p = 5\nchateda.run_synthesis(clock_period=p)").success);
}

#[test]
fn unknown_method_and_receiver() {
    assert_eq!(run("chateda.route_all()").error.unwrap().kind, ExecErrorKind::UnknownMethod);
    assert_eq!(run("openroad.run_synthesis()").error.unwrap().kind, ExecErrorKind::UnknownMethod);
}

#[test]
fn missing_required_parameter() {
    let spec = tiny_spec(
        r#"[{"name": "m", "stage": "a", "params": [{"name": "p", "type": "number", "required": true}]}]"#,
        r#"[{"name": "a"}]"#,
    )
    .unwrap();
    let ast = parse_script("chateda.m()").unwrap();
    let report = execute(&ast, &spec, 0);
    assert_eq!(report.error.unwrap().kind, ExecErrorKind::MissingParameter);
    assert!(execute(&parse_script("chateda.m(p=1)").unwrap(), &spec, 0).success);
}

#[test]
fn loops_expand_and_are_bounded() {
    let src = "chateda.run_synthesis()\nchateda.floorplan()\nfor d in [0.5, 0.6, 0.7]:\n    chateda.placement(density=d)";
    let report = run(src);
    assert!(report.success);
    let densities: Vec<_> = report.trace.iter().filter_map(|t| t.param("density")).cloned().collect();
    assert_eq!(densities, vec![Value::Number(0.5), Value::Number(0.6), Value::Number(0.7)]);
    assert!(report.trace[2..].iter().all(|t| t.statement_index == 2));

    let items: Vec<String> = (0..40).map(|i| i.to_string()).collect();
    let list = items.join(", ");
    let src = format!("for a in [{list}]:\n    for b in [{list}]:\n        x = a");
    let err = run(&src).error.unwrap();
    assert_eq!(err.kind, ExecErrorKind::LoopBound);
    assert_eq!(err.statement_index, 0);
}

#[test]
fn loop_variable_scope_is_restored() {
    let report = run("d = 0.9\nchateda.run_synthesis()\nchateda.floorplan()\nfor d in [0.5]:\n    chateda.placement(density=d)\nchateda.placement(density=d)");
    assert!(report.success);
    assert_eq!(report.trace.last().unwrap().param("density"), Some(&Value::Number(0.9)));
}

#[test]
fn rerunning_a_stage_is_legal() {
    let src = format!("{FULL_FLOW}\nchateda.floorplan(core_utilization=0.7)\nchateda.evaluate()");
    assert!(run(&src).success);
}

#[test]
fn metric_is_deterministic_and_requires_a_stage() {
    assert_eq!(evaluate_metric(&FlowState::new(3)), Err(MetricError::NoStagesRun));
    let a = run(FULL_FLOW).final_state;
    let b = run(FULL_FLOW).final_state;
    assert_eq!(evaluate_metric(&a).unwrap().to_bits(), evaluate_metric(&b).unwrap().to_bits());
    let other_seed = execute(&parse_script(FULL_FLOW).unwrap(), &bundled::openroad_like(), 8).final_state;
    assert_ne!(evaluate_metric(&a).unwrap(), evaluate_metric(&other_seed).unwrap());
}

#[test]
fn metric_separates_single_parameter_changes() {
    // Hash-collision sampling: one-parameter perturbations must move the metric.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut differ = 0;
    for _ in 0..100 {
        let mut state = FlowState::new(rng.gen());
        state.completed_stages.insert("floorplan".into());
        let params = state.bound_params.entry("floorplan".into()).or_default();
        params.insert("core_utilization".into(), Value::Number(rng.gen_range(0.1..0.9)));
        params.insert("aspect_ratio".into(), Value::Number(rng.gen_range(0.3..3.0)));
        let mut other = state.clone();
        let v = other.bound_params.get_mut("floorplan").unwrap().get_mut("core_utilization").unwrap();
        *v = Value::Number(v.as_number().unwrap() + rng.gen_range(0.001..0.1));
        if evaluate_metric(&state).unwrap() != evaluate_metric(&other).unwrap() {
            differ += 1;
        }
    }
    assert!(differ >= 99, "{differ}");
}

const STAGE_METHODS: [&str; 7] = [
    "run_synthesis",
    "floorplan",
    "placement",
    "clock_tree_synthesis",
    "global_route",
    "detailed_route",
    "evaluate",
];

/// Independent oracle: a sequence of stage indices is valid for the linear
/// DAG iff every stage's predecessor has appeared earlier.
fn linear_order_ok(seq: &[usize]) -> bool {
    let mut seen = [false; 7];
    for &s in seq {
        if s > 0 && !seen[s - 1] {
            return false;
        }
        seen[s] = true;
    }
    true
}

fn script_for(seq: &[usize]) -> ScriptAst {
    ScriptAst::new(
        seq.iter()
            .map(|&s| Statement::Call(Call::new("chateda", STAGE_METHODS[s])))
            .collect(),
    )
}

proptest! {
    #[test]
    fn stage_order_matches_dag_oracle(seq in prop::collection::vec(0usize..7, 1..12)) {
        let report = execute(&script_for(&seq), &bundled::openroad_like(), 1);
        prop_assert_eq!(report.success, linear_order_ok(&seq));
        if let Some(err) = &report.error {
            prop_assert_eq!(err.kind, ExecErrorKind::StageOrderViolation);
        }
    }

    #[test]
    fn error_index_is_first_failing_prefix(seq in prop::collection::vec(0usize..7, 1..10), seed in 0u64..50) {
        // Brute force: the first prefix length whose execution fails.
        let spec = bundled::openroad_like();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ast = script_for(&seq);
        if rng.gen_bool(0.5) {
            let at = rng.gen_range(0..ast.statements.len());
            ast.statements[at] = Statement::Call(
                Call::new("chateda", STAGE_METHODS[seq[at]]).with_kwarg("bogus", ValueExpr::Number(1.0)),
            );
        }
        let report = execute(&ast, &spec, 0);
        let first_bad = (1..=ast.statements.len()).find(|&n| {
            !execute(&ScriptAst::new(ast.statements[..n].to_vec()), &spec, 0).success
        });
        prop_assert_eq!(report.error.map(|e| e.statement_index), first_bad.map(|n| n - 1));
    }

    #[test]
    fn successful_trace_respects_prerequisites(mut seq in prop::collection::vec(0usize..7, 1..12), seed in 0u64..1000) {
        seq.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        seq.shuffle(&mut rng);
        let spec = bundled::openroad_like();
        let report = execute(&script_for(&seq), &spec, seed);
        if report.success {
            let mut done = std::collections::BTreeSet::new();
            for entry in &report.trace {
                let stage = spec.stage(&entry.stage).unwrap();
                prop_assert!(stage.requires.iter().all(|r| done.contains(r)));
                done.insert(entry.stage.clone());
            }
        }
        let again = execute(&script_for(&seq), &spec, seed);
        prop_assert_eq!(report, again);
    }
}
